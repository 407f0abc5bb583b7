"""
Backend de almacén embebido y persistente.

Disposición en disco (``storeUrl = "file:<dir>"``)::

    <dir>/nodes/<hh>/<sha256>   contenido direccionado por hash
    <dir>/meta.ndjson           diario append-only de registros de metadatos

Cada registro del diario lleva ``checksum`` = sha256 del registro canónico
sin ese campo. Al abrir se re-aplica el diario y se comprueban checksums y
contenidos: cualquier discrepancia es StoreCorrupt.
"""

import json
import logging
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional

from src.afs.nodes import NodeKind, NodeMetadata, NodeState
from src.backends.base import Backend, RelPath, rel_text
from src.common.config import StoreConfig
from src.common.digests import canonical_json, sha256_hex
from src.common.errors import IsDirectory, NotFound, StoreCorrupt, StoreFailure

logger = logging.getLogger(__name__)


@dataclass
class StoreBackendConfig:
    """Localizador del almacén ("file:<dir>")."""
    store_url: str
    fsync: Optional[bool] = None

    @property
    def directory(self) -> Path:
        return StoreConfig.store_dir(self.store_url)


def _record_checksum(record: Dict[str, Any]) -> str:
    body = {k: v for k, v in record.items() if k != 'checksum'}
    return sha256_hex(canonical_json(body).encode('utf-8'))


def _meta_from_record(record: Dict[str, Any]) -> NodeMetadata:
    return NodeMetadata(
        kind=NodeKind(record['kind']),
        created_at=record['createdAt'],
        modified_at=record['modifiedAt'],
        size=record['size'],
        revision_id=record['revisionId'],
        source_id=record.get('sourceId'),
        access_scope=record.get('accessScope', 'system'),
        user_attrs=dict(record.get('userAttrs') or {}),
        content_hash=record.get('contentHash'),
    )


class StoreBackend(Backend):
    """Nodos de datos y directorios persistidos en un directorio local."""

    backend_type = 'store'

    def __init__(self, config: StoreBackendConfig):
        self.config = config
        self.root = config.directory
        self.fsync = StoreConfig.FSYNC if config.fsync is None else config.fsync
        self.nodes_dir = self.root / 'nodes'
        self.meta_path = self.root / 'meta.ndjson'
        try:
            self.nodes_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise StoreFailure(f"Almacén no escribible {self.root}: {e}")

        self._lock = threading.RLock()
        self._nodes: Dict[RelPath, NodeMetadata] = {(): NodeMetadata(kind=NodeKind.DIRECTORY)}
        self._children: Dict[RelPath, set] = {(): set()}
        self._open()

    def _open(self) -> None:
        if not self.meta_path.exists():
            logger.debug(f"Almacén nuevo en {self.root}")
            return
        raw = self.meta_path.read_bytes()
        if raw and not raw.endswith(b'\n'):
            raise StoreCorrupt(f"{self.meta_path}: registro final truncado")
        count = 0
        for line_num, line in enumerate(raw.splitlines(), 1):
            try:
                record = json.loads(line.decode('utf-8'))
            except (ValueError, UnicodeDecodeError) as e:
                raise StoreCorrupt(f"{self.meta_path}:{line_num}: JSON inválido ({e})")
            if record.get('checksum') != _record_checksum(record):
                raise StoreCorrupt(f"{self.meta_path}:{line_num}: checksum no coincide")
            rel = tuple(s for s in record['path'].split('/') if s)
            meta = _meta_from_record(record)
            if meta.content_hash and not self._content_ok(meta.content_hash):
                raise StoreCorrupt(f"Contenido de {record['path']} ausente o alterado")
            self._index(rel, meta)
            count += 1
        logger.info(f"Almacén abierto: {self.root} ({count} registros)")

    def _content_path(self, digest: str) -> Path:
        return self.nodes_dir / digest[:2] / digest

    def _content_ok(self, digest: str) -> bool:
        try:
            return sha256_hex(self._content_path(digest).read_bytes()) == digest
        except OSError:
            return False

    def _index(self, rel: RelPath, meta: NodeMetadata) -> None:
        self._nodes[rel] = meta
        self._children.setdefault(rel[:-1], set()).add(rel[-1])
        if meta.is_directory:
            self._children.setdefault(rel, set())

    def _append(self, rel: RelPath, meta: NodeMetadata) -> None:
        record = {
            'path': rel_text(rel),
            'kind': meta.kind.value,
            'createdAt': meta.created_at,
            'modifiedAt': meta.modified_at,
            'size': meta.size,
            'revisionId': meta.revision_id,
            'sourceId': meta.source_id,
            'accessScope': meta.access_scope,
            'userAttrs': meta.user_attrs,
            'contentHash': meta.content_hash,
        }
        record['checksum'] = _record_checksum(record)
        try:
            with open(self.meta_path, 'a', encoding='utf-8') as f:
                f.write(canonical_json(record) + '\n')
                f.flush()
                if self.fsync:
                    os.fsync(f.fileno())
        except OSError as e:
            raise StoreFailure(f"Error escribiendo {self.meta_path}: {e}")
        self._index(rel, meta)

    def _store_content(self, content: bytes) -> str:
        digest = sha256_hex(content)
        target = self._content_path(digest)
        if target.exists():
            return digest
        target.parent.mkdir(parents=True, exist_ok=True)
        tmp = target.with_name(digest + '.tmp')
        try:
            with open(tmp, 'wb') as f:
                f.write(content)
                if self.fsync:
                    f.flush()
                    os.fsync(f.fileno())
            os.replace(tmp, target)
        except OSError as e:
            raise StoreFailure(f"Error escribiendo contenido {digest}: {e}")
        return digest

    def _get(self, rel: RelPath) -> NodeMetadata:
        try:
            return self._nodes[rel]
        except KeyError:
            raise NotFound(f"{rel_text(rel)} no existe en el almacén")

    # --- contrato Backend ---
    def stat(self, rel: RelPath) -> NodeMetadata:
        return self._get(rel)

    def children(self, rel: RelPath) -> List[str]:
        meta = self._get(rel)
        if not meta.is_directory:
            return []
        return sorted(self._children.get(rel, ()))

    def read(self, rel: RelPath) -> bytes:
        meta = self._get(rel)
        if meta.is_directory:
            raise IsDirectory(f"{rel_text(rel)} es un directorio")
        try:
            return self._content_path(meta.content_hash).read_bytes()
        except OSError as e:
            raise StoreFailure(f"Contenido de {rel_text(rel)} ilegible: {e}")

    def _ensure_parents(self, rel: RelPath, now: int) -> None:
        for i in range(1, len(rel)):
            parent = rel[:i]
            existing = self._nodes.get(parent)
            if existing is None:
                self._append(parent, NodeMetadata(
                    kind=NodeKind.DIRECTORY, created_at=now, modified_at=now
                ))
            elif not existing.is_directory:
                raise NotFound(f"{rel_text(parent)} no es un directorio")

    def write(self, rel: RelPath, content: bytes, attrs: Dict[str, str], now: int) -> NodeMetadata:
        with self._lock:
            previous = self._nodes.get(rel)
            if previous is not None and previous.is_directory:
                raise IsDirectory(f"{rel_text(rel)} es un directorio")
            self._ensure_parents(rel, now)
            digest = self._store_content(content)
            user_attrs = dict(previous.user_attrs) if previous else {}
            user_attrs.update(attrs)
            meta = NodeMetadata(
                kind=NodeKind.DATA,
                created_at=previous.created_at if previous else now,
                modified_at=now,
                size=len(content),
                revision_id=previous.revision_id + 1 if previous else 1,
                source_id=user_attrs.get('sourceId', previous.source_id if previous else None),
                access_scope=previous.access_scope if previous else 'system',
                user_attrs=user_attrs,
                content_hash=digest,
            )
            self._append(rel, meta)
            return meta

    def set_attr(self, rel: RelPath, key: str, value: str, now: int) -> NodeMetadata:
        with self._lock:
            previous = self._get(rel)
            user_attrs = dict(previous.user_attrs)
            user_attrs[key] = value
            meta = NodeMetadata(
                kind=previous.kind,
                created_at=previous.created_at,
                modified_at=max(now, previous.created_at),
                size=previous.size,
                revision_id=previous.revision_id + 1,
                source_id=previous.source_id,
                access_scope=previous.access_scope,
                user_attrs=user_attrs,
                content_hash=previous.content_hash,
            )
            self._append(rel, meta)
            return meta

    def mkdir(self, rel: RelPath, now: int) -> NodeMetadata:
        with self._lock:
            existing = self._nodes.get(rel)
            if existing is not None:
                if not existing.is_directory:
                    raise NotFound(f"{rel_text(rel)} existe y no es un directorio")
                return existing
            self._ensure_parents(rel, now)
            meta = NodeMetadata(kind=NodeKind.DIRECTORY, created_at=now, modified_at=now)
            self._append(rel, meta)
            return meta

    def snapshot(self) -> List[NodeState]:
        with self._lock:
            return sorted(
                (NodeState(rel_text(rel), m.kind.value, m.revision_id, m.content_hash or '')
                 for rel, m in self._nodes.items() if not m.is_directory),
                key=lambda s: s.path,
            )

    def describe(self) -> Dict[str, Any]:
        return {'type': 'store', 'url': self.config.store_url}


__all__ = ['StoreBackend', 'StoreBackendConfig']
