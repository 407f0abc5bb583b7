"""
Historial inmutable encadenado por hash, montado en /context/history.

Disposición bajo ``<store>/history/``::

    records/<recordId>.json   un registro canónico por archivo
    blocks/<first>-<last>.zlib   registros compactados: un flujo zlib por registro, concatenados
    index.ndjson              recordId → bloque, offset y longitud del flujo comprimido

La compactación re-codifica sin pérdida: los bytes de cada registro
recuperados del bloque son idénticos al archivo original. Cada registro
se descomprime por separado, así un byte dañado en un bloque solo afecta
al registro cuyo flujo lo contiene. No existe
ninguna API de borrado.
"""

import base64
import binascii
import json
import logging
import os
import threading
import zlib
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple

from src.afs.nodes import NodeKind, NodeMetadata, NodeState
from src.backends.base import Backend, RelPath, rel_text
from src.common.config import RetentionConfig, StoreConfig
from src.common.digests import ZERO_HASH, canonical_json, sha256_hex
from src.common.errors import ImmutableNode, IsDirectory, NotFound, StoreCorrupt, StoreFailure
from src.repository.models import ChainReport, HistoryRecord, format_record_id, is_record_id

logger = logging.getLogger(__name__)


def encode_record(record: HistoryRecord) -> bytes:
    data = {
        'recordId': record.record_id,
        'timestamp': record.timestamp,
        'origin': record.origin,
        'agentId': record.agent_id,
        'sessionId': record.session_id,
        'modelVersion': record.model_version,
        'payload': base64.b64encode(record.payload).decode('ascii'),
        'prevHash': record.prev_hash,
        'selfHash': record.self_hash,
    }
    return (canonical_json(data) + '\n').encode('utf-8')


def decode_record(raw: bytes) -> HistoryRecord:
    """
    Decodifica un registro exigiendo forma canónica byte a byte.

    Raises:
        StoreCorrupt: JSON inválido, campos ausentes o bytes no canónicos
    """
    try:
        data = json.loads(raw.decode('utf-8'))
        record = HistoryRecord(
            record_id=data['recordId'],
            timestamp=data['timestamp'],
            origin=data['origin'],
            agent_id=data['agentId'],
            session_id=data['sessionId'],
            model_version=data['modelVersion'],
            payload=base64.b64decode(data['payload'], validate=True),
            prev_hash=data['prevHash'],
            self_hash=data['selfHash'],
        )
    except (ValueError, KeyError, TypeError, UnicodeDecodeError, binascii.Error) as e:
        raise StoreCorrupt(f"Registro de historial ilegible: {e}")
    if encode_record(record) != raw:
        raise StoreCorrupt(f"Registro {record.record_id} no está en forma canónica")
    return record


class HistoryBackend(Backend):
    """Backend de solo-anexado: la escritura genérica es ImmutableNode."""

    backend_type = 'history'

    def __init__(self, directory: Path, fsync: bool = None):
        self.directory = Path(directory)
        self.records_dir = self.directory / 'records'
        self.blocks_dir = self.directory / 'blocks'
        self.index_path = self.directory / 'index.ndjson'
        self.fsync = StoreConfig.FSYNC if fsync is None else fsync
        self.records_dir.mkdir(parents=True, exist_ok=True)
        self.blocks_dir.mkdir(parents=True, exist_ok=True)

        self._lock = threading.RLock()
        # recordId → (bloque, offset, longitud) de los registros compactados
        self._compacted: Dict[str, Tuple[str, int, int]] = {}
        self._ids: List[str] = []
        # recordId → (timestamp, attrs, tamaño, hash del payload); None si ilegible
        self._cache: Dict[str, Optional[Tuple[int, Dict[str, str], int, str]]] = {}
        self._block_cache: Tuple[Optional[str], bytes] = (None, b'')
        self._head_hash = ZERO_HASH
        self._open()

    def _open(self) -> None:
        if self.index_path.exists():
            for line in self.index_path.read_text(encoding='utf-8').splitlines():
                try:
                    entry = json.loads(line)
                    self._compacted[entry['recordId']] = (entry['block'], entry['offset'], entry['length'])
                except (ValueError, KeyError) as e:
                    raise StoreCorrupt(f"Índice de historial corrupto: {e}")
        loose = {p.stem for p in self.records_dir.glob('*.json') if is_record_id(p.stem)}
        self._ids = sorted(set(self._compacted) | loose)
        for record_id in self._ids:
            self._cache_record(record_id)
        if self._ids:
            last = self._cache.get(self._ids[-1])
            if last is not None:
                self._head_hash = last[1]['selfHash']
        logger.info(f"Historial abierto: {len(self._ids)} registros ({len(self._compacted)} compactados)")

    def _cache_record(self, record_id: str) -> None:
        try:
            record = decode_record(self._raw(record_id))
            self._cache[record_id] = (
                record.timestamp, record.attrs(), len(record.payload), sha256_hex(record.payload)
            )
        except (StoreCorrupt, StoreFailure) as e:
            logger.error(f"Registro {record_id} ilegible: {e}")
            self._cache[record_id] = None

    def _raw(self, record_id: str) -> bytes:
        """Bytes exactos del registro, esté suelto o compactado."""
        located = self._compacted.get(record_id)
        if located is None:
            try:
                return (self.records_dir / f"{record_id}.json").read_bytes()
            except OSError:
                raise NotFound(f"Registro de historial inexistente: {record_id}")
        block, offset, length = located
        cached_name, data = self._block_cache
        if cached_name != block:
            try:
                data = (self.blocks_dir / block).read_bytes()
            except OSError as e:
                raise StoreCorrupt(f"Bloque de historial {block} ilegible: {e}")
            self._block_cache = (block, data)
        try:
            return zlib.decompress(data[offset:offset + length])
        except zlib.error as e:
            raise StoreCorrupt(f"Registro {record_id} ilegible en el bloque {block}: {e}")

    # --- API propia del historial ---
    @property
    def head(self) -> Optional[str]:
        return self._ids[-1] if self._ids else None

    def __len__(self) -> int:
        return len(self._ids)

    def ids(self) -> List[str]:
        return list(self._ids)

    def get(self, record_id: str) -> HistoryRecord:
        with self._lock:
            return decode_record(self._raw(record_id))

    def contains(self, record_id: str) -> bool:
        return record_id in self._cache

    def append(self, origin: str, agent_id: str, session_id: str, model_version: str,
               payload: bytes, timestamp: int) -> HistoryRecord:
        """Anexa un registro al final de la cadena (único appender serializado)."""
        with self._lock:
            if self._ids and self._cache.get(self._ids[-1]) is None:
                raise StoreCorrupt(f"Cabeza del historial ilegible ({self._ids[-1]}): no se puede anexar")
            record_id = format_record_id(len(self._ids) + 1)
            fields = dict(
                record_id=record_id, timestamp=timestamp, origin=origin, agent_id=agent_id,
                session_id=session_id, model_version=model_version, payload=payload,
                prev_hash=self._head_hash,
            )
            record = HistoryRecord(**fields, self_hash=HistoryRecord.compute_hash(**fields))
            target = self.records_dir / f"{record_id}.json"
            tmp = target.with_suffix('.tmp')
            try:
                with open(tmp, 'wb') as f:
                    f.write(encode_record(record))
                    if self.fsync:
                        f.flush()
                        os.fsync(f.fileno())
                os.replace(tmp, target)
            except OSError as e:
                raise StoreFailure(f"Error anexando al historial: {e}")
            self._ids.append(record_id)
            self._cache[record_id] = (timestamp, record.attrs(), len(payload), sha256_hex(payload))
            self._head_hash = record.self_hash
            return record

    def iter_records(self) -> Iterator[Tuple[str, Optional[HistoryRecord], str]]:
        """(recordId, registro o None, motivo del fallo) en orden."""
        for record_id in self._ids:
            try:
                yield record_id, decode_record(self._raw(record_id)), ''
            except (StoreCorrupt, NotFound) as e:
                yield record_id, None, str(e)

    def verify_chain(self) -> ChainReport:
        """Recalcula hashes y enlaces; informa del primer registro que falla."""
        prev_hash = ZERO_HASH
        checked = 0
        with self._lock:
            for index, (record_id, record, reason) in enumerate(self.iter_records(), 1):
                if record is None:
                    return ChainReport(False, checked, record_id, reason)
                if record.record_id != record_id or record_id != format_record_id(index):
                    return ChainReport(False, checked, record_id, "secuencia de recordId rota")
                if record.prev_hash != prev_hash:
                    return ChainReport(False, checked, record_id, "prevHash no enlaza con el registro anterior")
                if record.expected_hash() != record.self_hash:
                    return ChainReport(False, checked, record_id, "selfHash no coincide con el contenido")
                prev_hash = record.self_hash
                checked += 1
        return ChainReport(True, checked)

    def uncompacted(self) -> List[str]:
        return [r for r in self._ids if r not in self._compacted]

    def compact(self, block_size: int = None) -> List[str]:
        """
        Compacta bloques completos de registros sueltos.

        Los bytes originales se recuperan idénticos desde el bloque; el
        archivo suelto solo se elimina tras escribir bloque e índice.

        Returns:
            Nombres de los bloques creados
        """
        block_size = block_size or RetentionConfig.HISTORY_BLOCK_SIZE
        created = []
        with self._lock:
            pending = self.uncompacted()
            while len(pending) >= block_size:
                chunk, pending = pending[:block_size], pending[block_size:]
                created.append(self._compact_block(chunk))
        if created:
            logger.info(f"Historial compactado: {len(created)} bloques")
        return created

    def _compact_block(self, record_ids: List[str]) -> str:
        name = f"{record_ids[0]}-{record_ids[-1]}.zlib"
        raws = [self._raw(r) for r in record_ids]
        streams = [zlib.compress(raw, 9) for raw in raws]
        target = self.blocks_dir / name
        tmp = target.with_suffix('.tmp')
        try:
            with open(tmp, 'wb') as f:
                f.write(b''.join(streams))
                f.flush()
                if self.fsync:
                    os.fsync(f.fileno())
            os.replace(tmp, target)
            written = target.read_bytes()
            offset = 0
            for raw, stream in zip(raws, streams):
                if zlib.decompress(written[offset:offset + len(stream)]) != raw:
                    raise StoreFailure(f"Verificación del bloque {name} fallida")
                offset += len(stream)
            offset = 0
            with open(self.index_path, 'a', encoding='utf-8') as f:
                for record_id, stream in zip(record_ids, streams):
                    f.write(canonical_json({
                        'recordId': record_id, 'block': name, 'offset': offset, 'length': len(stream)
                    }) + '\n')
                    self._compacted[record_id] = (name, offset, len(stream))
                    offset += len(stream)
                f.flush()
                if self.fsync:
                    os.fsync(f.fileno())
        except OSError as e:
            raise StoreFailure(f"Error compactando historial: {e}")
        for record_id in record_ids:
            (self.records_dir / f"{record_id}.json").unlink(missing_ok=True)
        return name

    # --- contrato Backend ---
    def stat(self, rel: RelPath) -> NodeMetadata:
        if not rel:
            return NodeMetadata(kind=NodeKind.DIRECTORY)
        if len(rel) != 1 or rel[0] not in self._cache:
            raise NotFound(f"{rel_text(rel)} no existe en el historial")
        cached = self._cache[rel[0]]
        if cached is None:
            raise StoreCorrupt(f"Registro {rel[0]} ilegible")
        timestamp, attrs, size, digest = cached
        return NodeMetadata(
            kind=NodeKind.DATA,
            created_at=timestamp,
            modified_at=timestamp,
            size=size,
            source_id=rel[0],
            user_attrs=dict(attrs),
            content_hash=digest,
        )

    def children(self, rel: RelPath) -> List[str]:
        return list(self._ids) if not rel else []

    def read(self, rel: RelPath) -> bytes:
        if not rel:
            raise IsDirectory("/context/history es un directorio")
        self.stat(rel)
        return self.get(rel[0]).payload

    def write(self, rel, content, attrs, now):
        raise ImmutableNode(f"El historial es inmutable: {rel_text(rel)} solo admite appendHistory")

    def set_attr(self, rel, key, value, now):
        raise ImmutableNode(f"El historial es inmutable: {rel_text(rel)}")

    def mkdir(self, rel, now):
        raise ImmutableNode("El historial no admite directorios")

    def snapshot(self) -> List[NodeState]:
        return [
            NodeState('/' + record_id, NodeKind.DATA.value, 1, cached[3])
            for record_id, cached in sorted(self._cache.items()) if cached is not None
        ]

    def describe(self):
        return None


__all__ = ['HistoryBackend', 'encode_record', 'decode_record']
