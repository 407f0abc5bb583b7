"""
Log de transacciones append-only y almacén lateral de blobs.

Formato: ``log.ndjson``, un registro JSON canónico por línea (mismo
framing que el Tool Wire Protocol). Cada evento lleva ``hash`` =
sha256(prevHash ‖ evento canónico sin hash), de modo que cualquier
alteración de una línea rompe la cadena desde ese evento.

Los payloads de write/exec/appendHistory (y cualquier contenido que fije
una revisión) se guardan en ``blobs/`` direccionados por su sha256.
Las revisiones previas de cada ruta se resuelven desde los efectos
``put`` del propio log: un único mecanismo de auditoría.
"""

import json
import logging
import os
import threading
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Tuple

from src.common.config import StoreConfig
from src.common.digests import ZERO_HASH, canonical_json, sha256_hex
from src.common.errors import LogCorrupt, StoreFailure, UnknownRevision

logger = logging.getLogger(__name__)

OP_TYPES = {
    'mount', 'unmount', 'list', 'read', 'write', 'setAttr', 'exec',
    'appendHistory', 'deriveMemory', 'promote', 'consolidate', 'retention',
    'manifest', 'load', 'evaluate', 'annotate',
    # operaciones añadidas por la CLI y el núcleo
    'stat', 'search', 'commit', 'defineScope', 'index',
}

# Operaciones cuyo payload de entrada se guarda completo en blobs/
PAYLOAD_OPS = {'write', 'exec', 'appendHistory'}


class BlobStore:
    """Almacén direccionado por contenido (sha256) bajo ``blobs/aa/<digest>``."""

    def __init__(self, root: Path, fsync: bool = False):
        self.root = Path(root)
        self.fsync = fsync
        self.root.mkdir(parents=True, exist_ok=True)

    def path_for(self, digest: str) -> Path:
        return self.root / digest[:2] / digest

    def put(self, data: bytes) -> str:
        digest = sha256_hex(data)
        target = self.path_for(digest)
        if target.exists():
            return digest
        target.parent.mkdir(parents=True, exist_ok=True)
        tmp = target.with_suffix('.tmp')
        try:
            with open(tmp, 'wb') as f:
                f.write(data)
                if self.fsync:
                    f.flush()
                    os.fsync(f.fileno())
            os.replace(tmp, target)
        except OSError as e:
            raise StoreFailure(f"Error escribiendo blob {digest}: {e}")
        return digest

    def get(self, digest: str) -> bytes:
        try:
            return self.path_for(digest).read_bytes()
        except OSError:
            raise StoreFailure(f"Blob no encontrado: {digest}")

    def exists(self, digest: str) -> bool:
        return self.path_for(digest).exists()

    def verify(self, digest: str) -> bool:
        """True si el blob existe y su contenido coincide con su dirección."""
        try:
            return sha256_hex(self.path_for(digest).read_bytes()) == digest
        except OSError:
            return False


@dataclass
class TransactionEvent:
    """Un evento por operación AFS; permite replay y auditoría."""
    event_id: int
    timestamp: int
    actor: str
    op_type: str
    outcome: str = 'ok'
    session_id: Optional[str] = None
    reasoning_id: Optional[str] = None
    path: Optional[str] = None
    input_digest: str = ZERO_HASH
    output_digest: str = ZERO_HASH
    effects: List[Dict[str, Any]] = field(default_factory=list)
    detail: Dict[str, Any] = field(default_factory=dict)
    prev_hash: str = ZERO_HASH
    hash: str = ''

    def body(self) -> Dict[str, Any]:
        return {
            'eventId': self.event_id,
            'timestamp': self.timestamp,
            'actor': self.actor,
            'sessionId': self.session_id,
            'reasoningId': self.reasoning_id,
            'opType': self.op_type,
            'path': self.path,
            'inputDigest': self.input_digest,
            'outputDigest': self.output_digest,
            'outcome': self.outcome,
            'effects': self.effects,
            'detail': self.detail,
            'prevHash': self.prev_hash,
        }

    def compute_hash(self) -> str:
        return sha256_hex((self.prev_hash + canonical_json(self.body())).encode('utf-8'))

    def to_line(self) -> str:
        record = self.body()
        record['hash'] = self.hash
        return canonical_json(record) + '\n'

    @classmethod
    def from_record(cls, record: Dict[str, Any]) -> 'TransactionEvent':
        return cls(
            event_id=record['eventId'],
            timestamp=record['timestamp'],
            actor=record['actor'],
            op_type=record['opType'],
            outcome=record['outcome'],
            session_id=record.get('sessionId'),
            reasoning_id=record.get('reasoningId'),
            path=record.get('path'),
            input_digest=record['inputDigest'],
            output_digest=record['outputDigest'],
            effects=record.get('effects') or [],
            detail=record.get('detail') or {},
            prev_hash=record['prevHash'],
            hash=record['hash'],
        )

    @property
    def ok(self) -> bool:
        return self.outcome == 'ok'

    @property
    def error_code(self) -> Optional[str]:
        return None if self.ok else self.outcome.split(':', 1)[-1]


@dataclass
class LogReport:
    """Resultado de verificar el log."""
    ok: bool
    events: int
    failed_event_id: Optional[int] = None
    reason: str = ''


def parse_log_lines(raw: bytes) -> Iterator[Tuple[int, TransactionEvent]]:
    """
    Parsea el log en modo estricto.

    Perezoso: los eventos válidos anteriores al fallo se entregan antes de la excepción.

    Raises:
        LogCorrupt: Registro truncado, JSON inválido, hueco de secuencia,
            cadena de hashes rota o bytes no canónicos
    """
    lines = raw.split(b'\n') if raw else [b'']
    # Última línea sin terminador: registro truncado a mitad
    truncated = lines.pop()

    expected_id = 1
    prev_hash = ZERO_HASH
    for line_num, line in enumerate(lines, 1):
        try:
            record = json.loads(line.decode('utf-8'))
            event = TransactionEvent.from_record(record)
        except (ValueError, KeyError, TypeError, UnicodeDecodeError) as e:
            raise LogCorrupt(f"Línea {line_num} ilegible (evento {expected_id}): {e}")
        if event.event_id != expected_id:
            raise LogCorrupt(
                f"Secuencia rota en evento {expected_id}: encontrado {event.event_id}"
            )
        if event.prev_hash != prev_hash or event.compute_hash() != event.hash:
            raise LogCorrupt(f"Cadena de hashes rota en evento {event.event_id}")
        # campos opcionales con nombre alterado se parsean igual: se exige la forma canónica
        if event.to_line().encode('utf-8') != line + b'\n':
            raise LogCorrupt(f"Evento {event.event_id} no está en forma canónica")
        yield line_num, event
        prev_hash = event.hash
        expected_id += 1
    if truncated:
        raise LogCorrupt(f"Registro truncado al final del log ({len(truncated)} bytes)")


class ProvenanceLog:
    """
    Log de transacciones persistente (``<dir>/log.ndjson`` + ``<dir>/blobs/``).

    El runtime lo abre sobre ``<store>/provenance/``.

    Un único appender serializado; las operaciones concurrentes encolan
    sus eventos en el lock.
    """

    def __init__(self, store_dir: Path, fsync: bool = None):
        self.store_dir = Path(store_dir)
        self.store_dir.mkdir(parents=True, exist_ok=True)
        self.fsync = StoreConfig.FSYNC if fsync is None else fsync
        self.log_path = self.store_dir / 'log.ndjson'
        self.blobs = BlobStore(self.store_dir / 'blobs', fsync=self.fsync)

        self._lock = threading.Lock()
        self._last_id = 0
        self._last_hash = ZERO_HASH
        self._revisions: Dict[Tuple[str, int], str] = {}
        self._counts: Counter = Counter()
        self.load_error: Optional[str] = None
        self._load()

    def _load(self) -> None:
        if not self.log_path.exists():
            return
        try:
            for _, event in parse_log_lines(self.log_path.read_bytes()):
                self._index(event)
        except LogCorrupt as e:
            # Se permite abrir para que 'afs log verify' informe; no se puede anexar
            self.load_error = str(e)
            logger.error(f"Log de transacciones corrupto: {e}")

    def _index(self, event: TransactionEvent) -> None:
        self._last_id = event.event_id
        self._last_hash = event.hash
        self._counts[event.op_type] += 1
        for effect in event.effects:
            if effect.get('op') == 'put':
                self._revisions[(effect['path'], effect['revisionId'])] = effect['contentHash']

    @property
    def last_event_id(self) -> int:
        return self._last_id

    def append(
        self,
        op_type: str,
        timestamp: int,
        actor: str,
        outcome: str = 'ok',
        session_id: Optional[str] = None,
        reasoning_id: Optional[str] = None,
        path: Optional[str] = None,
        input_digest: str = ZERO_HASH,
        output_digest: str = ZERO_HASH,
        effects: Optional[List[Dict[str, Any]]] = None,
        detail: Optional[Dict[str, Any]] = None,
    ) -> TransactionEvent:
        """
        Anexa un evento y lo hace durable antes de devolver.

        Raises:
            StoreFailure: Si no se puede escribir (falla la operación padre)
            LogCorrupt: Si el log existente está corrupto
        """
        if op_type not in OP_TYPES:
            raise StoreFailure(f"opType desconocido: '{op_type}'")
        if self.load_error:
            raise LogCorrupt(f"No se puede anexar a un log corrupto: {self.load_error}")

        with self._lock:
            event = TransactionEvent(
                event_id=self._last_id + 1,
                timestamp=timestamp,
                actor=actor,
                op_type=op_type,
                outcome=outcome,
                session_id=session_id,
                reasoning_id=reasoning_id,
                path=path,
                input_digest=input_digest,
                output_digest=output_digest,
                effects=list(effects or []),
                detail=dict(detail or {}),
                prev_hash=self._last_hash,
            )
            event.hash = event.compute_hash()
            try:
                with open(self.log_path, 'a', encoding='utf-8') as f:
                    f.write(event.to_line())
                    f.flush()
                    if self.fsync:
                        os.fsync(f.fileno())
            except OSError as e:
                raise StoreFailure(f"Error escribiendo log de transacciones: {e}")
            self._index(event)

        logger.debug(
            f"Evento {event.event_id} {op_type} {path or ''} -> {outcome}",
            extra={'event_id': event.event_id, 'op_type': op_type, 'actor': actor}
        )
        return event

    def events(self, up_to: Optional[int] = None) -> Iterator[TransactionEvent]:
        """Itera los eventos (modo estricto) hasta ``up_to`` inclusive."""
        if not self.log_path.exists():
            return
        if up_to is not None and up_to < 1:
            return
        for _, event in parse_log_lines(self.log_path.read_bytes()):
            yield event
            if event.event_id == up_to:
                return

    def tail(self, n: int = 10) -> List[TransactionEvent]:
        return list(self.events())[-n:] if n > 0 else []

    def get_revision(self, path: str, revision_id: int) -> bytes:
        """
        Contenido exacto de ``path`` en la revisión ``revision_id``.

        Raises:
            UnknownRevision: Si esa revisión nunca existió
        """
        digest = self._revisions.get((str(path), int(revision_id)))
        if digest is None:
            raise UnknownRevision(f"Revisión {revision_id} desconocida para {path}")
        return self.blobs.get(digest)

    def revision_hash(self, path: str, revision_id: int) -> Optional[str]:
        return self._revisions.get((str(path), int(revision_id)))

    def revision_ids(self, path: str) -> List[int]:
        return sorted(rev for (p, rev) in self._revisions if p == str(path))

    def verify(self) -> LogReport:
        """
        Verifica secuencia, cadena de hashes y blobs referenciados.

        Returns:
            LogReport con el primer evento que falla, si hay alguno
        """
        count = 0
        last_ok = 0
        try:
            for _, event in parse_log_lines(
                self.log_path.read_bytes() if self.log_path.exists() else b''
            ):
                for digest in self._referenced_blobs(event):
                    if not self.blobs.verify(digest):
                        return LogReport(
                            False, count, event.event_id,
                            f"blob {digest} alterado o ausente (evento {event.event_id})"
                        )
                count += 1
                last_ok = event.event_id
        except LogCorrupt as e:
            return LogReport(False, count, last_ok + 1, str(e))
        return LogReport(True, count)

    def _referenced_blobs(self, event: TransactionEvent) -> List[str]:
        digests = []
        if event.detail.get('inputBlob'):
            digests.append(event.input_digest)
        if event.detail.get('outputBlob'):
            digests.append(event.output_digest)
        for effect in event.effects:
            if effect.get('op') == 'put':
                digests.append(effect['contentHash'])
            elif effect.get('op') == 'mount':
                digests.append(effect['snapshot'])
        return digests

    def counts(self) -> Dict[str, int]:
        """Conteo de eventos por opType (incluye annotate vs evaluate)."""
        return dict(self._counts)

    def override_counts(self) -> Dict[str, int]:
        """Conteos brutos de revisión humana: la razón queda para los informes."""
        return {
            'annotate': self._counts.get('annotate', 0),
            'evaluate': self._counts.get('evaluate', 0),
        }


__all__ = [
    'OP_TYPES',
    'PAYLOAD_OPS',
    'BlobStore',
    'TransactionEvent',
    'LogReport',
    'ProvenanceLog',
    'parse_log_lines',
]
