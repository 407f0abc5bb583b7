"""
Tipos del repositorio de contexto.
"""

from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from src.afs.nodes import NodeMetadata
from src.common.config import RetentionConfig
from src.common.digests import canonical_json, sha256_hex

HISTORY_ID_WIDTH = 10


class Origin(str, Enum):
    USER = 'user'
    AGENT = 'agent'
    TOOL = 'tool'
    HUMAN_REVIEWER = 'human-reviewer'


class MemoryType(str, Enum):
    SCRATCHPAD = 'scratchpad'
    EPISODIC = 'episodic'
    FACT = 'fact'
    EXPERIENTIAL = 'experiential'
    PROCEDURAL = 'procedural'
    USER = 'user'


class Representation(str, Enum):
    PLAIN_TEXT = 'plainText'
    EMBEDDING_VECTOR = 'embeddingVector'
    KEY_VALUE = 'keyValue'
    STRUCTURED_LOG = 'structuredLog'


class Derivation(str, Enum):
    SUMMARIZE = 'summarize'
    EMBED = 'embed'
    INDEX = 'index'


# Pares tipo → representaciones admitidas (procedural: referencia a ruta ejecutable)
ALLOWED_REPRESENTATIONS = {
    MemoryType.FACT: {Representation.KEY_VALUE},
    MemoryType.EPISODIC: {Representation.PLAIN_TEXT, Representation.EMBEDDING_VECTOR},
    MemoryType.EXPERIENTIAL: {Representation.STRUCTURED_LOG},
    MemoryType.PROCEDURAL: {Representation.PLAIN_TEXT},
    MemoryType.USER: {Representation.PLAIN_TEXT, Representation.EMBEDDING_VECTOR},
    MemoryType.SCRATCHPAD: {Representation.PLAIN_TEXT, Representation.EMBEDDING_VECTOR},
}

# Derivación → tipos compatibles
DERIVATION_TARGETS = {
    Derivation.SUMMARIZE: {MemoryType.SCRATCHPAD, MemoryType.EPISODIC, MemoryType.USER},
    Derivation.EMBED: {MemoryType.SCRATCHPAD, MemoryType.EPISODIC, MemoryType.USER},
    Derivation.INDEX: {MemoryType.FACT, MemoryType.EXPERIENTIAL, MemoryType.PROCEDURAL},
}


def format_record_id(seq: int) -> str:
    return str(seq).zfill(HISTORY_ID_WIDTH)


def is_record_id(value: str) -> bool:
    return len(value) == HISTORY_ID_WIDTH and value.isdigit()


@dataclass(frozen=True)
class HistoryRecord:
    """Registro inmutable encadenado por hash."""
    record_id: str
    timestamp: int
    origin: str
    agent_id: str
    session_id: str
    model_version: str
    payload: bytes
    prev_hash: str
    self_hash: str = ''

    @staticmethod
    def compute_hash(record_id: str, timestamp: int, origin: str, agent_id: str,
                     session_id: str, model_version: str, payload: bytes, prev_hash: str) -> str:
        header = canonical_json([record_id, timestamp, origin, agent_id, session_id, model_version, prev_hash])
        return sha256_hex(header.encode('utf-8') + b'\n' + payload)

    def expected_hash(self) -> str:
        return self.compute_hash(
            self.record_id, self.timestamp, self.origin, self.agent_id,
            self.session_id, self.model_version, self.payload, self.prev_hash,
        )

    def attrs(self) -> Dict[str, str]:
        return {
            'recordId': self.record_id,
            'origin': self.origin,
            'agentId': self.agent_id,
            'sessionId': self.session_id,
            'modelVersion': self.model_version,
            'prevHash': self.prev_hash,
            'selfHash': self.self_hash,
        }

    def to_dict(self) -> Dict[str, Any]:
        data = self.attrs()
        data['timestamp'] = self.timestamp
        data['size'] = len(self.payload)
        return data


@dataclass
class MemoryEntry:
    """Entrada de memoria tipada y versionada, con linaje hacia el historial."""
    entry_id: str
    memory_type: str
    agent_id: str
    content: bytes
    representation: str
    source_ids: List[str]
    confidence: float = 1.0
    created_at: int = 0
    modified_at: int = 0
    revision_id: int = 1
    session_id: Optional[str] = None
    path: str = ''
    attrs: Dict[str, str] = field(default_factory=dict)

    @property
    def archived(self) -> bool:
        return self.attrs.get('archived') == 'true'

    @property
    def text(self) -> str:
        return self.content.decode('utf-8', errors='replace')

    @classmethod
    def from_node(cls, path: str, content: bytes, meta: NodeMetadata) -> 'MemoryEntry':
        attrs = dict(meta.user_attrs)
        return cls(
            entry_id=attrs.get('entryId', path.rsplit('/', 1)[-1]),
            memory_type=attrs.get('memoryType', ''),
            agent_id=attrs.get('agentId', ''),
            content=content,
            representation=attrs.get('representation', Representation.PLAIN_TEXT.value),
            source_ids=[s for s in attrs.get('sourceIds', '').split(',') if s],
            confidence=float(attrs.get('confidence', '1.0')),
            created_at=meta.created_at,
            modified_at=meta.modified_at,
            revision_id=meta.revision_id,
            session_id=attrs.get('sessionId') or None,
            path=path,
            attrs=attrs,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            'entryId': self.entry_id,
            'memoryType': self.memory_type,
            'agentId': self.agent_id,
            'sessionId': self.session_id,
            'representation': self.representation,
            'sourceIds': list(self.source_ids),
            'confidence': self.confidence,
            'createdAt': self.created_at,
            'modifiedAt': self.modified_at,
            'revisionId': self.revision_id,
            'path': self.path,
            'archived': self.archived,
            'content': self.text,
        }


@dataclass
class RetentionPolicy:
    """Política de retención: nunca autoriza borrar historial."""
    scratchpad_ttl_ms: int = RetentionConfig.SCRATCHPAD_TTL_MS
    history_compact_after: int = RetentionConfig.HISTORY_COMPACT_AFTER
    memory_stale_after_ms: Optional[int] = RetentionConfig.MEMORY_STALE_AFTER_MS
    history_block_size: int = RetentionConfig.HISTORY_BLOCK_SIZE

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'RetentionPolicy':
        defaults = cls()
        return cls(
            scratchpad_ttl_ms=int(data.get('scratchpadTtlMs', defaults.scratchpad_ttl_ms)),
            history_compact_after=int(data.get('historyCompactAfter', defaults.history_compact_after)),
            memory_stale_after_ms=(
                int(data['memoryStaleAfterMs']) if data.get('memoryStaleAfterMs') is not None
                else defaults.memory_stale_after_ms
            ),
            history_block_size=int(data.get('historyBlockSize', defaults.history_block_size)),
        )


@dataclass
class ChainReport:
    ok: bool
    checked: int
    failed_record_id: Optional[str] = None
    reason: str = ''


@dataclass
class ConsolidationReport:
    merged: List[Tuple[str, str]] = field(default_factory=list)
    before: int = 0
    after: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {'merged': [list(pair) for pair in self.merged], 'before': self.before, 'after': self.after}


@dataclass
class RetentionReport:
    archived_pads: List[str] = field(default_factory=list)
    stale_entries: List[str] = field(default_factory=list)
    compacted_records: int = 0
    compacted_blocks: List[str] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not (self.archived_pads or self.stale_entries or self.compacted_records)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def to_text(self) -> str:
        lines = [f"archived pad {p}" for p in self.archived_pads]
        lines += [f"stale entry {e}" for e in self.stale_entries]
        lines += [f"compacted block {b}" for b in self.compacted_blocks]
        if self.compacted_records:
            lines.append(f"compacted records {self.compacted_records}")
        return '\n'.join(lines) if lines else 'empty report'


__all__ = [
    'Origin',
    'MemoryType',
    'Representation',
    'Derivation',
    'ALLOWED_REPRESENTATIONS',
    'DERIVATION_TARGETS',
    'HISTORY_ID_WIDTH',
    'format_record_id',
    'is_record_id',
    'HistoryRecord',
    'MemoryEntry',
    'RetentionPolicy',
    'ChainReport',
    'ConsolidationReport',
    'RetentionReport',
]
