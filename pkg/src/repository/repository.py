"""
Repositorio de contexto persistente.

Espacio de nombres::

    /context/history/{recordId}                      historial inmutable
    /context/memory/{agentId}/{memoryType}/{entryId} memoria tipada
    /context/pad/{taskId}/{entryId}                  scratchpads
    /context/human/{annotationId}                    anotaciones humanas

Cada operación es una transición de estado registrada como un único
evento; las escrituras internas pasan por el núcleo AFS y se pliegan
en ese evento.
"""

import json
import logging
import re
import threading
from typing import Dict, List, Optional, Union

import numpy as np

from src.afs.core import AgenticFileSystem
from src.afs.nodes import NodeKind
from src.afs.paths import AfsPath
from src.common.config import PipelineConfig, ProviderConfig
from src.common.errors import (
    AlreadyPromoted, ConfigError, IncompatibleDerivation, InvalidPath, NotFound,
    SchemaViolation, UnknownEntry, UnknownRecord,
)
from src.indexer.embedding import cosine, embed
from src.repository.facts import extract_facts, format_fact
from src.repository.history import HistoryBackend
from src.repository.models import (
    ALLOWED_REPRESENTATIONS, DERIVATION_TARGETS, ChainReport, ConsolidationReport, Derivation,
    HistoryRecord, MemoryEntry, MemoryType, Origin, Representation, RetentionPolicy, RetentionReport,
    is_record_id,
)

logger = logging.getLogger(__name__)

CONTEXT = AfsPath.parse('/context')
HISTORY = CONTEXT.child('history')
MEMORY = CONTEXT.child('memory')
PAD = CONTEXT.child('pad')
HUMAN = CONTEXT.child('human')
MANIFEST = CONTEXT.child('manifest')
EVALUATION = CONTEXT.child('evaluation')

ID_PREFIXES = {'entry': 'e', 'manifest': 'm', 'annotation': 'a'}
_PATH_RE = re.compile(r'(/[A-Za-z0-9._-]+(?:/[A-Za-z0-9._-]+)+)')


def document_embedding(content: bytes, representation: str):
    """Vector de una entrada: el almacenado si es embeddingVector, si no embed(content)."""
    if representation == Representation.EMBEDDING_VECTOR.value:
        try:
            return np.asarray(json.loads(content.decode('utf-8'))['vector'], dtype=np.float64)
        except (ValueError, KeyError, UnicodeDecodeError):
            pass
    return embed(content)


def entry_text(content: bytes, representation: str) -> str:
    """Texto legible de una entrada (el texto fuente para embeddingVector)."""
    if representation == Representation.EMBEDDING_VECTOR.value:
        try:
            return json.loads(content.decode('utf-8'))['text']
        except (ValueError, KeyError, UnicodeDecodeError):
            pass
    return content.decode('utf-8', errors='replace')


class ContextRepository:
    """
    Historial, memoria y scratchpads sobre el núcleo AFS.

    Las operaciones cruzadas (consolidación, retención) toman un pase
    exclusivo de todo el repositorio.
    """

    def __init__(self, afs: AgenticFileSystem, history: HistoryBackend, provider=None,
                 model_version: str = None):
        self.afs = afs
        self.history = history
        self.provider = provider
        self.model_version = model_version or ProviderConfig.MODEL_VERSION
        self._lock = threading.RLock()
        self._entries: Dict[str, AfsPath] = {}
        self._seq: Dict[str, int] = {kind: 0 for kind in ID_PREFIXES}
        self._scan()

    # ------------------------------------------------------------------
    # identificadores
    # ------------------------------------------------------------------
    def _scan(self) -> None:
        """Reconstruye el índice entryId → ruta y los contadores de ids."""
        system = self.afs.scopes.system
        with self.afs.operation('list', CONTEXT):
            for root in (MEMORY, PAD):
                if not self.afs.exists(root):
                    continue
                for path, meta in self.afs.list(root, depth=self.afs.max_depth_at(root),
                                                include_archived=True, scope=system):
                    entry_id = meta.user_attrs.get('entryId')
                    if entry_id and not meta.is_directory:
                        self._entries[entry_id] = path
                        self._bump_seq('entry', entry_id)
            for kind, root in (('manifest', MANIFEST), ('annotation', HUMAN)):
                if self.afs.exists(root):
                    for path, _ in self.afs.list(root, depth=1, include_archived=True, scope=system):
                        self._bump_seq(kind, path.name)

    def _bump_seq(self, kind: str, identifier: str) -> None:
        prefix = ID_PREFIXES[kind]
        if identifier.startswith(prefix) and identifier[1:].isdigit():
            self._seq[kind] = max(self._seq[kind], int(identifier[1:]))

    def next_id(self, kind: str) -> str:
        with self._lock:
            self._seq[kind] += 1
            return f"{ID_PREFIXES[kind]}{self._seq[kind]:08d}"

    # ------------------------------------------------------------------
    # historial
    # ------------------------------------------------------------------
    def append_history(self, origin: Union[str, Origin], agent_id: str, session_id: str,
                       model_version: Optional[str], payload: bytes) -> HistoryRecord:
        """
        Anexa un registro crudo al historial (/context/history/{recordId}).

        Raises:
            StoreFailure: si no se puede persistir
        """
        if isinstance(payload, str):
            payload = payload.encode('utf-8')
        with self.afs.operation('appendHistory', HISTORY) as frame:
            try:
                origin = Origin(origin).value
            except ValueError:
                raise SchemaViolation(f"Origen inválido: '{origin}'")
            frame.set_input(payload, keep=True)
            record = self.history.append(
                origin, agent_id, session_id or '', model_version or self.model_version,
                payload, self.afs.clock.now_ms(),
            )
            path = HISTORY.child(record.record_id)
            frame.path = str(path)
            self.afs.record_put(path, self.history.stat((record.record_id,)), payload)
            frame.set_output(record.to_dict())
        logger.debug(f"Historial {record.record_id} ({origin}, agente {agent_id})")
        return record

    def verify_chain(self) -> ChainReport:
        return self.history.verify_chain()

    def compact_history(self, block_size: int = None) -> List[str]:
        """Compacta bloques completos sin pérdida; registrado como retención."""
        with self._lock, self.afs.operation('retention', HISTORY) as frame:
            blocks = self.history.compact(block_size)
            frame.set_output({'blocks': blocks})
            frame.detail['compactedBlocks'] = len(blocks)
            return blocks

    # ------------------------------------------------------------------
    # entradas de memoria
    # ------------------------------------------------------------------
    def _entry_path(self, entry_id: str) -> AfsPath:
        path = self._entries.get(entry_id)
        if path is None:
            raise UnknownEntry(f"Entrada desconocida: '{entry_id}'")
        return path

    def get_entry(self, entry_id: str) -> MemoryEntry:
        path = self._entry_path(entry_id)
        content, meta = self.afs.read(path, scope=self.afs.scopes.system)
        return MemoryEntry.from_node(str(path), content, meta)

    def list_entries(self, agent_id: Optional[str] = None, memory_type: Optional[str] = None,
                     include_archived: bool = False) -> List[MemoryEntry]:
        """Entradas (memoria y pads) filtradas, ordenadas por entryId."""
        entries = []
        for entry_id in sorted(self._entries):
            entry = self.get_entry(entry_id)
            if agent_id is not None and entry.agent_id != agent_id:
                continue
            if memory_type is not None and entry.memory_type != memory_type:
                continue
            if entry.archived and not include_archived:
                continue
            entries.append(entry)
        return entries

    def _write_entry(self, path: AfsPath, entry_id: str, memory_type: str, agent_id: str,
                     content: bytes, representation: str, source_ids: List[str],
                     session_id: Optional[str] = None, confidence: float = 1.0,
                     extra: Optional[Dict[str, str]] = None) -> MemoryEntry:
        if not source_ids:
            raise UnknownRecord("Linaje vacío: toda entrada necesita al menos un origen")
        attrs = {
            'entryId': entry_id,
            'memoryType': memory_type,
            'representation': representation,
            'agentId': agent_id,
            'sessionId': session_id or '',
            'sourceIds': ','.join(source_ids),
            'confidence': repr(float(confidence)),
        }
        attrs.update(extra or {})
        meta = self.afs.write(path, content, attrs, scope=self.afs.scopes.system)
        self._entries[entry_id] = path
        return MemoryEntry.from_node(str(path), content, meta)

    def write_memory(self, agent_id: str, memory_type: Union[str, MemoryType], content: bytes,
                     representation: Union[str, Representation], source_ids: List[str],
                     session_id: Optional[str] = None, confidence: float = 1.0,
                     extra: Optional[Dict[str, str]] = None) -> MemoryEntry:
        """Nueva entrada de memoria con linaje explícito (write-back del Evaluator)."""
        try:
            memory_type = MemoryType(memory_type).value
            representation = Representation(representation).value
        except ValueError as e:
            raise SchemaViolation(f"Entrada de memoria inválida: {e}")
        if representation not in {r.value for r in ALLOWED_REPRESENTATIONS[MemoryType(memory_type)]}:
            raise SchemaViolation(f"Representación '{representation}' no admitida para memoria '{memory_type}'")
        with self._lock:
            entry_id = self.next_id('entry')
            return self._write_entry(
                self._memory_path(agent_id, memory_type, entry_id), entry_id, memory_type,
                agent_id, content, representation, list(source_ids),
                session_id, confidence, extra,
            )

    def supersede(self, entry_id: str, by_entry_id: str) -> None:
        """Archiva una entrada reemplazada, con puntero a su sucesora."""
        path = self._entry_path(entry_id)
        system = self.afs.scopes.system
        self.afs.set_attr(path, 'supersededBy', by_entry_id, scope=system)
        self.afs.set_attr(path, 'archived', 'true', scope=system)

    def _memory_path(self, agent_id: str, memory_type: str, entry_id: str) -> AfsPath:
        try:
            return MEMORY.child(agent_id, memory_type, entry_id)
        except InvalidPath:
            raise InvalidPath(f"agentId inválido para una ruta: '{agent_id}'")

    def _records(self, record_ids: List[str]) -> List[HistoryRecord]:
        if not record_ids:
            raise UnknownRecord("deriveMemory sin registros: el linaje no puede estar vacío")
        records = []
        for record_id in record_ids:
            if not self.history.contains(record_id):
                raise UnknownRecord(f"Registro de historial inexistente: '{record_id}'")
            records.append(self.history.get(record_id))
        return records

    def derive_memory(self, record_ids: List[str], memory_type: Union[str, MemoryType],
                      derivation: Union[str, Derivation], agent_id: str,
                      session_id: Optional[str] = None) -> MemoryEntry:
        """
        Transforma registros del historial en una entrada de memoria.

        summarize/embed producen plainText/embeddingVector (scratchpad,
        episodic, user); index produce keyValue (fact), structuredLog
        (experiential) o una referencia a ruta ejecutable (procedural).

        Raises:
            UnknownRecord, IncompatibleDerivation
        """
        with self._lock, self.afs.operation('deriveMemory', MEMORY.child(agent_id)) as frame:
            try:
                memory_type = MemoryType(memory_type)
                derivation = Derivation(derivation)
            except ValueError as e:
                raise IncompatibleDerivation(str(e))
            frame.set_input({'recordIds': record_ids, 'memoryType': memory_type.value,
                             'derivation': derivation.value, 'agentId': agent_id})
            records = self._records(record_ids)
            if memory_type not in DERIVATION_TARGETS[derivation]:
                raise IncompatibleDerivation(
                    f"Derivación '{derivation.value}' incompatible con memoria '{memory_type.value}'"
                )
            text = '\n'.join(r.payload.decode('utf-8', errors='replace') for r in records)
            content, representation = self._derive(derivation, memory_type, text, records)

            entry_id = self.next_id('entry')
            entry = self._write_entry(
                self._memory_path(agent_id, memory_type.value, entry_id), entry_id,
                memory_type.value, agent_id, content, representation, list(record_ids), session_id,
                extra={'derivation': derivation.value},
            )
            frame.path = entry.path
            frame.set_output(entry.to_dict())
        logger.info(f"Memoria derivada {entry.entry_id} ({memory_type.value}/{derivation.value})",
                    extra={'agent_id': agent_id, 'sources': record_ids})
        return entry

    def _derive(self, derivation: Derivation, memory_type: MemoryType, text: str,
                records: List[HistoryRecord]):
        if derivation == Derivation.SUMMARIZE:
            if self.provider is None:
                raise IncompatibleDerivation("summarize requiere un proveedor de modelo")
            summary = self.provider.summarize(text, PipelineConfig.SUMMARY_TOKENS)
            return summary.encode('utf-8'), Representation.PLAIN_TEXT.value
        if derivation == Derivation.EMBED:
            vector = embed(text)
            payload = {'dimension': len(vector), 'text': text, 'vector': [float(v) for v in vector]}
            return json.dumps(payload, sort_keys=True).encode('utf-8'), Representation.EMBEDDING_VECTOR.value
        if memory_type == MemoryType.FACT:
            facts = extract_facts(text)
            if not facts:
                raise IncompatibleDerivation("Sin hechos clave-valor que indexar")
            content = '\n'.join(format_fact(k, v) for k, v in facts) + '\n'
            return content.encode('utf-8'), Representation.KEY_VALUE.value
        if memory_type == MemoryType.EXPERIENTIAL:
            lines = [json.dumps({
                'recordId': r.record_id, 'timestamp': r.timestamp, 'origin': r.origin,
                'text': r.payload.decode('utf-8', errors='replace'),
            }, sort_keys=True) for r in records]
            return ('\n'.join(lines) + '\n').encode('utf-8'), Representation.STRUCTURED_LOG.value
        target = self._executable_reference(text)
        return target.encode('utf-8'), Representation.PLAIN_TEXT.value

    def _executable_reference(self, text: str) -> str:
        """Primera ruta del texto que resuelve a un nodo ejecutable (nunca se invoca)."""
        for candidate in _PATH_RE.findall(text):
            try:
                meta = self.afs.stat(candidate, scope=self.afs.scopes.system)
            except (InvalidPath, NotFound):
                continue
            if meta.kind == NodeKind.EXECUTABLE:
                return candidate
        raise IncompatibleDerivation("Memoria procedural requiere una ruta ejecutable en el texto")

    # ------------------------------------------------------------------
    # scratchpads
    # ------------------------------------------------------------------
    def write_scratchpad(self, task_id: str, content: bytes, agent_id: str,
                         source_ids: Optional[List[str]] = None,
                         session_id: Optional[str] = None) -> MemoryEntry:
        """
        Escribe un scratchpad en /context/pad/{taskId}/{entryId}.

        Linaje: ``source_ids`` explícitos, si no la cabeza del historial; con
        historial vacío se anexa antes un registro con el contenido.
        """
        if isinstance(content, str):
            content = content.encode('utf-8')
        with self._lock, self.afs.operation('write', PAD.child(task_id)) as frame:
            frame.set_input(content, keep=True)
            if not source_ids:
                head = self.history.head
                if head is None:
                    head = self.append_history(Origin.AGENT, agent_id, session_id or '', None, content).record_id
                source_ids = [head]
            entry_id = self.next_id('entry')
            entry = self._write_entry(
                PAD.child(task_id, entry_id), entry_id, MemoryType.SCRATCHPAD.value, agent_id,
                content, Representation.PLAIN_TEXT.value, list(source_ids), session_id,
                extra={'taskId': task_id},
            )
            frame.path = entry.path
            frame.set_output(entry.to_dict())
            return entry

    def promote_scratchpad(self, entry_id: str, target: str) -> str:
        """
        Promueve un scratchpad a ``history`` o a ``memory:<tipo>``.

        Returns:
            recordId o entryId nuevo

        Raises:
            UnknownEntry, AlreadyPromoted, IncompatibleDerivation
        """
        with self._lock, self.afs.operation('promote', self._entries.get(entry_id)) as frame:
            frame.set_input({'entryId': entry_id, 'target': target})
            pad = self.get_entry(entry_id)
            if pad.memory_type != MemoryType.SCRATCHPAD.value:
                raise UnknownEntry(f"'{entry_id}' no es un scratchpad")
            if pad.attrs.get('promotedTo'):
                raise AlreadyPromoted(f"'{entry_id}' ya promovido a {pad.attrs['promotedTo']}")

            if target == 'history':
                record = self.append_history(Origin.AGENT, pad.agent_id, pad.session_id or '',
                                             None, pad.content)
                new_id = record.record_id
            elif target.startswith('memory:'):
                new_id = self._promote_to_memory(pad, target[len('memory:'):])
            else:
                raise IncompatibleDerivation(f"Destino de promoción inválido: '{target}'")

            self.afs.set_attr(pad.path, 'promotedTo', new_id, scope=self.afs.scopes.system)
            self.afs.set_attr(pad.path, 'archived', 'true', scope=self.afs.scopes.system)
            frame.set_output({'newId': new_id})
            frame.detail['lineage'] = [entry_id, new_id]
        logger.info(f"Scratchpad {entry_id} promovido a {new_id}")
        return new_id

    def _promote_to_memory(self, pad: MemoryEntry, memory_type: str) -> str:
        try:
            memory_type = MemoryType(memory_type)
        except ValueError:
            raise IncompatibleDerivation(f"Tipo de memoria desconocido: '{memory_type}'")
        if memory_type == MemoryType.SCRATCHPAD:
            raise IncompatibleDerivation("Un scratchpad no se promueve a scratchpad")
        representation = {
            MemoryType.FACT: Representation.KEY_VALUE,
            MemoryType.EXPERIENTIAL: Representation.STRUCTURED_LOG,
        }.get(memory_type, Representation.PLAIN_TEXT).value
        content = pad.content
        if memory_type == MemoryType.FACT:
            facts = extract_facts(pad.text)
            if not facts:
                raise IncompatibleDerivation("El scratchpad no contiene hechos clave-valor")
            content = ('\n'.join(format_fact(k, v) for k, v in facts) + '\n').encode('utf-8')
        elif memory_type == MemoryType.PROCEDURAL:
            content = self._executable_reference(pad.text).encode('utf-8')
        new_id = self.next_id('entry')
        self._write_entry(
            self._memory_path(pad.agent_id, memory_type.value, new_id), new_id, memory_type.value,
            pad.agent_id, content, representation, [pad.entry_id], pad.session_id,
            extra={'promotedFrom': pad.entry_id},
        )
        return new_id

    # ------------------------------------------------------------------
    # consolidación, retención y linaje
    # ------------------------------------------------------------------
    def consolidate_memory(self, agent_id: str, memory_type: Union[str, MemoryType],
                           similarity_threshold: float) -> ConsolidationReport:
        """
        Fusiona pares de entradas con coseno ≥ umbral.

        Se conserva la más antigua (empate: entryId menor); la absorbida se
        archiva con puntero a la conservada, que acumula sus sourceIds.
        """
        if not 0.0 <= similarity_threshold <= 1.0:
            raise ConfigError(f"Umbral fuera de [0,1]: {similarity_threshold}")
        memory_type = MemoryType(memory_type).value
        with self._lock, self.afs.operation('consolidate', MEMORY.child(agent_id, memory_type)) as frame:
            frame.set_input({'agentId': agent_id, 'memoryType': memory_type,
                             'threshold': similarity_threshold})
            live = sorted(self.list_entries(agent_id, memory_type),
                          key=lambda e: (e.created_at, e.entry_id))
            vectors = {e.entry_id: document_embedding(e.content, e.representation) for e in live}
            sources = {e.entry_id: list(e.source_ids) for e in live}
            absorbed_by: Dict[str, str] = {}
            report = ConsolidationReport(before=len(live))

            for i, keeper in enumerate(live):
                if keeper.entry_id in absorbed_by:
                    continue
                for other in live[i + 1:]:
                    if other.entry_id in absorbed_by:
                        continue
                    if cosine(vectors[keeper.entry_id], vectors[other.entry_id]) >= similarity_threshold:
                        absorbed_by[other.entry_id] = keeper.entry_id
                        sources[keeper.entry_id].extend(sources[other.entry_id])
                        report.merged.append((keeper.entry_id, other.entry_id))

            system = self.afs.scopes.system
            for keeper_id in sorted({k for k, _ in report.merged}):
                self.afs.set_attr(self._entries[keeper_id], 'sourceIds',
                                  ','.join(sources[keeper_id]), scope=system)
            for kept, absorbed in report.merged:
                self.afs.set_attr(self._entries[absorbed], 'absorbedInto', kept, scope=system)
                self.afs.set_attr(self._entries[absorbed], 'archived', 'true', scope=system)
            report.after = report.before - len(report.merged)
            frame.set_output(report.to_dict())
        if report.merged:
            logger.info(f"Consolidación {agent_id}/{memory_type}: {report.before} → {report.after}")
        return report

    def apply_retention(self, policy: RetentionPolicy, now: int) -> RetentionReport:
        """
        Archiva pads caducados no promovidos, marca memoria obsoleta y
        compacta el historial más allá del umbral. Nada del historial deja
        de ser legible.
        """
        report = RetentionReport()
        with self._lock, self.afs.operation('retention', CONTEXT) as frame:
            frame.set_input({'now': now, 'scratchpadTtlMs': policy.scratchpad_ttl_ms,
                             'historyCompactAfter': policy.history_compact_after,
                             'memoryStaleAfterMs': policy.memory_stale_after_ms})
            system = self.afs.scopes.system
            for entry in self.list_entries(memory_type=MemoryType.SCRATCHPAD.value):
                if entry.attrs.get('promotedTo'):
                    continue
                if now - entry.created_at > policy.scratchpad_ttl_ms:
                    self.afs.set_attr(entry.path, 'archived', 'true', scope=system)
                    report.archived_pads.append(entry.path)

            if policy.memory_stale_after_ms is not None:
                for entry in self.list_entries():
                    if entry.memory_type == MemoryType.SCRATCHPAD.value or entry.attrs.get('stale') == 'true':
                        continue
                    if now - entry.modified_at > policy.memory_stale_after_ms:
                        self.afs.set_attr(entry.path, 'stale', 'true', scope=system)
                        report.stale_entries.append(entry.path)

            if len(self.history.uncompacted()) >= policy.history_compact_after:
                before = len(self.history.uncompacted())
                report.compacted_blocks = self.history.compact(policy.history_block_size)
                report.compacted_records = before - len(self.history.uncompacted())
            frame.set_output(report.to_dict())
        if not report.empty:
            logger.info(f"Retención aplicada: {report.to_text()}")
        return report

    def lineage(self, entry_id: str) -> List[str]:
        """Cierre transitivo de sourceIds: registros de historial alcanzables."""
        records = set()
        pending = [entry_id]
        visited = set()
        while pending:
            current = pending.pop()
            if current in visited:
                continue
            visited.add(current)
            if is_record_id(current):
                records.add(current)
                continue
            pending.extend(self.get_entry(current).source_ids)
        return sorted(records)

    def ensure_layout(self) -> None:
        """Directorios explícitos de memoria y pads (listables aunque estén vacíos)."""
        system = self.afs.scopes.system
        for path in (MEMORY, PAD):
            if not self.afs.exists(path):
                self.afs.mkdir(path, scope=system)


__all__ = [
    'ContextRepository',
    'CONTEXT',
    'HISTORY',
    'MEMORY',
    'PAD',
    'HUMAN',
    'MANIFEST',
    'EVALUATION',
    'document_embedding',
    'entry_text',
]
