"""
Dispatcher del espacio de nombres AFS.

Todas las operaciones pasan por ``AgenticFileSystem``: resolución por
prefijo más largo, control de acceso, solo-lectura y registro de un
único TransactionEvent por operación. Las operaciones anidadas
(p. ej. el repositorio escribiendo a través del núcleo) se pliegan en
el evento de la operación externa.

Orden de comprobaciones: resolución (NotFound) → acceso (AccessDenied)
→ solo-lectura (ReadOnlyMount) → backend.
"""

import logging
import re
import threading
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Tuple, Union

from src.afs.nodes import NodeKind, NodeMetadata, NodeState
from src.afs.paths import AfsPath
from src.backends.base import Backend, RelPath
from src.common.clock import Clock, SystemClock
from src.common.config import CoreConfig
from src.common.digests import ZERO_HASH, canonical_bytes, sha256_hex
from src.common.errors import (
    AfsError, AccessDenied, BadPattern, DepthExceeded, DuplicateMount,
    InvalidPath, IsDirectory, NotExecutable, NotFound, ReadOnlyMount,
    ToolFailure, UnknownMount,
)
from src.common.timeouts import TimeoutException, run_with_timeout
from src.governance.scopes import Grant, Right, ScopeId, ScopeRegistry, check_access, format_scope_text
from src.indexer.index import search_semantic
from src.provenance.log import PAYLOAD_OPS, ProvenanceLog, TransactionEvent
from src.provenance.replay import MountStates, state_digest

logger = logging.getLogger(__name__)

SEARCH_MODES = ('substring', 'regex', 'semantic')
SCOPES_DIR = AfsPath.parse('/context/scopes')


@dataclass
class MountPoint:
    """Entrada de la tabla de montajes."""
    root: AfsPath
    backend: Backend
    read_only: bool = False
    max_depth: int = CoreConfig.MAX_DEPTH
    exec_timeout_s: float = CoreConfig.EXEC_TIMEOUT

    @property
    def mount_id(self) -> str:
        return str(self.root)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'mountId': self.mount_id,
            'root': str(self.root),
            'backend': self.backend.backend_type,
            'readOnly': self.read_only,
            'maxDepth': self.max_depth,
            'execTimeoutS': self.exec_timeout_s,
        }


@dataclass
class ActorContext:
    """Quién actúa: se estampa en cada evento y da el ámbito por defecto."""
    actor: str = 'system'
    session_id: Optional[str] = None
    reasoning_id: Optional[str] = None
    scope: Optional[ScopeId] = None


@dataclass
class OperationFrame:
    """Acumula digests, blobs y efectos de la operación en curso."""
    op_type: str
    path: Optional[str] = None
    input_digest: str = ZERO_HASH
    output_digest: str = ZERO_HASH
    input_blob: Optional[bytes] = None
    output_blob: Optional[bytes] = None
    effects: List[Dict[str, Any]] = field(default_factory=list)
    detail: Dict[str, Any] = field(default_factory=dict)
    nested: bool = False
    event: Optional[TransactionEvent] = None

    def set_input(self, value: Any, keep: bool = False) -> None:
        data = value if isinstance(value, bytes) else canonical_bytes(value)
        self.input_digest = sha256_hex(data)
        if keep:
            self.input_blob = data

    def set_output(self, value: Any, keep: bool = False) -> None:
        data = value if isinstance(value, bytes) else canonical_bytes(value)
        self.output_digest = sha256_hex(data)
        if keep:
            self.output_blob = data

    @property
    def event_id(self) -> Optional[int]:
        return self.event.event_id if self.event else None


@dataclass
class SearchHit:
    path: AfsPath
    score: float
    snippet: str

    def to_dict(self) -> Dict[str, Any]:
        return {'path': str(self.path), 'score': self.score, 'snippet': self.snippet}


_frame: ContextVar[Optional[OperationFrame]] = ContextVar('afs_frame', default=None)
_actor: ContextVar[ActorContext] = ContextVar('afs_actor', default=ActorContext())


def _virtual_meta() -> NodeMetadata:
    return NodeMetadata(kind=NodeKind.DIRECTORY, created_at=0, modified_at=0, revision_id=1)


class AgenticFileSystem:
    """
    Espacio de nombres montable y gobernado.

    Los handles se pueden compartir entre threads: la tabla de montajes
    tiene un lock exclusivo y las escrituras/exec sobre una misma ruta se
    serializan con un lock por ruta.
    """

    def __init__(
        self,
        log: ProvenanceLog,
        clock: Optional[Clock] = None,
        scopes: Optional[ScopeRegistry] = None,
    ):
        self.log = log
        self.clock = clock or SystemClock()
        self.scopes = scopes or ScopeRegistry()
        self._mounts: Dict[AfsPath, MountPoint] = {}
        self._table_lock = threading.RLock()
        self._path_locks: Dict[str, threading.RLock] = {}
        self._path_locks_guard = threading.Lock()

    # ------------------------------------------------------------------
    # contexto de actor y frames de operación
    # ------------------------------------------------------------------
    @contextmanager
    def acting_as(
        self,
        actor: str,
        session_id: Optional[str] = None,
        reasoning_id: Optional[str] = None,
        scope: Union[str, ScopeId, None] = None,
    ) -> Iterator[ActorContext]:
        """Fija actor, sesión, razonamiento y ámbito por defecto del bloque."""
        context = ActorContext(
            actor=actor,
            session_id=session_id,
            reasoning_id=reasoning_id,
            scope=self.scopes.get(scope) if scope is not None else None,
        )
        token = _actor.set(context)
        try:
            yield context
        finally:
            _actor.reset(token)

    @property
    def actor(self) -> ActorContext:
        return _actor.get()

    @contextmanager
    def operation(self, op_type: str, path: Union[str, AfsPath, None] = None) -> Iterator[OperationFrame]:
        """
        Abre el frame de una operación.

        Solo el frame más externo registra evento (también si falla, con
        outcome ``error:<código>``); los anidados comparten su lista de efectos.
        """
        parent = _frame.get()
        if parent is not None:
            yield OperationFrame(op_type, str(path) if path else None,
                                 effects=parent.effects, detail={}, nested=True)
            return

        frame = OperationFrame(op_type, str(path) if path is not None else None)
        token = _frame.set(frame)
        outcome = 'ok'
        try:
            yield frame
        except AfsError as e:
            outcome = f"error:{e.code}"
            raise
        except Exception as e:
            outcome = f"error:{type(e).__name__}"
            raise
        finally:
            _frame.reset(token)
            self._emit(frame, outcome)

    def _emit(self, frame: OperationFrame, outcome: str) -> None:
        context = _actor.get()
        if frame.op_type in PAYLOAD_OPS and frame.input_blob is not None:
            self.log.blobs.put(frame.input_blob)
            frame.detail['inputBlob'] = True
        if frame.output_blob is not None:
            self.log.blobs.put(frame.output_blob)
            frame.detail['outputBlob'] = True
        frame.event = self.log.append(
            op_type=frame.op_type,
            timestamp=self.clock.now_ms(),
            actor=context.actor,
            outcome=outcome,
            session_id=context.session_id,
            reasoning_id=context.reasoning_id,
            path=frame.path,
            input_digest=frame.input_digest,
            output_digest=frame.output_digest,
            effects=frame.effects,
            detail=frame.detail,
        )

    def current_frame(self) -> Optional[OperationFrame]:
        return _frame.get()

    def record_put(self, path: AfsPath, meta: NodeMetadata, content: bytes) -> None:
        """
        Registra en el frame actual el nuevo estado de un nodo.

        El contenido va a blobs/: (ruta, revisión) queda recuperable.
        """
        frame = _frame.get()
        if frame is None:
            raise RuntimeError("record_put fuera de una operación")
        mount = self._owner(path)
        digest = self.log.blobs.put(content)
        frame.effects.append({
            'op': 'put',
            'mount': str(mount.root) if mount else str(path),
            'path': str(path),
            'kind': meta.kind.value,
            'revisionId': meta.revision_id,
            'contentHash': digest,
        })

    # ------------------------------------------------------------------
    # tabla de montajes y resolución
    # ------------------------------------------------------------------
    def _owner(self, path: AfsPath) -> Optional[MountPoint]:
        best: Optional[MountPoint] = None
        for root, mount in self._mounts.items():
            if root.is_prefix_of(path) and (best is None or root.depth > best.root.depth):
                best = mount
        return best

    def _resolve(self, path: AfsPath) -> Tuple[Optional[MountPoint], RelPath, NodeMetadata]:
        """
        Resuelve una ruta a (montaje, ruta relativa, metadatos).

        Las rutas que no pertenecen a ningún montaje pero son ancestros de
        una raíz de montaje son directorios virtuales (montaje None).
        """
        with self._table_lock:
            mount = self._owner(path)
            if mount is not None:
                rel = path.relative_to(mount.root)
                return mount, rel, mount.backend.stat(rel)
            if path.is_root or any(path.is_prefix_of(root) for root in self._mounts):
                return None, (), _virtual_meta()
        raise NotFound(f"{path} no existe")

    def _scope(self, scope: Union[str, ScopeId, None]) -> ScopeId:
        if scope is not None:
            return self.scopes.get(scope)
        return _actor.get().scope or self.scopes.system

    def _require(self, scope: ScopeId, path: AfsPath, right: Right) -> None:
        decision = check_access(scope, path, right)
        if not decision:
            raise AccessDenied(decision.reason)

    def _path_lock(self, path: AfsPath) -> threading.RLock:
        key = str(path)
        with self._path_locks_guard:
            lock = self._path_locks.get(key)
            if lock is None:
                lock = self._path_locks[key] = threading.RLock()
            return lock

    def _mount_states(self) -> MountStates:
        states: MountStates = {}
        for root, mount in self._mounts.items():
            states[str(root)] = {
                str(root) + s.path: NodeState(str(root) + s.path, s.kind, s.revision_id, s.content_hash)
                for s in mount.backend.snapshot()
            }
        return states

    def mount(
        self,
        root: Union[str, AfsPath],
        backend: Backend,
        read_only: bool = False,
        max_depth: int = None,
        exec_timeout_s: float = None,
    ) -> str:
        """
        Monta un backend en ``root``.

        Returns:
            MountId (texto canónico de la raíz)

        Raises:
            InvalidPath: raíz "/" o ruta inválida
            DuplicateMount: ya hay un montaje en esa raíz
        """
        with self.operation('mount', str(root)) as frame:
            root = AfsPath.parse(root)
            if root.is_root:
                raise InvalidPath("La raíz '/' está reservada")
            self._require(self._scope(None), root, Right.WRITE)
            max_depth = max_depth or CoreConfig.MAX_DEPTH
            if max_depth < 1:
                raise DepthExceeded(f"maxDepth debe ser positivo: {max_depth}")

            with self._table_lock:
                if root in self._mounts:
                    raise DuplicateMount(f"Ya existe un montaje en {root}")
                mount = MountPoint(
                    root, backend, read_only, max_depth,
                    exec_timeout_s if exec_timeout_s is not None else CoreConfig.EXEC_TIMEOUT,
                )
                snapshot = [
                    NodeState(str(root) + s.path, s.kind, s.revision_id, s.content_hash).as_list()
                    for s in backend.snapshot()
                ]
                self._mounts[root] = mount
            frame.set_input(mount.to_dict())
            frame.effects.append({
                'op': 'mount',
                'mount': str(root),
                'snapshot': self.log.blobs.put(canonical_bytes(snapshot)),
            })
            frame.detail['backend'] = backend.backend_type

        logger.info(f"Montado {backend.backend_type} en {root}",
                    extra={'mount_root': str(root), 'read_only': read_only})
        return mount.mount_id

    def unmount(self, mount_id: Union[str, AfsPath]) -> None:
        """
        Desmonta y cierra el backend.

        Raises:
            UnknownMount: si el identificador no corresponde a ningún montaje
        """
        with self.operation('unmount', str(mount_id)) as frame:
            try:
                root = AfsPath.parse(mount_id)
            except InvalidPath:
                raise UnknownMount(f"Montaje desconocido: {mount_id}")
            with self._table_lock:
                mount = self._mounts.pop(root, None)
                if mount is None:
                    raise UnknownMount(f"Montaje desconocido: {mount_id}")
            frame.effects.append({'op': 'unmount', 'mount': str(root)})
            mount.backend.close()
        logger.info(f"Desmontado {root}")

    def mounts(self) -> List[MountPoint]:
        with self._table_lock:
            return [self._mounts[r] for r in sorted(self._mounts, key=str)]

    def max_depth_at(self, path: Union[str, AfsPath]) -> int:
        mount = self._owner(AfsPath.parse(path))
        return mount.max_depth if mount else CoreConfig.MAX_DEPTH

    def mount_at(self, root: Union[str, AfsPath]) -> MountPoint:
        root = AfsPath.parse(root)
        try:
            return self._mounts[root]
        except KeyError:
            raise UnknownMount(f"Montaje desconocido: {root}")

    def close(self) -> None:
        """Desmonta todo, de las raíces más profundas a las más externas."""
        for mount in sorted(self.mounts(), key=lambda m: -m.root.depth):
            self.unmount(mount.mount_id)

    def release(self) -> None:
        """Cierra los backends sin eventos de desmontaje: el espacio de nombres persiste entre procesos."""
        with self._table_lock:
            mounts = sorted(self._mounts.values(), key=lambda m: -m.root.depth)
            self._mounts.clear()
        for mount in mounts:
            mount.backend.close()

    # ------------------------------------------------------------------
    # operaciones uniformes
    # ------------------------------------------------------------------
    def _child_paths(self, path: AfsPath, mount: Optional[MountPoint], rel: RelPath) -> List[AfsPath]:
        names = set()
        if mount is not None:
            names.update(mount.backend.children(rel))
        for root in self._mounts:
            if root.depth > path.depth and path.is_prefix_of(root):
                names.add(root.segments[path.depth])
        return [path.child(name) for name in sorted(names)]

    def _walk(
        self,
        path: AfsPath,
        depth: int,
        scope: ScopeId,
        include_archived: bool,
    ) -> List[Tuple[AfsPath, NodeMetadata]]:
        found: List[Tuple[AfsPath, NodeMetadata]] = []
        pending: List[Tuple[AfsPath, int]] = [(path, 0)]
        while pending:
            current, level = pending.pop()
            if level >= depth:
                continue
            mount, rel, meta = self._resolve(current)
            if not meta.is_directory:
                continue
            for child in self._child_paths(current, mount, rel):
                try:
                    _, _, child_meta = self._resolve(child)
                except NotFound:
                    continue
                if not check_access(scope, child, Right.LIST):
                    continue
                if child_meta.archived and not include_archived:
                    continue
                found.append((child, child_meta))
                if child_meta.is_directory:
                    pending.append((child, level + 1))
        found.sort(key=lambda item: str(item[0]))
        return found

    def list(
        self,
        path: Union[str, AfsPath],
        depth: int = 1,
        include_archived: bool = False,
        scope: Union[str, ScopeId, None] = None,
    ) -> List[Tuple[AfsPath, NodeMetadata]]:
        """
        Descendientes hasta ``depth`` niveles, ordenados por ruta canónica.

        Raises:
            NotFound, DepthExceeded, AccessDenied
        """
        with self.operation('list', str(path)) as frame:
            path = AfsPath.parse(path)
            frame.set_input({'path': str(path), 'depth': depth, 'includeArchived': include_archived})
            mount, _, _ = self._resolve(path)
            scope = self._scope(scope)
            self._require(scope, path, Right.LIST)
            limit = mount.max_depth if mount else CoreConfig.MAX_DEPTH
            if depth < 1 or depth > limit:
                raise DepthExceeded(f"Profundidad {depth} fuera de rango (1..{limit}) en {path}")
            entries = self._walk(path, depth, scope, include_archived)
            frame.set_output([str(p) for p, _ in entries])
            return entries

    def stat(self, path: Union[str, AfsPath], scope: Union[str, ScopeId, None] = None) -> NodeMetadata:
        with self.operation('stat', str(path)) as frame:
            path = AfsPath.parse(path)
            frame.set_input({'path': str(path)})
            _, _, meta = self._resolve(path)
            self._require(self._scope(scope), path, Right.READ)
            frame.set_output(meta.to_dict())
            return meta

    def exists(self, path: Union[str, AfsPath]) -> bool:
        """Comprobación sin evento ni control de acceso (uso interno)."""
        try:
            self._resolve(AfsPath.parse(path))
            return True
        except NotFound:
            return False

    def read(
        self,
        path: Union[str, AfsPath],
        scope: Union[str, ScopeId, None] = None,
    ) -> Tuple[bytes, NodeMetadata]:
        """
        Contenido actual y metadatos. Un nodo ejecutable devuelve su descriptor.

        Raises:
            NotFound, IsDirectory, AccessDenied
        """
        with self.operation('read', str(path)) as frame:
            path = AfsPath.parse(path)
            frame.set_input({'path': str(path)})
            mount, rel, meta = self._resolve(path)
            self._require(self._scope(scope), path, Right.READ)
            if meta.is_directory or mount is None:
                raise IsDirectory(f"{path} es un directorio")
            content = mount.backend.read(rel)
            frame.set_output(content)
            frame.detail['revisionId'] = meta.revision_id
            return content, meta

    def _writable(self, path: AfsPath, scope: ScopeId) -> Tuple[MountPoint, RelPath]:
        with self._table_lock:
            mount = self._owner(path)
        if mount is None:
            raise NotFound(f"{path} no pertenece a ningún montaje")
        self._require(scope, path, Right.WRITE)
        if mount.read_only:
            raise ReadOnlyMount(f"Montaje de solo lectura: {mount.root}")
        rel = path.relative_to(mount.root)
        if not rel:
            raise IsDirectory(f"{path} es la raíz de un montaje")
        return mount, rel

    def _capture_prior(self, path: AfsPath, mount: MountPoint, rel: RelPath) -> None:
        """Deja recuperable la revisión vigente si el log no la conoce aún."""
        try:
            meta = mount.backend.stat(rel)
        except NotFound:
            return
        if meta.is_directory:
            return
        known = self.log.revision_hash(str(path), meta.revision_id)
        if known is None or known != meta.content_hash:
            self.record_put(path, meta, mount.backend.read(rel))

    def write(
        self,
        path: Union[str, AfsPath],
        content: bytes,
        attrs: Optional[Dict[str, str]] = None,
        scope: Union[str, ScopeId, None] = None,
    ) -> NodeMetadata:
        """
        Escribe contenido; la revisión sube exactamente 1.

        Raises:
            NotFound, AccessDenied, ReadOnlyMount, IsDirectory, ImmutableNode
        """
        with self.operation('write', str(path)) as frame:
            path = AfsPath.parse(path)
            if isinstance(content, str):
                content = content.encode('utf-8')
            frame.set_input(content, keep=True)
            mount, rel = self._writable(path, self._scope(scope))
            with self._path_lock(path):
                self._capture_prior(path, mount, rel)
                meta = mount.backend.write(rel, content, dict(attrs or {}), self.clock.now_ms())
                self.record_put(path, meta, content)
            frame.set_output(meta.to_dict())
            return meta

    def mkdir(self, path: Union[str, AfsPath], scope: Union[str, ScopeId, None] = None) -> NodeMetadata:
        """Crea un directorio explícito (y sus ancestros) en el backend."""
        with self.operation('write', str(path)) as frame:
            path = AfsPath.parse(path)
            frame.detail['mkdir'] = True
            frame.set_input({'path': str(path), 'mkdir': True})
            with self._table_lock:
                mount = self._owner(path)
            if mount is not None and mount.root == path:
                return mount.backend.stat(())
            mount, rel = self._writable(path, self._scope(scope))
            meta = mount.backend.mkdir(rel, self.clock.now_ms())
            frame.set_output(meta.to_dict())
            return meta

    def set_attr(
        self,
        path: Union[str, AfsPath],
        key: str,
        value: str,
        scope: Union[str, ScopeId, None] = None,
    ) -> NodeMetadata:
        """Fija un atributo de usuario; la revisión sube 1."""
        with self.operation('setAttr', str(path)) as frame:
            path = AfsPath.parse(path)
            frame.set_input({'path': str(path), 'key': key, 'value': value})
            self._resolve(path)
            mount, rel = self._writable(path, self._scope(scope))
            with self._path_lock(path):
                self._capture_prior(path, mount, rel)
                meta = mount.backend.set_attr(rel, key, value, self.clock.now_ms())
                if not meta.is_directory:
                    self.record_put(path, meta, mount.backend.read(rel))
            frame.set_output(meta.to_dict())
            return meta

    def search(
        self,
        path: Union[str, AfsPath],
        query: str,
        mode: str = 'substring',
        limit: int = 10,
        scope: Union[str, ScopeId, None] = None,
    ) -> List[SearchHit]:
        """
        Búsqueda de contenido bajo ``path``.

        substring/regex recorren el contenido línea a línea (score = líneas
        coincidentes); semantic ordena por coseno con el indexador. Orden:
        score descendente, luego ruta ascendente.

        Raises:
            NotFound, BadPattern, AccessDenied
        """
        with self.operation('search', str(path)) as frame:
            path = AfsPath.parse(path)
            frame.set_input({'path': str(path), 'query': query, 'mode': mode, 'limit': limit})
            if mode not in SEARCH_MODES:
                raise BadPattern(f"Modo de búsqueda desconocido: '{mode}'. Válidos: {SEARCH_MODES}")
            if limit < 1:
                raise BadPattern(f"limit debe ser positivo: {limit}")
            mount, rel, meta = self._resolve(path)
            scope = self._scope(scope)
            self._require(scope, path, Right.READ)

            documents = self._documents(path, mount, rel, meta, scope)
            if mode == 'semantic':
                hits = self._search_semantic(documents, query, limit)
            else:
                hits = self._search_lines(documents, query, mode)
            hits.sort(key=lambda h: (-h.score, str(h.path)))
            hits = hits[:limit]
            frame.set_output([h.to_dict() for h in hits])
            return hits

    def _documents(
        self,
        path: AfsPath,
        mount: Optional[MountPoint],
        rel: RelPath,
        meta: NodeMetadata,
        scope: ScopeId,
    ) -> List[Tuple[AfsPath, str]]:
        if not meta.is_directory:
            return [(path, mount.backend.read(rel).decode('utf-8', errors='replace'))]
        documents = []
        for child, child_meta in self._walk(path, CoreConfig.MAX_DEPTH, self.scopes.system, False):
            if child_meta.is_directory or not check_access(scope, child, Right.READ):
                continue
            child_mount = self._owner(child)
            content = child_mount.backend.read(child.relative_to(child_mount.root))
            documents.append((child, content.decode('utf-8', errors='replace')))
        return documents

    def _search_lines(self, documents: List[Tuple[AfsPath, str]], query: str, mode: str) -> List[SearchHit]:
        if mode == 'regex':
            try:
                pattern = re.compile(query)
            except re.error as e:
                raise BadPattern(f"Expresión regular inválida '{query}': {e}")

            def matches(line: str) -> bool:
                return pattern.search(line) is not None
        else:
            def matches(line: str) -> bool:
                return query in line

        hits = []
        for doc_path, text in documents:
            matching = [line for line in text.splitlines() if matches(line)]
            if matching:
                snippet = matching[0].strip()[:CoreConfig.SNIPPET_CHARS]
                hits.append(SearchHit(doc_path, float(len(matching)), snippet))
        return hits

    def _search_semantic(self, documents: List[Tuple[AfsPath, str]], query: str, limit: int) -> List[SearchHit]:
        texts = {str(p): t for p, t in documents}
        hits = []
        for doc_path, score in search_semantic(texts, query, limit):
            first_line = next((l for l in texts[doc_path].splitlines() if l.strip()), '')
            hits.append(SearchHit(AfsPath.parse(doc_path), score, first_line.strip()[:CoreConfig.SNIPPET_CHARS]))
        return hits

    def exec(
        self,
        path: Union[str, AfsPath],
        args: Dict[str, Any],
        scope: Union[str, ScopeId, None] = None,
    ) -> Tuple[Dict[str, Any], Optional[int]]:
        """
        Invoca un nodo ejecutable; argumentos y resultado quedan en el log.

        Returns:
            (resultado, eventId del evento exec; None si la llamada está anidada)

        Raises:
            NotFound, AccessDenied, NotExecutable, SchemaViolation, ToolFailure
        """
        with self.operation('exec', str(path)) as frame:
            path = AfsPath.parse(path)
            frame.set_input(args, keep=True)
            mount, rel, meta = self._resolve(path)
            self._require(self._scope(scope), path, Right.EXEC)
            if meta.kind != NodeKind.EXECUTABLE or mount is None:
                raise NotExecutable(f"{path} no es ejecutable ({meta.kind.value})")
            meta.descriptor.validate_input(args)

            with self._path_lock(path):
                try:
                    result = run_with_timeout(mount.backend.execute, mount.exec_timeout_s, rel, args)
                except TimeoutException as e:
                    raise ToolFailure(f"{path}: {e}") from e
                except AfsError:
                    raise
                except Exception as e:
                    logger.warning(f"Función {path} falló: {e}", exc_info=True)
                    raise ToolFailure(f"{path}: {type(e).__name__}: {e}") from e

            frame.set_output(result, keep=True)
            meta.descriptor.validate_output(result)
        return result, frame.event_id

    # ------------------------------------------------------------------
    # gobernanza y digest de estado
    # ------------------------------------------------------------------
    def define_scope(self, name: str, grants: List[Grant]) -> ScopeId:
        """
        Define un ámbito; si /context/scopes está montado se guarda allí
        como nodo de datos (versionado y auditado).

        Raises:
            DuplicateScope, ConfigError
        """
        with self.operation('defineScope', str(SCOPES_DIR.child(name)) if name else None) as frame:
            text = format_scope_text(grants)
            frame.set_input({'name': name, 'grants': text})
            scope = self.scopes.define_scope(name, grants)
            if self._owner(SCOPES_DIR) is not None:
                self.write(SCOPES_DIR.child(name), text.encode('utf-8'), scope=self.scopes.system)
            return scope

    def state_digest(self) -> str:
        """StateDigest del estado vivo (misma serialización que el replay)."""
        with self._table_lock:
            return state_digest(self._mount_states())


__all__ = [
    'AgenticFileSystem',
    'MountPoint',
    'ActorContext',
    'OperationFrame',
    'SearchHit',
    'SEARCH_MODES',
    'SCOPES_DIR',
]
