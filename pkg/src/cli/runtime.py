"""
Runtime de AFS: ensambla log, núcleo, repositorio, indexador y pipeline
sobre un almacén, y lo libera al cerrar.

Disposición del almacén::

    <store>/provenance/log.ndjson   log de transacciones (un evento por línea)
    <store>/provenance/blobs/       payloads direccionados por sha256
    <store>/history/                registros del historial y bloques compactados
    <store>/context/nodes/          contenido de /context (StoreBackend)
    <store>/context/meta.ndjson     diario de metadatos de /context
    <store>/index/                  índices persistidos
    <store>/logs/                   afs.log y errors.log de diagnóstico
    <store>/mounts.json             montajes de usuario (sin valores de entorno)
    <store>/afs.lock                lock exclusivo del proceso

El log no comparte directorio con el StoreBackend de /context: un
StoreBackend montado por el usuario (``file:<dir>``) nunca contiene log.ndjson.
"""

import fcntl
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List

from src.afs.core import SCOPES_DIR, AgenticFileSystem
from src.afs.nodes import FunctionDescriptor
from src.afs.paths import AfsPath
from src.backends import (
    DirBackend, DirBackendConfig, FunctionBackend, FunctionSpec, StoreBackend,
    StoreBackendConfig, ToolProcessBackend, ToolProcessConfig,
)
from src.backends.base import Backend
from src.common.clock import create_clock
from src.common.config import StoreConfig
from src.common.errors import AfsError, ConfigError, StoreFailure
from src.governance.scopes import ScopeRegistry, parse_scope_text
from src.indexer.index import IndexManager
from src.pipeline.budget import TokenBudget, estimate_tokens
from src.pipeline.constructor import ContextConstructor
from src.pipeline.evaluator import ContextEvaluator
from src.pipeline.provider import ModelProvider, create_provider
from src.pipeline.session import SessionRunner
from src.provenance.log import ProvenanceLog
from src.repository.history import HistoryBackend
from src.repository.repository import CONTEXT, HISTORY, ContextRepository
from src.cli.settings import Settings

logger = logging.getLogger(__name__)

MOUNTS_FILE = 'mounts.json'
TOOLS_ROOT = '/tools'


def builtin_functions(provider: ModelProvider) -> List[FunctionSpec]:
    """Funciones del pipeline expuestas como nodos ejecutables en /tools."""
    return [
        FunctionSpec(
            'estimate_tokens',
            FunctionDescriptor('estimate_tokens', 'Estimación de tokens: ceil(bytes/4)',
                               {'text': 'string'}, {'tokens': 'integer'}),
            lambda args: {'tokens': estimate_tokens(args['text'])},
        ),
        FunctionSpec(
            'summarize',
            FunctionDescriptor('summarize', 'Resumen del proveedor configurado',
                               {'text': 'string', 'max_tokens': 'integer'}, {'summary': 'string'}),
            lambda args: {'summary': provider.summarize(args['text'], args['max_tokens'])},
        ),
    ]


def _tool_env(entry: Dict[str, Any]) -> Dict[str, str]:
    """Valores explícitos de la entrada; las claves de ``envKeys`` se resuelven del entorno actual."""
    env = dict(entry.get('env', {}))
    missing = []
    for key in entry.get('envKeys', []):
        if key in env:
            continue
        if key in os.environ:
            env[key] = os.environ[key]
        else:
            missing.append(key)
    if missing:
        raise ConfigError(f"Variables de entorno no definidas para {entry.get('root', entry['command'])}: "
                          f"{', '.join(missing)}")
    return env


def backend_from_entry(entry: Dict[str, Any]) -> Backend:
    """Reconstruye un backend a partir de su entrada de mounts.json."""
    kind = entry.get('type')
    if kind == 'dir':
        return DirBackend(DirBackendConfig(entry['hostRoot'], bool(entry.get('followSymlinks', False))))
    if kind == 'store':
        return StoreBackend(StoreBackendConfig(entry['url']))
    if kind == 'tool':
        return ToolProcessBackend(ToolProcessConfig(
            entry['command'], list(entry.get('args', [])), _tool_env(entry),
        ))
    raise ConfigError(f"Tipo de montaje desconocido en {MOUNTS_FILE}: '{kind}'")


class AfsRuntime:
    """
    Un almacén abierto por un único proceso.

    Example:
        >>> runtime = AfsRuntime.open(Settings(store_url='file:/tmp/afs'))
        >>> runtime.afs.list('/context')
        >>> runtime.close()
    """

    def __init__(self, settings: Settings):
        self.settings = settings
        self.store_dir = settings.store_dir
        self._lock_handle = None
        self.mount_errors: Dict[str, str] = {}

    @classmethod
    def open(cls, settings: Settings, actor: str = 'system') -> 'AfsRuntime':
        """
        Raises:
            StoreFailure: almacén bloqueado por otro proceso o ilegible
            StoreCorrupt, ConfigError
        """
        runtime = cls(settings)
        runtime._acquire_lock()
        try:
            runtime._assemble(actor)
        except BaseException:
            runtime._release_lock()
            raise
        return runtime

    def _acquire_lock(self) -> None:
        self.store_dir.mkdir(parents=True, exist_ok=True)
        handle = open(self.store_dir / StoreConfig.LOCK_FILE, 'a+')
        try:
            fcntl.flock(handle.fileno(), fcntl.LOCK_EX | fcntl.LOCK_NB)
        except OSError:
            handle.close()
            raise StoreFailure(f"El almacén {self.store_dir} está bloqueado por otro proceso")
        self._lock_handle = handle

    def _release_lock(self) -> None:
        if self._lock_handle is not None:
            fcntl.flock(self._lock_handle.fileno(), fcntl.LOCK_UN)
            self._lock_handle.close()
            self._lock_handle = None

    def _assemble(self, actor: str) -> None:
        fsync = self.settings.fsync
        self.clock = create_clock(self.settings.clock)
        self.log = ProvenanceLog(self.store_dir / 'provenance', fsync)
        self.scopes = ScopeRegistry()
        self.afs = AgenticFileSystem(self.log, self.clock, self.scopes)
        self.provider = create_provider(self.settings.provider)
        self.history = HistoryBackend(self.store_dir / 'history', fsync)

        with self.afs.acting_as(actor):
            self.afs.mount(CONTEXT, StoreBackend(StoreBackendConfig(f"file:{self.store_dir / 'context'}", fsync)))
            self.afs.mount(HISTORY, self.history)
            self.afs.mount(TOOLS_ROOT, FunctionBackend(builtin_functions(self.provider)))
            self.repository = ContextRepository(self.afs, self.history, self.provider,
                                                self.provider.model_version)
            self.repository.ensure_layout()
            self._load_scopes()
            for entry in self.mount_table():
                self._remount(entry)

        self.indexer = IndexManager(self.afs, self.store_dir)
        self.constructor = ContextConstructor(self.afs, self.repository, self.provider)
        self.evaluator = ContextEvaluator(self.afs, self.repository)
        self.sessions = SessionRunner(self.afs, self.repository, self.provider,
                                      self.constructor, self.evaluator)
        logger.debug(f"Runtime abierto sobre {self.store_dir}")

    @property
    def budget(self) -> TokenBudget:
        return TokenBudget(self.settings.max_tokens, self.settings.reserved_tokens)

    # --- ámbitos ---
    def _load_scopes(self) -> None:
        """Ámbitos del directorio configurado y de /context/scopes (éstos prevalecen)."""
        if self.settings.scopes_path:
            directory = Path(self.settings.scopes_path)
            for path in sorted(directory.glob('*.scope')) if directory.is_dir() else []:
                self.scopes.load(path.stem, parse_scope_text(path.read_text(encoding='utf-8')))
        if self.afs.exists(SCOPES_DIR):
            system = self.scopes.system
            for path, meta in self.afs.list(SCOPES_DIR, depth=1, scope=system):
                if meta.is_directory:
                    continue
                content, _ = self.afs.read(path, scope=system)
                self.scopes.load(path.name, parse_scope_text(content.decode('utf-8')))

    # --- montajes de usuario ---
    def mount_table(self) -> List[Dict[str, Any]]:
        path = self.store_dir / MOUNTS_FILE
        if not path.exists():
            return []
        try:
            return json.loads(path.read_text(encoding='utf-8'))
        except ValueError as e:
            raise ConfigError(f"{MOUNTS_FILE} mal formado: {e}")

    def _save_mount_table(self, entries: List[Dict[str, Any]]) -> None:
        path = self.store_dir / MOUNTS_FILE
        tmp = path.with_suffix('.tmp')
        tmp.write_text(json.dumps(sorted(entries, key=lambda e: e['root']), indent=2) + '\n', encoding='utf-8')
        os.replace(tmp, path)

    def _attach(self, entry: Dict[str, Any]) -> str:
        """Construye el backend dentro del frame de montaje: los fallos quedan registrados."""
        with self.afs.operation('mount', entry['root']) as frame:
            frame.detail['backend'] = entry.get('type')
            try:
                backend = backend_from_entry(entry)
            except AfsError:
                # el montaje de un proceso anterior deja de existir
                frame.effects.append({'op': 'unmount', 'mount': str(AfsPath.parse(entry['root']))})
                raise
            return self.afs.mount(
                entry['root'], backend, bool(entry.get('readOnly', False)),
                entry.get('maxDepth'), entry.get('execTimeoutS'),
            )

    def _remount(self, entry: Dict[str, Any]) -> None:
        try:
            self._attach(entry)
        except AfsError as e:
            self.mount_errors[entry['root']] = f"{e.code}: {e}"
            logger.warning(f"No se pudo re-montar {entry['root']}: {e.code}: {e}")

    def add_mount(self, root: str, entry: Dict[str, Any]) -> str:
        """Monta y persiste en mounts.json."""
        entry = dict(entry, root=str(AfsPath.parse(root)))
        mount_id = self._attach(entry)
        backend_entry = self.afs.mount_at(mount_id).backend.describe() or {}
        entry.update(backend_entry)
        # los valores de entorno no se escriben en disco
        entry.pop('env', None)
        entries = [e for e in self.mount_table() if e['root'] != entry['root']]
        self._save_mount_table(entries + [entry])
        return mount_id

    def remove_mount(self, root: str) -> None:
        self.afs.unmount(root)
        root = str(AfsPath.parse(root))
        self._save_mount_table([e for e in self.mount_table() if e['root'] != root])

    def close(self) -> None:
        try:
            self.afs.release()
        finally:
            self._release_lock()
            logger.debug(f"Runtime cerrado sobre {self.store_dir}")

    def __enter__(self) -> 'AfsRuntime':
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close()


__all__ = ['AfsRuntime', 'MOUNTS_FILE', 'TOOLS_ROOT', 'backend_from_entry', 'builtin_functions']
