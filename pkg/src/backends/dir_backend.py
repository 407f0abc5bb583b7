"""
Backend de directorio local: proyecta un árbol del anfitrión.

Los archivos aparecen como nodos de datos y los directorios como
directorios. Toda ruta anfitriona se re-comprueba tras canonicalizar:
debe quedar bajo ``host_root``. Los enlaces simbólicos no se listan y,
con ``follow_symlinks=False``, leerlos es AccessDenied.

Los archivos del anfitrión no llevan revisiones ni atributos de usuario:
se mantienen en memoria durante la vida del proceso.
"""

import logging
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Tuple

from src.afs.nodes import NodeKind, NodeMetadata
from src.afs.paths import is_valid_segment
from src.backends.base import Backend, RelPath, rel_text
from src.common.digests import sha256_hex
from src.common.errors import AccessDenied, HostRootMissing, IsDirectory, NotFound, StoreFailure

logger = logging.getLogger(__name__)


@dataclass
class DirBackendConfig:
    host_root: str
    follow_symlinks: bool = False


class DirBackend(Backend):
    """Vista de un directorio del anfitrión."""

    backend_type = 'dir'

    def __init__(self, config: DirBackendConfig):
        self.config = config
        root = Path(config.host_root).expanduser()
        if not root.is_dir():
            raise HostRootMissing(f"Directorio anfitrión inexistente: {config.host_root}")
        self.host_root = root.resolve()
        self._lock = threading.RLock()
        # ruta relativa → (revisión, atributos de usuario)
        self._tracked: Dict[RelPath, Tuple[int, Dict[str, str]]] = {}

    def _host_path(self, rel: RelPath) -> Path:
        """
        Traduce la ruta relativa y aplica el sandbox.

        Raises:
            AccessDenied: enlace simbólico no permitido o escape de host_root
            NotFound: la ruta no existe
        """
        candidate = self.host_root.joinpath(*rel)
        current = self.host_root
        for segment in rel:
            current = current / segment
            if current.is_symlink() and not self.config.follow_symlinks:
                raise AccessDenied(f"{rel_text(rel)}: enlace simbólico no permitido")
        if not os.path.lexists(candidate):
            raise NotFound(f"{rel_text(rel)} no existe en {self.host_root}")
        resolved = candidate.resolve()
        if resolved != self.host_root and self.host_root not in resolved.parents:
            raise AccessDenied(f"{rel_text(rel)} escapa del directorio montado")
        return resolved

    def _check_creatable(self, rel: RelPath) -> None:
        """
        El ancestro existente más profundo de una ruta nueva debe quedar bajo host_root.

        Raises:
            AccessDenied: un ancestro es un enlace no permitido o sale del directorio montado
        """
        depth = len(rel)
        while depth and not os.path.lexists(self.host_root.joinpath(*rel[:depth])):
            depth -= 1
        if depth:
            self._host_path(rel[:depth])

    def stat(self, rel: RelPath) -> NodeMetadata:
        host = self._host_path(rel)
        st = host.stat()
        modified = int(st.st_mtime * 1000)
        created = int(getattr(st, 'st_birthtime', st.st_mtime) * 1000)
        revision, attrs = self._tracked.get(rel, (1, {}))
        if host.is_dir():
            return NodeMetadata(
                kind=NodeKind.DIRECTORY, created_at=min(created, modified),
                modified_at=modified, revision_id=revision, user_attrs=dict(attrs),
            )
        return NodeMetadata(
            kind=NodeKind.DATA,
            created_at=min(created, modified),
            modified_at=modified,
            size=st.st_size,
            revision_id=revision,
            user_attrs=dict(attrs),
            content_hash=sha256_hex(host.read_bytes()),
        )

    def children(self, rel: RelPath) -> List[str]:
        host = self._host_path(rel)
        if not host.is_dir():
            return []
        names = []
        for entry in sorted(os.listdir(host)):
            if not is_valid_segment(entry):
                continue
            child = host / entry
            if child.is_symlink():
                if not self.config.follow_symlinks:
                    continue
                target = child.resolve()
                if target != self.host_root and self.host_root not in target.parents:
                    continue
            names.append(entry)
        return names

    def read(self, rel: RelPath) -> bytes:
        host = self._host_path(rel)
        if host.is_dir():
            raise IsDirectory(f"{rel_text(rel)} es un directorio")
        return host.read_bytes()

    def _bump(self, rel: RelPath, existed: bool, attrs: Dict[str, str]) -> None:
        revision, current = self._tracked.get(rel, (1 if existed else 0, {}))
        merged = dict(current)
        merged.update(attrs)
        self._tracked[rel] = (revision + 1, merged)

    def write(self, rel: RelPath, content: bytes, attrs: Dict[str, str], now: int) -> NodeMetadata:
        with self._lock:
            target = self.host_root.joinpath(*rel)
            existed = os.path.lexists(target)
            if existed:
                target = self._host_path(rel)
                if target.is_dir():
                    raise IsDirectory(f"{rel_text(rel)} es un directorio")
            else:
                self._check_creatable(rel)
            try:
                target.parent.mkdir(parents=True, exist_ok=True)
                tmp = target.with_name(f".{target.name}.afs-tmp")
                tmp.write_bytes(content)
                os.replace(tmp, target)
            except OSError as e:
                raise StoreFailure(f"Error escribiendo {target}: {e}")
            self._bump(rel, existed, attrs)
            return self.stat(rel)

    def set_attr(self, rel: RelPath, key: str, value: str, now: int) -> NodeMetadata:
        with self._lock:
            self._host_path(rel)
            self._bump(rel, True, {key: value})
            return self.stat(rel)

    def mkdir(self, rel: RelPath, now: int) -> NodeMetadata:
        with self._lock:
            target = self.host_root.joinpath(*rel)
            if os.path.lexists(target):
                self._host_path(rel)
            else:
                self._check_creatable(rel)
            try:
                target.mkdir(parents=True, exist_ok=True)
            except OSError as e:
                raise StoreFailure(f"Error creando {target}: {e}")
            return self.stat(rel)

    def describe(self) -> Dict[str, Any]:
        return {
            'type': 'dir',
            'hostRoot': str(self.host_root),
            'followSymlinks': self.config.follow_symlinks,
        }


__all__ = ['DirBackend', 'DirBackendConfig']
