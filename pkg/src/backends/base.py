"""
Contrato común de los backends.

Los backends trabajan con rutas relativas a su raíz de montaje (tuplas
de segmentos); la raíz ``()`` es siempre un directorio. Solo el núcleo
AFS llama a estos métodos: control de acceso, solo-lectura y logging
ocurren antes, en el dispatcher.
"""

from abc import ABC, abstractmethod
from typing import Any, Dict, List, Optional, Tuple

from src.afs.nodes import NodeKind, NodeMetadata, NodeState
from src.common.errors import NotExecutable, ReadOnlyMount

RelPath = Tuple[str, ...]


def rel_text(rel: RelPath) -> str:
    return '/' + '/'.join(rel)


class Backend(ABC):
    """Backend montable."""

    backend_type = 'abstract'

    @abstractmethod
    def stat(self, rel: RelPath) -> NodeMetadata:
        """Metadatos del nodo (NotFound si no existe)."""

    @abstractmethod
    def children(self, rel: RelPath) -> List[str]:
        """Nombres de los hijos directos de un directorio."""

    @abstractmethod
    def read(self, rel: RelPath) -> bytes:
        """Contenido actual (IsDirectory sobre directorios)."""

    def write(self, rel: RelPath, content: bytes, attrs: Dict[str, str], now: int) -> NodeMetadata:
        raise ReadOnlyMount(f"Backend '{self.backend_type}' no admite escritura")

    def set_attr(self, rel: RelPath, key: str, value: str, now: int) -> NodeMetadata:
        raise ReadOnlyMount(f"Backend '{self.backend_type}' no admite atributos")

    def mkdir(self, rel: RelPath, now: int) -> NodeMetadata:
        raise ReadOnlyMount(f"Backend '{self.backend_type}' no admite directorios")

    def execute(self, rel: RelPath, args: Dict[str, Any]) -> Dict[str, Any]:
        raise NotExecutable(f"{rel_text(rel)} no es ejecutable")

    def snapshot(self) -> List[NodeState]:
        """
        Estado de todos los nodos no-directorio (rutas relativas en texto).

        La implementación por defecto recorre el árbol con stat/children.
        """
        states: List[NodeState] = []
        pending: List[RelPath] = [()]
        while pending:
            rel = pending.pop()
            for name in self.children(rel):
                child = rel + (name,)
                meta = self.stat(child)
                if meta.kind == NodeKind.DIRECTORY:
                    pending.append(child)
                else:
                    states.append(NodeState(
                        rel_text(child), meta.kind.value, meta.revision_id, meta.content_hash or ''
                    ))
        return sorted(states, key=lambda s: s.path)

    def describe(self) -> Optional[Dict[str, Any]]:
        """Descripción persistible (mounts.json); None si no es re-montable."""
        return None

    def close(self) -> None:
        pass


__all__ = ['Backend', 'RelPath', 'rel_text']
