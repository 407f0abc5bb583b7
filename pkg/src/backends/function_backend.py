"""
Montaje de funciones en proceso.

Cada función es un nodo ejecutable en un espacio plano bajo la raíz del
montaje; ``read`` devuelve la serialización del descriptor y ``exec``
enruta al callable (la validación de esquemas la hace el núcleo).
"""

import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, Iterable, List

from src.afs.nodes import FunctionDescriptor, NodeKind, NodeMetadata
from src.afs.paths import is_valid_segment
from src.backends.base import Backend, RelPath, rel_text
from src.common.digests import sha256_hex
from src.common.errors import DuplicateName, InvalidPath, IsDirectory, NotFound

logger = logging.getLogger(__name__)


@dataclass
class FunctionSpec:
    """Función montable: nombre, descriptor y callable ``f(args) -> dict``."""
    name: str
    descriptor: FunctionDescriptor
    func: Callable[[Dict[str, Any]], Dict[str, Any]]


class FunctionBackend(Backend):

    backend_type = 'function'

    def __init__(self, functions: Iterable[FunctionSpec]):
        self._functions: Dict[str, FunctionSpec] = {}
        for spec in functions:
            if not is_valid_segment(spec.name):
                raise InvalidPath(f"Nombre de función inválido: '{spec.name}'")
            if spec.name in self._functions:
                raise DuplicateName(f"Función duplicada: '{spec.name}'")
            self._functions[spec.name] = spec
        logger.debug(f"Montaje de funciones con {len(self._functions)} funciones")

    def _spec(self, rel: RelPath) -> FunctionSpec:
        if len(rel) != 1 or rel[0] not in self._functions:
            raise NotFound(f"{rel_text(rel)} no existe en el montaje de funciones")
        return self._functions[rel[0]]

    def stat(self, rel: RelPath) -> NodeMetadata:
        if not rel:
            return NodeMetadata(kind=NodeKind.DIRECTORY)
        spec = self._spec(rel)
        content = spec.descriptor.serialize()
        return NodeMetadata(
            kind=NodeKind.EXECUTABLE,
            size=len(content),
            descriptor=spec.descriptor,
            content_hash=sha256_hex(content),
        )

    def children(self, rel: RelPath) -> List[str]:
        return sorted(self._functions) if not rel else []

    def read(self, rel: RelPath) -> bytes:
        if not rel:
            raise IsDirectory("La raíz del montaje es un directorio")
        return self._spec(rel).descriptor.serialize()

    def execute(self, rel: RelPath, args: Dict[str, Any]) -> Dict[str, Any]:
        return self._spec(rel).func(args)


__all__ = ['FunctionBackend', 'FunctionSpec']
