"""
Gramática de rutas del espacio de nombres AFS.

Forma canónica: "/" + segmentos unidos por "/"; la raíz es "/".
Cada segmento usa letras, dígitos, punto, guion bajo y guion. Los
marcadores "{agentID}" solo aparecen en documentación, nunca en rutas vivas.
Cualquier entrada que contenga ".." se rechaza antes de resolver (sandbox).
"""

import re
from dataclasses import dataclass
from typing import Iterable, Tuple, Union

from src.common.errors import InvalidPath

SEGMENT_RE = re.compile(r'^[A-Za-z0-9._-]+$')


@dataclass(frozen=True)
class AfsPath:
    """Ruta absoluta del espacio de nombres (sensible a mayúsculas)."""

    segments: Tuple[str, ...] = ()

    def __post_init__(self):
        for segment in self.segments:
            _check_segment(segment)

    @classmethod
    def parse(cls, text: Union[str, 'AfsPath']) -> 'AfsPath':
        """
        Parsea la forma textual de una ruta.

        Args:
            text: Ruta absoluta ("/context/history") o AfsPath ya parseada

        Returns:
            AfsPath canónica

        Raises:
            InvalidPath: Si la ruta no es absoluta, contiene '..', segmentos
                vacíos o caracteres fuera de la gramática
        """
        if isinstance(text, AfsPath):
            return text
        if not isinstance(text, str):
            raise InvalidPath(f"Ruta debe ser texto, obtenido {type(text).__name__}")
        if '..' in text:
            raise InvalidPath(f"Ruta fuera del sandbox: '{text}'")
        if not text.startswith('/'):
            raise InvalidPath(f"Ruta debe ser absoluta: '{text}'")
        if text == '/':
            return ROOT
        body = text[1:]
        if body.endswith('/'):
            body = body[:-1]
        segments = tuple(body.split('/'))
        return cls(segments)

    @classmethod
    def join_rel(cls, base: 'AfsPath', rel: Iterable[str]) -> 'AfsPath':
        return cls(base.segments + tuple(rel))

    def __str__(self) -> str:
        return '/' + '/'.join(self.segments)

    def __repr__(self) -> str:
        return f"AfsPath('{self}')"

    @property
    def is_root(self) -> bool:
        return not self.segments

    @property
    def name(self) -> str:
        return self.segments[-1] if self.segments else ''

    @property
    def depth(self) -> int:
        return len(self.segments)

    @property
    def parent(self) -> 'AfsPath':
        if self.is_root:
            return self
        return AfsPath(self.segments[:-1])

    def child(self, *names: str) -> 'AfsPath':
        return AfsPath(self.segments + tuple(names))

    def is_prefix_of(self, other: 'AfsPath') -> bool:
        """True si self es ancestro de other o igual (por segmentos)."""
        n = len(self.segments)
        return other.segments[:n] == self.segments

    def relative_to(self, prefix: 'AfsPath') -> Tuple[str, ...]:
        if not prefix.is_prefix_of(self):
            raise InvalidPath(f"'{self}' no está bajo '{prefix}'")
        return self.segments[len(prefix.segments):]


def _check_segment(segment: str) -> None:
    if segment in ('', '.', '..'):
        raise InvalidPath(f"Segmento inválido: '{segment}'")
    if not SEGMENT_RE.match(segment):
        raise InvalidPath(f"Caracteres no permitidos en segmento: '{segment}'")


def is_valid_segment(segment: str) -> bool:
    try:
        _check_segment(segment)
        return True
    except InvalidPath:
        return False


def path_key(path: AfsPath) -> str:
    """Clave de orden lexicográfico por ruta canónica."""
    return str(path)


ROOT = AfsPath(())

__all__ = ['AfsPath', 'ROOT', 'SEGMENT_RE', 'is_valid_segment', 'path_key']
