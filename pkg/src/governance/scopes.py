"""
Ámbitos de acceso y ACLs por prefijo.

Cada ámbito es una lista de concesiones (prefijo, derechos). La decisión
es denegar por defecto y la concesión de prefijo más largo decide.
``check_access`` es pura y total: depende solo de (ámbito, ruta, derecho).

Formato de archivo de ámbito: una concesión por línea "prefijo<TAB>derechos",
derechos separados por comas; líneas vacías y '#' se ignoran.
"""

import logging
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple, Union

from src.afs.paths import AfsPath, is_valid_segment
from src.common.errors import ConfigError, DuplicateScope, ScopeUnknown

logger = logging.getLogger(__name__)


class Right(str, Enum):
    READ = 'read'
    WRITE = 'write'
    EXEC = 'exec'
    LIST = 'list'


ALL_RIGHTS: FrozenSet[Right] = frozenset(Right)


@dataclass(frozen=True)
class Grant:
    """Concesión de derechos sobre un prefijo de ruta."""
    prefix: AfsPath
    rights: FrozenSet[Right]

    @classmethod
    def of(cls, prefix: Union[str, AfsPath], rights: Iterable[Union[str, Right]]) -> 'Grant':
        try:
            parsed = frozenset(Right(r) for r in rights)
        except ValueError as e:
            raise ConfigError(f"Derecho inválido en concesión de '{prefix}': {e}")
        return cls(AfsPath.parse(prefix), parsed)


@dataclass(frozen=True)
class ScopeId:
    """Ámbito con nombre y concesiones."""
    name: str
    grants: Tuple[Grant, ...] = ()


@dataclass(frozen=True)
class AccessDecision:
    allowed: bool
    reason: str = ''

    def __bool__(self) -> bool:
        return self.allowed


def check_access(scope: ScopeId, path: Union[str, AfsPath], right: Union[str, Right]) -> AccessDecision:
    """
    Decide si el ámbito concede ``right`` sobre ``path``.

    Longest-prefix: entre las concesiones cuyo prefijo contiene la ruta, solo
    cuentan las de prefijo más largo (sus derechos se unen). Sin coincidencia
    se deniega.
    """
    path = AfsPath.parse(path)
    right = Right(right)

    best_len = -1
    best_rights: set = set()
    best_prefix: Optional[AfsPath] = None
    for grant in scope.grants:
        if not grant.prefix.is_prefix_of(path):
            continue
        length = grant.prefix.depth
        if length > best_len:
            best_len = length
            best_rights = set(grant.rights)
            best_prefix = grant.prefix
        elif length == best_len:
            best_rights |= grant.rights

    if best_prefix is None:
        return AccessDecision(False, f"ámbito '{scope.name}' sin concesión para {path}")
    if right in best_rights:
        return AccessDecision(True, f"{best_prefix} concede {right.value}")
    return AccessDecision(
        False, f"ámbito '{scope.name}': {best_prefix} no concede {right.value} sobre {path}"
    )


def parse_scope_text(text: str) -> List[Grant]:
    """Parsea el formato "prefijo<TAB>derechos" línea a línea."""
    grants: List[Grant] = []
    for line_num, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith('#'):
            continue
        if '\t' not in line:
            raise ConfigError(f"Línea {line_num}: se esperaba 'prefijo<TAB>derechos'")
        prefix, rights = line.split('\t', 1)
        rights_list = [r.strip() for r in rights.split(',') if r.strip()]
        grants.append(Grant.of(prefix.strip(), rights_list))
    return grants


def format_scope_text(grants: Iterable[Grant]) -> str:
    lines = []
    for grant in grants:
        rights = ','.join(sorted(r.value for r in grant.rights))
        lines.append(f"{grant.prefix}\t{rights}")
    return '\n'.join(lines) + ('\n' if lines else '')


def agent_scope(agent_id: str) -> ScopeId:
    """Ámbito por defecto de un agente: su memoria, historial, anotaciones y módulos."""
    ro = ('read', 'list')
    rw = ('read', 'list', 'write')
    tools = ('read', 'list', 'exec')
    return ScopeId(f"agent:{agent_id}", (
        Grant.of('/context/history', ro),
        Grant.of(f'/context/memory/{agent_id}', rw),
        Grant.of('/context/human', ro),
        Grant.of('/context/pad', rw),
        Grant.of('/modules', tools),
        Grant.of('/tools', tools),
    ))


def builtin_scopes() -> Dict[str, ScopeId]:
    full = (Grant(AfsPath(()), ALL_RIGHTS),)
    return {
        'system': ScopeId('system', full),
        'operator': ScopeId('operator', full),
        # Revisores: lectura en /context/** y escritura solo en /context/human/**
        'reviewer': ScopeId('reviewer', (
            Grant.of('/context', ('read', 'list')),
            Grant.of('/context/human', ('read', 'list', 'write')),
        )),
    }


class ScopeRegistry:
    """
    Registro de ámbitos definidos.

    Los ámbitos 'agent:<id>' se generan bajo demanda; el resto se define
    explícitamente (DuplicateScope si el nombre ya existe).
    """

    def __init__(self):
        self._scopes: Dict[str, ScopeId] = builtin_scopes()
        self._lock = threading.RLock()

    @property
    def system(self) -> ScopeId:
        return self._scopes['system']

    def define_scope(self, name: str, grants: Iterable[Grant]) -> ScopeId:
        """
        Define un ámbito nuevo.

        Raises:
            DuplicateScope: Si ya existe
            ConfigError: Si el nombre no es un segmento de ruta válido
        """
        if not is_valid_segment(name):
            raise ConfigError(f"Nombre de ámbito inválido: '{name}'")
        with self._lock:
            if name in self._scopes:
                raise DuplicateScope(f"Ámbito '{name}' ya definido")
            scope = ScopeId(name, tuple(grants))
            self._scopes[name] = scope
        logger.info(f"Ámbito definido: {name} ({len(scope.grants)} concesiones)")
        return scope

    def load(self, name: str, grants: Iterable[Grant]) -> ScopeId:
        """Registra (o reemplaza) un ámbito cargado desde el almacén."""
        with self._lock:
            scope = ScopeId(name, tuple(grants))
            self._scopes[name] = scope
            return scope

    def get(self, scope: Union[str, ScopeId]) -> ScopeId:
        if isinstance(scope, ScopeId):
            return scope
        if scope.startswith('agent:') and len(scope) > len('agent:'):
            return self._scopes.get(scope) or agent_scope(scope[len('agent:'):])
        try:
            return self._scopes[scope]
        except KeyError:
            raise ScopeUnknown(f"Ámbito desconocido: '{scope}'")

    def names(self) -> List[str]:
        return sorted(self._scopes)

    def is_builtin(self, name: str) -> bool:
        return name in builtin_scopes()


__all__ = [
    'Right',
    'ALL_RIGHTS',
    'Grant',
    'ScopeId',
    'AccessDecision',
    'check_access',
    'parse_scope_text',
    'format_scope_text',
    'agent_scope',
    'builtin_scopes',
    'ScopeRegistry',
]
