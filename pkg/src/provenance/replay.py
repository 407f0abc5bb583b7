"""
Serialización canónica del espacio de nombres y replay del log.

El mismo ``state_digest`` se usa sobre el estado vivo (núcleo AFS) y
sobre el estado reconstruido desde los efectos del log, así que la
equivalencia de replay es una comparación de strings.

Serialización: una línea "path\\x00kind\\x00revisionId\\x00contentHash\\n"
por nodo, en orden lexicográfico de ruta. Las raíces de montaje aparecen
como directorios (revisión 0, hash vacío); los directorios internos de
un backend quedan implícitos. Con montajes anidados, cada ruta pertenece
al montaje de prefijo más largo.
"""

import json
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

from src.afs.nodes import NodeKind, NodeState
from src.afs.paths import AfsPath
from src.common.digests import sha256_hex
from src.common.errors import LogCorrupt, StoreFailure
from src.provenance.log import ProvenanceLog

logger = logging.getLogger(__name__)

# raíz de montaje → ruta completa → estado
MountStates = Dict[str, Dict[str, NodeState]]


def _owner(path: AfsPath, roots: List[AfsPath]) -> Optional[AfsPath]:
    best = None
    for root in roots:
        if root.is_prefix_of(path) and (best is None or root.depth > best.depth):
            best = root
    return best


def canonical_serialization(mounts: MountStates) -> bytes:
    """Serialización canónica (bytes) de un conjunto de montajes."""
    roots = [AfsPath.parse(r) for r in mounts]
    lines: Dict[str, str] = {}

    for root in roots:
        key = str(root)
        lines[key] = f"{key}\x00{NodeKind.DIRECTORY.value}\x000\x00\n"

    for root_text, nodes in mounts.items():
        root = AfsPath.parse(root_text)
        for path_text, state in nodes.items():
            path = AfsPath.parse(path_text)
            # nodo tapado por un montaje anidado o coincidente con una raíz
            if _owner(path, roots) != root or str(path) in mounts:
                continue
            lines[path_text] = (
                f"{path_text}\x00{state.kind}\x00{state.revision_id}\x00{state.content_hash}\n"
            )

    return ''.join(lines[k] for k in sorted(lines)).encode('utf-8')


def state_digest(mounts: MountStates) -> str:
    """StateDigest: sha256 de la serialización canónica (64 hex)."""
    return sha256_hex(canonical_serialization(mounts))


def states_from_snapshot(entries: Iterable[List]) -> Dict[str, NodeState]:
    return {e[0]: NodeState(e[0], e[1], int(e[2]), e[3]) for e in entries}


def replay_states(log: ProvenanceLog, up_to: Optional[int] = None) -> MountStates:
    """
    Reconstruye el estado de los montajes aplicando los efectos del log.

    Raises:
        LogCorrupt: Log corrupto o efectos incoherentes
    """
    mounts: MountStates = {}
    for event in log.events(up_to=up_to):
        for effect in event.effects:
            op = effect.get('op')
            if op == 'mount':
                try:
                    entries = json.loads(log.blobs.get(effect['snapshot']).decode('utf-8'))
                except (StoreFailure, ValueError) as e:
                    raise LogCorrupt(
                        f"Snapshot de montaje ilegible en evento {event.event_id}: {e}"
                    )
                mounts[effect['mount']] = states_from_snapshot(entries)
            elif op == 'unmount':
                mounts.pop(effect['mount'], None)
            elif op == 'put':
                nodes = mounts.get(effect['mount'])
                if nodes is None:
                    raise LogCorrupt(
                        f"Evento {event.event_id}: escritura sobre montaje inexistente "
                        f"{effect['mount']}"
                    )
                nodes[effect['path']] = NodeState(
                    effect['path'], effect['kind'], effect['revisionId'], effect['contentHash']
                )
            else:
                raise LogCorrupt(f"Evento {event.event_id}: efecto desconocido '{op}'")
    return mounts


def replay(log: Union[ProvenanceLog, Path, str], up_to: Optional[int] = None) -> str:
    """
    StateDigest del espacio de nombres tras aplicar el log hasta ``up_to``.

    Args:
        log: ProvenanceLog o directorio del almacén que contiene log.ndjson
        up_to: eventId final (inclusive); None = log completo

    Raises:
        LogCorrupt: Si el prefijo del log no supera la verificación
    """
    if not isinstance(log, ProvenanceLog):
        log = ProvenanceLog(Path(log), fsync=False)
    report = log.verify()
    if not report.ok and (up_to is None or report.failed_event_id <= up_to):
        raise LogCorrupt(f"Evento {report.failed_event_id}: {report.reason}")
    digest = state_digest(replay_states(log, up_to))
    logger.debug(f"Replay hasta {up_to or 'fin'}: {digest}")
    return digest


__all__ = [
    'MountStates',
    'canonical_serialization',
    'state_digest',
    'states_from_snapshot',
    'replay_states',
    'replay',
]
