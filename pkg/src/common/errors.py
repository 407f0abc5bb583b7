"""
Jerarquía de errores de AFS.

El nombre de cada clase es su código en el cable (stderr de la CLI,
``outcome`` de los eventos de transacción). ``exit_code`` agrupa los
errores en tres categorías: 1 error de usuario, 2 acceso, 3 interno.
"""

from typing import Dict, Type

EXIT_USER = 1
EXIT_ACCESS = 2
EXIT_INTERNAL = 3


class AfsError(Exception):
    """Excepción base de AFS."""

    exit_code = EXIT_USER

    @property
    def code(self) -> str:
        return type(self).__name__


# --- namespace / núcleo ---
class InvalidPath(AfsError):
    """Ruta mal formada o fuera del sandbox."""


class NotFound(AfsError):
    """El nodo o la ruta no existe."""


class DuplicateMount(AfsError):
    """Ya existe un montaje en esa raíz."""


class UnknownMount(AfsError):
    """Identificador de montaje desconocido."""


class DepthExceeded(AfsError):
    """Profundidad de listado mayor que la permitida por el montaje."""


class AccessDenied(AfsError):
    """El ámbito del llamante no concede el derecho pedido."""

    exit_code = EXIT_ACCESS


class IsDirectory(AfsError):
    """Operación de contenido sobre un directorio."""


class ReadOnlyMount(AfsError):
    """Escritura sobre un montaje de solo lectura."""


class ImmutableNode(AfsError):
    """Escritura genérica sobre el historial inmutable."""


class BadPattern(AfsError):
    """Expresión regular inválida en search."""


class NotExecutable(AfsError):
    """exec sobre un nodo que no es ejecutable."""


class SchemaViolation(AfsError):
    """Argumentos o resultado fuera del esquema declarado."""


class ToolFailure(AfsError):
    """La función o el proceso de herramienta falló."""


# --- backends ---
class HandshakeTimeout(ToolFailure):
    """El proceso de herramienta no respondió al handshake a tiempo."""


class ProtocolViolation(ToolFailure):
    """Mensaje mal formado en el Tool Wire Protocol."""


class HostRootMissing(AfsError):
    """El directorio anfitrión no existe."""


class DuplicateName(AfsError):
    """Nombre de función repetido."""


class StoreCorrupt(AfsError):
    """El almacén no supera la verificación de checksums."""

    exit_code = EXIT_INTERNAL


class StoreFailure(AfsError):
    """Fallo de E/S del almacén o del log."""

    exit_code = EXIT_INTERNAL


# --- repositorio ---
class UnknownRecord(AfsError):
    """Registro de historial inexistente (o linaje vacío)."""


class IncompatibleDerivation(AfsError):
    """Derivación incompatible con la representación del tipo de memoria."""


class UnknownEntry(AfsError):
    """Entrada de memoria o scratchpad inexistente."""


class AlreadyPromoted(AfsError):
    """El scratchpad ya fue promovido."""


# --- provenance ---
class UnknownRevision(AfsError):
    """Revisión inexistente para la ruta."""


class LogCorrupt(AfsError):
    """Log de transacciones truncado, con huecos o digests inválidos."""

    exit_code = EXIT_INTERNAL


# --- indexador ---
class StaleIndex(AfsError):
    """El corpus cambió desde que se construyó el índice."""


# --- pipeline ---
class BudgetInvalid(AfsError):
    """Presupuesto de tokens sin capacidad utilizable."""


class ScopeUnknown(AfsError):
    """Ámbito no definido."""


class RevisionMissing(AfsError):
    """Una revisión fijada en el manifiesto ya no es legible."""


class WindowOverflow(AfsError):
    """Guardia interna: la ventana activa excedería el presupuesto."""

    exit_code = EXIT_INTERNAL


class ReviewPending(AfsError):
    """Se requiere revisión humana aprobatoria antes de confirmar."""


class UnknownReasoning(AfsError):
    """reasoningId desconocido."""


# --- gobernanza / configuración ---
class DuplicateScope(AfsError):
    """Ya existe un ámbito con ese nombre."""


class ConfigError(AfsError):
    """Configuración inválida."""


def error_classes() -> Dict[str, Type[AfsError]]:
    """Mapa código → clase, para reconstruir errores desde el log."""
    found: Dict[str, Type[AfsError]] = {}
    pending = [AfsError]
    while pending:
        cls = pending.pop()
        found[cls.__name__] = cls
        pending.extend(cls.__subclasses__())
    return found


__all__ = ['EXIT_USER', 'EXIT_ACCESS', 'EXIT_INTERNAL', 'error_classes'] + sorted(error_classes())
