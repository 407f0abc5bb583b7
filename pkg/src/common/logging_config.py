"""
Logging estructurado de AFS.

- Consola coloreada (colorlog) sobre stderr; stdout queda para la salida de la CLI.
- ``<store>/logs/afs.log``: JSON por línea, rotativo, con el actor de la operación.
- ``<store>/logs/errors.log``: solo ERROR y superiores.

El log de transacciones (provenance) es el registro de auditoría; estos logs
son diagnóstico y nunca participan en replay.
"""

import json
import logging
import logging.config
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, Optional

import colorlog

from src.common.config import BASE_DIR, LogConfig

_STANDARD_ATTRS = set(vars(logging.makeLogRecord({}))) | {'message', 'asctime', 'log_color', 'taskName'}

# Campos de identidad que se elevan al nivel superior del JSON
ACTOR_FIELDS = ('actor', 'session_id', 'reasoning_id')

COMPONENT_LOGGERS = [
    'src.afs', 'src.backends', 'src.repository', 'src.provenance',
    'src.indexer', 'src.pipeline', 'src.governance', 'src.cli', 'src.common'
]

MAX_LOG_BYTES = 10 * 1024 * 1024


class ActorContextFilter(logging.Filter):
    """
    Estampa en cada registro el actor, la sesión y el razonamiento vigentes.

    ``current`` devuelve un objeto con esos atributos (el ActorContext de AFS).
    Los valores pasados explícitamente con ``extra`` tienen prioridad.
    """

    def __init__(self, current: Callable[[], Any]):
        super().__init__()
        self.current = current

    def filter(self, record: logging.LogRecord) -> bool:
        context = self.current()
        for name in ACTOR_FIELDS:
            if not hasattr(record, name):
                setattr(record, name, getattr(context, name, None))
        return True


class StructuredFormatter(logging.Formatter):
    """Una línea JSON por registro: ts UTC, nivel, componente, identidad y extra."""

    def format(self, record: logging.LogRecord) -> str:
        entry: Dict[str, Any] = {
            'ts': datetime.fromtimestamp(record.created, tz=timezone.utc).isoformat(timespec='milliseconds'),
            'level': record.levelname,
            'component': record.name,
            'message': record.getMessage(),
        }
        for name in ACTOR_FIELDS:
            value = getattr(record, name, None)
            if value is not None:
                entry[name] = value

        if record.exc_info and record.exc_info[0] is not None:
            entry['error'] = {
                'type': record.exc_info[0].__name__,
                'code': getattr(record.exc_info[1], 'code', None),
                'traceback': self.formatException(record.exc_info),
            }

        extra = {
            key: value for key, value in vars(record).items()
            if key not in _STANDARD_ATTRS and key not in ACTOR_FIELDS
        }
        if extra:
            entry['extra'] = extra
        return json.dumps(entry, ensure_ascii=False, default=str, sort_keys=True)


def _rotating(path: Path, level: Optional[str] = None) -> Dict[str, Any]:
    handler = {
        'class': 'logging.handlers.RotatingFileHandler',
        'formatter': 'json',
        'filename': str(path),
        'maxBytes': MAX_LOG_BYTES,
        'backupCount': 3,
        'encoding': 'utf-8',
    }
    if level:
        handler['level'] = level
    return handler


def setup_logging(
    log_level: Optional[str] = None,
    log_format: Optional[str] = None,
    log_dir: Optional[Path] = None,
    enable_console: bool = True,
) -> None:
    """
    Configura el logging de todos los componentes.

    Args:
        log_level: DEBUG, INFO, WARNING, ERROR o CRITICAL (default: AFS_LOG_LEVEL)
        log_format: consola 'colored', 'json' o 'simple' (default: AFS_LOG_FORMAT)
        log_dir: directorio de logs, normalmente ``<store>/logs``
        enable_console: emitir también por stderr
    """
    level = (log_level or LogConfig.LEVEL).upper()
    console_format = log_format or LogConfig.FORMAT
    logs_dir = Path(log_dir) if log_dir else BASE_DIR / 'logs'
    logs_dir.mkdir(parents=True, exist_ok=True)

    handlers: Dict[str, Dict[str, Any]] = {
        'file': _rotating(logs_dir / 'afs.log'),
        'errors': _rotating(logs_dir / 'errors.log', 'ERROR'),
    }
    if enable_console:
        handlers['console'] = {
            'class': 'logging.StreamHandler',
            'formatter': console_format if console_format in ('json', 'colored') else 'simple',
            'stream': 'ext://sys.stderr',
        }

    logging.config.dictConfig({
        'version': 1,
        'disable_existing_loggers': False,
        'formatters': {
            'json': {'()': StructuredFormatter},
            'colored': {
                '()': colorlog.ColoredFormatter,
                'format': '%(log_color)s%(levelname)-8s%(reset)s %(name)s: %(message)s',
            },
            'simple': {'format': '%(levelname)-8s %(name)s: %(message)s'},
        },
        'handlers': handlers,
        'root': {'level': level, 'handlers': list(handlers)},
        'loggers': {name: {'level': level, 'propagate': True} for name in COMPONENT_LOGGERS},
    })
    logging.getLogger(__name__).debug(
        f"Logging configurado en {logs_dir}",
        extra={'log_level': level, 'console': enable_console and console_format},
    )


def attach_actor_context(current: Callable[[], Any]) -> ActorContextFilter:
    """Instala ActorContextFilter en los handlers del logger raíz."""
    actor_filter = ActorContextFilter(current)
    for handler in logging.getLogger().handlers:
        handler.addFilter(actor_filter)
    return actor_filter


def detach_actor_context(actor_filter: ActorContextFilter) -> None:
    for handler in logging.getLogger().handlers:
        handler.removeFilter(actor_filter)


def get_logger(name: str, **extra_context) -> logging.LoggerAdapter:
    """
    Logger con contexto fijo.

    Example:
        >>> logger = get_logger(__name__, agent_id='alice', session_id='s1')
        >>> logger.info('Manifiesto construido')
    """
    return logging.LoggerAdapter(logging.getLogger(name), extra_context)


__all__ = [
    'ActorContextFilter',
    'StructuredFormatter',
    'setup_logging',
    'attach_actor_context',
    'detach_actor_context',
    'get_logger',
]
