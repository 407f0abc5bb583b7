"""
Configuración centralizada del sistema AFS (Agentic File System).
Lee variables de entorno desde .env y proporciona valores por defecto.
"""

import os
from pathlib import Path
from dotenv import load_dotenv

# Cargar variables de entorno desde .env
BASE_DIR = Path(__file__).resolve().parent.parent.parent
load_dotenv(BASE_DIR / '.env')


def _env_bool(name: str, default: str) -> bool:
    return os.getenv(name, default).strip().lower() in ('1', 'true', 'yes', 'on')


class StoreConfig:
    """Ubicación y durabilidad del almacén persistente."""

    URL = os.getenv('AFS_STORE', 'file:./.afs')
    # fsync tras cada evento: el log debe ser durable antes de reportar éxito
    FSYNC = _env_bool('AFS_FSYNC', '1')
    LOCK_FILE = os.getenv('AFS_LOCK_FILE', 'afs.lock')

    @classmethod
    def store_dir(cls, url: str = None) -> Path:
        """Convierte un localizador 'file:<dir>' en ruta de directorio."""
        url = url or cls.URL
        if url.startswith('file:'):
            url = url[len('file:'):]
        return Path(url).expanduser()


class CoreConfig:
    """Parámetros del núcleo de espacio de nombres."""

    MAX_DEPTH = int(os.getenv('AFS_MAX_DEPTH', '16'))
    EXEC_TIMEOUT = float(os.getenv('AFS_EXEC_TIMEOUT', '10'))  # segundos
    SNIPPET_CHARS = int(os.getenv('AFS_SNIPPET_CHARS', '200'))


class ToolConfig:
    """Procesos de herramienta (Tool Wire Protocol)."""

    HANDSHAKE_TIMEOUT_MS = int(os.getenv('AFS_TOOL_HANDSHAKE_TIMEOUT_MS', '5000'))
    SHUTDOWN_TIMEOUT = float(os.getenv('AFS_TOOL_SHUTDOWN_TIMEOUT', '2'))  # segundos


class IndexConfig:
    """Indexador y embeddings por hashing de features."""

    DIMENSION = 256
    # Semilla publicada del hash estable de 64 bits (clave de blake2b)
    HASH_SEED = os.getenv('AFS_INDEX_SEED', 'afs-feature-hash-v1')


class BudgetConfig:
    """Presupuesto de tokens por defecto."""

    MAX_TOKENS = int(os.getenv('AFS_MAX_TOKENS', '2048'))
    RESERVED_FOR_RESPONSE = int(os.getenv('AFS_RESERVED_TOKENS', '256'))


class PipelineConfig:
    """Constantes del pipeline Constructor → Updater → Evaluator."""

    WEIGHT_SIMILARITY = float(os.getenv('AFS_WEIGHT_SIMILARITY', '0.5'))
    WEIGHT_RECENCY = float(os.getenv('AFS_WEIGHT_RECENCY', '0.3'))
    WEIGHT_PROVENANCE = float(os.getenv('AFS_WEIGHT_PROVENANCE', '0.2'))
    RECENCY_HALF_LIFE_DAYS = float(os.getenv('AFS_RECENCY_HALF_LIFE_DAYS', '7'))

    CONFIDENCE_THRESHOLD = float(os.getenv('AFS_CONFIDENCE_THRESHOLD', '0.5'))
    MIN_SCORE = float(os.getenv('AFS_MIN_SCORE', '0'))

    # Compresión de elementos que no caben en el presupuesto restante
    COMPRESS = _env_bool('AFS_COMPRESS', '1')
    MIN_COMPRESS_TOKENS = int(os.getenv('AFS_MIN_COMPRESS_TOKENS', '8'))
    SUMMARY_TOKENS = int(os.getenv('AFS_SUMMARY_TOKENS', '64'))

    # Raíces de las que el Constructor recoge candidatos
    CANDIDATE_ROOTS = [
        r.strip() for r in os.getenv(
            'AFS_CANDIDATE_ROOTS', '/context/memory,/context/history,/context/human'
        ).split(',') if r.strip()
    ]

    SYSTEM_INSTRUCTIONS = os.getenv(
        'AFS_SYSTEM_INSTRUCTIONS', 'You are a friendly chatbot'
    )


class RetentionConfig:
    """Política de retención por defecto."""

    SCRATCHPAD_TTL_MS = int(os.getenv('AFS_SCRATCHPAD_TTL_MS', '86400000'))
    HISTORY_COMPACT_AFTER = int(os.getenv('AFS_HISTORY_COMPACT_AFTER', '1000'))
    HISTORY_BLOCK_SIZE = int(os.getenv('AFS_HISTORY_BLOCK_SIZE', '1000'))
    MEMORY_STALE_AFTER_MS = (
        int(os.getenv('AFS_MEMORY_STALE_AFTER_MS'))
        if os.getenv('AFS_MEMORY_STALE_AFTER_MS') else None
    )


class ProviderConfig:
    """Proveedor de modelo ('stub' o 'external:<comando>')."""

    PROVIDER = os.getenv('AFS_PROVIDER', 'stub')
    MODEL_VERSION = os.getenv('AFS_MODEL_VERSION', 'stub-1')
    EXTERNAL_TIMEOUT = float(os.getenv('AFS_PROVIDER_TIMEOUT', '60'))


class ClockConfig:
    """Reloj del runtime ('system' o 'logical:<inicio_ms>[:<paso_ms>]')."""

    MODE = os.getenv('AFS_CLOCK', 'system')


class LogConfig:
    """Configuración de logging."""

    LEVEL = os.getenv('AFS_LOG_LEVEL', 'WARNING')
    FORMAT = os.getenv('AFS_LOG_FORMAT', 'colored')


# Exportar configuraciones
__all__ = [
    'StoreConfig',
    'CoreConfig',
    'ToolConfig',
    'IndexConfig',
    'BudgetConfig',
    'PipelineConfig',
    'RetentionConfig',
    'ProviderConfig',
    'ClockConfig',
    'LogConfig',
    'BASE_DIR'
]
