"""
Ajustes de la CLI: archivo de configuración y archivo de política.

Ambos son INI (secciones ``[x]`` con pares clave = valor). Precedencia:
flag de CLI > archivo de configuración > entorno > valor por defecto.

Ejemplo de archivo de configuración::

    [store]
    url = file:./.afs

    [provider]
    name = stub

    [budget]
    max_tokens = 2048
    reserved = 256

    [scopes]
    path = ./scopes

    [clock]
    mode = logical:1700000000000:1000

    [pipeline]
    weight_similarity = 0.5
    confidence_threshold = 0.5
"""

import configparser
import logging
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Dict, Optional

from src.common.config import BudgetConfig, ClockConfig, PipelineConfig, ProviderConfig, StoreConfig
from src.common.errors import ConfigError
from src.repository.models import RetentionPolicy

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_FILE = 'afs.toml'

# clave del archivo → atributo de PipelineConfig
PIPELINE_KEYS = {
    'weight_similarity': 'WEIGHT_SIMILARITY',
    'weight_recency': 'WEIGHT_RECENCY',
    'weight_provenance': 'WEIGHT_PROVENANCE',
    'recency_half_life_days': 'RECENCY_HALF_LIFE_DAYS',
    'confidence_threshold': 'CONFIDENCE_THRESHOLD',
    'min_score': 'MIN_SCORE',
    'min_compress_tokens': 'MIN_COMPRESS_TOKENS',
    'summary_tokens': 'SUMMARY_TOKENS',
}


@dataclass
class Settings:
    store_url: str = StoreConfig.URL
    provider: str = ProviderConfig.PROVIDER
    max_tokens: int = BudgetConfig.MAX_TOKENS
    reserved_tokens: int = BudgetConfig.RESERVED_FOR_RESPONSE
    scopes_path: Optional[str] = None
    clock: str = ClockConfig.MODE
    fsync: bool = StoreConfig.FSYNC

    @property
    def store_dir(self) -> Path:
        return StoreConfig.store_dir(self.store_url)

    def override(self, **values: Any) -> 'Settings':
        """Aplica los valores no nulos (flags de CLI)."""
        known = {f.name for f in fields(self)}
        for key, value in values.items():
            if key in known and value is not None:
                setattr(self, key, value)
        return self


def _parser(path: Path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes='#')
    try:
        with open(path, encoding='utf-8') as handle:
            parser.read_file(handle)
    except OSError as e:
        raise ConfigError(f"No se puede leer {path}: {e}")
    except configparser.Error as e:
        raise ConfigError(f"Archivo mal formado {path}: {e}")
    return parser


def _value(parser: configparser.ConfigParser, section: str, key: str) -> Optional[str]:
    if not parser.has_option(section, key):
        return None
    return parser.get(section, key).strip().strip('"\'')


def _number(raw: Optional[str], cast, what: str):
    if raw is None:
        return None
    try:
        return cast(raw)
    except ValueError:
        raise ConfigError(f"Valor inválido para {what}: '{raw}'")


def load_settings(config_path: Optional[str] = None) -> Settings:
    """
    Ajustes desde el archivo indicado, AFS_CONFIG o ./afs.toml si existe.

    Las claves de [pipeline] se aplican a PipelineConfig.

    Raises:
        ConfigError: archivo ilegible o valores inválidos
    """
    settings = Settings()
    path = config_path or os.getenv('AFS_CONFIG')
    if path is None and Path(DEFAULT_CONFIG_FILE).exists():
        path = DEFAULT_CONFIG_FILE
    if path is None:
        return settings

    parser = _parser(Path(path))
    settings.override(
        store_url=_value(parser, 'store', 'url'),
        provider=_value(parser, 'provider', 'name'),
        max_tokens=_number(_value(parser, 'budget', 'max_tokens'), int, 'budget.max_tokens'),
        reserved_tokens=_number(_value(parser, 'budget', 'reserved'), int, 'budget.reserved'),
        scopes_path=_value(parser, 'scopes', 'path'),
        clock=_value(parser, 'clock', 'mode'),
    )
    fsync = _value(parser, 'store', 'fsync')
    if fsync is not None:
        settings.fsync = fsync.lower() in ('1', 'true', 'yes', 'on')

    for key, attribute in PIPELINE_KEYS.items():
        raw = _value(parser, 'pipeline', key)
        if raw is not None:
            cast = type(getattr(PipelineConfig, attribute))
            setattr(PipelineConfig, attribute, _number(raw, cast, f'pipeline.{key}'))
    logger.debug(f"Configuración cargada desde {path}", extra={'store_url': settings.store_url})
    return settings


def load_policy(path: Optional[str]) -> RetentionPolicy:
    """
    Política de retención desde la sección [retention] (o la política por defecto).

    Claves: scratchpad_ttl_ms, history_compact_after, memory_stale_after_ms,
    history_block_size.
    """
    if path is None:
        return RetentionPolicy()
    parser = _parser(Path(path))
    values: Dict[str, Any] = {}
    for key, camel in (('scratchpad_ttl_ms', 'scratchpadTtlMs'),
                       ('history_compact_after', 'historyCompactAfter'),
                       ('memory_stale_after_ms', 'memoryStaleAfterMs'),
                       ('history_block_size', 'historyBlockSize')):
        raw = _value(parser, 'retention', key)
        if raw is not None:
            values[camel] = _number(raw, int, f'retention.{key}')
    policy = RetentionPolicy.from_dict(values)
    if policy.scratchpad_ttl_ms < 0 or policy.history_compact_after < 1 or policy.history_block_size < 1:
        raise ConfigError(f"Política de retención inválida: {policy}")
    return policy


__all__ = ['Settings', 'load_settings', 'load_policy', 'DEFAULT_CONFIG_FILE']
