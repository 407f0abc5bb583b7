"""
Contrato de proveedor de modelo y proveedor stub determinista.

El prompt sigue un esquema fijo de secciones::

    ## system
    <instrucciones>

    ## /ruta/canonica
    <contenido del elemento>

    ## query
    <consulta del usuario>
"""

import logging
import re
import shlex
import subprocess
from abc import ABC, abstractmethod
from collections import Counter
from typing import List, Optional, Sequence, Tuple

from src.common.config import ProviderConfig
from src.common.errors import ConfigError, ToolFailure
from src.indexer.text import tokenize
from src.pipeline.budget import estimate_tokens
from src.repository.facts import extract_facts, format_fact

logger = logging.getLogger(__name__)

SECTION_PREFIX = '## '
SYSTEM_SECTION = 'system'
QUERY_SECTION = 'query'

_SENTENCE_SPLIT = re.compile(r'(?<=[.!?])\s+|\n+')


def build_prompt(system: str, items: Sequence[Tuple[str, str]], query: Optional[str]) -> str:
    """Ensambla el prompt: instrucciones, elementos en orden de manifiesto y consulta."""
    parts = [f"{SECTION_PREFIX}{SYSTEM_SECTION}\n{system}\n"]
    for path, text in items:
        parts.append(f"{SECTION_PREFIX}{path}\n{text.rstrip(chr(10))}\n")
    if query is not None:
        parts.append(f"{SECTION_PREFIX}{QUERY_SECTION}\n{query}\n")
    return '\n'.join(parts)


def parse_prompt(prompt: str) -> Tuple[List[str], str]:
    """(rutas cargadas, consulta) de un prompt construido con build_prompt."""
    marker = f"\n{SECTION_PREFIX}{QUERY_SECTION}\n"
    head, _, query = prompt.rpartition(marker)
    if not head:
        head, query = prompt, ''
    paths = [
        line[len(SECTION_PREFIX):] for line in head.splitlines()
        if line.startswith(SECTION_PREFIX + '/')
    ]
    return paths, query.strip()


def split_sentences(text: str) -> List[str]:
    return [s.strip() for s in _SENTENCE_SPLIT.split(text) if s.strip()]


def truncate_to_tokens(text: str, max_tokens: int) -> str:
    """Recorta a ``max_tokens`` según el estimador (sin partir caracteres UTF-8)."""
    if estimate_tokens(text) <= max_tokens:
        return text
    raw = text.encode('utf-8')[:max(max_tokens, 0) * 4]
    return raw.decode('utf-8', errors='ignore').rstrip()


class ModelProvider(ABC):
    """Contrato: summarize(text, maxTokens) y complete(prompt)."""

    provider_id: str = 'abstract'
    model_version: str = ''

    @abstractmethod
    def summarize(self, text: str, max_tokens: int) -> str:
        pass

    @abstractmethod
    def complete(self, prompt: str) -> str:
        pass


class StubProvider(ModelProvider):
    """
    Proveedor determinista (función pura de sus entradas).

    summarize: primera frase más la frase con más tokens raros (empate: la
    anterior), recortado al presupuesto. El corpus de frecuencias es el
    propio texto resumido: un token es raro si aparece una sola vez en él.
    No consulta el almacén: el mismo texto da siempre el mismo resumen.

    complete: eco ``> consulta``, línea ``from`` con las rutas cargadas y
    una línea ``clave: valor`` por hecho enunciado en la consulta.
    """

    provider_id = 'stub'

    def __init__(self, model_version: str = None):
        self.model_version = model_version or ProviderConfig.MODEL_VERSION

    def summarize(self, text: str, max_tokens: int) -> str:
        sentences = split_sentences(text)
        if not sentences:
            return ''
        chosen = [sentences[0]]
        if len(sentences) > 1:
            counts = Counter(tokenize(text))

            def rarity(sentence: str) -> int:
                return sum(1 for token in tokenize(sentence) if counts[token] == 1)

            best = max(range(1, len(sentences)), key=lambda i: (rarity(sentences[i]), -i))
            chosen.append(sentences[best])
        return truncate_to_tokens(' '.join(chosen), max_tokens)

    def complete(self, prompt: str) -> str:
        paths, query = parse_prompt(prompt)
        lines = [f"> {' '.join(query.split())}", f"from {', '.join(paths) if paths else 'none'}"]
        lines.extend(format_fact(key, value) for key, value in extract_facts(query))
        return '\n'.join(lines) + '\n'


class ExternalCommandProvider(ModelProvider):
    """
    Proveedor externo: ``<command> summarize|complete`` con el texto por stdin.

    Para summarize el presupuesto va como argumento adicional.
    """

    def __init__(self, command: str, timeout: float = None, model_version: str = None):
        if not command.strip():
            raise ConfigError("Proveedor externo sin comando")
        self.command = command
        self.argv = shlex.split(command)
        self.timeout = timeout or ProviderConfig.EXTERNAL_TIMEOUT
        self.provider_id = f"external:{command}"
        self.model_version = model_version or ProviderConfig.MODEL_VERSION

    def _run(self, args: List[str], text: str) -> str:
        try:
            completed = subprocess.run(
                self.argv + args, input=text.encode('utf-8'),
                capture_output=True, timeout=self.timeout,
            )
        except (OSError, subprocess.TimeoutExpired) as e:
            raise ToolFailure(f"Proveedor externo '{self.command}': {e}") from e
        if completed.returncode != 0:
            stderr = completed.stderr.decode('utf-8', errors='replace').strip()
            logger.warning(f"Proveedor externo terminó con código {completed.returncode}: {stderr}")
            raise ToolFailure(f"Proveedor externo '{self.command}' salió con {completed.returncode}")
        return completed.stdout.decode('utf-8', errors='replace')

    def summarize(self, text: str, max_tokens: int) -> str:
        return truncate_to_tokens(self._run(['summarize', str(max_tokens)], text).strip(), max_tokens)

    def complete(self, prompt: str) -> str:
        return self._run(['complete'], prompt)


def create_provider(spec: Optional[str] = None) -> ModelProvider:
    """
    Proveedor a partir de "stub" o "external:<command>" (por defecto AFS_PROVIDER).

    Raises:
        ConfigError: valor no reconocido
    """
    spec = (spec or ProviderConfig.PROVIDER).strip()
    if spec == 'stub':
        return StubProvider()
    if spec.startswith('external:'):
        return ExternalCommandProvider(spec[len('external:'):])
    raise ConfigError(f"Proveedor desconocido: '{spec}' (válidos: stub, external:<command>)")


__all__ = [
    'ModelProvider',
    'StubProvider',
    'ExternalCommandProvider',
    'create_provider',
    'build_prompt',
    'parse_prompt',
    'split_sentences',
    'truncate_to_tokens',
]
