"""
Extracción de hechos clave-valor.

Reconoce líneas "clave: valor" / "clave = valor" y enunciados en primera
persona ("my <clave> is <valor>", "call me <valor>", "i live in <valor>",
"i prefer <valor>"). Las claves se normalizan a minúsculas con '_'.
"""

import re
from typing import List, Tuple

Fact = Tuple[str, str]

_KV_RE = re.compile(r'^\s*([A-Za-z][A-Za-z0-9 _-]{0,40}?)\s*[:=]\s*(\S.*?)\s*$')
_VALUE = r'(.+?)(?=\s+(?:and|but|so)\s+|[.!?,;]|$)'
_STATEMENTS = [
    (re.compile(r'\bmy\s+([a-z][a-z ]{0,30}?)\s+is\s+' + _VALUE, re.IGNORECASE), None),
    (re.compile(r'\bcall\s+me\s+' + _VALUE, re.IGNORECASE), 'name'),
    (re.compile(r'\bi\s+live\s+in\s+' + _VALUE, re.IGNORECASE), 'location'),
    (re.compile(r'\bi\s+prefer\s+' + _VALUE, re.IGNORECASE), 'preference'),
]


def normalize_key(key: str) -> str:
    return re.sub(r'[\s-]+', '_', key.strip().lower())


def parse_fact_line(line: str) -> List[Fact]:
    """Hechos de una sola línea (forma clave-valor o enunciado). Las citas ('>') no afirman nada."""
    if line.lstrip().startswith('>'):
        return []
    match = _KV_RE.match(line)
    if match:
        return [(normalize_key(match.group(1)), match.group(2).strip())]
    facts = []
    for pattern, fixed_key in _STATEMENTS:
        for found in pattern.finditer(line):
            if fixed_key is None:
                facts.append((normalize_key(found.group(1)), found.group(2).strip()))
            else:
                facts.append((fixed_key, found.group(1).strip()))
    return [(k, v) for k, v in facts if k and v]


def extract_facts(text: str) -> List[Fact]:
    """Hechos únicos en orden de aparición."""
    seen = set()
    facts = []
    for line in text.splitlines():
        for fact in parse_fact_line(line):
            if fact not in seen:
                seen.add(fact)
                facts.append(fact)
    return facts


def format_fact(key: str, value: str) -> str:
    return f"{key}: {value}"


def fact_map(text: str) -> dict:
    """clave → valor (el último gana)."""
    return {k: v for k, v in extract_facts(text)}


__all__ = ['Fact', 'normalize_key', 'parse_fact_line', 'extract_facts', 'format_fact', 'fact_map']
