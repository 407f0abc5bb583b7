"""
Tokenización determinista y palabras vacías.
"""

import re
from typing import FrozenSet, List, Set, Union

# Alfanuméricos Unicode: \w sin guion bajo
TOKEN_RE = re.compile(r'[^\W_]+')

# Lista fija de palabras vacías (inglés) usada por el Evaluator
STOPWORDS: FrozenSet[str] = frozenset("""
a about above after again against all am an and any are as at be because been
before being below between both but by can could did do does doing down during
each few for from further had has have having he her here hers herself him
himself his how i if in into is it its itself just me more most my myself no nor
not now of off on once only or other our ours ourselves out over own same she
should so some such than that the their theirs them themselves then there these
they this those through to too under until up very was we were what when where
which while who whom why will with would you your yours yourself yourselves
""".split())


def _as_text(text: Union[bytes, str]) -> str:
    if isinstance(text, (bytes, bytearray)):
        return bytes(text).decode('utf-8', errors='replace')
    return text


def tokenize(text: Union[bytes, str]) -> List[str]:
    """
    Minúsculas y corte en cualquier carácter no alfanumérico.

    >>> tokenize("Hello, World!")
    ['hello', 'world']
    """
    return TOKEN_RE.findall(_as_text(text).lower())


def content_tokens(text: Union[bytes, str]) -> Set[str]:
    """Conjunto de tokens sin palabras vacías."""
    return {t for t in tokenize(text) if t not in STOPWORDS}


__all__ = ['TOKEN_RE', 'STOPWORDS', 'tokenize', 'content_tokens']
