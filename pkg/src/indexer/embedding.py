"""
Embeddings por hashing de features con signo (dimensión 256).

Cada token se hashea con blake2b de 64 bits usando la semilla publicada
como clave; bucket = hash mod 256, signo = bit 63. Se acumula ±1 por
token y se normaliza L2. Texto sin tokens → vector cero.
"""

import hashlib
from typing import Union

import numpy as np

from src.common.config import IndexConfig
from src.indexer.text import tokenize

DIMENSION = IndexConfig.DIMENSION
_SEED = IndexConfig.HASH_SEED.encode('utf-8')


def token_hash(token: str) -> int:
    """Hash estable de 64 bits del token."""
    digest = hashlib.blake2b(token.encode('utf-8'), digest_size=8, key=_SEED).digest()
    return int.from_bytes(digest, 'big')


def bucket_counts(text: Union[bytes, str]) -> np.ndarray:
    """Acumulación con signo por bucket, sin normalizar."""
    counts = np.zeros(DIMENSION, dtype=np.float64)
    for token in tokenize(text):
        h = token_hash(token)
        counts[h % DIMENSION] += -1.0 if (h >> 63) & 1 else 1.0
    return counts


def embed(text: Union[bytes, str]) -> np.ndarray:
    """EmbeddingVector de norma 1 (o cero para texto vacío)."""
    counts = bucket_counts(text)
    norm = np.linalg.norm(counts)
    if norm == 0.0:
        return counts
    return counts / norm


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Coseno en [-1, 1]; 0 si alguno es el vector cero."""
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


__all__ = ['DIMENSION', 'token_hash', 'bucket_counts', 'embed', 'cosine']
