"""
Digests y serialización canónica compartidos por provenance, almacén e indexador.
"""

import hashlib
import json
from typing import Any

ZERO_HASH = '0' * 64


def sha256_hex(data: bytes) -> str:
    """SHA-256 en hexadecimal (64 caracteres)."""
    return hashlib.sha256(data).hexdigest()


def canonical_json(value: Any) -> str:
    """JSON de una sola línea, claves ordenadas, sin espacios."""
    return json.dumps(value, sort_keys=True, separators=(',', ':'), ensure_ascii=True)


def canonical_bytes(value: Any) -> bytes:
    return canonical_json(value).encode('utf-8')


def digest_of(value: Any) -> str:
    """Digest del valor: bytes tal cual, el resto vía JSON canónico."""
    if isinstance(value, (bytes, bytearray)):
        return sha256_hex(bytes(value))
    return sha256_hex(canonical_bytes(value))


__all__ = ['ZERO_HASH', 'sha256_hex', 'canonical_json', 'canonical_bytes', 'digest_of']
