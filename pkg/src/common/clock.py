"""
Relojes del runtime.

Todos los timestamps (metadatos de nodos, historial, eventos, manifiestos)
se toman del reloj del runtime. Con ``LogicalClock`` una sesión con el
proveedor stub es reproducible bit a bit.
"""

import threading
import time

from src.common.config import ClockConfig
from src.common.errors import ConfigError


class Clock:
    """Fuente de tiempo UTC en milisegundos."""

    def now_ms(self) -> int:
        raise NotImplementedError


class SystemClock(Clock):
    """Reloj de pared."""

    def now_ms(self) -> int:
        return int(time.time() * 1000)


class LogicalClock(Clock):
    """Reloj determinista: cada lectura avanza ``step_ms``."""

    def __init__(self, start_ms: int = 0, step_ms: int = 1):
        self._next = start_ms
        self.step_ms = step_ms
        self._lock = threading.Lock()

    def now_ms(self) -> int:
        with self._lock:
            value = self._next
            self._next += self.step_ms
            return value


def create_clock(spec: str = None) -> Clock:
    """
    Crea un reloj a partir de su especificación textual.

    Args:
        spec: 'system' o 'logical:<inicio_ms>[:<paso_ms>]' (default: ClockConfig.MODE)

    Raises:
        ConfigError: Si la especificación no es válida
    """
    spec = (spec or ClockConfig.MODE).strip()
    if spec == 'system':
        return SystemClock()
    if spec.startswith('logical'):
        parts = spec.split(':')[1:]
        try:
            start = int(parts[0]) if parts and parts[0] else 0
            step = int(parts[1]) if len(parts) > 1 else 1
        except ValueError:
            raise ConfigError(f"Reloj lógico inválido: '{spec}'")
        return LogicalClock(start, step)
    raise ConfigError(f"Reloj desconocido: '{spec}'. Válidos: 'system', 'logical:<ms>'")


__all__ = ['Clock', 'SystemClock', 'LogicalClock', 'create_clock']
