"""
Límite de tiempo para ``exec`` sobre funciones montadas.

La función corre en un thread daemon; el llamante espera con ``join``. Un thread
que vence el plazo queda huérfano (Python no permite matarlo) y su resultado se
descarta.
"""

import threading
from typing import Any, Callable, Dict


class TimeoutException(Exception):
    """La función montada no respondió dentro del plazo."""


def run_with_timeout(func: Callable[..., Any], seconds: float, *args, **kwargs) -> Any:
    """
    Devuelve ``func(*args, **kwargs)`` o lanza TimeoutException tras ``seconds``.

    Sin límite si ``seconds`` es None o <= 0. Las excepciones de ``func`` se
    re-lanzan en el thread llamante.
    """
    if not seconds or seconds <= 0:
        return func(*args, **kwargs)

    outcome: Dict[str, Any] = {}

    def call() -> None:
        try:
            outcome['value'] = func(*args, **kwargs)
        except BaseException as e:
            outcome['error'] = e

    worker = threading.Thread(target=call, name=f"afs-exec-{getattr(func, '__name__', 'fn')}", daemon=True)
    worker.start()
    worker.join(seconds)

    if worker.is_alive():
        raise TimeoutException(f"sin respuesta tras {seconds}s")
    if 'error' in outcome:
        raise outcome['error']
    return outcome.get('value')


__all__ = ['TimeoutException', 'run_with_timeout']
