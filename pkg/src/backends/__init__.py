"""
Backends montables del espacio de nombres AFS.
"""

from src.backends.base import Backend, RelPath
from src.backends.dir_backend import DirBackend, DirBackendConfig
from src.backends.function_backend import FunctionBackend, FunctionSpec
from src.backends.store_backend import StoreBackend, StoreBackendConfig
from src.backends.tool_process import ToolProcessBackend, ToolProcessConfig

__all__ = [
    'Backend',
    'RelPath',
    'DirBackend',
    'DirBackendConfig',
    'FunctionBackend',
    'FunctionSpec',
    'StoreBackend',
    'StoreBackendConfig',
    'ToolProcessBackend',
    'ToolProcessConfig',
]
