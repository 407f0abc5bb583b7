"""
Fixtures compartidas: reloj lógico, almacenes temporales sin fsync y
runtime completo con el proveedor stub.
"""

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.afs.core import AgenticFileSystem
from src.backends import FunctionBackend, FunctionSpec, StoreBackend, StoreBackendConfig
from src.afs.nodes import FunctionDescriptor
from src.cli.runtime import AfsRuntime
from src.cli.settings import Settings
from src.common.clock import LogicalClock
from src.provenance.log import ProvenanceLog

START_MS = 1_700_000_000_000
STEP_MS = 1000
LOGICAL_CLOCK = f"logical:{START_MS}:{STEP_MS}"
MOCK_TOOL = Path(__file__).resolve().parent.parent / 'tools' / 'mock_tool.py'


@pytest.fixture
def clock():
    return LogicalClock(START_MS, STEP_MS)


@pytest.fixture
def log(tmp_path):
    return ProvenanceLog(tmp_path / 'provenance', fsync=False)


@pytest.fixture
def afs(log, clock):
    fs = AgenticFileSystem(log, clock)
    yield fs
    fs.release()


@pytest.fixture
def store_backend(tmp_path):
    return StoreBackend(StoreBackendConfig(f"file:{tmp_path / 'store'}", fsync=False))


def echo_functions():
    return [
        FunctionSpec(
            'echo',
            FunctionDescriptor('echo', 'Devuelve el texto', {'text': 'string'}, {'text': 'string'}),
            lambda args: {'text': args['text']},
        ),
        FunctionSpec(
            'add',
            FunctionDescriptor('add', 'Suma dos enteros', {'a': 'integer', 'b': 'integer'}, {'sum': 'integer'}),
            lambda args: {'sum': args['a'] + args['b']},
        ),
    ]


@pytest.fixture
def function_backend():
    return FunctionBackend(echo_functions())


@pytest.fixture
def settings(tmp_path):
    return Settings(
        store_url=f"file:{tmp_path / 'afs-store'}",
        provider='stub',
        max_tokens=2048,
        reserved_tokens=256,
        clock=LOGICAL_CLOCK,
        fsync=False,
    )


@pytest.fixture
def runtime(settings):
    rt = AfsRuntime.open(settings)
    yield rt
    rt.close()


@pytest.fixture
def repository(runtime):
    return runtime.repository
