"""
Tests para los backends montables: almacén, directorio, funciones,
historial y proceso de herramienta.
"""

import json
import os
import sys

import numpy as np
import pytest

from src.afs.nodes import NodeKind
from src.backends import (
    DirBackend, DirBackendConfig, FunctionBackend, StoreBackend, StoreBackendConfig,
    ToolProcessBackend, ToolProcessConfig,
)
from src.backends.tool_process import decode_message, encode_message
from src.common.errors import (
    AccessDenied, DuplicateName, HandshakeTimeout, HostRootMissing, ImmutableNode, IsDirectory,
    NotExecutable, NotFound, ProtocolViolation, ReadOnlyMount, StoreCorrupt, ToolFailure,
)
from src.repository.history import HistoryBackend
from src.repository.models import format_record_id
from tests.conftest import MOCK_TOOL, START_MS, echo_functions


@pytest.fixture(params=['store', 'dir'])
def writable(request, tmp_path):
    """Backends escribibles sobre los que se comprueba el mismo contrato."""
    if request.param == 'store':
        return StoreBackend(StoreBackendConfig(f"file:{tmp_path / 'store'}", fsync=False))
    host = tmp_path / 'host'
    host.mkdir()
    return DirBackend(DirBackendConfig(str(host)))


class TestWritableContract:
    """Tests comunes a los backends escribibles."""

    def test_write_read(self, writable):
        meta = writable.write(('notes', 'a.txt'), b'hola', {}, START_MS)
        assert meta.kind == NodeKind.DATA
        assert meta.revision_id == 1
        assert writable.read(('notes', 'a.txt')) == b'hola'
        assert writable.children(('notes',)) == ['a.txt']

    def test_revision_bumps(self, writable):
        writable.write(('a',), b'1', {}, START_MS)
        meta = writable.write(('a',), b'22', {}, START_MS + 1)
        assert meta.revision_id == 2
        assert writable.stat(('a',)).size == 2

    def test_set_attr(self, writable):
        writable.write(('a',), b'1', {}, START_MS)
        meta = writable.set_attr(('a',), 'origin', 'human', START_MS + 1)
        assert meta.user_attrs['origin'] == 'human'

    def test_missing(self, writable):
        with pytest.raises(NotFound):
            writable.stat(('nope',))
        with pytest.raises(NotFound):
            writable.read(('nope',))

    def test_read_directory(self, writable):
        writable.mkdir(('dir',), START_MS)
        assert writable.stat(('dir',)).kind == NodeKind.DIRECTORY
        with pytest.raises(IsDirectory):
            writable.read(('dir',))

    def test_not_executable(self, writable):
        writable.write(('a',), b'1', {}, START_MS)
        with pytest.raises(NotExecutable):
            writable.execute(('a',), {})


class TestStoreBackend:
    """Tests para la persistencia del almacén."""

    def _open(self, tmp_path):
        return StoreBackend(StoreBackendConfig(f"file:{tmp_path / 'store'}", fsync=False))

    def test_survives_reopen(self, tmp_path):
        store = self._open(tmp_path)
        store.write(('memory', 'e00000001'), b'preference: green tea', {'confidence': '0.9'}, START_MS)
        store.write(('memory', 'e00000001'), b'preference: black tea', {}, START_MS + 1)

        reopened = self._open(tmp_path)
        meta = reopened.stat(('memory', 'e00000001'))
        assert reopened.read(('memory', 'e00000001')) == b'preference: black tea'
        assert meta.revision_id == 2
        assert meta.user_attrs['confidence'] == '0.9'
        assert reopened.snapshot() == store.snapshot()

    def test_tampered_record(self, tmp_path):
        """Test: un registro alterado hace fallar la apertura con StoreCorrupt."""
        store = self._open(tmp_path)
        store.write(('a',), b'uno', {}, START_MS)
        meta_path = tmp_path / 'store' / 'meta.ndjson'
        meta_path.write_bytes(meta_path.read_bytes().replace(b'"/a"', b'"/b"'))
        with pytest.raises(StoreCorrupt):
            self._open(tmp_path)

    def test_truncated_record(self, tmp_path):
        store = self._open(tmp_path)
        store.write(('a',), b'uno', {}, START_MS)
        with open(tmp_path / 'store' / 'meta.ndjson', 'ab') as f:
            f.write(b'{"path": "/b"')
        with pytest.raises(StoreCorrupt):
            self._open(tmp_path)

    def test_missing_content(self, tmp_path):
        store = self._open(tmp_path)
        meta = store.write(('a',), b'uno', {}, START_MS)
        os.remove(store._content_path(meta.content_hash))
        with pytest.raises(StoreCorrupt):
            self._open(tmp_path)

    def test_describe(self, tmp_path):
        store = self._open(tmp_path)
        assert store.describe()['type'] == 'store'


class TestDirBackend:
    """Tests para el sandbox del backend de directorio."""

    def test_missing_root(self, tmp_path):
        with pytest.raises(HostRootMissing):
            DirBackend(DirBackendConfig(str(tmp_path / 'missing')))

    def test_projects_host_files(self, tmp_path):
        (tmp_path / 'docs').mkdir()
        (tmp_path / 'docs' / 'readme.md').write_text('hola')
        backend = DirBackend(DirBackendConfig(str(tmp_path)))
        assert backend.children(()) == ['docs']
        assert backend.read(('docs', 'readme.md')) == b'hola'

    def test_symlink_escape(self, tmp_path):
        """Test: un enlace hacia fuera de la raíz no se lista ni se lee."""
        outside = tmp_path / 'outside.txt'
        outside.write_text('secreto')
        host = tmp_path / 'host'
        host.mkdir()
        (host / 'inside.txt').write_text('visible')
        os.symlink(outside, host / 'leak')
        backend = DirBackend(DirBackendConfig(str(host)))
        assert backend.children(()) == ['inside.txt']
        with pytest.raises(AccessDenied):
            backend.read(('leak',))

    @pytest.fixture
    def linked_out(self, tmp_path):
        """Raíz con host/link apuntando a un directorio externo."""
        outside = tmp_path / 'outside'
        outside.mkdir()
        host = tmp_path / 'host'
        host.mkdir()
        os.symlink(outside, host / 'link', target_is_directory=True)
        return host, outside

    @pytest.mark.parametrize('follow', [False, True])
    def test_write_through_linked_ancestor(self, linked_out, follow):
        """Test: escribir bajo un ancestro enlazado fuera de la raíz no crea nada fuera."""
        host, outside = linked_out
        backend = DirBackend(DirBackendConfig(str(host), follow_symlinks=follow))
        with pytest.raises(AccessDenied):
            backend.write(('link', 'new', 'f.txt'), b'fuera', {}, START_MS)
        assert not (outside / 'new').exists()

    @pytest.mark.parametrize('follow', [False, True])
    def test_mkdir_through_linked_ancestor(self, linked_out, follow):
        host, outside = linked_out
        backend = DirBackend(DirBackendConfig(str(host), follow_symlinks=follow))
        with pytest.raises(AccessDenied):
            backend.mkdir(('link', 'made'), START_MS)
        assert not (outside / 'made').exists()

    def test_nested_write_inside_root(self, tmp_path):
        backend = DirBackend(DirBackendConfig(str(tmp_path)))
        backend.write(('a', 'b', 'c.txt'), b'dentro', {}, START_MS)
        backend.mkdir(('a', 'd'), START_MS)
        assert (tmp_path / 'a' / 'b' / 'c.txt').read_bytes() == b'dentro'
        assert (tmp_path / 'a' / 'd').is_dir()

    def test_symlink_followed_inside_root(self, tmp_path):
        host = tmp_path / 'host'
        host.mkdir()
        (host / 'target.txt').write_text('dentro')
        os.symlink(host / 'target.txt', host / 'alias')
        backend = DirBackend(DirBackendConfig(str(host), follow_symlinks=True))
        assert backend.read(('alias',)) == b'dentro'


class TestFunctionBackend:
    """Tests para el backend de funciones en proceso."""

    def test_lists_and_executes(self, function_backend):
        assert function_backend.children(()) == ['add', 'echo']
        assert function_backend.stat(('add',)).kind == NodeKind.EXECUTABLE
        assert function_backend.execute(('add',), {'a': 1, 'b': 2}) == {'sum': 3}

    def test_duplicate_name(self):
        specs = echo_functions()
        with pytest.raises(DuplicateName):
            FunctionBackend(specs + specs[:1])

    def test_read_only(self, function_backend):
        with pytest.raises(ReadOnlyMount):
            function_backend.write(('echo',), b'x', {}, START_MS)


class TestHistoryBackend:
    """Tests para el historial encadenado."""

    def _append(self, history, n):
        for i in range(n):
            history.append('user', 'bot', 's1', 'stub-1', f'turno {i}'.encode(), START_MS + i)

    def test_chain_verifies(self, tmp_path):
        history = HistoryBackend(tmp_path / 'history', fsync=False)
        self._append(history, 3)
        report = history.verify_chain()
        assert report.ok
        assert report.checked == 3
        assert history.ids() == ['0000000001', '0000000002', '0000000003']
        assert history.get('0000000002').prev_hash == history.get('0000000001').self_hash

    def test_tampered_record_detected(self, tmp_path):
        """Test: alterar un registro señala exactamente ese registro."""
        history = HistoryBackend(tmp_path / 'history', fsync=False)
        self._append(history, 3)
        target = tmp_path / 'history' / 'records' / '0000000002.json'
        target.write_bytes(target.read_bytes().replace(b'"user"', b'"tool"'))
        report = history.verify_chain()
        assert not report.ok
        assert report.failed_record_id == '0000000002'

    def test_generic_write_rejected(self, tmp_path):
        history = HistoryBackend(tmp_path / 'history', fsync=False)
        with pytest.raises(ImmutableNode):
            history.write(('0000000001',), b'x', {}, START_MS)
        with pytest.raises(ImmutableNode):
            history.set_attr(('0000000001',), 'k', 'v', START_MS)

    def test_compaction_is_lossless(self, tmp_path):
        history = HistoryBackend(tmp_path / 'history', fsync=False)
        self._append(history, 5)
        before = {r: history._raw(r) for r in history.ids()}
        blocks = history.compact(2)
        assert blocks == ['0000000001-0000000002.zlib', '0000000003-0000000004.zlib']
        assert history.uncompacted() == ['0000000005']

        reopened = HistoryBackend(tmp_path / 'history', fsync=False)
        assert {r: reopened._raw(r) for r in reopened.ids()} == before
        assert reopened.verify_chain().ok
        assert reopened.read(('0000000003',)) == b'turno 2'

    @pytest.mark.parametrize('victim', ['0000000001', '0000000003', '0000000004'])
    def test_tampered_compacted_record_detected(self, tmp_path, victim):
        """Test: un byte alterado dentro de un bloque señala el registro exacto, no el bloque."""
        history = HistoryBackend(tmp_path / 'history', fsync=False)
        self._append(history, 4)
        [block] = history.compact(4)
        index = [json.loads(line) for line in (tmp_path / 'history' / 'index.ndjson').read_text().splitlines()]
        located = next(e for e in index if e['recordId'] == victim)

        path = tmp_path / 'history' / 'blocks' / block
        data = bytearray(path.read_bytes())
        data[located['offset'] + located['length'] // 2] ^= 0xFF
        path.write_bytes(bytes(data))

        reopened = HistoryBackend(tmp_path / 'history', fsync=False)
        report = reopened.verify_chain()
        assert not report.ok
        assert report.failed_record_id == victim
        assert report.checked == int(victim) - 1
        for record_id in reopened.ids():
            if record_id != victim:
                assert reopened.get(record_id).record_id == record_id
        with pytest.raises(StoreCorrupt):
            reopened.get(victim)

    @pytest.mark.parametrize('compacted', [False, True])
    def test_single_flip_in_long_chain(self, tmp_path, compacted):
        """Test: un byte alterado en 1000 registros señala exactamente el registro alterado."""
        rng = np.random.default_rng(51 + compacted)
        history = HistoryBackend(tmp_path / 'history', fsync=False)
        for i in range(1000):
            history.append('user', 'bot', 's1', 'stub-1', rng.bytes(int(rng.integers(1, 40))), START_MS + i)
        assert history.verify_chain().checked == 1000
        if compacted:
            history.compact(250)
        victim = format_record_id(int(rng.integers(1, 1001)))

        if compacted:
            index = [json.loads(line) for line in (tmp_path / 'history' / 'index.ndjson').read_text().splitlines()]
            located = next(e for e in index if e['recordId'] == victim)
            path = tmp_path / 'history' / 'blocks' / located['block']
            position = located['offset'] + int(rng.integers(located['length']))
        else:
            path = tmp_path / 'history' / 'records' / f"{victim}.json"
            # sin tocar el salto de línea final
            position = int(rng.integers(path.stat().st_size - 1))
        data = bytearray(path.read_bytes())
        data[position] ^= 0x01
        path.write_bytes(bytes(data))

        report = HistoryBackend(tmp_path / 'history', fsync=False).verify_chain()
        assert not report.ok
        assert report.failed_record_id == victim
        assert report.checked == int(victim) - 1

    def test_ten_thousand_records_read_back_after_compaction(self, tmp_path):
        """Test: compactar 10 000 registros en bloques de 1000 no pierde ni un byte."""
        history = HistoryBackend(tmp_path / 'history', fsync=False)
        for i in range(10_000):
            history.append('user', 'bot', 's1', 'stub-1', f'turno {i}'.encode(), START_MS + i)
        before = {r: history._raw(r) for r in history.ids()}
        blocks = history.compact(1000)
        assert len(blocks) == 10
        assert history.uncompacted() == []

        reopened = HistoryBackend(tmp_path / 'history', fsync=False)
        assert len(reopened) == 10_000
        assert all(reopened._raw(r) == raw for r, raw in before.items())
        assert reopened.verify_chain().checked == 10_000
        assert reopened.read(('0000007777',)) == b'turno 7776'

    def test_append_after_reopen(self, tmp_path):
        history = HistoryBackend(tmp_path / 'history', fsync=False)
        self._append(history, 2)
        reopened = HistoryBackend(tmp_path / 'history', fsync=False)
        record = reopened.append('agent', 'bot', 's1', 'stub-1', b'tres', START_MS + 10)
        assert record.record_id == '0000000003'
        assert reopened.verify_chain().ok


class TestWireMessages:
    """Tests para la codificación de mensajes del protocolo."""

    def test_single_line(self):
        line = encode_message({'id': 1, 'type': 'invoke', 'name': 'x', 'args': {'text': 'a\nb'}})
        assert line.count(b'\n') == 1
        assert decode_message(line.rstrip(b'\n'))['args'] == {'text': 'a\nb'}

    @pytest.mark.parametrize('line', [b'not json', b'[1, 2]', b'{"type": "invoke"}', b'{"id": 1, "type": "ping"}'])
    def test_malformed(self, line):
        with pytest.raises(ProtocolViolation):
            decode_message(line)


class TestToolProcessBackend:
    """Tests para el backend de proceso de herramienta (mock por stdio)."""

    def _config(self, *flags, **kwargs):
        return ToolProcessConfig(sys.executable, [str(MOCK_TOOL), *flags], **kwargs)

    def test_handshake_and_invoke(self):
        backend = ToolProcessBackend(self._config())
        try:
            assert backend.children(()) == ['list_issues', 'search_repositories']
            result = backend.execute(('search_repositories',), {'query': 'afs'})
            assert result['total_count'] == 2
            issues = backend.execute(('list_issues',), {'owner': 'afs-project', 'repo': 'afs', 'state': 'open'})
            assert [i['number'] for i in issues['issues']] == [1, 3]
            assert backend.usable
        finally:
            backend.close()

    def test_malformed_handshake(self):
        with pytest.raises(ProtocolViolation):
            ToolProcessBackend(self._config('--malformed'))

    def test_handshake_timeout(self):
        config = ToolProcessConfig(
            sys.executable, ['-c', 'import time; time.sleep(30)'], handshake_timeout_ms=200,
        )
        with pytest.raises(HandshakeTimeout):
            ToolProcessBackend(config)

    def test_crash_marks_mount_unusable(self):
        backend = ToolProcessBackend(self._config('--crash-after', '1'))
        try:
            backend.execute(('search_repositories',), {'query': 'afs'})
            with pytest.raises(ToolFailure):
                backend.execute(('search_repositories',), {'query': 'afs'})
            assert not backend.usable
            with pytest.raises(ToolFailure):
                backend.execute(('list_issues',), {'owner': 'a', 'repo': 'b'})
        finally:
            backend.close()

    def test_tool_error_reply(self):
        backend = ToolProcessBackend(self._config())
        try:
            with pytest.raises(ToolFailure):
                backend.execute(('list_issues',), {'owner': 'a'})
            assert backend.usable
        finally:
            backend.close()
