"""
Tests para el dispatcher del espacio de nombres (AgenticFileSystem).
"""

import sys
import time

import numpy as np
import pytest

from src.afs.nodes import FunctionDescriptor, NodeKind
from src.afs.paths import AfsPath
from src.backends import (
    DirBackend, DirBackendConfig, FunctionBackend, FunctionSpec, StoreBackend, StoreBackendConfig,
    ToolProcessBackend, ToolProcessConfig,
)
from src.common.errors import (
    AccessDenied, BadPattern, DepthExceeded, DuplicateMount, InvalidPath, IsDirectory,
    NotExecutable, NotFound, ReadOnlyMount, SchemaViolation, ToolFailure, UnknownMount,
)
from src.governance.scopes import Grant
from src.provenance.replay import replay
from tests.conftest import MOCK_TOOL, echo_functions


def _store(tmp_path, name):
    return StoreBackend(StoreBackendConfig(f"file:{tmp_path / name}", fsync=False))


class TestMountTable:
    """Tests para mount/unmount y resolución por prefijo más largo."""

    def test_mount_visible_in_parent_listing(self, afs, store_backend):
        """Test: el montaje aparece al listar su padre virtual."""
        assert afs.mount('/context/history', store_backend) == '/context/history'
        names = [str(p) for p, _ in afs.list('/context', 1)]
        assert names == ['/context/history']

    def test_root_reserved(self, afs, store_backend):
        with pytest.raises(InvalidPath):
            afs.mount('/', store_backend)

    def test_duplicate_mount(self, afs, tmp_path):
        afs.mount('/data', _store(tmp_path, 'a'))
        with pytest.raises(DuplicateMount):
            afs.mount('/data', _store(tmp_path, 'b'))

    def test_unmount_keeps_others(self, afs, tmp_path):
        """Test: mount A, mount B, unmount A → B sigue resolviendo."""
        afs.mount('/a', _store(tmp_path, 'a'))
        afs.mount('/b', _store(tmp_path, 'b'))
        afs.write('/b/note', b'hola')
        afs.unmount('/a')
        assert afs.read('/b/note')[0] == b'hola'
        with pytest.raises(NotFound):
            afs.stat('/a')
        with pytest.raises(UnknownMount):
            afs.unmount('/a')

    def test_longest_prefix_wins(self, afs, tmp_path):
        """Test: un montaje anidado tapa al externo en su subárbol."""
        afs.mount('/context', _store(tmp_path, 'outer'))
        afs.mount('/context/tools', FunctionBackend(echo_functions()))
        meta = afs.stat('/context/tools/echo')
        assert meta.kind == NodeKind.EXECUTABLE
        afs.write('/context/notes', b'x')
        paths = [str(p) for p, _ in afs.list('/context', 1)]
        assert paths == ['/context/notes', '/context/tools']

    def test_unknown_path(self, afs):
        with pytest.raises(NotFound):
            afs.stat('/nowhere')


class TestReadWrite:
    """Tests para read/write/stat/setAttr y revisiones."""

    def test_revisions_increment_by_one(self, afs, store_backend):
        afs.mount('/data', store_backend)
        revisions = [afs.write('/data/doc', f'v{i}'.encode()).revision_id for i in range(1, 4)]
        assert revisions == [1, 2, 3]
        content, meta = afs.read('/data/doc')
        assert content == b'v3'
        assert meta.size == 2

    def test_previous_revisions_recoverable(self, afs, store_backend):
        """Test: getRevision(p, k) coincide con una copia sombra del test."""
        afs.mount('/data', store_backend)
        shadow = {}
        for i in range(1, 6):
            content = f'contenido {i}'.encode()
            meta = afs.write('/data/doc', content)
            shadow[meta.revision_id] = content
        for revision, content in shadow.items():
            assert afs.log.get_revision('/data/doc', revision) == content

    def test_set_attr_bumps_revision(self, afs, store_backend):
        afs.mount('/data', store_backend)
        afs.write('/data/doc', b'x', {'color': 'red'})
        meta = afs.set_attr('/data/doc', 'color', 'blue')
        assert meta.revision_id == 2
        assert meta.user_attrs['color'] == 'blue'

    def test_read_directory(self, afs, store_backend):
        afs.mount('/data', store_backend)
        afs.write('/data/dir/doc', b'x')
        with pytest.raises(IsDirectory):
            afs.read('/data/dir')
        with pytest.raises(IsDirectory):
            afs.read('/')

    def test_read_only_mount(self, afs, store_backend):
        afs.mount('/data', store_backend, read_only=True)
        with pytest.raises(ReadOnlyMount):
            afs.write('/data/doc', b'x')

    def test_write_outside_mounts(self, afs):
        with pytest.raises(NotFound):
            afs.write('/nowhere/doc', b'x')


class TestList:
    """Tests para list: orden, profundidad y archivados."""

    @pytest.fixture
    def tree(self, afs, store_backend):
        afs.mount('/data', store_backend)
        for path in ('/data/b/2', '/data/a/1', '/data/a/deep/3', '/data/c'):
            afs.write(path, path.encode())
        return afs

    def test_lexicographic_order(self, tree):
        paths = [str(p) for p, _ in tree.list('/data', 1)]
        assert paths == ['/data/a', '/data/b', '/data/c']

    def test_depth_matches_filtered_walk(self, tree):
        """Test: list(tree, 2) = recorrido completo filtrado a profundidad ≤ 2."""
        full = [str(p) for p, _ in tree.list('/data', 16)]
        expected = [p for p in full if AfsPath.parse(p).depth - 1 <= 2]
        assert [str(p) for p, _ in tree.list('/data', 2)] == expected

    def test_depth_out_of_range(self, tree):
        with pytest.raises(DepthExceeded):
            tree.list('/data', 0)
        with pytest.raises(DepthExceeded):
            tree.list('/data', 17)

    def test_archived_hidden(self, tree):
        tree.set_attr('/data/c', 'archived', 'true')
        assert '/data/c' not in [str(p) for p, _ in tree.list('/data', 1)]
        assert '/data/c' in [str(p) for p, _ in tree.list('/data', 1, include_archived=True)]


class TestSearch:
    """Tests para search."""

    @pytest.fixture
    def docs(self, afs, store_backend):
        afs.mount('/data', store_backend)
        afs.write('/data/one', b'green tea\nblack tea\ncoffee\n')
        afs.write('/data/two', b'green apple\n')
        afs.write('/data/three', b'nothing here\n')
        return afs

    def test_substring_matches_brute_force(self, docs):
        """Test: score = líneas coincidentes; orden score desc, ruta asc."""
        hits = docs.search('/data', 'tea')
        assert [(str(h.path), h.score) for h in hits] == [('/data/one', 2.0)]
        hits = docs.search('/data', 'green')
        assert [str(h.path) for h in hits] == ['/data/one', '/data/two']
        assert hits[0].snippet == 'green tea'

    def test_regex(self, docs):
        hits = docs.search('/data', r'^(coffee|green apple)$', mode='regex')
        assert [str(h.path) for h in hits] == ['/data/one', '/data/two']

    def test_bad_pattern(self, docs):
        with pytest.raises(BadPattern):
            docs.search('/data', '(', mode='regex')
        with pytest.raises(BadPattern):
            docs.search('/data', 'x', mode='fuzzy')

    def test_semantic_ranks_related_first(self, docs):
        hits = docs.search('/data', 'green tea', mode='semantic', limit=2)
        assert str(hits[0].path) == '/data/one'
        assert len(hits) == 2


class TestExec:
    """Tests para exec y validación de esquemas."""

    def test_round_trip(self, afs, function_backend):
        afs.mount('/fn', function_backend)
        result, event_id = afs.exec('/fn/add', {'a': 2, 'b': 3})
        assert result == {'sum': 5}
        assert event_id == afs.log.last_event_id

    def test_schema_violation(self, afs, function_backend):
        afs.mount('/fn', function_backend)
        with pytest.raises(SchemaViolation):
            afs.exec('/fn/add', {'a': 'dos', 'b': 3})
        with pytest.raises(SchemaViolation):
            afs.exec('/fn/add', {'a': 1, 'b': 2, 'c': 3})

    def test_not_executable(self, afs, store_backend):
        afs.mount('/data', store_backend)
        afs.write('/data/doc', b'x')
        with pytest.raises(NotExecutable):
            afs.exec('/data/doc', {})

    def test_timeout_is_tool_failure(self, afs):
        slow = FunctionSpec(
            'slow', FunctionDescriptor('slow', 'Tarda demasiado', {}, {}),
            lambda args: time.sleep(2) or {},
        )
        afs.mount('/fn', FunctionBackend([slow]), exec_timeout_s=0.1)
        with pytest.raises(ToolFailure):
            afs.exec('/fn/slow', {})
        assert afs.log.tail(1)[0].outcome != 'ok'

    def test_read_returns_descriptor(self, afs, function_backend):
        afs.mount('/fn', function_backend)
        content, meta = afs.read('/fn/echo')
        assert b'"name": "echo"' in content
        assert meta.descriptor.name == 'echo'


class TestAccessControl:
    """Tests para el control de acceso por ámbito."""

    def test_denied_write(self, afs, store_backend):
        afs.mount('/data', store_backend)
        afs.define_scope('reader', [Grant.of('/data', ['read', 'list'])])
        afs.write('/data/doc', b'x')
        assert afs.read('/data/doc', scope='reader')[0] == b'x'
        with pytest.raises(AccessDenied):
            afs.write('/data/doc', b'y', scope='reader')

    def test_not_found_before_access(self, afs, store_backend):
        """Test: la resolución se comprueba antes que el acceso."""
        afs.mount('/data', store_backend)
        afs.define_scope('nobody', [])
        with pytest.raises(NotFound):
            afs.read('/data/missing', scope='nobody')

    def test_listing_filters_unauthorized(self, afs, store_backend):
        afs.mount('/data', store_backend)
        afs.write('/data/public/a', b'a')
        afs.write('/data/private/b', b'b')
        afs.define_scope('public', [Grant.of('/data', ['list']), Grant.of('/data/private', ['read'])])
        paths = [str(p) for p, _ in afs.list('/data', 1, scope='public')]
        assert paths == ['/data/public']

    def test_acting_as_sets_default_scope(self, afs, store_backend):
        afs.mount('/data', store_backend)
        afs.define_scope('reader', [Grant.of('/data', ['read', 'list'])])
        with afs.acting_as('bot', scope='reader'):
            with pytest.raises(AccessDenied):
                afs.write('/data/doc', b'x')
        assert afs.log.tail(1)[0].actor == 'bot'


class TestTransactionEvents:
    """Tests para el registro de un evento por operación."""

    def test_one_event_per_op(self, afs, store_backend, function_backend):
        afs.mount('/data', store_backend)
        afs.mount('/fn', function_backend)
        before = afs.log.last_event_id
        afs.write('/data/doc', b'x')
        afs.read('/data/doc')
        afs.list('/data', 1)
        afs.stat('/data/doc')
        afs.exec('/fn/echo', {'text': 'hola'})
        afs.search('/data', 'x')
        ops = [e.op_type for e in afs.log.tail(afs.log.last_event_id - before)]
        assert ops == ['write', 'read', 'list', 'stat', 'exec', 'search']

    def test_failed_op_logged_with_error(self, afs):
        with pytest.raises(NotFound):
            afs.read('/missing')
        event = afs.log.tail(1)[0]
        assert event.op_type == 'read'
        assert event.outcome == 'error:NotFound'
        assert event.error_code == 'NotFound'

    def test_nested_ops_fold_into_outer_event(self, afs, store_backend):
        afs.mount('/data', store_backend)
        before = afs.log.last_event_id
        with afs.operation('promote', '/data') as frame:
            afs.write('/data/a', b'1')
            afs.write('/data/b', b'2')
        assert afs.log.last_event_id == before + 1
        assert [e['path'] for e in frame.effects if e['op'] == 'put'] == ['/data/a', '/data/b']

    def test_event_ids_sequential(self, afs, store_backend):
        afs.mount('/data', store_backend)
        for i in range(49):
            afs.write('/data/doc', str(i).encode())
        assert [e.event_id for e in afs.log.events()] == list(range(1, 51))

    def test_replay_matches_live_digest(self, afs, store_backend, function_backend, tmp_path):
        afs.mount('/data', store_backend)
        afs.mount('/fn', function_backend)
        afs.write('/data/a', b'1')
        afs.write('/data/a', b'2')
        afs.set_attr('/data/a', 'k', 'v')
        afs.mount('/other', _store(tmp_path, 'other'))
        afs.write('/other/x', b'x')
        afs.unmount('/other')
        assert replay(afs.log) == afs.state_digest()


class TestRandomizedSequences:
    """Contrato del núcleo sobre secuencias aleatorias en los cuatro tipos de backend."""

    PATHS = ['a', 'b', 'sub/c', 'sub/deep/d']
    WRITABLE_SEQUENCES = 150
    EXEC_SEQUENCES = 100

    # respuestas fijas de tools/mock_tool.py
    SEARCH_TOTALS = {'afs': 2, 'context': 1, 'tools': 1, 'zzz': 0}
    ISSUE_TOTALS = {None: 3, 'open': 2, 'closed': 1, 'all': 3}

    def _backend(self, kind, tmp_path, index):
        if kind == 'store':
            return _store(tmp_path, f"s{index}")
        host = tmp_path / f"h{index}"
        host.mkdir()
        return DirBackend(DirBackendConfig(str(host)))

    @pytest.mark.parametrize('kind,seed', [('store', 11), ('dir', 12)])
    def test_contract_holds(self, afs, tmp_path, kind, seed):
        rng = np.random.default_rng(seed)
        for index in range(self.WRITABLE_SEQUENCES):
            root = f"/data{index}"
            afs.mount(root, self._backend(kind, tmp_path, index))
            revisions = {}
            start = afs.log.last_event_id
            ops = 0
            for _ in range(int(rng.integers(5, 30))):
                path = f"{root}/{self.PATHS[int(rng.integers(len(self.PATHS)))]}"
                action = int(rng.integers(4))
                if action == 0 or path not in revisions:
                    meta = afs.write(path, rng.bytes(int(rng.integers(1, 16))))
                    assert meta.revision_id == revisions.get(path, 0) + 1
                    revisions[path] = meta.revision_id
                elif action == 1:
                    meta = afs.set_attr(path, 'k', str(int(rng.integers(100))))
                    assert meta.revision_id == revisions[path] + 1
                    revisions[path] = meta.revision_id
                elif action == 2:
                    assert afs.read(path)[1].revision_id == revisions[path]
                else:
                    first = [(str(p), m.revision_id) for p, m in afs.list(root, 3)]
                    assert first == [(str(p), m.revision_id) for p, m in afs.list(root, 3)]
                    ops += 1
                ops += 1
            with pytest.raises(InvalidPath):
                afs.read(f"{root}/../escape")
            ops += 1
            assert afs.log.last_event_id - start == ops
            if index % 2:
                afs.unmount(root)
        assert replay(afs.log) == afs.state_digest()

    def _function_call(self, rng):
        if rng.integers(2):
            text = str(int(rng.integers(1000)))
            return 'echo', {'text': text}, {'text': text}
        a, b = int(rng.integers(-50, 50)), int(rng.integers(-50, 50))
        return 'add', {'a': a, 'b': b}, {'sum': a + b}

    def _tool_call(self, rng):
        if rng.integers(2):
            query = list(self.SEARCH_TOTALS)[int(rng.integers(len(self.SEARCH_TOTALS)))]
            args = {'query': query}
            total = self.SEARCH_TOTALS[query]
            if rng.integers(2):
                args['limit'] = int(rng.integers(0, 3))
                total = min(total, args['limit'])
            return 'search_repositories', args, total
        state = list(self.ISSUE_TOTALS)[int(rng.integers(len(self.ISSUE_TOTALS)))]
        args = {'owner': 'afs-project', 'repo': 'afs'}
        if state is not None:
            args['state'] = state
        return 'list_issues', args, self.ISSUE_TOTALS[state]

    def _check_result(self, kind, result, expected):
        if kind == 'function':
            assert result == expected
        elif 'total_count' in result:
            assert result['total_count'] == len(result['items']) == expected
        else:
            assert len(result['issues']) == expected

    @pytest.mark.parametrize('kind,seed', [('function', 21), ('tool', 22)])
    def test_exec_contract_holds(self, afs, kind, seed):
        """Test: montajes de solo ejecución: listado estable, exec validado, escritura rechazada."""
        rng = np.random.default_rng(seed)
        names = ['add', 'echo'] if kind == 'function' else ['list_issues', 'search_repositories']
        call = self._function_call if kind == 'function' else self._tool_call
        shared = None
        if kind == 'tool':
            shared = ToolProcessBackend(ToolProcessConfig(sys.executable, [str(MOCK_TOOL)]))
            afs.mount('/tool', shared)

        for index in range(self.EXEC_SEQUENCES):
            root = '/tool' if shared else f"/fn{index}"
            if not shared:
                afs.mount(root, FunctionBackend(echo_functions()))
            start = afs.log.last_event_id
            ops = 0
            for _ in range(int(rng.integers(3, 12))):
                action = int(rng.integers(6))
                name = names[int(rng.integers(len(names)))]
                if action == 0:
                    listed = [str(p) for p, _ in afs.list(root, 1)]
                    assert listed == [f"{root}/{n}" for n in names]
                elif action == 1:
                    content, meta = afs.read(f"{root}/{name}")
                    assert meta.kind == NodeKind.EXECUTABLE
                    assert f'"name": "{name}"'.encode() in content
                elif action == 2:
                    name, args, expected = call(rng)
                    result, event_id = afs.exec(f"{root}/{name}", args)
                    assert event_id == afs.log.last_event_id
                    self._check_result(kind, result, expected)
                elif action == 3:
                    with pytest.raises(SchemaViolation):
                        afs.exec(f"{root}/{name}", {'unexpected': int(rng.integers(10))})
                elif action == 4:
                    with pytest.raises(ReadOnlyMount):
                        afs.write(f"{root}/new{index}", b'x')
                else:
                    assert afs.stat(f"{root}/{name}").descriptor.name == name
                ops += 1
            assert afs.log.last_event_id - start == ops
            if not shared and index % 2:
                afs.unmount(root)
        assert replay(afs.log) == afs.state_digest()
