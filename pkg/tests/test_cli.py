"""
Tests para la CLI: verbos de shell, códigos de salida y flujo de revisión.
"""

import json
from pathlib import Path

import pytest

from src.cli.main import main
from tests.conftest import LOGICAL_CLOCK

CHATBOT_SCRIPT = Path(__file__).resolve().parent.parent / 'scripts' / 'chatbot.script'


@pytest.fixture
def afs_cli(tmp_path, capsys):
    """Invoca la CLI sobre un almacén temporal y devuelve (código, stdout, stderr)."""
    store = tmp_path / 'cli-store'

    def run(*argv):
        code = main(['--store', f"file:{store}", '--clock', LOGICAL_CLOCK, '--provider', 'stub', '-q', *argv])
        out, err = capsys.readouterr()
        return code, out, err

    return run


class TestShellVerbs:
    """Tests para write/cat/ls/stat/exec."""

    def test_write_and_cat(self, afs_cli):
        code, out, _ = afs_cli('write', '/context/pad/notes/n1', 'hola mundo', '--attr', 'origin=user')
        assert code == 0
        assert out.strip() == '/context/pad/notes/n1@1'

        code, out, _ = afs_cli('cat', '/context/pad/notes/n1')
        assert (code, out) == (0, 'hola mundo')

        code, out, _ = afs_cli('stat', '/context/pad/notes/n1')
        assert 'revisionId: 1' in out.splitlines()
        assert '"origin": "user"' in out

    def test_cat_previous_revision(self, afs_cli):
        afs_cli('write', '/context/pad/notes/n1', 'uno')
        afs_cli('write', '/context/pad/notes/n1', 'dos')
        code, out, _ = afs_cli('cat', '/context/pad/notes/n1', '--rev', '1')
        assert (code, out) == (0, 'uno')

    def test_ls(self, afs_cli):
        afs_cli('write', '/context/pad/notes/n1', 'uno')
        code, out, _ = afs_cli('ls', '/context/pad', '--depth', '2')
        assert code == 0
        assert out.splitlines() == ['/context/pad/notes', '/context/pad/notes/n1']

    def test_exec_builtin_tool(self, afs_cli):
        code, out, _ = afs_cli('exec', '/tools/estimate_tokens', '--arg', 'text=hello world')
        assert code == 0
        assert json.loads(out) == {'tokens': 3}


class TestExitCodes:
    """Tests para los códigos de salida y el formato de error."""

    def test_not_found(self, afs_cli):
        code, _, err = afs_cli('cat', '/context/pad/none')
        assert code == 1
        assert err.startswith('NotFound: ')

    def test_immutable_history(self, afs_cli):
        afs_cli('history', 'append', 'hola')
        code, _, err = afs_cli('write', '/context/history/0000000001', 'otro')
        assert code == 1
        assert err.startswith('ImmutableNode: ')

    def test_usage_error(self, afs_cli):
        with pytest.raises(SystemExit) as exc:
            afs_cli('ls')
        assert exc.value.code == 1

    def test_unknown_scope(self, afs_cli):
        code, _, err = afs_cli('scope', 'show', 'nadie')
        assert code == 1
        assert err.startswith('ScopeUnknown: ')


class TestAudit:
    """Tests para log y history desde la CLI."""

    def test_verify_and_replay(self, afs_cli):
        afs_cli('write', '/context/pad/notes/n1', 'uno')
        afs_cli('history', 'append', 'hola', '--agent', 'bot')
        code, out, _ = afs_cli('log', 'verify')
        assert code == 0
        assert out.startswith('OK ')

        code, first, _ = afs_cli('log', 'replay')
        assert code == 0
        assert len(first.strip()) == 64
        assert afs_cli('log', 'replay')[1] == first

        code, out, _ = afs_cli('history', 'verify')
        assert (code, out.strip()) == (0, 'OK 1 records')

    def test_tail(self, afs_cli):
        afs_cli('write', '/context/pad/notes/n1', 'uno')
        code, out, _ = afs_cli('--json', 'log', 'tail', '-n', '1')
        events = json.loads(out)
        assert code == 0
        assert events[0]['opType'] == 'write'
        assert events[0]['actor'] == 'human'


class TestSessionAndReview:
    """Tests para session run y el ciclo de revisión."""

    def test_session_run(self, afs_cli):
        code, out, _ = afs_cli('session', 'run', str(CHATBOT_SCRIPT), '--agent', 'chatbot', '--session-id', 's1')
        lines = out.splitlines()
        assert code == 0
        assert lines[0] == 'session s1 agent chatbot provider stub'
        assert lines[1] == '[1] user: i prefer green tea'
        assert '[1] agent: preference: green tea' in lines

    def test_correct_contradiction(self, afs_cli, tmp_path):
        script = tmp_path / 'contradiction.script'
        script.write_text('preference: green tea\npreference: black coffee\n', encoding='utf-8')
        afs_cli('session', 'run', str(script), '--agent', 'chatbot', '--session-id', 's1')

        code, out, _ = afs_cli('--json', 'review', 'list')
        pending = json.loads(out)
        assert code == 0
        assert len(pending) == 1
        reasoning_id = pending[0]['reasoningId']

        code, out, _ = afs_cli('review', 'correct', reasoning_id, 'preference: oolong')
        annotation, committed = out.splitlines()
        assert code == 0
        assert annotation.startswith('/context/human/a')
        assert committed.startswith('/context/memory/chatbot/fact/')

        code, out, _ = afs_cli('cat', committed)
        assert out == 'preference: oolong\n'
        assert json.loads(afs_cli('--json', 'review', 'list')[1]) == []


class TestMaintenance:
    """Tests para manifest show, gc y detección de manipulación."""

    def test_unknown_manifest(self, afs_cli):
        code, _, err = afs_cli('manifest', 'show', 'm99999999')
        assert code == 1
        assert err.startswith('NotFound: ')

    def test_gc_on_fresh_store(self, afs_cli):
        code, out, _ = afs_cli('gc')
        assert (code, out.strip()) == (0, 'empty report')

    def test_tampered_blob(self, afs_cli, tmp_path):
        """Test: un blob alterado hace fallar log verify con código 3."""
        afs_cli('write', '/context/pad/notes/n1', 'hola mundo')
        blobs = [p for p in (tmp_path / 'cli-store' / 'provenance' / 'blobs').rglob('*') if p.is_file()]
        assert blobs
        for blob in blobs:
            blob.write_bytes(b'manipulado')

        code, _, err = afs_cli('log', 'verify')
        assert code == 3
        assert err.startswith('LogCorrupt: ')

    def test_store_layout(self, afs_cli, tmp_path):
        """Test: el log vive en provenance/ y el StoreBackend de /context en context/."""
        afs_cli('write', '/context/pad/notes/n1', 'hola mundo')
        afs_cli('history', 'append', 'i prefer green tea', '--agent', 'chatbot')
        store = tmp_path / 'cli-store'
        assert (store / 'provenance' / 'log.ndjson').is_file()
        assert (store / 'provenance' / 'blobs').is_dir()
        assert (store / 'context' / 'meta.ndjson').is_file()
        assert (store / 'context' / 'nodes').is_dir()
        assert (store / 'history' / 'records' / '0000000001.json').is_file()
        assert sorted(p.relative_to(store).as_posix() for p in store.rglob('log.ndjson')) == [
            'provenance/log.ndjson'
        ]
