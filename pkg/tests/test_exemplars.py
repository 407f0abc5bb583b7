"""
Tests de extremo a extremo: sesión de chatbot sobre el guion de ejemplo
y herramienta externa montada por stdio.
"""

import json
import sys
from dataclasses import replace
from pathlib import Path

import pytest

from src.cli.runtime import MOUNTS_FILE, AfsRuntime
from src.common.errors import ToolFailure
from src.pipeline.session import parse_script
from src.provenance.replay import replay
from tests.conftest import MOCK_TOOL

CHATBOT_SCRIPT = Path(__file__).resolve().parent.parent / 'scripts' / 'chatbot.script'


def _run_chatbot(runtime):
    script = parse_script(CHATBOT_SCRIPT.read_text(encoding='utf-8'))
    return runtime.sessions.run(script, 'chatbot', runtime.budget, 'demo')


class TestChatbotSession:
    """Tests para la sesión de chatbot de tres turnos."""

    def test_parse_script(self):
        assert parse_script('# comentario\n\n hola \nadiós\n') == ['hola', 'adiós']
        assert len(parse_script(CHATBOT_SCRIPT.read_text(encoding='utf-8'))) == 3

    def test_preference_reaches_third_turn(self, runtime):
        """Test: el hecho confirmado en el turno 1 entra en el manifiesto del turno 3."""
        transcript = _run_chatbot(runtime)
        first, second, third = transcript.turns
        assert first.status == 'committed'
        assert len(first.committed) == 1
        fact_path = first.committed[0]
        assert fact_path.startswith('/context/memory/chatbot/fact/')
        assert runtime.afs.read(fact_path)[0] == b'preference: green tea\n'
        assert fact_path in second.included
        assert fact_path in third.included
        assert third.user_record_id == '0000000005'

    def test_empty_script(self, runtime):
        transcript = runtime.sessions.run([], 'chatbot', runtime.budget, 'vacia')
        assert transcript.turns == []
        assert runtime.repository.verify_chain().checked == 0

    def test_budget_respected_every_turn(self, runtime):
        transcript = _run_chatbot(runtime)
        for turn in transcript.turns:
            manifest = runtime.constructor.load_manifest(turn.manifest_id)
            assert manifest.total_tokens <= runtime.budget.usable

    def test_replay_matches_live_state(self, runtime):
        _run_chatbot(runtime)
        assert runtime.log.verify().ok
        assert replay(runtime.log) == runtime.afs.state_digest()

    def test_reproducible_across_stores(self, settings, tmp_path):
        """Test: mismo guion, reloj lógico y proveedor → mismo transcript y mismo digest."""
        results = []
        for name in ('a', 'b'):
            with AfsRuntime.open(replace(settings, store_url=f"file:{tmp_path / name}")) as runtime:
                transcript = _run_chatbot(runtime)
                results.append((transcript.to_json(), runtime.afs.state_digest(), replay(runtime.log)))
        assert results[0] == results[1]


class TestMockToolMount:
    """Tests para la herramienta simulada montada en /modules/mock-tool."""

    def _entry(self, *flags):
        return {'type': 'tool', 'command': sys.executable, 'args': [str(MOCK_TOOL), *flags]}

    def test_mount_and_exec(self, runtime):
        runtime.add_mount('/modules/mock-tool', self._entry())
        names = [str(p) for p, _ in runtime.afs.list('/modules/mock-tool')]
        assert names == ['/modules/mock-tool/list_issues', '/modules/mock-tool/search_repositories']

        result, event_id = runtime.afs.exec('/modules/mock-tool/search_repositories', {'query': 'afs'})
        assert result['total_count'] == 2
        event = runtime.log.tail(1)[0]
        assert (event.event_id, event.op_type) == (event_id, 'exec')

    def test_mount_survives_reopen(self, settings, runtime):
        runtime.add_mount('/modules/mock-tool', self._entry())
        runtime.close()
        with AfsRuntime.open(settings) as reopened:
            result, _ = reopened.afs.exec('/modules/mock-tool/list_issues',
                                          {'owner': 'afs-project', 'repo': 'afs', 'state': 'open'})
            assert [i['number'] for i in result['issues']] == [1, 3]

    def test_env_values_not_persisted(self, settings, runtime, monkeypatch):
        """Test: mounts.json guarda los nombres de las variables, no sus valores."""
        entry = dict(self._entry(), env={'AFS_TOOL_TOKEN': 's3cr3t-value'})
        runtime.add_mount('/modules/mock-tool', entry)
        runtime.close()

        persisted = (settings.store_dir / MOUNTS_FILE).read_text(encoding='utf-8')
        assert 's3cr3t-value' not in persisted
        table = json.loads(persisted)
        assert table[0]['envKeys'] == ['AFS_TOOL_TOKEN']
        assert 'env' not in table[0]

        monkeypatch.setenv('AFS_TOOL_TOKEN', 's3cr3t-value')
        with AfsRuntime.open(settings) as reopened:
            assert reopened.mount_errors == {}
            result, _ = reopened.afs.exec('/modules/mock-tool/search_repositories', {'query': 'afs'})
            assert result['total_count'] == 2

    def test_missing_env_key_fails_only_that_mount(self, settings, runtime, monkeypatch):
        runtime.add_mount('/modules/mock-tool', dict(self._entry(), env={'AFS_TOOL_TOKEN': 'x'}))
        runtime.close()

        monkeypatch.delenv('AFS_TOOL_TOKEN', raising=False)
        with AfsRuntime.open(settings) as reopened:
            assert reopened.mount_errors['/modules/mock-tool'].startswith('ConfigError')
            assert 'AFS_TOOL_TOKEN' in reopened.mount_errors['/modules/mock-tool']
            result, _ = reopened.afs.exec('/tools/estimate_tokens', {'text': 'hello world'})
            assert result == {'tokens': 3}

    def test_crash_is_isolated(self, runtime):
        """Test: la caída de la herramienta solo afecta a su montaje."""
        runtime.add_mount('/modules/mock-tool', self._entry('--crash-after', '1'))
        runtime.afs.exec('/modules/mock-tool/search_repositories', {'query': 'afs'})
        with pytest.raises(ToolFailure):
            runtime.afs.exec('/modules/mock-tool/search_repositories', {'query': 'afs'})
        assert runtime.log.tail(1)[0].outcome != 'ok'

        result, _ = runtime.afs.exec('/tools/estimate_tokens', {'text': 'hello world'})
        assert result == {'tokens': 3}
        runtime.repository.append_history('user', 'bot', 's1', None, b'sigue funcionando')
        assert runtime.repository.verify_chain().ok
