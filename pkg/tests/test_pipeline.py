"""
Tests para el pipeline de contexto: presupuesto, puntuación, Constructor,
Updater y Evaluator.
"""

import itertools
from dataclasses import replace

import numpy as np
import pytest

from src.afs.nodes import NodeKind, NodeMetadata
from src.cli.runtime import AfsRuntime
from src.common.config import PipelineConfig
from src.common.errors import (
    BudgetInvalid, ConfigError, ReviewPending, RevisionMissing, SchemaViolation, UnknownReasoning,
)
from src.indexer.embedding import embed
from src.pipeline.budget import TokenBudget, estimate_tokens
from src.pipeline.constructor import ContextManifest, ManifestItem, select_candidates
from src.pipeline.evaluator import evaluate, factual_alignment, find_contradictions
from src.pipeline.provider import StubProvider, build_prompt, parse_prompt
from src.pipeline.scoring import recency, score_candidate
from src.pipeline.updater import ActiveWindow, load_context

DAY_MS = 86_400_000


class TestBudget:
    """Tests para estimate_tokens y TokenBudget."""

    def test_estimate_tokens(self):
        assert estimate_tokens('') == 0
        assert estimate_tokens('hello world') == 3
        assert estimate_tokens('ñ') == 1
        assert estimate_tokens(b'12345678') == 2

    def test_subadditive(self):
        words = ['', 'a', 'ab', 'abc', 'abcd', 'abcde', 'ñu']
        for a, b in itertools.product(words, repeat=2):
            assert estimate_tokens(a + b) <= estimate_tokens(a) + estimate_tokens(b) + 1

    def test_usable(self):
        assert TokenBudget(2048, 256).validate().usable == 1792

    @pytest.mark.parametrize('max_tokens,reserved', [(0, 0), (100, 100), (10, -1), (10, 20)])
    def test_invalid(self, max_tokens, reserved):
        with pytest.raises(BudgetInvalid):
            TokenBudget(max_tokens, reserved).validate()


class TestScoring:
    """Tests para la puntuación de candidatos."""

    def test_infinite_age_raw_history(self):
        """Test: historial crudo, ortogonal y de edad infinita → 0.2·0.4."""
        meta = NodeMetadata(kind=NodeKind.DATA, modified_at=0)
        score = score_candidate(meta, embed('tea'), float('inf'), None, '/context/history/0000000001')
        assert score == pytest.approx(0.08)

    def test_fresh_matching_human_annotation(self):
        now = 1_700_000_000_000
        meta = NodeMetadata(kind=NodeKind.DATA, created_at=now, modified_at=now,
                            user_attrs={'annotation': 'true'})
        query = embed('green tea')
        assert score_candidate(meta, query, now, query, '/context/human/a00000001') == pytest.approx(1.0)

    def test_recency_half_life(self):
        assert recency(0) == 1.0
        assert recency(7 * DAY_MS) == pytest.approx(0.5)
        assert recency(-DAY_MS) == 1.0

    def test_bounded(self):
        meta = NodeMetadata(kind=NodeKind.DATA, user_attrs={'memoryType': 'fact'})
        query = embed('tea')
        for doc in ('tea', 'coffee', ''):
            assert 0.0 <= score_candidate(meta, query, 5 * DAY_MS, embed(doc)) <= 1.0


def _best_subset(candidates, usable):
    best = 0.0
    for size in range(len(candidates) + 1):
        for subset in itertools.combinations(candidates, size):
            if sum(t for _, t, _ in subset) <= usable:
                best = max(best, sum(s for _, _, s in subset))
    return best


class TestSelection:
    """Tests para la selección voraz por densidad."""

    def test_density_order_and_ties(self):
        candidates = [('/b', 10, 0.5), ('/a', 10, 0.5), ('/c', 5, 0.5), ('/d', 20, 0.9)]
        selected, rejected = select_candidates(candidates, 25)
        assert selected == ['/c', '/a', '/b']
        assert rejected == ['/d']

    def test_zero_token_items_always_fit(self):
        selected, _ = select_candidates([('/empty', 0, 0.1), ('/big', 50, 0.9)], 10)
        assert selected == ['/empty']

    def test_budget_safety_and_knapsack_gap(self):
        """Test: nunca se supera el presupuesto; greedy + mejor ítem individual ≥ óptimo."""
        rng = np.random.default_rng(7)
        for _ in range(300):
            n = int(rng.integers(0, 11))
            candidates = [(f'/p{i}', int(rng.integers(0, 40)), float(rng.random())) for i in range(n)]
            usable = int(rng.integers(1, 80))
            selected, rejected = select_candidates(candidates, usable)

            tokens = {p: t for p, t, _ in candidates}
            scores = {p: s for p, _, s in candidates}
            assert sum(tokens[p] for p in selected) <= usable
            assert sorted(selected + rejected) == sorted(tokens)

            greedy = sum(scores[p] for p in selected)
            fitting = [s for _, t, s in candidates if t <= usable]
            assert greedy + max(fitting, default=0.0) >= _best_subset(candidates, usable) - 1e-12


class TestProvider:
    """Tests para el esquema de prompt y el proveedor stub."""

    def test_prompt_round_trip(self):
        prompt = build_prompt('You are a friendly chatbot', [('/context/history/0000000001', 'hola\n')], 'q?')
        assert prompt == ('## system\nYou are a friendly chatbot\n\n'
                          '## /context/history/0000000001\nhola\n\n'
                          '## query\nq?\n')
        assert parse_prompt(prompt) == (['/context/history/0000000001'], 'q?')

    def test_stub_complete(self):
        prompt = build_prompt('sys', [], 'my name is ana')
        assert StubProvider().complete(prompt) == '> my name is ana\nfrom none\nname: ana\n'

    def test_stub_summarize(self):
        text = 'We met at noon. The lisbon office was closed. Rain all day.'
        summary = StubProvider().summarize(text, 64)
        assert summary == StubProvider().summarize(text, 64)
        assert summary.startswith('We met at noon.')
        assert estimate_tokens(StubProvider().summarize(text, 4)) <= 4

    def test_stub_summarize_rarity_within_text(self):
        """Test: una palabra es rara si aparece una sola vez en el texto resumido."""
        stub = StubProvider()
        text = 'Intro here. tea tea tea tea. lisbon river bridge.'
        assert stub.summarize(text, 64) == 'Intro here. lisbon river bridge.'
        # repetida en el propio texto deja de ser rara, aunque sea rara en general
        text = 'Intro here. lisbon lisbon river. tea cup.'
        assert stub.summarize(text, 64) == 'Intro here. tea cup.'

    def test_stub_summarize_tie_keeps_earlier(self):
        assert StubProvider().summarize('Intro here. alpha beta. gamma delta.', 64) == 'Intro here. alpha beta.'


def _history(repository, *texts):
    return [repository.append_history('user', 'bot', 's1', None, t.encode()).record_id for t in texts]


class TestConstructor:
    """Tests para constructContext."""

    def test_manifest_partition_and_persistence(self, runtime, repository):
        _history(repository, 'green tea is my favourite drink', 'the weather in lisbon is sunny today',
                 'trains leave the station every hour')
        manifest = runtime.constructor.construct('lisbon weather', 'bot', 's1', TokenBudget(2048, 256))
        included = [i.path for i in manifest.included]
        assert included[0] == '/context/history/0000000002'
        assert len(included) == 3
        assert manifest.excluded == []
        assert manifest.reasoning_id == f'rsn-{manifest.manifest_id}'
        assert runtime.constructor.load_manifest(manifest.manifest_id).to_dict() == manifest.to_dict()

    def test_budget_safety(self, runtime, repository, monkeypatch):
        monkeypatch.setattr(PipelineConfig, 'COMPRESS', False)
        ids = _history(repository, *[f'note number {i} about topic {i * 7}' for i in range(12)])
        manifest = runtime.constructor.construct('topic', 'bot', 's1', TokenBudget(40, 8))
        assert manifest.total_tokens <= 32
        paths = [i.path for i in manifest.included] + [e.path for e in manifest.excluded]
        assert sorted(paths) == sorted(f'/context/history/{r}' for r in ids)
        assert {e.reason for e in manifest.excluded} == {'overBudget'}

    def test_compression_fills_remaining_budget(self, runtime, repository):
        long_text = ' '.join(f'Sentence {i} talks about subject {i}.' for i in range(30))
        _history(repository, long_text)
        manifest = runtime.constructor.construct('subject', 'bot', 's1', TokenBudget(60, 10))
        assert manifest.total_tokens <= 50
        assert manifest.included[0].reason == 'compressed'
        assert manifest.compression_applied[0]['method'] == 'summarize'

    def test_isolation_between_agents(self, runtime, repository):
        """Test: la memoria de otro agente queda excluida como accessDenied sin leerse."""
        ids = _history(repository, 'base')
        alice = repository.write_memory('alice', 'fact', b'secret: 42\n', 'keyValue', ids)
        own = repository.write_memory('bob', 'fact', b'color: green\n', 'keyValue', ids)
        manifest = runtime.constructor.construct('secret color', 'bob', 's1', TokenBudget(2048, 256))
        assert own.path in [i.path for i in manifest.included]
        assert [(e.path, e.reason) for e in manifest.excluded] == [(alice.path, 'accessDenied')]

    def test_isolation_random_configurations(self, settings, tmp_path):
        """Test: 200 configuraciones aleatorias; nunca entra memoria ajena y siempre se excluye como accessDenied."""
        rng = np.random.default_rng(71)
        agents = ['ana', 'ana2', 'bob', 'bo', 'carla', 'c']
        for config in range(200):
            store = replace(settings, store_url=f"file:{tmp_path / f'iso{config}'}")
            with AfsRuntime.open(store) as runtime:
                repository = runtime.repository
                ids = _history(repository, f'turno base {config}')
                present = list(rng.choice(agents, size=int(rng.integers(2, 5)), replace=False))
                paths = {}
                for agent in present:
                    for j in range(int(rng.integers(0, 4))):
                        if rng.integers(2):
                            entry = repository.write_memory(
                                agent, 'fact', f'{agent}{j}: v{config}\n'.encode(), 'keyValue', ids)
                        else:
                            entry = repository.write_memory(
                                agent, 'episodic', f'{agent} note {j} {config}'.encode(), 'plainText', ids)
                        paths[entry.path] = agent

                me = present[int(rng.integers(len(present)))]
                query = ' '.join(rng.choice(agents + ['note', 'turno'], size=2))
                manifest = runtime.constructor.construct(query, me, 's1', TokenBudget(4096, 256))
                included = {i.path for i in manifest.included}
                reasons = {e.path: e.reason for e in manifest.excluded}

                for path, owner in paths.items():
                    if owner == me:
                        assert reasons.get(path) != 'accessDenied'
                    else:
                        assert path not in included
                        assert reasons[path] == 'accessDenied'
                assert all(p.startswith(f'/context/memory/{me}/') for p in included if p.startswith('/context/memory/'))

    def test_stale_and_duplicate_excluded(self, runtime, repository):
        ids = _history(repository, 'same text', 'same text')
        entry = repository.write_memory('bot', 'episodic', b'old news', 'plainText', ids[:1])
        runtime.afs.set_attr(entry.path, 'stale', 'true')
        manifest = runtime.constructor.construct('text', 'bot', 's1', TokenBudget(2048, 256))
        reasons = {e.path: e.reason for e in manifest.excluded}
        assert reasons == {entry.path: 'stale', f'/context/history/{ids[1]}': 'duplicate'}

    def test_invalid_budget(self, runtime):
        with pytest.raises(BudgetInvalid):
            runtime.constructor.construct('q', 'bot', 's1', TokenBudget(10, 10))

    def test_single_manifest_event(self, runtime, repository):
        _history(repository, 'uno')
        before = runtime.log.last_event_id
        manifest = runtime.constructor.construct('uno', 'bot', 's1', TokenBudget(2048, 256))
        events = runtime.log.tail(runtime.log.last_event_id - before)
        assert [e.op_type for e in events] == ['manifest']
        assert events[0].reasoning_id == manifest.reasoning_id


class TestActiveWindow:
    """Tests para loadContext en sus tres modos."""

    @pytest.fixture
    def manifest(self, runtime, repository, monkeypatch):
        monkeypatch.setattr(PipelineConfig, 'COMPRESS', False)
        _history(repository, 'green tea is my favourite drink', 'the weather in lisbon is sunny today',
                 'trains leave the station every hour')
        return runtime.constructor.construct('lisbon weather', 'bot', 's1', TokenBudget(26, 8))

    def test_snapshot(self, runtime, manifest):
        before = runtime.log.last_event_id
        window = load_context(runtime.afs, manifest, 'snapshot')
        assert [i.path for i in window.loaded] == [i.path for i in manifest.included]
        assert window.tokens <= window.usable
        events = runtime.log.tail(runtime.log.last_event_id - before)
        assert [e.op_type for e in events] == ['load']
        assert events[0].reasoning_id == manifest.reasoning_id

    def test_incremental(self, runtime, manifest):
        window = ActiveWindow(runtime.afs, manifest, 'incremental')
        assert window.loaded == []
        loaded = []
        while (fragment := window.next_fragment()) is not None:
            loaded.append(fragment.path)
            assert window.tokens <= window.usable
        assert loaded == [i.path for i in manifest.included]
        assert window.exhausted

    def test_adaptive_swap_matches_brute_force(self, runtime, manifest):
        window = ActiveWindow(runtime.afs, manifest, 'adaptive')
        feedback = 'trains leave the station every hour'
        scores = window.rescore(feedback)
        loaded = [i.path for i in window.loaded]
        unloaded = [p for p in scores if p not in loaded]
        expected_removed = min(loaded, key=lambda p: (scores[p], p))
        expected_added = min(unloaded, key=lambda p: (-scores[p], p))

        swap = window.refresh(feedback)
        assert (swap.removed, swap.added) == (expected_removed, expected_added)
        assert expected_added in [i.path for i in window.loaded]
        assert window.tokens <= window.usable
        event = runtime.log.tail(1)[0]
        assert event.op_type == 'load'
        assert event.detail['swap']['added'] == expected_added

    def test_mode_errors(self, runtime, manifest):
        with pytest.raises(ConfigError):
            ActiveWindow(runtime.afs, manifest, 'lazy')
        with pytest.raises(ConfigError):
            ActiveWindow(runtime.afs, manifest, 'snapshot').next_fragment()
        with pytest.raises(ConfigError):
            ActiveWindow(runtime.afs, manifest, 'snapshot').refresh('x')

    def test_revision_missing(self, runtime):
        manifest = ContextManifest('m00000099', 0, 'bot', 's1', 'rsn-m00000099', 'q', TokenBudget(100, 10),
                                   included=[ManifestItem('/context/memory/bot/fact/e00000099', 1, 3, 0.5)])
        with pytest.raises(RevisionMissing):
            load_context(runtime.afs, manifest)

    def test_prompt_schema(self, runtime, manifest):
        window = load_context(runtime.afs, manifest)
        paths, query = parse_prompt(window.prompt('lisbon weather'))
        assert paths == [i.path for i in manifest.included]
        assert query == 'lisbon weather'


class TestEvaluate:
    """Tests para la evaluación pura."""

    def test_full_containment(self):
        text = 'the weather in lisbon is sunny today'
        report = evaluate('rsn-1', text, text, [('/context/history/0000000001', text)], [])
        assert report.factual_alignment == 1.0
        assert report.confidence == 1.0
        assert not report.human_review_required

    def test_zero_overlap(self):
        report = evaluate('rsn-1', 'purple elephants', 'green tea', [('/p', 'green tea')], [])
        assert report.factual_alignment == 0.0
        assert report.human_review_required
        assert report.drift_flag

    def test_ten_token_mixed_case(self):
        """Test: 6 de 10 tokens de contenido presentes en el contexto."""
        output = 'alpha beta gamma delta epsilon zeta eta theta iota kappa'
        context = 'alpha beta gamma and delta with epsilon zeta plus omega'
        assert abs(factual_alignment(output, context) - 0.6) < 1e-12

    def test_no_content_tokens(self):
        assert factual_alignment('the and of', 'anything') == 1.0

    def test_contradiction_halves_confidence(self):
        sources = [('/context/memory/bot/fact/e00000001', 'preference: green tea\n')]
        output = 'preference: black tea'
        contradictions = find_contradictions(output, sources)
        assert contradictions == [('preference: black tea', '/context/memory/bot/fact/e00000001')]
        report = evaluate('rsn-1', output, 'preference green tea black', sources, sources)
        assert report.factual_alignment == 1.0
        assert report.confidence == 0.5
        assert report.human_review_required

    def test_same_value_is_not_contradiction(self):
        sources = [('/f', 'preference: Green Tea')]
        assert find_contradictions('preference: green tea', sources) == []


class TestReviewAndCommit:
    """Tests para annotate/commitValidated."""

    def test_query_echo_is_not_grounding(self, runtime):
        """Test: sin elementos cargados, repetir la consulta no cuenta como respaldo."""
        query = 'what is my favourite drink in lisbon'
        manifest = runtime.constructor.construct(query, 'bot', 's1', TokenBudget(2048, 256))
        window = load_context(runtime.afs, manifest)
        assert window.items() == []
        report = runtime.evaluator.evaluate_output(query, manifest, window)
        assert report.factual_alignment == 0.0
        assert report.human_review_required

    def test_grounding_text_excludes_prompt_sections(self, runtime, repository):
        _history(repository, 'trains leave the station')
        manifest = runtime.constructor.construct('when do trains leave', 'bot', 's1', TokenBudget(2048, 256))
        window = load_context(runtime.afs, manifest)
        text = window.grounding_text()
        assert text == '/context/history/0000000001\ntrains leave the station'
        assert window.system_instructions not in text

    @pytest.fixture
    def pending(self, runtime, repository):
        ids = _history(repository, 'i prefer green tea')
        fact = repository.write_memory('bot', 'fact', b'preference: green tea\n', 'keyValue', ids)
        manifest = runtime.constructor.construct('what do i drink', 'bot', 's1', TokenBudget(2048, 256))
        window = load_context(runtime.afs, manifest)
        output = 'preference: black coffee'
        report = runtime.evaluator.evaluate_output(output, manifest, window)
        return fact, report, output

    def test_contradiction_requires_review(self, runtime, pending):
        fact, report, output = pending
        assert report.contradictions == [(output, fact.path)]
        assert [r['reasoningId'] for r in runtime.evaluator.pending_reviews()] == [report.reasoning_id]
        with pytest.raises(ReviewPending):
            runtime.evaluator.commit_validated(report, output, 'bot')

    def test_correction_supersedes_fact(self, runtime, repository, pending):
        fact, report, output = pending
        path = runtime.evaluator.annotate(report.reasoning_id, 'human', 'correct', correction='preference: oolong')
        content, meta = runtime.afs.read(path)
        assert content == b'preference: oolong'
        assert meta.user_attrs['origin'] == 'human-reviewer'
        assert repository.history.get(meta.user_attrs['recordId']).origin == 'human-reviewer'

        written = runtime.evaluator.commit_validated(report, output, 'bot')
        assert [e.text for e in written] == ['preference: oolong\n']
        assert written[0].source_ids == [meta.user_attrs['recordId']]
        old = repository.get_entry(fact.entry_id)
        assert old.archived
        assert old.attrs['supersededBy'] == written[0].entry_id
        assert runtime.evaluator.pending_reviews() == []
        assert runtime.log.override_counts()['annotate'] == 1

    def test_reject_blocks_commit(self, runtime, pending):
        _, report, output = pending
        runtime.evaluator.annotate(report.reasoning_id, 'human', 'reject', note='wrong')
        with pytest.raises(ReviewPending):
            runtime.evaluator.commit_validated(report, output, 'bot')

    def test_annotate_validation(self, runtime, pending):
        _, report, _ = pending
        with pytest.raises(SchemaViolation):
            runtime.evaluator.annotate(report.reasoning_id, 'human', 'maybe')
        with pytest.raises(SchemaViolation):
            runtime.evaluator.annotate(report.reasoning_id, 'human', 'correct')
        with pytest.raises(UnknownReasoning):
            runtime.evaluator.annotate('rsn-m99999999', 'human', 'approve')

    def test_approved_output_commits_without_duplicates(self, runtime, repository):
        ids = _history(repository, 'color: green')
        repository.write_memory('bot', 'fact', b'color: green\n', 'keyValue', ids)
        manifest = runtime.constructor.construct('color', 'bot', 's1', TokenBudget(2048, 256))
        window = load_context(runtime.afs, manifest)
        report = runtime.evaluator.evaluate_output('color: green\nsize: large', manifest, window)
        runtime.evaluator.annotate(report.reasoning_id, 'human', 'approve')
        written = runtime.evaluator.commit_validated(report, 'color: green\nsize: large', 'bot')
        assert [e.text for e in written] == ['size: large\n']
