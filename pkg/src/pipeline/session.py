"""
Sesión multi-turno: el ciclo completo del pipeline por cada turno de usuario.

    appendHistory(user) → constructContext → loadContext(snapshot)
    → provider.complete → appendHistory(agent) → evaluateOutput
    → commitValidated | cola de revisión
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from src.afs.core import AgenticFileSystem
from src.common.errors import ReviewPending
from src.common.logging_config import get_logger
from src.pipeline.budget import TokenBudget
from src.pipeline.constructor import ContextConstructor
from src.pipeline.evaluator import ContextEvaluator, EvaluationReport
from src.pipeline.provider import ModelProvider
from src.pipeline.updater import load_context
from src.repository.models import Origin
from src.repository.repository import ContextRepository

logger = logging.getLogger(__name__)


def parse_script(text: str) -> List[str]:
    """Un turno de usuario por línea; '#' inicia comentario y las vacías se ignoran."""
    turns = []
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith('#'):
            turns.append(line)
    return turns


@dataclass
class TurnResult:
    index: int
    query: str
    user_record_id: str
    manifest_id: str
    reasoning_id: str
    output: str
    output_record_id: str
    report: EvaluationReport
    included: List[str] = field(default_factory=list)
    committed: List[str] = field(default_factory=list)
    status: str = 'committed'

    def to_dict(self) -> Dict[str, Any]:
        return {
            'turn': self.index,
            'query': self.query,
            'userRecordId': self.user_record_id,
            'manifestId': self.manifest_id,
            'reasoningId': self.reasoning_id,
            'included': list(self.included),
            'output': self.output,
            'outputRecordId': self.output_record_id,
            'evaluation': self.report.to_dict(),
            'committed': list(self.committed),
            'status': self.status,
        }


@dataclass
class Transcript:
    agent_id: str
    session_id: str
    provider_id: str
    model_version: str
    turns: List[TurnResult] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'agentId': self.agent_id,
            'sessionId': self.session_id,
            'providerId': self.provider_id,
            'modelVersion': self.model_version,
            'turns': [t.to_dict() for t in self.turns],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False)

    def to_text(self) -> str:
        lines = [f"session {self.session_id} agent {self.agent_id} provider {self.provider_id}"]
        for turn in self.turns:
            lines.append(f"[{turn.index}] user: {turn.query}")
            lines.append(f"[{turn.index}] manifest {turn.manifest_id} ({len(turn.included)} items)")
            lines.extend(f"[{turn.index}]   {path}" for path in turn.included)
            lines.extend(f"[{turn.index}] agent: {line}" for line in turn.output.rstrip('\n').splitlines())
            lines.append(
                f"[{turn.index}] eval alignment={turn.report.factual_alignment:.4f} "
                f"confidence={turn.report.confidence:.4f} review={'yes' if turn.report.human_review_required else 'no'}"
            )
            lines.append(f"[{turn.index}] {turn.status}: {', '.join(turn.committed) or '-'}")
        return '\n'.join(lines) + '\n'


class SessionRunner:
    """Ejecuta guiones de conversación sobre un runtime abierto."""

    def __init__(self, afs: AgenticFileSystem, repository: ContextRepository, provider: ModelProvider,
                 constructor: Optional[ContextConstructor] = None,
                 evaluator: Optional[ContextEvaluator] = None):
        self.afs = afs
        self.repository = repository
        self.provider = provider
        self.constructor = constructor or ContextConstructor(afs, repository, provider)
        self.evaluator = evaluator or ContextEvaluator(afs, repository)

    def run(self, script: List[str], agent_id: str, budget: TokenBudget,
            session_id: Optional[str] = None) -> Transcript:
        """
        Raises:
            Propaga cualquier AfsError del pipeline
        """
        budget.validate()
        session_id = session_id or f"{agent_id}-{self.afs.clock.now_ms()}"
        transcript = Transcript(agent_id, session_id, self.provider.provider_id, self.provider.model_version)
        for index, query in enumerate(script, start=1):
            transcript.turns.append(self._turn(index, query, agent_id, session_id, budget))
        get_logger(__name__, agent_id=agent_id, session_id=session_id).info(
            f"Sesión {session_id}: {len(transcript.turns)} turnos"
        )
        return transcript

    def _turn(self, index: int, query: str, agent_id: str, session_id: str,
              budget: TokenBudget) -> TurnResult:
        user_record = self.repository.append_history(
            Origin.USER, agent_id, session_id, self.provider.model_version, query.encode('utf-8'),
        )
        with self.afs.acting_as(agent_id, session_id, scope=f"agent:{agent_id}"):
            manifest = self.constructor.construct(query, agent_id, session_id, budget)
            window = load_context(self.afs, manifest, 'snapshot')
            output = self.provider.complete(window.prompt(query))
            with self.afs.acting_as(agent_id, session_id, manifest.reasoning_id, scope=f"agent:{agent_id}"):
                output_record = self.repository.append_history(
                    Origin.AGENT, agent_id, session_id, self.provider.model_version, output.encode('utf-8'),
                )
            report = self.evaluator.evaluate_output(output, manifest, window, output_record.record_id)

            committed: List[str] = []
            status = 'review'
            if not report.human_review_required:
                try:
                    committed = [e.path for e in self.evaluator.commit_validated(report, output, agent_id)]
                    status = 'committed'
                except ReviewPending:
                    pass

        return TurnResult(
            index=index,
            query=query,
            user_record_id=user_record.record_id,
            manifest_id=manifest.manifest_id,
            reasoning_id=manifest.reasoning_id,
            output=output,
            output_record_id=output_record.record_id,
            report=report,
            included=[item.path for item in manifest.included],
            committed=committed,
            status=status,
        )


__all__ = ['SessionRunner', 'Transcript', 'TurnResult', 'parse_script']
