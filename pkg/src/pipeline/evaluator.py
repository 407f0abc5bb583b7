"""
Evaluator: grounding léxico, contradicciones, revisión humana y
write-back gobernado a memoria de hechos.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

from src.afs.core import AgenticFileSystem
from src.afs.paths import AfsPath
from src.common.config import PipelineConfig
from src.common.errors import NotFound, ReviewPending, SchemaViolation, UnknownReasoning
from src.indexer.text import content_tokens
from src.pipeline.constructor import ContextManifest
from src.pipeline.updater import ActiveWindow
from src.repository.facts import extract_facts, fact_map, format_fact, parse_fact_line
from src.repository.models import MemoryEntry, MemoryType, Origin, Representation
from src.repository.repository import EVALUATION, HUMAN, MEMORY, ContextRepository

logger = logging.getLogger(__name__)

VERDICTS = ('approve', 'correct', 'reject')


@dataclass
class EvaluationReport:
    reasoning_id: str
    factual_alignment: float
    confidence: float
    contradictions: List[Tuple[str, str]] = field(default_factory=list)
    drift_flag: bool = False
    human_review_required: bool = False
    override_applied: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            'reasoningId': self.reasoning_id,
            'factualAlignment': self.factual_alignment,
            'confidence': self.confidence,
            'contradictions': [list(c) for c in self.contradictions],
            'driftFlag': self.drift_flag,
            'humanReviewRequired': self.human_review_required,
            'overrideApplied': self.override_applied,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'EvaluationReport':
        return cls(
            data['reasoningId'], float(data['factualAlignment']), float(data['confidence']),
            [tuple(c) for c in data.get('contradictions', [])], bool(data.get('driftFlag')),
            bool(data.get('humanReviewRequired')), bool(data.get('overrideApplied')),
        )


def factual_alignment(output: str, context: str) -> float:
    """|tokens(salida) ∩ tokens(contexto)| / |tokens(salida)|; 1.0 sin tokens de contenido."""
    output_tokens = content_tokens(output)
    if not output_tokens:
        return 1.0
    return len(output_tokens & content_tokens(context)) / len(output_tokens)


def find_contradictions(output: str, fact_sources: Sequence[Tuple[str, str]]) -> List[Tuple[str, str]]:
    """
    Líneas de la salida que afirman otra cosa para una clave de hecho cargada.

    Args:
        fact_sources: (ruta, texto) de las entradas de memoria de hechos cargadas
    """
    known: Dict[str, List[Tuple[str, str]]] = {}
    for path, text in fact_sources:
        for key, value in extract_facts(text):
            known.setdefault(key, []).append((value.casefold(), path))

    contradictions = []
    for line in output.splitlines():
        for key, value in parse_fact_line(line):
            loaded = known.get(key)
            if not loaded or any(v == value.casefold() for v, _ in loaded):
                continue
            contradictions.append((line.strip(), loaded[0][1]))
    return contradictions


def evaluate(
    reasoning_id: str,
    output: str,
    context: str,
    items: Sequence[Tuple[str, str]],
    fact_sources: Sequence[Tuple[str, str]],
    threshold: float = None,
) -> EvaluationReport:
    """Evaluación pura: no toca el namespace ni el log."""
    threshold = PipelineConfig.CONFIDENCE_THRESHOLD if threshold is None else threshold
    alignment = factual_alignment(output, context)
    contradictions = find_contradictions(output, fact_sources)
    confidence = alignment * (0.5 if contradictions else 1.0)

    output_tokens = content_tokens(output)
    contributing = sum(1 for _, text in items if content_tokens(text) & output_tokens)
    drift = bool(items) and contributing * 2 < len(items)

    return EvaluationReport(
        reasoning_id=reasoning_id,
        factual_alignment=alignment,
        confidence=confidence,
        contradictions=contradictions,
        drift_flag=drift,
        human_review_required=confidence < threshold or bool(contradictions),
    )


def _is_fact_path(path: str) -> bool:
    segments = AfsPath.parse(path).segments
    return len(segments) >= 4 and segments[:2] == ('context', 'memory') and segments[3] == MemoryType.FACT.value


class ContextEvaluator:
    """
    Evalúa salidas, gestiona la revisión humana y confirma hechos.

    El estado de cada razonamiento vive en /context/evaluation/{reasoningId}
    para que revisión y commit puedan ocurrir en procesos posteriores.
    """

    def __init__(self, afs: AgenticFileSystem, repository: ContextRepository, threshold: float = None):
        self.afs = afs
        self.repository = repository
        self.threshold = PipelineConfig.CONFIDENCE_THRESHOLD if threshold is None else threshold

    # --- registro de evaluación ---
    def load_evaluation(self, reasoning_id: str) -> Dict[str, Any]:
        try:
            content, _ = self.afs.read(EVALUATION.child(reasoning_id), scope=self.afs.scopes.system)
        except NotFound:
            raise UnknownReasoning(f"reasoningId desconocido: '{reasoning_id}'")
        return json.loads(content.decode('utf-8'))

    def _store_evaluation(self, record: Dict[str, Any]) -> None:
        content = (json.dumps(record, indent=2, sort_keys=True, ensure_ascii=False) + '\n').encode('utf-8')
        self.afs.write(EVALUATION.child(record['reasoningId']), content, {
            'reasoningId': record['reasoningId'],
            'status': record['status'],
            'sourceId': record['reasoningId'],
        }, scope=self.afs.scopes.system)

    def pending_reviews(self) -> List[Dict[str, Any]]:
        """Evaluaciones que esperan veredicto humano, por reasoningId."""
        if not self.afs.exists(EVALUATION):
            return []
        pending = []
        for path, meta in self.afs.list(EVALUATION, depth=1, scope=self.afs.scopes.system):
            if meta.user_attrs.get('status') == 'pending':
                pending.append(self.load_evaluation(path.name))
        return pending

    # --- operaciones ---
    def evaluate_output(self, output: str, manifest: ContextManifest, window: ActiveWindow,
                        output_record_id: Optional[str] = None) -> EvaluationReport:
        """Grounding de ``output`` frente a la ventana cargada; el informe queda registrado."""
        rid = manifest.reasoning_id
        with self.afs.acting_as(self.afs.actor.actor, manifest.session_id, rid), \
                self.afs.operation('evaluate', EVALUATION.child(rid)) as frame:
            frame.set_input({'output': output, 'reasoningId': rid})
            items = window.items()
            report = evaluate(
                rid, output, window.grounding_text(), items,
                [(p, t) for p, t in items if _is_fact_path(p)], self.threshold,
            )
            self._store_evaluation({
                'reasoningId': rid,
                'manifestId': manifest.manifest_id,
                'agentId': manifest.agent_id,
                'sessionId': manifest.session_id,
                'output': output,
                'outputRecordId': output_record_id,
                'report': report.to_dict(),
                'status': 'pending' if report.human_review_required else 'ready',
                'annotations': [],
                'committed': [],
            })
            frame.set_output(report.to_dict())
        if report.human_review_required:
            logger.info(f"Revisión humana requerida para {rid} (confianza {report.confidence:.3f})",
                        extra={'reasoning_id': rid, 'contradictions': len(report.contradictions)})
        return report

    def annotate(self, reasoning_id: str, human_id: str, verdict: str, note: str = '',
                 correction: Optional[str] = None) -> AfsPath:
        """
        Anota un razonamiento en /context/human/{annotationId} y añade el
        registro de historial correspondiente (origin human-reviewer).

        Raises:
            UnknownReasoning, SchemaViolation
        """
        if verdict not in VERDICTS:
            raise SchemaViolation(f"Veredicto inválido: '{verdict}'. Válidos: {VERDICTS}")
        if verdict == 'correct' and not correction:
            raise SchemaViolation("El veredicto 'correct' requiere el texto corregido")

        with self.afs.operation('annotate', HUMAN) as frame:
            record = self.load_evaluation(reasoning_id)
            annotation_id = self.repository.next_id('annotation')
            path = HUMAN.child(annotation_id)
            frame.path = str(path)
            payload = {'reasoningId': reasoning_id, 'verdict': verdict, 'note': note,
                       'correction': correction, 'annotationId': annotation_id}
            frame.set_input(payload)
            history = self.repository.append_history(
                Origin.HUMAN_REVIEWER, human_id, record.get('sessionId') or '', None,
                json.dumps(payload, sort_keys=True).encode('utf-8'),
            )
            text = correction if verdict == 'correct' else (note or verdict)
            self.afs.write(path, text.encode('utf-8'), {
                'annotationId': annotation_id,
                'annotation': 'true',
                'reasoningId': reasoning_id,
                'verdict': verdict,
                'humanId': human_id,
                'origin': Origin.HUMAN_REVIEWER.value,
                'recordId': history.record_id,
                'sourceId': history.record_id,
            }, scope=self.afs.scopes.system)

            record['annotations'].append({'annotationId': annotation_id, 'verdict': verdict,
                                          'recordId': history.record_id, 'correction': correction})
            record['status'] = {'approve': 'approved', 'correct': 'corrected', 'reject': 'rejected'}[verdict]
            if verdict == 'correct':
                record['report']['overrideApplied'] = True
            self._store_evaluation(record)
            frame.set_output({'annotationId': annotation_id, 'recordId': history.record_id})
        logger.info(f"Anotación {annotation_id} ({verdict}) sobre {reasoning_id} por {human_id}")
        return path

    def commit_validated(self, report: EvaluationReport, output: str, agent_id: str) -> List[MemoryEntry]:
        """
        Escribe los hechos de la salida validada en /context/memory/{agentId}/fact/.

        Un hecho idéntico ya vivo no se duplica; uno con la misma clave y otro
        valor queda archivado con ``supersededBy``.

        Raises:
            ReviewPending: revisión requerida sin aprobación, o rechazada
            UnknownReasoning
        """
        rid = report.reasoning_id
        written: List[MemoryEntry] = []
        with self.afs.acting_as(self.afs.actor.actor, None, rid), \
                self.afs.operation('commit', MEMORY.child(agent_id, MemoryType.FACT.value)) as frame:
            record = self.load_evaluation(rid)
            frame.set_input({'reasoningId': rid, 'agentId': agent_id})
            latest = record['annotations'][-1] if record['annotations'] else None
            verdict = latest['verdict'] if latest else None
            if verdict == 'reject' or (report.human_review_required and verdict is None):
                raise ReviewPending(f"{rid} requiere una revisión humana aprobatoria")

            confidence = report.confidence
            if verdict == 'correct':
                output = latest['correction']
                source_ids = [latest['recordId']]
                confidence = 1.0
            elif record.get('outputRecordId'):
                source_ids = [record['outputRecordId']]
            else:
                source_ids = [self.repository.append_history(
                    Origin.AGENT, agent_id, record.get('sessionId') or '', None, output.encode('utf-8'),
                ).record_id]

            live = self.repository.list_entries(agent_id, MemoryType.FACT.value)
            for key, value in extract_facts(output):
                if any(fact_map(e.text).get(key, '').casefold() == value.casefold() for e in live):
                    continue
                entry = self.repository.write_memory(
                    agent_id, MemoryType.FACT, (format_fact(key, value) + '\n').encode('utf-8'),
                    Representation.KEY_VALUE, source_ids, record.get('sessionId'), confidence,
                    {'sourceId': rid, 'reasoningId': rid},
                )
                for old in [e for e in live if key in fact_map(e.text)]:
                    self.repository.supersede(old.entry_id, entry.entry_id)
                    live.remove(old)
                live.append(entry)
                written.append(entry)

            record['status'] = 'committed'
            record['committed'] = record['committed'] + [e.entry_id for e in written]
            self._store_evaluation(record)
            frame.set_output({'committed': [e.entry_id for e in written]})
        if written:
            logger.info(f"Commit {rid}: {len(written)} hechos en memoria de {agent_id}")
        return written


__all__ = [
    'ContextEvaluator',
    'EvaluationReport',
    'VERDICTS',
    'evaluate',
    'factual_alignment',
    'find_contradictions',
]
