"""
Constructor: selección, compresión y manifiesto de contexto.

Los candidatos se enumeran con privilegio de sistema y cada lectura se
autoriza con el ámbito de la sesión; lo que el ámbito no permite queda
excluido con motivo ``accessDenied`` sin leerse.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from src.afs.core import AgenticFileSystem
from src.afs.nodes import NodeKind
from src.common.config import PipelineConfig
from src.common.digests import sha256_hex
from src.governance.scopes import Right, ScopeId, check_access
from src.indexer.embedding import embed
from src.pipeline.budget import TokenBudget, estimate_tokens
from src.pipeline.provider import ModelProvider
from src.pipeline.scoring import score_candidate
from src.repository.repository import MANIFEST, ContextRepository, document_embedding, entry_text

logger = logging.getLogger(__name__)

EXCLUSION_REASONS = ('overBudget', 'accessDenied', 'stale', 'duplicate', 'lowScore')


@dataclass
class ManifestItem:
    path: str
    revision_id: int
    est_tokens: int
    score: float
    reason: str = 'selected'
    representation: str = 'plainText'
    compressed_text: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        data = {
            'path': self.path,
            'revisionId': self.revision_id,
            'estTokens': self.est_tokens,
            'score': self.score,
            'reason': self.reason,
            'representation': self.representation,
        }
        if self.compressed_text is not None:
            data['compressedText'] = self.compressed_text
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ManifestItem':
        return cls(
            data['path'], int(data['revisionId']), int(data['estTokens']), float(data['score']),
            data.get('reason', 'selected'), data.get('representation', 'plainText'),
            data.get('compressedText'),
        )


@dataclass
class ExcludedItem:
    path: str
    reason: str
    revision_id: Optional[int] = None
    est_tokens: Optional[int] = None
    score: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        data = {'path': self.path, 'reason': self.reason}
        if self.revision_id is not None:
            data.update(revisionId=self.revision_id, estTokens=self.est_tokens, score=self.score)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ExcludedItem':
        return cls(data['path'], data['reason'], data.get('revisionId'),
                   data.get('estTokens'), data.get('score'))


@dataclass
class ContextManifest:
    """Registro auditable de lo incluido/excluido en una sesión de razonamiento."""
    manifest_id: str
    created_at: int
    agent_id: str
    session_id: str
    reasoning_id: str
    query: str
    budget: TokenBudget
    included: List[ManifestItem] = field(default_factory=list)
    excluded: List[ExcludedItem] = field(default_factory=list)
    compression_applied: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def total_tokens(self) -> int:
        return sum(item.est_tokens for item in self.included)

    @property
    def path(self) -> str:
        return str(MANIFEST.child(self.manifest_id))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'manifestId': self.manifest_id,
            'createdAt': self.created_at,
            'agentId': self.agent_id,
            'sessionId': self.session_id,
            'reasoningId': self.reasoning_id,
            'query': self.query,
            'budget': self.budget.to_dict(),
            'included': [i.to_dict() for i in self.included],
            'excluded': [e.to_dict() for e in self.excluded],
            'totalTokens': self.total_tokens,
            'compressionApplied': list(self.compression_applied),
        }

    def serialize(self) -> bytes:
        return (json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + '\n').encode('utf-8')

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ContextManifest':
        return cls(
            manifest_id=data['manifestId'],
            created_at=int(data['createdAt']),
            agent_id=data['agentId'],
            session_id=data['sessionId'],
            reasoning_id=data['reasoningId'],
            query=data.get('query', ''),
            budget=TokenBudget.from_dict(data['budget']),
            included=[ManifestItem.from_dict(i) for i in data['included']],
            excluded=[ExcludedItem.from_dict(e) for e in data['excluded']],
            compression_applied=list(data.get('compressionApplied', [])),
        )

    @classmethod
    def parse(cls, raw: bytes) -> 'ContextManifest':
        return cls.from_dict(json.loads(raw.decode('utf-8')))

    def to_text(self) -> str:
        lines = [
            f"manifest {self.manifest_id}  reasoning {self.reasoning_id}",
            f"agent {self.agent_id}  session {self.session_id}  created {self.created_at}",
            f"budget {self.total_tokens}/{self.budget.usable} tokens",
            'included:',
        ]
        lines += [f"  {i.path}@{i.revision_id}  {i.est_tokens} tok  score {i.score:.4f}  {i.reason}"
                  for i in self.included] or ['  (none)']
        lines.append('excluded:')
        lines += [f"  {e.path}  {e.reason}" for e in self.excluded] or ['  (none)']
        for c in self.compression_applied:
            lines.append(f"compressed {c['path']} {c['method']} {c['beforeTokens']}->{c['afterTokens']}")
        return '\n'.join(lines)


def _density_key(item: Tuple[str, int, float]) -> Tuple[float, float, str]:
    path, tokens, score = item
    density = score / tokens if tokens > 0 else float('inf')
    return -density, -score, path


def select_candidates(
    candidates: Sequence[Tuple[str, int, float]],
    usable: int,
) -> Tuple[List[str], List[str]]:
    """
    Selección voraz por densidad score/tokens.

    Desempate: mayor score, luego ruta ascendente. Devuelve
    (seleccionadas en orden de selección, rechazadas en el mismo orden).
    """
    selected, rejected = [], []
    remaining = usable
    for path, tokens, _ in sorted(candidates, key=_density_key):
        if tokens <= remaining:
            selected.append(path)
            remaining -= tokens
        else:
            rejected.append(path)
    return selected, rejected


@dataclass
class _Candidate:
    path: str
    revision_id: int
    text: str
    tokens: int
    score: float
    representation: str


class ContextConstructor:
    """Recoge, puntúa, selecciona y comprime candidatos bajo un TokenBudget."""

    def __init__(self, afs: AgenticFileSystem, repository: ContextRepository, provider: ModelProvider):
        self.afs = afs
        self.repository = repository
        self.provider = provider

    def _gather(self, scope: ScopeId, query: str, now: int) -> Tuple[List[_Candidate], List[ExcludedItem]]:
        system = self.afs.scopes.system
        query_embedding = embed(query)
        candidates: List[_Candidate] = []
        excluded: List[ExcludedItem] = []
        seen_hashes = set()

        for root in PipelineConfig.CANDIDATE_ROOTS:
            if not self.afs.exists(root):
                continue
            depth = self.afs.max_depth_at(root)
            for path, meta in self.afs.list(root, depth=depth, scope=system):
                if meta.kind != NodeKind.DATA:
                    continue
                path = str(path)
                if not check_access(scope, path, Right.READ):
                    excluded.append(ExcludedItem(path, 'accessDenied'))
                    continue
                if meta.user_attrs.get('stale') == 'true':
                    excluded.append(ExcludedItem(path, 'stale'))
                    continue
                content, meta = self.afs.read(path, scope=scope)
                digest = sha256_hex(content)
                if digest in seen_hashes:
                    excluded.append(ExcludedItem(path, 'duplicate'))
                    continue
                seen_hashes.add(digest)

                representation = meta.user_attrs.get('representation', 'plainText')
                text = entry_text(content, representation)
                score = score_candidate(
                    meta, query_embedding, now, document_embedding(content, representation), path,
                )
                candidate = _Candidate(path, meta.revision_id, text, estimate_tokens(text),
                                       score, representation)
                if score < PipelineConfig.MIN_SCORE:
                    excluded.append(ExcludedItem(path, 'lowScore', candidate.revision_id,
                                                 candidate.tokens, score))
                    continue
                candidates.append(candidate)
        return candidates, excluded

    def construct(
        self,
        query: str,
        agent_id: str,
        session_id: str,
        budget: TokenBudget,
        scope: Union[str, ScopeId, None] = None,
    ) -> ContextManifest:
        """
        Construye y registra el manifiesto (opType ``manifest``).

        Raises:
            BudgetInvalid, ScopeUnknown
        """
        budget.validate()
        scope = self.afs.scopes.get(scope or f"agent:{agent_id}")
        manifest_id = self.repository.next_id('manifest')
        reasoning_id = f"rsn-{manifest_id}"

        with self.afs.acting_as(self.afs.actor.actor, session_id, reasoning_id), \
                self.afs.operation('manifest', MANIFEST.child(manifest_id)) as frame:
            now = self.afs.clock.now_ms()
            frame.set_input({'query': query, 'agentId': agent_id, 'sessionId': session_id,
                             'budget': budget.to_dict(), 'scope': scope.name})
            candidates, excluded = self._gather(scope, query, now)
            by_path = {c.path: c for c in candidates}
            selected, rejected = select_candidates(
                [(c.path, c.tokens, c.score) for c in candidates], budget.usable,
            )

            manifest = ContextManifest(manifest_id, now, agent_id, session_id, reasoning_id, query, budget)
            for path in selected:
                c = by_path[path]
                manifest.included.append(ManifestItem(c.path, c.revision_id, c.tokens, c.score,
                                                      representation=c.representation))
            remaining = budget.usable - manifest.total_tokens
            for path in rejected:
                c = by_path[path]
                compressed = self._compress(c, remaining)
                if compressed is None:
                    excluded.append(ExcludedItem(c.path, 'overBudget', c.revision_id, c.tokens, c.score))
                    continue
                tokens = estimate_tokens(compressed)
                manifest.included.append(ManifestItem(c.path, c.revision_id, tokens, c.score, 'compressed',
                                                      c.representation, compressed))
                manifest.compression_applied.append({
                    'path': c.path, 'method': 'summarize', 'beforeTokens': c.tokens, 'afterTokens': tokens,
                })
                remaining -= tokens
            manifest.excluded = sorted(excluded, key=lambda e: e.path)

            self.afs.write(manifest.path, manifest.serialize(), {
                'reasoningId': reasoning_id, 'agentId': agent_id, 'sessionId': session_id,
                'sourceId': reasoning_id,
            }, scope=self.afs.scopes.system)
            frame.set_output(manifest.to_dict())
            frame.detail.update(reasoningId=reasoning_id, included=len(manifest.included),
                                excluded=len(manifest.excluded), totalTokens=manifest.total_tokens)

        logger.debug(f"Manifiesto {manifest_id}: {len(manifest.included)} incluidos, "
                     f"{manifest.total_tokens}/{budget.usable} tokens",
                     extra={'reasoning_id': reasoning_id, 'agent_id': agent_id})
        return manifest

    def _compress(self, candidate: _Candidate, remaining: int) -> Optional[str]:
        if not PipelineConfig.COMPRESS or remaining < PipelineConfig.MIN_COMPRESS_TOKENS:
            return None
        summary = self.provider.summarize(candidate.text, remaining)
        tokens = estimate_tokens(summary)
        if not summary or tokens > remaining:
            return None
        return summary

    def load_manifest(self, manifest_id: str) -> ContextManifest:
        """
        Raises:
            NotFound: manifiesto inexistente
        """
        content, _ = self.afs.read(MANIFEST.child(manifest_id), scope=self.afs.scopes.system)
        return ContextManifest.parse(content)


__all__ = [
    'ContextConstructor',
    'ContextManifest',
    'ManifestItem',
    'ExcludedItem',
    'EXCLUSION_REASONS',
    'select_candidates',
]
