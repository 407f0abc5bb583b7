"""
Puntuación de candidatos del Constructor.

score = w_sim·cos⁺(consulta, doc) + w_rec·2^(−edadDías/vidaMedia) + w_prov·peso
"""

from typing import Optional

import numpy as np

from src.afs.nodes import NodeMetadata
from src.common.config import PipelineConfig
from src.indexer.embedding import cosine

MS_PER_DAY = 86_400_000

PROVENANCE_WEIGHTS = {
    'human': 1.0,
    'fact': 0.8,
    'user': 0.8,
    'episodic': 0.6,
    'experiential': 0.6,
    'procedural': 0.6,
    'scratchpad': 0.5,
    'history': 0.4,
}
DEFAULT_PROVENANCE_WEIGHT = 0.4


def provenance_category(meta: NodeMetadata, path: str = '') -> str:
    attrs = meta.user_attrs
    if (attrs.get('origin') == 'human-reviewer' or attrs.get('annotation') == 'true'
            or path.startswith('/context/human/')):
        return 'human'
    if attrs.get('memoryType'):
        return attrs['memoryType']
    if path.startswith('/context/history/'):
        return 'history'
    return 'other'


def provenance_weight(meta: NodeMetadata, path: str = '') -> float:
    return PROVENANCE_WEIGHTS.get(provenance_category(meta, path), DEFAULT_PROVENANCE_WEIGHT)


def recency(age_ms: float, half_life_days: float = None) -> float:
    """2^(−edad/vidaMedia); edades negativas cuentan como 0."""
    half_life_days = half_life_days or PipelineConfig.RECENCY_HALF_LIFE_DAYS
    age_days = max(float(age_ms), 0.0) / MS_PER_DAY
    return float(np.exp2(-age_days / half_life_days))


def score_candidate(
    meta: NodeMetadata,
    query_embedding: np.ndarray,
    now: float,
    doc_embedding: Optional[np.ndarray] = None,
    path: str = '',
) -> float:
    """Puntuación en [0,1]; determinista."""
    similarity = 0.0
    if doc_embedding is not None:
        similarity = min(max(cosine(query_embedding, doc_embedding), 0.0), 1.0)
    score = (
        PipelineConfig.WEIGHT_SIMILARITY * similarity
        + PipelineConfig.WEIGHT_RECENCY * recency(now - meta.modified_at)
        + PipelineConfig.WEIGHT_PROVENANCE * provenance_weight(meta, path)
    )
    return min(max(score, 0.0), 1.0)


__all__ = [
    'PROVENANCE_WEIGHTS',
    'provenance_category',
    'provenance_weight',
    'recency',
    'score_candidate',
]
