"""
Updater: carga del manifiesto en la ventana activa.

Modos:
    snapshot     todos los elementos incluidos, una vez, en orden de manifiesto
    incremental  un fragmento por llamada a ``next_fragment()``
    adaptive     snapshot + ``refresh(feedback)`` que intercambia el elemento
                 cargado de menor score por el mejor candidato no cargado

Cada carga o intercambio emite un evento ``load`` con las rutas fuente y
el reasoningId del manifiesto.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from src.afs.core import AgenticFileSystem
from src.common.config import PipelineConfig
from src.common.errors import ConfigError, NotFound, RevisionMissing, UnknownRevision, WindowOverflow
from src.indexer.embedding import embed
from src.pipeline.budget import estimate_tokens
from src.pipeline.constructor import ContextManifest, ManifestItem
from src.pipeline.provider import build_prompt
from src.pipeline.scoring import score_candidate
from src.repository.repository import entry_text

logger = logging.getLogger(__name__)

LOAD_MODES = ('snapshot', 'incremental', 'adaptive')
# Exclusiones que siguen siendo candidatas a un intercambio adaptativo
SWAPPABLE_REASONS = ('overBudget', 'lowScore')


@dataclass
class LoadedItem:
    path: str
    revision_id: int
    text: str
    tokens: int
    score: float
    representation: str = 'plainText'


@dataclass
class Swap:
    removed: str
    added: str
    removed_score: float
    added_score: float

    def to_dict(self) -> Dict[str, object]:
        return {'removed': self.removed, 'added': self.added,
                'removedScore': self.removed_score, 'addedScore': self.added_score}


class ActiveWindow:
    """Ventana activa de una sesión de razonamiento (una por reasoningId)."""

    def __init__(self, afs: AgenticFileSystem, manifest: ContextManifest, mode: str = 'snapshot',
                 system_instructions: str = None):
        if mode not in LOAD_MODES:
            raise ConfigError(f"Modo de carga desconocido: '{mode}'. Válidos: {LOAD_MODES}")
        self.afs = afs
        self.manifest = manifest
        self.mode = mode
        self.system_instructions = system_instructions or PipelineConfig.SYSTEM_INSTRUCTIONS
        self.loaded: List[LoadedItem] = []
        self.swaps: List[Swap] = []
        self._pending: List[ManifestItem] = list(manifest.included)
        self._unloaded: List[ManifestItem] = [
            ManifestItem(e.path, e.revision_id, e.est_tokens, e.score, e.reason)
            for e in manifest.excluded
            if e.reason in SWAPPABLE_REASONS and e.revision_id is not None
        ]
        if mode != 'incremental':
            self._load(self._pending)
            self._pending = []

    @property
    def usable(self) -> int:
        return self.manifest.budget.usable

    @property
    def tokens(self) -> int:
        return sum(item.tokens for item in self.loaded)

    @property
    def exhausted(self) -> bool:
        return not self._pending

    def _context(self):
        actor = self.afs.actor
        return self.afs.acting_as(actor.actor, self.manifest.session_id, self.manifest.reasoning_id)

    def _fetch(self, item: ManifestItem) -> LoadedItem:
        """Texto de la revisión fijada (o el comprimido del manifiesto)."""
        if item.compressed_text is not None:
            text = item.compressed_text
        else:
            try:
                raw = self.afs.log.get_revision(item.path, item.revision_id)
            except UnknownRevision:
                try:
                    raw, meta = self.afs.read(item.path, scope=self.afs.scopes.system)
                except NotFound:
                    raise RevisionMissing(f"{item.path}@{item.revision_id} ya no existe")
                if meta.revision_id != item.revision_id:
                    raise RevisionMissing(
                        f"{item.path}@{item.revision_id} no está en el log (vigente: {meta.revision_id})"
                    )
            text = entry_text(raw, item.representation)
        return LoadedItem(item.path, item.revision_id, text, estimate_tokens(text),
                          item.score, item.representation)

    def _load(self, items: List[ManifestItem]) -> List[LoadedItem]:
        path = items[0].path if len(items) == 1 else None
        with self._context(), self.afs.operation('load', path) as frame:
            frame.detail.update(mode=self.mode, reasoningId=self.manifest.reasoning_id,
                                sources=[f"{i.path}@{i.revision_id}" for i in items])
            fetched = [self._fetch(item) for item in items]
            incoming = sum(f.tokens for f in fetched)
            if self.tokens + incoming > self.usable:
                raise WindowOverflow(
                    f"La ventana excedería el presupuesto: {self.tokens + incoming} > {self.usable}"
                )
            self.loaded.extend(fetched)
            frame.set_output({'loaded': [f.path for f in fetched], 'tokens': self.tokens})
        return fetched

    def next_fragment(self) -> Optional[LoadedItem]:
        """Carga el siguiente elemento del manifiesto (None si no quedan)."""
        if self.mode != 'incremental':
            raise ConfigError("next_fragment solo está disponible en modo incremental")
        if not self._pending:
            return None
        item = self._pending.pop(0)
        return self._load([item])[0]

    def rescore(self, feedback_query: str) -> Dict[str, float]:
        """Scores de cargados y candidatos no cargados frente a ``feedback_query``."""
        query_embedding = embed(feedback_query)
        now = self.afs.clock.now_ms()
        scores = {}
        for item in self.loaded + [self._fetch(u) for u in self._unloaded]:
            try:
                meta = self.afs.stat(item.path, scope=self.afs.scopes.system)
            except NotFound:
                raise RevisionMissing(f"{item.path} ya no existe")
            scores[item.path] = score_candidate(meta, query_embedding, now, embed(item.text), item.path)
        return scores

    def refresh(self, feedback_query: str) -> Optional[Swap]:
        """
        Intercambia el cargado de menor score por el no cargado de mayor score
        si éste lo supera y cabe en el presupuesto liberado.
        """
        if self.mode != 'adaptive':
            raise ConfigError("refresh solo está disponible en modo adaptive")
        if not self.loaded or not self._unloaded:
            return None
        with self._context(), self.afs.operation('load', None) as frame:
            scores = self.rescore(feedback_query)
            worst = min(self.loaded, key=lambda i: (scores[i.path], i.path))
            best_item = min(self._unloaded, key=lambda i: (-scores[i.path], i.path))
            best = self._fetch(best_item)
            frame.detail.update(mode=self.mode, reasoningId=self.manifest.reasoning_id, refresh=True)
            if scores[best.path] <= scores[worst.path]:
                frame.set_output({'swap': None})
                return None
            if self.tokens - worst.tokens + best.tokens > self.usable:
                frame.set_output({'swap': None, 'reason': 'overBudget'})
                return None

            swap = Swap(worst.path, best.path, scores[worst.path], scores[best.path])
            self.loaded.remove(worst)
            best.score = scores[best.path]
            self.loaded.append(best)
            self._unloaded.remove(best_item)
            self._unloaded.append(ManifestItem(worst.path, worst.revision_id, worst.tokens,
                                               worst.score, 'swapped', worst.representation))
            self.swaps.append(swap)
            frame.path = best.path
            frame.detail.update(swap=swap.to_dict(), sources=[worst.path, best.path])
            frame.set_output({'swap': swap.to_dict(), 'tokens': self.tokens})
        logger.info(f"Intercambio adaptativo: {swap.removed} → {swap.added}",
                    extra={'reasoning_id': self.manifest.reasoning_id})
        return swap

    def items(self) -> List[Tuple[str, str]]:
        return [(item.path, item.text) for item in self.loaded]

    def assembled_text(self) -> str:
        """Concatenación de los textos cargados en orden."""
        return ''.join(item.text for item in self.loaded)

    def grounding_text(self) -> str:
        """Contexto cargado para el Evaluator: ruta canónica y texto de cada elemento, sin instrucciones ni consulta."""
        return '\n'.join(f"{item.path}\n{item.text}" for item in self.loaded)

    def prompt(self, query: Optional[str] = None) -> str:
        return build_prompt(self.system_instructions, self.items(), query)


def load_context(afs: AgenticFileSystem, manifest: ContextManifest, mode: str = 'snapshot') -> ActiveWindow:
    """
    Raises:
        RevisionMissing, WindowOverflow
    """
    return ActiveWindow(afs, manifest, mode)


__all__ = ['ActiveWindow', 'LoadedItem', 'Swap', 'LOAD_MODES', 'load_context']
