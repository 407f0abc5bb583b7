"""
Índice invertido + vectores persistidos bajo ``<store>/index/<indexId>/``.

Archivos:
    postings.ndjson  {"token": ..., "entries": [[path, tf], ...]} por token
    vectors.bin      float32 little-endian, fila por documento (row-major)
    paths.ndjson     rutas en el orden de las filas
    meta.json        raíz, dimensión, semilla y digest del corpus

Un índice cuyo corpus cambió es StaleIndex: no se reconstruye en silencio.
"""

import json
import logging
import shutil
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Dict, List, Optional, Tuple

import numpy as np

from src.common.config import IndexConfig
from src.common.digests import canonical_json, sha256_hex
from src.common.errors import NotFound, StaleIndex, StoreFailure
from src.indexer.embedding import DIMENSION, cosine, embed
from src.indexer.text import tokenize

if TYPE_CHECKING:
    from src.afs.core import AgenticFileSystem

logger = logging.getLogger(__name__)

Postings = Dict[str, List[Tuple[str, int]]]

VECTOR_DTYPE = '<f4'


def corpus_digest(documents: Dict[str, bytes]) -> str:
    """Digest del corpus: sha256 de las líneas 'ruta\\x00sha256(contenido)' ordenadas."""
    lines = ''.join(f"{p}\x00{sha256_hex(documents[p])}\n" for p in sorted(documents))
    return sha256_hex(lines.encode('utf-8'))


@dataclass
class IndexHandle:
    """Índice en memoria (documentos ordenados por ruta)."""
    index_id: str
    root: str
    paths: List[str]
    vectors: np.ndarray
    postings: Postings = field(default_factory=dict)
    digest: str = ''

    def __len__(self) -> int:
        return len(self.paths)


def build_from_documents(index_id: str, root: str, documents: Dict[str, bytes]) -> IndexHandle:
    """
    Construye el índice a partir de {ruta: contenido}.

    Los vectores se redondean a float32, la misma precisión que persiste
    write_index: un índice recién construido y uno recargado puntúan igual.
    """
    paths = sorted(documents)
    vectors = np.zeros((len(paths), DIMENSION), dtype=np.float64)
    postings: Dict[str, List[Tuple[str, int]]] = {}
    for row, path in enumerate(paths):
        vectors[row] = embed(documents[path])
        for token, tf in sorted(Counter(tokenize(documents[path])).items()):
            postings.setdefault(token, []).append((path, tf))
    vectors = vectors.astype(VECTOR_DTYPE).astype(np.float64)
    return IndexHandle(index_id, root, paths, vectors, postings, corpus_digest(documents))


def rank(handle: IndexHandle, query: str, k: int) -> List[Tuple[str, float]]:
    """Top-k por coseno con la consulta; empates por ruta ascendente."""
    query_vec = embed(query)
    scored = [(path, cosine(query_vec, handle.vectors[row])) for row, path in enumerate(handle.paths)]
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored[:max(k, 0)]


def search_semantic(texts: Dict[str, str], query: str, limit: int) -> List[Tuple[str, float]]:
    """Búsqueda semántica efímera (no persiste índice)."""
    documents = {p: t.encode('utf-8') for p, t in texts.items()}
    return rank(build_from_documents('ephemeral', '/', documents), query, limit)


def write_index(handle: IndexHandle, directory: Path) -> None:
    tmp = directory.with_name(directory.name + '.tmp')
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    with open(tmp / 'postings.ndjson', 'w', encoding='utf-8') as f:
        for token in sorted(handle.postings):
            f.write(canonical_json({'token': token, 'entries': handle.postings[token]}) + '\n')
    (tmp / 'vectors.bin').write_bytes(handle.vectors.astype(VECTOR_DTYPE).tobytes())
    with open(tmp / 'paths.ndjson', 'w', encoding='utf-8') as f:
        for path in handle.paths:
            f.write(json.dumps(path) + '\n')
    meta = {
        'indexId': handle.index_id,
        'root': handle.root,
        'dimension': DIMENSION,
        'seed': IndexConfig.HASH_SEED,
        'documents': len(handle.paths),
        'corpusDigest': handle.digest,
    }
    (tmp / 'meta.json').write_text(json.dumps(meta, indent=2, sort_keys=True) + '\n', encoding='utf-8')
    if directory.exists():
        shutil.rmtree(directory)
    tmp.rename(directory)


def read_index(directory: Path) -> IndexHandle:
    try:
        meta = json.loads((directory / 'meta.json').read_text(encoding='utf-8'))
        paths = [json.loads(line) for line in (directory / 'paths.ndjson').read_text(encoding='utf-8').splitlines()]
        raw = np.frombuffer((directory / 'vectors.bin').read_bytes(), dtype=VECTOR_DTYPE)
        postings: Postings = {}
        for line in (directory / 'postings.ndjson').read_text(encoding='utf-8').splitlines():
            record = json.loads(line)
            postings[record['token']] = [(p, tf) for p, tf in record['entries']]
    except (OSError, ValueError, KeyError) as e:
        raise StoreFailure(f"Índice ilegible en {directory}: {e}")
    vectors = raw.reshape(len(paths), meta['dimension']).astype(np.float64)
    return IndexHandle(meta['indexId'], meta['root'], paths, vectors, postings, meta['corpusDigest'])


class IndexManager:
    """Construye, persiste y consulta índices sobre subárboles del espacio de nombres."""

    def __init__(self, afs: 'AgenticFileSystem', store_dir: Path):
        self.afs = afs
        self.index_dir = Path(store_dir) / 'index'

    def _corpus(self, root: str) -> Dict[str, bytes]:
        system = self.afs.scopes.system
        meta = self.afs.stat(root, scope=system)
        if not meta.is_directory:
            content, _ = self.afs.read(root, scope=system)
            return {root: content}
        documents = {}
        for path, node in self.afs.list(root, depth=self.afs.max_depth_at(root), scope=system):
            if not node.is_directory:
                documents[str(path)], _ = self.afs.read(path, scope=system)
        return documents

    def build_index(self, root: str, index_id: str = 'default') -> IndexHandle:
        """
        Construye y persiste el índice de ``root``.

        Raises:
            NotFound: si root no resuelve
        """
        with self.afs.operation('index', root) as frame:
            documents = self._corpus(root)
            handle = build_from_documents(index_id, root, documents)
            write_index(handle, self.index_dir / index_id)
            frame.set_output({'indexId': index_id, 'corpusDigest': handle.digest})
        logger.info(f"Índice '{index_id}' construido sobre {root}: {len(handle)} documentos")
        return handle

    def load(self, index_id: str = 'default') -> IndexHandle:
        directory = self.index_dir / index_id
        if not directory.exists():
            raise NotFound(f"Índice desconocido: '{index_id}'")
        return read_index(directory)

    def query_index(self, handle: IndexHandle, query: str, k: int) -> List[Tuple[str, float]]:
        """
        Ranking por coseno; StaleIndex si el corpus cambió desde la construcción.
        """
        with self.afs.operation('search', handle.root) as frame:
            frame.set_input({'indexId': handle.index_id, 'query': query, 'k': k})
            current = corpus_digest(self._corpus(handle.root))
            if current != handle.digest:
                raise StaleIndex(f"El corpus de '{handle.index_id}' cambió desde su construcción")
            results = rank(handle, query, k)
            frame.set_output(results)
            return results


__all__ = [
    'IndexHandle',
    'IndexManager',
    'build_from_documents',
    'corpus_digest',
    'rank',
    'search_semantic',
    'read_index',
    'write_index',
    'VECTOR_DTYPE',
]
