"""Hybrid dense + sparse vector index over document chunks.

The reference embedder is a deterministic hashed bag-of-words so every test
and fixture is reproducible without a model: tokens are lowercased
``[a-z0-9_]+`` runs minus a small stopword list, each token increments the
bucket ``sha256(token)[:4] % dim``, and the vector is L2-normalized (the
empty text stays the zero vector). Sparse vectors are L2-normalized token
count maps over the same tokens; the sparse score is their dot product.
Fused score: ``alpha * dense + (1 - alpha) * sparse``.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .relational import ChunkRef

DEFAULT_DIM = 256
DEFAULT_ALPHA = 0.5

# Function words carry no retrieval signal for the reference scorer; leaving
# them in would make every English query overlap every English chunk.
STOPWORDS = frozenset(
    """a an and are as at be but by for from had has have he her his i if in
    is it its of on one or our she so that the their them they this to was
    were what where which who whose will with you your""".split()
)

_TOKEN_RE = re.compile(r"[a-z0-9_]+")


class EmptyIndexError(RuntimeError):
    """Search was issued against an index with no chunks."""


def tokenize(text: str) -> list[str]:
    return [t for t in _TOKEN_RE.findall(text.lower()) if t not in STOPWORDS]


class HashedBowEmbedder:
    """Deterministic hashed bag-of-words embedder (the reference Embedder)."""

    def __init__(self, dim: int = DEFAULT_DIM):
        self.dim = dim

    def bucket(self, token: str) -> int:
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        return int.from_bytes(digest[:4], "big") % self.dim

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        for token in tokenize(text):
            vec[self.bucket(token)] += 1.0
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec


_DEFAULT_EMBEDDER = HashedBowEmbedder()


def embed(text: str) -> np.ndarray:
    """Embed with the module-default reference embedder (dim 256)."""
    return _DEFAULT_EMBEDDER.embed(text)


def sparse_vector(text: str) -> dict[str, float]:
    counts: dict[str, float] = {}
    for token in tokenize(text):
        counts[token] = counts.get(token, 0.0) + 1.0
    norm = sum(w * w for w in counts.values()) ** 0.5
    if norm > 0:
        counts = {t: w / norm for t, w in counts.items()}
    return counts


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def sparse_dot(a: Mapping[str, float], b: Mapping[str, float]) -> float:
    if len(b) < len(a):
        a, b = b, a
    return float(sum(w * b[t] for t, w in a.items() if t in b))


@dataclass(frozen=True)
class Chunk:
    chunk_id: int
    document_id: int
    text: str
    dense_vec: np.ndarray = field(compare=False, repr=False)
    sparse_vec: Mapping[str, float] = field(compare=False, repr=False)
    metadata: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if "document_id" not in self.metadata:
            md = dict(self.metadata)
            md["document_id"] = self.document_id
            object.__setattr__(self, "metadata", md)

    @property
    def ref(self) -> ChunkRef:
        return ChunkRef(document_id=self.document_id, chunk_id=self.chunk_id)


@dataclass(frozen=True)
class ChunkHit:
    chunk: Chunk
    dense_score: float
    sparse_score: float
    fused_score: float


class VectorIndex:
    """Exact-scoring hybrid index (no ANN; fixture scale)."""

    def __init__(
        self,
        dim: int = DEFAULT_DIM,
        alpha: float = DEFAULT_ALPHA,
        embedder: HashedBowEmbedder | None = None,
    ):
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        self.dim = dim
        self.alpha = alpha
        self.embedder = embedder or HashedBowEmbedder(dim)
        self.chunks: list[Chunk] = []

    def __len__(self) -> int:
        return len(self.chunks)

    def add(self, chunk: Chunk) -> None:
        if chunk.dense_vec.shape != (self.dim,):
            raise ValueError(f"chunk {chunk.chunk_id}: dense dim {chunk.dense_vec.shape} != ({self.dim},)")
        self.chunks.append(chunk)

    def add_text(self, chunk_id: int, document_id: int, text: str, metadata: Mapping[str, object] | None = None) -> Chunk:
        chunk = Chunk(
            chunk_id=chunk_id,
            document_id=document_id,
            text=text,
            dense_vec=self.embedder.embed(text),
            sparse_vec=sparse_vector(text),
            metadata=dict(metadata or {}),
        )
        self.add(chunk)
        return chunk

    def search(
        self,
        query_text: str,
        k: int,
        doc_filter: Iterable[int] | None = None,
    ) -> list[ChunkHit]:
        """Top-k chunks by fused score; ties broken by ascending chunk id.

        ``doc_filter`` restricts candidates by document_id before ranking;
        an empty filter set therefore yields an empty result.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        if not self.chunks:
            raise EmptyIndexError("vector index holds no chunks")
        if doc_filter is None:
            candidates = self.chunks
        else:
            allowed = set(doc_filter)
            candidates = [c for c in self.chunks if c.document_id in allowed]
        if not candidates:
            return []

        q_dense = self.embedder.embed(query_text)
        q_sparse = sparse_vector(query_text)
        hits = []
        for chunk in candidates:
            dense = cosine(q_dense, chunk.dense_vec)
            sparse = sparse_dot(q_sparse, chunk.sparse_vec)
            fused = self.alpha * dense + (1.0 - self.alpha) * sparse
            hits.append(ChunkHit(chunk=chunk, dense_score=dense, sparse_score=sparse, fused_score=fused))
        hits.sort(key=lambda h: (-h.fused_score, h.chunk.chunk_id))
        return hits[:k]
