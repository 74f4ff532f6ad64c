"""Similarity scoring and exact top-k retrieval over a knowledge database.

Retrieval is a full scan, not an approximate index: the attack math
assumes exact top-k, and a few thousand records cost nothing. Ties are
broken by ascending record id so runs are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np

from .corpus import KnowledgeDatabase
from .embedding import QUERY, TEXT, Encoder, EncoderKind, embed
from .errors import DomainError


class SimilarityMetric(str, Enum):
    DOT_PRODUCT = "dot_product"
    COSINE = "cosine"


class RetrievedEntry(NamedTuple):
    record_id: str
    score: float


@dataclass(frozen=True)
class RetrievalResult:
    entries: tuple[RetrievedEntry, ...]
    k: int

    def record_ids(self) -> list[str]:
        return [e.record_id for e in self.entries]


def similarity(metric: SimilarityMetric | str, u: np.ndarray, v: np.ndarray) -> float:
    metric = SimilarityMetric(metric)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DomainError(f"dimension mismatch: {u.shape} vs {v.shape}")
    if metric is SimilarityMetric.DOT_PRODUCT:
        return float(u @ v)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise DomainError("cosine similarity undefined for a zero vector")
    return float((u @ v) / (nu * nv))


def retrieve_top_k(
    db: KnowledgeDatabase,
    encoder: Encoder,
    metric: SimilarityMetric | str,
    question: str,
    k: int,
) -> RetrievalResult:
    """Score every record against the question and keep the k best.

    Scores are exact; ordering is (score descending, record id ascending).
    For the precomputed encoder, text vectors are looked up by record id
    and the query vector by the question string itself.
    """
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    metric = SimilarityMetric(metric)
    if not db.records:
        return RetrievalResult(entries=(), k=k)

    query_vec = embed(encoder, QUERY, question)
    by_id = encoder.kind is EncoderKind.PRECOMPUTED
    scored = []
    for rec in db.records:
        key = rec.id if by_id else rec.text
        score = similarity(metric, query_vec, embed(encoder, TEXT, key))
        scored.append((rec.id, score))
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    top = scored[: min(k, len(scored))]
    return RetrievalResult(entries=tuple(RetrievedEntry(i, s) for i, s in top), k=k)
