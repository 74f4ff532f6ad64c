"""Encoders: feature hashing, a linear token table with exact gradients,
and precomputed-vector lookup.

Both reference encoders share parameters between the query and text roles
and are pure functions of (config, text), so vectors are bitwise
reproducible across runs and threads. The linear encoder mean-pools token
vectors, which makes the score change of any single-token swap at fixed
length available in closed form -- that is what the white-box attack
optimizer relies on.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import CapabilityError, ConfigError, CorpusParseError, DomainError, EmbeddingLookupError
from .textnorm import strip_edge_punctuation

QUERY = "query"
TEXT = "text"

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes, seed: int = 0) -> int:
    """64-bit FNV-1a over ``data``, with the seed folded in up front."""
    h = _FNV_OFFSET
    for b in seed.to_bytes(8, "little", signed=False):
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


def hash_text(text: str, seed: int = 0) -> int:
    return fnv1a64(text.encode("utf-8"), seed)


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip punctuation hugging each token."""
    tokens = []
    for raw in text.lower().split():
        tok = strip_edge_punctuation(raw)
        if tok:
            tokens.append(tok)
    return tokens


class EncoderKind(str, Enum):
    FEATURE_HASH = "feature_hash"
    LINEAR_TABLE = "linear_table"
    PRECOMPUTED = "precomputed"


@dataclass(frozen=True)
class Encoder:
    kind: EncoderKind
    dim: int
    seed: int = 0
    differentiable: bool = False
    query_text_shared: bool = True
    vectors: Mapping[str, np.ndarray] | None = None

    def __post_init__(self):
        if self.dim < 2:
            raise ConfigError(f"encoder dim must be >= 2, got {self.dim}")
        if self.differentiable and self.kind is not EncoderKind.LINEAR_TABLE:
            raise ConfigError("only linear_table encoders can declare gradients")
        if self.kind is EncoderKind.PRECOMPUTED and self.vectors is None:
            raise ConfigError("precomputed encoder needs a vector table")


def feature_hash_encoder(dim: int, seed: int = 0) -> Encoder:
    return Encoder(kind=EncoderKind.FEATURE_HASH, dim=dim, seed=seed)


def linear_table_encoder(dim: int, seed: int = 0) -> Encoder:
    return Encoder(kind=EncoderKind.LINEAR_TABLE, dim=dim, seed=seed, differentiable=True)


def precomputed_encoder(vectors: Mapping[str, Sequence[float]], dim: int) -> Encoder:
    table = {key: np.asarray(vec, dtype=np.float64) for key, vec in vectors.items()}
    for key, vec in table.items():
        if vec.shape != (dim,):
            raise ConfigError(f"vector for {key!r} has shape {vec.shape}, expected ({dim},)")
        vec.flags.writeable = False
    return Encoder(kind=EncoderKind.PRECOMPUTED, dim=dim, vectors=table)


def load_precomputed(path: str | Path) -> Encoder:
    """Load a JSONL embedding table: a {"dim": n} header, then {"id", "vector"} rows."""
    path = Path(path)
    dim: int | None = None
    table: dict[str, list[float]] = {}
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusParseError(str(path), line_no, f"invalid JSON: {exc.msg}") from exc
            if dim is None:
                if "dim" not in obj:
                    raise CorpusParseError(str(path), line_no, 'missing {"dim": n} header line')
                dim = int(obj["dim"])
                continue
            table[obj["id"]] = obj["vector"]
    if dim is None:
        raise CorpusParseError(str(path), 1, "empty embedding file")
    return precomputed_encoder(table, dim)


@lru_cache(maxsize=131072)
def _token_vector(seed: int, dim: int, token: str) -> np.ndarray:
    """Per-token vector of the open-vocabulary linear table.

    Unit-normal entries scaled by 1/sqrt(dim), generated from a stream
    seeded by the hash of the token, so the vocabulary never needs a file.
    """
    rng = np.random.default_rng(hash_text(token, seed))
    vec = rng.standard_normal(dim) / math.sqrt(dim)
    vec.flags.writeable = False
    return vec


@lru_cache(maxsize=65536)
def _feature_hash_embed(seed: int, dim: int, text: str) -> np.ndarray:
    vec = np.zeros(dim, dtype=np.float64)
    for tok in tokenize(text):
        idx = fnv1a64(tok.encode("utf-8"), seed) % dim
        sign = 1.0 if fnv1a64(tok.encode("utf-8"), seed + 1) & 1 else -1.0
        vec[idx] += sign
    vec.flags.writeable = False
    return vec


@lru_cache(maxsize=65536)
def _linear_embed(seed: int, dim: int, text: str) -> np.ndarray:
    tokens = tokenize(text)
    if not tokens:
        vec = np.zeros(dim, dtype=np.float64)
    else:
        vec = np.zeros(dim, dtype=np.float64)
        for tok in tokens:
            vec += _token_vector(seed, dim, tok)
        vec /= len(tokens)
    vec.flags.writeable = False
    return vec


def embed(encoder: Encoder, role: str, text: str) -> np.ndarray:
    """Embed ``text`` under the given role.

    For the precomputed kind, ``text`` is the lookup key (a record id for
    the text role). Returned arrays are cached and read-only; copy before
    mutating.
    """
    if role not in (QUERY, TEXT):
        raise DomainError(f"role must be 'query' or 'text', got {role!r}")
    if encoder.kind is EncoderKind.FEATURE_HASH:
        return _feature_hash_embed(encoder.seed, encoder.dim, text)
    if encoder.kind is EncoderKind.LINEAR_TABLE:
        return _linear_embed(encoder.seed, encoder.dim, text)
    assert encoder.vectors is not None
    try:
        return encoder.vectors[text]
    except KeyError:
        raise EmbeddingLookupError(text) from None


def token_vector(encoder: Encoder, token: str) -> np.ndarray:
    if encoder.kind is not EncoderKind.LINEAR_TABLE:
        raise CapabilityError("token vectors exist only for the linear_table encoder")
    return _token_vector(encoder.seed, encoder.dim, token)


def swap_gradient(
    encoder: Encoder,
    query_vec: np.ndarray,
    tokens: Sequence[str],
    metric,
    candidates: Sequence[str],
) -> np.ndarray:
    """Exact score deltas for every (position, candidate) single-token swap.

    Entry (p, c) is Sim(query, embed(tokens with position p replaced by
    candidates[c])) minus Sim(query, embed(tokens)). Under the dot-product
    metric this is the closed form q . (E[c] - E[tokens[p]]) / len(tokens);
    under cosine the swapped mean vector is rescored directly. Both paths
    are exact because the pooled vector of a swapped sequence is the pooled
    vector plus the token difference.
    """
    from .retrieval import SimilarityMetric, similarity

    if not encoder.differentiable:
        raise CapabilityError("swap_gradient requires a differentiable encoder")
    tokens = list(tokens)
    if not tokens:
        raise DomainError("cannot compute swap deltas for an empty token sequence")
    metric = SimilarityMetric(metric)
    length = len(tokens)
    token_vecs = np.stack([_token_vector(encoder.seed, encoder.dim, t) for t in tokens])
    cand_vecs = np.stack([_token_vector(encoder.seed, encoder.dim, c) for c in candidates])
    base_sum = token_vecs.sum(axis=0)

    if metric is SimilarityMetric.DOT_PRODUCT:
        q_cand = cand_vecs @ query_vec
        q_tok = token_vecs @ query_vec
        return (q_cand[None, :] - q_tok[:, None]) / length

    base_mean = base_sum / length
    base_score = similarity(metric, query_vec, base_mean)
    qn = np.linalg.norm(query_vec)
    if qn == 0.0:
        raise DomainError("cosine similarity undefined for a zero vector")
    deltas = np.empty((length, len(candidates)), dtype=np.float64)
    for p in range(length):
        swapped = (base_sum[None, :] - token_vecs[p][None, :] + cand_vecs) / length
        norms = np.linalg.norm(swapped, axis=1)
        if np.any(norms == 0.0):
            raise DomainError("cosine similarity undefined for a zero vector")
        deltas[p] = (swapped @ query_vec) / (norms * qn) - base_score
        for c, cand in enumerate(candidates):
            if cand == tokens[p]:  # identity swap is exactly zero, not float noise
                deltas[p, c] = 0.0
    return deltas
