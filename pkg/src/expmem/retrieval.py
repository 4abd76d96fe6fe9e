"""Anatomically scoped, pair-keyed note retrieval.

Both sides of the comparison are pair display strings ("A vs. B"): every
candidate pair built from the hypotheses is embedded, every note's key is
embedded, and a note scores the best cosine it reaches against any query
pair. Notes at or above ``tau`` are ranked and cut to ``top_k``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from .agent.ops import score_relevance
from .core import (
    CaseRecord,
    ExperienceNote,
    ExpMemError,
    LabelLike,
    PairKey,
    canonical_pair_key,
    dedupe_labels,
)
from .embeddings import EmbeddingProvider, mock_embedding_provider
from .store import MemoryStore

logger = logging.getLogger(__name__)

# Similarities are rounded so that near-ties from float noise become exact ties
# resolved by the display/path tie-break, independent of BLAS summation order.
SIMILARITY_DECIMALS = 12


class DimensionMismatch(ExpMemError, ValueError):
    pass


class ZeroVector(ExpMemError, ValueError):
    pass


class RetrievalUnavailable(ExpMemError):
    """The embedding provider failed; callers fall back to memory-free diagnosis."""


class ScopeError(ExpMemError, ValueError):
    pass


@dataclass(frozen=True)
class RetrievalConfig:
    tau: float = 0.9
    top_k: int = 10
    max_paths: int = 2
    cross_department: bool = True

    def __post_init__(self) -> None:
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")
        if self.top_k < 1:
            raise ValueError(f"top_k must be positive, got {self.top_k}")
        if self.max_paths not in (1, 2):
            raise ValueError(f"max_paths must be 1 or 2, got {self.max_paths}")


@dataclass(frozen=True)
class RetrievedNote:
    note: ExperienceNote
    similarity: float
    matched_query_pair: PairKey
    retained_after_filter: bool = True

    @property
    def key(self) -> str:
        return f"{self.note.department}/{self.note.organ_region}/{self.note.differentials.display}"


def cosine_similarity(u: Sequence[float], v: Sequence[float]) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise DimensionMismatch(f"vector shapes differ: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ZeroVector("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def candidate_pairs(candidates: Iterable[LabelLike]) -> list[PairKey]:
    labels = dedupe_labels(candidates)
    pairs = {canonical_pair_key(a, b) for a, b in combinations(labels, 2)}
    return sorted(pairs, key=lambda p: (p.first.norm, p.second.norm, p.display))


def _check_scope(paths: Sequence[tuple[str, str]], config: RetrievalConfig) -> None:
    if len(paths) > config.max_paths:
        raise ScopeError(f"{len(paths)} paths exceed max_paths={config.max_paths}")
    if not config.cross_department and len({dept for dept, _ in paths}) > 1:
        raise ScopeError("cross-department retrieval is disabled but paths span departments")


def score_notes(
    store: MemoryStore,
    paths: Sequence[tuple[str, str]],
    candidates: Iterable[LabelLike],
    provider: EmbeddingProvider,
) -> list[RetrievedNote]:
    """Score every note under ``paths`` without thresholding or truncation.

    Returned in store order (department, organ, pair display).
    """
    notes = store.notes_under_paths(paths)
    queries = candidate_pairs(candidates)
    if not notes or not queries:
        return []
    texts = list(dict.fromkeys([q.display for q in queries] + [n.differentials.display for n in notes]))
    try:
        matrix = np.asarray(provider.embed(texts), dtype=float)
    except Exception as exc:  # noqa: BLE001 - any provider fault degrades retrieval
        raise RetrievalUnavailable(f"embedding provider failed: {exc}") from exc
    if matrix.shape != (len(texts), provider.dimension):
        raise RetrievalUnavailable(f"provider returned shape {matrix.shape}")
    vectors = dict(zip(texts, matrix))
    scored = []
    for note in notes:
        target = vectors[note.differentials.display]
        best, matched = -2.0, queries[0]
        for query in queries:
            sim = cosine_similarity(vectors[query.display], target)
            if sim > best:
                best, matched = sim, query
        scored.append(RetrievedNote(note=note, similarity=round(best, SIMILARITY_DECIMALS), matched_query_pair=matched))
    return scored


def rank(scored: Iterable[RetrievedNote], config: RetrievalConfig) -> list[RetrievedNote]:
    kept = [r for r in scored if r.similarity >= config.tau]
    kept.sort(
        key=lambda r: (
            -r.similarity,
            r.note.differentials.display,
            r.note.department,
            r.note.organ_region,
        )
    )
    return kept[: config.top_k]


def retrieve(
    store: MemoryStore,
    paths: Sequence[tuple[str, str]],
    candidates: Iterable[LabelLike],
    provider: EmbeddingProvider,
    config: RetrievalConfig = RetrievalConfig(),
) -> list[RetrievedNote]:
    """Notes under ``paths`` whose key matches a candidate pair at similarity >= tau.

    Sorted by similarity (descending), then pair display, department and
    organ; at most ``config.top_k`` results.
    """
    paths = [(p[0], p[1]) for p in paths]
    _check_scope(paths, config)
    return rank(score_notes(store, paths, candidates, provider), config)


def relevance_filter(agent, case: CaseRecord, retrieved: Sequence[RetrievedNote]) -> list[RetrievedNote]:
    """Drop notes the agent calls irrelevant. Unknown verdicts and failures keep the note."""
    kept = []
    for item in retrieved:
        verdict = score_relevance(agent, case, item.note)
        if verdict == "irrelevant":
            logger.debug("case %s: dropped %s as irrelevant", case.id, item.key)
            continue
        kept.append(replace(item, retained_after_filter=True))
    return kept


__all__ = [
    "DimensionMismatch",
    "RetrievalConfig",
    "RetrievalUnavailable",
    "RetrievedNote",
    "ScopeError",
    "ZeroVector",
    "candidate_pairs",
    "cosine_similarity",
    "mock_embedding_provider",
    "rank",
    "relevance_filter",
    "retrieve",
    "score_notes",
]
