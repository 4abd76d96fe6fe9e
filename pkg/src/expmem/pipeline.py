"""Memory-augmented diagnosis of one case: scope, retrieve, filter, diagnose."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .agent.base import AgentGateway, AgentUnavailable, Diagnosis, MalformedResponse
from .agent.ops import CandidateMode, diagnose, propose_candidates, select_paths
from .core import CaseRecord
from .embeddings import EmbeddingProvider
from .retrieval import RetrievalConfig, RetrievalUnavailable, RetrievedNote, relevance_filter, retrieve
from .store import MemoryStore

logger = logging.getLogger(__name__)


@dataclass
class AugmentedOutcome:
    diagnosis: Diagnosis | None
    paths: list[tuple[str, str]] = field(default_factory=list)
    retained: list[RetrievedNote] = field(default_factory=list)
    failure: str | None = None
    degraded: str | None = None


def augmented_diagnosis(
    agent: AgentGateway,
    case: CaseRecord,
    store: MemoryStore,
    provider: EmbeddingProvider,
    config: RetrievalConfig,
    candidates: CandidateMode = "agent",
    attempt: int = 0,
) -> AugmentedOutcome:
    """Run the three inference steps for ``case``.

    Any failure before the final diagnosis degrades to memory-free diagnosis
    (recorded in ``degraded``); a failing final diagnosis is reported in
    ``failure`` with ``diagnosis=None``.
    """
    out = AugmentedOutcome(diagnosis=None)
    out.paths = select_paths(agent, case, store.taxonomy, config)
    if out.paths:
        top = None
        if candidates == "dataset":
            try:
                top = diagnose(agent, case, (), attempt=attempt).label
            except (AgentUnavailable, MalformedResponse):
                top = None
        labels = propose_candidates(agent, case, candidates, top)
        try:
            retrieved = retrieve(store, out.paths, labels, provider, config)
        except RetrievalUnavailable as exc:
            logger.warning("case %s: retrieval unavailable, diagnosing without memory: %s", case.id, exc)
            out.degraded = str(exc)
            retrieved = []
        out.retained = relevance_filter(agent, case, retrieved)
    try:
        out.diagnosis = diagnose(agent, case, out.retained, attempt=attempt)
    except (AgentUnavailable, MalformedResponse) as exc:
        out.failure = f"{type(exc).__name__}: {exc}"
    return out
