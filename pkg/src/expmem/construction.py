"""Two-phase experience memory construction.

Phase 1 diagnoses every case without memory and turns each error into a
note. Phase 2 re-diagnoses every case with memory and

* extracts a note for errors whose pair has no note yet,
* supplements the existing note when an error recurs despite it,
* annotates retrieved notes that turned a correct phase-1 answer wrong.

Agent calls for distinct cases may overlap, but store mutations and log
entries are always applied in corpus order, so results do not depend on the
worker count.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Literal, Sequence, TypeVar

from .agent.base import AgentGateway, AgentUnavailable, ExtractionFailed, MalformedResponse
from .agent.ops import CandidateMode, diagnose, extract_note, select_paths
from .core import (
    CaseRecord,
    DiagnosisLabel,
    EqualLabels,
    ExperienceNote,
    ExpMemError,
    InvalidNote,
    Provenance,
    Taxonomy,
    canonical_json,
    checksum,
    grade,
)
from .embeddings import EmbeddingProvider
from .pipeline import augmented_diagnosis
from .retrieval import RetrievalConfig, RetrievedNote
from .store import MemoryStore

logger = logging.getLogger(__name__)

PHASE1_ATTEMPT = 0
PHASE2_ATTEMPT = 1

ACTIONS = ("none", "note-extracted", "note-supplemented", "note-flagged-misleading", "extraction-failed")

T = TypeVar("T")
R = TypeVar("R")


class ConfigError(ExpMemError, ValueError):
    pass


@dataclass(frozen=True)
class ConstructionConfig:
    rounds: int = 2
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    candidates: CandidateMode = "agent"
    snapshot: Literal["streaming", "frozen"] = "streaming"
    workers: int = 1

    def __post_init__(self) -> None:
        if self.rounds not in (1, 2):
            raise ConfigError(f"rounds must be 1 or 2, got {self.rounds}")
        if self.candidates not in ("agent", "dataset"):
            raise ConfigError(f"unknown candidates mode {self.candidates!r}")
        if self.snapshot not in ("streaming", "frozen"):
            raise ConfigError(f"unknown snapshot mode {self.snapshot!r}")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")


@dataclass(frozen=True)
class ConstructionEntry:
    case_id: str
    phase: int
    diagnosis: str | None
    correct: bool
    action: str = "none"
    retrieved: tuple[str, ...] = ()
    error: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "case_id": self.case_id,
            "phase": self.phase,
            "diagnosis": self.diagnosis,
            "correct": self.correct,
            "action": self.action,
            "retrieved": list(self.retrieved),
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ConstructionEntry":
        return cls(
            case_id=d["case_id"], phase=d["phase"], diagnosis=d["diagnosis"], correct=d["correct"],
            action=d["action"], retrieved=tuple(d.get("retrieved", ())), error=d.get("error"),
        )


@dataclass
class ConstructionLog:
    entries: list[ConstructionEntry] = field(default_factory=list)

    def __iter__(self) -> Iterator[ConstructionEntry]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def phase(self, n: int) -> list[ConstructionEntry]:
        return [e for e in self.entries if e.phase == n]

    def summary(self) -> dict[str, int]:
        counts = Counter(e.action for e in self.entries)
        return {action: counts.get(action, 0) for action in ACTIONS}

    def extend(self, other: "ConstructionLog") -> "ConstructionLog":
        return ConstructionLog(self.entries + other.entries)

    def write(self, path: str | Path, meta: dict[str, Any] | None = None) -> None:
        records = [e.to_dict() for e in self.entries]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(canonical_json({"type": "meta", "config": meta or {}}) + "\n")
            for rec in records:
                fh.write(canonical_json({"type": "entry", **rec}) + "\n")
            fh.write(canonical_json({
                "type": "footer",
                "summary": self.summary(),
                "content_checksum": checksum(records),
            }) + "\n")

    @classmethod
    def read(cls, path: str | Path) -> "ConstructionLog":
        entries = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                if rec.get("type") == "entry":
                    entries.append(ConstructionEntry.from_dict(rec))
        return cls(entries)


def _ordered_map(fn: Callable[[T], R], items: Sequence[T], workers: int) -> Iterator[R]:
    """Map preserving input order; results may be computed concurrently."""
    if workers <= 1 or len(items) <= 1:
        return map(fn, items)
    pool = ThreadPoolExecutor(max_workers=workers)

    def gen() -> Iterator[R]:
        with pool:
            yield from pool.map(fn, items)

    return gen()


def _placement_and_note(
    agent: AgentGateway,
    case: CaseRecord,
    wrong: DiagnosisLabel,
    taxonomy: Taxonomy,
    retrieval: RetrievalConfig,
    phase_tag: str,
) -> tuple[ExperienceNote | None, str | None]:
    """Ask the agent where the note belongs (first path wins), then extract it."""
    paths = select_paths(agent, case, taxonomy, retrieval)
    if not paths:
        return None, "no valid anatomical path for note placement"
    try:
        note = extract_note(
            agent, case, wrong, case.ground_truth, case.discussion, paths[0], taxonomy, phase=phase_tag
        )
    except (ExtractionFailed, EqualLabels) as exc:
        return None, str(exc)
    return note, None


def _apply(store: MemoryStore, note: ExperienceNote) -> str | None:
    try:
        store.insert_or_merge(note)
    except InvalidNote as exc:
        return str(exc)
    return None


@dataclass
class _Phase1Result:
    entry: ConstructionEntry
    note: ExperienceNote | None = None


def run_phase1(
    corpus: Sequence[CaseRecord],
    agent: AgentGateway,
    store: MemoryStore,
    config: ConstructionConfig = ConstructionConfig(),
) -> tuple[MemoryStore, ConstructionLog]:
    """Memory-free pass. Diagnose never sees the store here."""
    taxonomy = store.taxonomy

    def work(case: CaseRecord) -> _Phase1Result:
        try:
            d = diagnose(agent, case, (), attempt=PHASE1_ATTEMPT)
        except (AgentUnavailable, MalformedResponse) as exc:
            return _Phase1Result(ConstructionEntry(case.id, 1, None, False, "none", error=f"diagnosis failed: {exc}"))
        if grade(d.label, case.ground_truth):
            return _Phase1Result(ConstructionEntry(case.id, 1, d.label.text, True))
        note, error = _placement_and_note(agent, case, d.label, taxonomy, config.retrieval, "phase1")
        if note is None:
            return _Phase1Result(ConstructionEntry(case.id, 1, d.label.text, False, "extraction-failed", error=error))
        return _Phase1Result(ConstructionEntry(case.id, 1, d.label.text, False, "note-extracted"), note)

    log = ConstructionLog()
    for result in _ordered_map(work, list(corpus), config.workers):
        entry = result.entry
        if result.note is not None:
            error = _apply(store, result.note)
            if error is not None:
                entry = ConstructionEntry(entry.case_id, 1, entry.diagnosis, False, "extraction-failed", error=error)
        log.entries.append(entry)
    return store, log


def _misleading_addendum(item: RetrievedNote, case: CaseRecord, wrong: DiagnosisLabel) -> ExperienceNote:
    note = item.note
    return ExperienceNote(
        department=note.department,
        organ_region=note.organ_region,
        differentials=note.differentials,
        confusions=note.confusions,
        discriminators=note.discriminators,
        decision_rule=note.decision_rule,
        error_analysis=(
            f"Case {case.id}: answered {wrong.text} instead of {case.ground_truth.text} after "
            f"consulting this note, although the memory-free answer was correct.",
        ),
        provenance=(Provenance(case.id, "phase2-misleading"),),
    )


@dataclass
class _Phase2Result:
    case: CaseRecord
    diagnosis: DiagnosisLabel | None
    correct: bool
    retained: list[RetrievedNote]
    error: str | None = None
    note: ExperienceNote | None = None
    extraction_error: str | None = None


def run_phase2(
    corpus: Sequence[CaseRecord],
    agent: AgentGateway,
    store: MemoryStore,
    phase1_log: ConstructionLog,
    retrieval_config: RetrievalConfig | None = None,
    provider: EmbeddingProvider | None = None,
    config: ConstructionConfig = ConstructionConfig(),
) -> tuple[MemoryStore, ConstructionLog]:
    """Re-diagnose every case with memory access and refine the store.

    In ``streaming`` mode retrieval sees mutations made by earlier cases of
    the same pass, which forces sequential processing. ``frozen`` mode reads
    a snapshot taken at pass start and lets agent calls run concurrently.
    """
    if provider is None:
        raise ConfigError("phase 2 needs an embedding provider")
    retrieval = retrieval_config or config.retrieval
    phase1_correct = {e.case_id: e.correct for e in phase1_log.phase(1)}
    missing = [c.id for c in corpus if c.id not in phase1_correct]
    if missing:
        raise ConfigError(f"phase-1 log does not cover cases {missing[:5]}")
    taxonomy = store.taxonomy
    frozen = store.snapshot() if config.snapshot == "frozen" else None
    view = frozen if frozen is not None else store

    def work(case: CaseRecord) -> _Phase2Result:
        outcome = augmented_diagnosis(
            agent, case, view, provider, retrieval, config.candidates, attempt=PHASE2_ATTEMPT
        )
        if outcome.diagnosis is None:
            return _Phase2Result(case, None, False, outcome.retained, error=f"diagnosis failed: {outcome.failure}")
        label = outcome.diagnosis.label
        correct = grade(label, case.ground_truth)
        result = _Phase2Result(case, label, correct, outcome.retained, error=outcome.degraded)
        if not correct and not (phase1_correct[case.id] and outcome.retained):
            result.note, result.extraction_error = _placement_and_note(
                agent, case, label, taxonomy, retrieval, "phase2-supplement"
            )
        return result

    log = ConstructionLog()
    workers = config.workers if frozen is not None else 1
    for r in _ordered_map(work, list(corpus), workers):
        keys = tuple(item.key for item in r.retained)
        diag = r.diagnosis.text if r.diagnosis is not None else None
        action, error = "none", r.error
        if r.diagnosis is not None and not r.correct:
            if phase1_correct[r.case.id] and r.retained:
                action = "note-flagged-misleading"
                for item in r.retained:
                    failure = _apply(store, _misleading_addendum(item, r.case, r.diagnosis))
                    if failure is not None:
                        action, error = "extraction-failed", failure
            elif r.note is None:
                action, error = "extraction-failed", r.extraction_error
            else:
                existed = store.get(*r.note.triple) is not None
                failure = _apply(store, r.note)
                if failure is not None:
                    action, error = "extraction-failed", failure
                else:
                    action = "note-supplemented" if existed else "note-extracted"
        log.entries.append(ConstructionEntry(r.case.id, 2, diag, r.correct, action, keys, error))
    return store, log


def build(
    corpus: Sequence[CaseRecord],
    agent: AgentGateway,
    provider: EmbeddingProvider | None,
    config: ConstructionConfig = ConstructionConfig(),
    *,
    taxonomy: Taxonomy | None = None,
    store: MemoryStore | None = None,
    store_path: str | Path | None = None,
    log_path: str | Path | None = None,
    meta: dict[str, Any] | None = None,
) -> tuple[MemoryStore, ConstructionLog]:
    """Run one or two construction rounds and optionally persist store and log."""
    if config.rounds not in (1, 2):
        raise ConfigError(f"rounds must be 1 or 2, got {config.rounds}")
    if store is None:
        if taxonomy is None:
            from .core import default_taxonomy

            taxonomy = default_taxonomy()
        store = MemoryStore(taxonomy)
    corpus = list(corpus)
    store, log = run_phase1(corpus, agent, store, config)
    if config.rounds == 2:
        store, log2 = run_phase2(corpus, agent, store, log, config.retrieval, provider, config)
        log = log.extend(log2)
    if store_path is not None:
        store.save(store_path, meta=meta)
    if log_path is not None:
        log.write(log_path, meta=meta)
    logger.info("construction finished: %d notes, actions %s", len(store), log.summary())
    return store, log


def provenance_ids(store: MemoryStore) -> Iterable[tuple[str, str]]:
    for note in store.notes():
        for p in note.provenance:
            yield p.case_id, p.phase
