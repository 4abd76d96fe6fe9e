"""Paired baseline / with-memory runs, metrics and the ablation grid."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Literal, Mapping, Sequence

import yaml

from .agent.base import AgentGateway, AgentUnavailable, MalformedResponse
from .agent.ops import CandidateMode, diagnose, judge_match
from .construction import ConstructionConfig, _ordered_map, build
from .core import CaseRecord, ExpMemError, canonical_json, checksum, grade
from .embeddings import EmbeddingProvider
from .pipeline import augmented_diagnosis
from .retrieval import RetrievalConfig
from .store import MemoryStore

logger = logging.getLogger(__name__)

EVAL_ATTEMPT_BASE = 2

Mode = Literal["baseline", "with-memory"]


class CaseSetMismatch(ExpMemError, ValueError):
    pass


class TrialCountMismatch(ExpMemError, ValueError):
    pass


class GridError(ExpMemError, ValueError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    candidates: CandidateMode = "agent"
    grading: Literal["exact", "judge"] = "exact"
    workers: int = 1

    def snapshot(self) -> dict[str, Any]:
        """Config echo for run metadata; worker count is scheduling only and left out."""
        return {
            "retrieval": asdict(self.retrieval),
            "candidates": self.candidates,
            "grading": self.grading,
        }


@dataclass(frozen=True)
class EvalEntry:
    case_id: str
    retrieved: bool
    note_keys: tuple[str, ...]
    diagnosis: str | None
    correct: bool
    failure: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "case_id": self.case_id,
            "retrieved": self.retrieved,
            "note_keys": list(self.note_keys),
            "diagnosis": self.diagnosis,
            "correct": self.correct,
            "failure": self.failure,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EvalEntry":
        return cls(d["case_id"], d["retrieved"], tuple(d["note_keys"]), d["diagnosis"], d["correct"], d.get("failure"))


@dataclass
class RunLog:
    mode: str
    trial: int
    entries: list[EvalEntry] = field(default_factory=list)
    metadata: dict[str, Any] = field(default_factory=dict)

    def by_case(self) -> dict[str, EvalEntry]:
        return {e.case_id: e for e in self.entries}

    @property
    def failures(self) -> int:
        return sum(1 for e in self.entries if e.failure)


# --------------------------------------------------------------------------- run logs on disk


def _meta_record(mode: str, trials: int, metadata: Mapping[str, Any]) -> dict[str, Any]:
    return {"type": "meta", "mode": mode, "trials": trials, **metadata}


def read_runlogs(path: str | Path) -> tuple[dict[str, Any] | None, list[RunLog], bool]:
    """Read a run-log file; returns (meta, logs, complete). A torn final line is ignored."""
    meta = None
    logs: dict[int, RunLog] = {}
    complete = False
    with open(path, encoding="utf-8") as fh:
        lines = fh.readlines()
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            if i == len(lines) - 1:
                break
            raise
        kind = rec.get("type")
        if kind == "meta":
            meta = rec
        elif kind == "entry":
            trial = rec["trial"]
            log = logs.setdefault(trial, RunLog(rec["mode"], trial))
            log.entries.append(EvalEntry.from_dict(rec))
        elif kind == "footer":
            complete = True
    if meta is not None:
        extra = {k: v for k, v in meta.items() if k not in ("type", "mode", "trials")}
        for log in logs.values():
            log.metadata = extra
    return meta, [logs[t] for t in sorted(logs)], complete


class _RunLogWriter:
    def __init__(self, path: Path, meta: dict[str, Any], existing: list[dict[str, Any]]):
        self.path = path
        self.records = list(existing)
        self._fh = open(path, "w", encoding="utf-8")
        self._fh.write(canonical_json(meta) + "\n")
        for rec in existing:
            self._fh.write(canonical_json(rec) + "\n")
        self._fh.flush()

    def write(self, rec: dict[str, Any]) -> None:
        self.records.append(rec)
        self._fh.write(canonical_json(rec) + "\n")
        self._fh.flush()

    def close(self, finished: bool) -> None:
        if finished:
            self._fh.write(canonical_json({"type": "footer", "content_checksum": checksum(self.records)}) + "\n")
        self._fh.close()


# --------------------------------------------------------------------------- runs


def _grade(agent: AgentGateway, case: CaseRecord, label, grading: str) -> bool:
    if grading == "judge":
        return judge_match(agent, case, label)
    return grade(label, case.ground_truth)


def _evaluate_case(
    case: CaseRecord,
    agent: AgentGateway,
    store: MemoryStore | None,
    provider: EmbeddingProvider | None,
    config: EvalConfig,
    mode: str,
    attempt: int,
) -> EvalEntry:
    if mode == "baseline":
        try:
            d = diagnose(agent, case, (), attempt=attempt)
        except (AgentUnavailable, MalformedResponse) as exc:
            return EvalEntry(case.id, False, (), None, False, f"{type(exc).__name__}: {exc}")
        return EvalEntry(case.id, False, (), d.label.text, _grade(agent, case, d.label, config.grading))
    outcome = augmented_diagnosis(agent, case, store, provider, config.retrieval, config.candidates, attempt)
    keys = tuple(item.key for item in outcome.retained)
    if outcome.diagnosis is None:
        return EvalEntry(case.id, bool(keys), keys, None, False, outcome.failure)
    label = outcome.diagnosis.label
    return EvalEntry(case.id, bool(keys), keys, label.text, _grade(agent, case, label, config.grading))


def run_eval(
    testset: Sequence[CaseRecord],
    agent: AgentGateway,
    store: MemoryStore | None,
    provider: EmbeddingProvider | None,
    config: EvalConfig = EvalConfig(),
    mode: Mode = "with-memory",
    trials: int = 1,
    log_path: str | Path | None = None,
    metadata: Mapping[str, Any] | None = None,
) -> list[RunLog]:
    """Evaluate every case ``trials`` times.

    With ``log_path`` entries are appended as they finish; an existing file
    from an interrupted run with identical metadata is resumed by
    (trial, case id).
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if mode not in ("baseline", "with-memory"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "with-memory" and (store is None or provider is None):
        raise ValueError("with-memory runs need a store and an embedding provider")
    base_meta = {
        "agent": agent.identity,
        "config": config.snapshot() if mode == "with-memory" else {"grading": config.grading},
        **(metadata or {}),
    }
    meta = _meta_record(mode, trials, base_meta)

    done: dict[tuple[int, str], EvalEntry] = {}
    writer = None
    if log_path is not None:
        log_path = Path(log_path)
        existing: list[dict[str, Any]] = []
        if log_path.exists():
            old_meta, old_logs, _ = read_runlogs(log_path)
            if old_meta is not None and old_meta == json.loads(canonical_json(meta)):
                for log in old_logs:
                    for e in log.entries:
                        done[(log.trial, e.case_id)] = e
                        existing.append({"type": "entry", "mode": mode, "trial": log.trial, **e.to_dict()})
            elif old_meta is not None:
                logger.warning("%s was produced with different settings; starting over", log_path)
        writer = _RunLogWriter(log_path, meta, existing)

    logs = []
    finished = False
    try:
        for trial in range(trials):
            attempt = EVAL_ATTEMPT_BASE + trial
            todo = [c for c in testset if (trial, c.id) not in done]

            def work(case: CaseRecord, attempt: int = attempt) -> EvalEntry:
                return _evaluate_case(case, agent, store, provider, config, mode, attempt)

            fresh = {}
            for entry in _ordered_map(work, todo, config.workers):
                fresh[entry.case_id] = entry
                if writer is not None:
                    writer.write({"type": "entry", "mode": mode, "trial": trial, **entry.to_dict()})
            entries = [done.get((trial, c.id)) or fresh[c.id] for c in testset]
            logs.append(RunLog(mode, trial, entries, dict(base_meta)))
        finished = True
    finally:
        if writer is not None:
            writer.close(finished)
    return logs


# --------------------------------------------------------------------------- metrics


@dataclass(frozen=True)
class MetricsReport:
    n_cases: int
    trials: int
    accuracy_baseline: float
    accuracy_exp: float
    delta: float
    recall: float
    precision: float | None
    beneficial: float
    harmful: float
    counts: Mapping[str, int]
    beneficial_cases: tuple[str, ...] = ()
    harmful_cases: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_cases": self.n_cases,
            "trials": self.trials,
            "accuracy_baseline": self.accuracy_baseline,
            "accuracy_exp": self.accuracy_exp,
            "delta": self.delta,
            "recall": self.recall,
            "precision": self.precision,
            "beneficial": self.beneficial,
            "harmful": self.harmful,
            "counts": dict(self.counts),
            "beneficial_cases": list(self.beneficial_cases),
            "harmful_cases": list(self.harmful_cases),
        }


def _pct(x: float | None) -> str:
    return "n/a" if x is None else f"{100 * x:.1f}%"


def _signed_pct(x: float) -> str:
    return f"{100 * x:+.1f}%"


def format_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]
    line = lambda cells: "  ".join(  # noqa: E731
        str(c).ljust(w) if i == 0 else str(c).rjust(w) for i, (c, w) in enumerate(zip(cells, widths))
    )
    rule = "-" * (sum(widths) + 2 * (len(widths) - 1))
    return "\n".join([line(header), rule, *[line(r) for r in rows]]) + "\n"


REPORT_HEADER = ("Model", "Baseline", "w/Exp", "Delta", "Recall", "Precision", "Beneficial", "Harmful")


def report_row(name: str, report: MetricsReport) -> list[str]:
    return [
        name,
        _pct(report.accuracy_baseline),
        _pct(report.accuracy_exp),
        _signed_pct(report.delta),
        _pct(report.recall),
        _pct(report.precision),
        _pct(report.beneficial),
        _pct(report.harmful),
    ]


def render_report(report: MetricsReport, name: str = "agent") -> str:
    return format_table(REPORT_HEADER, [report_row(name, report)])


def _index(logs: Sequence[RunLog], label: str) -> tuple[list[dict[str, EvalEntry]], set[str]]:
    if not logs:
        raise TrialCountMismatch(f"no {label} run logs")
    per_trial = []
    cases: set[str] | None = None
    for log in logs:
        ids = [e.case_id for e in log.entries]
        if len(ids) != len(set(ids)):
            raise CaseSetMismatch(f"{label} trial {log.trial} repeats case ids")
        if cases is None:
            cases = set(ids)
        elif set(ids) != cases:
            raise CaseSetMismatch(f"{label} trials cover different case sets")
        per_trial.append(log.by_case())
    return per_trial, cases or set()


def compute_metrics(baseline: Sequence[RunLog], exp: Sequence[RunLog]) -> MetricsReport:
    if len(baseline) != len(exp):
        raise TrialCountMismatch(f"{len(baseline)} baseline trials vs {len(exp)} with-memory trials")
    base, base_cases = _index(baseline, "baseline")
    mem, mem_cases = _index(exp, "with-memory")
    if base_cases != mem_cases:
        raise CaseSetMismatch(
            f"case sets differ: {len(base_cases ^ mem_cases)} ids present on one side only"
        )
    cases = sorted(base_cases)
    n, t = len(cases), len(baseline)
    total = n * t

    base_correct = sum(trial[c].correct for trial in base for c in cases)
    exp_correct = sum(trial[c].correct for trial in mem for c in cases)
    retrieved_cases = [c for c in cases if any(trial[c].retrieved for trial in mem)]
    retrieved_trials = [trial[c] for trial in mem for c in cases if trial[c].retrieved]
    retrieved_correct = sum(e.correct for e in retrieved_trials)
    beneficial = [
        c for c in cases
        if all(not trial[c].correct for trial in base) and all(trial[c].correct for trial in mem)
    ]
    harmful = [
        c for c in cases
        if all(trial[c].correct for trial in base) and all(not trial[c].correct for trial in mem)
    ]

    acc_base = base_correct / total if total else 0.0
    acc_exp = exp_correct / total if total else 0.0
    return MetricsReport(
        n_cases=n,
        trials=t,
        accuracy_baseline=acc_base,
        accuracy_exp=acc_exp,
        delta=acc_exp - acc_base,
        recall=len(retrieved_cases) / n if n else 0.0,
        precision=retrieved_correct / len(retrieved_trials) if retrieved_trials else None,
        beneficial=len(beneficial) / n if n else 0.0,
        harmful=len(harmful) / n if n else 0.0,
        counts={
            "cases": n,
            "total_trials": total,
            "baseline_correct": base_correct,
            "exp_correct": exp_correct,
            "retrieved_cases": len(retrieved_cases),
            "retrieved_trials": len(retrieved_trials),
            "retrieved_correct": retrieved_correct,
            "beneficial_cases": len(beneficial),
            "harmful_cases": len(harmful),
        },
        beneficial_cases=tuple(beneficial),
        harmful_cases=tuple(harmful),
    )


# --------------------------------------------------------------------------- ablation

GRID_KEYS = ("name", "rounds", "tau", "top_k", "max_paths", "cross_department", "reference_accuracy")


@dataclass(frozen=True)
class AblationSpec:
    name: str
    rounds: int = 2
    tau: float | None = None
    top_k: int | None = None
    max_paths: int | None = None
    cross_department: bool | None = None
    reference_accuracy: float | None = None

    def retrieval(self, base: RetrievalConfig) -> RetrievalConfig:
        overrides = {
            k: v
            for k, v in (
                ("tau", self.tau),
                ("top_k", self.top_k),
                ("max_paths", self.max_paths),
                ("cross_department", self.cross_department),
            )
            if v is not None
        }
        return replace(base, **overrides)


def parse_grid(data: Any) -> list[AblationSpec]:
    if isinstance(data, Mapping):
        data = data.get("grid")
    if not isinstance(data, list) or not data:
        raise GridError("ablation grid must be a non-empty list of configurations")
    specs = []
    for i, raw in enumerate(data):
        if not isinstance(raw, Mapping):
            raise GridError(f"grid entry {i} is not a mapping")
        unknown = [k for k in raw if k not in GRID_KEYS]
        if unknown:
            raise GridError(f"unknown grid key {unknown[0]!r} in entry {i}")
        if "name" not in raw:
            raise GridError(f"grid entry {i} has no name")
        spec = AblationSpec(**raw)
        if spec.rounds not in (1, 2):
            raise GridError(f"grid entry {spec.name!r}: rounds must be 1 or 2")
        specs.append(spec)
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise GridError("grid entry names must be unique")
    return specs


def load_grid(path: str | Path | None = None) -> list[AblationSpec]:
    if path is None:
        text = resources.files("expmem").joinpath("data/ablation_grid.yaml").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return parse_grid(yaml.safe_load(text))


@dataclass
class AblationRow:
    spec: AblationSpec
    report: MetricsReport

    def to_dict(self) -> dict[str, Any]:
        return {"config": asdict(self.spec), "metrics": self.report.to_dict()}


@dataclass
class AblationTable:
    rows: list[AblationRow]

    def to_dict(self) -> dict[str, Any]:
        return {"rows": [r.to_dict() for r in self.rows]}

    def render(self) -> str:
        header = ("Configuration", "Accuracy", "Delta", "Recall", "Precision", "Reference")
        body = [
            [
                r.spec.name,
                _pct(r.report.accuracy_exp),
                _signed_pct(r.report.delta),
                _pct(r.report.recall),
                _pct(r.report.precision),
                _pct(r.spec.reference_accuracy) if r.spec.reference_accuracy is not None else "",
            ]
            for r in self.rows
        ]
        if self.rows:
            first = self.rows[0].report
            body.insert(0, ["baseline (no memory)", _pct(first.accuracy_baseline), "", "", "", ""])
        return format_table(header, body)


def run_ablation(
    testset: Sequence[CaseRecord],
    corpus: Sequence[CaseRecord],
    agent: AgentGateway,
    provider: EmbeddingProvider,
    grid: Iterable[AblationSpec],
    base: EvalConfig = EvalConfig(),
    trials: int = 1,
    construction: ConstructionConfig | None = None,
    taxonomy=None,
    stores: dict[int, MemoryStore] | None = None,
) -> AblationTable:
    """One metrics row per grid entry.

    Memory is built once per distinct ``rounds`` value and reused by every
    entry that shares it; the baseline run is shared by all rows.
    """
    grid = list(grid)
    if not grid:
        raise GridError("ablation grid is empty")
    construction = construction or ConstructionConfig(retrieval=base.retrieval, candidates=base.candidates)
    stores = stores if stores is not None else {}
    baseline = run_eval(testset, agent, None, None, base, "baseline", trials)
    rows = []
    for spec in grid:
        if spec.rounds not in stores:
            stores[spec.rounds], _ = build(
                corpus, agent, provider, replace(construction, rounds=spec.rounds), taxonomy=taxonomy
            )
        config = replace(base, retrieval=spec.retrieval(base.retrieval))
        exp = run_eval(testset, agent, stores[spec.rounds], provider, config, "with-memory", trials)
        rows.append(AblationRow(spec, compute_metrics(baseline, exp)))
    return AblationTable(rows)
