"""Deterministic scripted agent used for tests and desk-scale experiments.

The script says which ground truths the agent confuses with which
distractor, and how often. The mock answers correctly whenever one of the
notes it is handed carries the pair (truth, scripted distractor); that is
the only way memory changes its behaviour, apart from explicitly scripted
misleading notes.

Script document (YAML or JSON)::

    seed: 7
    confusions:
      - truth: Goldston syndrome
        distractor: Meckel-Gruber syndrome
        mode: always            # or: probability: 0.5
        lucky_attempts: [0]     # attempts answered correctly regardless
        path: [Female genital and obstetric, fetus]
    misleading:
      - pair: [A, B]
        truth: T
        answer: W
    case_paths: {c1: [[Chest, pleura]]}
    irrelevant_pairs: [[A, B]]
    failures: {diagnose: [c9], extract_note: [c3]}
    malformed: {extract_note: [c4]}
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import yaml

from ..core import (
    CaseRecord,
    DiagnosisLabel,
    ExperienceNote,
    PairKey,
    Taxonomy,
    as_label,
    canonical_pair_key,
    default_taxonomy,
    dedupe_labels,
    parse_pair,
)
from .base import AgentUnavailable, Diagnosis, MalformedResponse

OPERATIONS = ("diagnose", "propose_candidates", "select_paths", "extract_note", "score_relevance")


@dataclass(frozen=True)
class ConfusionEntry:
    distractor: DiagnosisLabel
    probability: float = 1.0
    always: bool = True
    lucky_attempts: frozenset[int] = frozenset()
    path: tuple[str, str] | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"error probability {self.probability} outside [0, 1]")


@dataclass(frozen=True)
class MisleadingRule:
    pair: PairKey
    truth: DiagnosisLabel
    answer: DiagnosisLabel


@dataclass(frozen=True)
class MockAgentScript:
    confusion_table: Mapping[str, ConfusionEntry] = field(default_factory=dict)
    stochastic_seed: int = 0
    misleading: tuple[MisleadingRule, ...] = ()
    case_paths: Mapping[str, tuple[tuple[str, str], ...]] = field(default_factory=dict)
    irrelevant_pairs: frozenset[PairKey] = frozenset()
    failures: Mapping[str, frozenset[str]] = field(default_factory=dict)
    malformed: Mapping[str, frozenset[str]] = field(default_factory=dict)

    def entry(self, truth: DiagnosisLabel) -> ConfusionEntry | None:
        return self.confusion_table.get(truth.norm)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any] | None) -> "MockAgentScript":
        data = dict(data or {})
        unknown = set(data) - {
            "seed", "confusions", "misleading", "case_paths", "irrelevant_pairs", "failures", "malformed",
        }
        if unknown:
            raise ValueError(f"unknown mock script keys: {sorted(unknown)}")
        table: dict[str, ConfusionEntry] = {}
        for raw in data.get("confusions", []):
            truth = as_label(raw["truth"])
            distractor = as_label(raw["distractor"])
            canonical_pair_key(truth, distractor)
            mode = raw.get("mode", "always" if "probability" not in raw else "probability")
            if mode not in ("always", "probability"):
                raise ValueError(f"unknown error mode {mode!r}")
            path = raw.get("path")
            table[truth.norm] = ConfusionEntry(
                distractor=distractor,
                probability=float(raw.get("probability", 1.0)),
                always=mode == "always",
                lucky_attempts=frozenset(int(a) for a in raw.get("lucky_attempts", [])),
                path=(str(path[0]), str(path[1])) if path else None,
            )
        misleading = tuple(
            MisleadingRule(parse_pair(r["pair"]), as_label(r["truth"]), as_label(r["answer"]))
            for r in data.get("misleading", [])
        )
        return cls(
            confusion_table=table,
            stochastic_seed=int(data.get("seed", 0)),
            misleading=misleading,
            case_paths={
                str(cid): tuple((str(p[0]), str(p[1])) for p in paths)
                for cid, paths in (data.get("case_paths") or {}).items()
            },
            irrelevant_pairs=frozenset(parse_pair(p) for p in data.get("irrelevant_pairs", [])),
            failures=_op_sets(data.get("failures")),
            malformed=_op_sets(data.get("malformed")),
        )

    @classmethod
    def load(cls, path: str | Path) -> "MockAgentScript":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(yaml.safe_load(fh))


def _op_sets(raw: Mapping[str, Any] | None) -> dict[str, frozenset[str]]:
    out = {}
    for op, ids in (raw or {}).items():
        if op not in OPERATIONS:
            raise ValueError(f"unknown mock operation {op!r}")
        out[op] = frozenset(str(i) for i in ids)
    return out


def _stable_index(text: str, size: int) -> int:
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % size


class MockAgent:
    """Pure function of (script, case, notes, attempt); safe to share between threads."""

    def __init__(self, script: MockAgentScript | None = None, taxonomy: Taxonomy | None = None,
                 identity: str = "mock-agent"):
        self.script = script or MockAgentScript()
        self.taxonomy = taxonomy or default_taxonomy()
        self.identity = identity

    def _check(self, op: str, case: CaseRecord) -> None:
        if case.id in self.script.failures.get(op, ()):
            raise AgentUnavailable(f"scripted outage for {op} on {case.id}")
        if case.id in self.script.malformed.get(op, ()):
            raise MalformedResponse(f"scripted malformed {op} response on {case.id}")

    def _errs(self, case: CaseRecord, entry: ConfusionEntry, attempt: int) -> bool:
        if attempt in entry.lucky_attempts:
            return False
        if entry.always:
            return True
        draw = random.Random(f"{self.script.stochastic_seed}:{case.id}:{attempt}").random()
        return draw < entry.probability

    def diagnose(
        self, case: CaseRecord, notes: Sequence[ExperienceNote], attempt: int = 0
    ) -> Diagnosis:
        self._check("diagnose", case)
        truth = case.ground_truth
        entry = self.script.entry(truth)
        pairs = {note.differentials for note in notes}
        answer, why = truth, "no scripted confusion"
        if entry is not None and canonical_pair_key(truth, entry.distractor) in pairs:
            answer, why = truth, f"applied note {canonical_pair_key(truth, entry.distractor)}"
        else:
            rule = next(
                (r for r in self.script.misleading if r.truth == truth and r.pair in pairs), None
            )
            if rule is not None:
                answer, why = rule.answer, f"misled by note {rule.pair}"
            elif entry is not None and self._errs(case, entry, attempt):
                answer, why = entry.distractor, "scripted confusion"
            elif entry is not None:
                why = "scripted confusion avoided"
        raw = f"{why}\nFINAL DIAGNOSIS: {answer.text}"
        return Diagnosis(label=answer, rationale=why, raw_response=raw)

    def propose_candidates(self, case: CaseRecord) -> list[str]:
        self._check("propose_candidates", case)
        entry = self.script.entry(case.ground_truth)
        if entry is not None:
            return [case.ground_truth.text, entry.distractor.text]
        labels = dedupe_labels([case.ground_truth, *case.curated_differentials])
        return [label.text for label in labels]

    def select_paths(
        self, case: CaseRecord, taxonomy: Taxonomy, max_paths: int
    ) -> list[tuple[str, str]]:
        self._check("select_paths", case)
        if case.id in self.script.case_paths:
            return list(self.script.case_paths[case.id])
        entry = self.script.entry(case.ground_truth)
        if entry is not None and entry.path is not None:
            return [entry.path]
        paths = taxonomy.paths()
        return [paths[_stable_index(case.ground_truth.norm, len(paths))]]

    def extract_note(
        self,
        case: CaseRecord,
        wrong: DiagnosisLabel,
        truth: DiagnosisLabel,
        discussion: str,
        path: tuple[str, str],
        feedback: str | None = None,
    ) -> dict[str, Any]:
        self._check("extract_note", case)
        return {
            "department": path[0],
            "organ_region": path[1],
            "differentials": [wrong.text, truth.text],
            "confusions": [f"{wrong.text} and {truth.text} share overlapping imaging and clinical features"],
            "discriminators": {
                wrong.text: f"Findings typical of {wrong.text}.",
                truth.text: f"Findings typical of {truth.text}.",
            },
            "decision_rule": [
                f"If findings typical of {truth.text} are present → favor {truth.text}",
                f"If findings typical of {truth.text} are absent → favor {wrong.text}",
                "If neither pattern fits → consider others",
            ],
            "error_analysis": [f"Case {case.id}: answered {wrong.text} where {truth.text} was correct."],
        }

    def score_relevance(self, case: CaseRecord, note: ExperienceNote) -> str:
        self._check("score_relevance", case)
        if note.differentials in self.script.irrelevant_pairs:
            return "irrelevant"
        selected = self.select_paths(case, self.taxonomy, 2)
        if note.path in selected:
            return "relevant"
        if note.department not in {dept for dept, _ in selected}:
            return "irrelevant"
        return "unknown"

    def judge_match(self, case: CaseRecord, predicted: DiagnosisLabel) -> bool:
        return predicted == case.ground_truth
