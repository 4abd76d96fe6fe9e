"""Domain types shared by every part of the engine.

Labels, canonical pair keys, the anatomical taxonomy, experience notes and
case records live here, together with note validation and the line-delimited
corpus format.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import IO, Any, Iterable, Mapping, Sequence, Union

import yaml

OTHERS = "others"
PHASE_TAGS = ("phase1", "phase2-supplement", "phase2-misleading")

_WHITESPACE = re.compile(r"\s+")
_RULE = re.compile(
    r"^\s*if\s+(?P<condition>.+?)\s*(?:→|->)\s*(?P<verb>favou?r|exclude|consider)\s+(?P<target>.+?)\s*$",
    re.IGNORECASE | re.DOTALL,
)


class ExpMemError(Exception):
    """Base class for engine errors."""


class EqualLabels(ExpMemError, ValueError):
    def __init__(self, a: str, b: str):
        super().__init__(f"labels {a!r} and {b!r} are equal after normalization")
        self.a = a
        self.b = b


class ParseError(ExpMemError, ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class DuplicateId(ExpMemError, ValueError):
    def __init__(self, case_id: str):
        super().__init__(f"duplicate case id {case_id!r}")
        self.case_id = case_id


class InvalidNote(ExpMemError, ValueError):
    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("invalid note: " + "; ".join(self.violations))


class TaxonomyError(ExpMemError, ValueError):
    pass


def normalize(text: str) -> str:
    """Lowercase and collapse runs of whitespace; used for every label comparison."""
    return _WHITESPACE.sub(" ", text.strip()).lower()


def canonical_json(obj: Any, indent: int | None = None) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, indent=indent)


def checksum(obj: Any) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


@dataclass(frozen=True, eq=False)
class DiagnosisLabel:
    """Free-text disease name. Equality ignores case and whitespace runs."""

    text: str

    def __post_init__(self) -> None:
        if not isinstance(self.text, str):
            raise TypeError(f"label text must be a string, got {type(self.text).__name__}")
        trimmed = self.text.strip()
        if not trimmed:
            raise ValueError("diagnosis label must be non-empty")
        object.__setattr__(self, "text", trimmed)

    @property
    def norm(self) -> str:
        return normalize(self.text)

    def __eq__(self, other: object) -> bool:
        if isinstance(other, DiagnosisLabel):
            return self.norm == other.norm
        return NotImplemented

    def __hash__(self) -> int:
        return hash(self.norm)

    def __str__(self) -> str:
        return self.text

    def __repr__(self) -> str:
        return f"DiagnosisLabel({self.text!r})"


LabelLike = Union[str, DiagnosisLabel]


def as_label(value: LabelLike) -> DiagnosisLabel:
    return value if isinstance(value, DiagnosisLabel) else DiagnosisLabel(value)


@dataclass(frozen=True, eq=False)
class PairKey:
    """Order-insensitive key naming two confusable diagnoses.

    The constructor sorts the labels by normalized text, so ``PairKey(a, b)``
    and ``PairKey(b, a)`` are identical. Use :func:`canonical_pair_key` when
    degenerate pairs must be rejected up front; a directly constructed
    degenerate key is reported by :func:`validate_note` instead.
    """

    first: DiagnosisLabel
    second: DiagnosisLabel

    def __post_init__(self) -> None:
        a, b = as_label(self.first), as_label(self.second)
        if (b.norm, b.text) < (a.norm, a.text):
            a, b = b, a
        object.__setattr__(self, "first", a)
        object.__setattr__(self, "second", b)

    @property
    def display(self) -> str:
        return f"{self.first.text} vs. {self.second.text}"

    @property
    def labels(self) -> tuple[DiagnosisLabel, DiagnosisLabel]:
        return (self.first, self.second)

    @property
    def is_degenerate(self) -> bool:
        return self.first == self.second

    def __contains__(self, label: object) -> bool:
        if isinstance(label, str):
            label = DiagnosisLabel(label)
        return label == self.first or label == self.second

    def __eq__(self, other: object) -> bool:
        if isinstance(other, PairKey):
            return (self.first.norm, self.second.norm) == (other.first.norm, other.second.norm)
        return NotImplemented

    def __hash__(self) -> int:
        return hash((self.first.norm, self.second.norm))

    def __str__(self) -> str:
        return self.display

    def __repr__(self) -> str:
        return f"PairKey({self.display!r})"

    def to_list(self) -> list[str]:
        return [self.first.text, self.second.text]


def canonical_pair_key(a: LabelLike, b: LabelLike) -> PairKey:
    a, b = as_label(a), as_label(b)
    if a == b:
        raise EqualLabels(a.text, b.text)
    return PairKey(a, b)


def parse_pair(value: Any) -> PairKey:
    """Read a pair from ``["A", "B"]`` or ``"A vs. B"``."""
    if isinstance(value, str):
        parts = re.split(r"\s+vs\.?\s+", value.strip(), flags=re.IGNORECASE)
        if len(parts) != 2:
            raise ValueError(f"cannot split {value!r} into two diagnoses")
        value = parts
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ValueError("differentials must name exactly two diagnoses")
    return PairKey(DiagnosisLabel(value[0]), DiagnosisLabel(value[1]))


# --------------------------------------------------------------------------- taxonomy


@dataclass(frozen=True)
class Taxonomy:
    departments: tuple[str, ...]
    organs: Mapping[str, tuple[str, ...]]

    def __post_init__(self) -> None:
        object.__setattr__(self, "departments", tuple(self.departments))
        object.__setattr__(
            self, "organs", {dept: tuple(self.organs.get(dept, ())) for dept in self.departments}
        )
        if len(set(self.departments)) != len(self.departments):
            raise TaxonomyError("department names must be unique")
        for dept, organs in self.organs.items():
            if not organs:
                raise TaxonomyError(f"department {dept!r} has no organ entries")
            if len(set(organs)) != len(organs):
                raise TaxonomyError(f"duplicate organ names under {dept!r}")
            if organs[-1] != OTHERS:
                raise TaxonomyError(f"department {dept!r} must end with an {OTHERS!r} entry")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Taxonomy":
        try:
            entries = data["departments"]
            departments = [str(entry["name"]) for entry in entries]
            organs = {str(entry["name"]): [str(o) for o in entry["organs"]] for entry in entries}
        except (KeyError, TypeError) as exc:
            raise TaxonomyError(f"malformed taxonomy document: {exc}") from exc
        return cls(tuple(departments), organs)

    def to_dict(self) -> dict[str, Any]:
        return {
            "departments": [
                {"name": dept, "organs": list(self.organs[dept])} for dept in self.departments
            ]
        }

    @property
    def checksum(self) -> str:
        return checksum(self.to_dict())

    @property
    def organ_count(self) -> int:
        return sum(len(v) for v in self.organs.values())

    def has_department(self, department: str) -> bool:
        return department in self.organs

    def has_path(self, department: str, organ: str) -> bool:
        return organ in self.organs.get(department, ())

    def paths(self) -> list[tuple[str, str]]:
        return [(d, o) for d in self.departments for o in self.organs[d]]

    def resolve_department(self, name: str) -> str | None:
        """Case/whitespace-insensitive lookup returning the canonical department name."""
        wanted = normalize(name)
        for dept in self.departments:
            if normalize(dept) == wanted:
                return dept
        return None

    def resolve_organ(self, department: str, name: str) -> str | None:
        wanted = normalize(name)
        for organ in self.organs.get(department, ()):
            if normalize(organ) == wanted:
                return organ
        return None

    def render(self) -> str:
        lines = []
        for dept in self.departments:
            lines.append(f"- {dept}: " + ", ".join(self.organs[dept]))
        return "\n".join(lines)


def load_taxonomy(path: str | Path) -> Taxonomy:
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, Mapping):
        raise TaxonomyError(f"{path}: expected a mapping with a 'departments' list")
    return Taxonomy.from_dict(data)


@lru_cache(maxsize=1)
def default_taxonomy() -> Taxonomy:
    text = resources.files("expmem").joinpath("data/taxonomy.yaml").read_text(encoding="utf-8")
    return Taxonomy.from_dict(yaml.safe_load(text))


# --------------------------------------------------------------------------- notes


@dataclass(frozen=True)
class Provenance:
    case_id: str
    phase: str

    def to_dict(self) -> dict[str, str]:
        return {"case_id": self.case_id, "phase": self.phase}


@dataclass(frozen=True)
class ExperienceNote:
    """One pairwise differential experience unit.

    ``discriminators`` is keyed by label text; keys matching a pair label
    under normalization are rewritten to that label's spelling on
    construction. List-valued fields are stored as tuples.
    """

    department: str
    organ_region: str
    differentials: PairKey
    confusions: tuple[str, ...]
    discriminators: Mapping[str, str]
    decision_rule: tuple[str, ...]
    error_analysis: tuple[str, ...] = ()
    provenance: tuple[Provenance, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "confusions", tuple(self.confusions))
        object.__setattr__(self, "decision_rule", tuple(self.decision_rule))
        object.__setattr__(self, "error_analysis", tuple(self.error_analysis))
        object.__setattr__(
            self,
            "provenance",
            tuple(p if isinstance(p, Provenance) else Provenance(*p) for p in self.provenance),
        )
        canonical = {label.norm: label.text for label in self.differentials.labels}
        ordered: dict[str, str] = {}
        extras: dict[str, str] = {}
        for key, text in self.discriminators.items():
            target = canonical.get(normalize(key))
            if target is not None and target not in ordered:
                ordered[target] = text
            else:
                extras[key] = text
        ordered = {
            label.text: ordered[label.text]
            for label in self.differentials.labels
            if label.text in ordered
        }
        ordered.update(extras)
        object.__setattr__(self, "discriminators", ordered)

    @property
    def path(self) -> tuple[str, str]:
        return (self.department, self.organ_region)

    @property
    def triple(self) -> tuple[str, str, PairKey]:
        return (self.department, self.organ_region, self.differentials)

    def to_dict(self) -> dict[str, Any]:
        return {
            "department": self.department,
            "organ_region": self.organ_region,
            "differentials": self.differentials.to_list(),
            "confusions": list(self.confusions),
            "discriminators": dict(self.discriminators),
            "decision_rule": list(self.decision_rule),
            "error_analysis": list(self.error_analysis),
            "provenance": [p.to_dict() for p in self.provenance],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExperienceNote":
        """Build a note from a serialized mapping.

        Raises ``ValueError``/``KeyError``/``TypeError`` on structural problems;
        semantic checks are left to :func:`validate_note`.
        """
        discriminators = data["discriminators"]
        if not isinstance(discriminators, Mapping):
            raise TypeError("discriminators must be a mapping")
        return cls(
            department=_as_str(data["department"], "department"),
            organ_region=_as_str(data["organ_region"], "organ_region"),
            differentials=parse_pair(data["differentials"]),
            confusions=_as_str_list(data["confusions"], "confusions"),
            discriminators={str(k): _as_str(v, "discriminators") for k, v in discriminators.items()},
            decision_rule=_as_str_list(data["decision_rule"], "decision_rule"),
            error_analysis=_as_str_list(data.get("error_analysis", []), "error_analysis"),
            provenance=tuple(
                Provenance(_as_str(p["case_id"], "case_id"), _as_str(p["phase"], "phase"))
                for p in data.get("provenance", [])
            ),
        )


def _as_str(value: Any, name: str) -> str:
    if not isinstance(value, str):
        raise TypeError(f"{name} must be a string")
    return value


def _as_str_list(value: Any, name: str) -> tuple[str, ...]:
    if isinstance(value, str) or not isinstance(value, (list, tuple)):
        raise TypeError(f"{name} must be a list of strings")
    return tuple(_as_str(v, name) for v in value)


def parse_rule(rule: str) -> tuple[str, str, str] | None:
    """Split ``"If X → favor A"`` into (condition, verb, target); None if it doesn't match."""
    match = _RULE.match(rule)
    if match is None:
        return None
    return match["condition"], match["verb"].lower(), match["target"]


def validate_note(note: ExperienceNote, taxonomy: Taxonomy) -> list[str]:
    """Return the list of schema violations; an empty list means the note is valid."""
    violations: list[str] = []

    if not taxonomy.has_department(note.department):
        violations.append(f"unknown department {note.department!r}")
    elif not taxonomy.has_path(note.department, note.organ_region):
        violations.append(
            f"unknown organ/region {note.organ_region!r} under department {note.department!r}"
        )

    pair = note.differentials
    if not isinstance(pair, PairKey):
        return violations + ["differentials must be a pair key"]
    if pair.is_degenerate:
        violations.append("differentials must name two distinct diagnoses")

    if not note.confusions:
        violations.append("confusions must be non-empty")
    elif any(not c.strip() for c in note.confusions):
        violations.append("confusions entries must be non-empty")

    covered = {normalize(k) for k in note.discriminators}
    wanted = {label.norm for label in pair.labels}
    if covered != wanted or len(note.discriminators) != 2:
        violations.append("discriminators must cover both labels")
    if any(not text.strip() for text in note.discriminators.values()):
        violations.append("discriminator text must be non-empty")

    if not note.decision_rule:
        violations.append("decision_rule must be non-empty")
    targets: list[str] = []
    for rule in note.decision_rule:
        parsed = parse_rule(rule)
        if parsed is None:
            violations.append(f"malformed decision rule {rule!r}")
        else:
            targets.append(normalize(parsed[2]))
    if note.decision_rule and not all(
        any(label.norm in target for target in targets) for label in pair.labels
    ):
        violations.append("decision_rule must target both labels")

    if any(not entry.strip() for entry in note.error_analysis):
        violations.append("error_analysis entries must be non-empty")

    if not note.provenance:
        violations.append("provenance must be non-empty")
    for entry in note.provenance:
        if not entry.case_id:
            violations.append("provenance case id must be non-empty")
        if entry.phase not in PHASE_TAGS:
            violations.append(f"unknown provenance phase {entry.phase!r}")
    return violations


# --------------------------------------------------------------------------- cases


@dataclass(frozen=True)
class CaseRecord:
    id: str
    ground_truth: DiagnosisLabel
    clinical_history: str = ""
    image_refs: tuple[str, ...] = ()
    curated_differentials: tuple[DiagnosisLabel, ...] = ()
    discussion: str = ""
    published_year: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "ground_truth", as_label(self.ground_truth))
        object.__setattr__(self, "image_refs", tuple(self.image_refs))
        object.__setattr__(
            self, "curated_differentials", tuple(as_label(d) for d in self.curated_differentials)
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "clinical_history": self.clinical_history,
            "image_refs": list(self.image_refs),
            "ground_truth": self.ground_truth.text,
            "curated_differentials": [d.text for d in self.curated_differentials],
            "discussion": self.discussion,
            "published_year": self.published_year,
        }


_CASE_FIELDS = {
    "clinical_history": str,
    "discussion": str,
}


def _case_from_obj(obj: Any) -> CaseRecord:
    if not isinstance(obj, dict):
        raise ValueError("record must be an object")
    case_id = obj.get("id")
    if not isinstance(case_id, str) or not case_id.strip():
        raise ValueError("missing or empty 'id'")
    truth = obj.get("ground_truth")
    if not isinstance(truth, str) or not truth.strip():
        raise ValueError("missing or empty 'ground_truth'")
    for name, kind in _CASE_FIELDS.items():
        if name in obj and not isinstance(obj[name], kind):
            raise ValueError(f"'{name}' must be a string")
    image_refs = obj.get("image_refs", [])
    if not isinstance(image_refs, list) or not all(isinstance(r, str) for r in image_refs):
        raise ValueError("'image_refs' must be a list of strings")
    differentials = obj.get("curated_differentials", [])
    if not isinstance(differentials, list) or not all(
        isinstance(d, str) and d.strip() for d in differentials
    ):
        raise ValueError("'curated_differentials' must be a list of non-empty strings")
    year = obj.get("published_year")
    if year is not None and (isinstance(year, bool) or not isinstance(year, int)):
        raise ValueError("'published_year' must be an integer")
    return CaseRecord(
        id=case_id,
        ground_truth=DiagnosisLabel(truth),
        clinical_history=obj.get("clinical_history", ""),
        image_refs=tuple(image_refs),
        curated_differentials=tuple(DiagnosisLabel(d) for d in differentials),
        discussion=obj.get("discussion", ""),
        published_year=year,
    )


def parse_case_corpus(stream: Iterable[str]) -> list[CaseRecord]:
    """Parse one JSON case object per line. Blank lines are skipped; unknown keys ignored."""
    cases: list[CaseRecord] = []
    seen: set[str] = set()
    for lineno, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(lineno, f"invalid JSON ({exc.msg})") from exc
        try:
            case = _case_from_obj(obj)
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from exc
        if case.id in seen:
            raise DuplicateId(case.id)
        seen.add(case.id)
        cases.append(case)
    return cases


def serialize_case_corpus(cases: Iterable[CaseRecord], stream: IO[str]) -> None:
    for case in cases:
        stream.write(canonical_json(case.to_dict()))
        stream.write("\n")


def read_corpus(path: str | Path) -> list[CaseRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_case_corpus(fh)


def write_corpus(path: str | Path, cases: Iterable[CaseRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        serialize_case_corpus(cases, fh)


def dedupe_labels(labels: Iterable[LabelLike]) -> list[DiagnosisLabel]:
    """Drop normalized duplicates, keeping the first spelling."""
    seen: set[str] = set()
    out: list[DiagnosisLabel] = []
    for raw in labels:
        label = as_label(raw)
        if label.norm not in seen:
            seen.add(label.norm)
            out.append(label)
    return out


def grade(predicted: LabelLike | None, truth: LabelLike) -> bool:
    """Normalized exact match."""
    if predicted is None:
        return False
    return as_label(predicted) == as_label(truth)


__all__ = [
    "OTHERS",
    "PHASE_TAGS",
    "CaseRecord",
    "DiagnosisLabel",
    "DuplicateId",
    "EqualLabels",
    "ExpMemError",
    "ExperienceNote",
    "InvalidNote",
    "PairKey",
    "ParseError",
    "Provenance",
    "Taxonomy",
    "TaxonomyError",
    "as_label",
    "canonical_pair_key",
    "checksum",
    "dedupe_labels",
    "default_taxonomy",
    "grade",
    "load_taxonomy",
    "normalize",
    "parse_case_corpus",
    "parse_pair",
    "parse_rule",
    "read_corpus",
    "serialize_case_corpus",
    "validate_note",
    "write_corpus",
]
