"""Hierarchical, persistent store of experience notes.

Notes are indexed department -> organ/region -> pair key. At most one note
lives at each (department, organ, pair) triple; a second note arriving at the
same triple is folded into the first with :func:`merge_notes`.
"""

from __future__ import annotations

import copy
import json
import logging
import os
import threading
from pathlib import Path
from typing import Any, Iterable, Iterator, Literal

from .core import (
    ExperienceNote,
    ExpMemError,
    InvalidNote,
    PairKey,
    Taxonomy,
    canonical_json,
    checksum,
    validate_note,
)

logger = logging.getLogger(__name__)

SUPPLEMENT_MARKER = "Supplement:"

Outcome = Literal["inserted", "merged"]
TaxPath = tuple[str, str]


class TripleMismatch(ExpMemError, ValueError):
    pass


class UnknownPath(ExpMemError, KeyError):
    def __init__(self, path: TaxPath):
        super().__init__(f"unknown taxonomy path {path[0]!r} / {path[1]!r}")
        self.path = path

    def __str__(self) -> str:
        return self.args[0]


class CorruptStore(ExpMemError):
    pass


class IoFailure(ExpMemError, OSError):
    pass


def _union(existing: Iterable, incoming: Iterable) -> tuple:
    """Order-preserving deduplicated union, existing entries first."""
    out = list(dict.fromkeys(existing))
    seen = set(out)
    for item in incoming:
        if item not in seen:
            seen.add(item)
            out.append(item)
    return tuple(out)


def merge_notes(existing: ExperienceNote, incoming: ExperienceNote) -> ExperienceNote:
    if existing.triple != incoming.triple:
        raise TripleMismatch(
            f"cannot merge {incoming.differentials.display!r} at {incoming.path} "
            f"into {existing.differentials.display!r} at {existing.path}"
        )
    discriminators = dict(existing.discriminators)
    incoming_by_label = {
        label: incoming.discriminators.get(label.text, "")
        for label in incoming.differentials.labels
    }
    for label in existing.differentials.labels:
        extra = incoming_by_label.get(label, "")
        current = discriminators.get(label.text, "")
        if extra and extra not in current:
            discriminators[label.text] = f"{current}\n{SUPPLEMENT_MARKER} {extra}" if current else extra
    return ExperienceNote(
        department=existing.department,
        organ_region=existing.organ_region,
        differentials=existing.differentials,
        confusions=_union(existing.confusions, incoming.confusions),
        discriminators=discriminators,
        decision_rule=_union(existing.decision_rule, incoming.decision_rule),
        error_analysis=_union(existing.error_analysis, incoming.error_analysis),
        provenance=_union(existing.provenance, incoming.provenance),
    )


class MemoryStore:
    """In-memory note index bound to one taxonomy.

    Reads may run concurrently; mutations are serialized through an internal
    lock and bump ``version`` by one each.
    """

    def __init__(self, taxonomy: Taxonomy):
        self.taxonomy = taxonomy
        self.version = 0
        self._index: dict[str, dict[str, dict[PairKey, ExperienceNote]]] = {}
        self._lock = threading.Lock()

    # ---- queries

    def __len__(self) -> int:
        return sum(len(pairs) for organs in self._index.values() for pairs in organs.values())

    def __iter__(self) -> Iterator[ExperienceNote]:
        return iter(self.notes())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MemoryStore):
            return NotImplemented
        return (
            self.taxonomy == other.taxonomy
            and self.version == other.version
            and self.notes() == other.notes()
        )

    def __repr__(self) -> str:
        return f"MemoryStore(notes={len(self)}, version={self.version})"

    def get(self, department: str, organ: str, pair: PairKey) -> ExperienceNote | None:
        return self._index.get(department, {}).get(organ, {}).get(pair)

    def notes(self) -> list[ExperienceNote]:
        """All notes in canonical (department, organ, pair display) order."""
        return self._sorted(
            note
            for organs in self._index.values()
            for pairs in organs.values()
            for note in pairs.values()
        )

    def notes_under_paths(self, paths: Iterable[TaxPath]) -> list[ExperienceNote]:
        unique: list[TaxPath] = []
        for path in paths:
            path = (path[0], path[1])
            if not self.taxonomy.has_path(*path):
                raise UnknownPath(path)
            if path not in unique:
                unique.append(path)
        found = [
            note
            for dept, organ in unique
            for note in self._index.get(dept, {}).get(organ, {}).values()
        ]
        return self._sorted(found)

    def provenance_count(self) -> int:
        return sum(len(note.provenance) for note in self.notes())

    @staticmethod
    def _sorted(notes: Iterable[ExperienceNote]) -> list[ExperienceNote]:
        return sorted(
            notes,
            key=lambda n: (n.department, n.organ_region, n.differentials.display),
        )

    # ---- mutation

    def insert_or_merge(self, note: ExperienceNote) -> Outcome:
        violations = validate_note(note, self.taxonomy)
        if violations:
            raise InvalidNote(violations)
        with self._lock:
            pairs = self._index.setdefault(note.department, {}).setdefault(note.organ_region, {})
            existing = pairs.get(note.differentials)
            if existing is None:
                pairs[note.differentials] = note
                outcome: Outcome = "inserted"
            else:
                pairs[note.differentials] = merge_notes(existing, note)
                outcome = "merged"
            self.version += 1
        return outcome

    def snapshot(self) -> "MemoryStore":
        """Independent copy; later mutations of either side don't affect the other."""
        clone = MemoryStore(self.taxonomy)
        with self._lock:
            clone.version = self.version
            clone._index = copy.deepcopy(self._index)
        return clone

    # ---- persistence

    def to_dict(self, meta: dict[str, Any] | None = None) -> dict[str, Any]:
        notes = [note.to_dict() for note in self.notes()]
        doc: dict[str, Any] = {
            "taxonomy_checksum": self.taxonomy.checksum,
            "version": self.version,
            "notes": notes,
            "content_checksum": checksum(notes),
        }
        if meta is not None:
            doc["meta"] = meta
        return doc

    def save(self, destination: str | os.PathLike, meta: dict[str, Any] | None = None) -> None:
        text = canonical_json(self.to_dict(meta), indent=2) + "\n"
        destination = Path(destination)
        tmp = destination.with_name(destination.name + ".tmp")
        try:
            tmp.write_text(text, encoding="utf-8")
            os.replace(tmp, destination)
        except OSError as exc:
            raise IoFailure(f"cannot write store to {destination}: {exc}") from exc

    @classmethod
    def from_dict(cls, doc: Any, taxonomy: Taxonomy) -> "MemoryStore":
        if not isinstance(doc, dict):
            raise CorruptStore("store document must be an object")
        missing = {"taxonomy_checksum", "version", "notes"} - doc.keys()
        if missing:
            raise CorruptStore(f"store document lacks {sorted(missing)}")
        if doc["taxonomy_checksum"] != taxonomy.checksum:
            raise CorruptStore("taxonomy checksum mismatch")
        raw_notes = doc["notes"]
        if not isinstance(raw_notes, list) or not isinstance(doc["version"], int):
            raise CorruptStore("malformed 'notes' or 'version'")
        if "content_checksum" in doc and doc["content_checksum"] != checksum(raw_notes):
            raise CorruptStore("content checksum mismatch")
        store = cls(taxonomy)
        for i, raw in enumerate(raw_notes):
            try:
                note = ExperienceNote.from_dict(raw)
            except (KeyError, TypeError, ValueError) as exc:
                raise CorruptStore(f"note {i}: {exc}") from exc
            violations = validate_note(note, taxonomy)
            if violations:
                raise InvalidNote(violations)
            pairs = store._index.setdefault(note.department, {}).setdefault(note.organ_region, {})
            if note.differentials in pairs:
                raise CorruptStore(f"note {i}: duplicate triple {note.path} {note.differentials}")
            pairs[note.differentials] = note
        store.version = doc["version"]
        return store

    @classmethod
    def load(cls, source: str | os.PathLike, taxonomy: Taxonomy) -> "MemoryStore":
        try:
            text = Path(source).read_text(encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"cannot read store {source}: {exc}") from exc
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CorruptStore(f"{source}: not a valid store document ({exc.msg})") from exc
        return cls.from_dict(doc, taxonomy)


def notes_under_paths(store: MemoryStore, paths: Iterable[TaxPath]) -> list[ExperienceNote]:
    return store.notes_under_paths(paths)


def insert_or_merge(store: MemoryStore, note: ExperienceNote) -> Outcome:
    return store.insert_or_merge(note)
