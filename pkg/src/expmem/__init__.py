"""Pairwise differential-diagnosis experience memory for diagnostic agents."""

from .core import (
    CaseRecord,
    DiagnosisLabel,
    ExperienceNote,
    PairKey,
    Provenance,
    Taxonomy,
    canonical_pair_key,
    default_taxonomy,
    parse_case_corpus,
    validate_note,
)
from .retrieval import RetrievalConfig, RetrievedNote, retrieve
from .store import MemoryStore, merge_notes

__version__ = "0.1.0"

__all__ = [
    "CaseRecord",
    "DiagnosisLabel",
    "ExperienceNote",
    "MemoryStore",
    "PairKey",
    "Provenance",
    "RetrievalConfig",
    "RetrievedNote",
    "Taxonomy",
    "canonical_pair_key",
    "default_taxonomy",
    "merge_notes",
    "parse_case_corpus",
    "retrieve",
    "validate_note",
]
