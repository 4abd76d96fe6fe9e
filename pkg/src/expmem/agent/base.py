from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping, Protocol, Sequence, runtime_checkable

from ..core import CaseRecord, DiagnosisLabel, ExperienceNote, ExpMemError, Taxonomy

VERDICTS = ("relevant", "irrelevant", "unknown")


class AgentUnavailable(ExpMemError):
    """Transport-level failure talking to the agent."""


class MalformedResponse(ExpMemError):
    """The agent answered, but nothing machine-readable could be extracted."""


class ExtractionFailed(ExpMemError):
    pass


@dataclass(frozen=True)
class Diagnosis:
    label: DiagnosisLabel
    rationale: str = ""
    raw_response: str = ""


@runtime_checkable
class AgentGateway(Protocol):
    """Low-level agent surface.

    Implementations return raw, unrepaired answers and raise
    :class:`AgentUnavailable` or :class:`MalformedResponse` on failure. Path
    repair, fallbacks, re-prompting and validation live in
    :mod:`expmem.agent.ops` so every gateway gets identical semantics.
    """

    identity: str

    def diagnose(
        self, case: CaseRecord, notes: Sequence[ExperienceNote], attempt: int = 0
    ) -> Diagnosis: ...

    def propose_candidates(self, case: CaseRecord) -> list[str]: ...

    def select_paths(
        self, case: CaseRecord, taxonomy: Taxonomy, max_paths: int
    ) -> list[tuple[str, str]]: ...

    def extract_note(
        self,
        case: CaseRecord,
        wrong: DiagnosisLabel,
        truth: DiagnosisLabel,
        discussion: str,
        path: tuple[str, str],
        feedback: str | None = None,
    ) -> Mapping[str, Any]: ...

    def score_relevance(self, case: CaseRecord, note: ExperienceNote) -> str: ...
