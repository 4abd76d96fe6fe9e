"""Contract-level agent operations shared by every gateway."""

from __future__ import annotations

import logging
from typing import TYPE_CHECKING, Any, Iterable, Literal, Mapping

from ..core import (
    OTHERS,
    CaseRecord,
    DiagnosisLabel,
    ExperienceNote,
    Provenance,
    Taxonomy,
    as_label,
    canonical_pair_key,
    dedupe_labels,
    validate_note,
)
from .base import AgentGateway, AgentUnavailable, Diagnosis, ExtractionFailed, MalformedResponse

if TYPE_CHECKING:
    from ..retrieval import RetrievalConfig

logger = logging.getLogger(__name__)

MAX_CANDIDATES = 6
EXTRACTION_REPROMPTS = 2

CandidateMode = Literal["agent", "dataset"]


def _unwrap(notes: Iterable[Any]) -> list[ExperienceNote]:
    out = []
    for item in notes:
        if isinstance(item, ExperienceNote):
            out.append(item)
        elif getattr(item, "retained_after_filter", True):
            out.append(item.note)
    return out


def diagnose(
    agent: AgentGateway, case: CaseRecord, notes: Iterable[Any] = (), attempt: int = 0
) -> Diagnosis:
    """Diagnose ``case``; ``notes`` may be retrieved notes or bare notes.

    Retrieved notes flagged as not retained are skipped. Raises
    AgentUnavailable / MalformedResponse; callers grade those cases incorrect.
    """
    return agent.diagnose(case, _unwrap(notes), attempt=attempt)


def propose_candidates(
    agent: AgentGateway,
    case: CaseRecord,
    mode: CandidateMode = "agent",
    top_hypothesis: DiagnosisLabel | None = None,
) -> list[DiagnosisLabel]:
    if mode == "dataset":
        extra = [top_hypothesis] if top_hypothesis is not None else []
        return dedupe_labels([*case.curated_differentials, *extra])
    try:
        raw = agent.propose_candidates(case)
        labels = dedupe_labels(str(c) for c in raw if str(c).strip())
    except (AgentUnavailable, MalformedResponse) as exc:
        logger.warning("candidate proposal failed for %s: %s", case.id, exc)
        return dedupe_labels(case.curated_differentials)
    return labels[:MAX_CANDIDATES]


def repair_paths(
    raw: Iterable[Any], taxonomy: Taxonomy, max_paths: int, cross_department: bool = True
) -> list[tuple[str, str]]:
    """Map agent-named paths onto the taxonomy.

    Unknown organs under a known department become ``(department, "others")``;
    unknown departments are dropped. Order is preserved, duplicates removed,
    and the result truncated to ``max_paths``.
    """
    paths: list[tuple[str, str]] = []
    for item in raw:
        try:
            dept_name, organ_name = item
        except (TypeError, ValueError):
            continue
        dept = taxonomy.resolve_department(str(dept_name))
        if dept is None:
            continue
        organ = taxonomy.resolve_organ(dept, str(organ_name)) or OTHERS
        if (dept, organ) in paths:
            continue
        if not cross_department and paths and paths[0][0] != dept:
            continue
        paths.append((dept, organ))
    return paths[:max_paths]


def select_paths(
    agent: AgentGateway, case: CaseRecord, taxonomy: Taxonomy, config: "RetrievalConfig"
) -> list[tuple[str, str]]:
    try:
        raw = agent.select_paths(case, taxonomy, config.max_paths)
    except (AgentUnavailable, MalformedResponse) as exc:
        logger.warning("path selection failed for %s: %s", case.id, exc)
        return []
    return repair_paths(raw, taxonomy, config.max_paths, config.cross_department)


def note_from_payload(
    payload: Mapping[str, Any],
    case: CaseRecord,
    wrong: DiagnosisLabel,
    truth: DiagnosisLabel,
    path: tuple[str, str],
    phase: str,
) -> ExperienceNote:
    """Build a note from an agent payload, pinning placement, pair and provenance."""
    if not isinstance(payload, Mapping):
        raise MalformedResponse("extraction payload is not an object")
    data = dict(payload)
    data["department"], data["organ_region"] = path
    data["differentials"] = canonical_pair_key(wrong, truth).to_list()
    data["provenance"] = [Provenance(case.id, phase).to_dict()]
    data.setdefault("error_analysis", [])
    if isinstance(data["error_analysis"], str):
        data["error_analysis"] = [data["error_analysis"]]
    try:
        return ExperienceNote.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedResponse(f"extraction payload does not match the note schema: {exc}") from exc


def extract_note(
    agent: AgentGateway,
    case: CaseRecord,
    wrong: DiagnosisLabel | str,
    truth: DiagnosisLabel | str,
    discussion: str,
    path: tuple[str, str],
    taxonomy: Taxonomy,
    phase: str = "phase1",
) -> ExperienceNote:
    """Ask the agent for a note about ``wrong`` vs ``truth``.

    The first attempt plus up to two re-prompts; each re-prompt carries the
    parse error or schema violations from the previous answer.
    """
    wrong, truth = as_label(wrong), as_label(truth)
    canonical_pair_key(wrong, truth)
    if not discussion.strip():
        raise ExtractionFailed(f"case {case.id}: no expert discussion to learn from")
    feedback: str | None = None
    for attempt in range(1 + EXTRACTION_REPROMPTS):
        try:
            payload = agent.extract_note(case, wrong, truth, discussion, path, feedback=feedback)
            note = note_from_payload(payload, case, wrong, truth, path, phase)
        except MalformedResponse as exc:
            feedback = str(exc)
            logger.info("extraction attempt %d for %s unparsable: %s", attempt + 1, case.id, exc)
            continue
        except AgentUnavailable as exc:
            raise ExtractionFailed(f"case {case.id}: agent unavailable ({exc})") from exc
        violations = validate_note(note, taxonomy)
        if not violations:
            return note
        feedback = "; ".join(violations)
        logger.info("extraction attempt %d for %s invalid: %s", attempt + 1, case.id, feedback)
    raise ExtractionFailed(f"case {case.id}: no valid note after {1 + EXTRACTION_REPROMPTS} attempts ({feedback})")


def score_relevance(agent: AgentGateway, case: CaseRecord, note: ExperienceNote) -> str:
    try:
        verdict = str(agent.score_relevance(case, note)).strip().lower()
    except Exception as exc:  # noqa: BLE001 - any failure means "unknown"
        logger.info("relevance scoring failed for %s: %s", case.id, exc)
        return "unknown"
    return verdict if verdict in ("relevant", "irrelevant") else "unknown"


def judge_match(agent: AgentGateway, case: CaseRecord, predicted: DiagnosisLabel) -> bool:
    """Agent-as-judge grading; falls back to exact match when unsupported or failing."""
    judge = getattr(agent, "judge_match", None)
    if judge is not None:
        try:
            return bool(judge(case, predicted))
        except (AgentUnavailable, MalformedResponse) as exc:
            logger.warning("judge failed for %s, using exact match: %s", case.id, exc)
    return predicted == case.ground_truth
