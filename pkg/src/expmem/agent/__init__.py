from .base import AgentGateway, AgentUnavailable, Diagnosis, ExtractionFailed, MalformedResponse
from .mock import MockAgent, MockAgentScript
from .ops import (
    diagnose,
    extract_note,
    judge_match,
    propose_candidates,
    repair_paths,
    score_relevance,
    select_paths,
)
from .remote import HttpAgent

__all__ = [
    "AgentGateway",
    "AgentUnavailable",
    "Diagnosis",
    "ExtractionFailed",
    "HttpAgent",
    "MalformedResponse",
    "MockAgent",
    "MockAgentScript",
    "diagnose",
    "extract_note",
    "judge_match",
    "propose_candidates",
    "repair_paths",
    "score_relevance",
    "select_paths",
]
