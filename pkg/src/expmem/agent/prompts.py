"""Prompt templates and response parsers for the remote agent."""

from __future__ import annotations

import json
import re
from importlib import resources
from pathlib import Path
from string import Template
from typing import Any, Sequence

from ..core import ExperienceNote
from .base import MalformedResponse

TEMPLATE_NAMES = (
    "system", "diagnose", "notes_block", "propose", "select_paths", "extract", "relevance", "judge",
)

_FINAL = re.compile(r"final\s+diagnosis\s*[:：]\s*(?P<label>[^\n]+)", re.IGNORECASE)
_VERDICT = re.compile(r"verdict\s*[:：]\s*(?P<verdict>[a-z ]+)", re.IGNORECASE)
_FENCE = re.compile(r"```(?:json)?\s*\n(?P<body>.*?)```", re.DOTALL | re.IGNORECASE)


class PromptSet:
    """Template bundle; files in ``directory`` override the shipped defaults by name."""

    def __init__(self, directory: str | Path | None = None):
        self.templates: dict[str, Template] = {}
        shipped = resources.files("expmem.agent").joinpath("templates")
        for name in TEMPLATE_NAMES:
            override = Path(directory, f"{name}.txt") if directory else None
            if override is not None and override.exists():
                text = override.read_text(encoding="utf-8")
            else:
                text = shipped.joinpath(f"{name}.txt").read_text(encoding="utf-8")
            self.templates[name] = Template(text)

    def render(self, name: str, **values: Any) -> str:
        return self.templates[name].safe_substitute(**{k: str(v) for k, v in values.items()})


def render_note(note: ExperienceNote) -> str:
    lines = [f"[{note.differentials.display}] ({note.department} / {note.organ_region})", "Confusions:"]
    lines += [f"- {c}" for c in note.confusions]
    lines.append("Discriminators:")
    lines += [f"- {label}: {text}" for label, text in note.discriminators.items()]
    lines.append("Decision rules:")
    lines += [f"- {rule}" for rule in note.decision_rule]
    if note.error_analysis:
        lines.append("Past reasoning errors:")
        lines += [f"- {entry}" for entry in note.error_analysis]
    return "\n".join(lines)


def render_notes(notes: Sequence[ExperienceNote]) -> str:
    return "\n\n".join(render_note(n) for n in notes)


def parse_final_answer(text: str) -> tuple[str, str]:
    """Return (label, rationale) from the last ``FINAL DIAGNOSIS:`` line."""
    matches = list(_FINAL.finditer(text))
    if not matches:
        raise MalformedResponse("no 'FINAL DIAGNOSIS:' line in response")
    last = matches[-1]
    label = last["label"].strip().rstrip(".").strip("*_`\"' ").rstrip(".").strip()
    if not label:
        raise MalformedResponse("empty final diagnosis")
    return label, text[: last.start()].strip()


def parse_verdict(text: str) -> str:
    matches = list(_VERDICT.finditer(text))
    if not matches:
        raise MalformedResponse("no 'VERDICT:' line in response")
    return " ".join(matches[-1]["verdict"].lower().split())


def extract_json(text: str) -> Any:
    """Decode the first fenced JSON block, else the first bare JSON value in ``text``."""
    for match in _FENCE.finditer(text):
        try:
            return json.loads(match["body"])
        except json.JSONDecodeError:
            continue
    decoder = json.JSONDecoder()
    for i, ch in enumerate(text):
        if ch in "[{":
            try:
                value, _ = decoder.raw_decode(text, i)
                return value
            except json.JSONDecodeError:
                continue
    raise MalformedResponse("no JSON value found in response")
