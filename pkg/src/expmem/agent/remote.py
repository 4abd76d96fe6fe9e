"""Chat-style HTTP+JSON agent adapter.

Wire format::

    request  {"messages": [{"role": ..., "content_parts": [{"type": "text"|"image_ref", "value": ...}]}],
              "max_tokens": N, "temperature": T}     # temperature only when configured
    response {"text": "..."}
"""

from __future__ import annotations

import threading
from typing import Any, Sequence

import httpx

from .._http import TransportFailure, auth_headers, post_json
from ..core import CaseRecord, DiagnosisLabel, ExperienceNote, Taxonomy
from .base import AgentUnavailable, Diagnosis, MalformedResponse
from .prompts import PromptSet, extract_json, parse_final_answer, parse_verdict, render_note, render_notes


class HttpAgent:
    def __init__(
        self,
        url: str,
        *,
        identity: str = "remote-agent",
        token: str | None = None,
        timeout: float = 120.0,
        retries: int = 3,
        max_tokens: int = 2048,
        temperature: float | None = None,
        concurrency: int = 4,
        prompt_dir: str | None = None,
        client: httpx.Client | None = None,
        backoff: float = 1.0,
    ):
        self.url = url
        self.identity = identity
        self.max_tokens = max_tokens
        self.temperature = temperature
        self.retries = retries
        self.backoff = backoff
        self.prompts = PromptSet(prompt_dir)
        self._headers = auth_headers(token)
        self._client = client or httpx.Client(timeout=timeout)
        self._slots = threading.BoundedSemaphore(max(1, concurrency))

    def close(self) -> None:
        self._client.close()

    def _chat(self, prompt: str, image_refs: Sequence[str] = ()) -> str:
        parts = [{"type": "text", "value": prompt}]
        parts += [{"type": "image_ref", "value": ref} for ref in image_refs]
        payload: dict[str, Any] = {
            "messages": [
                {"role": "system", "content_parts": [{"type": "text", "value": self.prompts.render("system")}]},
                {"role": "user", "content_parts": parts},
            ],
            "max_tokens": self.max_tokens,
        }
        if self.temperature is not None:
            payload["temperature"] = self.temperature
        with self._slots:
            try:
                body = post_json(
                    self._client, self.url, payload,
                    headers=self._headers, attempts=self.retries, backoff=self.backoff,
                )
            except TransportFailure as exc:
                raise AgentUnavailable(str(exc)) from exc
        text = body.get("text") if isinstance(body, dict) else None
        if not isinstance(text, str):
            raise MalformedResponse("response lacks a 'text' string")
        return text

    def diagnose(
        self, case: CaseRecord, notes: Sequence[ExperienceNote], attempt: int = 0
    ) -> Diagnosis:
        block = self.prompts.render("notes_block", notes=render_notes(notes)) if notes else ""
        text = self._chat(
            self.prompts.render("diagnose", history=case.clinical_history, notes_block=block),
            case.image_refs,
        )
        label, rationale = parse_final_answer(text)
        return Diagnosis(label=DiagnosisLabel(label), rationale=rationale, raw_response=text)

    def propose_candidates(self, case: CaseRecord) -> list[str]:
        text = self._chat(self.prompts.render("propose", history=case.clinical_history), case.image_refs)
        value = extract_json(text)
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise MalformedResponse("candidate list must be a JSON array of strings")
        return value

    def select_paths(
        self, case: CaseRecord, taxonomy: Taxonomy, max_paths: int
    ) -> list[tuple[str, str]]:
        prompt = self.prompts.render(
            "select_paths", history=case.clinical_history, taxonomy=taxonomy.render(), max_paths=max_paths
        )
        value = extract_json(self._chat(prompt, case.image_refs))
        if not isinstance(value, list):
            raise MalformedResponse("path selection must be a JSON array")
        paths = []
        for item in value:
            if isinstance(item, dict) and "department" in item:
                paths.append((str(item["department"]), str(item.get("organ", item.get("organ_region", "")))))
            elif isinstance(item, (list, tuple)) and len(item) == 2:
                paths.append((str(item[0]), str(item[1])))
        return paths

    def extract_note(
        self,
        case: CaseRecord,
        wrong: DiagnosisLabel,
        truth: DiagnosisLabel,
        discussion: str,
        path: tuple[str, str],
        feedback: str | None = None,
    ) -> dict[str, Any]:
        retry_hint = (
            f"\nYour previous answer could not be used: {feedback}\nReply again with the JSON object only."
            if feedback else ""
        )
        prompt = self.prompts.render(
            "extract",
            history=case.clinical_history,
            wrong=wrong.text,
            truth=truth.text,
            discussion=discussion,
            department=path[0],
            organ=path[1],
            feedback=retry_hint,
        )
        value = extract_json(self._chat(prompt, case.image_refs))
        if not isinstance(value, dict):
            raise MalformedResponse("extraction must be a JSON object")
        return value

    def score_relevance(self, case: CaseRecord, note: ExperienceNote) -> str:
        text = self._chat(self.prompts.render("relevance", history=case.clinical_history, note=render_note(note)))
        verdict = parse_verdict(text)
        return {"relevant": "relevant", "irrelevant": "irrelevant"}.get(verdict, "unknown")

    def judge_match(self, case: CaseRecord, predicted: DiagnosisLabel) -> bool:
        text = self._chat(
            self.prompts.render("judge", truth=case.ground_truth.text, predicted=predicted.text)
        )
        verdict = parse_verdict(text)
        if verdict not in ("match", "no match"):
            raise MalformedResponse(f"unexpected judge verdict {verdict!r}")
        return verdict == "match"
