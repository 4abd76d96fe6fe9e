"""JSON-over-HTTP POST with bounded retries and exponential backoff."""

from __future__ import annotations

import logging
import time
from typing import Any, Callable, Mapping

import httpx

logger = logging.getLogger(__name__)

MAX_ATTEMPTS = 3


class TransportFailure(RuntimeError):
    pass


def _retryable(status: int) -> bool:
    return status == 429 or status >= 500


def post_json(
    client: httpx.Client,
    url: str,
    payload: Mapping[str, Any],
    *,
    headers: Mapping[str, str] | None = None,
    attempts: int = MAX_ATTEMPTS,
    backoff: float = 0.5,
    sleep: Callable[[float], None] = time.sleep,
) -> Any:
    """POST ``payload`` and return the decoded JSON body.

    Transport errors, 429 and 5xx are retried up to ``attempts`` total tries
    (capped at 3) with delays ``backoff * 2**i``. Anything else fails fast.
    """
    attempts = max(1, min(attempts, MAX_ATTEMPTS))
    last: str = "no attempt made"
    for attempt in range(attempts):
        if attempt:
            sleep(backoff * 2 ** (attempt - 1))
        try:
            response = client.post(url, json=dict(payload), headers=dict(headers or {}))
        except httpx.HTTPError as exc:
            last = f"{type(exc).__name__}: {exc}"
            logger.warning("POST %s failed (attempt %d/%d): %s", url, attempt + 1, attempts, last)
            continue
        if response.status_code >= 400:
            last = f"HTTP {response.status_code}"
            if not _retryable(response.status_code):
                raise TransportFailure(f"{url}: {last}")
            logger.warning("POST %s returned %s (attempt %d/%d)", url, last, attempt + 1, attempts)
            continue
        try:
            return response.json()
        except ValueError as exc:
            raise TransportFailure(f"{url}: response is not JSON") from exc
    raise TransportFailure(f"{url}: giving up after {attempts} attempts ({last})")


def auth_headers(token: str | None) -> dict[str, str]:
    return {"Authorization": f"Bearer {token}"} if token else {}
