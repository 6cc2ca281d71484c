"""Small JSON-over-HTTP client shared by the LLM extractor and the remote encoder."""

from __future__ import annotations

import logging
import threading
import time
import uuid

import httpx

log = logging.getLogger(__name__)


class TransportError(RuntimeError):
    """Raised when every attempt to reach a remote endpoint failed.

    ``attempts`` is the number of tries made; callers may retry later.
    """

    def __init__(self, message: str, attempts: int, retryable: bool = True):
        super().__init__(f"{message} (after {attempts} attempt(s))")
        self.attempts = attempts
        self.retryable = retryable


class HttpJsonClient:
    """POST JSON bodies with bounded retries and a cap on in-flight requests.

    Transport failures, timeouts and 5xx/429 answers are retried up to
    ``max_attempts`` times with exponential backoff (1 s, 2 s, 4 s, ...).
    Every request carries an ``X-Request-ID`` correlation header.
    """

    def __init__(
        self,
        url: str,
        api_key: str | None = None,
        timeout: float = 60.0,
        max_attempts: int = 3,
        backoff: float = 1.0,
        max_in_flight: int = 4,
        transport: httpx.BaseTransport | None = None,
        sleep=time.sleep,
    ):
        self.url = url
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max_in_flight)
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(headers=headers, timeout=timeout, transport=transport)

    def post(self, payload: dict) -> dict:
        request_id = uuid.uuid4().hex
        last_err = "no attempt made"
        for attempt in range(1, self.max_attempts + 1):
            with self._slots:
                try:
                    resp = self._client.post(
                        self.url, json=payload, headers={"X-Request-ID": request_id}
                    )
                except httpx.HTTPError as exc:
                    last_err = f"{type(exc).__name__}: {exc}"
                else:
                    if resp.status_code < 400:
                        return resp.json()
                    if resp.status_code != 429 and resp.status_code < 500:
                        raise TransportError(
                            f"{self.url} answered HTTP {resp.status_code}", attempt, retryable=False
                        )
                    last_err = f"HTTP {resp.status_code}"
            log.warning("request %s attempt %d failed: %s", request_id, attempt, last_err)
            if attempt < self.max_attempts:
                self._sleep(self.backoff * 2 ** (attempt - 1))
        raise TransportError(f"{self.url}: {last_err}", self.max_attempts)

    def close(self) -> None:
        self._client.close()
