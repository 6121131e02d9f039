"""Chat-completion backends: an OpenAI-compatible HTTP client and a scripted mock."""

from __future__ import annotations

import enum
import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping

import httpx

log = logging.getLogger(__name__)

DEFAULT_MARKER = "__default__"
ATTEMPT_SEP = "#"


class BackendError(RuntimeError):
    """Terminal backend failure (retries exhausted, non-retryable status, tag miss)."""


class BackendKind(str, enum.Enum):
    HTTP_CHAT = "HttpChat"
    SCRIPTED_MOCK = "ScriptedMock"


@dataclass(frozen=True)
class CompletionRequest:
    system_text: str
    user_text: str
    model_name: str
    request_tag: str
    temperature: float = 0.0
    max_output_tokens: int = 2048

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not self.system_text.strip() or not self.user_text.strip():
            raise ValueError("request texts must be non-empty")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")


@dataclass(frozen=True)
class CompletionResponse:
    raw_text: str
    latency_ms: int = 0
    attempt: int = 1


@dataclass(frozen=True)
class BackendConfig:
    kind: BackendKind
    endpoint_url: str | None = None
    api_key_env_var: str | None = None
    timeout_s: float = 120.0
    max_retries: int = 3
    script_path: str | None = None
    max_in_flight: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", BackendKind(self.kind))
        if self.kind is BackendKind.HTTP_CHAT and not self.endpoint_url:
            raise ValueError("HttpChat backend requires endpoint_url")
        if self.kind is BackendKind.SCRIPTED_MOCK and not self.script_path:
            raise ValueError("ScriptedMock backend requires script_path")
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> BackendConfig:
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "endpoint_url": self.endpoint_url,
            "api_key_env_var": self.api_key_env_var,
            "timeout_s": self.timeout_s,
            "max_retries": self.max_retries,
            "script_path": self.script_path,
            "max_in_flight": self.max_in_flight,
        }


def split_tag(tag: str) -> tuple[str, int]:
    """``"int01/hamd/3#2"`` -> ``("int01/hamd/3", 2)``; attempt defaults to 1."""
    base, sep, n = tag.rpartition(ATTEMPT_SEP)
    if sep and n.isdigit():
        return base, int(n)
    return tag, 1


class ScriptedMockBackend:
    """Deterministic backend answering from a JSON script keyed by request tag.

    Lookup order: the exact tag, then the tag without its ``#attempt`` suffix
    (a list value is indexed by attempt, repeating its last entry), then
    ``__default__``.
    """

    def __init__(self, script: Mapping[str, str | list[str]]):
        for k, v in script.items():
            if isinstance(v, list):
                if not v or not all(isinstance(x, str) for x in v):
                    raise ValueError(f"mock script entry {k!r}: list values must be non-empty strings")
            elif not isinstance(v, str):
                raise ValueError(f"mock script entry {k!r}: value must be a string or list of strings")
        self.script = dict(script)

    @classmethod
    def from_path(cls, path: str | Path) -> ScriptedMockBackend:
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def _lookup(self, tag: str) -> str:
        base, attempt = split_tag(tag)
        for key in (tag, base):
            value = self.script.get(key)
            if isinstance(value, list):
                return value[min(attempt, len(value)) - 1]
            if isinstance(value, str):
                return value
        if DEFAULT_MARKER in self.script:
            value = self.script[DEFAULT_MARKER]
            return value if isinstance(value, str) else value[0]
        raise BackendError(f"mock script has no entry for tag {tag!r} and no default")

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        return CompletionResponse(raw_text=self._lookup(req.request_tag), latency_ms=0, attempt=1)


class _RetryableError(Exception):
    pass


class HttpChatBackend:
    """OpenAI-compatible ``/chat/completions`` client with exponential backoff.

    Transport errors, timeouts and 5xx responses are retried up to
    ``max_retries`` times; other non-2xx statuses fail immediately.
    """

    backoff_base_s = 1.0
    backoff_factor = 2.0
    jitter = 0.2

    def __init__(
        self,
        cfg: BackendConfig,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        self.cfg = cfg
        self._client = client or httpx.Client(timeout=cfg.timeout_s)
        self._sleep = sleep
        self._rng = rng or random.Random()
        self._rng_lock = threading.Lock()
        self._gate = threading.BoundedSemaphore(cfg.max_in_flight) if cfg.max_in_flight else None

    @property
    def url(self) -> str:
        return self.cfg.endpoint_url.rstrip("/") + "/chat/completions"  # type: ignore[union-attr]

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.cfg.api_key_env_var:
            key = os.environ.get(self.cfg.api_key_env_var)
            if not key:
                raise BackendError(f"environment variable {self.cfg.api_key_env_var} is not set")
            headers["Authorization"] = f"Bearer {key}"
        return headers

    @staticmethod
    def request_body(req: CompletionRequest) -> dict[str, Any]:
        return {
            "model": req.model_name,
            "messages": [
                {"role": "system", "content": req.system_text},
                {"role": "user", "content": req.user_text},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        }

    def backoff_delay(self, retry_index: int) -> float:
        base = self.backoff_base_s * self.backoff_factor**retry_index
        with self._rng_lock:
            return base * (1.0 + self._rng.uniform(-self.jitter, self.jitter))

    def _once(self, req: CompletionRequest) -> str:
        try:
            resp = self._client.post(
                self.url, json=self.request_body(req), headers=self._headers(), timeout=self.cfg.timeout_s
            )
        except httpx.TimeoutException as exc:
            raise _RetryableError(f"timeout after {self.cfg.timeout_s}s") from exc
        except httpx.TransportError as exc:
            raise _RetryableError(f"transport error: {exc}") from exc
        if resp.status_code >= 500:
            raise _RetryableError(f"HTTP {resp.status_code}")
        if not 200 <= resp.status_code < 300:
            raise BackendError(f"{req.request_tag}: HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"{req.request_tag}: malformed completion payload") from exc
        return content or ""

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        last = ""
        for attempt in range(1, self.cfg.max_retries + 2):
            t0 = time.monotonic()
            try:
                if self._gate is not None:
                    with self._gate:
                        text = self._once(req)
                else:
                    text = self._once(req)
            except _RetryableError as exc:
                last = str(exc)
                log.warning("%s: attempt %d failed: %s", req.request_tag, attempt, last)
                if attempt <= self.cfg.max_retries:
                    self._sleep(self.backoff_delay(attempt - 1))
                continue
            latency = int((time.monotonic() - t0) * 1000)
            return CompletionResponse(raw_text=text, latency_ms=latency, attempt=attempt)
        raise BackendError(f"{req.request_tag}: retries exhausted ({self.cfg.max_retries}): {last}")

    def close(self) -> None:
        self._client.close()


def make_backend(cfg: BackendConfig) -> ScriptedMockBackend | HttpChatBackend:
    if cfg.kind is BackendKind.SCRIPTED_MOCK:
        return ScriptedMockBackend.from_path(cfg.script_path)  # type: ignore[arg-type]
    return HttpChatBackend(cfg)


def complete(cfg: BackendConfig, req: CompletionRequest) -> CompletionResponse:
    """One-shot convenience wrapper; long runs should reuse :func:`make_backend`."""
    return make_backend(cfg).complete(req)
