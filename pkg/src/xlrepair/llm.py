"""Pluggable language-model client with deterministic record/replay.

Every LLM interaction in the pipeline goes through `LLMClient.complete`.
In record mode the reply is persisted to a cache file keyed by a request
fingerprint before it is returned; in replay mode the cache is the only
source, so a full pipeline run is reproducible byte-for-byte and tests
never touch the network.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Optional

from . import prompts
from .errors import ReplayMissError, XLRepairError

logger = logging.getLogger(__name__)

Transport = Callable[[str, "CompletionRequest"], str]


@dataclass(frozen=True)
class CompletionRequest:
    template_id: str
    bindings: Mapping[str, str]
    temperature: float = 1.0
    max_tokens: int = 4096
    sample_index: int = 0

    def __post_init__(self):
        if self.sample_index < 0:
            raise ValueError("sample_index must be >= 0")

    def to_dict(self) -> dict:
        return {
            "template_id": self.template_id,
            "bindings": dict(self.bindings),
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "sample_index": self.sample_index,
        }


def fingerprint(req: CompletionRequest) -> str:
    canonical = json.dumps(req.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class CacheIntegrityError(XLRepairError):
    """Stored fingerprint does not match the stored request."""


class ReplayCache:
    """Line-delimited store of {fingerprint, request, reply} records.

    The full request is stored next to its hash so collisions (two
    distinct requests, one fingerprint) are detected on load instead of
    silently replaying the wrong transcript.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[str, str] = {}
        self._requests: dict[str, dict] = {}
        if self.path.exists():
            self._load()

    def _load(self) -> None:
        with self.path.open("r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                record = json.loads(line)
                fp = record["fingerprint"]
                request = record["request"]
                recomputed = hashlib.sha256(
                    json.dumps(request, sort_keys=True, separators=(",", ":")).encode("utf-8")
                ).hexdigest()
                if recomputed != fp:
                    raise CacheIntegrityError(
                        f"{self.path}:{line_no}: fingerprint does not match stored request"
                    )
                if fp in self._requests and self._requests[fp] != request:
                    raise CacheIntegrityError(
                        f"{self.path}:{line_no}: fingerprint collision between distinct requests"
                    )
                self._entries[fp] = record["reply"]
                self._requests[fp] = request

    def get(self, fp: str) -> Optional[str]:
        with self._lock:
            return self._entries.get(fp)

    def put(self, req: CompletionRequest, reply: str) -> None:
        fp = fingerprint(req)
        record = {"fingerprint": fp, "request": req.to_dict(), "reply": reply}
        with self._lock:
            if fp in self._entries:
                return
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
                fh.flush()
            self._entries[fp] = reply
            self._requests[fp] = req.to_dict()

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, fp: str) -> bool:
        return fp in self._entries

    def requests_for_template(self, template_id: str) -> list[dict]:
        with self._lock:
            return [r for r in self._requests.values() if r["template_id"] == template_id]


class TransportError(XLRepairError):
    """Transient transport failure; retried with backoff."""


class _RateLimiter:
    """Token bucket over requests/minute plus an in-flight semaphore."""

    def __init__(self, requests_per_minute: int, max_inflight: int):
        self.rpm = max(1, requests_per_minute)
        self._sem = threading.Semaphore(max(1, max_inflight))
        self._lock = threading.Lock()
        self._tokens = float(self.rpm)
        self._last = time.monotonic()

    def __enter__(self):
        self._sem.acquire()
        while True:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(float(self.rpm), self._tokens + (now - self._last) * self.rpm / 60.0)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return self
                wait = (1.0 - self._tokens) * 60.0 / self.rpm
            time.sleep(wait)

    def __exit__(self, *exc):
        self._sem.release()


class LLMClient:
    """Mode `record`: render prompt, call the transport (with retries and
    rate limiting), persist the reply, return it. Mode `replay`: return
    the recorded reply or fail loudly with the missing fingerprint."""

    def __init__(
        self,
        mode: str,
        cache: ReplayCache,
        transport: Optional[Transport] = None,
        template_dir: Optional[str | Path] = None,
        retries: int = 3,
        backoff_base: float = 1.0,
        requests_per_minute: int = 600,
        max_inflight: int = 4,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if mode not in ("record", "replay"):
            raise ValueError(f"mode must be 'record' or 'replay', got {mode!r}")
        if mode == "record" and transport is None:
            raise ValueError("record mode requires a transport")
        self.mode = mode
        self.cache = cache
        self.transport = transport
        self.template_dir = template_dir
        self.retries = retries
        self.backoff_base = backoff_base
        self._sleep = sleep
        self._limiter = _RateLimiter(requests_per_minute, max_inflight)

    def render_prompt(self, req: CompletionRequest) -> str:
        template = prompts.load_template(req.template_id, self.template_dir)
        return prompts.render(template, req.bindings)

    def complete(self, req: CompletionRequest) -> str:
        fp = fingerprint(req)
        cached = self.cache.get(fp)
        if cached is not None:
            return cached
        if self.mode == "replay":
            raise ReplayMissError(fp, req.template_id)
        prompt = self.render_prompt(req)
        reply = self._call_with_retries(prompt, req)
        self.cache.put(req, reply)
        return reply

    def _call_with_retries(self, prompt: str, req: CompletionRequest) -> str:
        assert self.transport is not None
        last_error: Optional[Exception] = None
        for attempt in range(self.retries + 1):
            try:
                with self._limiter:
                    return self.transport(prompt, req)
            except TransportError as exc:
                last_error = exc
                if attempt < self.retries:
                    delay = self.backoff_base * (2**attempt)
                    logger.warning(
                        "transport error (%s); retry %d/%d in %.1fs",
                        exc, attempt + 1, self.retries, delay,
                    )
                    self._sleep(delay)
        raise TransportError(
            f"retry budget exhausted for template {req.template_id!r}: {last_error}"
        )


def make_http_transport(
    endpoint: str,
    model: str,
    api_key_env: str = "XLREPAIR_API_KEY",
    timeout: float = 120.0,
) -> Transport:
    """Chat-completions transport against a generic OpenAI-style endpoint."""
    import requests

    api_key = os.environ.get(api_key_env, "")

    def _transport(prompt: str, req: CompletionRequest) -> str:
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        body = {
            "model": model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        try:
            resp = requests.post(endpoint, json=body, headers=headers, timeout=timeout)
        except requests.RequestException as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code in (429, 500, 502, 503, 504):
            raise TransportError(f"HTTP {resp.status_code}")
        resp.raise_for_status()
        data = resp.json()
        return data["choices"][0]["message"]["content"]

    return _transport


_FENCE = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)


def fenced_blocks(reply: str) -> list[str]:
    """All fenced blocks in the reply, in order, fences stripped."""
    return [m.group(1) for m in _FENCE.finditer(reply)]


def extract_code(reply: str) -> Optional[str]:
    """Code is taken from the last fenced block; chatty prefaces and
    trailing commentary are ignored. None when the reply has no fence."""
    blocks = fenced_blocks(reply)
    if not blocks:
        return None
    return blocks[-1].rstrip("\n")


def extract_json(reply: str) -> Optional[dict]:
    """Structured verdicts come from the last fenced block that parses
    as a JSON object."""
    for block in reversed(fenced_blocks(reply)):
        try:
            data = json.loads(block)
        except json.JSONDecodeError:
            continue
        if isinstance(data, dict):
            return data
    return None
