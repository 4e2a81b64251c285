"""Uniform client for the two model roles behind a chat-completions wire.

The pipeline talks to two endpoints: a synthesis model (question writing,
high-fidelity target answers) and the base model being adapted (captions,
contrastive answers). Both are reached through the same JSON-over-HTTP
protocol:

    POST {base_url}/chat/completions
    {
      "model": "...",
      "messages": [{"role": "user", "content": [
          {"type": "text", "text": "..."},
          {"type": "image", "media_type": "image/png", "data": "<base64>"}
      ]}],
      "temperature": 0.2,
      "seed": 12345,
      "max_tokens": 512,
      "logprobs": false
    }

and the response is read from ``choices[0].message.content`` (string or text
parts), with optional ``choices[0].logprobs.content`` token logprobs.

A deterministic mock backend stands in for both roles in tests: responses are
a pure function of (request digest, sampling seed), so reruns and concurrency
changes cannot alter pipeline output.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass
from typing import Callable, Optional, Protocol

from .domain import ImageRef

logger = logging.getLogger(__name__)

ENV_SYNTH_BASE_URL = "SDFT_SYNTH_BASE_URL"
ENV_SYNTH_API_KEY = "SDFT_SYNTH_API_KEY"
ENV_BASE_BASE_URL = "SDFT_BASE_BASE_URL"
ENV_BASE_API_KEY = "SDFT_BASE_API_KEY"

DEFAULT_RETRIES = 3
DEFAULT_BACKOFF_BASE_S = 0.5
DEFAULT_JITTER = 0.2
DEFAULT_TIMEOUT_S = 120.0
DEFAULT_LIVE_RATE_LIMIT = 2.0  # requests/sec per role


class GatewayError(Exception):
    pass


class TransportError(GatewayError):
    """Endpoint unreachable or persistently failing after retries."""


class ProtocolError(GatewayError):
    """Endpoint answered, but not in the expected shape."""


class EmptyResponse(GatewayError):
    """Endpoint returned a blank completion."""


class UnscriptedRequest(GatewayError):
    """Strict mock received a request no script rule matches."""


class ModelRole:
    SYNTHESIZER = "synthesizer"
    BASE = "base"


@dataclass(frozen=True)
class ChatMessage:
    speaker: str  # system | user | assistant
    text: str
    images: tuple[ImageRef, ...] = ()


@dataclass(frozen=True)
class ChatRequest:
    role: str
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0
    sampling_seed: Optional[int] = None
    max_tokens: int = 512
    want_logprobs: bool = False

    def validate(self) -> None:
        if not self.messages:
            raise ValueError("messages must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        for msg in self.messages:
            if msg.speaker != "system":
                if msg.speaker != "user":
                    raise ValueError("first non-system speaker must be user")
                break

    def last_user_text(self) -> str:
        for msg in reversed(self.messages):
            if msg.speaker == "user":
                return msg.text
        return ""

    def digest(self) -> str:
        """Canonical content hash, stable across processes."""
        canonical = {
            "role": self.role,
            "messages": [
                {
                    "speaker": m.speaker,
                    "text": m.text,
                    "images": [img.digest for img in m.images],
                }
                for m in self.messages
            ],
            "temperature": self.temperature,
            "sampling_seed": self.sampling_seed,
            "max_tokens": self.max_tokens,
            "want_logprobs": self.want_logprobs,
        }
        blob = json.dumps(canonical, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ChatResponse:
    text: str
    token_logprobs: Optional[tuple[tuple[str, float], ...]] = None
    attempts: int = 1
    latency_ms: float = 0.0


class Backend(Protocol):
    def complete(self, request: ChatRequest) -> ChatResponse: ...


class _RateLimiter:
    """Spaces requests at least 1/rate seconds apart. No-op when rate is None."""

    def __init__(self, rate_per_sec: Optional[float], clock: Callable[[], float],
                 sleep: Callable[[float], None]):
        self._interval = 1.0 / rate_per_sec if rate_per_sec else 0.0
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._next_allowed = 0.0

    def wait(self) -> None:
        if self._interval <= 0:
            return
        with self._lock:
            now = self._clock()
            delay = self._next_allowed - now
            self._next_allowed = max(now, self._next_allowed) + self._interval
        if delay > 0:
            self._sleep(delay)


@dataclass
class EndpointConfig:
    base_url: str
    api_key: str = ""
    model: str = "default"
    timeout_s: float = DEFAULT_TIMEOUT_S
    rate_limit_per_sec: Optional[float] = DEFAULT_LIVE_RATE_LIMIT
    retries: int = DEFAULT_RETRIES


def _extract_text(payload: dict) -> str:
    try:
        content = payload["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise ProtocolError(f"malformed completion payload: {exc}") from exc
    if isinstance(content, str):
        return content
    if isinstance(content, list):
        return "".join(
            part.get("text", "") for part in content if part.get("type") == "text"
        )
    raise ProtocolError(f"unsupported content type: {type(content).__name__}")


def _extract_logprobs(payload: dict) -> Optional[tuple[tuple[str, float], ...]]:
    logprobs = payload.get("choices", [{}])[0].get("logprobs")
    if not logprobs:
        return None
    content = logprobs.get("content") or []
    return tuple((entry.get("token", ""), float(entry.get("logprob", 0.0))) for entry in content)


class HttpBackend:
    """Chat-completions client with retries, backoff+jitter, rate limiting.

    Transient failures (connection errors, timeouts, HTTP 429/5xx) are retried
    up to ``retries`` times with 0.5s * 2^k backoff and +/-20% jitter; other
    HTTP errors raise ProtocolError immediately. ``post``, ``sleep``,
    ``clock``, and the jitter ``rng`` are injectable for tests.
    """

    def __init__(
        self,
        config: EndpointConfig,
        post: Optional[Callable] = None,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.monotonic,
        rng: Optional[random.Random] = None,
    ):
        if post is None:
            import requests

            post = requests.post
        self._config = config
        self._post = post
        self._sleep = sleep
        self._clock = clock
        self._rng = rng or random.Random()
        self._limiter = _RateLimiter(config.rate_limit_per_sec, clock, sleep)

    def _payload(self, request: ChatRequest) -> dict:
        messages = []
        for msg in request.messages:
            content: list[dict] = [{"type": "text", "text": msg.text}]
            for image in msg.images:
                content.append(
                    {
                        "type": "image",
                        "media_type": image.media_type.mime,
                        "data": base64.b64encode(image.load_bytes()).decode("ascii"),
                    }
                )
            messages.append({"role": msg.speaker, "content": content})
        payload: dict = {
            "model": self._config.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "logprobs": request.want_logprobs,
        }
        if request.sampling_seed is not None:
            payload["seed"] = request.sampling_seed
        return payload

    def complete(self, request: ChatRequest) -> ChatResponse:
        request.validate()
        payload = self._payload(request)
        url = self._config.base_url.rstrip("/") + "/chat/completions"
        headers = {"Content-Type": "application/json"}
        if self._config.api_key:
            headers["Authorization"] = f"Bearer {self._config.api_key}"

        started = self._clock()
        last_error: Optional[Exception] = None
        for attempt in range(1, self._config.retries + 2):
            self._limiter.wait()
            try:
                response = self._post(
                    url, json=payload, headers=headers, timeout=self._config.timeout_s
                )
                status = response.status_code
                if status == 429 or status >= 500:
                    raise TransportError(f"HTTP {status}")
                if status >= 400:
                    raise ProtocolError(f"HTTP {status}: {response.text[:200]}")
                body = response.json()
            except (TransportError, ConnectionError, TimeoutError, OSError) as exc:
                last_error = exc
                if attempt > self._config.retries:
                    break
                delay = DEFAULT_BACKOFF_BASE_S * (2 ** (attempt - 1))
                delay *= 1.0 + self._rng.uniform(-DEFAULT_JITTER, DEFAULT_JITTER)
                logger.warning(
                    "%s request failed (attempt %d/%d): %s; retrying in %.2fs",
                    request.role, attempt, self._config.retries + 1, exc, delay,
                )
                self._sleep(delay)
                continue
            except ValueError as exc:  # response.json() parse failure
                raise ProtocolError(f"invalid JSON from endpoint: {exc}") from exc

            text = _extract_text(body)
            if not text.strip():
                raise EmptyResponse(f"blank completion from {request.role} endpoint")
            return ChatResponse(
                text=text,
                token_logprobs=_extract_logprobs(body) if request.want_logprobs else None,
                attempts=attempt,
                latency_ms=(self._clock() - started) * 1000.0,
            )
        raise TransportError(
            f"{request.role} endpoint failed after {self._config.retries + 1} attempts: {last_error}"
        )


@dataclass(frozen=True)
class ScriptRule:
    """One mock behavior: matched by substring of the last user message,
    optionally narrowed by role or by an attached image digest.

    Response precedence: ``by_seed`` (exact sampling-seed lookup), then
    ``variants`` (indexed by seed modulo the variant count), then ``text``.
    """

    match: str
    role: Optional[str] = None
    image_digest: Optional[str] = None
    text: Optional[str] = None
    variants: tuple[str, ...] = ()
    by_seed: Optional[dict[int, str]] = None
    logprobs: Optional[tuple[float, ...]] = None

    def matches(self, request: ChatRequest) -> bool:
        if self.role is not None and request.role != self.role:
            return False
        if self.image_digest is not None:
            attached = {img.digest for msg in request.messages for img in msg.images}
            if self.image_digest not in attached:
                return False
        return self.match in request.last_user_text()

    def respond(self, request: ChatRequest) -> Optional[str]:
        seed = request.sampling_seed or 0
        if self.by_seed is not None:
            return self.by_seed.get(seed)
        if self.variants:
            return self.variants[seed % len(self.variants)]
        return self.text


@dataclass
class CallLogEntry:
    role: str
    user_text: str
    sampling_seed: Optional[int]
    digest: str


class MockBackend:
    """Scripted, deterministic stand-in for both model endpoints.

    Each response is a pure function of the request digest and sampling seed;
    no hidden per-call state, so concurrent and sequential runs of the same
    job produce identical outputs. In strict mode a request with no matching
    rule raises UnscriptedRequest; otherwise a deterministic filler response
    derived from the digest is returned.
    """

    def __init__(self, rules: Optional[list[ScriptRule]] = None, strict: bool = False):
        self.rules: list[ScriptRule] = list(rules or [])
        self.strict = strict
        self._lock = threading.Lock()
        self.call_log: list[CallLogEntry] = []

    def add(self, match: str, text: Optional[str] = None, **kwargs) -> "MockBackend":
        self.rules.append(ScriptRule(match=match, text=text, **kwargs))
        return self

    @classmethod
    def from_script_file(cls, path) -> "MockBackend":
        raw = json.loads(open(path, encoding="utf-8").read())
        rules = [
            ScriptRule(
                match=r["match"],
                role=r.get("role"),
                image_digest=r.get("image_digest"),
                text=r.get("text"),
                variants=tuple(r.get("variants", ())),
                by_seed={int(k): v for k, v in r["by_seed"].items()} if "by_seed" in r else None,
                logprobs=tuple(r["logprobs"]) if "logprobs" in r else None,
            )
            for r in raw.get("rules", [])
        ]
        return cls(rules, strict=raw.get("strict", False))

    def _generated(self, digest: str, seed: Optional[int]) -> str:
        return f"Mock response {digest[:12]} (seed={seed})."

    def _generated_logprobs(self, digest: str) -> tuple[tuple[str, float], ...]:
        rnd = random.Random(int(digest[:12], 16))
        return tuple((f"tok{i}", -rnd.uniform(0.0, 3.0)) for i in range(4))

    def complete(self, request: ChatRequest) -> ChatResponse:
        request.validate()
        digest = request.digest()
        with self._lock:
            self.call_log.append(
                CallLogEntry(
                    role=request.role,
                    user_text=request.last_user_text(),
                    sampling_seed=request.sampling_seed,
                    digest=digest,
                )
            )
        text: Optional[str] = None
        logprob_values: Optional[tuple[float, ...]] = None
        for rule in self.rules:
            if rule.matches(request):
                candidate = rule.respond(request)
                if candidate is not None:
                    text = candidate
                    logprob_values = rule.logprobs
                    break
        if text is None:
            if self.strict:
                raise UnscriptedRequest(
                    f"no script rule matches {request.role} request: "
                    f"{request.last_user_text()[:80]!r} (seed={request.sampling_seed})"
                )
            text = self._generated(digest, request.sampling_seed)
        if not text.strip():
            raise EmptyResponse("scripted blank completion")
        token_logprobs = None
        if request.want_logprobs:
            if logprob_values is not None:
                token_logprobs = tuple(
                    (f"tok{i}", lp) for i, lp in enumerate(logprob_values)
                )
            else:
                token_logprobs = self._generated_logprobs(digest)
        return ChatResponse(text=text, token_logprobs=token_logprobs, attempts=1)


class Gateway:
    """Routes requests to the backend configured for their role and keeps
    per-role call counts for reporting. Safe for concurrent use."""

    def __init__(self, synthesizer: Backend, base: Backend):
        self._backends = {ModelRole.SYNTHESIZER: synthesizer, ModelRole.BASE: base}
        self._lock = threading.Lock()
        self.call_counts: dict[str, int] = {ModelRole.SYNTHESIZER: 0, ModelRole.BASE: 0}

    def complete(self, request: ChatRequest) -> ChatResponse:
        backend = self._backends.get(request.role)
        if backend is None:
            raise ValueError(f"no backend configured for role {request.role!r}")
        with self._lock:
            self.call_counts[request.role] += 1
        return backend.complete(request)

    @classmethod
    def from_env(cls, env: Optional[dict[str, str]] = None, **endpoint_overrides) -> "Gateway":
        env = dict(os.environ if env is None else env)
        synth_url = env.get(ENV_SYNTH_BASE_URL)
        base_url = env.get(ENV_BASE_BASE_URL)
        if not synth_url or not base_url:
            raise ValueError(
                f"{ENV_SYNTH_BASE_URL} and {ENV_BASE_BASE_URL} must be set for live endpoints"
            )
        synth = HttpBackend(
            EndpointConfig(
                base_url=synth_url,
                api_key=env.get(ENV_SYNTH_API_KEY, ""),
                **endpoint_overrides,
            )
        )
        base = HttpBackend(
            EndpointConfig(
                base_url=base_url,
                api_key=env.get(ENV_BASE_API_KEY, ""),
                **endpoint_overrides,
            )
        )
        return cls(synthesizer=synth, base=base)

    @classmethod
    def mock(cls, backend: MockBackend) -> "Gateway":
        return cls(synthesizer=backend, base=backend)
