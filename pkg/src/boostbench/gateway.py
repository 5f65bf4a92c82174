"""Chat-completion client over OpenAI-compatible HTTP endpoints, plus a mock backend.

Every attempt is appended to an exchange log before ``complete`` returns, and
token usage is priced from a pricing table (USD per million tokens).
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Literal, Mapping, Protocol

import httpx

log = logging.getLogger(__name__)


class GatewayError(RuntimeError):
    """Base class for failures talking to a model backend."""


class AuthError(GatewayError):
    pass


class QuotaError(GatewayError):
    pass


class MalformedResponseError(GatewayError):
    pass


class BadRequestError(GatewayError):
    pass


class RetriesExhaustedError(GatewayError):
    pass


class TransientError(GatewayError):
    """Retryable failure (rate limit, timeout, 5xx)."""

    def __init__(self, message: str, retry_after: float | None = None):
        super().__init__(message)
        self.retry_after = retry_after


class UnknownModelError(KeyError):
    pass


class PricingError(ValueError):
    pass


# ---------------------------------------------------------------------------
# pricing

@dataclass(frozen=True)
class ModelSpec:
    alias: str
    wire_name: str
    input_price_per_million: float
    output_price_per_million: float

    def __post_init__(self) -> None:
        if self.input_price_per_million < 0 or self.output_price_per_million < 0:
            raise PricingError(f"negative price for {self.alias}")


class PricingTable:
    def __init__(self, specs: Iterable[ModelSpec] = ()):
        self._specs: dict[str, ModelSpec] = {}
        for s in specs:
            self.add(s)

    def add(self, spec: ModelSpec, replace: bool = False) -> None:
        if spec.alias in self._specs and not replace:
            raise PricingError(f"duplicate model alias {spec.alias!r}")
        self._specs[spec.alias] = spec

    def get(self, alias: str) -> ModelSpec:
        try:
            return self._specs[alias]
        except KeyError:
            raise UnknownModelError(alias) from None

    def __contains__(self, alias: str) -> bool:
        return alias in self._specs

    def __len__(self) -> int:
        return len(self._specs)

    @property
    def aliases(self) -> list[str]:
        return list(self._specs)

    @classmethod
    def default(cls) -> "PricingTable":
        text = resources.files("boostbench.data").joinpath("pricing.json").read_text()
        return register_pricing(json.loads(text))

    @classmethod
    def from_file(cls, path: str | Path, base: "PricingTable | None" = None) -> "PricingTable":
        return register_pricing(json.loads(Path(path).read_text()), base)


def _parse_specs(table: Mapping | list) -> list[ModelSpec]:
    rows = table.get("models", []) if isinstance(table, Mapping) else table
    specs, seen = [], set()
    for row in rows:
        spec = ModelSpec(
            alias=row["alias"],
            wire_name=row.get("wire_name", row["alias"]),
            input_price_per_million=float(row["input"]),
            output_price_per_million=float(row["output"]),
        )
        if spec.alias in seen:
            raise PricingError(f"duplicate model alias {spec.alias!r}")
        seen.add(spec.alias)
        specs.append(spec)
    return specs


def register_pricing(table: Mapping | list, registry: PricingTable | None = None) -> PricingTable:
    """Load ``{"models": [{"alias", "wire_name", "input", "output"}]}`` into a registry.

    Entries replace same-alias entries already in ``registry`` (override files).
    """
    registry = registry if registry is not None else PricingTable()
    for spec in _parse_specs(table):
        registry.add(spec, replace=True)
    return registry


@dataclass(frozen=True)
class TokenUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    reasoning_tokens: int = 0
    # True when completion_tokens already includes reasoning_tokens (OpenAI reporting)
    reasoning_folded: bool = False

    def __post_init__(self) -> None:
        if min(self.prompt_tokens, self.completion_tokens, self.reasoning_tokens) < 0:
            raise ValueError("token counts must be non-negative")
        if self.reasoning_folded and self.reasoning_tokens > self.completion_tokens:
            raise ValueError("folded reasoning tokens exceed completion tokens")

    @property
    def output_tokens(self) -> int:
        if self.reasoning_folded:
            return self.completion_tokens
        return self.completion_tokens + self.reasoning_tokens

    def __add__(self, other: "TokenUsage") -> "TokenUsage":
        # sums are kept unfolded so output_tokens stays additive
        return TokenUsage(
            self.prompt_tokens + other.prompt_tokens,
            (self.output_tokens - self.reasoning_tokens) + (other.output_tokens - other.reasoning_tokens),
            self.reasoning_tokens + other.reasoning_tokens,
        )

    def to_dict(self) -> dict:
        return {"prompt": self.prompt_tokens, "completion": self.completion_tokens,
                "reasoning": self.reasoning_tokens, "folded": self.reasoning_folded}

    @classmethod
    def from_dict(cls, d: Mapping) -> "TokenUsage":
        return cls(d.get("prompt", 0), d.get("completion", 0), d.get("reasoning", 0), d.get("folded", False))


def cost(usage: TokenUsage, spec: ModelSpec, reasoning_only: bool = False) -> float:
    """USD cost. ``reasoning_only`` prices just the reasoning tokens at the output rate."""
    if reasoning_only:
        return usage.reasoning_tokens * spec.output_price_per_million / 1e6
    return (usage.prompt_tokens * spec.input_price_per_million
            + usage.output_tokens * spec.output_price_per_million) / 1e6


# ---------------------------------------------------------------------------
# requests and exchanges

@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[dict, ...]
    params: dict = field(default_factory=dict)
    seed: int | None = None
    # caller-chosen label (e.g. "task_003:r2"); part of the cache key, never sent
    tag: str = ""

    def wire_params(self) -> dict:
        return {k: v for k, v in self.params.items() if v is not None}

    def cache_key(self) -> str:
        blob = json.dumps([self.model, list(self.messages), self.wire_params(), self.seed, self.tag],
                          sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(blob.encode()).hexdigest()

    @property
    def prompt_text(self) -> str:
        return "\n".join(m["content"] for m in self.messages)


@dataclass(frozen=True)
class ChatExchange:
    request: ChatRequest
    response_text: str
    usage: TokenUsage
    latency: float
    backend: Literal["http", "mock", "cache"]
    attempts: int = 1


class Backend(Protocol):
    name: str

    def send(self, request: ChatRequest, wire_name: str) -> tuple[str, TokenUsage]:
        ...


class HttpBackend:
    """OpenAI-compatible ``/chat/completions`` over HTTPS."""

    name = "http"

    def __init__(self, base_url: str = "https://api.openai.com/v1", api_key: str | None = None,
                 api_key_env: str = "OPENAI_API_KEY", timeout: float = 600.0,
                 transport: httpx.BaseTransport | None = None):
        self.api_key = api_key if api_key is not None else os.environ.get(api_key_env)
        if not self.api_key:
            raise AuthError(f"no API key: set {api_key_env}")
        self.client = httpx.Client(base_url=base_url.rstrip("/"), timeout=timeout, transport=transport,
                                   headers={"Authorization": f"Bearer {self.api_key}"})

    def send(self, request: ChatRequest, wire_name: str) -> tuple[str, TokenUsage]:
        payload = {"model": wire_name, "messages": list(request.messages), **request.wire_params()}
        try:
            resp = self.client.post("/chat/completions", json=payload)
        except httpx.TimeoutException as exc:
            raise TransientError(f"timeout: {exc}") from exc
        except httpx.TransportError as exc:
            raise TransientError(f"transport error: {exc}") from exc
        return self._parse(resp)

    @staticmethod
    def _parse(resp: httpx.Response) -> tuple[str, TokenUsage]:
        status = resp.status_code
        if status in (401, 403):
            raise AuthError(f"HTTP {status}: {resp.text[:200]}")
        if status == 429:
            try:
                code = resp.json().get("error", {}).get("code")
            except (ValueError, AttributeError):
                code = None
            if code == "insufficient_quota":
                raise QuotaError("quota exhausted")
            try:
                retry_after = float(resp.headers.get("retry-after", ""))
            except ValueError:
                retry_after = None
            raise TransientError("rate limited", retry_after)
        if status in (408, 409) or status >= 500:
            raise TransientError(f"HTTP {status}")
        if status >= 400:
            raise BadRequestError(f"HTTP {status}: {resp.text[:200]}")
        try:
            body = resp.json()
            text = body["choices"][0]["message"]["content"]
            usage = body.get("usage") or {}
            details = usage.get("completion_tokens_details") or {}
            tokens = TokenUsage(
                prompt_tokens=int(usage.get("prompt_tokens", 0)),
                completion_tokens=int(usage.get("completion_tokens", 0)),
                reasoning_tokens=int(details.get("reasoning_tokens") or 0),
                reasoning_folded=True,
            )
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponseError(f"unexpected response body: {exc}") from exc
        if not isinstance(text, str):
            raise MalformedResponseError("message content is not text")
        return text, tokens


@dataclass(frozen=True)
class MockReply:
    text: str
    reasoning_tokens: int | None = None


Responder = Callable[[ChatRequest], "str | MockReply"]


class MockBackend:
    """Deterministic backend driven by a responder function.

    Token counts are synthetic: roughly four characters per prompt/completion
    token, and reasoning tokens drawn from a hash of the seed and request.
    """

    name = "mock"

    def __init__(self, responder: Responder, seed: int = 0):
        self.responder = responder
        self.seed = seed

    def send(self, request: ChatRequest, wire_name: str) -> tuple[str, TokenUsage]:
        reply = self.responder(request)
        if isinstance(reply, str):
            reply = MockReply(reply)
        reasoning = reply.reasoning_tokens
        if reasoning is None:
            h = hashlib.sha256(f"{self.seed}:{request.cache_key()}".encode()).digest()
            reasoning = 1000 + int.from_bytes(h[:4], "big") % 6000
        usage = TokenUsage(
            prompt_tokens=(len(request.prompt_text) + 3) // 4,
            completion_tokens=(len(reply.text) + 3) // 4,
            reasoning_tokens=reasoning,
        )
        return reply.text, usage


def scripted_responder(table: Mapping[str, str | list[str]], default: str | None = None) -> Responder:
    """Look replies up by request tag, then by prompt hash; lists are consumed in order."""
    queues = {k: list(v) if isinstance(v, list) else [v] for k, v in table.items()}
    lock = threading.Lock()

    def respond(request: ChatRequest) -> str:
        prompt_hash = hashlib.sha256(request.prompt_text.encode()).hexdigest()
        with lock:
            for key in (request.tag, prompt_hash):
                q = queues.get(key)
                if q:
                    return q.pop(0) if len(q) > 1 else q[0]
        if default is None:
            raise KeyError(f"no scripted reply for {request.tag or prompt_hash}")
        return default

    return respond


class ResponseCache:
    """Content-addressed reply cache, optionally persisted as JSONL."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._data: dict[str, dict] = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            for line in self.path.read_text().splitlines():
                if line.strip():
                    row = json.loads(line)
                    self._data[row["key"]] = row

    def get(self, key: str) -> dict | None:
        with self._lock:
            return self._data.get(key)

    def put(self, key: str, text: str, usage: TokenUsage) -> None:
        row = {"key": key, "text": text, "usage": usage.to_dict()}
        with self._lock:
            self._data[key] = row
            if self.path:
                with self.path.open("a") as fh:
                    fh.write(json.dumps(row, sort_keys=True) + "\n")


class Gateway:
    """Retrying, cached, concurrency-capped front end over one backend."""

    def __init__(
        self,
        backend: Backend,
        pricing: PricingTable | None = None,
        *,
        cache: ResponseCache | None | Literal["default"] = "default",
        exchange_log: str | Path | None = None,
        max_attempts: int = 5,
        base_delay: float = 1.0,
        max_delay: float = 60.0,
        concurrency: int = 4,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.monotonic,
    ):
        self.backend = backend
        self.pricing = pricing if pricing is not None else PricingTable.default()
        if cache == "default":
            # cache on for mock/replay, off for paid endpoints
            cache = ResponseCache() if backend.name == "mock" else None
        self.cache = cache
        self.exchange_log = Path(exchange_log) if exchange_log else None
        self.max_attempts = max_attempts
        self.base_delay = base_delay
        self.max_delay = max_delay
        self._sleep = sleep
        self._clock = clock
        self._slots = threading.BoundedSemaphore(max(1, concurrency))
        self._log_lock = threading.Lock()
        self.failed_attempts = 0

    def _record(self, row: dict) -> None:
        if self.exchange_log is None:
            return
        with self._log_lock:
            with self.exchange_log.open("a") as fh:
                fh.write(json.dumps(row, sort_keys=True) + "\n")

    def _delay(self, attempt: int, hint: float | None) -> float:
        delay = min(self.max_delay, self.base_delay * 2 ** (attempt - 1))
        return max(delay, hint or 0.0)

    def complete(self, request: ChatRequest) -> ChatExchange:
        spec = self.pricing.get(request.model)
        key = request.cache_key()
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                exchange = ChatExchange(request, hit["text"], TokenUsage(), 0.0, "cache")
                self._record({"key": key, "tag": request.tag, "status": "cache", "attempt": 0})
                return exchange
        with self._slots:
            for attempt in range(1, self.max_attempts + 1):
                start = self._clock()
                try:
                    text, usage = self.backend.send(request, spec.wire_name)
                except TransientError as exc:
                    self.failed_attempts += 1
                    self._record({"key": key, "tag": request.tag, "status": "failed", "attempt": attempt,
                                  "error": f"{type(exc).__name__}: {exc}"})
                    if attempt == self.max_attempts:
                        raise RetriesExhaustedError(
                            f"{request.tag or key[:12]}: gave up after {attempt} attempts ({exc})"
                        ) from exc
                    delay = self._delay(attempt, exc.retry_after)
                    log.warning("transient failure (%s); retrying in %.1fs", exc, delay)
                    self._sleep(delay)
                    continue
                except GatewayError as exc:
                    self.failed_attempts += 1
                    self._record({"key": key, "tag": request.tag, "status": "failed", "attempt": attempt,
                                  "error": f"{type(exc).__name__}: {exc}"})
                    raise
                latency = self._clock() - start
                exchange = ChatExchange(request, text, usage, latency, self.backend.name, attempt)
                self._record({"key": key, "tag": request.tag, "status": "ok", "attempt": attempt,
                              "usage": usage.to_dict(), "cost_usd": cost(usage, spec)})
                if self.cache is not None:
                    self.cache.put(key, text, usage)
                return exchange
        raise AssertionError("unreachable")  # pragma: no cover

