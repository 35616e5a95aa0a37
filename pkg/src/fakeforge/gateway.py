"""Client for OpenAI-compatible chat-completions and embeddings endpoints."""

from __future__ import annotations

import base64
import hashlib
import io
import json
import logging
import os
import random
import threading
import time
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence, Union

import httpx
from PIL import Image

logger = logging.getLogger(__name__)

DEFAULT_MAX_TOKENS = 1024
JPEG_QUALITY = 95


class GatewayError(RuntimeError):
    """Base class for endpoint failures."""


class TerminalError(GatewayError):
    def __init__(self, message: str, attempts: int = 1, status: int | None = None):
        self.attempts = attempts
        self.status = status
        super().__init__(f"{message} (after {attempts} attempt{'s' if attempts != 1 else ''})")


class EmptyCompletion(TerminalError):
    pass


class ImageReadError(OSError):
    def __init__(self, path: str, reason: str, record_id: str | None = None):
        self.path = path
        self.record_id = record_id
        where = f"record {record_id}: " if record_id else ""
        super().__init__(f"{where}cannot read image {path}: {reason}")


@dataclass(frozen=True)
class EndpointConfig:
    name: str
    base_url: str
    model_name: str
    api_key_ref: str | None = None
    max_in_flight: int = 4
    timeout: float = 120.0
    temperature: float = 0.0
    max_tokens: int = DEFAULT_MAX_TOKENS

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise ValueError(f"endpoint {self.name}: max_in_flight must be >= 1")
        if self.timeout <= 0:
            raise ValueError(f"endpoint {self.name}: timeout must be positive")
        if self.temperature < 0:
            raise ValueError(f"endpoint {self.name}: temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError(f"endpoint {self.name}: max_tokens must be positive")

    @classmethod
    def from_dict(cls, name: str, obj: dict[str, Any]) -> "EndpointConfig":
        known = {k: obj[k] for k in (
            "base_url", "model_name", "api_key_ref", "max_in_flight",
            "timeout", "temperature", "max_tokens",
        ) if k in obj}
        if "model" in obj and "model_name" not in known:
            known["model_name"] = obj["model"]
        return cls(name=name, **known)

    def identity(self) -> dict[str, Any]:
        """Fields that influence responses (used in digests; excludes secrets)."""
        return {
            "name": self.name, "base_url": self.base_url, "model_name": self.model_name,
            "temperature": self.temperature, "max_tokens": self.max_tokens,
        }


@dataclass(frozen=True)
class ImagePart:
    path: str


Part = Union[str, ImagePart]


@dataclass(frozen=True)
class Message:
    role: str
    parts: tuple[Part, ...]


MessageSequence = tuple[Message, ...]


def user_message(*parts: Part) -> MessageSequence:
    return (Message("user", tuple(parts)),)


# -- image encoding -----------------------------------------------------------

_image_cache: dict[str, str] = {}
_image_cache_lock = threading.Lock()


def encode_image(path: str | Path) -> str:
    """Return a ``data:`` URL for the image, JPEG bytes passed through as-is.

    Other formats are re-encoded as JPEG at quality 95. Results are cached by
    the digest of the file content.
    """
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ImageReadError(str(path), exc.strerror or str(exc)) from exc
    digest = hashlib.sha256(data).hexdigest()
    with _image_cache_lock:
        if digest in _image_cache:
            return _image_cache[digest]
    if data[:3] == b"\xff\xd8\xff":
        payload = data
    else:
        try:
            with Image.open(io.BytesIO(data)) as im:
                buf = io.BytesIO()
                im.convert("RGB").save(buf, format="JPEG", quality=JPEG_QUALITY)
                payload = buf.getvalue()
        except (OSError, ValueError) as exc:
            raise ImageReadError(str(path), f"undecodable ({exc})") from exc
    url = "data:image/jpeg;base64," + base64.b64encode(payload).decode("ascii")
    with _image_cache_lock:
        _image_cache[digest] = url
    return url


def check_image(path: str | Path, record_id: str | None = None) -> None:
    """Raise :class:`ImageReadError` unless ``path`` holds a decodable image."""
    try:
        with Image.open(path) as im:
            im.verify()
    except (OSError, ValueError, SyntaxError) as exc:
        raise ImageReadError(str(path), str(exc), record_id) from exc


def _content(parts: Sequence[Part]) -> list[dict[str, Any]]:
    out = []
    for p in parts:
        if isinstance(p, ImagePart):
            out.append({"type": "image_url", "image_url": {"url": encode_image(p.path)}})
        else:
            out.append({"type": "text", "text": p})
    return out


def chat_body(endpoint: EndpointConfig, messages: MessageSequence, **params) -> dict[str, Any]:
    n_images = sum(isinstance(p, ImagePart) for m in messages for p in m.parts)
    if n_images > 1:
        raise ValueError("at most one image attachment per request")
    body = {
        "model": endpoint.model_name,
        "messages": [{"role": m.role, "content": _content(m.parts)} for m in messages],
        "temperature": endpoint.temperature,
        "max_tokens": endpoint.max_tokens,
    }
    body.update(params)
    return body


def embed_body(endpoint: EndpointConfig, inputs: Sequence[Part], **params) -> dict[str, Any]:
    body = {
        "model": endpoint.model_name,
        "input": [encode_image(x.path) if isinstance(x, ImagePart) else x for x in inputs],
    }
    body.update(params)
    return body


def canonical_json(body: dict[str, Any]) -> bytes:
    return json.dumps(body, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def request_digest(body: dict[str, Any]) -> str:
    return hashlib.sha256(canonical_json(body)).hexdigest()


def redact_images(body: Any) -> Any:
    """Replace inline image payloads by their digest (for journals)."""
    if isinstance(body, dict):
        return {k: redact_images(v) for k, v in body.items()}
    if isinstance(body, list):
        return [redact_images(v) for v in body]
    if isinstance(body, str) and body.startswith("data:image/"):
        return "sha256:" + hashlib.sha256(body.encode()).hexdigest()
    return body


# -- retry and journaling -----------------------------------------------------


@dataclass
class RetryPolicy:
    """Exponential backoff with jitter.

    Attempt ``n`` (0-based) waits a uniform draw from
    ``[raw / 2, raw]`` with ``raw = min(cap, base * 2**n)``. Delays within one
    call never decrease.
    """

    max_attempts: int = 5
    base_delay: float = 1.0
    cap: float = 30.0
    seed: int | None = None

    def delays(self) -> "Callable[[int, float], float]":
        rng = random.Random(self.seed)

        def next_delay(n: int, previous: float) -> float:
            raw = min(self.cap, self.base_delay * (2 ** n))
            return max(previous, raw / 2 + rng.uniform(0, raw / 2))

        return next_delay


class RequestJournal:
    """Append-only JSON-lines log of request/response exchanges.

    Image payloads are stored as digests. Appends are serialized by a lock.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def record(self, endpoint: str, kind: str, body: dict[str, Any], response: Any) -> None:
        line = json.dumps({
            "endpoint": endpoint,
            "kind": kind,
            "request_digest": request_digest(body),
            "request": redact_images(body),
            "response": response,
        }, sort_keys=True, ensure_ascii=False)
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")


_RETRYABLE_EXC = (httpx.TransportError,)


class Gateway:
    """Thread-safe client enforcing per-endpoint in-flight limits.

    Args:
        retry: backoff policy applied to transport errors, 429 and 5xx.
        journal: optional :class:`RequestJournal`; every successful exchange
            is written before the result is returned.
        sleep: injectable for tests.
        transport: optional ``httpx`` transport (tests can mount a mock).
    """

    def __init__(self, retry: RetryPolicy | None = None, journal: RequestJournal | None = None,
                 sleep: Callable[[float], None] = time.sleep,
                 transport: httpx.BaseTransport | None = None):
        self.retry = retry or RetryPolicy()
        self.journal = journal
        self._sleep = sleep
        self._client = httpx.Client(transport=transport) if transport else httpx.Client()
        self._sems: dict[str, threading.BoundedSemaphore] = {}
        self._lock = threading.Lock()
        self.in_flight: dict[str, int] = defaultdict(int)
        self.max_in_flight_seen: dict[str, int] = defaultdict(int)
        self.calls: dict[str, int] = defaultdict(int)
        self.last_delays: list[float] = []

    def close(self) -> None:
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _sem(self, ep: EndpointConfig) -> threading.BoundedSemaphore:
        with self._lock:
            if ep.name not in self._sems:
                self._sems[ep.name] = threading.BoundedSemaphore(ep.max_in_flight)
            return self._sems[ep.name]

    def _headers(self, ep: EndpointConfig) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if ep.api_key_ref:
            key = os.environ.get(ep.api_key_ref)
            if key:
                headers["Authorization"] = f"Bearer {key}"
            else:
                logger.warning("endpoint %s: environment variable %s is not set", ep.name, ep.api_key_ref)
        return headers

    def _post(self, ep: EndpointConfig, route: str, body: dict[str, Any]) -> dict[str, Any]:
        url = ep.base_url.rstrip("/") + route
        payload = canonical_json(body)
        next_delay = self.retry.delays()
        delay = 0.0
        delays = []
        last = "no attempt made"
        status = None
        for attempt in range(1, self.retry.max_attempts + 1):
            sem = self._sem(ep)
            with sem:
                with self._lock:
                    self.in_flight[ep.name] += 1
                    self.calls[ep.name] += 1
                    self.max_in_flight_seen[ep.name] = max(
                        self.max_in_flight_seen[ep.name], self.in_flight[ep.name])
                try:
                    resp = self._client.post(url, content=payload, headers=self._headers(ep),
                                             timeout=ep.timeout)
                except _RETRYABLE_EXC as exc:
                    resp = None
                    last = f"transport error: {exc}"
                    status = None
                finally:
                    with self._lock:
                        self.in_flight[ep.name] -= 1
            if resp is not None:
                status = resp.status_code
                if status < 400:
                    try:
                        data = resp.json()
                    except ValueError as exc:
                        raise TerminalError(f"{ep.name}: invalid JSON response", attempt, status) from exc
                    with self._lock:
                        self.last_delays = delays
                    return data
                last = f"HTTP {status}: {resp.text[:200]}"
                if status != 429 and status < 500:
                    raise TerminalError(f"{ep.name}: {last}", attempt, status)
            if attempt < self.retry.max_attempts:
                delay = next_delay(attempt - 1, delay)
                delays.append(delay)
                logger.debug("%s: attempt %d failed (%s); retrying in %.2fs", ep.name, attempt, last, delay)
                self._sleep(delay)
        with self._lock:
            self.last_delays = delays
        raise TerminalError(f"{ep.name}: {last}", self.retry.max_attempts, status)

    def chat(self, endpoint: EndpointConfig, messages: MessageSequence, **params) -> str:
        """Send a chat completion and return the first choice's text."""
        body = chat_body(endpoint, messages, **params)
        data = self._post(endpoint, "/chat/completions", body)
        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise TerminalError(f"{endpoint.name}: malformed completion payload") from exc
        if isinstance(text, list):
            text = "".join(p.get("text", "") for p in text if isinstance(p, dict))
        if not text or not text.strip():
            raise EmptyCompletion(f"{endpoint.name}: empty completion")
        if self.journal is not None:
            self.journal.record(endpoint.name, "chat", body, text)
        return text

    def embed(self, endpoint: EndpointConfig, inputs: Sequence[Part],
              extra: dict[str, Any] | None = None) -> list[list[float]]:
        """Embed each input; returns one vector per input in input order."""
        if not inputs:
            raise ValueError("embed needs at least one input")
        if any(isinstance(x, str) and not x for x in inputs):
            raise ValueError("embed inputs must be non-empty")
        body = embed_body(endpoint, inputs, **(extra or {}))
        data = self._post(endpoint, "/embeddings", body)
        try:
            items = sorted(data["data"], key=lambda d: d.get("index", 0))
            vectors = [list(map(float, d["embedding"])) for d in items]
        except (KeyError, TypeError, ValueError) as exc:
            raise TerminalError(f"{endpoint.name}: malformed embeddings payload") from exc
        if len(vectors) != len(inputs):
            raise TerminalError(f"{endpoint.name}: expected {len(inputs)} embeddings, got {len(vectors)}")
        if len({len(v) for v in vectors}) != 1:
            raise TerminalError(f"{endpoint.name}: embedding dimension mismatch within batch")
        if self.journal is not None:
            self.journal.record(endpoint.name, "embed", body, {"dims": len(vectors[0])})
        return vectors

    def embedder(self, endpoint: EndpointConfig, batch_size: int = 64) -> Callable[[list[str]], list]:
        """Adapter for :func:`fakeforge.metrics.explanation_score`."""
        def run(texts: list[str]) -> list:
            out = []
            for i in range(0, len(texts), batch_size):
                out.extend(self.embed(endpoint, texts[i:i + batch_size]))
            return out
        return run


_default: Gateway | None = None


def default_gateway() -> Gateway:
    global _default
    if _default is None:
        _default = Gateway()
    return _default


def chat(endpoint: EndpointConfig, messages: MessageSequence, **params) -> str:
    return default_gateway().chat(endpoint, messages, **params)


def embed(endpoint: EndpointConfig, inputs: Sequence[Part], **params) -> list[list[float]]:
    return default_gateway().embed(endpoint, inputs, extra=params or None)
