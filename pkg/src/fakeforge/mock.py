"""In-process mock of an OpenAI-compatible server, plus fixture corpora.

Every endpoint lives under its own path prefix, so one server can play the
annotators, the aggregator, the embedder and the model under test at once::

    with MockLMMServer() as srv:
        srv.add_chat("qwen", verdict_annotator("qwen"))
        ep = srv.endpoint("qwen")       # base_url = http://127.0.0.1:<port>/qwen

Canned responses can also be dropped into ``fixture_dir/<endpoint>/<digest>.json``
(``{"status": 200, "content": "..."}``), keyed by :func:`gateway.request_digest`
of the request body. Fixture files take precedence over handlers.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import re
import threading
from collections import Counter
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any, Callable

import numpy as np
from PIL import Image

from .datamodel import Authenticity, Category, ImageRecord, write_manifest
from .gateway import EndpointConfig, request_digest
from .metrics import tokenize


@dataclass
class MockReply:
    status: int = 200
    content: Any = None


ChatHandler = Callable[[dict], "str | MockReply"]
EmbedHandler = Callable[[dict], "list[list[float]] | MockReply"]


class MockLMMServer:
    def __init__(self, fixture_dir: str | Path | None = None, host: str = "127.0.0.1"):
        self.fixture_dir = Path(fixture_dir) if fixture_dir else None
        self.chat_handlers: dict[str, ChatHandler] = {}
        self.embed_handlers: dict[str, EmbedHandler] = {}
        self.counts: Counter[tuple[str, str]] = Counter()
        self.requests: dict[str, list[dict]] = {}
        self._lock = threading.Lock()
        self.active = Counter()
        self.max_active = Counter()
        self.delay = 0.0
        server = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"
            disable_nagle_algorithm = True

            def log_message(self, *args):
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                raw = self.rfile.read(length)
                status, payload = server._dispatch(self.path, raw)
                data = json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

        self._httpd = ThreadingHTTPServer((host, 0), Handler)
        self._httpd.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "MockLMMServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, kwargs={"poll_interval": 0.05},
                                        daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def add_chat(self, name: str, handler: ChatHandler) -> None:
        self.chat_handlers[name] = handler

    def add_embed(self, name: str, handler: EmbedHandler | None = None) -> None:
        self.embed_handlers[name] = handler or hash_embedder()

    def endpoint(self, name: str, **kw) -> EndpointConfig:
        kw.setdefault("model_name", f"mock-{name}")
        kw.setdefault("timeout", 10.0)
        return EndpointConfig(name=name, base_url=f"{self.url}/{name}", **kw)

    def calls(self, name: str, kind: str = "chat") -> int:
        return self.counts[(name, kind)]

    def reset_counts(self) -> None:
        with self._lock:
            self.counts.clear()
            self.requests.clear()

    def _dispatch(self, path: str, raw: bytes) -> tuple[int, Any]:
        m = re.fullmatch(r"/([^/]+)/(chat/completions|embeddings)", path)
        if not m:
            return 404, {"error": f"no route {path}"}
        name, route = m.groups()
        kind = "chat" if route.startswith("chat") else "embed"
        try:
            body = json.loads(raw)
        except ValueError:
            return 400, {"error": "invalid JSON"}
        with self._lock:
            self.counts[(name, kind)] += 1
            self.requests.setdefault(name, []).append(body)
            self.active[name] += 1
            self.max_active[name] = max(self.max_active[name], self.active[name])
        try:
            if self.delay:
                threading.Event().wait(self.delay)
            return self._respond(name, kind, body)
        finally:
            with self._lock:
                self.active[name] -= 1

    def _respond(self, name: str, kind: str, body: dict) -> tuple[int, Any]:
        canned = self._fixture(name, body)
        if canned is not None:
            reply = MockReply(canned.get("status", 200), canned.get("content"))
        else:
            handlers = self.chat_handlers if kind == "chat" else self.embed_handlers
            if name not in handlers:
                return 404, {"error": f"no mock {kind} endpoint {name!r}"}
            reply = handlers[name](body)
            if not isinstance(reply, MockReply):
                reply = MockReply(200, reply)
        if reply.status >= 400:
            return reply.status, {"error": reply.content or "mock error"}
        if kind == "chat":
            return 200, {"choices": [{"index": 0, "message": {"role": "assistant", "content": reply.content}}]}
        return 200, {"data": [{"index": i, "embedding": v} for i, v in enumerate(reply.content)]}

    def _fixture(self, name: str, body: dict) -> dict | None:
        if self.fixture_dir is None:
            return None
        p = self.fixture_dir / name / f"{request_digest(body)}.json"
        if p.exists():
            return json.loads(p.read_text(encoding="utf-8"))
        return None


# -- request helpers ----------------------------------------------------------


def request_text(body: dict) -> str:
    parts = []
    for msg in body.get("messages", []):
        content = msg.get("content")
        if isinstance(content, str):
            parts.append(content)
        else:
            parts.extend(p.get("text", "") for p in content if p.get("type") == "text")
    return "\n".join(parts)


def request_image(body: dict) -> np.ndarray | None:
    for msg in body.get("messages", []):
        content = msg.get("content")
        if isinstance(content, list):
            for p in content:
                if p.get("type") == "image_url":
                    url = p["image_url"]["url"]
                    data = base64.b64decode(url.split(",", 1)[1])
                    with Image.open(io.BytesIO(data)) as im:
                        return np.asarray(im.convert("RGB"))
    return None


def requested_verdict(text: str) -> Authenticity | None:
    """Which opening sentence an annotation prompt asks for."""
    real = '"This is a real image.' in text
    fake = '"This is a fake image.' in text
    if real != fake:
        return Authenticity.REAL if real else Authenticity.FAKE
    return None


_CUES = {
    Authenticity.FAKE: [
        "texture blending around edges", "inconsistent shadow directions",
        "distorted fine structures", "over-smoothed surfaces", "unnatural color saturation",
    ],
    Authenticity.REAL: [
        "sharp and well-defined outlines", "consistent lighting and shadows",
        "natural texture detail", "plausible proportions", "coherent background",
    ],
}


def _pick(seed: str, items: list[str], k: int) -> list[str]:
    h = int(hashlib.sha256(seed.encode()).hexdigest(), 16)
    start = h % len(items)
    return [items[(start + i) % len(items)] for i in range(k)]


# -- responders ---------------------------------------------------------------


def verdict_annotator(name: str, contradict: bool = False) -> ChatHandler:
    """Annotator that follows the prompt's output format (or contradicts it)."""

    def handle(body: dict) -> str:
        text = request_text(body)
        verdict = requested_verdict(text) or Authenticity.FAKE
        if contradict:
            verdict = Authenticity.REAL if verdict is Authenticity.FAKE else Authenticity.FAKE
        image = request_image(body)
        key = hashlib.sha256(text.encode() + (image.tobytes() if image is not None else b"")).hexdigest()
        cues = _pick(key, _CUES[verdict], 2) + _pick(name + key, _CUES[verdict], 1)
        return f"{verdict.verdict_sentence()} The image shows {cues[0]}, {cues[1]} and {cues[2]}."

    return handle


_RESPONSE_BLOCK = re.compile(r"^Response (\d+):\n(.*?)(?=^Response \d+:|\Z)", re.M | re.S)


def parse_responses(text: str) -> list[str]:
    return [m.group(2).strip() for m in _RESPONSE_BLOCK.finditer(text)]


def merging_aggregator(drop_verdict: bool = False) -> ChatHandler:
    """Aggregator keeping clauses mentioned by at least two responses."""

    def handle(body: dict) -> str:
        responses = parse_responses(request_text(body))
        if not responses:
            return MockReply(400, "no responses to merge")
        m = re.match(r"(This is a (?:real|fake) image\.)\s*(.*)", responses[0], re.S)
        head = m.group(1) if m else "This is a fake image."
        cues = Counter()
        for r in responses:
            for cue in re.split(r",\s*|\s+and\s+|\.\s*", r.split(".", 1)[-1].replace("The image shows", "")):
                cue = cue.strip()
                if cue:
                    cues[cue] += 1
        common = sorted(c for c, n in cues.items() if n >= 2) or sorted(cues)[:1]
        body_text = "; ".join(common) + "."
        return body_text[0].upper() + body_text[1:] if drop_verdict else f"{head} {body_text[0].upper()}{body_text[1:]}"

    return handle


def fixed_reply(text: str) -> ChatHandler:
    return lambda body: text


def failing(status: int = 500) -> ChatHandler:
    return lambda body: MockReply(status, "mock failure")


def scripted(replies: list) -> ChatHandler:
    """Return each scripted reply once, in order; the last one repeats."""
    lock = threading.Lock()
    state = {"i": 0}

    def handle(body):
        with lock:
            i = min(state["i"], len(replies) - 1)
            state["i"] += 1
        r = replies[i]
        return r if isinstance(r, MockReply) else MockReply(200, r)

    return handle


def hash_embedder(dim: int = 64) -> EmbedHandler:
    """Pure embedder: hashed bag of tokens for text, seeded noise for images.

    Index 0 carries a constant so no input maps to the zero vector.
    """

    def vec(x: str) -> list[float]:
        v = np.zeros(dim)
        v[0] = 0.25
        if x.startswith("data:image/"):
            seed = int(hashlib.sha256(x.encode()).hexdigest()[:16], 16)
            v[1:] = np.random.default_rng(seed).standard_normal(dim - 1)
            return v.tolist()
        for tok in tokenize(x):
            h = int(hashlib.sha256(tok.encode()).hexdigest(), 16)
            v[1 + h % (dim - 1)] += 1.0 if (h >> 64) & 1 else -1.0
        return v.tolist()

    def handle(body: dict):
        return [vec(x) for x in body["input"]]

    return handle


def gray_level_of(image: np.ndarray) -> float:
    """Mean of the central 9x9 patch; survives every suite perturbation."""
    h, w = image.shape[:2]
    cy, cx = h // 2, w // 2
    return float(image[max(0, cy - 4):cy + 5, max(0, cx - 4):cx + 5].mean())


def echo_model(answers_by_level: dict[int, str], invert: bool = False) -> ChatHandler:
    """Model-under-test that replies with the reference answer for the image.

    The image is identified by its gray level (see :func:`fixture_corpus`),
    never by ground-truth metadata.
    """
    levels = np.array(sorted(answers_by_level))

    def handle(body: dict) -> str:
        image = request_image(body)
        if image is None:
            return MockReply(400, "no image")
        level = levels[np.argmin(np.abs(levels - gray_level_of(image)))]
        answer = answers_by_level[int(level)]
        if invert:
            answer = (answer.replace("This is a fake image.", "\0")
                      .replace("This is a real image.", "This is a fake image.")
                      .replace("\0", "This is a real image."))
        return answer

    return handle


def classifier(reply: str) -> ChatHandler:
    return fixed_reply(reply)


# -- fixture corpora ----------------------------------------------------------


def gray_levels(n: int) -> list[int]:
    """``n`` distinct gray levels spread over [16, 240]."""
    if n == 1:
        return [128]
    return [int(round(16 + i * (224 / (n - 1)))) for i in range(n)]


def fixture_corpus(root: str | Path, n: int = 20, size: int = 64,
                   categories: list[Category] | None = None,
                   fake_fraction: float = 0.5) -> tuple[Path, list[ImageRecord], dict[str, int]]:
    """Write ``n`` constant-gray PNG images and a manifest under ``root``.

    Returns ``(manifest_path, records, level_by_record_id)``. Consecutive
    pairs of records cycle through ``categories`` (all seven by default);
    authenticity is spread evenly so that ``round(n * fake_fraction)`` are fake.
    """
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    categories = categories or list(Category)
    levels = gray_levels(n)
    records = []
    level_by_id = {}
    n_fake = int(round(n * fake_fraction))
    for i in range(n):
        rid = f"img_{i:03d}"
        path = root / "images" / f"{rid}.png"
        Image.fromarray(np.full((size, size, 3), levels[i], dtype=np.uint8)).save(path)
        auth = Authenticity.FAKE if (i * n_fake) // n != ((i + 1) * n_fake) // n else Authenticity.REAL
        # consecutive pairs share a category so every category sees both classes
        records.append(ImageRecord(rid, str(path), auth, categories[(i // 2) % len(categories)], "fixture"))
        level_by_id[rid] = levels[i]
    manifest = root / "manifest.jsonl"
    write_manifest(manifest, records)
    return manifest, records, level_by_id
