"""Chat-completion access with three interchangeable backends.

live    POST an OpenAI-compatible /chat/completions body and return the first
        choice, with exponential-backoff retries.
record  delegate to live, then persist (fingerprint -> response) as one JSON
        cassette file per fingerprint (atomic writes; concurrent-safe).
replay  serve responses from the cassette directory; a miss reports the
        nearest stored fingerprints.

Requests are fingerprinted over model id, temperature and the canonicalized
message list (attachments hashed by bytes), so replay runs are a pure function
of inputs and cassettes. Multi-sample generation passes a sample index, which
selects a per-sample cassette file; the wire request is unchanged.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path

import requests

logger = logging.getLogger(__name__)

ENDPOINT_ENV = "ARCHVIEW_LLM_ENDPOINT"
API_KEY_ENV = "ARCHVIEW_LLM_API_KEY"
MODEL_ENV = "ARCHVIEW_LLM_MODEL"

ROLES = ("system", "user", "assistant")


class LlmError(RuntimeError):
    pass


class ReplayMissError(LlmError):
    def __init__(self, fingerprint_hex: str, cassette_dir: Path, nearest: list[str]):
        hint = f"; nearest stored: {', '.join(nearest)}" if nearest else ""
        super().__init__(
            f"no cassette for fingerprint {fingerprint_hex} in {cassette_dir}{hint}"
        )
        self.fingerprint = fingerprint_hex
        self.nearest = nearest


@dataclass(frozen=True)
class Attachment:
    media_type: str
    data: bytes


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str
    attachments: tuple[Attachment, ...] = ()


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[ChatMessage, ...]
    model: str
    temperature: float = 0.0
    max_tokens: int | None = None


@dataclass(frozen=True)
class ChatResponse:
    content: str
    usage: dict | None
    backend: str


def check_request(req: ChatRequest) -> None:
    if not req.messages:
        raise LlmError("request has no messages")
    for i, msg in enumerate(req.messages):
        if msg.role not in ROLES:
            raise LlmError(f"message {i}: unknown role {msg.role!r}")
        if msg.role == "system" and i != 0:
            raise LlmError("system message must be first and unique")


def fingerprint(req: ChatRequest) -> str:
    """Stable content hash; insensitive to serialization key order."""
    doc = {
        "model": req.model,
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
        "messages": [
            {
                "role": m.role,
                "content": m.content,
                "attachments": [
                    {"media_type": a.media_type,
                     "sha256": hashlib.sha256(a.data).hexdigest()}
                    for a in m.attachments
                ],
            }
            for m in req.messages
        ],
    }
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _cassette_path(cassette_dir: Path, fingerprint_hex: str, sample: int) -> Path:
    if sample == 0:
        return cassette_dir / f"{fingerprint_hex}.json"
    return cassette_dir / f"{fingerprint_hex}.{sample}.json"


def _wire_messages(messages: tuple[ChatMessage, ...]) -> list[dict]:
    wire = []
    for m in messages:
        if m.attachments:
            parts = [{"type": "text", "text": m.content}]
            for a in m.attachments:
                encoded = base64.b64encode(a.data).decode("ascii")
                parts.append({
                    "type": "image_url",
                    "image_url": {"url": f"data:{a.media_type};base64,{encoded}"},
                })
            wire.append({"role": m.role, "content": parts})
        else:
            wire.append({"role": m.role, "content": m.content})
    return wire


class LiveBackend:
    name = "live"

    def __init__(self, endpoint: str, api_key: str | None = None,
                 timeout: float = 120.0, retries: int = 3, backoff: float = 0.5):
        self.endpoint = endpoint.rstrip("/")
        self.api_key = api_key
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff

    def complete(self, req: ChatRequest, sample: int = 0) -> ChatResponse:
        check_request(req)
        body = {
            "model": req.model,
            "messages": _wire_messages(req.messages),
            "temperature": req.temperature,
        }
        if req.max_tokens is not None:
            body["max_tokens"] = req.max_tokens
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        url = f"{self.endpoint}/chat/completions"
        last_error: Exception | None = None
        for attempt in range(self.retries):
            try:
                response = requests.post(url, json=body, headers=headers, timeout=self.timeout)
                response.raise_for_status()
                data = response.json()
                content = data["choices"][0]["message"]["content"]
                if not content:
                    raise LlmError("empty completion content")
                return ChatResponse(content=content, usage=data.get("usage"), backend=self.name)
            except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
                last_error = exc
                if attempt + 1 < self.retries:
                    delay = self.backoff * (2 ** attempt)
                    logger.warning("chat completion attempt %d failed (%s); retrying in %.1fs",
                                   attempt + 1, exc, delay)
                    time.sleep(delay)
        raise LlmError(f"chat completion failed after {self.retries} attempts: {last_error}")


class RecordBackend:
    name = "record"

    def __init__(self, inner: LiveBackend, cassette_dir):
        self.inner = inner
        self.cassette_dir = Path(cassette_dir)

    def complete(self, req: ChatRequest, sample: int = 0) -> ChatResponse:
        response = self.inner.complete(req, sample)
        fp = fingerprint(req)
        self.cassette_dir.mkdir(parents=True, exist_ok=True)
        path = _cassette_path(self.cassette_dir, fp, sample)
        write_cassette(path, fp, sample, response.content, response.usage)
        return ChatResponse(content=response.content, usage=response.usage, backend=self.name)


class ReplayBackend:
    name = "replay"

    def __init__(self, cassette_dir):
        self.cassette_dir = Path(cassette_dir)

    def complete(self, req: ChatRequest, sample: int = 0) -> ChatResponse:
        check_request(req)
        fp = fingerprint(req)
        path = _cassette_path(self.cassette_dir, fp, sample)
        if not path.is_file():
            raise ReplayMissError(fp, self.cassette_dir, self._nearest(fp))
        data = json.loads(path.read_text(encoding="utf-8"))
        return ChatResponse(content=data["response"]["content"],
                            usage=data["response"].get("usage"),
                            backend=self.name)

    def _nearest(self, fp: str, limit: int = 5) -> list[str]:
        stems = sorted({p.name.split(".", 1)[0] for p in self.cassette_dir.glob("*.json")})

        def common_prefix(other: str) -> int:
            n = 0
            for a, b in zip(fp, other):
                if a != b:
                    break
                n += 1
            return n

        return sorted(stems, key=lambda s: (-common_prefix(s), s))[:limit]


def write_cassette(path: Path, fingerprint_hex: str, sample: int,
                   content: str, usage: dict | None = None) -> None:
    """Atomic single-file write so concurrent workers never interleave."""
    doc = {
        "fingerprint": fingerprint_hex,
        "sample": sample,
        "response": {"content": content, "usage": usage},
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_text(json.dumps(doc, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def backend_from_env(kind: str, cassette_dir=None):
    """Build a backend from ARCHVIEW_LLM_* environment variables."""
    if kind == "replay":
        if cassette_dir is None or not Path(cassette_dir).is_dir():
            raise LlmError(f"replay backend requires an existing cassette directory, got {cassette_dir!r}")
        return ReplayBackend(cassette_dir)
    endpoint = os.environ.get(ENDPOINT_ENV)
    if not endpoint:
        raise LlmError(f"{ENDPOINT_ENV} is not set; required for the {kind} backend")
    live = LiveBackend(endpoint, api_key=os.environ.get(API_KEY_ENV))
    if kind == "live":
        return live
    if kind == "record":
        if cassette_dir is None:
            raise LlmError("record backend requires a cassette directory")
        return RecordBackend(live, cassette_dir)
    raise LlmError(f"unknown backend kind {kind!r}")
