"""Chat-completion access for teacher and student models.

Speaks the OpenAI-compatible wire protocol: POST {base_url}/chat/completions
with {"model", "messages", "temperature", "max_tokens"}, reading
choices[0].message.content and usage. A deterministic mock provider covers
desk-scale runs and tests; a content-addressed response cache makes reruns
free and reproducible.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import requests


class GatewayError(Exception):
    pass


class TransportError(GatewayError):
    """Network-level failure (connection, timeout)."""


class AuthError(GatewayError):
    """401/403 from the endpoint; never retried."""


class RetriesExhaustedError(GatewayError):
    pass


class MalformedResponseError(GatewayError):
    """2xx body missing choices[0].message.content."""


class UnscriptedPromptError(GatewayError):
    """Strict mock hit a prompt it has no reply for."""


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"unknown role {self.role!r}")
        if self.role in ("system", "user") and not self.content:
            raise ValueError(f"{self.role} message must have content")

    def as_dict(self) -> dict:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class ProviderConfig:
    model: str
    kind: str = "openai"  # "openai" | "mock"
    base_url: str = ""
    api_key_env: str = "OPENAI_API_KEY"
    temperature: float = 0.0
    max_tokens: int = 1024
    timeout: float = 60.0
    max_retries: int = 3
    backoff_base: float = 0.5
    max_concurrency: int = 4
    cache_dir: str | None = None
    mock: dict | None = None  # {"behavior": ...} or {"script": ...} etc.

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.kind not in ("openai", "mock"):
            raise ValueError(f"unknown provider kind {self.kind!r}")

    @property
    def fingerprint(self) -> str:
        return f"{self.kind}:{self.model}"

    def to_dict(self) -> dict:
        d = {
            "model": self.model, "kind": self.kind, "base_url": self.base_url,
            "api_key_env": self.api_key_env, "temperature": self.temperature,
            "max_tokens": self.max_tokens, "timeout": self.timeout,
            "max_retries": self.max_retries, "backoff_base": self.backoff_base,
            "max_concurrency": self.max_concurrency, "cache_dir": self.cache_dir,
        }
        if self.mock is not None:
            d["mock"] = self.mock
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProviderConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class ChatResponse:
    content: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    provider_fingerprint: str = ""
    cache_hit: bool = False


def canonical_request(cfg: ProviderConfig, messages: list[ChatMessage]) -> str:
    """Stable serialization used for cache keys and prompt hashes."""
    payload = {
        "model": cfg.model,
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_tokens,
        "messages": [m.as_dict() for m in messages],
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def prompt_hash(messages: list[ChatMessage]) -> str:
    blob = json.dumps([m.as_dict() for m in messages], sort_keys=True,
                      separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# transports: callable(payload dict) -> (status code, body dict)

def _http_transport(cfg: ProviderConfig):
    def call(payload: dict) -> tuple[int, dict]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(cfg.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        url = cfg.base_url.rstrip("/") + "/chat/completions"
        try:
            resp = requests.post(url, json=payload, headers=headers, timeout=cfg.timeout)
        except requests.RequestException as e:
            raise TransportError(f"POST {url} failed: {e}") from e
        try:
            body = resp.json()
        except ValueError:
            body = {"raw": resp.text}
        return resp.status_code, body
    return call


class MockProvider:
    """Deterministic transport for tests and desk-scale runs.

    Reply source, in precedence order: scripted map (prompt hash -> reply),
    reply sequence, reply function, builtin behavior, default string. With
    strict=True an unknown prompt raises instead of falling through.
    Counts every call in .calls.
    """

    def __init__(self, script: dict[str, str] | None = None,
                 sequence: list[str] | None = None,
                 fn=None, behavior: str | None = None,
                 default: str | None = None, strict: bool = False):
        self.script = dict(script or {})
        self.sequence = list(sequence or [])
        self.fn = fn
        self.behavior = behavior
        self.default = default
        self.strict = strict
        self.calls = 0
        self._seq_pos = 0
        self._lock = threading.Lock()

    def reply_for(self, messages: list[ChatMessage]) -> str:
        h = prompt_hash(messages)
        if h in self.script:
            return self.script[h]
        if self._seq_pos < len(self.sequence):
            reply = self.sequence[self._seq_pos]
            self._seq_pos += 1
            return reply
        if self.fn is not None:
            return self.fn(messages)
        if self.behavior is not None:
            return _builtin_behavior(self.behavior, messages)
        if self.strict:
            raise UnscriptedPromptError(f"no scripted reply for prompt {h}")
        if self.default is not None:
            return self.default
        raise UnscriptedPromptError(f"no reply source for prompt {h}")

    def __call__(self, payload: dict) -> tuple[int, dict]:
        messages = [ChatMessage(**m) for m in payload["messages"]]
        with self._lock:
            self.calls += 1
            content = self.reply_for(messages)
        return 200, {
            "choices": [{"message": {"role": "assistant", "content": content}}],
            "usage": {"prompt_tokens": 0, "completion_tokens": 0},
        }


def mock_provider(script: dict[str, str] | None = None, *,
                  sequence: list[str] | None = None, fn=None,
                  behavior: str | None = None, default: str | None = None,
                  strict: bool = False) -> MockProvider:
    return MockProvider(script=script, sequence=sequence, fn=fn,
                        behavior=behavior, default=default, strict=strict)


def _builtin_behavior(name: str, messages: list[ChatMessage]) -> str:
    """Config-addressable mock behaviors.

    "first_two" always bundles the first two products. "teacher" answers
    each stage of the distillation chains with valid, per-conversation
    deterministic JSON, and otherwise falls back to "first_two".
    """
    last = messages[-1].content
    h = hashlib.sha256("\n".join(m.content for m in messages).encode("utf-8")).hexdigest()[:10]
    if name == "first_two":
        return json.dumps({"bundle1": ["product1", "product2"]})
    if name == "teacher":
        if "formulate the rules" in last:
            return json.dumps({
                "rule1": [f"Group products that serve one shared intent (case {h})."],
                "rule2": [f"Avoid mixing unrelated categories in a bundle (case {h})."],
            })
        if "Compare the correct bundles" in last:
            return json.dumps({"bundle1": ["categories do not share a common intent"]})
        if "Review your bundle detection process" in last:
            return json.dumps({"issue1": ["User Intent Analysis",
                                          f"the assumed intent was too broad (case {h})"]})
        if "Generate natural language insights" in last:
            keys = sorted(set(re.findall(r'"(bundle\d+)"', last)),
                          key=lambda k: int(k[6:]))
            return json.dumps({
                k: f"Customers buying these categories together pursue one goal ({h}/{k})."
                for k in keys
            })
        return json.dumps({"bundle1": ["product1", "product2"]})
    raise ValueError(f"unknown mock behavior {name!r}")


def _mock_transport(cfg: ProviderConfig) -> MockProvider:
    mock = cfg.mock or {}
    behavior = mock.get("behavior")
    if behavior is None and not mock.get("strict") and not any(
            k in mock for k in ("script", "sequence", "default")):
        behavior = "first_two"
    return MockProvider(script=mock.get("script"), sequence=mock.get("sequence"),
                        behavior=behavior, default=mock.get("default"),
                        strict=mock.get("strict", False))


def make_transport(cfg: ProviderConfig):
    if cfg.kind == "mock":
        return _mock_transport(cfg)
    return _http_transport(cfg)


# per-provider in-flight bound
_semaphores: dict[tuple, threading.Semaphore] = {}
_sem_lock = threading.Lock()


def _semaphore(cfg: ProviderConfig) -> threading.Semaphore:
    key = (cfg.kind, cfg.base_url, cfg.model, cfg.max_concurrency)
    with _sem_lock:
        if key not in _semaphores:
            _semaphores[key] = threading.Semaphore(cfg.max_concurrency)
        return _semaphores[key]


def complete(cfg: ProviderConfig, messages: list[ChatMessage], *,
             transport=None, sleep=time.sleep) -> ChatResponse:
    """One chat completion with exponential backoff on 429/5xx.

    Total attempts are bounded by max_retries + 1; 401/403 fail immediately.
    """
    if transport is None:
        transport = make_transport(cfg)
    payload = {
        "model": cfg.model,
        "messages": [m.as_dict() for m in messages],
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_tokens,
    }
    sem = _semaphore(cfg)
    last_status = None
    for attempt in range(cfg.max_retries + 1):
        if attempt:
            sleep(cfg.backoff_base * (2 ** (attempt - 1)))
        with sem:
            status, body = transport(payload)
        last_status = status
        if status in (401, 403):
            raise AuthError(f"authentication failed (HTTP {status})")
        if status == 429 or status >= 500:
            continue
        if status != 200:
            raise GatewayError(f"HTTP {status}: {json.dumps(body)[:300]}")
        try:
            content = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as e:
            raise MalformedResponseError(f"missing content in response body: {e}") from e
        if not isinstance(content, str):
            raise MalformedResponseError("response content is not a string")
        usage = body.get("usage") or {}
        return ChatResponse(
            content=content,
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
            provider_fingerprint=cfg.fingerprint,
        )
    raise RetriesExhaustedError(
        f"gave up after {cfg.max_retries + 1} attempts (last HTTP {last_status})")


def cache_path(cache_dir: str | Path, key: str) -> Path:
    return Path(cache_dir) / key[:2] / f"{key}.json"


def complete_cached(cfg: ProviderConfig, messages: list[ChatMessage], *,
                    transport=None, sleep=time.sleep) -> ChatResponse:
    """complete() behind a content-addressed cache.

    Cache key hashes (model, temperature, max_tokens, messages). Writes are
    atomic (temp file then rename) so concurrent misses on one key are
    benign. A corrupt cache file counts as a miss and is replaced.
    """
    if not cfg.cache_dir:
        raise ValueError("complete_cached requires cfg.cache_dir")
    key = hashlib.sha256(canonical_request(cfg, messages).encode("utf-8")).hexdigest()
    path = cache_path(cfg.cache_dir, key)
    if path.exists():
        try:
            stored = json.loads(path.read_text(encoding="utf-8"))
            return ChatResponse(
                content=stored["content"],
                prompt_tokens=int(stored.get("prompt_tokens", 0)),
                completion_tokens=int(stored.get("completion_tokens", 0)),
                provider_fingerprint=stored.get("fingerprint", cfg.fingerprint),
                cache_hit=True,
            )
        except (ValueError, KeyError):
            pass  # corrupt entry: recompute and replace
    resp = complete(cfg, messages, transport=transport, sleep=sleep)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(f".tmp{os.getpid()}")
    tmp.write_text(json.dumps({
        "content": resp.content,
        "prompt_tokens": resp.prompt_tokens,
        "completion_tokens": resp.completion_tokens,
        "fingerprint": resp.provider_fingerprint,
        "request": canonical_request(cfg, messages),
    }, ensure_ascii=False), encoding="utf-8")
    tmp.replace(path)
    return resp
