"""Session embeddings and knowledge retrieval for ICL.

Patterns are retrieved by category subset match against the target session;
rules and thoughts come from the nearest training session by cosine
similarity of mean-pooled, L2-normalized title embeddings. The retrieval
pool is the training split only.

Embedding providers: an OpenAI-compatible HTTP endpoint, a precomputed
text -> vector map, or the deterministic hash-seeded mock used in tests.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import requests

from .corpus import Dataset, Session, session_categories
from .mining import Pattern


class RetrievalError(Exception):
    pass


class MockEmbedder:
    """Hash-seeded Gaussian unit vectors: deterministic, near-orthogonal.

    Identical texts map to identical vectors (cosine 1); distinct texts land
    far below any realistic dedup threshold.
    """

    def __init__(self, dim: int = 64):
        self.dim = dim
        self._memo: dict[str, np.ndarray] = {}

    @property
    def fingerprint(self) -> str:
        return f"mock:{self.dim}"

    def embed_texts(self, texts: list[str]) -> np.ndarray:
        out = np.empty((len(texts), self.dim))
        for i, t in enumerate(texts):
            vec = self._memo.get(t)
            if vec is None:
                seed = int.from_bytes(
                    hashlib.sha256(t.encode("utf-8")).digest()[:8], "big")
                v = np.random.default_rng(seed).standard_normal(self.dim)
                vec = v / np.linalg.norm(v)
                self._memo[t] = vec
            out[i] = vec
        return out


class MapEmbedder:
    """Precomputed text -> vector lookup (JSONL: {"text":..., "vector":[...]})."""

    def __init__(self, table: dict[str, list[float]]):
        if not table:
            raise RetrievalError("empty embedding table")
        self.table = {t: np.asarray(v, dtype=float) for t, v in table.items()}
        dims = {v.shape[0] for v in self.table.values()}
        if len(dims) != 1:
            raise RetrievalError(f"inconsistent vector dimensions in table: {dims}")
        self.dim = dims.pop()

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "MapEmbedder":
        table = {}
        with Path(path).open(encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    obj = json.loads(line)
                    table[obj["text"]] = obj["vector"]
        return cls(table)

    @property
    def fingerprint(self) -> str:
        return f"map:{len(self.table)}x{self.dim}"

    def embed_texts(self, texts: list[str]) -> np.ndarray:
        rows = []
        for t in texts:
            if t not in self.table:
                raise RetrievalError(f"no precomputed vector for text {t!r}")
            rows.append(self.table[t])
        return np.stack(rows)


class HttpEmbedder:
    """OpenAI-compatible POST {base_url}/embeddings."""

    def __init__(self, base_url: str, model: str,
                 api_key_env: str = "OPENAI_API_KEY", timeout: float = 60.0):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout

    @property
    def fingerprint(self) -> str:
        return f"http:{self.base_url}:{self.model}"

    def embed_texts(self, texts: list[str]) -> np.ndarray:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = requests.post(f"{self.base_url}/embeddings",
                                 json={"model": self.model, "input": texts},
                                 headers=headers, timeout=self.timeout)
        except requests.RequestException as e:
            raise RetrievalError(f"embedding request failed: {e}") from e
        if resp.status_code != 200:
            raise RetrievalError(f"embedding endpoint HTTP {resp.status_code}")
        data = resp.json()["data"]
        return np.asarray([d["embedding"] for d in data], dtype=float)


def make_embedder(cfg: dict):
    kind = cfg.get("kind", "mock")
    if kind == "mock":
        return MockEmbedder(dim=int(cfg.get("dim", 64)))
    if kind == "map":
        return MapEmbedder.from_jsonl(cfg["path"])
    if kind == "http":
        return HttpEmbedder(cfg["base_url"], cfg["model"],
                            api_key_env=cfg.get("api_key_env", "OPENAI_API_KEY"),
                            timeout=float(cfg.get("timeout", 60.0)))
    raise RetrievalError(f"unknown embedder kind {kind!r}")


def embed_session(s: Session, provider) -> np.ndarray:
    """Mean of per-title embeddings, L2-normalized."""
    if not s.items:
        raise RetrievalError(f"session {s.id!r} has no items")
    vecs = np.asarray(provider.embed_texts([it.title for it in s.items]), dtype=float)
    if vecs.ndim != 2 or vecs.shape[0] != len(s.items):
        raise RetrievalError(
            f"provider returned shape {vecs.shape} for {len(s.items)} titles")
    if not np.all(np.isfinite(vecs)):
        raise RetrievalError(f"non-finite embedding for session {s.id!r}")
    mean = vecs.mean(axis=0)
    norm = float(np.linalg.norm(mean))
    if norm == 0.0:
        raise RetrievalError(f"zero-norm mean embedding for session {s.id!r}")
    return mean / norm


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise RetrievalError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise RetrievalError("cosine similarity undefined for zero vector")
    return float(np.dot(a, b) / (na * nb))


@dataclass(frozen=True)
class SessionIndex:
    ids: tuple[str, ...]
    vectors: np.ndarray  # unit rows, one per id
    fingerprint: str = ""

    def __post_init__(self) -> None:
        if len(self.ids) != self.vectors.shape[0]:
            raise RetrievalError("index ids/vectors length mismatch")
        norms = np.linalg.norm(self.vectors, axis=1)
        if self.vectors.size and np.max(np.abs(norms - 1.0)) > 1e-6:
            raise RetrievalError("index vectors must be unit norm (tolerance 1e-6)")

    def vector_for(self, session_id: str) -> np.ndarray:
        try:
            return self.vectors[self.ids.index(session_id)]
        except ValueError:
            raise RetrievalError(f"session {session_id!r} not in index") from None


def build_index(d: Dataset, provider) -> SessionIndex:
    ids = [s.id for s in d.sessions]
    if not ids:
        raise RetrievalError("cannot index an empty dataset")
    vectors = np.stack([embed_session(s, provider) for s in d.sessions])
    return SessionIndex(ids=tuple(ids), vectors=vectors,
                        fingerprint=getattr(provider, "fingerprint", ""))


def save_index(index: SessionIndex, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for sid, vec in zip(index.ids, index.vectors):
            fh.write(json.dumps({"session_id": sid, "vector": vec.tolist()}) + "\n")


def load_index(path: str | Path) -> SessionIndex:
    ids: list[str] = []
    rows: list[list[float]] = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                ids.append(obj["session_id"])
                rows.append(obj["vector"])
    blob = hashlib.sha256(Path(path).read_bytes()).hexdigest()[:12]
    return SessionIndex(ids=tuple(ids), vectors=np.asarray(rows, dtype=float),
                        fingerprint=f"file:{blob}")


def retrieve_patterns_for_session(s: Session, patterns: list[Pattern]) -> list[Pattern]:
    """Patterns whose categories are a subset of the session's categories."""
    cats = session_categories(s)
    hits = [p for p in patterns if p.categories <= cats]
    hits.sort(key=lambda p: (-p.support, -len(p.categories), p.key()))
    return hits


def retrieve_nearest(index: SessionIndex, query: np.ndarray,
                     exclude: frozenset[str] = frozenset(), k: int = 1) -> list[str]:
    """Top-k ids by cosine to the query; ties go to the smaller id.

    Scores come from one np.dot per row, the same arithmetic as a plain
    linear scan, so results match a brute-force oracle exactly.
    """
    query = np.asarray(query, dtype=float)
    scored = [(float(np.dot(vec, query)), sid)
              for sid, vec in zip(index.ids, index.vectors) if sid not in exclude]
    if not scored:
        raise RetrievalError("empty retrieval pool")
    scored.sort(key=lambda t: (-t[0], t[1]))
    return [sid for _, sid in scored[:k]]


def retrieve_nearest_session(target: Session, index: SessionIndex, provider,
                             k: int = 1) -> str:
    """Nearest indexed session to the target, never the target itself."""
    query = embed_session(target, provider)
    return retrieve_nearest(index, query, exclude=frozenset([target.id]), k=k)[0]
