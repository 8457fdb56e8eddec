"""Session/bundle datasets: loading, validation, splitting, derived views.

A dataset is JSONL with one session object per line:

    {"session_id": str, "user_id": str,
     "items":   [{"id": str, "title": str, "category": str}],
     "bundles": [{"id": str, "item_ids": [str], "intent": str|null}]}

Sessions and datasets are immutable after load and safe to share across
threads.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from pathlib import Path

KNOWN_DOMAINS = ("electronic", "clothing", "food")


class DatasetError(ValueError):
    """Raised on parse failures or invariant violations while loading."""


@dataclass(frozen=True)
class Item:
    id: str
    title: str
    category: str


@dataclass(frozen=True)
class Bundle:
    id: str
    item_ids: frozenset[str]
    intent: str | None = None


@dataclass(frozen=True)
class Session:
    id: str
    user_id: str
    items: tuple[Item, ...]
    bundles: tuple[Bundle, ...]

    def item_ids(self) -> list[str]:
        return [it.id for it in self.items]

    def item_by_id(self, item_id: str) -> Item:
        for it in self.items:
            if it.id == item_id:
                return it
        raise KeyError(item_id)


@dataclass(frozen=True)
class Dataset:
    domain: str
    sessions: tuple[Session, ...]

    def session_by_id(self, session_id: str) -> Session:
        for s in self.sessions:
            if s.id == session_id:
                return s
        raise KeyError(session_id)

    def session_ids(self) -> list[str]:
        return [s.id for s in self.sessions]


@dataclass(frozen=True)
class SplitSpec:
    train_ratio: float = 0.7
    valid_ratio: float = 0.1
    test_ratio: float = 0.2
    seed: int = 0

    def __post_init__(self) -> None:
        for name, r in (("train", self.train_ratio), ("valid", self.valid_ratio),
                        ("test", self.test_ratio)):
            if not 0.0 < r < 1.0:
                raise ValueError(f"{name}_ratio must be in (0,1), got {r}")
        total = self.train_ratio + self.valid_ratio + self.test_ratio
        # float 7:1:2 only sums to 1.0 in some addition orders
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"split ratios must sum to 1, got {total}")


def normalize_domain(name: str) -> str:
    return name.strip().lower()


def _validate_session(s: Session) -> None:
    if not s.id:
        raise DatasetError("session with empty id")
    if len(s.items) < 2:
        raise DatasetError(f"session {s.id!r}: fewer than 2 items")
    seen: set[str] = set()
    for it in s.items:
        if not it.id:
            raise DatasetError(f"session {s.id!r}: item with empty id")
        if it.id in seen:
            raise DatasetError(f"session {s.id!r}: duplicate item id {it.id!r}")
        if not it.category:
            raise DatasetError(f"session {s.id!r}: item {it.id!r} has empty category")
        seen.add(it.id)
    bundle_ids: set[str] = set()
    for b in s.bundles:
        if not b.id:
            raise DatasetError(f"session {s.id!r}: bundle with empty id")
        if b.id in bundle_ids:
            raise DatasetError(f"session {s.id!r}: duplicate bundle id {b.id!r}")
        bundle_ids.add(b.id)
        if len(b.item_ids) < 2:
            raise DatasetError(f"session {s.id!r}: bundle {b.id!r} size < 2")
        unknown = b.item_ids - seen
        if unknown:
            raise DatasetError(
                f"session {s.id!r}: bundle {b.id!r} references unknown item ids "
                f"{sorted(unknown)}"
            )


def session_from_obj(obj: dict) -> Session:
    items = tuple(
        Item(id=str(i["id"]), title=str(i.get("title", "")), category=str(i["category"]))
        for i in obj.get("items", [])
    )
    bundles = []
    for b in obj.get("bundles", []):
        raw_ids = [str(x) for x in b["item_ids"]]
        if len(raw_ids) != len(set(raw_ids)):
            raise DatasetError(
                f"session {obj.get('session_id')!r}: bundle {b.get('id')!r} "
                "has duplicate item ids"
            )
        intent = b.get("intent")
        bundles.append(Bundle(id=str(b["id"]), item_ids=frozenset(raw_ids),
                              intent=None if intent is None else str(intent)))
    s = Session(id=str(obj["session_id"]), user_id=str(obj.get("user_id", "")),
                items=items, bundles=tuple(bundles))
    _validate_session(s)
    return s


def session_to_obj(s: Session) -> dict:
    return {
        "session_id": s.id,
        "user_id": s.user_id,
        "items": [{"id": i.id, "title": i.title, "category": i.category} for i in s.items],
        "bundles": [
            {"id": b.id, "item_ids": sorted(b.item_ids), "intent": b.intent}
            for b in s.bundles
        ],
    }


def load_dataset(path: str | Path, domain: str | None = None) -> Dataset:
    """Load and validate a JSONL session file.

    Parse errors carry the 1-based line number; invariant violations name
    the offending session/bundle. `domain` defaults to the file stem.
    """
    path = Path(path)
    sessions: list[Session] = []
    ids: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetError(f"{path}:{lineno}: invalid JSON: {e}") from e
            try:
                s = session_from_obj(obj)
            except (KeyError, DatasetError) as e:
                raise DatasetError(f"{path}:{lineno}: {e}") from e
            if s.id in ids:
                raise DatasetError(f"{path}:{lineno}: duplicate session id {s.id!r}")
            ids.add(s.id)
            sessions.append(s)
    if domain is None:
        domain = path.stem
    return Dataset(domain=normalize_domain(domain), sessions=tuple(sessions))


def save_dataset(d: Dataset, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for s in d.sessions:
            fh.write(json.dumps(session_to_obj(s), ensure_ascii=False) + "\n")


def split_dataset(d: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Deterministic train/valid/test partition.

    Session ids are sorted, shuffled once with the seeded PRNG, then sliced
    floor(n*train) / floor(n*valid) / remainder (remainder goes to test).
    Split sessions keep their original corpus order.
    """
    n = len(d.sessions)
    if n < 3:
        raise ValueError(f"need at least 3 sessions to split, got {n}")
    ids = sorted(s.id for s in d.sessions)
    random.Random(spec.seed).shuffle(ids)
    n_train = math.floor(n * spec.train_ratio)
    n_valid = math.floor(n * spec.valid_ratio)
    train_ids = set(ids[:n_train])
    valid_ids = set(ids[n_train:n_train + n_valid])

    def pick(members: set[str]) -> Dataset:
        return Dataset(domain=d.domain,
                       sessions=tuple(s for s in d.sessions if s.id in members))

    test_ids = set(ids[n_train + n_valid:])
    return pick(train_ids), pick(valid_ids), pick(test_ids)


def session_categories(s: Session) -> set[str]:
    """Distinct category labels over the session's items."""
    return {it.category for it in s.items}


@dataclass(frozen=True)
class DatasetStats:
    users: int
    items: int
    sessions: int
    bundles: int
    intents: int
    avg_bundle_size: float

    def as_dict(self) -> dict:
        return {
            "users": self.users, "items": self.items, "sessions": self.sessions,
            "bundles": self.bundles, "intents": self.intents,
            "avg_bundle_size": self.avg_bundle_size,
        }


def dataset_stats(d: Dataset) -> DatasetStats:
    users = {s.user_id for s in d.sessions}
    items = {it.id for s in d.sessions for it in s.items}
    bundles = [b for s in d.sessions for b in s.bundles]
    intents = {b.intent for b in bundles if b.intent}
    sizes = [len(b.item_ids) for b in bundles]
    avg = sum(sizes) / len(sizes) if sizes else 0.0
    return DatasetStats(users=len(users), items=len(items), sessions=len(d.sessions),
                        bundles=len(bundles), intents=len(intents), avg_bundle_size=avg)
