"""Shared test fixtures: corpus builders and independent oracles.

The oracles here are deliberately brute-force re-derivations of the metric,
mining, and retrieval semantics; they never call the code paths they check.
"""

from __future__ import annotations

import random
from itertools import combinations

from bundlekd.corpus import Bundle, Dataset, Item, Session

CATEGORY_POOL = [
    "Cameras", "Lenses", "Tripods", "Batteries", "Memory Cards", "Bags",
    "Monitors", "Keyboards", "Headphones", "Cables", "Chargers", "Speakers",
]

TITLE_WORDS = [
    "Pro", "Ultra", "Compact", "Travel", "Studio", "Wireless", "Classic",
    "Max", "Mini", "Prime", "Field", "Daily",
]


def make_session(sid: str, categories: list[str], bundles: list[list[int]],
                 user: str = "u1", intents: list[str | None] | None = None) -> Session:
    """Session with one item per category entry; bundles index into items."""
    items = tuple(
        Item(id=f"{sid}-i{k}", title=f"{TITLE_WORDS[k % len(TITLE_WORDS)]} {c}",
             category=c)
        for k, c in enumerate(categories, start=1)
    )
    bs = []
    for bi, members in enumerate(bundles, start=1):
        intent = None
        if intents is not None and bi - 1 < len(intents):
            intent = intents[bi - 1]
        bs.append(Bundle(id=f"{sid}-b{bi}",
                         item_ids=frozenset(items[m - 1].id for m in members),
                         intent=intent))
    return Session(id=sid, user_id=user, items=items, bundles=tuple(bs))


def synthetic_dataset(n_sessions: int, seed: int, domain: str = "synthetic",
                      max_items: int = 10, max_bundles: int = 3) -> Dataset:
    """Seeded corpus of sessions with 2..max_items items and >= 1 bundle each."""
    rng = random.Random(seed)
    sessions = []
    for i in range(n_sessions):
        sid = f"s{i:04d}"
        n_items = rng.randint(2, max_items)
        categories = [rng.choice(CATEGORY_POOL) for _ in range(n_items)]
        bundles: list[list[int]] = []
        for _ in range(rng.randint(1, max_bundles)):
            size = rng.randint(2, min(4, n_items))
            members = sorted(rng.sample(range(1, n_items + 1), size))
            if members not in bundles:  # annotators don't duplicate a bundle
                bundles.append(members)
        intents = [rng.choice(["gift set", "starter kit", "travel pack", None])
                   for _ in bundles]
        sessions.append(make_session(sid, categories, bundles,
                                     user=f"u{i % 7}", intents=intents))
    return Dataset(domain=domain, sessions=tuple(sessions))


# ---------------------------------------------------------------------------
# oracles

def oracle_eval(generated: list[frozenset[str]], gt: list[Bundle]) -> dict:
    """Exhaustive subset-checking re-derivation of P/R/C."""
    unique: list[frozenset[str]] = []
    for g in generated:
        if g not in unique:
            unique.append(g)
    hits = []
    for g in unique:
        qualifying = [t for t in gt if len(g) >= 2 and g <= t.item_ids]
        if not qualifying:
            hits.append(None)
            continue
        best = None
        for t in qualifying:
            ratio = len(g & t.item_ids) / len(t.item_ids)
            if best is None or ratio > best[0] or (ratio == best[0] and t.id < best[1]):
                best = (ratio, t.id)
        hits.append(best[1])
    n_hit = sum(1 for h in hits if h is not None)
    recalled = sum(
        1 for t in gt
        if any(len(g) >= 2 and g <= t.item_ids for g in unique)
    )
    covs = []
    gt_by_id = {t.id: t for t in gt}
    for g, h in zip(unique, hits):
        if h is not None:
            covs.append(len(g & gt_by_id[h].item_ids) / len(gt_by_id[h].item_ids))
    return {
        "precision": n_hit / len(unique) if unique else 0.0,
        "recall": recalled / len(gt),
        "coverage": sum(covs) / len(covs) if covs else 0.0,
    }


def oracle_frequent_itemsets(transactions: list[frozenset[str]],
                             min_support: int) -> dict[frozenset[str], int]:
    """Enumerate every candidate itemset of size >= 2 over the alphabet."""
    alphabet = sorted({c for t in transactions for c in t})
    out: dict[frozenset[str], int] = {}
    for size in range(2, len(alphabet) + 1):
        for combo in combinations(alphabet, size):
            cand = frozenset(combo)
            support = sum(1 for t in transactions if cand <= t)
            if support >= min_support:
                out[cand] = support
    return out


def oracle_frequent_by_transaction_subsets(transactions: list[frozenset[str]],
                                           min_support: int) -> dict[frozenset[str], int]:
    """Brute force by enumerating every subset of every transaction.

    Exact for min_support >= 1: any frequent itemset is a subset of some
    transaction. Much faster than alphabet enumeration for small transactions.
    """
    counts: dict[frozenset[str], int] = {}
    for t in transactions:
        members = sorted(t)
        for size in range(2, len(members) + 1):
            for combo in combinations(members, size):
                key = frozenset(combo)
                counts[key] = counts.get(key, 0) + 1
    return {k: v for k, v in counts.items() if v >= min_support}


def oracle_nearest(ids, vectors, query, exclude=frozenset()):
    """Linear-scan argmax with the smaller-id tie break."""
    import numpy as np
    best = None
    for sid, vec in zip(ids, vectors):
        if sid in exclude:
            continue
        score = float(np.dot(np.asarray(vec), np.asarray(query)))
        if best is None or score > best[0] or (score == best[0] and sid < best[1]):
            best = (score, sid)
    return None if best is None else best[1]
