"""Category-level frequent patterns mined from ground-truth bundles.

Bundles become transactions over their item categories; Apriori then
enumerates every category set of size >= 2 whose absolute support meets
``min_support``. Mining runs per domain; cross-domain accumulation lives in
the knowledge store.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

from .corpus import Dataset, Session, session_categories

DEFAULT_MIN_SUPPORT = 2  # a pattern must recur


@dataclass(frozen=True)
class Transaction:
    categories: frozenset[str]


@dataclass(frozen=True)
class Pattern:
    categories: frozenset[str]
    support: int

    def key(self) -> tuple[str, ...]:
        return tuple(sorted(self.categories))


def bundles_to_transactions(d: Dataset) -> list[Transaction]:
    """One transaction per ground-truth bundle, categories collapsed to a set.

    Multiplicity is preserved: two bundles with identical category sets
    yield two transactions, because support counts transactions.
    """
    out: list[Transaction] = []
    for s in d.sessions:
        by_id = {it.id: it.category for it in s.items}
        for b in s.bundles:
            cats = frozenset(by_id[i] for i in b.item_ids)
            out.append(Transaction(categories=cats))
    return out


def _sorted_patterns(counts: dict[frozenset[str], int]) -> list[Pattern]:
    pats = [Pattern(categories=k, support=v) for k, v in counts.items()]
    pats.sort(key=lambda p: (-p.support, p.key()))
    return pats


def mine_frequent_patterns(transactions: list[Transaction],
                           min_support: int = DEFAULT_MIN_SUPPORT) -> list[Pattern]:
    """Apriori over category transactions.

    Returns exactly the itemsets of size >= 2 with support >= min_support,
    sorted by (support desc, lexicographic categories).
    """
    if min_support < 1:
        raise ValueError(f"min_support must be >= 1, got {min_support}")
    tsets = [t.categories for t in transactions]
    # frequent 1-itemsets seed candidate generation but are never emitted
    singles: dict[str, int] = {}
    for t in tsets:
        for c in t:
            singles[c] = singles.get(c, 0) + 1
    frequent_prev = {frozenset([c]) for c, n in singles.items() if n >= min_support}

    result: dict[frozenset[str], int] = {}
    k = 2
    while frequent_prev:
        candidates = _generate_candidates(frequent_prev, k)
        if not candidates:
            break
        counts = {c: 0 for c in candidates}
        for t in tsets:
            if len(t) < k:
                continue
            for c in candidates:
                if c <= t:
                    counts[c] += 1
        frequent = {c: n for c, n in counts.items() if n >= min_support}
        result.update(frequent)
        frequent_prev = set(frequent)
        k += 1
    return _sorted_patterns(result)


def _generate_candidates(frequent_prev: set[frozenset[str]], k: int) -> set[frozenset[str]]:
    """Join frequent (k-1)-itemsets, pruning candidates with an infrequent subset."""
    items = sorted({c for s in frequent_prev for c in s})
    if k == 2:
        return {frozenset(pair) for pair in combinations(items, 2)}
    candidates = set()
    prev = sorted(frequent_prev, key=lambda s: tuple(sorted(s)))
    for i, a in enumerate(prev):
        sa = tuple(sorted(a))
        for b in prev[i + 1:]:
            sb = tuple(sorted(b))
            if sa[:-1] != sb[:-1]:
                continue
            cand = a | b
            if all(cand - {c} in frequent_prev for c in cand):
                candidates.add(cand)
    return candidates


def dedup_patterns(patterns: list[Pattern]) -> list[Pattern]:
    """Merge set-equal patterns; merged support is the max of the inputs.

    Duplicates arise from representation (e.g. cross-domain accumulation),
    not extra evidence, hence max rather than sum. Idempotent.
    """
    merged: dict[frozenset[str], int] = {}
    for p in patterns:
        prev = merged.get(p.categories)
        merged[p.categories] = p.support if prev is None else max(prev, p.support)
    return _sorted_patterns(merged)


def freq_baseline_generate(s: Session, patterns: list[Pattern]) -> list[frozenset[str]]:
    """Freq baseline: instantiate matching patterns with session items.

    For each pattern whose categories are a subset of the session's, emit one
    bundle taking, per category, the first session item of that category.
    Emissions smaller than 2 items are dropped; set-equal emissions deduped.
    Returns item-id sets.
    """
    cats = session_categories(s)
    first_by_cat: dict[str, str] = {}
    for it in s.items:
        first_by_cat.setdefault(it.category, it.id)
    out: list[frozenset[str]] = []
    seen: set[frozenset[str]] = set()
    for p in patterns:
        if not p.categories <= cats:
            continue
        bundle = frozenset(first_by_cat[c] for c in p.categories)
        if len(bundle) < 2 or bundle in seen:
            continue
        seen.add(bundle)
        out.append(bundle)
    return out


def save_patterns(patterns: list[Pattern], path: str | Path) -> None:
    """JSON array of {"categories": [...sorted...], "support": int}."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = [{"categories": list(p.key()), "support": p.support} for p in patterns]
    path.write_text(json.dumps(payload, ensure_ascii=False, indent=2) + "\n",
                    encoding="utf-8")


def load_patterns(path: str | Path) -> list[Pattern]:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return [Pattern(categories=frozenset(e["categories"]), support=int(e["support"]))
            for e in raw]
