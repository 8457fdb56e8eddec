from __future__ import annotations

import random

import pytest

from bundlekd.corpus import Bundle, Dataset, Item, Session
from bundlekd.sft import AugmentationPolicy, build_samples, export_jsonl

CATEGORIES = ["Cameras", "Lenses", "Tripods", "Batteries", "Bags", "Cables"]


def _session(i: int, rng: random.Random) -> Session:
    n = rng.randint(2, 4)
    items = tuple(Item(id=f"s{i}-i{k}", title=f"{c} {k}", category=c)
                  for k, c in enumerate(rng.sample(CATEGORIES, n), start=1))
    bundles = [Bundle(id=f"s{i}-b1",
                      item_ids=frozenset(it.id for it in items[:2]),
                      intent="starter kit")]
    if n >= 4 and rng.random() < 0.5:
        bundles.append(Bundle(id=f"s{i}-b2",
                              item_ids=frozenset(it.id for it in items[2:4]),
                              intent="travel pack"))
    return Session(id=f"s{i}", user_id=f"u{i % 5}", items=items,
                   bundles=tuple(bundles))


@pytest.fixture(scope="session")
def sft_jsonl_50(tmp_path_factory):
    """A 50-sample chat JSONL exported through the primary's own writer."""
    rng = random.Random(7)
    sessions = []
    i = 0
    samples = []
    while len(samples) < 50:
        s = _session(i, rng)
        sessions.append(s)
        i += 1
        d = Dataset(domain="smoke", sessions=tuple(sessions))
        samples, _ = build_samples(d, AugmentationPolicy(max_permutations=2, seed=0))
    samples = samples[:50]
    path = tmp_path_factory.mktemp("data") / "sft.jsonl"
    export_jsonl(samples, path)
    return path
