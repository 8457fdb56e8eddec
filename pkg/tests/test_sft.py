from __future__ import annotations

import json
from math import factorial
from pathlib import Path

import pytest

from bundlekd.corpus import Dataset
from bundlekd.knowledge import Composite
from bundlekd.prompting import parse_bundle_json
from bundlekd.sft import (
    AugmentationPolicy,
    build_samples,
    export_jsonl,
    load_jsonl,
    permute_bundles,
    serialize_ordered_bundles,
)
from helpers import make_session, synthetic_dataset

GOLDEN = Path(__file__).parent / "golden"


def test_two_bundles_two_orderings():
    s = make_session("s1", ["c1", "c2", "c3", "c4"], [[1, 2], [3, 4]])
    orderings = permute_bundles(list(s.bundles), AugmentationPolicy())
    assert len(orderings) == 2
    assert orderings[0] != orderings[1]
    assert {tuple(b.id for b in o) for o in orderings} == {
        ("s1-b1", "s1-b2"), ("s1-b2", "s1-b1")}


def test_one_bundle_one_ordering_and_disabled():
    s = make_session("s1", ["c1", "c2"], [[1, 2]])
    assert len(permute_bundles(list(s.bundles), AugmentationPolicy())) == 1
    s2 = make_session("s2", ["c1", "c2", "c3", "c4"], [[1, 2], [3, 4]])
    assert len(permute_bundles(list(s2.bundles),
                               AugmentationPolicy(enabled=False))) == 1


def test_five_bundles_capped_at_24_with_original():
    s = make_session("s1", ["c"] * 10,
                     [[1, 2], [3, 4], [5, 6], [7, 8], [9, 10]])
    gt = list(s.bundles)
    orderings = permute_bundles(gt, AugmentationPolicy(max_permutations=24, seed=3))
    assert len(orderings) == 24
    assert orderings[0] == tuple(gt)  # original always included
    keys = {tuple(b.id for b in o) for o in orderings}
    assert len(keys) == 24  # sampled without replacement


def test_permutations_deterministic_by_seed():
    s = make_session("s1", ["c"] * 10, [[1, 2], [3, 4], [5, 6], [7, 8], [9, 10]])
    gt = list(s.bundles)
    a = permute_bundles(gt, AugmentationPolicy(seed=1))
    b = permute_bundles(gt, AugmentationPolicy(seed=1))
    c = permute_bundles(gt, AugmentationPolicy(seed=2))
    assert a == b
    assert a != c


def test_policy_validation():
    with pytest.raises(ValueError):
        AugmentationPolicy(max_permutations=0)
    with pytest.raises(ValueError):
        permute_bundles([], AugmentationPolicy())


def test_serialized_order_follows_permutation():
    s = make_session("s1", ["c1", "c2", "c3", "c4"], [[1, 2], [3, 4]])
    flipped = (s.bundles[1], s.bundles[0])
    text = serialize_ordered_bundles(flipped, s)
    assert text == '{"bundle2": ["product3", "product4"], ' \
                   '"bundle1": ["product1", "product2"]}'


def test_sample_count_formula():
    d = synthetic_dataset(10, seed=12)
    policy = AugmentationPolicy(max_permutations=24, seed=0)
    samples, warnings = build_samples(d, policy)
    expected = sum(min(factorial(len(s.bundles)), 24)
                   for s in d.sessions if s.bundles)
    assert len(samples) == expected
    assert warnings == []


def test_zero_shot_user_message_matches_golden(golden_session):
    d = Dataset(domain="x", sessions=(golden_session,))
    samples, _ = build_samples(d, AugmentationPolicy())
    assert samples[0].messages[0]["content"] == \
        (GOLDEN / "zero_shot.txt").read_text(encoding="utf-8")


def test_assistant_reparses_to_ground_truth():
    d = synthetic_dataset(25, seed=7)
    samples, _ = build_samples(d, AugmentationPolicy(max_permutations=6, seed=1))
    by_id = {s.id: s for s in d.sessions}
    for sample in samples:
        session = by_id[sample.session_id]
        parsed = parse_bundle_json(sample.messages[1]["content"], session)
        assert set(parsed.bundles) == {b.item_ids for b in session.bundles}
        assert parsed.warnings == ()


def test_sessions_without_gt_skipped_with_warning():
    d = Dataset(domain="x", sessions=(
        make_session("s1", ["c1", "c2"], [[1, 2]]),
        make_session("s2", ["c1", "c2"], []),
    ))
    samples, warnings = build_samples(d, AugmentationPolicy())
    assert {s.session_id for s in samples} == {"s1"}
    assert any("s2" in w for w in warnings)


def test_icl_prompt_used_when_knowledge_given(golden_session):
    from bundlekd.distill import RuleKnowledge
    comp = Composite(rules=(RuleKnowledge("Bundle by intent.", "sX", "d"),))
    d = Dataset(domain="x", sessions=(golden_session,))
    samples, _ = build_samples(d, AugmentationPolicy(), knowledge_for=lambda s: comp)
    user = samples[0].messages[0]["content"]
    assert "KNOWLEDGE" in user and "Bundle by intent." in user


def test_export_roundtrip_and_empty(tmp_path):
    d = synthetic_dataset(5, seed=3)
    samples, _ = build_samples(d, AugmentationPolicy(max_permutations=2, seed=0))
    path = tmp_path / "sft.jsonl"
    export_jsonl(samples, path)
    loaded = load_jsonl(path)
    assert loaded == samples

    empty = tmp_path / "empty.jsonl"
    export_jsonl([], empty)
    assert empty.read_text() == ""
    assert load_jsonl(empty) == []


def test_export_deterministic(tmp_path):
    d = synthetic_dataset(8, seed=9)
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    for p in (p1, p2):
        samples, _ = build_samples(d, AugmentationPolicy(max_permutations=4, seed=5))
        export_jsonl(samples, p)
    assert p1.read_bytes() == p2.read_bytes()


def test_exported_line_schema(tmp_path):
    d = synthetic_dataset(3, seed=2)
    samples, _ = build_samples(d, AugmentationPolicy())
    path = tmp_path / "sft.jsonl"
    export_jsonl(samples, path)
    first = json.loads(path.read_text().splitlines()[0])
    assert set(first) == {"messages", "meta"}
    assert [m["role"] for m in first["messages"]] == ["user", "assistant"]
    assert set(first["meta"]) == {"session_id", "perm"}
