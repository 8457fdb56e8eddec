from __future__ import annotations

import json

import pytest

from bundlekd.distill import RuleKnowledge, ThoughtKnowledge
from bundlekd.knowledge import (
    Composite,
    KnowledgeBase,
    KnowledgeStoreError,
    accumulate_domains,
    accumulate_formats,
    count_distinct,
    load,
    persist,
)
from bundlekd.mining import Pattern
from bundlekd.retrieval import MockEmbedder


def rule(text, domain="electronic"):
    return RuleKnowledge(text=text, source_session_id="s1", domain=domain)


def thought(text, domain="electronic"):
    return ThoughtKnowledge(text=text, source_session_id="s1",
                            source_bundle_id="b1", domain=domain)


def seeded_kb() -> KnowledgeBase:
    kb = KnowledgeBase()
    prov = {"sampling": {"strategy": "random", "ratio": 1.0, "seed": 0},
            "dataset_hash": "deadbeef"}
    kb.put("electronic", "pattern",
           [Pattern(frozenset({"c1", "c2"}), 3)], prov)
    kb.put("clothing", "pattern",
           [Pattern(frozenset({"c2", "c1"}), 5), Pattern(frozenset({"c3", "c4"}), 2)],
           prov)
    kb.put("electronic", "rule", [rule("r-one"), rule("r-two")], prov)
    kb.put("clothing", "rule", [rule("r-one", "clothing"), rule("r-three", "clothing")],
           prov)
    kb.put("food", "rule", [rule("r-four", "food")], prov)
    kb.put("electronic", "thought", [thought("t-one")], prov)
    return kb


def test_single_domain_identity():
    kb = seeded_kb()
    out = accumulate_domains(kb, "rule", ["electronic"], embedder=MockEmbedder())
    assert out == kb.get("electronic", "rule")


def test_cross_domain_rules_sum_when_distinct():
    kb = seeded_kb()
    out = accumulate_domains(kb, "rule", ["electronic", "food"],
                             embedder=MockEmbedder())
    assert len(out) == 3


def test_cross_domain_identical_text_counted_once():
    kb = seeded_kb()
    out = accumulate_domains(kb, "rule", ["electronic", "clothing"],
                             embedder=MockEmbedder())
    assert [r.text for r in out] == ["r-one", "r-two", "r-three"]


def test_cross_domain_patterns_merge_set_equal():
    kb = seeded_kb()
    out = accumulate_domains(kb, "pattern", ["electronic", "clothing"])
    assert [(p.key(), p.support) for p in out] == [
        (("c1", "c2"), 5), (("c3", "c4"), 2)]


def test_accumulate_missing_key_errors():
    kb = seeded_kb()
    with pytest.raises(KnowledgeStoreError, match="food"):
        accumulate_domains(kb, "pattern", ["electronic", "food"])


def test_text_accumulation_requires_embedder():
    kb = seeded_kb()
    with pytest.raises(KnowledgeStoreError, match="embedder"):
        accumulate_domains(kb, "rule", ["electronic"])


def test_accumulate_formats_sections_and_order():
    kb = seeded_kb()
    one = accumulate_formats(kb, "electronic", ["pattern"])
    assert one.patterns and not one.rules and not one.thoughts

    full = accumulate_formats(kb, "electronic", ["thought", "pattern", "rule"])
    assert full.patterns and full.rules and full.thoughts  # canonical order fields

    with pytest.raises(KnowledgeStoreError, match="duplicate"):
        accumulate_formats(kb, "electronic", ["pattern", "pattern"])


def test_count_distinct():
    kb = seeded_kb()
    assert count_distinct(kb, "electronic", "rule") == 2
    kb.put("food", "thought", [], {"sampling": {}, "dataset_hash": ""})
    assert count_distinct(kb, "food", "thought") == 0
    with pytest.raises(KnowledgeStoreError):
        count_distinct(kb, "nope", "rule")


def test_count_invariant_under_permutation():
    kb = seeded_kb()
    entries = kb.get("electronic", "rule")
    kb.put("electronic", "rule", list(reversed(entries)), {"x": 1})
    assert count_distinct(kb, "electronic", "rule") == len(entries)


def test_persist_load_roundtrip_exact(tmp_path):
    kb = seeded_kb()
    persist(kb, tmp_path / "knowledge")
    loaded = load(tmp_path / "knowledge")
    assert loaded.entries == kb.entries
    assert loaded.provenance == kb.provenance
    names = {p.name for p in (tmp_path / "knowledge").glob("*.json")}
    assert "electronic.rule.json" in names and "clothing.pattern.json" in names


def test_load_missing_dir_errors(tmp_path):
    with pytest.raises(KnowledgeStoreError, match="no such"):
        load(tmp_path / "absent")


def test_load_stale_schema_version_errors(tmp_path):
    d = tmp_path / "knowledge"
    kb = seeded_kb()
    persist(kb, d)
    victim = d / "electronic.rule.json"
    payload = json.loads(victim.read_text())
    payload["schema_version"] = 0
    victim.write_text(json.dumps(payload))
    with pytest.raises(KnowledgeStoreError, match="schema version"):
        load(d)


def test_composite_truthiness():
    assert not Composite()
    assert Composite(rules=(rule("x"),))
