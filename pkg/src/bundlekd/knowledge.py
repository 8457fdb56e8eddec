"""Knowledge persistence and accumulation, keyed by (domain, format).

Accumulation across domains concatenates then re-deduplicates (set equality
for patterns, the 0.8 cosine threshold for text); accumulation across
formats builds an ordered composite, patterns then rules then thoughts,
mirroring the progression from statistics to reasoning.

Storage: one JSON file per key, `<domain>.<format>.json`, with a schema
version header.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .distill import RuleKnowledge, ThoughtKnowledge, dedup_text_knowledge
from .mining import Pattern, dedup_patterns

SCHEMA_VERSION = 1
FORMATS = ("pattern", "rule", "thought")  # canonical composite order


class KnowledgeStoreError(Exception):
    pass


@dataclass(frozen=True)
class Composite:
    """Format-ordered knowledge bundle for prompt rendering."""
    patterns: tuple[Pattern, ...] = ()
    rules: tuple[RuleKnowledge, ...] = ()
    thoughts: tuple[ThoughtKnowledge, ...] = ()

    def __bool__(self) -> bool:
        return bool(self.patterns or self.rules or self.thoughts)


@dataclass
class KnowledgeBase:
    entries: dict[tuple[str, str], list] = field(default_factory=dict)
    provenance: dict[tuple[str, str], dict] = field(default_factory=dict)

    def put(self, domain: str, fmt: str, entries: list, provenance: dict) -> None:
        """Store post-dedup entries for (domain, format) with their provenance."""
        if fmt not in FORMATS:
            raise KnowledgeStoreError(f"unknown format {fmt!r}")
        self.entries[(domain, fmt)] = list(entries)
        self.provenance[(domain, fmt)] = dict(provenance)

    def get(self, domain: str, fmt: str) -> list:
        key = (domain, fmt)
        if key not in self.entries:
            raise KnowledgeStoreError(f"no knowledge for {key}")
        return self.entries[key]

    def keys(self) -> list[tuple[str, str]]:
        return sorted(self.entries)


def count_distinct(kb: KnowledgeBase, domain: str, fmt: str) -> int:
    """Entry count under a key; entries are post-dedup by construction."""
    return len(kb.get(domain, fmt))


def accumulate_domains(kb: KnowledgeBase, fmt: str, domains: list[str],
                       embedder=None, threshold: float = 0.8) -> list:
    """Concatenate one format across domains, then re-dedup."""
    parts: list = []
    for d in domains:
        parts.extend(kb.get(d, fmt))
    if fmt == "pattern":
        return dedup_patterns(parts)
    if embedder is None:
        raise KnowledgeStoreError(f"accumulating {fmt!r} knowledge needs an embedder")
    return dedup_text_knowledge(parts, embedder, threshold=threshold)


def accumulate_formats(kb: KnowledgeBase, domain: str, formats: list[str]) -> Composite:
    """Ordered composite over formats for one domain."""
    if len(set(formats)) != len(formats):
        raise KnowledgeStoreError(f"duplicate format in {formats}")
    for f in formats:
        if f not in FORMATS:
            raise KnowledgeStoreError(f"unknown format {f!r}")
    wanted = {f: kb.get(domain, f) for f in formats}
    return Composite(
        patterns=tuple(wanted.get("pattern", ())),
        rules=tuple(wanted.get("rule", ())),
        thoughts=tuple(wanted.get("thought", ())),
    )


def entry_to_obj(fmt: str, e) -> dict:
    if fmt == "pattern":
        return {"categories": list(e.key()), "support": e.support}
    if fmt == "rule":
        return {"text": e.text, "source_session_id": e.source_session_id,
                "domain": e.domain}
    return {"text": e.text, "source_session_id": e.source_session_id,
            "source_bundle_id": e.source_bundle_id, "domain": e.domain}


def entry_from_obj(fmt: str, obj: dict):
    if fmt == "pattern":
        return Pattern(categories=frozenset(obj["categories"]),
                       support=int(obj["support"]))
    if fmt == "rule":
        return RuleKnowledge(text=obj["text"],
                             source_session_id=obj["source_session_id"],
                             domain=obj["domain"])
    return ThoughtKnowledge(text=obj["text"],
                            source_session_id=obj["source_session_id"],
                            source_bundle_id=obj["source_bundle_id"],
                            domain=obj["domain"])


def persist(kb: KnowledgeBase, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for (domain, fmt), entries in kb.entries.items():
        payload = {
            "schema_version": SCHEMA_VERSION,
            "domain": domain,
            "format": fmt,
            "provenance": kb.provenance.get((domain, fmt), {}),
            "entries": [entry_to_obj(fmt, e) for e in entries],
        }
        path = directory / f"{domain}.{fmt}.json"
        path.write_text(json.dumps(payload, ensure_ascii=False, indent=2) + "\n",
                        encoding="utf-8")


def load(directory: str | Path) -> KnowledgeBase:
    directory = Path(directory)
    if not directory.is_dir():
        raise KnowledgeStoreError(f"no such knowledge directory: {directory}")
    kb = KnowledgeBase()
    for path in sorted(directory.glob("*.json")):
        payload = json.loads(path.read_text(encoding="utf-8"))
        version = payload.get("schema_version")
        if version != SCHEMA_VERSION:
            raise KnowledgeStoreError(
                f"{path.name}: schema version {version!r}, expected {SCHEMA_VERSION}")
        fmt = payload["format"]
        if fmt not in FORMATS:
            raise KnowledgeStoreError(f"{path.name}: unknown format {fmt!r}")
        entries = [entry_from_obj(fmt, o) for o in payload["entries"]]
        kb.put(payload["domain"], fmt, entries, payload.get("provenance", {}))
    return kb
