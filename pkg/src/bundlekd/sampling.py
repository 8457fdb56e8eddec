"""Training-data sampling under four strategies with nested results.

Strategies: random (single group), length (bins [2-4]/[5-7]/[8-10]),
diversity and difficulty (tertiles of an empirical score). Within each group
members are shuffled once per (seed, strategy, group); a ratio takes the
first ceil(ratio * group size) of that fixed order, so samples nest:
sample(r1) is a subset of sample(r2) whenever r1 <= r2.

Result session ids are listed in *entry order*: ascending by the ratio at
which each session first enters the sample. That makes the id list of a
smaller ratio a literal prefix of a larger one, which keeps downstream
greedy dedup counts monotone in the ratio.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from fractions import Fraction
from math import ceil

from .corpus import Dataset, Session, session_categories
from .evaluation import SessionEval

STRATEGIES = ("random", "length", "diversity", "difficulty")

LENGTH_BINS = ((2, 4, "short"), (5, 7, "medium"), (8, 10, "long"))


@dataclass(frozen=True)
class SamplingSpec:
    strategy: str
    ratio: float
    seed: int = 0
    group_thresholds: dict | None = None

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if not 0.0 < self.ratio <= 1.0:
            raise ValueError(f"ratio must be in (0,1], got {self.ratio}")


@dataclass(frozen=True)
class SampleResult:
    session_ids: tuple[str, ...]
    group_assignment: dict[str, str]

    def as_dict(self) -> dict:
        return {"session_ids": list(self.session_ids),
                "group_assignment": dict(self.group_assignment)}


def diversity_score(s: Session) -> float:
    """Distinct categories over item count, in (0, 1]."""
    if not s.items:
        raise ValueError(f"session {s.id!r} has no items")
    return len(session_categories(s)) / len(s.items)


def difficulty_score(s: Session, teacher_eval: SessionEval) -> float:
    """Teacher recall on the session's zero-shot run; lower means harder."""
    return teacher_eval.recall


def _length_group(n: int, bins=LENGTH_BINS) -> str:
    for lo, hi, label in bins:
        if lo <= n <= hi:
            return label
    # out-of-range lengths clamp to the nearest bin
    if n < bins[0][0]:
        return bins[0][2]
    return bins[-1][2]


def _tertiles(scores: dict[str, float], labels: tuple[str, str, str]) -> dict[str, str]:
    """Contiguous three-way split of the score distribution, low scores first.

    Sizes differ by at most one; ties broken by session id for determinism.
    """
    ordered = sorted(scores, key=lambda sid: (scores[sid], sid))
    n = len(ordered)
    cuts = (n // 3, (2 * n) // 3)
    out: dict[str, str] = {}
    for i, sid in enumerate(ordered):
        if i < cuts[0]:
            out[sid] = labels[0]
        elif i < cuts[1]:
            out[sid] = labels[1]
        else:
            out[sid] = labels[2]
    return out


def assign_groups(d: Dataset, strategy: str,
                  teacher_evals: dict[str, SessionEval] | None = None,
                  group_thresholds: dict | None = None) -> dict[str, str]:
    """Map each session id to its strategy group label."""
    if strategy == "random":
        return {s.id: "all" for s in d.sessions}
    if strategy == "length":
        bins = LENGTH_BINS
        if group_thresholds and "length" in group_thresholds:
            b = group_thresholds["length"]
            bins = tuple((lo, hi, label) for (lo, hi, label) in b)
        return {s.id: _length_group(len(s.items), bins) for s in d.sessions}
    if strategy == "diversity":
        scores = {s.id: diversity_score(s) for s in d.sessions}
        return _tertiles(scores, ("low", "medium", "high"))
    if strategy == "difficulty":
        if teacher_evals is None:
            raise ValueError("difficulty strategy requires teacher evaluations")
        missing = [s.id for s in d.sessions if s.id not in teacher_evals]
        if missing:
            raise ValueError(f"missing teacher evaluation for sessions {missing[:5]}")
        scores = {s.id: difficulty_score(s, teacher_evals[s.id]) for s in d.sessions}
        # low recall = hard
        return _tertiles(scores, ("hard", "medium", "easy"))
    raise ValueError(f"unknown strategy {strategy!r}")


def sample(d: Dataset, spec: SamplingSpec,
           teacher_evals: dict[str, SessionEval] | None = None) -> SampleResult:
    """Stratified sample at spec.ratio with per-group seeded shuffles.

    The member at position k of a group of size n enters the sample exactly
    when ratio > k/n (equivalently, the group contributes its first
    ceil(ratio*n) members). Ratios are compared as exact decimals so 0.1 of
    a 10-session group is 1 session, never 2.
    """
    if not d.sessions:
        raise ValueError("cannot sample an empty dataset")
    groups = assign_groups(d, spec.strategy, teacher_evals=teacher_evals,
                           group_thresholds=spec.group_thresholds)
    members: dict[str, list[str]] = {}
    for sid, label in groups.items():
        members.setdefault(label, []).append(sid)

    ratio = Fraction(str(spec.ratio))
    entries: list[tuple[Fraction, str, int, str]] = []
    for label in sorted(members):
        ids = sorted(members[label])
        random.Random(f"{spec.seed}|{spec.strategy}|{label}").shuffle(ids)
        n = len(ids)
        for k, sid in enumerate(ids):
            if Fraction(k, n) < ratio:
                entries.append((Fraction(k, n), label, k, sid))
    entries.sort(key=lambda e: (e[0], e[1], e[2]))
    taken = tuple(e[3] for e in entries)
    return SampleResult(session_ids=taken,
                        group_assignment={sid: groups[sid] for sid in taken})


def take_counts(groups: dict[str, str], ratio: float) -> dict[str, int]:
    """Per-group take sizes: ceil(ratio * group size) with exact decimals."""
    sizes: dict[str, int] = {}
    for label in groups.values():
        sizes[label] = sizes.get(label, 0) + 1
    r = Fraction(str(ratio))
    return {label: int(ceil(r * n)) for label, n in sizes.items()}
