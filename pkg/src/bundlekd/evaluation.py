"""Precision/Recall/Coverage under the subset-hit rule.

A generated bundle is a hit iff it completely matches or is a subset of some
ground-truth bundle. Precision and Recall are session-level; Coverage is
bundle-level: the mean, over hit generated bundles, of the fraction of the
matched ground-truth bundle they cover. Several generated bundles may hit
the same ground-truth bundle (each counts for precision; the ground truth
counts once for recall).
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import Bundle


@dataclass(frozen=True)
class GeneratedAssignment:
    items: frozenset[str]
    matched_gt_id: str | None  # None = not a hit


@dataclass(frozen=True)
class HitAssignment:
    generated: tuple[GeneratedAssignment, ...]
    recalled: dict[str, bool]  # gt bundle id -> recalled flag


@dataclass(frozen=True)
class SessionEval:
    precision: float
    recall: float
    coverage: float
    n_generated: int
    n_hit: int
    n_gt: int
    n_recalled: int

    def as_dict(self) -> dict:
        return {
            "precision": self.precision, "recall": self.recall,
            "coverage": self.coverage, "n_generated": self.n_generated,
            "n_hit": self.n_hit, "n_gt": self.n_gt, "n_recalled": self.n_recalled,
        }


def is_hit(generated: frozenset[str], gt: list[Bundle]) -> str | None:
    """Id of the ground-truth bundle matched by `generated`, or None.

    A bundle qualifies when generated is a subset of it (equality included).
    Among qualifying bundles the match maximizes the overlap ratio
    |generated|/|gt|; ties go to the smaller gt id.
    """
    if len(generated) < 2:
        return None
    best_id: str | None = None
    best_ratio = -1.0
    for t in gt:
        if generated <= t.item_ids:
            ratio = len(generated) / len(t.item_ids)
            if ratio > best_ratio or (ratio == best_ratio and t.id < best_id):
                best_id, best_ratio = t.id, ratio
    return best_id


def eval_session(generated: list[frozenset[str]],
                 gt: list[Bundle]) -> tuple[SessionEval, HitAssignment]:
    """Score one session's generated bundles against its ground truth.

    Set-equal generated bundles are counted once. Empty generation scores
    P=R=C=0 rather than undefined.
    """
    if not gt:
        raise ValueError("eval_session requires non-empty ground truth")
    gt_by_id = {t.id: t for t in gt}
    unique: list[frozenset[str]] = []
    seen: set[frozenset[str]] = set()
    for g in generated:
        g = frozenset(g)
        if g not in seen:
            seen.add(g)
            unique.append(g)

    assignments: list[GeneratedAssignment] = []
    coverages: list[float] = []
    for g in unique:
        match = is_hit(g, gt)
        assignments.append(GeneratedAssignment(items=g, matched_gt_id=match))
        if match is not None:
            coverages.append(len(g) / len(gt_by_id[match].item_ids))

    recalled = {
        t.id: any(g.items <= t.item_ids and len(g.items) >= 2 for g in assignments)
        for t in gt
    }
    n_gen = len(unique)
    n_hit = sum(1 for a in assignments if a.matched_gt_id is not None)
    n_rec = sum(1 for v in recalled.values() if v)
    ev = SessionEval(
        precision=n_hit / n_gen if n_gen else 0.0,
        recall=n_rec / len(gt),
        coverage=sum(coverages) / len(coverages) if coverages else 0.0,
        n_generated=n_gen, n_hit=n_hit, n_gt=len(gt), n_recalled=n_rec,
    )
    return ev, HitAssignment(generated=tuple(assignments), recalled=recalled)


def difficulty_from_eval(e: SessionEval) -> float:
    """Difficulty signal for the sampler: teacher session recall (low = hard)."""
    return e.recall


@dataclass
class Report:
    sessions: dict[str, SessionEval]
    macro: dict[str, float]
    aggregate: str = "macro"
    config_fingerprint: str = ""
    timestamp: float = field(default_factory=time.time)

    def as_dict(self) -> dict:
        return {
            "config": self.config_fingerprint,
            "aggregate": self.aggregate,
            "macro": self.macro,
            "timestamp": self.timestamp,
            "sessions": [
                {"session_id": sid, **ev.as_dict()} for sid, ev in self.sessions.items()
            ],
        }

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.as_dict(), indent=2) + "\n", encoding="utf-8")

    def save_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["session_id", "precision", "recall", "coverage",
                        "n_generated", "n_hit", "n_gt", "n_recalled"])
            for sid, ev in self.sessions.items():
                w.writerow([sid, ev.precision, ev.recall, ev.coverage,
                            ev.n_generated, ev.n_hit, ev.n_gt, ev.n_recalled])


def eval_corpus(per_session: dict[str, tuple[list[frozenset[str]], list[Bundle]]],
                aggregate: str = "macro",
                config_fingerprint: str = "") -> Report:
    """Aggregate session evals into a corpus report.

    `macro` (default) is the unweighted mean of each metric over sessions;
    `micro` pools the underlying counts before dividing.
    """
    if not per_session:
        raise ValueError("eval_corpus requires at least one session")
    if aggregate not in ("macro", "micro"):
        raise ValueError(f"unknown aggregate {aggregate!r}")
    evals: dict[str, SessionEval] = {}
    for sid, (generated, gt) in per_session.items():
        evals[sid], _ = eval_session(generated, gt)

    if aggregate == "macro":
        n = len(evals)
        macro = {
            "precision": sum(e.precision for e in evals.values()) / n,
            "recall": sum(e.recall for e in evals.values()) / n,
            "coverage": sum(e.coverage for e in evals.values()) / n,
        }
    else:
        n_gen = sum(e.n_generated for e in evals.values())
        n_hit = sum(e.n_hit for e in evals.values())
        n_gt = sum(e.n_gt for e in evals.values())
        n_rec = sum(e.n_recalled for e in evals.values())
        cov_num = sum(e.coverage * e.n_hit for e in evals.values())
        macro = {
            "precision": n_hit / n_gen if n_gen else 0.0,
            "recall": n_rec / n_gt if n_gt else 0.0,
            "coverage": cov_num / n_hit if n_hit else 0.0,
        }
    return Report(sessions=evals, macro=macro, aggregate=aggregate,
                  config_fingerprint=config_fingerprint)
