"""Supervised fine-tuning data construction with permutation augmentation.

Each training sample pairs the inference-time prompt (zero-shot, or ICL
with retrieved knowledge) with the session's ground-truth bundles in the
answer-format JSON. Since bundle order carries no meaning, augmentation
emits one sample per bundle ordering: all n! of them up to the cap, beyond
which orderings are sampled without replacement (always keeping the
original). Exported as chat-format JSONL.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from itertools import permutations
from math import factorial
from pathlib import Path

from .corpus import Bundle, Dataset, Session
from .prompting import position_of, render_icl, render_zero_shot

DEFAULT_PERMUTATION_CAP = 24  # 4!; inert on realistic bundle counts


@dataclass(frozen=True)
class AugmentationPolicy:
    enabled: bool = True
    max_permutations: int = DEFAULT_PERMUTATION_CAP
    seed: int = 0

    def __post_init__(self) -> None:
        if self.max_permutations < 1:
            raise ValueError("max_permutations must be >= 1")


@dataclass(frozen=True)
class TrainingSample:
    messages: tuple[dict, ...]  # user prompt + assistant answer
    session_id: str
    permutation_index: int


def permute_bundles(gt: list[Bundle],
                    policy: AugmentationPolicy) -> list[tuple[Bundle, ...]]:
    """Bundle orderings to emit for one session.

    All n! orderings when that fits the cap; otherwise the original order
    plus seeded distinct samples up to the cap.
    """
    if not gt:
        raise ValueError("permute_bundles needs at least one bundle")
    original = tuple(gt)
    if not policy.enabled:
        return [original]
    n = len(gt)
    if factorial(n) <= policy.max_permutations:
        return [tuple(p) for p in permutations(gt)]
    rng = random.Random(policy.seed)
    chosen: list[tuple[Bundle, ...]] = [original]
    seen = {tuple(b.id for b in original)}
    while len(chosen) < policy.max_permutations:
        perm = tuple(rng.sample(gt, n))
        key = tuple(b.id for b in perm)
        if key not in seen:
            seen.add(key)
            chosen.append(perm)
    return chosen


def serialize_ordered_bundles(ordered: tuple[Bundle, ...], s: Session) -> str:
    """Answer-format JSON preserving the permuted order.

    Keys keep each bundle's position in the session's original list, so a
    permuted sample reads like {"bundle2": [...], "bundle1": [...]}.
    """
    pos = position_of(s)
    number = {b.id: k for k, b in enumerate(s.bundles, start=1)}
    obj = {}
    for b in ordered:
        obj[f"bundle{number[b.id]}"] = [
            f"product{p}" for p in sorted(pos[i] for i in b.item_ids)
        ]
    return json.dumps(obj, ensure_ascii=False)


def build_samples(d: Dataset, policy: AugmentationPolicy,
                  knowledge_for=None) -> tuple[list[TrainingSample], list[str]]:
    """Training samples for every session with ground truth.

    `knowledge_for(session) -> composite` switches the user prompt to the
    ICL template with that knowledge; None keeps the zero-shot prompt.
    Sessions without ground-truth bundles are skipped with a warning.
    """
    samples: list[TrainingSample] = []
    warnings: list[str] = []
    for s in d.sessions:
        if not s.bundles:
            warnings.append(f"session {s.id}: no ground-truth bundles, skipped")
            continue
        if knowledge_for is not None:
            prompt = render_icl(s, knowledge_for(s))
            warnings.extend(f"session {s.id}: {w}" for w in prompt.warnings)
        else:
            prompt = render_zero_shot(s)
        user = prompt.messages[-1].as_dict()
        for idx, ordered in enumerate(permute_bundles(list(s.bundles), policy)):
            assistant = {"role": "assistant",
                         "content": serialize_ordered_bundles(ordered, s)}
            samples.append(TrainingSample(messages=(user, assistant),
                                          session_id=s.id, permutation_index=idx))
    return samples, warnings


def export_jsonl(samples: list[TrainingSample], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for sample in samples:
            fh.write(json.dumps({
                "messages": list(sample.messages),
                "meta": {"session_id": sample.session_id,
                         "perm": sample.permutation_index},
            }, ensure_ascii=False) + "\n")


def load_jsonl(path: str | Path) -> list[TrainingSample]:
    out: list[TrainingSample] = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            meta = obj.get("meta", {})
            out.append(TrainingSample(messages=tuple(obj["messages"]),
                                      session_id=meta.get("session_id", ""),
                                      permutation_index=int(meta.get("perm", 0))))
    return out
