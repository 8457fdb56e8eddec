"""Rule and thought distillation from a teacher chat LLM.

Rules come from a four-step self-reflection conversation (detect, compare
with ground truth, review the process, formulate rules); the full message
history is resent at every step. Thoughts come from one chain-of-thought
prompt per session. Text knowledge is deduplicated greedily at a cosine
similarity threshold of 0.8.

Pattern distillation is not an LLM call; it lives in the mining module.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Session
from .gateway import ChatMessage, GatewayError, ProviderConfig, complete, complete_cached
from .prompting import (
    ParseError,
    extract_json_object,
    parse_bundle_json,
    render_reflection_step,
    render_thought_prompt,
    render_zero_shot,
    serialize_bundles,
)

SIMILARITY_THRESHOLD = 0.8
RETRY_SUFFIX = "Please output valid JSON only."


class DistillError(Exception):
    def __init__(self, message: str, step: int | None = None, trace=None):
        super().__init__(message)
        self.step = step
        self.trace = trace


@dataclass(frozen=True)
class RuleKnowledge:
    text: str
    source_session_id: str
    domain: str

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("rule text must be non-empty")


@dataclass(frozen=True)
class ThoughtKnowledge:
    text: str
    source_session_id: str
    source_bundle_id: str
    domain: str

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("thought text must be non-empty")


@dataclass
class TraceStep:
    step: int
    prompt: list[dict]
    response: str
    started_at: float
    finished_at: float


@dataclass
class DistillationTrace:
    session_id: str
    kind: str  # "rule" | "thought"
    steps: list[TraceStep] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "session_id": self.session_id, "kind": self.kind,
            "warnings": list(self.warnings),
            "steps": [{
                "step": st.step, "prompt": st.prompt, "response": st.response,
                "started_at": st.started_at, "finished_at": st.finished_at,
            } for st in self.steps],
        }

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / f"{self.session_id}.{self.kind}.json"
        path.write_text(json.dumps(self.as_dict(), ensure_ascii=False, indent=2),
                        encoding="utf-8")
        return path


def _call(cfg: ProviderConfig, messages: list[ChatMessage], *, transport, sleep):
    if cfg.cache_dir:
        return complete_cached(cfg, messages, transport=transport, sleep=sleep)
    return complete(cfg, messages, transport=transport, sleep=sleep)


def _step(cfg: ProviderConfig, history: list[ChatMessage], trace: DistillationTrace,
          step: int, *, transport, sleep) -> str:
    started = time.time()
    try:
        resp = _call(cfg, history, transport=transport, sleep=sleep)
    except GatewayError as e:
        raise DistillError(f"step {step}: {e}", step=step, trace=trace) from e
    trace.steps.append(TraceStep(step=step, prompt=[m.as_dict() for m in history],
                                 response=resp.content, started_at=started,
                                 finished_at=time.time()))
    return resp.content


def _step_with_json_retry(cfg: ProviderConfig, history: list[ChatMessage],
                          trace: DistillationTrace, step: int, parse, *,
                          transport, sleep):
    """Run one step whose reply must parse; re-ask once before failing."""
    reply = _step(cfg, history, trace, step, transport=transport, sleep=sleep)
    try:
        return reply, parse(reply)
    except ParseError:
        trace.warnings.append(f"step {step}: unparseable JSON, re-asking once")
    history = history + [ChatMessage("assistant", reply or "(empty)"),
                         ChatMessage("user", RETRY_SUFFIX)]
    reply = _step(cfg, history, trace, step, transport=transport, sleep=sleep)
    try:
        return reply, parse(reply)
    except ParseError as e:
        raise DistillError(f"step {step}: unparseable JSON after retry: {e}",
                           step=step, trace=trace) from e


def distill_rules(s: Session, cfg: ProviderConfig, domain: str = "", *,
                  transport=None,
                  sleep=time.sleep) -> tuple[list[RuleKnowledge], DistillationTrace]:
    """Four-step self-reflection chain producing formalized rules.

    Step-4 replies of {} are legal (zero rules). Transport failures abort
    the chain with the failing step named; later steps are not attempted.
    """
    if not s.bundles:
        raise DistillError(f"session {s.id!r} has no ground-truth bundles")
    trace = DistillationTrace(session_id=s.id, kind="rule")

    history: list[ChatMessage] = list(render_zero_shot(s).messages)
    reply1, parsed = _step_with_json_retry(
        cfg, history, trace, 1, lambda r: parse_bundle_json(r, s),
        transport=transport, sleep=sleep)
    trace.warnings.extend(f"step 1: {w}" for w in parsed.warnings)
    history = history + [ChatMessage("assistant", reply1 or "(empty)")]

    step2 = render_reflection_step(2, {
        "correct_bundles": serialize_bundles([b.item_ids for b in s.bundles], s),
        "detected_bundles": serialize_bundles(list(parsed.bundles), s),
    })
    history = history + list(step2.messages)
    reply2 = _step(cfg, history, trace, 2, transport=transport, sleep=sleep)
    history = history + [ChatMessage("assistant", reply2 or "(empty)")]

    history = history + list(render_reflection_step(3, {}).messages)
    reply3 = _step(cfg, history, trace, 3, transport=transport, sleep=sleep)
    history = history + [ChatMessage("assistant", reply3 or "(empty)")]

    history = history + list(render_reflection_step(4, {}).messages)
    _, obj = _step_with_json_retry(cfg, history, trace, 4, extract_json_object,
                                   transport=transport, sleep=sleep)

    rules: list[RuleKnowledge] = []
    for key, value in obj.items():
        texts = value if isinstance(value, (list, tuple)) else [value]
        for t in texts:
            if isinstance(t, str) and t.strip():
                rules.append(RuleKnowledge(text=t.strip(), source_session_id=s.id,
                                           domain=domain))
            else:
                trace.warnings.append(f"step 4: dropped non-text rule under {key!r}")
    return rules, trace


def distill_thoughts(s: Session, cfg: ProviderConfig, domain: str = "", *,
                     transport=None,
                     sleep=time.sleep) -> tuple[list[ThoughtKnowledge], DistillationTrace]:
    """One CoT prompt per session; one thought per ground-truth bundle key."""
    if not s.bundles:
        raise DistillError(f"session {s.id!r} has no ground-truth bundles")
    trace = DistillationTrace(session_id=s.id, kind="thought")
    prompt = render_thought_prompt(s)
    trace.warnings.extend(prompt.warnings)
    history = list(prompt.messages)
    _, obj = _step_with_json_retry(cfg, history, trace, 1, extract_json_object,
                                   transport=transport, sleep=sleep)

    by_key = {f"bundle{k}": b for k, b in enumerate(s.bundles, start=1)}
    thoughts: list[ThoughtKnowledge] = []
    for key, b in by_key.items():
        value = obj.get(key)
        if not isinstance(value, str) or not value.strip():
            trace.warnings.append(f"no insight for {key} (bundle {b.id})")
            continue
        thoughts.append(ThoughtKnowledge(text=value.strip(), source_session_id=s.id,
                                         source_bundle_id=b.id, domain=domain))
    for key in obj:
        if key not in by_key:
            trace.warnings.append(f"ignored unknown key {key!r} in thought reply")
    return thoughts, trace


def dedup_text_knowledge(entries: list, embedder,
                         threshold: float = SIMILARITY_THRESHOLD) -> list:
    """Greedy first-wins dedup on embedding cosine similarity.

    An entry survives iff its cosine to every previously kept entry is below
    the threshold, so the first representative of each near-duplicate
    cluster is the one kept. Deterministic given input order.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0,1], got {threshold}")
    if not entries:
        return []
    vectors = np.asarray(embedder.embed_texts([e.text for e in entries]), dtype=float)
    norms = np.linalg.norm(vectors, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("embedder produced a zero vector")
    vectors = vectors / norms[:, None]
    kept: list = []
    kept_vecs = np.empty_like(vectors)
    for entry, vec in zip(entries, vectors):
        sims = kept_vecs[:len(kept)] @ vec
        if not len(kept) or float(sims.max()) < threshold:
            kept_vecs[len(kept)] = vec
            kept.append(entry)
    return kept
