"""Prompt rendering and reply parsing.

Templates live under templates/*.txt and are the normative byte-exact
artifacts; rendering only substitutes the named placeholders, so literal
braces in titles or in the templates' JSON examples never break anything.
Product ids in prompts are positional: item k of the session is
``product{k}`` (1-based), and the session owns the position -> item-id map.
"""

from __future__ import annotations

import ast
import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from .corpus import Session
from .gateway import ChatMessage

TEMPLATE_IDS = ("zero_shot", "reflection_step2", "reflection_step3",
                "reflection_step4", "thought", "icl")

_PLACEHOLDER = re.compile(
    r"\{(product_list|knowledge|correct_bundles|detected_bundles|product_json|bundle_json)\}"
)
_BUNDLE_KEY = re.compile(r"bundle[\s_]*(\d+)", re.IGNORECASE)
_PRODUCT_ID = re.compile(r"product[\s_]*(\d+)", re.IGNORECASE)
_FENCE = re.compile(r"^```[a-zA-Z0-9_-]*\s*\n(.*?)\n?```\s*$", re.DOTALL)


class PromptError(Exception):
    pass


class ParseError(PromptError):
    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


@dataclass(frozen=True)
class RenderedPrompt:
    messages: tuple[ChatMessage, ...]
    template_id: str
    bindings: dict
    warnings: tuple[str, ...] = ()

    @property
    def text(self) -> str:
        return self.messages[-1].content


@dataclass(frozen=True)
class ParsedBundles:
    bundles: tuple[frozenset[str], ...]
    warnings: tuple[str, ...] = ()


@lru_cache(maxsize=None)
def load_template(template_id: str) -> str:
    if template_id not in TEMPLATE_IDS:
        raise PromptError(f"unknown template {template_id!r}")
    ref = resources.files("bundlekd").joinpath(f"templates/{template_id}.txt")
    return ref.read_text(encoding="utf-8").rstrip("\n")


def _render(template_id: str, bindings: dict[str, str],
            warnings: tuple[str, ...] = ()) -> RenderedPrompt:
    template = load_template(template_id)

    def sub(m: re.Match) -> str:
        name = m.group(1)
        if name not in bindings:
            raise PromptError(f"template {template_id!r}: missing binding {name!r}")
        return bindings[name]

    text = _PLACEHOLDER.sub(sub, template)
    return RenderedPrompt(messages=(ChatMessage("user", text),),
                          template_id=template_id, bindings=dict(bindings),
                          warnings=warnings)


def format_product_list(s: Session) -> str:
    return "\n".join(f"product{i}: {it.category}, {it.title}"
                     for i, it in enumerate(s.items, start=1))


def format_products_json(s: Session) -> str:
    obj = {f"product{i}": {"title": it.title, "category": it.category}
           for i, it in enumerate(s.items, start=1)}
    return json.dumps(obj, ensure_ascii=False)


def position_of(s: Session) -> dict[str, int]:
    return {it.id: i for i, it in enumerate(s.items, start=1)}


def serialize_bundles(bundle_sets: list[frozenset[str]], s: Session) -> str:
    """Answer-format JSON: {"bundle1": ["product1", "product3"], ...}."""
    pos = position_of(s)
    obj = {}
    for k, b in enumerate(bundle_sets, start=1):
        obj[f"bundle{k}"] = [f"product{p}" for p in sorted(pos[i] for i in b)]
    return json.dumps(obj, ensure_ascii=False)


def format_bundles_json(s: Session) -> tuple[str, tuple[str, ...]]:
    """Ground-truth bundles with intents for the thought prompt."""
    pos = position_of(s)
    warnings: list[str] = []
    obj = {}
    for k, b in enumerate(s.bundles, start=1):
        if b.intent is None:
            warnings.append(f"bundle {b.id}: null intent rendered as empty string")
        obj[f"bundle{k}"] = {
            "group": [f"product{p}" for p in sorted(pos[i] for i in b.item_ids)],
            "intent": b.intent or "",
        }
    return json.dumps(obj, ensure_ascii=False), tuple(warnings)


def render_zero_shot(s: Session) -> RenderedPrompt:
    return _render("zero_shot", {"product_list": format_product_list(s)})


def with_system(prompt: RenderedPrompt, preamble: str) -> RenderedPrompt:
    """Prepend a system message; prompts ship as a single user turn by default."""
    return RenderedPrompt(messages=(ChatMessage("system", preamble),) + prompt.messages,
                          template_id=prompt.template_id, bindings=prompt.bindings,
                          warnings=prompt.warnings)


def render_icl(s: Session, knowledge) -> RenderedPrompt:
    """ICL prompt with the serialized knowledge block.

    `knowledge` exposes .patterns, .rules, .thoughts (any may be empty).
    Fully empty knowledge falls back to the zero-shot prompt with a warning.
    """
    block = serialize_knowledge(knowledge)
    if not block:
        zs = render_zero_shot(s)
        return RenderedPrompt(messages=zs.messages, template_id=zs.template_id,
                              bindings=zs.bindings,
                              warnings=("empty knowledge: fell back to zero-shot",))
    return _render("icl", {"product_list": format_product_list(s),
                           "knowledge": block})


def serialize_knowledge(knowledge) -> str:
    """Section-headed knowledge block, patterns then rules then thoughts.

    Patterns render as one `[catA, catB]` line each; rules and thoughts as
    numbered lines. Empty sections are omitted entirely.
    """
    sections: list[str] = []
    patterns = list(getattr(knowledge, "patterns", ()) or ())
    rules = list(getattr(knowledge, "rules", ()) or ())
    thoughts = list(getattr(knowledge, "thoughts", ()) or ())
    if patterns:
        lines = "\n".join("[" + ", ".join(p.key()) + "]" for p in patterns)
        sections.append(f"Patterns:\n{lines}")
    if rules:
        lines = "\n".join(f"{i}. {r.text}" for i, r in enumerate(rules, start=1))
        sections.append(f"Rules:\n{lines}")
    if thoughts:
        lines = "\n".join(f"{i}. {t.text}" for i, t in enumerate(thoughts, start=1))
        sections.append(f"Thoughts:\n{lines}")
    return "\n".join(sections)


def render_reflection_step(step: int, bindings: dict) -> RenderedPrompt:
    """One step of the four-step self-reflection chain.

    Step 1 is the zero-shot prompt (needs "session"); step 2 needs the
    serialized "correct_bundles" and "detected_bundles"; steps 3 and 4 are
    verbatim. The chain itself (message history) is the distiller's job.
    """
    if step == 1:
        if "session" not in bindings:
            raise PromptError("reflection step 1 needs a session binding")
        return render_zero_shot(bindings["session"])
    if step == 2:
        missing = {"correct_bundles", "detected_bundles"} - set(bindings)
        if missing:
            raise PromptError(f"reflection step 2: missing bindings {sorted(missing)}")
        return _render("reflection_step2", {
            "correct_bundles": bindings["correct_bundles"],
            "detected_bundles": bindings["detected_bundles"],
        })
    if step == 3:
        return _render("reflection_step3", {})
    if step == 4:
        return _render("reflection_step4", {})
    raise PromptError(f"no such reflection step: {step}")


def render_thought_prompt(s: Session) -> RenderedPrompt:
    bundles_json, warnings = format_bundles_json(s)
    return _render("thought", {"product_json": format_products_json(s),
                               "bundle_json": bundles_json}, warnings=warnings)


# ---------------------------------------------------------------------------
# reply parsing

def strip_code_fences(text: str) -> str:
    m = _FENCE.match(text.strip())
    return m.group(1) if m else text


def _balanced_spans(text: str):
    """Yield top-level {...} spans, tracking quoted strings and escapes."""
    depth = 0
    start = -1
    quote: str | None = None
    escaped = False
    for i, ch in enumerate(text):
        if quote is not None:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == quote:
                quote = None
            continue
        if ch in "\"'":
            if depth > 0:
                quote = ch
            continue
        if ch == "{":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "}":
            if depth > 0:
                depth -= 1
                if depth == 0:
                    yield text[start:i + 1]


def extract_json_object(raw: str) -> dict:
    """First balanced top-level JSON object in raw text, as a dict.

    Tolerates markdown fences and python-literal quoting (the paper's answer
    formats use single quotes). Raises ParseError when nothing parses.
    """
    text = strip_code_fences(raw or "")
    for span in _balanced_spans(text):
        for loads in (json.loads, ast.literal_eval):
            try:
                obj = loads(span)
            except Exception:
                continue
            if isinstance(obj, dict):
                return obj
    raise ParseError("no JSON object found in reply", raw=raw or "")


def parse_bundle_json(raw: str, s: Session) -> ParsedBundles:
    """Validate a model's bundle reply against the session.

    Keys must look like bundleK; values must be lists of positional product
    ids. A bundle with any unknown id, or fewer than 2 valid distinct items,
    is dropped with a warning; repairs would silently inflate precision.
    Set-equal bundles are deduplicated.
    """
    obj = extract_json_object(raw)
    n = len(s.items)
    ids = [it.id for it in s.items]
    bundles: list[frozenset[str]] = []
    warnings: list[str] = []
    seen: set[frozenset[str]] = set()
    for key, value in obj.items():
        if not (isinstance(key, str) and _BUNDLE_KEY.fullmatch(key.strip())):
            warnings.append(f"ignored non-bundle key {key!r}")
            continue
        if not isinstance(value, (list, tuple)):
            warnings.append(f"{key}: value is not a list, dropped")
            continue
        members: set[str] = set()
        bad = None
        for el in value:
            p = _position(el)
            if p is None or not 1 <= p <= n:
                bad = el
                break
            members.add(ids[p - 1])
        if bad is not None:
            warnings.append(f"{key}: unknown product id {bad!r}, bundle dropped")
            continue
        fs = frozenset(members)
        if len(fs) < 2:
            warnings.append(f"{key}: bundle size < 2, dropped")
            continue
        if fs in seen:
            warnings.append(f"{key}: duplicate of an earlier bundle, dropped")
            continue
        seen.add(fs)
        bundles.append(fs)
    return ParsedBundles(bundles=tuple(bundles), warnings=tuple(warnings))


def _position(el) -> int | None:
    if isinstance(el, bool):
        return None
    if isinstance(el, int):
        return el
    if isinstance(el, str):
        el = el.strip()
        m = _PRODUCT_ID.fullmatch(el)
        if m:
            return int(m.group(1))
        if el.isdigit():
            return int(el)
    return None
