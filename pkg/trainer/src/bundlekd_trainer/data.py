"""Chat JSONL loading for fine-tuning.

Input schema (produced by `bundlekd export-sft`): one object per line with
"messages": [{"role": "user"|"assistant"|"system", "content": str}, ...];
a "meta" object is carried through untouched.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

ROLES = ("system", "user", "assistant")


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class ChatSample:
    messages: tuple[dict, ...]
    meta: dict = field(default_factory=dict)


def load_chat_jsonl(path: str | Path) -> list[ChatSample]:
    """Parse and validate; errors carry the 1-based line number."""
    path = Path(path)
    samples: list[ChatSample] = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: invalid JSON: {e}") from e
            messages = obj.get("messages")
            if not isinstance(messages, list) or not messages:
                raise DataError(f"{path}:{lineno}: missing or empty 'messages'")
            for m in messages:
                if not isinstance(m, dict) or m.get("role") not in ROLES \
                        or not isinstance(m.get("content"), str):
                    raise DataError(
                        f"{path}:{lineno}: message needs a role in {ROLES} "
                        "and string content")
            if messages[-1]["role"] != "assistant":
                raise DataError(
                    f"{path}:{lineno}: last message must be the assistant target")
            samples.append(ChatSample(messages=tuple(messages),
                                      meta=obj.get("meta", {})))
    if not samples:
        raise DataError(f"{path}: no samples found")
    return samples
