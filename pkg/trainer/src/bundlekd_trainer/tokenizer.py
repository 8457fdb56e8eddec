"""Byte-level tokenizer and chat rendering for the local tiny model.

Token ids 0..255 are raw bytes; 256 is padding. Role markers are plain
text, so no special ids are needed:

    <|user|>\n{content}\n<|assistant|>\n{reply}\n<|end|>

Loss labels cover only the reply (everything after the final assistant
marker), which is the part the student is trained to produce.
"""

from __future__ import annotations

import torch

PAD_ID = 256
VOCAB_SIZE = 257

USER = "<|user|>\n"
ASSISTANT = "<|assistant|>\n"
SYSTEM = "<|system|>\n"
END = "\n<|end|>"
_MARKER = {"user": USER, "assistant": ASSISTANT, "system": SYSTEM}


class ByteTokenizer:
    pad_id = PAD_ID
    vocab_size = VOCAB_SIZE

    def encode(self, text: str) -> list[int]:
        return list(text.encode("utf-8"))

    def decode(self, ids) -> str:
        return bytes(t for t in ids if 0 <= int(t) < 256).decode(
            "utf-8", errors="replace")

    def render_chat(self, messages, add_generation_prompt: bool = False) -> str:
        parts = []
        for m in messages:
            parts.append(_MARKER[m["role"]] + m["content"] + END)
        text = "\n".join(parts)
        if add_generation_prompt:
            text += "\n" + ASSISTANT
        return text

    def encode_sample(self, messages, max_length: int):
        """(input_ids, labels) for one training sample.

        The prompt spans every message plus the assistant marker; labels are
        -100 there and real ids over the reply. The reply gets first claim
        on the length budget and overlong prompts lose their head, so a
        sample always keeps target tokens (an all-masked sample would make
        the loss NaN).
        """
        prompt = self.render_chat(messages[:-1], add_generation_prompt=True)
        reply = messages[-1]["content"] + END
        reply_ids = self.encode(reply)[:max_length]
        budget = max_length - len(reply_ids)
        prompt_ids = self.encode(prompt)
        if len(prompt_ids) > budget:
            prompt_ids = prompt_ids[-budget:] if budget > 0 else []
        input_ids = prompt_ids + reply_ids
        labels = [-100] * len(prompt_ids) + reply_ids
        return input_ids, labels


def collate(batch, pad_id: int = PAD_ID):
    """Right-pad a list of (input_ids, labels) into tensors."""
    width = max(len(ids) for ids, _ in batch)
    input_ids = torch.full((len(batch), width), pad_id, dtype=torch.long)
    labels = torch.full((len(batch), width), -100, dtype=torch.long)
    mask = torch.zeros((len(batch), width), dtype=torch.long)
    for i, (ids, labs) in enumerate(batch):
        input_ids[i, :len(ids)] = torch.tensor(ids, dtype=torch.long)
        labels[i, :len(labs)] = torch.tensor(labs, dtype=torch.long)
        mask[i, :len(ids)] = 1
    return input_ids, labels, mask


def strip_end_marker(text: str) -> str:
    return text.split(END.strip("\n"), 1)[0].rstrip("\n")
