"""LoRA fine-tuning of a student model on exported chat JSONL.

Hyperparameters default to the grid used for the student runs: learning
rate in {2e-5, 8e-5, 2e-4}, epochs in {3, 4, 5}, rank and alpha in
{8, 16, 32}, batch size 4, gradient accumulation 4; any positive values are
accepted. `base_model` "local-tiny" builds a small randomly initialized
GPT-2 with a byte-level tokenizer entirely offline; any other id is loaded
through transformers and should resolve from the local model cache.

4-bit base quantization is unavailable on CPU-only hosts, so training runs
plain LoRA there; the adapter format is the same either way.
"""

from __future__ import annotations

import json
import random
import time
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .data import load_chat_jsonl
from .lora import apply_lora, lora_state_dict, trainable_parameters
from .tokenizer import ByteTokenizer, collate

HYPERPARAMETER_GRID = {
    "learning_rate": (2e-5, 8e-5, 2e-4),
    "epochs": (3, 4, 5),
    "lora_rank": (8, 16, 32),
    "lora_alpha": (8, 16, 32),
}

DEFAULT_TARGETS = ["attn.c_attn", "attn.c_proj", "mlp.c_fc", "mlp.c_proj"]


class TrainerError(RuntimeError):
    pass


@dataclass
class TrainerConfig:
    base_model: str = "local-tiny"
    learning_rate: float = 2e-4
    epochs: int = 3
    lora_rank: int = 16
    lora_alpha: int = 16
    batch_size: int = 4
    gradient_accumulation: int = 4
    max_length: int = 1024
    seed: int = 0
    target_modules: list = field(default_factory=lambda: list(DEFAULT_TARGETS))
    served_model_name: str = "bundlekd-student"

    def __post_init__(self) -> None:
        for name in ("learning_rate", "epochs", "lora_rank", "lora_alpha",
                     "batch_size", "gradient_accumulation", "max_length"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainerConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {k: v for k, v in raw.items() if k in cls.__dataclass_fields__}
        unknown = set(raw) - set(known)
        if unknown:
            raise TrainerError(f"unknown trainer config keys: {sorted(unknown)}")
        return cls(**known)

    def to_dict(self) -> dict:
        return {
            "base_model": self.base_model, "learning_rate": self.learning_rate,
            "epochs": self.epochs, "lora_rank": self.lora_rank,
            "lora_alpha": self.lora_alpha, "batch_size": self.batch_size,
            "gradient_accumulation": self.gradient_accumulation,
            "max_length": self.max_length, "seed": self.seed,
            "target_modules": list(self.target_modules),
            "served_model_name": self.served_model_name,
        }


LOCAL_TINY_SEED = 1135  # fixes the random base so adapters reload identically


def build_base(model_id: str, max_length: int):
    """(model, tokenizer) for a base model id, offline for "local-tiny"."""
    if model_id == "local-tiny":
        from transformers import GPT2Config, GPT2LMHeadModel
        tok = ByteTokenizer()
        cfg = GPT2Config(vocab_size=tok.vocab_size, n_positions=max_length,
                         n_embd=64, n_layer=2, n_head=2,
                         bos_token_id=None, eos_token_id=None,
                         pad_token_id=tok.pad_id)
        with torch.random.fork_rng():
            torch.manual_seed(LOCAL_TINY_SEED)
            model = GPT2LMHeadModel(cfg)
        return model, tok
    from transformers import AutoModelForCausalLM, AutoTokenizer
    model = AutoModelForCausalLM.from_pretrained(model_id)
    hf_tok = AutoTokenizer.from_pretrained(model_id)
    return model, _HFTokenizerAdapter(hf_tok)


class _HFTokenizerAdapter:
    """Expose the ByteTokenizer interface over a Hugging Face tokenizer."""

    def __init__(self, tok):
        self.tok = tok
        if tok.pad_token_id is None:
            tok.pad_token = tok.eos_token
        self.pad_id = tok.pad_token_id

    def render_chat(self, messages, add_generation_prompt: bool = False) -> str:
        return self.tok.apply_chat_template(
            list(messages), tokenize=False,
            add_generation_prompt=add_generation_prompt)

    def encode_sample(self, messages, max_length: int):
        prompt = self.render_chat(messages[:-1], add_generation_prompt=True)
        full = prompt + messages[-1]["content"]
        prompt_ids = self.tok.encode(prompt)
        reply_ids = self.tok.encode(full)[len(prompt_ids):][:max_length]
        budget = max_length - len(reply_ids)
        if len(prompt_ids) > budget:
            prompt_ids = prompt_ids[-budget:] if budget > 0 else []
        return prompt_ids + reply_ids, [-100] * len(prompt_ids) + reply_ids

    def decode(self, ids) -> str:
        return self.tok.decode(ids, skip_special_tokens=True)


def _batches(encoded, batch_size):
    for i in range(0, len(encoded), batch_size):
        yield collate(encoded[i:i + batch_size])


@torch.no_grad()
def _mean_loss(model, encoded, batch_size) -> float:
    model.eval()
    total, n = 0.0, 0
    for input_ids, labels, mask in _batches(encoded, batch_size):
        out = model(input_ids=input_ids, attention_mask=mask, labels=labels)
        total += float(out.loss)
        n += 1
    return total / n


def train(data_path: str | Path, cfg: TrainerConfig,
          out_dir: str | Path) -> Path:
    """Fine-tune LoRA adapters and persist them with the training log.

    The log records the echoed config, the seeds, per-epoch training loss,
    and the before/after evaluation loss on the training set (the smoke
    contract: final < initial).
    """
    samples = load_chat_jsonl(data_path)
    torch.manual_seed(cfg.seed)
    random.seed(cfg.seed)
    model, tok = build_base(cfg.base_model, cfg.max_length)
    wrapped = apply_lora(model, cfg.lora_rank, cfg.lora_alpha,
                         list(cfg.target_modules))
    encoded = [tok.encode_sample(s.messages, cfg.max_length) for s in samples]
    random.Random(cfg.seed).shuffle(encoded)
    params = trainable_parameters(model)
    optimizer = torch.optim.AdamW(params, lr=cfg.learning_rate)

    log: dict = {
        "config": cfg.to_dict(),
        "seeds": {"torch": cfg.seed, "python": cfg.seed},
        "n_samples": len(samples),
        "wrapped_modules": wrapped,
        "trainable_parameters": sum(p.numel() for p in params),
        "epoch_loss": [],
        "started_at": time.time(),
    }
    try:
        log["initial_loss"] = _mean_loss(model, encoded, cfg.batch_size)
        for epoch in range(cfg.epochs):
            model.train()
            running, steps = 0.0, 0
            optimizer.zero_grad()
            for i, (input_ids, labels, mask) in enumerate(
                    _batches(encoded, cfg.batch_size)):
                out = model(input_ids=input_ids, attention_mask=mask,
                            labels=labels)
                (out.loss / cfg.gradient_accumulation).backward()
                running += float(out.loss.detach())
                steps += 1
                if (i + 1) % cfg.gradient_accumulation == 0:
                    optimizer.step()
                    optimizer.zero_grad()
            optimizer.step()  # flush a trailing partial accumulation window
            optimizer.zero_grad()
            log["epoch_loss"].append(running / steps)
        log["final_loss"] = _mean_loss(model, encoded, cfg.batch_size)
    except (MemoryError, torch.cuda.OutOfMemoryError) as e:
        raise TrainerError(
            "out of memory during training: reduce batch_size, max_length, "
            "or lora_rank") from e
    log["finished_at"] = time.time()

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.save(lora_state_dict(model), out_dir / "adapter_state.pt")
    (out_dir / "adapter_config.json").write_text(
        json.dumps(cfg.to_dict(), indent=2) + "\n", encoding="utf-8")
    (out_dir / "training_log.json").write_text(
        json.dumps(log, indent=2) + "\n", encoding="utf-8")
    return out_dir


def load_adapter(adapter_dir: str | Path):
    """Rebuild the base model with its trained adapters: (model, tok, cfg)."""
    adapter_dir = Path(adapter_dir)
    cfg_path = adapter_dir / "adapter_config.json"
    if not cfg_path.exists():
        raise TrainerError(f"no adapter_config.json under {adapter_dir}")
    cfg = TrainerConfig(**json.loads(cfg_path.read_text(encoding="utf-8")))
    model, tok = build_base(cfg.base_model, cfg.max_length)
    apply_lora(model, cfg.lora_rank, cfg.lora_alpha, list(cfg.target_modules))
    state = torch.load(adapter_dir / "adapter_state.pt", weights_only=True)
    from .lora import load_lora_state
    load_lora_state(model, state)
    model.eval()
    return model, tok, cfg
