"""Minimal LoRA adapters over linear projections.

The frozen base layer keeps its weights; a trainable low-rank update
(x @ A @ B) * (alpha / rank) is added on top. B starts at zero so training
begins exactly at the base model. Works for both torch.nn.Linear and
transformers' Conv1D (GPT-2 style) projections.
"""

from __future__ import annotations

import torch
import torch.nn as nn
from transformers.pytorch_utils import Conv1D


class LoRALayer(nn.Module):
    def __init__(self, base: nn.Module, rank: int, alpha: int):
        super().__init__()
        if isinstance(base, Conv1D):
            in_features, out_features = base.weight.shape
        elif isinstance(base, nn.Linear):
            in_features, out_features = base.in_features, base.out_features
        else:
            raise TypeError(f"cannot wrap {type(base).__name__} with LoRA")
        self.base = base
        self.lora_A = nn.Parameter(torch.empty(in_features, rank))
        self.lora_B = nn.Parameter(torch.zeros(rank, out_features))
        nn.init.normal_(self.lora_A, std=0.02)
        self.scale = alpha / rank
        for p in self.base.parameters():
            p.requires_grad_(False)

    def forward(self, x):
        return self.base(x) + (x @ self.lora_A @ self.lora_B) * self.scale


def apply_lora(model: nn.Module, rank: int, alpha: int,
               target_suffixes: list[str]) -> list[str]:
    """Freeze the model and wrap every module whose name ends in a target.

    Returns the wrapped module names (order stable for serialization).
    """
    for p in model.parameters():
        p.requires_grad_(False)
    targets = []
    for name, module in model.named_modules():
        if any(name.endswith(sfx) for sfx in target_suffixes) and \
                isinstance(module, (nn.Linear, Conv1D)):
            targets.append(name)
    if not targets:
        raise ValueError(f"no modules matched target suffixes {target_suffixes}")
    for name in targets:
        parent_name, _, child = name.rpartition(".")
        parent = model.get_submodule(parent_name) if parent_name else model
        setattr(parent, child, LoRALayer(getattr(parent, child), rank, alpha))
    return targets


def lora_state_dict(model: nn.Module) -> dict[str, torch.Tensor]:
    return {name: param.detach().clone()
            for name, param in model.named_parameters()
            if "lora_A" in name or "lora_B" in name}


def load_lora_state(model: nn.Module, state: dict[str, torch.Tensor]) -> None:
    own = {name for name, _ in model.named_parameters()
           if "lora_A" in name or "lora_B" in name}
    if own != set(state):
        missing = own ^ set(state)
        raise ValueError(f"adapter/model mismatch on parameters: {sorted(missing)[:4]}")
    model.load_state_dict(state, strict=False)


def trainable_parameters(model: nn.Module):
    return [p for p in model.parameters() if p.requires_grad]
