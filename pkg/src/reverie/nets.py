"""Small network building blocks shared across the world model and agent."""

from __future__ import annotations

import torch
import torch.nn as nn


def mlp(in_dim: int, hidden: int, out_dim: int, hidden_layers: int, zero_init_out: bool = False) -> nn.Sequential:
    """MLP with ``hidden_layers`` blocks of Linear -> LayerNorm -> SiLU and a
    plain linear output layer."""
    layers: list[nn.Module] = []
    d = in_dim
    for _ in range(hidden_layers):
        layers += [nn.Linear(d, hidden), nn.LayerNorm(hidden), nn.SiLU()]
        d = hidden
    out = nn.Linear(d, out_dim)
    if zero_init_out:
        nn.init.zeros_(out.weight)
        nn.init.zeros_(out.bias)
    layers.append(out)
    return nn.Sequential(*layers)


def one_hot(actions: torch.Tensor, action_count: int, dtype: torch.dtype) -> torch.Tensor:
    """One-hot encode an integer action tensor, flattening stacked slots."""
    oh = torch.nn.functional.one_hot(actions.long(), action_count).to(dtype)
    return oh.flatten(start_dim=1) if oh.dim() > 2 else oh


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
