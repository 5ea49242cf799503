"""Latent dynamics: deterministic transition, two-hot symlog reward head,
and Bernoulli terminal head.

The transition network predicts the mean of a unit-variance Gaussian over
the next representation, so its negative log-likelihood reduces to half the
squared error. Rewards are modeled as discrete regression over bins spaced
uniformly in symlog space with two-hot targets; terminals use a Bernoulli
whose mode is taken at probability >= 0.5.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .nets import mlp, one_hot


def symlog(x: torch.Tensor) -> torch.Tensor:
    return torch.sign(x) * torch.log1p(torch.abs(x))


def symexp(x: torch.Tensor) -> torch.Tensor:
    return torch.sign(x) * torch.expm1(torch.abs(x))


@dataclass(frozen=True)
class TwoHotSpec:
    bin_count: int = 255
    low: float = -20.0
    high: float = 20.0

    def __post_init__(self) -> None:
        if self.bin_count < 2:
            raise ValueError("bin_count must be >= 2")
        if not self.low < self.high or self.low != -self.high:
            raise ValueError("bins must span a symmetric interval")

    def bins(self, dtype: torch.dtype = torch.float32, device=None) -> torch.Tensor:
        return torch.linspace(self.low, self.high, self.bin_count, dtype=dtype, device=device)


def twohot_encode(values: torch.Tensor, spec: TwoHotSpec) -> torch.Tensor:
    """Encode values as weights over two adjacent bins in symlog space.

    Returns (..., bin_count) weights with at most two nonzero entries that
    sum to one; values outside the bin range are clamped.
    """
    x = symlog(values).clamp(spec.low, spec.high)
    step = (spec.high - spec.low) / (spec.bin_count - 1)
    pos = (x - spec.low) / step
    lo = pos.floor().long().clamp(0, spec.bin_count - 2)
    w_hi = (pos - lo.to(pos.dtype)).clamp(0.0, 1.0)
    out = values.new_zeros(*values.shape, spec.bin_count)
    out.scatter_(-1, lo.unsqueeze(-1), (1.0 - w_hi).unsqueeze(-1))
    out.scatter_add_(-1, (lo + 1).unsqueeze(-1), w_hi.unsqueeze(-1))
    return out


def twohot_decode(logits: torch.Tensor, spec: TwoHotSpec) -> torch.Tensor:
    """Decode logits to a value: symexp of the expected bin position."""
    probs = torch.softmax(logits, dim=-1)
    bins = spec.bins(dtype=logits.dtype, device=logits.device)
    return symexp(probs @ bins)


def twohot_cross_entropy(logits: torch.Tensor, values: torch.Tensor, spec: TwoHotSpec) -> torch.Tensor:
    """Per-sample cross-entropy between logits and two-hot encoded targets."""
    target = twohot_encode(values, spec)
    return -(target * torch.log_softmax(logits, dim=-1)).sum(dim=-1)


class TransitionModel(nn.Module):
    """Mean of the next representation given (y, a), with an input-to-output
    residual connection. The output layer is zero-initialized so the model
    starts as the identity map."""

    def __init__(self, repr_dim: int = 512, action_count: int = 3, hidden: int = 1024, hidden_layers: int = 5):
        super().__init__()
        self.action_count = action_count
        self.net = mlp(repr_dim + action_count, hidden, repr_dim, hidden_layers=hidden_layers, zero_init_out=True)

    def forward(self, y: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
        a = one_hot(action, self.action_count, y.dtype)
        return y + self.net(torch.cat([y, a], dim=1))


class RewardHead(nn.Module):
    """Reward logits from (y, a, y'); decoded via the two-hot symlog bins."""

    def __init__(self, repr_dim: int = 512, action_count: int = 3, hidden: int = 1024,
                 hidden_layers: int = 2, spec: TwoHotSpec = TwoHotSpec()):
        super().__init__()
        self.action_count = action_count
        self.spec = spec
        self.net = mlp(2 * repr_dim + action_count, hidden, spec.bin_count,
                       hidden_layers=hidden_layers, zero_init_out=True)

    def forward(self, y: torch.Tensor, action: torch.Tensor, y_next: torch.Tensor) -> torch.Tensor:
        a = one_hot(action, self.action_count, y.dtype)
        return self.net(torch.cat([y, a, y_next], dim=1))

    def decode(self, logits: torch.Tensor) -> torch.Tensor:
        return twohot_decode(logits, self.spec)


class TerminalHead(nn.Module):
    """Terminal logit from (y, a, y'); mode is [sigmoid(logit) >= 0.5]."""

    def __init__(self, repr_dim: int = 512, action_count: int = 3, hidden: int = 1024, hidden_layers: int = 2):
        super().__init__()
        self.action_count = action_count
        self.net = mlp(2 * repr_dim + action_count, hidden, 1, hidden_layers=hidden_layers)

    def forward(self, y: torch.Tensor, action: torch.Tensor, y_next: torch.Tensor) -> torch.Tensor:
        a = one_hot(action, self.action_count, y.dtype)
        return self.net(torch.cat([y, a, y_next], dim=1)).squeeze(-1)

    @staticmethod
    def prob(logit: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(logit)

    @staticmethod
    def mode(logit: torch.Tensor) -> torch.Tensor:
        return (torch.sigmoid(logit) >= 0.5).to(logit.dtype)


def transition_nll(mu: torch.Tensor, y_next: torch.Tensor) -> torch.Tensor:
    """Half squared error per sample (unit-variance Gaussian NLL up to const)."""
    return 0.5 * (mu - y_next).square().sum(dim=1)


def terminal_bce(logit: torch.Tensor, terminal: torch.Tensor) -> torch.Tensor:
    return F.binary_cross_entropy_with_logits(logit, terminal, reduction="none")
