"""Representation learning: encoder, projector, action-conditioned predictor,
and the self-supervised loss terms.

The loss combines a temporal-consistency term (predict the next embedding
from the current embedding and the action) with variance/covariance
regularization of the embedding batches, which keeps per-feature standard
deviations above one and decorrelates features to prevent collapse. A flag
switches the regularizer to its sample-contrastive form by transposing the
embedding matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .nets import mlp, one_hot


@dataclass(frozen=True)
class ReprLossConfig:
    consistency_coef: float = 12.5
    variance_coef: float = 25.0
    covariance_coef: float = 1.0
    epsilon: float = 1e-4
    sample_contrastive: bool = False

    def __post_init__(self) -> None:
        if min(self.consistency_coef, self.variance_coef, self.covariance_coef) < 0:
            raise ValueError("loss coefficients must be >= 0")


class Encoder(nn.Module):
    """Stacked observation -> layer-normalized representation.

    Four stride-2 convolutions (kernel 4, padding 1) take the 3m x 64 x 64
    frame stack through 32 -> 16 -> 8 -> 4 spatial maps; the flattened
    features are concatenated with the one-hot stacked actions and projected
    to the representation, which is layer-normalized without a learned
    affine so every output has zero mean and unit variance across features.
    """

    def __init__(
        self,
        frame_stack: int,
        action_stack: int,
        action_count: int,
        repr_dim: int = 512,
        channels: tuple[int, ...] = (32, 64, 128, 256),
    ):
        super().__init__()
        self.action_stack = action_stack
        self.action_count = action_count
        layers: list[nn.Module] = []
        c_in = 3 * frame_stack
        for c_out in channels:
            layers += [nn.Conv2d(c_in, c_out, kernel_size=4, stride=2, padding=1), nn.GroupNorm(1, c_out), nn.SiLU()]
            c_in = c_out
        self.conv = nn.Sequential(*layers)
        spatial = 64 // 2 ** len(channels)
        self.fc = nn.Linear(channels[-1] * spatial * spatial + action_stack * action_count, repr_dim)
        self.norm = nn.LayerNorm(repr_dim, elementwise_affine=False)

    def forward(self, frames: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
        if frames.dim() != 4:
            raise ValueError(f"expected (B, C, H, W) frames, got {tuple(frames.shape)}")
        h = self.conv(frames).flatten(1)
        a = one_hot(actions, self.action_count, frames.dtype)
        return self.norm(self.fc(torch.cat([h, a], dim=1)))


class Projector(nn.Module):
    """Representation -> embedding used only by the representation loss."""

    def __init__(self, repr_dim: int = 512, hidden: int = 2048, embedding_dim: int = 2048):
        super().__init__()
        self.net = mlp(repr_dim, hidden, embedding_dim, hidden_layers=2)

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        return self.net(y)


class Predictor(nn.Module):
    """Predict the next embedding from the current embedding and action."""

    def __init__(self, embedding_dim: int = 2048, hidden: int = 2048, action_count: int = 3):
        super().__init__()
        self.action_count = action_count
        self.net = mlp(embedding_dim + action_count, hidden, embedding_dim, hidden_layers=2)

    def forward(self, z: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
        a = one_hot(action, self.action_count, z.dtype)
        return self.net(torch.cat([z, a], dim=1))


def vc_loss(embeddings: torch.Tensor, cfg: ReprLossConfig) -> torch.Tensor:
    """Variance hinge plus squared off-diagonal covariance of an N x D batch.

    Covariance uses centered columns with denominator N - 1. In
    sample-contrastive mode the same formula is applied to the transpose.
    """
    z = embeddings.t() if cfg.sample_contrastive else embeddings
    n, d = z.shape
    if n < 2:
        raise ValueError("need at least two rows to estimate covariance")
    centered = z - z.mean(dim=0)
    cov = centered.t() @ centered / (n - 1)
    diag = torch.diagonal(cov)
    variance_term = torch.relu(1.0 - torch.sqrt(diag + cfg.epsilon)).mean()
    covariance_term = (cov.square().sum() - diag.square().sum()) / d
    return cfg.variance_coef * variance_term + cfg.covariance_coef * covariance_term


def consistency_loss(z_pred: torch.Tensor, z_next: torch.Tensor, cfg: ReprLossConfig) -> torch.Tensor:
    """Scaled mean squared error between predicted and actual next embeddings."""
    d = z_next.shape[1]
    return cfg.consistency_coef / d * (z_pred - z_next).square().sum(dim=1).mean()
