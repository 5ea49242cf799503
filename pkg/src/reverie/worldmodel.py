"""World model container and its training losses.

One module owns the encoder, projector, predictor, transition, reward head,
and terminal head, so a single optimizer covers all world-model parameters.
The loss computation shares encoder passes between the representation loss
and the dynamics loss:

- the representation loss sees independently augmented observation pairs;
- the transition term sees clean (non-augmented) representations, detached
  so it never influences the encoder;
- the reward and terminal terms condition on the augmented-path
  representations and do backpropagate into the encoder (a switch reroutes
  them to clean, non-detached representations for comparison runs).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .augment import AugmentationSpec, augment_pair
from .buffer import TransitionBatch
from .dynamics import (
    RewardHead,
    TerminalHead,
    TransitionModel,
    TwoHotSpec,
    terminal_bce,
    transition_nll,
    twohot_cross_entropy,
)
from .repr import Encoder, Predictor, Projector, ReprLossConfig, consistency_loss, vc_loss


@dataclass
class Batch:
    """Torch view of a sampled transition batch."""

    obs: torch.Tensor
    obs_actions: torch.Tensor
    action: torch.Tensor
    next_obs: torch.Tensor
    next_obs_actions: torch.Tensor
    reward: torch.Tensor
    terminal: torch.Tensor

    @classmethod
    def from_numpy(cls, tb: TransitionBatch, dtype: torch.dtype = torch.float32) -> "Batch":
        return cls(
            obs=torch.from_numpy(tb.obs).to(dtype),
            obs_actions=torch.from_numpy(tb.obs_actions),
            action=torch.from_numpy(tb.action),
            next_obs=torch.from_numpy(tb.next_obs).to(dtype),
            next_obs_actions=torch.from_numpy(tb.next_obs_actions),
            reward=torch.from_numpy(np.ascontiguousarray(tb.reward)).to(dtype),
            terminal=torch.from_numpy(np.ascontiguousarray(tb.terminal)).to(dtype),
        )


class WorldModel(nn.Module):
    def __init__(
        self,
        frame_stack: int = 4,
        action_stack: int = 4,
        action_count: int = 3,
        repr_dim: int = 512,
        embedding_dim: int = 2048,
        projector_hidden: int = 2048,
        encoder_channels: tuple[int, ...] = (32, 64, 128, 256),
        transition_hidden: int = 1024,
        transition_layers: int = 5,
        head_hidden: int = 1024,
        head_layers: int = 2,
        reward_spec: TwoHotSpec = TwoHotSpec(),
    ):
        super().__init__()
        self.action_count = action_count
        self.repr_dim = repr_dim
        self.encoder = Encoder(frame_stack, action_stack, action_count, repr_dim, encoder_channels)
        self.projector = Projector(repr_dim, projector_hidden, embedding_dim)
        self.predictor = Predictor(embedding_dim, projector_hidden, action_count)
        self.transition = TransitionModel(repr_dim, action_count, transition_hidden, transition_layers)
        self.reward_head = RewardHead(repr_dim, action_count, head_hidden, head_layers, reward_spec)
        self.terminal_head = TerminalHead(repr_dim, action_count, head_hidden, head_layers)

    def encode(self, frames: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
        return self.encoder(frames, actions)


def world_model_losses(
    wm: WorldModel,
    batch: Batch,
    rng: torch.Generator,
    repr_cfg: ReprLossConfig,
    aug_spec: AugmentationSpec,
    heads_use_augmented: bool = True,
    compute_repr: bool = True,
    compute_dyn: bool = True,
    timings: dict | None = None,
) -> tuple[torch.Tensor, dict]:
    """Compute the combined world-model loss and a dict of per-term tensors.

    The parts dict also carries detached intermediates used by monitors and
    tests: embeddings, predictions, and per-feature statistics. When a
    ``timings`` dict is passed, seconds spent augmenting are added to its
    ``augmentation`` key.
    """
    parts: dict = {}
    zero = batch.reward.new_zeros(())
    total = zero

    need_aug = compute_repr or (compute_dyn and heads_use_augmented)
    if need_aug:
        t0 = time.perf_counter()
        obs_aug, next_obs_aug = augment_pair(batch.obs, batch.next_obs, rng, aug_spec)
        if timings is not None:
            timings["augmentation"] = timings.get("augmentation", 0.0) + time.perf_counter() - t0
        y_aug = wm.encoder(obs_aug, batch.obs_actions)
        y_aug_next = wm.encoder(next_obs_aug, batch.next_obs_actions)

    if compute_repr:
        z = wm.projector(y_aug)
        z_next = wm.projector(y_aug_next)
        z_pred = wm.predictor(z, batch.action)
        loss_consistency = consistency_loss(z_pred, z_next, repr_cfg)
        loss_vc = vc_loss(z, repr_cfg)
        loss_vc_next = vc_loss(z_next, repr_cfg)
        loss_repr = loss_consistency + loss_vc + loss_vc_next
        total = total + loss_repr
        parts.update(
            repr=loss_repr,
            consistency=loss_consistency,
            vc=loss_vc,
            vc_next=loss_vc_next,
            z=z.detach(),
            z_next=z_next.detach(),
            z_pred=z_pred.detach(),
            embedding_std=z.detach().std(dim=0).mean(),
        )

    if compute_dyn:
        if heads_use_augmented:
            with torch.no_grad():
                y_clean = wm.encoder(batch.obs, batch.obs_actions)
                y_clean_next = wm.encoder(batch.next_obs, batch.next_obs_actions)
            y_head, y_head_next = y_aug, y_aug_next
        else:
            y_clean = wm.encoder(batch.obs, batch.obs_actions)
            y_clean_next = wm.encoder(batch.next_obs, batch.next_obs_actions)
            y_head, y_head_next = y_clean, y_clean_next
        mu = wm.transition(y_clean.detach(), batch.action)
        loss_transition = transition_nll(mu, y_clean_next.detach()).mean()
        reward_logits = wm.reward_head(y_head, batch.action, y_head_next)
        loss_reward = twohot_cross_entropy(reward_logits, batch.reward, wm.reward_head.spec).mean()
        terminal_logit = wm.terminal_head(y_head, batch.action, y_head_next)
        loss_terminal = terminal_bce(terminal_logit, batch.terminal).mean()
        loss_dyn = loss_transition + loss_reward + loss_terminal
        total = total + loss_dyn
        parts.update(
            dyn=loss_dyn,
            transition=loss_transition,
            reward=loss_reward,
            terminal=loss_terminal,
            y=y_clean.detach(),
            y_next=y_clean_next.detach(),
            mu=mu.detach(),
            repr_std=y_clean.detach().std(dim=0).mean(),
        )

    parts["total"] = total
    return total, parts


def representation_loss(
    wm: WorldModel,
    batch: Batch,
    rng: torch.Generator,
    repr_cfg: ReprLossConfig,
    aug_spec: AugmentationSpec,
) -> tuple[torch.Tensor, dict]:
    return world_model_losses(wm, batch, rng, repr_cfg, aug_spec, compute_dyn=False)


def dynamics_loss(
    wm: WorldModel,
    batch: Batch,
    rng: torch.Generator,
    aug_spec: AugmentationSpec,
    heads_use_augmented: bool = True,
) -> tuple[torch.Tensor, dict]:
    return world_model_losses(
        wm, batch, rng, ReprLossConfig(), aug_spec,
        heads_use_augmented=heads_use_augmented, compute_repr=False,
    )
