"""Memoryless policy and value function trained on imagined latent rollouts.

The world model generates open-loop trajectories from replayed start
observations: actions are sampled from the policy, successor representations
are the transition means, rewards are decoded from the two-hot head, and
terminals are Bernoulli modes. The policy is updated with an advantage
actor-critic objective on these trajectories using truncated lambda-returns,
percentile-normalized advantages, an entropy bonus, and a slow-moving target
critic that provides additional regression targets.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .dynamics import TwoHotSpec, twohot_cross_entropy, twohot_decode
from .nets import mlp
from .worldmodel import WorldModel


@dataclass(frozen=True)
class AgentConfig:
    discount: float = 0.997
    return_lambda: float = 0.95
    entropy_coef: float = 1e-3
    target_decay: float = 0.98
    target_regularizer_coef: float = 1.0
    return_norm_decay: float = 0.99


@dataclass
class ImaginedRollout:
    """Batched latent trajectories of horizon H.

    ``reps`` holds H+1 representations; ``rewards[t]`` and ``terminals[t]``
    belong to the transition taken at step t. ``mask[t]`` is 1 while the
    imagined episode is still alive when action t is taken.
    """

    reps: torch.Tensor       # (B, H+1, d)
    actions: torch.Tensor    # (B, H) int64
    rewards: torch.Tensor    # (B, H)
    terminals: torch.Tensor  # (B, H)
    mask: torch.Tensor       # (B, H)

    @property
    def horizon(self) -> int:
        return self.actions.shape[1]

    @property
    def continues(self) -> torch.Tensor:
        return 1.0 - self.terminals


class ActorCritic(nn.Module):
    def __init__(
        self,
        repr_dim: int = 512,
        action_count: int = 3,
        hidden: int = 1024,
        hidden_layers: int = 2,
        value_spec: TwoHotSpec = TwoHotSpec(),
    ):
        super().__init__()
        self.action_count = action_count
        self.value_spec = value_spec
        self.actor = mlp(repr_dim, hidden, action_count, hidden_layers)
        self.critic = mlp(repr_dim, hidden, value_spec.bin_count, hidden_layers, zero_init_out=True)
        self.target_critic = mlp(repr_dim, hidden, value_spec.bin_count, hidden_layers)
        self.target_critic.load_state_dict(self.critic.state_dict())
        for p in self.target_critic.parameters():
            p.requires_grad_(False)

    def value(self, y: torch.Tensor) -> torch.Tensor:
        return twohot_decode(self.critic(y), self.value_spec)


def update_target_critic(ac: ActorCritic, decay: float = 0.98) -> None:
    """target <- decay * target + (1 - decay) * online, parameter-wise."""
    with torch.no_grad():
        for tp, op in zip(ac.target_critic.parameters(), ac.critic.parameters()):
            tp.lerp_(op, 1.0 - decay)


def act(
    ac: ActorCritic,
    y: torch.Tensor,
    temperature: float,
    rng: torch.Generator,
    random_action_prob: float = 0.0,
) -> torch.Tensor:
    """Sample actions from softmax(logits / temperature), replaced by a
    uniform action with probability ``random_action_prob``."""
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    with torch.no_grad():
        logits = ac.actor(y)
        probs = torch.softmax(logits / temperature, dim=-1)
        actions = torch.multinomial(probs, 1, generator=rng).squeeze(-1)
        if random_action_prob > 0:
            replace = torch.rand(actions.shape, generator=rng) < random_action_prob
            uniform = torch.randint(0, ac.action_count, actions.shape, generator=rng)
            actions = torch.where(replace, uniform, actions)
    return actions


def imagine(
    wm: WorldModel,
    ac: ActorCritic,
    obs: torch.Tensor,
    obs_actions: torch.Tensor,
    horizon: int,
    rng: torch.Generator,
) -> ImaginedRollout:
    """Roll the world model forward open-loop under the current policy.

    Runs without gradients; representations are constants for the policy
    update, so no gradient ever reaches world-model parameters.
    """
    with torch.no_grad():
        y = wm.encode(obs, obs_actions)
        reps = [y]
        actions, rewards, terminals = [], [], []
        for _ in range(horizon):
            a = act(ac, y, temperature=1.0, rng=rng)
            y_next = wm.transition(y, a)
            reward = wm.reward_head.decode(wm.reward_head(y, a, y_next))
            terminal = wm.terminal_head.mode(wm.terminal_head(y, a, y_next))
            reps.append(y_next)
            actions.append(a)
            rewards.append(reward)
            terminals.append(terminal)
            y = y_next
        terminals_t = torch.stack(terminals, dim=1)
        alive = torch.cumprod(1.0 - terminals_t, dim=1)
        mask = torch.cat([torch.ones_like(alive[:, :1]), alive[:, :-1]], dim=1)
        return ImaginedRollout(
            reps=torch.stack(reps, dim=1),
            actions=torch.stack(actions, dim=1),
            rewards=torch.stack(rewards, dim=1),
            terminals=terminals_t,
            mask=mask,
        )


def lambda_returns(
    rewards: torch.Tensor,
    values: torch.Tensor,
    continues: torch.Tensor,
    discount: float,
    lam: float,
) -> torch.Tensor:
    """Truncated lambda-returns computed by backward recursion.

    ``values`` has one more step than ``rewards``; the recursion bottoms out
    by bootstrapping with the final value.
    """
    if values.shape[1] != rewards.shape[1] + 1:
        raise ValueError("values must include the bootstrap step")
    horizon = rewards.shape[1]
    out = torch.empty_like(rewards)
    nxt = values[:, -1]
    for t in range(horizon - 1, -1, -1):
        nxt = rewards[:, t] + discount * continues[:, t] * ((1 - lam) * values[:, t + 1] + lam * nxt)
        out[:, t] = nxt
    return out


class ReturnNormalizer:
    """EMA of the 5th-to-95th percentile range of the return batch; the
    advantage divisor is this scale floored at one."""

    def __init__(self, decay: float = 0.99):
        self.decay = decay
        self.ema = 0.0

    def update(self, returns: torch.Tensor, mask: torch.Tensor) -> float:
        flat = returns[mask > 0]
        if flat.numel() == 0:
            return self.scale
        raw = (torch.quantile(flat, 0.95) - torch.quantile(flat, 0.05)).item()
        self.ema = self.decay * self.ema + (1.0 - self.decay) * raw
        return self.scale

    @property
    def scale(self) -> float:
        return max(1.0, self.ema)

    def state_dict(self) -> dict:
        return {"decay": self.decay, "ema": self.ema}

    def load_state_dict(self, state: dict) -> None:
        self.decay = state["decay"]
        self.ema = state["ema"]


def masked_mean(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    denom = mask.sum().clamp(min=1.0)
    return (x * mask).sum() / denom


def actor_critic_update(
    ac: ActorCritic,
    rollout: ImaginedRollout,
    normalizer: ReturnNormalizer,
    cfg: AgentConfig,
) -> tuple[torch.Tensor, torch.Tensor, dict]:
    """Compute actor and critic losses on an imagined rollout.

    Returns loss tensors (the caller owns backward/step) plus a stats dict.
    """
    b, hp1, d = rollout.reps.shape
    h = rollout.horizon
    flat = rollout.reps.reshape(b * hp1, d)

    critic_logits = ac.critic(flat).reshape(b, hp1, -1)
    values = twohot_decode(critic_logits.detach(), ac.value_spec)
    returns = lambda_returns(rollout.rewards, values, rollout.continues, cfg.discount, cfg.return_lambda)
    scale = normalizer.update(returns.detach(), rollout.mask)
    advantages = (returns - values[:, :h]) / scale

    logits = ac.actor(rollout.reps[:, :h].reshape(b * h, d)).reshape(b, h, -1)
    log_probs = torch.log_softmax(logits, dim=-1)
    taken = log_probs.gather(-1, rollout.actions.unsqueeze(-1)).squeeze(-1)
    entropy = -(log_probs.exp() * log_probs).sum(dim=-1)
    actor_loss = -masked_mean(taken * advantages.detach(), rollout.mask)
    actor_loss = actor_loss - cfg.entropy_coef * masked_mean(entropy, rollout.mask)

    value_ce = twohot_cross_entropy(
        critic_logits[:, :h].reshape(b * h, -1), returns.detach().reshape(b * h), ac.value_spec
    ).reshape(b, h)
    with torch.no_grad():
        target_probs = torch.softmax(ac.target_critic(rollout.reps[:, :h].reshape(b * h, d)), dim=-1)
    target_ce = -(target_probs * torch.log_softmax(critic_logits[:, :h].reshape(b * h, -1), dim=-1)).sum(-1)
    critic_loss = masked_mean(value_ce, rollout.mask)
    critic_loss = critic_loss + cfg.target_regularizer_coef * masked_mean(target_ce.reshape(b, h), rollout.mask)

    stats = {
        "entropy": masked_mean(entropy.detach(), rollout.mask).item(),
        "return_scale": scale,
        "value_mean": values[:, :h].mean().item(),
        "return_mean": masked_mean(returns.detach(), rollout.mask).item(),
        "advantage_std": advantages.detach().std().item(),
        "imagined_reward_mean": masked_mean(rollout.rewards, rollout.mask).item(),
    }
    return actor_loss, critic_loss, stats
