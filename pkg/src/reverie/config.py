"""Run configuration: every training hyperparameter in one flat, serializable
record, plus factories building the networks it describes.

Config files are flat ``key: value`` text; ``#`` starts a comment. Unknown
keys are rejected so stale or misspelled configs fail loudly. Values are
coerced by the field's type (bools accept true/false).
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass

from .agent import ActorCritic, AgentConfig
from .augment import AugmentationSpec
from .dynamics import TwoHotSpec
from .repr import ReprLossConfig
from .worldmodel import WorldModel


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    # environment / data collection
    env_id: str = "catch"
    seed: int = 0
    max_episode_steps: int = 400
    env_steps: int = 100_000
    initial_random_steps: int = 5000
    buffer_capacity: int = 0              # 0 -> env_steps plus headroom
    frame_resolution: int = 64
    grayscale: bool = False
    terminal_on_life_loss: bool = False   # ALE-adapter option; built-in games have no lives
    frame_stack: int = 4
    action_stack: int = 4
    action_count: int = 3                 # built-in games use 3; adapters may differ

    # augmentation
    augment_enabled: bool = True
    max_shift: int = 3
    intensity_scale: float = 0.05

    # representation model
    representation_dim: int = 512
    embedding_dim: int = 2048
    projector_hidden: int = 2048
    encoder_channels: str = "32,64,128,256"
    consistency_coef: float = 12.5
    variance_coef: float = 25.0
    covariance_coef: float = 1.0
    vc_epsilon: float = 1e-4
    sample_contrastive: bool = False

    # dynamics model
    transition_hidden: int = 1024
    transition_layers: int = 5
    head_hidden: int = 1024
    head_layers: int = 2
    reward_bins: int = 255
    reward_bin_low: float = -20.0
    reward_bin_high: float = 20.0
    dynamics_heads_use_augmented: bool = True

    # agent
    ac_hidden: int = 1024
    ac_layers: int = 2
    discount: float = 0.997
    return_lambda: float = 0.95
    entropy_coef: float = 1e-3
    target_decay: float = 0.98
    target_regularizer_coef: float = 1.0
    return_norm_decay: float = 0.99
    imagination_horizon: int = 10
    imagination_batch_size: int = 3072

    # optimization
    wm_update_interval: int = 2
    policy_update_interval: int = 2
    wm_batch_size: int = 1024
    wm_lr: float = 6e-4
    wm_warmup_updates: int = 5000
    wm_weight_decay: float = 1e-3
    wm_grad_clip: float = 10.0
    ac_lr: float = 2.4e-4
    ac_weight_decay: float = 0.0
    ac_grad_clip: float = 100.0

    # evaluation / collection protocol
    eval_temperature: float = 0.5
    eval_random_action_prob: float = 0.01
    eval_episodes: int = 100
    eval_interval: int = 10_000           # 0 -> final evaluation only
    collect_temperature: float = 1.0
    collect_random_action_prob: float = 0.01

    # run plumbing
    log_interval: int = 100
    checkpoint_interval: int = 0          # 0 -> final checkpoint only
    checkpoint_buffer: bool = True
    early_stop_return: float = math.inf   # stop once an evaluation reaches this

    def __post_init__(self) -> None:
        self.validate()

    # ------------------------------------------------------------- validation

    def validate(self) -> None:
        if self.frame_resolution != 64:
            raise ConfigError("built-in environments render 64x64 frames only")
        if self.grayscale:
            raise ConfigError("grayscale frames are not supported (RGB only)")
        if self.frame_stack < 1 or self.action_stack < 1:
            raise ConfigError("stack sizes must be >= 1")
        if self.wm_update_interval < 1 or self.policy_update_interval < 1:
            raise ConfigError("update intervals must be >= 1")
        if self.env_steps < 1 or self.initial_random_steps < 0:
            raise ConfigError("invalid step counts")
        if self.initial_random_steps >= self.env_steps:
            raise ConfigError("initial_random_steps must be < env_steps")
        if not self.encoder_channels_tuple():
            raise ConfigError("encoder_channels must list at least one width")
        if self.eval_temperature <= 0 or self.collect_temperature <= 0:
            raise ConfigError("temperatures must be > 0")
        if not 0 <= self.eval_random_action_prob <= 1 or not 0 <= self.collect_random_action_prob <= 1:
            raise ConfigError("random action probabilities must be in [0, 1]")
        if self.action_count < 2:
            raise ConfigError("action_count must be >= 2")

    def encoder_channels_tuple(self) -> tuple[int, ...]:
        try:
            return tuple(int(tok) for tok in self.encoder_channels.split(",") if tok.strip())
        except ValueError as exc:
            raise ConfigError(f"bad encoder_channels {self.encoder_channels!r}") from exc

    def effective_buffer_capacity(self) -> int:
        if self.buffer_capacity > 0:
            return self.buffer_capacity
        # one extra row per episode (the reset frame) plus slack
        episodes = self.env_steps // max(self.max_episode_steps, 1) + 2
        return self.env_steps + episodes + self.max_episode_steps

    # ---------------------------------------------------------- serialization

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_text(self) -> str:
        lines = [f"{f.name}: {format_value(getattr(self, f.name))}" for f in dataclasses.fields(self)]
        return "\n".join(lines) + "\n"

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_text())

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        kwargs = {}
        for key, raw in data.items():
            kwargs[key] = coerce(raw, known[key].type, key)
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str) -> "Config":
        data: dict = {}
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if ":" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key: value'")
                key, value = line.split(":", 1)
                key = key.strip()
                if key in data:
                    raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
                data[key] = value.strip()
        return cls.from_dict(data)

    def derive(self, **overrides) -> "Config":
        return dataclasses.replace(self, **overrides)

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:16]

    # -------------------------------------------------------------- factories

    def world_model(self) -> WorldModel:
        return WorldModel(
            frame_stack=self.frame_stack,
            action_stack=self.action_stack,
            action_count=self.action_count,
            repr_dim=self.representation_dim,
            embedding_dim=self.embedding_dim,
            projector_hidden=self.projector_hidden,
            encoder_channels=self.encoder_channels_tuple(),
            transition_hidden=self.transition_hidden,
            transition_layers=self.transition_layers,
            head_hidden=self.head_hidden,
            head_layers=self.head_layers,
            reward_spec=self.reward_spec(),
        )

    def actor_critic(self) -> ActorCritic:
        return ActorCritic(
            repr_dim=self.representation_dim,
            action_count=self.action_count,
            hidden=self.ac_hidden,
            hidden_layers=self.ac_layers,
            value_spec=self.reward_spec(),
        )

    def reward_spec(self) -> TwoHotSpec:
        return TwoHotSpec(self.reward_bins, self.reward_bin_low, self.reward_bin_high)

    def repr_loss_config(self) -> ReprLossConfig:
        return ReprLossConfig(
            consistency_coef=self.consistency_coef,
            variance_coef=self.variance_coef,
            covariance_coef=self.covariance_coef,
            epsilon=self.vc_epsilon,
            sample_contrastive=self.sample_contrastive,
        )

    def augmentation_spec(self) -> AugmentationSpec:
        return AugmentationSpec(
            max_shift=self.max_shift,
            intensity_scale=self.intensity_scale,
            enabled=self.augment_enabled,
        )

    def agent_config(self) -> AgentConfig:
        return AgentConfig(
            discount=self.discount,
            return_lambda=self.return_lambda,
            entropy_coef=self.entropy_coef,
            target_decay=self.target_decay,
            target_regularizer_coef=self.target_regularizer_coef,
            return_norm_decay=self.return_norm_decay,
        )


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def coerce(raw, field_type, key: str):
    """Coerce a raw (usually string) value to a config field type."""
    if not isinstance(raw, str):
        if field_type in ("bool", bool) and not isinstance(raw, bool):
            raise ConfigError(f"{key}: expected a boolean")
        return raw
    text = raw.strip()
    try:
        if field_type in ("bool", bool):
            if text.lower() in ("true", "yes", "1"):
                return True
            if text.lower() in ("false", "no", "0"):
                return False
            raise ValueError(text)
        if field_type in ("int", int):
            return int(text)
        if field_type in ("float", float):
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r} as {field_type}") from exc
