"""Feedforward latent world model with self-supervised representations and
an imagination-trained actor-critic, verified on built-in deterministic
pixel games."""

from .agent import (
    ActorCritic,
    AgentConfig,
    ImaginedRollout,
    ReturnNormalizer,
    act,
    actor_critic_update,
    imagine,
    lambda_returns,
    update_target_critic,
)
from .augment import AugmentationSpec, augment_pair, intensity_jitter, random_shift
from .buffer import NotReadyError, ObservationBatch, ReplayBuffer, TransitionBatch
from .config import Config, ConfigError
from .dynamics import (
    RewardHead,
    TerminalHead,
    TransitionModel,
    TwoHotSpec,
    symexp,
    symlog,
    twohot_cross_entropy,
    twohot_decode,
    twohot_encode,
)
from .envs import CatchEnv, DelayedCatchEnv, EnvSpec, EnvStep, make_env
from .repr import Encoder, Predictor, Projector, ReprLossConfig, vc_loss
from .trainer import (
    RunArtifacts,
    ScoreStats,
    Trainer,
    TrainingDiverged,
    evaluate_policy,
    expected_update_counts,
    train,
)
from .worldmodel import Batch, WorldModel, dynamics_loss, representation_loss, world_model_losses

__all__ = [
    "ActorCritic",
    "AgentConfig",
    "AugmentationSpec",
    "Batch",
    "CatchEnv",
    "Config",
    "ConfigError",
    "DelayedCatchEnv",
    "Encoder",
    "EnvSpec",
    "EnvStep",
    "ImaginedRollout",
    "NotReadyError",
    "ObservationBatch",
    "Predictor",
    "Projector",
    "ReplayBuffer",
    "ReprLossConfig",
    "ReturnNormalizer",
    "RewardHead",
    "RunArtifacts",
    "ScoreStats",
    "TerminalHead",
    "Trainer",
    "TrainingDiverged",
    "TransitionBatch",
    "TransitionModel",
    "TwoHotSpec",
    "WorldModel",
    "act",
    "actor_critic_update",
    "augment_pair",
    "dynamics_loss",
    "evaluate_policy",
    "expected_update_counts",
    "imagine",
    "intensity_jitter",
    "lambda_returns",
    "make_env",
    "random_shift",
    "representation_loss",
    "symexp",
    "symlog",
    "train",
    "twohot_cross_entropy",
    "twohot_decode",
    "twohot_encode",
    "update_target_critic",
    "vc_loss",
    "world_model_losses",
]

__version__ = "0.1.0"
