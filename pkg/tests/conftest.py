import numpy as np
import pytest
import torch

torch.set_num_threads(2)

ACTIONS = 3


@pytest.fixture
def tiny_config():
    """Config with toy-width networks for fast tests."""
    from reverie import Config

    return Config(
        frame_stack=2,
        action_stack=2,
        representation_dim=32,
        embedding_dim=24,
        projector_hidden=24,
        encoder_channels="8,8,8,8",
        transition_hidden=16,
        transition_layers=2,
        head_hidden=16,
        head_layers=2,
        reward_bins=15,
        ac_hidden=16,
        max_episode_steps=60,
        env_steps=400,
        initial_random_steps=100,
        wm_batch_size=8,
        imagination_batch_size=8,
        imagination_horizon=4,
        wm_warmup_updates=20,
        eval_episodes=2,
        eval_interval=0,
        log_interval=50,
    )


def random_batch(cfg, batch_size=6, seed=0, dtype=torch.float32):
    """Synthetic transition batch matching a config's shapes."""
    from reverie import Batch

    g = torch.Generator().manual_seed(seed)
    c = 3 * cfg.frame_stack
    return Batch(
        obs=torch.rand(batch_size, c, 64, 64, generator=g, dtype=dtype),
        obs_actions=torch.randint(0, ACTIONS, (batch_size, cfg.action_stack), generator=g),
        action=torch.randint(0, ACTIONS, (batch_size,), generator=g),
        next_obs=torch.rand(batch_size, c, 64, 64, generator=g, dtype=dtype),
        next_obs_actions=torch.randint(0, ACTIONS, (batch_size, cfg.action_stack), generator=g),
        reward=torch.randn(batch_size, generator=g, dtype=dtype),
        terminal=(torch.rand(batch_size, generator=g) < 0.2).to(dtype),
    )


def fill_buffer(buf, env, episodes, rng=None):
    """Play uniform-random episodes into a replay buffer."""
    rng = rng or np.random.default_rng(0)
    for _ in range(episodes):
        buf.begin_episode(env.reset())
        while not env.terminal:
            a = int(rng.integers(0, env.spec.action_count))
            step = env.step(a)
            buf.append(step.frame, a, step.reward, step.terminal)
    return buf
