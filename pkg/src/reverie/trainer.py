"""Training harness: interleaved collection, world-model updates, and
imagination-based policy updates, plus the evaluation protocol and
checkpointing.

The loop runs one environment step per iteration. The first
``initial_random_steps`` actions are uniform; afterwards actions are sampled
from the policy (with a small uniform-random fraction). World-model and
policy updates each fire on their own step interval once the random phase
has filled the buffer, with the world model updated first on shared ticks.

All randomness flows through named streams derived from the run seed (env
seeds, collection, batch sampling, augmentation, imagination, evaluation),
so runs with equal configs produce identical metric streams and a restored
checkpoint continues exactly where it left off.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .agent import ActorCritic, ReturnNormalizer, act, actor_critic_update, imagine, update_target_critic
from .buffer import NotReadyError, ReplayBuffer
from .config import Config
from .envs import CatchEnv, make_env
from .nets import parameter_count
from .worldmodel import Batch, WorldModel, world_model_losses

CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Raised when a loss becomes non-finite; carries the diagnostic path."""

    def __init__(self, message: str, dump_path: Optional[str] = None):
        super().__init__(message)
        self.dump_path = dump_path


class CheckpointError(RuntimeError):
    pass


@dataclass
class ScoreStats:
    mean: float
    std: float
    episode_returns: list[float]


@dataclass
class RunArtifacts:
    out_dir: Optional[str]
    steps: int
    final_eval: Optional[ScoreStats]
    metrics_path: Optional[str]
    checkpoint_path: Optional[str]
    early_stopped: bool
    wall: dict


class Collector:
    """Stacking state for the episode currently being played."""

    def __init__(self, frame_stack: int, action_stack: int):
        self.frame_stack = frame_stack
        self.action_stack = action_stack
        self.frames: list[np.ndarray] = []
        self.actions: list[int] = []
        self.episode_return = 0.0
        self.episode_steps = 0

    def reset(self, frame: np.ndarray) -> None:
        self.frames = [frame] * self.frame_stack
        self.actions = [0] * self.action_stack
        self.episode_return = 0.0
        self.episode_steps = 0

    def push(self, frame: np.ndarray, action: int, reward: float) -> None:
        self.frames = (self.frames + [frame])[-self.frame_stack :]
        self.actions = (self.actions + [action])[-self.action_stack :]
        self.episode_return += reward
        self.episode_steps += 1

    def observation(self) -> tuple[np.ndarray, np.ndarray]:
        frames = np.concatenate(self.frames, axis=0).astype(np.float32) / 255.0
        return frames, np.asarray(self.actions, dtype=np.int64)

    def state_dict(self) -> dict:
        return {
            "frames": np.stack(self.frames) if self.frames else None,
            "actions": list(self.actions),
            "episode_return": self.episode_return,
            "episode_steps": self.episode_steps,
        }

    def load_state_dict(self, state: dict) -> None:
        self.frames = [f for f in state["frames"]] if state["frames"] is not None else []
        self.actions = list(state["actions"])
        self.episode_return = state["episode_return"]
        self.episode_steps = state["episode_steps"]


def wm_lr_at(update_index: int, base_lr: float, warmup_updates: int) -> float:
    """Learning rate applied at the given 1-based world-model update."""
    if warmup_updates <= 0:
        return base_lr
    return base_lr * min(1.0, update_index / warmup_updates)


def grad_norm(params) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(p.grad.detach().square().sum())
    return math.sqrt(total)


def expected_update_counts(cfg: Config) -> dict:
    """Closed-form schedule: counts implied by the configured intervals."""
    burn, total = cfg.initial_random_steps, cfg.env_steps
    return {
        "env_steps": total,
        "random_steps": burn,
        "wm_updates": total // cfg.wm_update_interval - burn // cfg.wm_update_interval,
        "policy_updates": total // cfg.policy_update_interval - burn // cfg.policy_update_interval,
    }


class Trainer:
    def __init__(self, config: Config, out_dir: Optional[str] = None):
        self.config = config
        self.out_dir = Path(out_dir) if out_dir is not None else None
        if self.out_dir is not None:
            (self.out_dir / "ckpt").mkdir(parents=True, exist_ok=True)
            (self.out_dir / "analysis").mkdir(parents=True, exist_ok=True)
            config.save(str(self.out_dir / "config"))
        self._metrics_file = None

        seeds = np.random.SeedSequence(config.seed).spawn(8)
        seed_ints = [int(s.generate_state(1, np.uint64)[0]) for s in seeds]
        (init_seed, env_seed, collect_seed, sample_seed,
         start_seed, augment_seed, imagine_seed, eval_seed) = seed_ints

        torch.manual_seed(init_seed)
        self.env: CatchEnv = make_env(config.env_id, seed=env_seed, max_episode_steps=config.max_episode_steps)
        if self.env.spec.action_count != config.action_count:
            raise ValueError("config action_count does not match the environment")
        self.buffer = ReplayBuffer(
            capacity=config.effective_buffer_capacity(),
            frame_stack=config.frame_stack,
            action_stack=config.action_stack,
        )
        self.wm: WorldModel = config.world_model()
        self.ac: ActorCritic = config.actor_critic()
        self.normalizer = ReturnNormalizer(decay=config.return_norm_decay)

        self.wm_opt = torch.optim.AdamW(self.wm.parameters(), lr=config.wm_lr, weight_decay=config.wm_weight_decay)
        self.ac_params = [p for p in self.ac.parameters() if p.requires_grad]
        self.ac_opt = torch.optim.AdamW(self.ac_params, lr=config.ac_lr, weight_decay=config.ac_weight_decay)

        self.np_collect = np.random.default_rng(collect_seed)
        self.np_sample = np.random.default_rng(sample_seed)
        self.np_start = np.random.default_rng(start_seed)
        self.np_eval = np.random.default_rng(eval_seed)
        self.gen_collect = torch.Generator().manual_seed(collect_seed)
        self.gen_augment = torch.Generator().manual_seed(augment_seed)
        self.gen_imagine = torch.Generator().manual_seed(imagine_seed)
        self.gen_eval = torch.Generator().manual_seed(eval_seed)

        self.collector = Collector(config.frame_stack, config.action_stack)
        self.step_index = 0
        self.wm_updates = 0
        self.policy_updates = 0
        self.recent_returns: list[float] = []
        self.episodes_done = 0
        self.wall = {"env": 0.0, "world_model": 0.0, "augmentation": 0.0, "policy": 0.0, "evaluation": 0.0}
        self.metrics_records: list[dict] = []
        self._accum: dict = {}
        self._episode_started = False
        self._last_applied_wm_lr = wm_lr_at(1, config.wm_lr, config.wm_warmup_updates)

    # ----------------------------------------------------------------- logging

    def _metrics_path(self) -> Optional[Path]:
        return None if self.out_dir is None else self.out_dir / "metrics.jsonl"

    def _emit(self, record: dict) -> None:
        self.metrics_records.append(record)
        path = self._metrics_path()
        if path is not None:
            with open(path, "a", encoding="utf-8") as f:
                f.write(json.dumps(record, sort_keys=True) + "\n")

    def _accumulate(self, group: str, values: dict) -> None:
        bucket = self._accum.setdefault(group, {})
        for key, val in values.items():
            s, n = bucket.get(key, (0.0, 0))
            bucket[key] = (s + float(val), n + 1)

    def _flush_log(self, kind: str = "train") -> None:
        record: dict = {"step": self.step_index, "kind": kind}
        for group, bucket in self._accum.items():
            record[group] = {k: s / max(n, 1) for k, (s, n) in bucket.items()}
        record["collect"] = {
            "episodes_done": self.episodes_done,
            "recent_return_mean": float(np.mean(self.recent_returns[-20:])) if self.recent_returns else None,
        }
        record["counts"] = {"wm_updates": self.wm_updates, "policy_updates": self.policy_updates}
        record["wall"] = dict(self.wall)
        self._accum = {}
        self._emit(record)

    # ------------------------------------------------------------- collection

    def _begin_episode(self) -> None:
        frame = self.env.reset()
        self.buffer.begin_episode(frame)
        self.collector.reset(frame)
        self._episode_started = True

    def _policy_action(self) -> int:
        frames, actions = self.collector.observation()
        with torch.no_grad():
            y = self.wm.encode(
                torch.from_numpy(frames).unsqueeze(0),
                torch.from_numpy(actions).unsqueeze(0),
            )
            a = act(
                self.ac, y,
                temperature=self.config.collect_temperature,
                rng=self.gen_collect,
                random_action_prob=self.config.collect_random_action_prob,
            )
        return int(a.item())

    def _collect_step(self) -> None:
        t0 = time.perf_counter()
        if not self._episode_started:
            self._begin_episode()
        if self.step_index <= self.config.initial_random_steps:
            action = int(self.np_collect.integers(0, self.config.action_count))
        else:
            action = self._policy_action()
        result = self.env.step(action)
        self.buffer.append(result.frame, action, result.reward, result.terminal)
        self.collector.push(result.frame, action, result.reward)
        if result.terminal:
            self.recent_returns.append(self.collector.episode_return)
            self.recent_returns = self.recent_returns[-100:]
            self.episodes_done += 1
            self._episode_started = False
        self.wall["env"] += time.perf_counter() - t0

    # ----------------------------------------------------------------- updates

    def _check_finite(self, value: torch.Tensor, what: str, batch=None) -> None:
        if torch.isfinite(value).all():
            return
        dump_path = None
        if self.out_dir is not None:
            diag = self.out_dir / "diagnostics"
            diag.mkdir(exist_ok=True)
            dump_path = str(diag / f"nonfinite_{what}_step{self.step_index}.npz")
            arrays = {}
            if batch is not None:
                arrays = {
                    "obs": batch.obs.numpy(),
                    "obs_actions": batch.obs_actions.numpy(),
                    "action": batch.action.numpy(),
                    "next_obs": batch.next_obs.numpy(),
                    "next_obs_actions": batch.next_obs_actions.numpy(),
                    "reward": batch.reward.numpy(),
                    "terminal": batch.terminal.numpy(),
                }
            np.savez_compressed(dump_path, **arrays)
        raise TrainingDiverged(f"non-finite {what} at step {self.step_index}", dump_path)

    def current_wm_lr(self) -> float:
        return wm_lr_at(self.wm_updates + 1, self.config.wm_lr, self.config.wm_warmup_updates)

    def _world_model_update(self) -> None:
        t0 = time.perf_counter()
        cfg = self.config
        tb = self.buffer.sample_transitions(cfg.wm_batch_size, self.np_sample, min_steps=cfg.initial_random_steps)
        batch = Batch.from_numpy(tb)
        timings: dict = {}
        loss, parts = world_model_losses(
            self.wm, batch, self.gen_augment,
            cfg.repr_loss_config(), cfg.augmentation_spec(),
            heads_use_augmented=cfg.dynamics_heads_use_augmented,
            timings=timings,
        )
        self._check_finite(loss, "world_model_loss", batch)

        lr = self.current_wm_lr()
        for group in self.wm_opt.param_groups:
            group["lr"] = lr
        self._last_applied_wm_lr = lr
        self.wm_opt.zero_grad(set_to_none=True)
        loss.backward()
        pre_norm = float(torch.nn.utils.clip_grad_norm_(self.wm.parameters(), cfg.wm_grad_clip))
        post_norm = grad_norm(self.wm.parameters())
        self.wm_opt.step()
        self.wm_updates += 1

        self.wall["augmentation"] += timings.get("augmentation", 0.0)
        self.wall["world_model"] += time.perf_counter() - t0 - timings.get("augmentation", 0.0)
        self._accumulate("world_model", {
            "loss": parts["total"].item(),
            "repr": parts["repr"].item(),
            "consistency": parts["consistency"].item(),
            "vc": parts["vc"].item(),
            "vc_next": parts["vc_next"].item(),
            "dyn": parts["dyn"].item(),
            "transition": parts["transition"].item(),
            "reward": parts["reward"].item(),
            "terminal": parts["terminal"].item(),
            "embedding_std": parts["embedding_std"].item(),
            "repr_std": parts["repr_std"].item(),
            "grad_norm": pre_norm,
            "grad_norm_post_clip": post_norm,
            "lr": lr,
        })

    def _policy_update(self) -> None:
        t0 = time.perf_counter()
        cfg = self.config
        ob = self.buffer.sample_start_observations(
            cfg.imagination_batch_size, self.np_start, min_steps=cfg.initial_random_steps
        )
        rollout = imagine(
            self.wm, self.ac,
            torch.from_numpy(ob.obs), torch.from_numpy(ob.obs_actions),
            cfg.imagination_horizon, self.gen_imagine,
        )
        actor_loss, critic_loss, stats = actor_critic_update(self.ac, rollout, self.normalizer, cfg.agent_config())
        total = actor_loss + critic_loss
        self._check_finite(total, "policy_loss")
        self.ac_opt.zero_grad(set_to_none=True)
        total.backward()
        pre_norm = float(torch.nn.utils.clip_grad_norm_(self.ac_params, cfg.ac_grad_clip))
        post_norm = grad_norm(self.ac_params)
        self.ac_opt.step()
        update_target_critic(self.ac, cfg.target_decay)
        self.policy_updates += 1

        self.wall["policy"] += time.perf_counter() - t0
        self._accumulate("policy", {
            "actor_loss": actor_loss.item(),
            "critic_loss": critic_loss.item(),
            "grad_norm": pre_norm,
            "grad_norm_post_clip": post_norm,
            **stats,
        })

    # -------------------------------------------------------------- main loop

    def train(self) -> RunArtifacts:
        cfg = self.config
        t_start = time.perf_counter()
        if self.step_index == 0:
            self._emit({
                "step": 0, "kind": "meta",
                "config_hash": cfg.hash(),
                "parameters": {
                    "encoder": parameter_count(self.wm.encoder),
                    "projector": parameter_count(self.wm.projector),
                    "predictor": parameter_count(self.wm.predictor),
                    "transition": parameter_count(self.wm.transition),
                    "reward_head": parameter_count(self.wm.reward_head),
                    "terminal_head": parameter_count(self.wm.terminal_head),
                    "actor": parameter_count(self.ac.actor),
                    "critic": parameter_count(self.ac.critic),
                },
            })

        final_eval: Optional[ScoreStats] = None
        early_stopped = False
        while self.step_index < cfg.env_steps:
            self.step_index += 1
            self._collect_step()
            past_burnin = self.step_index > cfg.initial_random_steps
            if past_burnin and self.step_index % cfg.wm_update_interval == 0:
                self._world_model_update()
            if past_burnin and self.step_index % cfg.policy_update_interval == 0:
                self._policy_update()
            if cfg.log_interval > 0 and self.step_index % cfg.log_interval == 0:
                self._flush_log()
            if cfg.checkpoint_interval > 0 and self.step_index % cfg.checkpoint_interval == 0 and self.out_dir:
                self.save_checkpoint(str(self.out_dir / "ckpt" / f"step{self.step_index}.pt"))
            if (
                cfg.eval_interval > 0
                and self.step_index % cfg.eval_interval == 0
                and past_burnin
                and self.step_index < cfg.env_steps
            ):
                stats = self.evaluate()
                self._emit({
                    "step": self.step_index, "kind": "eval",
                    "eval": {"mean": stats.mean, "std": stats.std, "episodes": len(stats.episode_returns)},
                })
                if stats.mean >= cfg.early_stop_return:
                    final_eval = stats
                    early_stopped = True
                    break

        if final_eval is None:
            final_eval = self.evaluate()
        self._emit({
            "step": self.step_index, "kind": "final_eval",
            "eval": {
                "mean": final_eval.mean, "std": final_eval.std,
                "episodes": len(final_eval.episode_returns),
                "episode_returns": final_eval.episode_returns,
            },
        })
        ckpt_path = None
        if self.out_dir is not None:
            ckpt_path = self.save_checkpoint(str(self.out_dir / "ckpt" / "final.pt"))
        self.wall["total"] = time.perf_counter() - t_start
        return RunArtifacts(
            out_dir=str(self.out_dir) if self.out_dir else None,
            steps=self.step_index,
            final_eval=final_eval,
            metrics_path=str(self._metrics_path()) if self.out_dir else None,
            checkpoint_path=ckpt_path,
            early_stopped=early_stopped,
            wall=dict(self.wall),
        )

    # -------------------------------------------------------------- evaluation

    def evaluate(
        self,
        episodes: Optional[int] = None,
        temperature: Optional[float] = None,
        random_action_prob: Optional[float] = None,
    ) -> ScoreStats:
        cfg = self.config
        t0 = time.perf_counter()
        stats = evaluate_policy(
            self.wm, self.ac,
            env_id=cfg.env_id,
            episodes=episodes if episodes is not None else cfg.eval_episodes,
            temperature=temperature if temperature is not None else cfg.eval_temperature,
            random_action_prob=(
                random_action_prob if random_action_prob is not None else cfg.eval_random_action_prob
            ),
            frame_stack=cfg.frame_stack,
            action_stack=cfg.action_stack,
            max_episode_steps=cfg.max_episode_steps,
            env_seed_rng=self.np_eval,
            rng=self.gen_eval,
        )
        self.wall["evaluation"] += time.perf_counter() - t0
        return stats

    # ------------------------------------------------------------- checkpoints

    def save_checkpoint(self, path: str, include_buffer: Optional[bool] = None) -> str:
        include_buffer = self.config.checkpoint_buffer if include_buffer is None else include_buffer
        state = {
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "config_hash": self.config.hash(),
            "step_index": self.step_index,
            "wm_updates": self.wm_updates,
            "policy_updates": self.policy_updates,
            "episodes_done": self.episodes_done,
            "recent_returns": list(self.recent_returns),
            "wm": self.wm.state_dict(),
            "ac": self.ac.state_dict(),
            "wm_opt": self.wm_opt.state_dict(),
            "ac_opt": self.ac_opt.state_dict(),
            "normalizer": self.normalizer.state_dict(),
            "env_state": self.env.get_state(),
            "collector": self.collector.state_dict(),
            "episode_started": self._episode_started,
            "np_collect": self.np_collect.bit_generator.state,
            "np_sample": self.np_sample.bit_generator.state,
            "np_start": self.np_start.bit_generator.state,
            "np_eval": self.np_eval.bit_generator.state,
            "gen_collect": self.gen_collect.get_state(),
            "gen_augment": self.gen_augment.get_state(),
            "gen_imagine": self.gen_imagine.get_state(),
            "gen_eval": self.gen_eval.get_state(),
            "buffer": self.buffer.dumps() if include_buffer else None,
            "wall": dict(self.wall),
        }
        torch.save(state, path)
        return path

    def load_checkpoint(self, path: str, strict_config: bool = True) -> None:
        state = torch.load(path, map_location="cpu", weights_only=False)
        if state.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {state.get('version')}")
        if strict_config and state["config_hash"] != self.config.hash():
            raise CheckpointError("checkpoint config hash does not match this trainer's config")
        self.step_index = state["step_index"]
        self.wm_updates = state["wm_updates"]
        self.policy_updates = state["policy_updates"]
        self.episodes_done = state["episodes_done"]
        self.recent_returns = list(state["recent_returns"])
        self.wm.load_state_dict(state["wm"])
        self.ac.load_state_dict(state["ac"])
        self.wm_opt.load_state_dict(state["wm_opt"])
        self.ac_opt.load_state_dict(state["ac_opt"])
        self.normalizer.load_state_dict(state["normalizer"])
        self.env.set_state(state["env_state"])
        self.collector.load_state_dict(state["collector"])
        self._episode_started = state["episode_started"]
        self.np_collect.bit_generator.state = state["np_collect"]
        self.np_sample.bit_generator.state = state["np_sample"]
        self.np_start.bit_generator.state = state["np_start"]
        self.np_eval.bit_generator.state = state["np_eval"]
        self.gen_collect.set_state(state["gen_collect"])
        self.gen_augment.set_state(state["gen_augment"])
        self.gen_imagine.set_state(state["gen_imagine"])
        self.gen_eval.set_state(state["gen_eval"])
        self.wall = dict(state["wall"])
        if state["buffer"] is not None:
            self.buffer = ReplayBuffer.loads(state["buffer"])
        else:
            self.buffer = ReplayBuffer(
                capacity=self.config.effective_buffer_capacity(),
                frame_stack=self.config.frame_stack,
                action_stack=self.config.action_stack,
            )

    @classmethod
    def restore(cls, path: str, out_dir: Optional[str] = None, strict_config: bool = True) -> "Trainer":
        state = torch.load(path, map_location="cpu", weights_only=False)
        trainer = cls(Config.from_dict(state["config"]), out_dir=out_dir)
        trainer.load_checkpoint(path, strict_config=strict_config)
        return trainer


def evaluate_policy(
    wm: WorldModel,
    ac: ActorCritic,
    env_id: str,
    episodes: int,
    temperature: float,
    random_action_prob: float,
    frame_stack: int,
    action_stack: int,
    max_episode_steps: int,
    env_seed_rng: np.random.Generator,
    rng: torch.Generator,
    parallel: int = 16,
) -> ScoreStats:
    """Run evaluation episodes with the training-time stacking and no
    augmentation; episodes execute in parallel waves on parameter snapshots."""
    returns: list[float] = []
    remaining = episodes
    while remaining > 0:
        wave = min(parallel, remaining)
        envs = []
        collectors = []
        for _ in range(wave):
            env = make_env(env_id, seed=int(env_seed_rng.integers(0, 2**62)), max_episode_steps=max_episode_steps)
            frame = env.reset()
            coll = Collector(frame_stack, action_stack)
            coll.reset(frame)
            envs.append(env)
            collectors.append(coll)
        active = list(range(wave))
        while active:
            frames, actions = zip(*(collectors[i].observation() for i in active))
            obs = torch.from_numpy(np.stack(frames))
            acts_hist = torch.from_numpy(np.stack(actions))
            with torch.no_grad():
                y = wm.encode(obs, acts_hist)
                chosen = act(ac, y, temperature=temperature, rng=rng, random_action_prob=random_action_prob)
            next_active = []
            for slot, i in enumerate(active):
                a = int(chosen[slot].item())
                result = envs[i].step(a)
                collectors[i].push(result.frame, a, result.reward)
                if result.terminal:
                    returns.append(collectors[i].episode_return)
                else:
                    next_active.append(i)
            active = next_active
        remaining -= wave
    arr = np.asarray(returns, dtype=np.float64)
    return ScoreStats(mean=float(arr.mean()), std=float(arr.std()), episode_returns=[float(r) for r in returns])


def train(config: Config, out_dir: Optional[str] = None) -> RunArtifacts:
    return Trainer(config, out_dir=out_dir).train()


def load_models(path: str) -> tuple[Config, WorldModel, ActorCritic]:
    """Load the config and model parameters from a checkpoint (no trainer)."""
    state = torch.load(path, map_location="cpu", weights_only=False)
    if state.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {state.get('version')}")
    config = Config.from_dict(state["config"])
    wm = config.world_model()
    wm.load_state_dict(state["wm"])
    ac = config.actor_critic()
    ac.load_state_dict(state["ac"])
    wm.eval()
    ac.eval()
    return config, wm, ac


def load_buffer_from_checkpoint(path: str) -> Optional[ReplayBuffer]:
    state = torch.load(path, map_location="cpu", weights_only=False)
    return None if state.get("buffer") is None else ReplayBuffer.loads(state["buffer"])
