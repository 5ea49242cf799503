"""Inspection tooling: a gradient-isolated decoder, top-k retrieval accuracy,
embedding export with temporal-distance statistics, open-loop imagination
strips, score normalization, and the ablation suite.

The decoder only ever sees detached representations, so training it cannot
change a single world-model parameter; tests enforce this with checksums.
Plots are written as SVG with the underlying data always written as CSV.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from .agent import ActorCritic, act
from .buffer import ReplayBuffer
from .config import Config
from .envs import make_env
from .trainer import Collector, Trainer
from .worldmodel import WorldModel

ABLATIONS = {
    "no_augmentations": {"augment_enabled": False},
    "no_action_stacking": {"action_stack": 1},
    "no_frame_stacking": {"frame_stack": 1},
    "no_temporal_consistency": {"consistency_coef": 0.0},
    "sample_contrastive": {"sample_contrastive": True},
}

SUITES = {
    "catch": ["catch"],
    "delayed-catch": ["delayed-catch:k=2"],
    "full": ["catch", "delayed-catch:k=2"],
}


# --------------------------------------------------------------------- decoder

class Decoder(nn.Module):
    """Transposed-convolution mirror of the encoder: representation to the
    full stacked observation (3m x 64 x 64)."""

    def __init__(self, frame_stack: int = 4, repr_dim: int = 512, channels: tuple[int, ...] = (32, 64, 128, 256)):
        super().__init__()
        self.frame_stack = frame_stack
        spatial = 64 // 2 ** len(channels)
        self.spatial = spatial
        self.top = channels[-1]
        self.fc = nn.Linear(repr_dim, channels[-1] * spatial * spatial)
        layers: list[nn.Module] = []
        rev = list(reversed(channels))
        for c_in, c_out in zip(rev[:-1], rev[1:]):
            layers += [nn.ConvTranspose2d(c_in, c_out, kernel_size=4, stride=2, padding=1), nn.GroupNorm(1, c_out), nn.SiLU()]
        layers.append(nn.ConvTranspose2d(rev[-1], 3 * frame_stack, kernel_size=4, stride=2, padding=1))
        self.deconv = nn.Sequential(*layers)

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        h = self.fc(y).reshape(-1, self.top, self.spatial, self.spatial)
        return self.deconv(h)


def train_decoder(
    wm: WorldModel,
    buffer: ReplayBuffer,
    rng: np.random.Generator,
    steps: int = 2000,
    batch_size: int = 64,
    lr: float = 1e-3,
    holdout_size: int = 256,
    log_every: int = 100,
) -> tuple[Decoder, dict]:
    """Train a pixel decoder on detached representations.

    Returns the decoder and a history dict with train/holdout MSE curves.
    The world model is only used through no-grad encoding.
    """
    decoder = Decoder(
        frame_stack=wm.encoder.conv[0].in_channels // 3,
        repr_dim=wm.repr_dim,
        channels=tuple(m.out_channels for m in wm.encoder.conv if isinstance(m, nn.Conv2d)),
    )
    opt = torch.optim.AdamW(decoder.parameters(), lr=lr)
    rows = buffer.valid_observation_rows()
    hold_rows = rows[rng.integers(0, rows.size, size=min(holdout_size, rows.size))]
    hold_frames, hold_actions = buffer.observations_at(hold_rows)
    hold_obs = torch.from_numpy(hold_frames)
    with torch.no_grad():
        hold_y = wm.encode(hold_obs, torch.from_numpy(hold_actions))

    history: dict = {"step": [], "train_mse": [], "holdout_mse": []}
    for step in range(1, steps + 1):
        pick = rows[rng.integers(0, rows.size, size=batch_size)]
        frames, actions = buffer.observations_at(pick)
        target = torch.from_numpy(frames)
        with torch.no_grad():
            y = wm.encode(target, torch.from_numpy(actions))
        recon = decoder(y.detach())
        loss = (recon - target).square().mean()
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        if step % log_every == 0 or step == steps:
            with torch.no_grad():
                hold_mse = (decoder(hold_y) - hold_obs).square().mean().item()
            history["step"].append(step)
            history["train_mse"].append(loss.item())
            history["holdout_mse"].append(hold_mse)
    return decoder, history


def topk_accuracy(
    decoder: Decoder,
    wm: WorldModel,
    buffer: ReplayBuffer,
    ks: Sequence[int] = (1, 5, 10),
    probe_batch: int = 512,
    rng: Optional[np.random.Generator] = None,
    chunk: int = 1024,
) -> dict[int, float]:
    """Encode-decode probes and test whether each probe's own observation is
    among the k nearest buffer observations by reconstruction MSE.

    Rank counts strictly closer entries, so exact-duplicate observations do
    not penalize the probe.
    """
    rng = rng or np.random.default_rng(0)
    rows = buffer.valid_observation_rows()
    probe_rows_idx = rng.integers(0, rows.size, size=min(probe_batch, rows.size))
    probe_rows = rows[probe_rows_idx]
    frames, actions = buffer.observations_at(probe_rows)
    with torch.no_grad():
        recon = decoder(wm.encode(torch.from_numpy(frames), torch.from_numpy(actions)))
    recon_flat = recon.reshape(recon.shape[0], -1)

    n_probe = recon_flat.shape[0]
    dims = recon_flat.shape[1]
    strictly_closer = np.zeros(n_probe, dtype=np.int64)
    own_dist = np.zeros(n_probe, dtype=np.float64)
    # distance of each probe reconstruction to its own observation
    with torch.no_grad():
        own = torch.from_numpy(frames).reshape(n_probe, -1)
        own_dist[:] = (recon_flat - own).square().mean(dim=1).numpy()
    for lo in range(0, rows.size, chunk):
        batch_rows = rows[lo : lo + chunk]
        bf, _ = buffer.observations_at(batch_rows)
        cand = torch.from_numpy(bf).reshape(len(batch_rows), -1)
        with torch.no_grad():
            # squared-distance expansion; mean over pixels to match own_dist
            d = (
                recon_flat.square().sum(1, keepdim=True)
                - 2.0 * recon_flat @ cand.t()
                + cand.square().sum(1)
            ) / dims
        strictly_closer += (d.numpy() < own_dist[:, None] - 1e-12).sum(axis=1)
    return {int(k): float((strictly_closer < k).mean()) for k in ks}


# ------------------------------------------------------------------- episodes

@dataclass
class EpisodeTrace:
    """Per-step stacked observations and the actions taken from them."""

    obs: np.ndarray          # (T, 3m, 64, 64) float32
    obs_actions: np.ndarray  # (T, n) int64
    actions: np.ndarray      # (T,) action taken at each observation
    rewards: np.ndarray      # (T,)
    episode_return: float


def collect_episode(
    wm: WorldModel,
    ac: ActorCritic,
    config: Config,
    env_seed: int,
    policy_seed: int = 0,
    temperature: Optional[float] = None,
    random_action_prob: Optional[float] = None,
) -> EpisodeTrace:
    """Play one episode with the trained policy and record stacked inputs."""
    env = make_env(config.env_id, seed=env_seed, max_episode_steps=config.max_episode_steps)
    coll = Collector(config.frame_stack, config.action_stack)
    coll.reset(env.reset())
    gen = torch.Generator().manual_seed(policy_seed)
    temperature = config.eval_temperature if temperature is None else temperature
    random_action_prob = config.eval_random_action_prob if random_action_prob is None else random_action_prob

    obs_list, act_hist_list, action_list, reward_list = [], [], [], []
    while not env.terminal:
        frames, actions = coll.observation()
        with torch.no_grad():
            y = wm.encode(torch.from_numpy(frames).unsqueeze(0), torch.from_numpy(actions).unsqueeze(0))
            a = int(act(ac, y, temperature, gen, random_action_prob).item())
        result = env.step(a)
        obs_list.append(frames)
        act_hist_list.append(actions)
        action_list.append(a)
        reward_list.append(result.reward)
        coll.push(result.frame, a, result.reward)
    return EpisodeTrace(
        obs=np.stack(obs_list),
        obs_actions=np.stack(act_hist_list),
        actions=np.asarray(action_list, dtype=np.int64),
        rewards=np.asarray(reward_list, dtype=np.float32),
        episode_return=float(np.sum(reward_list)),
    )


def export_embeddings(wm: WorldModel, trace: EpisodeTrace, csv_path: str) -> dict:
    """Write per-step representations to CSV for external 2-D embedding
    tools, plus consecutive-pair vs random-pair distance statistics.

    Returns the statistics: mean distance between consecutive steps, mean
    distance over all distinct pairs, and their ratio (low ratio means
    temporally consistent representations).
    """
    with torch.no_grad():
        y = wm.encode(torch.from_numpy(trace.obs), torch.from_numpy(trace.obs_actions)).numpy()
    t, d = y.shape
    path = Path(csv_path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["step"] + [f"y{i}" for i in range(d)])
        for i in range(t):
            writer.writerow([i] + [f"{v:.6g}" for v in y[i]])

    consecutive = float(np.linalg.norm(y[1:] - y[:-1], axis=1).mean())
    sq = (y * y).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (y @ y.T)
    iu = np.triu_indices(t, k=1)
    random_pair = float(np.sqrt(np.maximum(d2[iu], 0.0)).mean())
    stats = {
        "episode_length": t,
        "consecutive_mean_distance": consecutive,
        "random_pair_mean_distance": random_pair,
        "ratio": consecutive / random_pair if random_pair > 0 else float("nan"),
    }
    with open(path.with_name(path.stem + "_distances.csv"), "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(list(stats))
        writer.writerow([stats[k] for k in stats])
    return stats


# ------------------------------------------------------------------ open loop

def open_loop_rollout(
    wm: WorldModel,
    start_obs: np.ndarray,
    start_obs_actions: np.ndarray,
    actions: np.ndarray,
) -> torch.Tensor:
    """Representations of an open-loop latent rollout under given actions.

    Returns (steps+1, d): the encoded start plus one transition mean per
    action; nothing is re-encoded along the way.
    """
    with torch.no_grad():
        y = wm.encode(
            torch.from_numpy(start_obs).unsqueeze(0),
            torch.from_numpy(start_obs_actions).unsqueeze(0),
        )
        reps = [y]
        for a in actions:
            y = wm.transition(y, torch.tensor([int(a)]))
            reps.append(y)
    return torch.cat(reps, dim=0)


def open_loop_comparison(
    wm: WorldModel,
    decoder: Decoder,
    trace: EpisodeTrace,
    start: int = 0,
    steps: int = 30,
) -> dict:
    """Compare an open-loop imagined rollout against the real episode.

    Uses the actions actually taken in the episode, decodes each imagined
    representation, and reports per-step decoded-frame MSE against the true
    stacked observations plus representation-norm ratios against encoded
    real states.
    """
    if start + steps >= len(trace.obs):
        raise ValueError("trace too short for the requested rollout")
    actions = trace.actions[start : start + steps]
    reps = open_loop_rollout(wm, trace.obs[start], trace.obs_actions[start], actions)
    with torch.no_grad():
        decoded = decoder(reps)
        true_obs = torch.from_numpy(trace.obs[start : start + steps + 1])
        mse = (decoded - true_obs).square().mean(dim=(1, 2, 3)).numpy()
        real_y = wm.encode(true_obs, torch.from_numpy(trace.obs_actions[start : start + steps + 1]))
        real_norm = float(real_y.norm(dim=1).mean())
        norms = reps.norm(dim=1).numpy()
    return {
        "mse": mse.tolist(),                    # index 0 = reconstruction of the start
        "one_step_mse": float(mse[1]),
        "max_mse": float(mse[1:].max()),
        "rep_norms": norms.tolist(),
        "real_norm_mean": real_norm,
        "max_norm_ratio": float(norms.max() / real_norm),
    }


def imagined_strip(
    wm: WorldModel,
    decoder: Decoder,
    trace: EpisodeTrace,
    path: str,
    start: int = 0,
    steps: int = 30,
    actions: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Render an open-loop imagined sequence as one PNG image strip.

    Each column is a decoded step: the base image is the luminance of the
    newest frame in the decoded stack; pixels that brightened between
    consecutive stacked frames tint red and pixels that darkened tint blue
    (signed frame differences, accumulated over the stack).
    """
    if actions is None:
        actions = trace.actions[start : start + steps]
    reps = open_loop_rollout(wm, trace.obs[start], trace.obs_actions[start], actions[:steps])
    with torch.no_grad():
        decoded = decoder(reps).clamp(0.0, 1.0).numpy()
    tiles = [_difference_tile(frame_stack_image) for frame_stack_image in decoded]
    strip = np.concatenate(tiles, axis=1)
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.imsave(path, strip)
    return strip


def _difference_tile(stacked: np.ndarray) -> np.ndarray:
    """(3m, H, W) stacked decode -> (H, W, 3) grayscale-plus-diff tile."""
    m = stacked.shape[0] // 3
    grays = [stacked[3 * i : 3 * i + 3].mean(axis=0) for i in range(m)]
    base = grays[-1]
    pos = np.zeros_like(base)
    neg = np.zeros_like(base)
    for a, b in zip(grays[:-1], grays[1:]):
        diff = b - a
        pos += np.maximum(diff, 0.0)
        neg += np.maximum(-diff, 0.0)
    tile = np.stack([base + pos, base, base + neg], axis=-1)
    return np.clip(tile, 0.0, 1.0)


# --------------------------------------------------------------- score scaling

def human_normalized(score: float, random_score: float, human_score: float) -> float:
    """(score - random) / (human - random)."""
    denom = human_score - random_score
    if denom == 0:
        raise ZeroDivisionError("human and random scores must differ")
    return (score - random_score) / denom


def random_policy_stats(env_id: str, episodes: int = 10_000, seed: int = 0, max_episode_steps: int = 400) -> dict:
    """Monte-Carlo estimate of the uniform-random policy's return."""
    rng = np.random.default_rng(seed)
    returns = np.zeros(episodes)
    for ep in range(episodes):
        env = make_env(env_id, seed=int(rng.integers(0, 2**62)), max_episode_steps=max_episode_steps)
        env.reset()
        total = 0.0
        while not env.terminal:
            total += env.step(int(rng.integers(0, env.spec.action_count))).reward
        returns[ep] = total
    return {
        "mean": float(returns.mean()),
        "std": float(returns.std()),
        "sem": float(returns.std() / np.sqrt(episodes)),
        "episodes": episodes,
    }


# -------------------------------------------------------------- ablation suite

def ablation_config(base: Config, name: str, env_id: Optional[str] = None, seed: Optional[int] = None) -> Config:
    """Base config with exactly one component toggled (plus env/seed)."""
    if name == "default":
        delta: dict = {}
    elif name in ABLATIONS:
        delta = dict(ABLATIONS[name])
    else:
        raise ValueError(f"unknown ablation {name!r}")
    if env_id is not None:
        delta["env_id"] = env_id
    if seed is not None:
        delta["seed"] = seed
    return base.derive(**delta)


def _run_cell(args: tuple) -> dict:
    cfg_dict, out_dir, threads = args
    import torch as _torch

    _torch.set_num_threads(threads)
    cfg = Config.from_dict(cfg_dict)
    out = Path(out_dir)
    summary_path = out / "summary.json"
    if summary_path.exists():
        return json.loads(summary_path.read_text())
    out.mkdir(parents=True, exist_ok=True)
    art = Trainer(cfg, out_dir=str(out)).train()
    summary = {
        "mean_return": art.final_eval.mean,
        "std_return": art.final_eval.std,
        "episodes": len(art.final_eval.episode_returns),
        "steps": art.steps,
        "early_stopped": art.early_stopped,
    }
    summary_path.write_text(json.dumps(summary))
    return summary


def run_ablation_suite(
    base_config: Config,
    suite: str,
    seeds: Sequence[int],
    out_dir: str,
    jobs: int = 1,
    ablations: Optional[Sequence[str]] = None,
) -> dict:
    """Train default plus each single-component ablation on the suite's
    environments, for every seed, and write raw/summary CSVs and an SVG bar
    plot of max-normalized mean returns."""
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {sorted(SUITES)}")
    names = ["default"] + list(ablations if ablations is not None else ABLATIONS)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    cells = []
    for env_id in SUITES[suite]:
        env_tag = env_id.replace(":", "_").replace("=", "")
        for name in names:
            for seed in seeds:
                cfg = ablation_config(base_config, name, env_id=env_id, seed=seed)
                cell_dir = out / env_tag / name / f"seed{seed}"
                cells.append((env_id, name, seed, cfg, cell_dir))

    job_args = [(cfg.to_dict(), str(cell_dir), 1) for (_, _, _, cfg, cell_dir) in cells]
    if jobs > 1:
        import multiprocessing as mp

        with ProcessPoolExecutor(max_workers=jobs, mp_context=mp.get_context("spawn")) as pool:
            summaries = list(pool.map(_run_cell, job_args))
    else:
        summaries = [_run_cell(a) for a in job_args]

    report: dict = {"suite": suite, "seeds": list(seeds), "envs": {}}
    rows = []
    for (env_id, name, seed, _, _), summary in zip(cells, summaries):
        rows.append({"env": env_id, "ablation": name, "seed": seed, **summary})
    for env_id in SUITES[suite]:
        env_rows = [r for r in rows if r["env"] == env_id]
        per_ablation = {}
        for name in names:
            scores = [r["mean_return"] for r in env_rows if r["ablation"] == name]
            per_ablation[name] = {
                "scores": scores,
                "mean": float(np.mean(scores)),
                "std": float(np.std(scores)),
            }
        top = max(info["mean"] for info in per_ablation.values())
        for name, info in per_ablation.items():
            info["max_normalized"] = info["mean"] / top if top > 0 else float("nan")
            if name != "default":
                info["p_vs_default"] = _one_sided_less(
                    per_ablation[name]["scores"], per_ablation["default"]["scores"]
                )
        report["envs"][env_id] = per_ablation

    _write_ablation_outputs(report, rows, out)
    return report


def _one_sided_less(ablated: list[float], default: list[float]) -> float:
    """Paired one-sided p-value for 'ablated scores are lower'."""
    from scipy import stats

    if len(ablated) != len(default) or len(ablated) < 2:
        return float("nan")
    if np.allclose(ablated, default):
        return 1.0
    return float(stats.ttest_rel(ablated, default, alternative="less").pvalue)


def _write_ablation_outputs(report: dict, rows: list[dict], out: Path) -> None:
    with open(out / "raw_scores.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["env", "ablation", "mean", "std", "max_normalized", "p_vs_default"])
        for env_id, per_ablation in report["envs"].items():
            for name, info in per_ablation.items():
                writer.writerow([
                    env_id, name, f"{info['mean']:.4f}", f"{info['std']:.4f}",
                    f"{info['max_normalized']:.4f}", f"{info.get('p_vs_default', float('nan')):.4g}",
                ])
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    for env_id, per_ablation in report["envs"].items():
        names = list(per_ablation)
        values = [per_ablation[n]["max_normalized"] for n in names]
        fig, ax = plt.subplots(figsize=(7, 3.5))
        ax.bar(range(len(names)), values, color="#4878b0")
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
        ax.set_ylabel("max-normalized return")
        ax.set_title(env_id)
        fig.tight_layout()
        fig.savefig(out / f"ablations_{env_id.replace(':', '_').replace('=', '')}.svg")
        plt.close(fig)


def save_json(data: dict, path: str) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True))
