"""Transition replay buffer with frame and action stacking.

Frames are stored once per environment step as uint8 and stacked windows are
materialized at sample time (converted to float32 in [0, 1]). Rows never mix
episodes: a stacked window is clamped at the episode start, repeating the
first frame and the no-op action to pad missing history (the padding can be
disabled, which instead restricts sampling to rows with a full real window).

Row layout: each episode opens with a start row holding the reset frame and
a zero action/reward, followed by one row per environment step holding the
resulting frame together with the action, reward, and terminal flag that
produced it. When the buffer is full, the oldest episodes are evicted whole.
"""

from __future__ import annotations

import io
import json
from collections import deque
from dataclasses import dataclass

import numpy as np

from .envs import FRAME_SHAPE

DUMP_MAGIC = "reverie-buffer"
DUMP_VERSION = 1


class NotReadyError(RuntimeError):
    """Raised when the buffer does not yet hold enough data to sample."""


@dataclass
class TransitionBatch:
    """Stacked transition batch; frames float32 in [0, 1], channel-major."""

    obs: np.ndarray            # (B, 3*frame_stack, 64, 64)
    obs_actions: np.ndarray    # (B, action_stack) int64
    action: np.ndarray         # (B,) int64
    next_obs: np.ndarray       # (B, 3*frame_stack, 64, 64)
    next_obs_actions: np.ndarray
    reward: np.ndarray         # (B,) float32
    terminal: np.ndarray       # (B,) float32


@dataclass
class ObservationBatch:
    """Stacked observations used to seed imagination."""

    obs: np.ndarray
    obs_actions: np.ndarray


class ReplayBuffer:
    def __init__(
        self,
        capacity: int,
        frame_stack: int = 4,
        action_stack: int = 4,
        pad_episode_start: bool = True,
    ):
        if capacity < 2:
            raise ValueError("capacity must be >= 2")
        if frame_stack < 1 or action_stack < 1:
            raise ValueError("stack sizes must be >= 1")
        self.capacity = capacity
        self.frame_stack = frame_stack
        self.action_stack = action_stack
        self.pad_episode_start = pad_episode_start

        self._frames = np.zeros((capacity, *FRAME_SHAPE), dtype=np.uint8)
        self._actions = np.zeros(capacity, dtype=np.int64)
        self._rewards = np.zeros(capacity, dtype=np.float32)
        self._terminals = np.zeros(capacity, dtype=bool)

        # episodes as (start_abs, length); row at absolute index i lives in
        # slot i % capacity. Absolute indices grow without bound.
        self._episodes: deque[list[int]] = deque()
        self._next_abs = 0
        self._first_abs = 0
        self._episode_open = False

    # ------------------------------------------------------------------ write

    def begin_episode(self, frame: np.ndarray) -> None:
        if self._episode_open:
            raise RuntimeError("previous episode not closed (no terminal appended)")
        self._push_row(frame, 0, 0.0, False, new_episode=True)
        self._episode_open = True

    def append(self, frame: np.ndarray, action: int, reward: float, terminal: bool) -> None:
        if not self._episode_open:
            raise RuntimeError("append() before begin_episode()")
        self._push_row(frame, action, reward, terminal, new_episode=False)
        if terminal:
            self._episode_open = False

    def _push_row(self, frame: np.ndarray, action: int, reward: float, terminal: bool, new_episode: bool) -> None:
        if frame.shape != FRAME_SHAPE or frame.dtype != np.uint8:
            raise ValueError(f"frame must be uint8 {FRAME_SHAPE}")
        while self._next_abs - self._first_abs >= self.capacity:
            self._evict_oldest_episode()
        slot = self._next_abs % self.capacity
        self._frames[slot] = frame
        self._actions[slot] = action
        self._rewards[slot] = reward
        self._terminals[slot] = terminal
        if new_episode:
            self._episodes.append([self._next_abs, 1])
        else:
            self._episodes[-1][1] += 1
        self._next_abs += 1

    def _evict_oldest_episode(self) -> None:
        if len(self._episodes) <= 1 and self._episode_open:
            raise RuntimeError("open episode fills the buffer; increase capacity")
        start, length = self._episodes.popleft()
        self._first_abs = start + length

    # ------------------------------------------------------------------- read

    @property
    def rows(self) -> int:
        return self._next_abs - self._first_abs

    @property
    def steps(self) -> int:
        """Environment steps stored (rows minus episode-start rows)."""
        return self.rows - len(self._episodes)

    def _anchor_rows(self, include_start: bool) -> np.ndarray:
        """Absolute row indices that are valid window endpoints.

        With ``include_start`` the start row itself is a valid observation
        window (used for imagination starts); transitions always exclude it.
        """
        chunks = []
        offset = 0 if include_start else 1
        for start, length in self._episodes:
            lo = start + offset
            if not self.pad_episode_start:
                lo = max(lo, start + self.frame_stack - 1 + offset)
            hi = start + length
            if lo < hi:
                chunks.append(np.arange(lo, hi, dtype=np.int64))
        if not chunks:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate(chunks)

    def _episode_start_of(self, rows_abs: np.ndarray) -> np.ndarray:
        starts = np.array([e[0] for e in self._episodes], dtype=np.int64)
        pos = np.searchsorted(starts, rows_abs, side="right") - 1
        return starts[pos]

    def _window(self, end_abs: np.ndarray, size: int) -> np.ndarray:
        """Row indices (B, size) ending at end_abs, clamped to episode starts."""
        start = self._episode_start_of(end_abs)
        idx = end_abs[:, None] - np.arange(size - 1, -1, -1)[None, :]
        return np.maximum(idx, start[:, None])

    def _stack_obs(self, end_abs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        frame_idx = self._window(end_abs, self.frame_stack) % self.capacity
        action_idx = self._window(end_abs, self.action_stack) % self.capacity
        frames = self._frames[frame_idx]                       # (B, m, 3, H, W)
        b, m = frames.shape[:2]
        frames = frames.reshape(b, m * 3, *FRAME_SHAPE[1:]).astype(np.float32) / 255.0
        actions = self._actions[action_idx]
        return frames, actions

    def sample_transitions(self, batch_size: int, rng: np.random.Generator, min_steps: int = 1) -> TransitionBatch:
        if self.steps < max(min_steps, 1):
            raise NotReadyError(f"buffer holds {self.steps} steps, need {max(min_steps, 1)}")
        anchors = self._anchor_rows(include_start=False)
        if anchors.size == 0:
            raise NotReadyError("no sampleable transition")
        pick = anchors[rng.integers(0, anchors.size, size=batch_size)]
        obs, obs_actions = self._stack_obs(pick - 1)
        next_obs, next_obs_actions = self._stack_obs(pick)
        slots = pick % self.capacity
        return TransitionBatch(
            obs=obs,
            obs_actions=obs_actions,
            action=self._actions[slots].copy(),
            next_obs=next_obs,
            next_obs_actions=next_obs_actions,
            reward=self._rewards[slots].copy(),
            terminal=self._terminals[slots].astype(np.float32),
        )

    def sample_start_observations(self, batch_size: int, rng: np.random.Generator, min_steps: int = 1) -> ObservationBatch:
        if self.steps < max(min_steps, 1):
            raise NotReadyError(f"buffer holds {self.steps} steps, need {max(min_steps, 1)}")
        anchors = self._anchor_rows(include_start=True)
        if anchors.size == 0:
            raise NotReadyError("no sampleable observation")
        pick = anchors[rng.integers(0, anchors.size, size=batch_size)]
        obs, obs_actions = self._stack_obs(pick)
        return ObservationBatch(obs=obs, obs_actions=obs_actions)

    def sampleable_windows(self) -> int:
        """Number of distinct observation windows the sampler can return."""
        return int(self._anchor_rows(include_start=True).size)

    def valid_observation_rows(self) -> np.ndarray:
        """Absolute row indices of every sampleable observation window."""
        return self._anchor_rows(include_start=True)

    def observations_at(self, rows_abs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Materialize stacked observations ending at the given absolute rows."""
        return self._stack_obs(np.asarray(rows_abs, dtype=np.int64))

    # ------------------------------------------------------------ persistence

    def _write(self, f) -> None:
        order = (np.arange(self._first_abs, self._next_abs) % self.capacity).astype(np.int64)
        header = {
            "magic": DUMP_MAGIC,
            "version": DUMP_VERSION,
            "capacity": self.capacity,
            "frame_stack": self.frame_stack,
            "action_stack": self.action_stack,
            "pad_episode_start": self.pad_episode_start,
            "rows": self.rows,
            "frame_shape": list(FRAME_SHAPE),
            "first_abs": self._first_abs,
            "episodes": [list(e) for e in self._episodes],
            "episode_open": self._episode_open,
        }
        f.write((json.dumps(header) + "\n").encode("utf-8"))
        f.write(self._frames[order].tobytes())
        f.write(self._actions[order].tobytes())
        f.write(self._rewards[order].tobytes())
        f.write(self._terminals[order].tobytes())

    @classmethod
    def _read(cls, f) -> "ReplayBuffer":
        header = json.loads(f.readline().decode("utf-8"))
        if header.get("magic") != DUMP_MAGIC:
            raise ValueError("not a replay buffer dump")
        if header["version"] != DUMP_VERSION:
            raise ValueError(f"unsupported dump version {header['version']}")
        buf = cls(
            capacity=header["capacity"],
            frame_stack=header["frame_stack"],
            action_stack=header["action_stack"],
            pad_episode_start=header["pad_episode_start"],
        )
        n = header["rows"]
        frames = np.frombuffer(f.read(n * int(np.prod(FRAME_SHAPE))), dtype=np.uint8)
        buf._frames[:n] = frames.reshape(n, *FRAME_SHAPE)
        buf._actions[:n] = np.frombuffer(f.read(n * 8), dtype=np.int64)
        buf._rewards[:n] = np.frombuffer(f.read(n * 4), dtype=np.float32)
        buf._terminals[:n] = np.frombuffer(f.read(n * 1), dtype=bool)
        first = header["first_abs"]
        buf._episodes = deque([s - first, l] for s, l in header["episodes"])
        buf._first_abs = 0
        buf._next_abs = n
        buf._episode_open = header["episode_open"]
        return buf

    def dump(self, path: str) -> None:
        """Write rows oldest-to-newest as a flat binary file with a JSON header."""
        with open(path, "wb") as f:
            self._write(f)

    @classmethod
    def load(cls, path: str) -> "ReplayBuffer":
        with open(path, "rb") as f:
            return cls._read(f)

    def dumps(self) -> bytes:
        bio = io.BytesIO()
        self._write(bio)
        return bio.getvalue()

    @classmethod
    def loads(cls, data: bytes) -> "ReplayBuffer":
        return cls._read(io.BytesIO(data))
