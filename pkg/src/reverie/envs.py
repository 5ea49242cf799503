"""Deterministic pixel environments: Catch and DelayedCatch.

Both games render 3x64x64 RGB frames (uint8, channel-major) and are fully
deterministic given the episode seed and the action sequence.

Catch rules
-----------
- A 3x3 white ball spawns at the top row with a seeded column and a seeded
  horizontal velocity in {-2, -1, +1, +2} pixels/step. It falls 2 pixels/step
  and reflects off the side walls.
- The player controls a 5x3 green paddle at the bottom (rows 60..62) with
  three actions: 0 = no-op, 1 = left, 2 = right, moving 3 pixels/step.
- When the ball reaches the paddle band, the episode scores +1 if the ball
  horizontally overlaps the paddle and -1 otherwise, and the next ball
  spawns. An episode consists of 10 balls; the step resolving the last ball
  is terminal.
- The ball sprite is identical for every velocity, so velocity can only be
  recovered by comparing consecutive frames.

DelayedCatch is Catch with a FIFO action queue of length k: the action
issued at step t moves the paddle at step t+k. The paddle sprite does not
telegraph pending actions, so the queue contents are only recoverable from
the action history.

Step order within ``step(action)``: paddle moves, ball moves (with wall
reflection), then ball-at-paddle resolution. ``reset`` may be called with an
explicit seed; without one, each reset draws the next episode seed from a
sequence derived from ``EnvSpec.seed``.

Adapter note (no emulator binding is shipped): an Atari-style environment
can be plugged in by implementing the same ``reset/step/spec`` surface with
frames resized to 64x64 RGB (no grayscale), terminal on loss of life, and
the usual frame skipping applied before stacking.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

FRAME_SHAPE = (3, 64, 64)

GRID = 64
BALL_SIZE = 3
BALL_FALL = 2
BALL_SPEEDS = (-2, -1, 1, 2)
PADDLE_WIDTH = 5
PADDLE_HEIGHT = 3
PADDLE_TOP = 60
PADDLE_SPEED = 3
BALLS_PER_EPISODE = 10
RESOLVE_ROW = PADDLE_TOP - BALL_SIZE + 1  # ball top row at which the catch is decided

BALL_X_MAX = GRID - BALL_SIZE
PADDLE_X_MAX = GRID - PADDLE_WIDTH

BALL_COLOR = (255, 255, 255)
PADDLE_COLOR = (0, 200, 0)


@dataclass(frozen=True)
class EnvSpec:
    """Static environment description."""

    action_count: int
    max_episode_steps: int
    seed: int

    def __post_init__(self) -> None:
        if self.action_count < 2:
            raise ValueError("action_count must be >= 2")
        if self.max_episode_steps < 1:
            raise ValueError("max_episode_steps must be >= 1")


@dataclass
class EnvStep:
    """One environment transition result."""

    frame: np.ndarray
    reward: float
    terminal: bool


class CatchEnv:
    """Deterministic falling-ball game. See module docstring for rules."""

    def __init__(self, spec: EnvSpec):
        if spec.action_count != 3:
            raise ValueError("Catch uses exactly 3 actions (no-op/left/right)")
        self.spec = spec
        self._episode_index = 0
        self._rng: Optional[np.random.Generator] = None
        self._terminal = True
        self._steps = 0
        self._balls_done = 0
        self._px = 0
        self._bx = 0
        self._by = 0
        self._vx = 0

    def reset(self, seed: Optional[int] = None) -> np.ndarray:
        if seed is None:
            seed = int(np.random.SeedSequence([self.spec.seed, self._episode_index]).generate_state(1, np.uint64)[0])
            self._episode_index += 1
        self._rng = np.random.default_rng(seed)
        self._terminal = False
        self._steps = 0
        self._balls_done = 0
        self._px = (GRID - PADDLE_WIDTH) // 2
        self._spawn_ball()
        return self.render()

    def _spawn_ball(self) -> None:
        assert self._rng is not None
        self._bx = int(self._rng.integers(0, BALL_X_MAX + 1))
        self._vx = int(BALL_SPEEDS[self._rng.integers(0, len(BALL_SPEEDS))])
        self._by = 0

    def step(self, action: int) -> EnvStep:
        if self._terminal:
            raise RuntimeError("step() called on a terminal episode; call reset() first")
        if not 0 <= action < self.spec.action_count:
            raise ValueError(f"invalid action {action}")
        return self._advance(action)

    def _advance(self, action: int) -> EnvStep:
        if action == 1:
            self._px = max(0, self._px - PADDLE_SPEED)
        elif action == 2:
            self._px = min(PADDLE_X_MAX, self._px + PADDLE_SPEED)

        self._bx, self._vx = reflect(self._bx + self._vx, self._vx)
        self._by += BALL_FALL

        reward = 0.0
        if self._by >= RESOLVE_ROW:
            caught = overlaps(self._bx, BALL_SIZE, self._px, PADDLE_WIDTH)
            reward = 1.0 if caught else -1.0
            self._balls_done += 1
            if self._balls_done >= BALLS_PER_EPISODE:
                self._terminal = True
            else:
                self._spawn_ball()

        self._steps += 1
        if self._steps >= self.spec.max_episode_steps:
            self._terminal = True
        return EnvStep(self.render(), reward, self._terminal)

    def render(self) -> np.ndarray:
        frame = np.zeros(FRAME_SHAPE, dtype=np.uint8)
        for c, v in enumerate(PADDLE_COLOR):
            frame[c, PADDLE_TOP : PADDLE_TOP + PADDLE_HEIGHT, self._px : self._px + PADDLE_WIDTH] = v
        if not self._terminal:
            for c, v in enumerate(BALL_COLOR):
                frame[c, self._by : self._by + BALL_SIZE, self._bx : self._bx + BALL_SIZE] = v
        return frame

    @property
    def terminal(self) -> bool:
        return self._terminal

    def get_state(self) -> dict:
        return {
            "episode_index": self._episode_index,
            "rng": None if self._rng is None else self._rng.bit_generator.state,
            "terminal": self._terminal,
            "steps": self._steps,
            "balls_done": self._balls_done,
            "px": self._px,
            "bx": self._bx,
            "by": self._by,
            "vx": self._vx,
        }

    def set_state(self, state: dict) -> None:
        self._episode_index = state["episode_index"]
        if state["rng"] is None:
            self._rng = None
        else:
            self._rng = np.random.default_rng(0)
            self._rng.bit_generator.state = state["rng"]
        self._terminal = state["terminal"]
        self._steps = state["steps"]
        self._balls_done = state["balls_done"]
        self._px = state["px"]
        self._bx = state["bx"]
        self._by = state["by"]
        self._vx = state["vx"]


class DelayedCatchEnv(CatchEnv):
    """Catch with actions taking effect ``delay`` steps after being issued."""

    def __init__(self, spec: EnvSpec, delay: int):
        if not 0 <= delay <= 3:
            raise ValueError("delay must be in 0..3")
        super().__init__(spec)
        self.delay = delay
        self._queue: deque[int] = deque()

    def reset(self, seed: Optional[int] = None) -> np.ndarray:
        frame = super().reset(seed)
        self._queue = deque([0] * self.delay)
        return frame

    def _advance(self, action: int) -> EnvStep:
        self._queue.append(action)
        effective = self._queue.popleft()
        return super()._advance(effective)

    def get_state(self) -> dict:
        state = super().get_state()
        state["queue"] = list(self._queue)
        return state

    def set_state(self, state: dict) -> None:
        super().set_state(state)
        self._queue = deque(state["queue"])


def reflect(x: int, vx: int) -> tuple[int, int]:
    """Reflect ball position off the side walls, flipping velocity."""
    if x < 0:
        return -x, -vx
    if x > BALL_X_MAX:
        return 2 * BALL_X_MAX - x, -vx
    return x, vx


def overlaps(x0: int, w0: int, x1: int, w1: int) -> bool:
    return x0 < x1 + w1 and x1 < x0 + w0


def landing_column(bx: int, by: int, vx: int) -> int:
    """Column of the ball when it reaches the paddle band (exact simulation)."""
    while by < RESOLVE_ROW:
        bx, vx = reflect(bx + vx, vx)
        by += BALL_FALL
    return bx


def scripted_optimal_action(env: CatchEnv) -> int:
    """Privileged-state policy: move the paddle center under the landing column.

    Catch upper bound; uses the true ball velocity, which is invisible in a
    single frame.
    """
    target = landing_column(env._bx, env._by, env._vx) + BALL_SIZE // 2
    center = env._px + PADDLE_WIDTH // 2
    if abs(target - center) <= (PADDLE_WIDTH - BALL_SIZE) // 2:
        return 0
    return 1 if target < center else 2


def make_env(env_id: str, seed: int, max_episode_steps: int = 400) -> CatchEnv:
    """Build a built-in environment from a string id.

    Supported ids: ``catch`` and ``delayed-catch:k=<1|2|3>``.
    """
    spec = EnvSpec(action_count=3, max_episode_steps=max_episode_steps, seed=seed)
    if env_id == "catch":
        return CatchEnv(spec)
    if env_id.startswith("delayed-catch:k="):
        try:
            k = int(env_id.split("=", 1)[1])
        except ValueError as exc:
            raise ValueError(f"malformed env id {env_id!r}") from exc
        return DelayedCatchEnv(spec, delay=k)
    raise ValueError(f"unknown env id {env_id!r}")
