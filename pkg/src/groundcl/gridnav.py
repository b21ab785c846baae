"""Continuous-pose navigation on occupancy grids with ray-cast range sensing.

Positions are in cell units: cell ``(col, row)`` covers
``[col, col+1) x [row, row+1)`` and its center is ``(col + .5, row + .5)``.
Heading 0 points along +x (increasing column), +pi/2 along +y (increasing
row, i.e. toward the bottom of the printed grid).

The core is :class:`VecNavEnv`, which steps a batch of independent episodes
with numpy; :class:`GridNavEnv` is the single-episode view of it.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import EpisodeFinished, InvalidTask
from .taskgen import Task, validate_task


class Outcome(str, enum.Enum):
    RUNNING = "running"
    REACHED_GOAL = "reached_goal"
    COLLIDED = "collided"
    TIMED_OUT = "timed_out"


_OUTCOMES = [Outcome.RUNNING, Outcome.REACHED_GOAL, Outcome.COLLIDED, Outcome.TIMED_OUT]


@dataclass
class NavConfig:
    n_rays: int = 24
    fov_deg: float = 270.0
    r_max: float = 6.0
    max_steps: int = 200
    v_max: float = 1.0
    w_max: float = math.pi / 4
    agent_radius: float = 0.3
    goal_radius: float = 0.7
    c_prog: float = 1.0
    c_goal: float = 10.0
    c_coll: float = 10.0
    c_time: float = 0.01
    heading_noise: float = 0.0

    @property
    def fov(self) -> float:
        return math.radians(self.fov_deg)

    @property
    def obs_dim(self) -> int:
        return self.n_rays + 2

    def ray_offsets(self) -> np.ndarray:
        if self.n_rays == 1:
            return np.zeros(1)
        return np.linspace(-self.fov / 2, self.fov / 2, self.n_rays)


@dataclass
class AgentState:
    x: float
    y: float
    heading: float
    step_count: int = 0


@dataclass
class Action:
    linear_velocity: float
    angular_velocity: float

    def clamped(self, config: NavConfig) -> "Action":
        return Action(
            float(np.clip(self.linear_velocity, 0.0, config.v_max)),
            float(np.clip(self.angular_velocity, -config.w_max, config.w_max)),
        )


@dataclass
class Observation:
    ranges: np.ndarray
    goal_bearing: float
    goal_distance: float

    def as_vector(self, config: NavConfig, arena_diag: float) -> np.ndarray:
        return np.concatenate([
            self.ranges / config.r_max,
            [self.goal_bearing / math.pi, self.goal_distance / arena_diag],
        ])


@dataclass
class StepResult:
    observation: Observation
    reward: float
    done: bool
    outcome: Outcome


def wrap_angle(a):
    """Wrap to [-pi, pi)."""
    return np.mod(np.asarray(a) + np.pi, 2.0 * np.pi) - np.pi


def policy_to_command(raw, config: NavConfig):
    """Map normalized policy outputs in [-1, 1]^2 to (v, w) commands.

    ``-1 -> 0`` and ``+1 -> v_max`` for the linear part, ``w = w_max * a``
    for the angular part; the environment clamps afterwards.
    """
    raw = np.asarray(raw, dtype=np.float64)
    out = np.empty_like(raw)
    out[..., 0] = 0.5 * config.v_max * (raw[..., 0] + 1.0)
    out[..., 1] = config.w_max * raw[..., 1]
    return out


def cell_center(cell) -> tuple[float, float]:
    return cell[0] + 0.5, cell[1] + 0.5


# ---------------------------------------------------------------------------
# vectorized geometry


def raycast_batch(x, y, angles, grids, r_max):
    """Grid DDA ray march.

    ``x, y``: (B,) origins; ``angles``: (B, R) absolute bearings;
    ``grids``: (B, H, W) occupancy. Returns (B, R) distances to the first
    occupied cell boundary (or the arena edge), capped at ``r_max``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    angles = np.asarray(angles, dtype=np.float64)
    b, r = angles.shape
    h, w = grids.shape[1:]
    ox = np.broadcast_to(x[:, None], (b, r))
    oy = np.broadcast_to(y[:, None], (b, r))
    dx = np.cos(angles)
    dy = np.sin(angles)
    cx = np.floor(ox).astype(np.int64)
    cy = np.floor(oy).astype(np.int64)
    step_x = np.where(dx > 0, 1, -1)
    step_y = np.where(dy > 0, 1, -1)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_dx = np.where(dx != 0, 1.0 / np.abs(dx), np.inf)
        inv_dy = np.where(dy != 0, 1.0 / np.abs(dy), np.inf)
        t_max_x = np.where(dx != 0, np.where(dx > 0, cx + 1 - ox, ox - cx) * inv_dx, np.inf)
        t_max_y = np.where(dy != 0, np.where(dy > 0, cy + 1 - oy, oy - cy) * inv_dy, np.inf)
    bidx = np.broadcast_to(np.arange(b)[:, None], (b, r))

    dist = np.full((b, r), float(r_max))
    inside = (cx >= 0) & (cx < w) & (cy >= 0) & (cy < h)
    start_hit = ~inside | grids[bidx, np.clip(cy, 0, h - 1), np.clip(cx, 0, w - 1)]
    dist[start_hit] = 0.0
    alive = ~start_hit
    max_iters = 2 * (int(math.ceil(r_max)) + 2)
    for _ in range(max_iters):
        if not alive.any():
            break
        use_x = t_max_x < t_max_y
        t = np.where(use_x, t_max_x, t_max_y)
        cx = np.where(use_x, cx + step_x, cx)
        cy = np.where(use_x, cy, cy + step_y)
        t_max_x = np.where(use_x, t_max_x + inv_dx, t_max_x)
        t_max_y = np.where(use_x, t_max_y, t_max_y + inv_dy)
        out = (cx < 0) | (cx >= w) | (cy < 0) | (cy >= h)
        hit = out | grids[bidx, np.clip(cy, 0, h - 1), np.clip(cx, 0, w - 1)]
        in_range = t < r_max
        newly = alive & hit & in_range
        dist[newly] = t[newly]
        alive &= ~hit & in_range
    return np.maximum(dist, 1e-6)


_NEIGHBOURS = np.array([(dc, dr) for dr in (-1, 0, 1) for dc in (-1, 0, 1)])


def collides_batch(x, y, grids, radius):
    """True where the disc at (x, y) overlaps an obstacle or leaves the arena."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    b = x.shape[0]
    h, w = grids.shape[1:]
    cols = np.floor(x).astype(np.int64)[:, None] + _NEIGHBOURS[None, :, 0]
    rows = np.floor(y).astype(np.int64)[:, None] + _NEIGHBOURS[None, :, 1]
    px = np.clip(x[:, None], cols, cols + 1)
    py = np.clip(y[:, None], rows, rows + 1)
    d2 = (x[:, None] - px) ** 2 + (y[:, None] - py) ** 2
    out = (cols < 0) | (cols >= w) | (rows < 0) | (rows >= h)
    bidx = np.broadcast_to(np.arange(b)[:, None], cols.shape)
    occ = out | grids[bidx, np.clip(rows, 0, h - 1), np.clip(cols, 0, w - 1)]
    return np.any(occ & (d2 < radius * radius), axis=1)


def raycast(state: AgentState, task: Task, n_rays=24, fov=math.radians(270.0), r_max=6.0):
    """Range readings for one agent pose (``fov`` in radians)."""
    offsets = np.zeros(1) if n_rays == 1 else np.linspace(-fov / 2, fov / 2, n_rays)
    angles = (state.heading + offsets)[None, :]
    return raycast_batch([state.x], [state.y], angles, task.grid[None], r_max)[0]


# ---------------------------------------------------------------------------
# environments


class VecNavEnv:
    """A batch of independent episodes, one task per slot."""

    def __init__(self, tasks: Sequence[Task], config: Optional[NavConfig] = None,
                 check_tasks: bool = True):
        if not tasks:
            raise ValueError("need at least one task")
        self.config = config or NavConfig()
        shapes = {t.grid.shape for t in tasks}
        if len(shapes) != 1:
            raise ValueError("all tasks in a batch must share one grid size")
        if check_tasks:
            for t in tasks:
                report = validate_task(t)
                if not report:
                    raise InvalidTask(f"task {t.id!r}: {', '.join(report.reasons)}")
        self.tasks = list(tasks)
        self.size = len(tasks)
        self.grids = np.stack([t.grid for t in tasks])
        h, w = self.grids.shape[1:]
        self.arena_diag = math.hypot(w, h)
        self.starts = np.array([cell_center(t.start) for t in tasks])
        self.goals = np.array([cell_center(t.goal) for t in tasks])
        self._offsets = self.config.ray_offsets()
        self.x = self.y = self.heading = None
        self.steps = np.zeros(self.size, dtype=np.int64)
        self.outcome = np.zeros(self.size, dtype=np.int8)

    @property
    def done(self):
        return self.outcome != 0

    def goal_distance(self):
        return np.hypot(self.goals[:, 0] - self.x, self.goals[:, 1] - self.y)

    def reset(self, rng=None):
        self.x = self.starts[:, 0].copy()
        self.y = self.starts[:, 1].copy()
        self.heading = wrap_angle(np.arctan2(self.goals[:, 1] - self.y, self.goals[:, 0] - self.x))
        if self.config.heading_noise > 0:
            rng = rng if rng is not None else np.random.default_rng()
            self.heading = wrap_angle(
                self.heading + self.config.heading_noise * rng.standard_normal(self.size))
        self.steps[:] = 0
        self.outcome[:] = 0
        return self.observe()

    def observe_parts(self, idx=None):
        idx = np.arange(self.size) if idx is None else idx
        x, y, th = self.x[idx], self.y[idx], self.heading[idx]
        ranges = raycast_batch(x, y, th[:, None] + self._offsets[None, :], self.grids[idx],
                               self.config.r_max)
        gx, gy = self.goals[idx, 0] - x, self.goals[idx, 1] - y
        bearing = wrap_angle(np.arctan2(gy, gx) - th)
        return ranges, bearing, np.hypot(gx, gy)

    def observe(self, idx=None):
        ranges, bearing, dist = self.observe_parts(idx)
        return np.concatenate([
            ranges / self.config.r_max,
            (bearing / math.pi)[:, None],
            (dist / self.arena_diag)[:, None],
        ], axis=1)

    def clamp_actions(self, actions):
        actions = np.asarray(actions, dtype=np.float64)
        v = np.clip(actions[:, 0], 0.0, self.config.v_max)
        w = np.clip(actions[:, 1], -self.config.w_max, self.config.w_max)
        return v, w

    def step(self, actions, idx=None):
        """Advance the slots in ``idx`` (default: all running) by one step.

        ``actions`` rows align with ``idx`` and are clamped here. Returns
        ``(obs, rewards, dones, outcome_codes, linear_velocity)`` for ``idx``.
        """
        cfg = self.config
        idx = np.flatnonzero(~self.done) if idx is None else np.asarray(idx)
        if idx.size == 0 or np.any(self.done[idx]):
            raise EpisodeFinished("step() called on a finished episode")
        v, w = self.clamp_actions(actions)
        prev_d = np.hypot(self.goals[idx, 0] - self.x[idx], self.goals[idx, 1] - self.y[idx])
        th = self.heading[idx]
        nx = self.x[idx] + v * np.cos(th)
        ny = self.y[idx] + v * np.sin(th)
        self.x[idx] = nx
        self.y[idx] = ny
        self.heading[idx] = wrap_angle(th + w)
        self.steps[idx] += 1
        new_d = np.hypot(self.goals[idx, 0] - nx, self.goals[idx, 1] - ny)
        # entering the goal radius ends the episode before the wall check
        reached = new_d < cfg.goal_radius
        collided = ~reached & collides_batch(nx, ny, self.grids[idx], cfg.agent_radius)
        timed_out = ~collided & ~reached & (self.steps[idx] >= cfg.max_steps)
        code = np.where(collided, 2, np.where(reached, 1, np.where(timed_out, 3, 0))).astype(np.int8)
        self.outcome[idx] = code
        reward = (cfg.c_prog * (prev_d - new_d) + cfg.c_goal * reached
                  - cfg.c_coll * collided - cfg.c_time)
        return self.observe(idx), reward, code != 0, code, v


class GridNavEnv:
    """Single-episode environment."""

    def __init__(self, task: Task, config: Optional[NavConfig] = None):
        self.task = task
        self.config = config or NavConfig()
        self._vec = None

    def reset(self, rng_seed=None) -> Observation:
        report = validate_task(self.task)
        if not report:
            raise InvalidTask(", ".join(report.reasons))
        self._vec = VecNavEnv([self.task], self.config, check_tasks=False)
        self._vec.reset(np.random.default_rng(rng_seed))
        return self._observation()

    @property
    def state(self) -> AgentState:
        v = self._vec
        return AgentState(float(v.x[0]), float(v.y[0]), float(v.heading[0]), int(v.steps[0]))

    def _observation(self) -> Observation:
        ranges, bearing, dist = self._vec.observe_parts(np.array([0]))
        return Observation(ranges[0], float(bearing[0]), float(dist[0]))

    def observation_vector(self) -> np.ndarray:
        return self._vec.observe(np.array([0]))[0]

    def step(self, action: Action) -> StepResult:
        if self._vec is None:
            raise EpisodeFinished("reset() must be called before step()")
        if self._vec.done[0]:
            raise EpisodeFinished("episode already finished")
        _, reward, done, code, _ = self._vec.step(
            np.array([[action.linear_velocity, action.angular_velocity]]), np.array([0]))
        return StepResult(self._observation(), float(reward[0]), bool(done[0]), _OUTCOMES[code[0]])


def outcome_from_code(code) -> Outcome:
    return _OUTCOMES[int(code)]


def navigation_progress(trajectory, task: Optional[Task] = None) -> float:
    """Fraction of the initial goal distance covered, clamped to [0, 1].

    ``trajectory`` needs ``goal_distances`` (initial first) and ``outcome``.
    """
    if Outcome(trajectory.outcome) is Outcome.REACHED_GOAL:
        return 1.0
    d = np.asarray(trajectory.goal_distances, dtype=np.float64)
    if d.size == 0:
        raise ValueError("empty trajectory")
    if d[0] <= 0:
        return 1.0
    return float(np.clip(1.0 - d[-1] / d[0], 0.0, 1.0))
