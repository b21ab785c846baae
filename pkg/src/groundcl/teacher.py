"""Teacher MDP: history state, epsilon-mixed task selection, regret reward, PPO update."""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import NonFiniteInput
from .ppo import (ActorCritic, LossReport, PpoConfig, Trajectory, compute_gae,
                  normalize_advantages, ppo_update_arrays)
from .taskgen import RealTaskSet, Task
from .vae import TaskVae, decode, encode, encode_batch, grid_to_task, sample_latent

log = logging.getLogger(__name__)

SOURCE_REAL = "real"
SOURCE_GENERATED = "generated"


@dataclass
class TeacherConfig:
    epsilon: float = 0.3
    history: int = 1
    segment_length: int = 16
    max_resamples: int = 10


@dataclass
class TeacherState:
    """Bounded history of ``(latent, student_return)`` pairs, oldest first."""

    capacity: int = 1
    history: deque = field(default_factory=deque)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("history capacity must be >= 1")
        self.history = deque(self.history, maxlen=self.capacity)

    def __len__(self):
        return len(self.history)

    def entries(self):
        return list(self.history)


@dataclass
class TaskChoice:
    task: Task
    latent: np.ndarray
    source: str
    fallback: bool = False
    log_prob: float = 0.0


@dataclass
class RegretRecord:
    task_id: Optional[str]
    v_antagonist: float
    v_student: float
    regret: float
    iteration: int


def state_dim(capacity, latent_dim):
    return capacity * (latent_dim + 1)


def encode_state(state: TeacherState, latent_dim: int, return_scale: float = 1.0) -> np.ndarray:
    vec = np.zeros(state_dim(state.capacity, latent_dim))
    for k, (z, r) in enumerate(state.history):
        off = k * (latent_dim + 1)
        vec[off:off + latent_dim] = z
        vec[off + latent_dim] = r / return_scale
    return vec


def update_state(state: TeacherState, latent, student_return) -> TeacherState:
    student_return = float(student_return)
    if not math.isfinite(student_return):
        raise NonFiniteInput("student return must be finite")
    history = deque(state.history, maxlen=state.capacity)
    history.append((np.array(latent, dtype=np.float64), student_return))
    return TeacherState(state.capacity, history)


def compute_regret(v_antagonist, v_student) -> float:
    if not (math.isfinite(v_antagonist) and math.isfinite(v_student)):
        raise NonFiniteInput(f"regret inputs must be finite: {v_antagonist}, {v_student}")
    return float(v_antagonist) - float(v_student)


class RealLatentCache:
    """Encoder means of the real tasks, computed once against a frozen VAE."""

    def __init__(self, vae: TaskVae, real_set: RealTaskSet):
        self.tasks = list(real_set.tasks)
        self.latents, _ = encode_batch(vae, self.tasks)

    def __len__(self):
        return len(self.tasks)


class TeacherAgent(ActorCritic):
    """Gaussian policy over the latent task space, fed by the encoded history."""

    def __init__(self, latent_dim, config: TeacherConfig, ppo_config: PpoConfig, rng):
        self.latent_dim = latent_dim
        self.teacher_config = config
        super().__init__(state_dim(config.history, latent_dim), latent_dim, ppo_config, rng)


def select_task(teacher: TeacherAgent, state_vector, epsilon, real: RealLatentCache, vae: TaskVae,
                rng, max_resamples=10, real_fallback=True) -> TaskChoice:
    """Real task with probability ``epsilon``, otherwise decode a teacher latent.

    Undecodable (unreachable) latents are resampled; after ``max_resamples``
    further failures a real task is used instead. With ``real_fallback`` off
    the fallback decodes prior draws, and as a last resort the empty arena,
    so no real task is ever handed out.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if len(real) == 0:
        raise ValueError("real task set is empty")
    policy = teacher.policy
    if rng.random() < epsilon:
        i = int(rng.integers(len(real)))
        z = real.latents[i]
        return TaskChoice(real.tasks[i], z.copy(), SOURCE_REAL,
                          log_prob=float(policy.log_prob(state_vector, z)))
    for _ in range(1 + max_resamples):
        z, logp, _ = policy.sample(state_vector, rng)
        task, reachable = decode(vae, z)
        if reachable:
            return TaskChoice(task, z, SOURCE_GENERATED, log_prob=float(logp))
    if not real_fallback:
        return _generated_fallback(policy, state_vector, vae, rng, max_resamples)
    i = int(rng.integers(len(real)))
    log.info("no reachable decode after %d samples; falling back to real task %s",
             1 + max_resamples, real.tasks[i].id)
    z = real.latents[i]
    return TaskChoice(real.tasks[i], z.copy(), SOURCE_REAL, fallback=True,
                      log_prob=float(policy.log_prob(state_vector, z)))


def _generated_fallback(policy, state_vector, vae: TaskVae, rng, attempts) -> TaskChoice:
    for _ in range(1 + attempts):
        z = sample_latent(rng, vae.latent_dim)
        task, reachable = decode(vae, z)
        if reachable:
            break
    else:
        task, _ = grid_to_task(np.zeros((vae.height, vae.width), dtype=bool))
        z = encode(vae, task)[0]
    log.info("no reachable teacher decode; using a generated fallback task")
    return TaskChoice(task, z, SOURCE_GENERATED, fallback=True,
                      log_prob=float(policy.log_prob(state_vector, z)))


@dataclass
class TeacherTransition:
    state: np.ndarray
    action: np.ndarray
    log_prob: float
    reward: float
    next_state: np.ndarray


def teacher_update(teacher: TeacherAgent, transitions, rng, terminal: bool) -> LossReport:
    """PPO on one teacher pseudo-episode with the regret as reward.

    A segment that is not ``terminal`` bootstraps from the critic's value of
    the state after its last transition.
    """
    if not transitions:
        raise ValueError("teacher_update needs at least one transition")
    cfg = teacher.config
    states = np.stack([t.state for t in transitions])
    actions = np.stack([t.action for t in transitions])
    old_logp = np.array([t.log_prob for t in transitions])
    rewards = np.array([t.reward for t in transitions])
    values = teacher.values(states)
    dones = np.zeros(len(transitions), dtype=bool)
    dones[-1] = terminal
    last_value = 0.0 if terminal else float(teacher.values(transitions[-1].next_state))
    segment = Trajectory(states, actions, old_logp, rewards, values, dones, last_value=last_value)
    adv, returns = compute_gae(segment, cfg)
    return ppo_update_arrays(teacher, states, actions, old_logp, normalize_advantages(adv),
                             returns, cfg, rng)
