"""Training loop for the teacher/student/antagonist curriculum and its baselines.

One iteration picks one task, trains the student on it (and, in the
teacher-driven modes, the antagonist and teacher as well), and appends one
row to the training log.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .approximator import AdamState
from .checkpoint import Checkpoint, save_checkpoint
from .config import ABLATION_MODES, BASELINE_MODES, RunConfig, RunMode
from .errors import ConfigError, NonFiniteLoss
from .gridnav import Outcome
from .ppo import ActorCritic, LossReport, collect_rollouts, ppo_update, value_from_trajectories
from .taskgen import (RealTaskSet, Task, generate_task_pool, load_tasks,
                      shortest_path_length)
from .teacher import (SOURCE_REAL, RealLatentCache, TaskChoice, TeacherAgent, TeacherState,
                      TeacherTransition, compute_regret, encode_state, select_task,
                      teacher_update, update_state)
from .vae import TaskVae, train_vae

log = logging.getLogger(__name__)

RNG_STREAMS = ("init", "vae", "select", "student", "antagonist", "teacher", "noise")


@dataclass
class LogRow:
    iteration: int
    task_id: str
    source: str
    shortest_path_length: int
    student_return: float
    antagonist_return: Optional[float] = None
    regret: Optional[float] = None
    student_success: float = 0.0
    student_policy_loss: float = 0.0
    student_value_loss: float = 0.0
    antagonist_policy_loss: Optional[float] = None
    antagonist_value_loss: Optional[float] = None
    teacher_policy_loss: Optional[float] = None
    teacher_value_loss: Optional[float] = None
    student_updates: int = 0
    antagonist_updates: int = 0
    teacher_updates: int = 0
    state_updates: int = 0
    state_length: Optional[int] = None
    fallback: int = 0


LOG_COLUMNS = [f.name for f in fields(LogRow)]


class TrainingLog:
    def __init__(self, rows=None):
        self.rows: list[LogRow] = []
        for row in rows or []:
            self.append(row)

    def append(self, row: LogRow):
        if self.rows and row.iteration <= self.rows[-1].iteration:
            raise ValueError("log rows must be strictly increasing in iteration")
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def __getitem__(self, i):
        return self.rows[i]

    def __eq__(self, other):
        return isinstance(other, TrainingLog) and self.rows == other.rows

    def column(self, name):
        return [getattr(r, name) for r in self.rows]


def split_train_test(all_tasks, ratio, seed):
    """Deterministic shuffled split into ``(train, test)`` task sets."""
    tasks = list(all_tasks)
    if not tasks:
        raise ValueError("cannot split an empty task list")
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie in (0, 1)")
    n = len(tasks)
    n_train = int(round(ratio * n))
    if n >= 2:
        n_train = min(max(n_train, 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    train = [tasks[i] for i in order[:n_train]]
    test = [tasks[i] for i in order[n_train:]]
    return RealTaskSet(train, seed), RealTaskSet(test, seed) if test else None


def build_task_pool(config: RunConfig):
    tc = config.tasks
    if tc.dir:
        pool = load_tasks(tc.dir)
        return pool.tasks, pool.split_seed
    tasks = generate_task_pool(tc.pool_size, tc.seed, tc.width, tc.height,
                               (tc.density_min, tc.density_max), tc.smoothing_iterations)
    return tasks, tc.seed


def _rng_state(g):
    return g.bit_generator.state


def _rng_from_state(state):
    g = np.random.Generator(np.random.PCG64())
    g.bit_generator.state = state
    return g


def _report_pair(report: Optional[LossReport]):
    if report is None:
        return None, None
    return report.policy_loss, report.value_loss


class Trainer:
    """Holds every piece of mutable run state so it can be checkpointed."""

    def __init__(self, config: RunConfig, vae: Optional[TaskVae] = None,
                 output_dir=None, pool=None):
        self.config = config.validate()
        self.mode = config.mode
        self.output_dir = Path(output_dir) if output_dir is not None else None
        tasks, split_seed = pool if pool is not None else build_task_pool(config)
        self.train_set, self.test_set = split_train_test(tasks, config.tasks.train_ratio,
                                                         split_seed)
        self._spl = {}
        seeds = np.random.SeedSequence(config.run.master_seed).spawn(len(RNG_STREAMS))
        self.rngs = {name: np.random.default_rng(s) for name, s in zip(RNG_STREAMS, seeds)}

        obs_dim = config.env.obs_dim
        init = self.rngs["init"]
        # one PpoConfig object drives both agents
        self.student = ActorCritic(obs_dim, 2, config.student, init)
        self.antagonist = None
        self.teacher = None
        self.vae = vae
        self.real_cache = None
        if self.mode.uses_teacher:
            self.antagonist = ActorCritic(obs_dim, 2, config.student, init)
            self.teacher = TeacherAgent(config.vae.latent_dim, config.teacher,
                                        config.teacher_ppo, init)
            if self.vae is None:
                self.vae = TaskVae(config.tasks.width, config.tasks.height,
                                   config.vae.latent_dim, config.vae.hidden,
                                   config.vae.kl_weight, rng=init)
                self.vae_pretrained = False
            else:
                self.vae_pretrained = True
        self.teacher_state = TeacherState(config.teacher.history)
        self.segment: list[TeacherTransition] = []
        self.iteration = 0
        self.log = TrainingLog()
        self.manual_order = None
        if self.mode is RunMode.MANUAL_CL:
            self.manual_order = sorted(self.train_set.tasks,
                                       key=lambda t: (self.spl(t), t.id or ""))
        arena = math.hypot(config.tasks.width, config.tasks.height)
        self.return_scale = config.env.c_goal + config.env.c_prog * arena
        # instrumentation, not checkpointed
        self.teacher_inputs: list[np.ndarray] = []
        self.state_entries: list[tuple[np.ndarray, float]] = []

    # ------------------------------------------------------------------ setup

    @property
    def epsilon(self) -> float:
        if self.mode in (RunMode.GCL_NO_REAL, RunMode.STATELESS_TEACHER):
            return 0.0
        return self.config.teacher.epsilon

    def spl(self, task: Task) -> int:
        key = task.id
        if key not in self._spl:
            value = shortest_path_length(task)
            if value is None:
                raise ValueError(f"task {task.id} is unreachable")
            self._spl[key] = value
        return self._spl[key]

    def pretrain(self):
        """Fit the VAE on the training split (skipped if one was supplied)."""
        if not self.mode.uses_teacher:
            return None
        curve = None
        if not self.vae_pretrained:
            vc = self.config.vae
            self.vae, curve = train_vae(self.vae, self.train_set, vc.epochs, self.rngs["vae"],
                                        vc.learning_rate, vc.batch_size, vc.warmup_fraction)
            self.vae_pretrained = True
        self.real_cache = RealLatentCache(self.vae, self.train_set)
        return curve

    # -------------------------------------------------------------- iteration

    def _teacher_input(self):
        if self.mode is RunMode.STATELESS_TEACHER:
            return np.zeros(self.teacher.policy.obs_dim)
        return encode_state(self.teacher_state, self.config.vae.latent_dim, self.return_scale)

    def _pick_baseline_task(self) -> Task:
        train = self.train_set.tasks
        if self.mode is RunMode.BASE_RL:
            return train[int(self.rngs["select"].integers(len(train)))]
        n = len(self.manual_order)
        k = min(n - 1, (self.iteration * n) // self.config.run.iterations)
        return self.manual_order[k]

    def _rollouts(self, agent: ActorCritic, task: Task, stream: str):
        trajs = collect_rollouts(agent.policy, agent.value_net, [task],
                                 self.config.run.episodes_per_task, self.rngs[stream],
                                 self.config.env)
        value, _ = value_from_trajectories(trajs, agent.config.gamma)
        return trajs, value

    def step(self) -> LogRow:
        """Run one iteration and append its log row."""
        if self.mode.uses_teacher and self.real_cache is None:
            self.pretrain()
        t = self.iteration + 1
        cfg = self.config
        if not self.mode.uses_teacher:
            task = self._pick_baseline_task()
            trajs, v_s = self._rollouts(self.student, task, "student")
            s_rep = ppo_update(self.student, trajs, cfg.student, self.rngs["student"])
            row = LogRow(t, task.id, SOURCE_REAL, self.spl(task), v_s,
                         student_success=_success(trajs),
                         student_policy_loss=s_rep.policy_loss,
                         student_value_loss=s_rep.value_loss, student_updates=1)
        else:
            row = self._teacher_iteration(t)
        self.iteration = t
        self.log.append(row)
        every = cfg.run.checkpoint_every
        if self.output_dir is not None and every > 0 and t % every == 0:
            self.save(self.output_dir / "checkpoints" / f"ckpt_{t:06d}.bin")
        return row

    def _teacher_iteration(self, t: int) -> LogRow:
        cfg = self.config
        s_vec = self._teacher_input()
        self.teacher_inputs.append(s_vec.copy())
        choice: TaskChoice = select_task(self.teacher, s_vec, self.epsilon, self.real_cache,
                                         self.vae, self.rngs["select"],
                                         cfg.teacher.max_resamples,
                                         real_fallback=self.mode is not RunMode.GCL_NO_REAL)
        task = choice.task
        s_trajs, v_s = self._rollouts(self.student, task, "student")
        a_trajs, v_a = self._rollouts(self.antagonist, task, "antagonist")
        regret = compute_regret(v_a, v_s)

        latent, perf = choice.latent, v_s
        if self.mode is RunMode.GCL_NO_TASK:
            latent = self.rngs["noise"].standard_normal(cfg.vae.latent_dim)
        elif self.mode is RunMode.GCL_NO_PERFORMANCE:
            perf = float(self.rngs["noise"].random())
        self.teacher_state = update_state(self.teacher_state, latent, perf)
        self.state_entries.append((np.array(latent), perf))

        s_rep = ppo_update(self.student, s_trajs, cfg.student, self.rngs["student"])
        a_rep = ppo_update(self.antagonist, a_trajs, cfg.student, self.rngs["antagonist"])
        self.segment.append(TeacherTransition(s_vec, np.array(choice.latent), choice.log_prob,
                                              regret, self._teacher_input()))
        terminal = len(self.segment) >= cfg.teacher.segment_length
        t_rep = teacher_update(self.teacher, self.segment, self.rngs["teacher"], terminal)
        if terminal:
            self.segment = []

        return LogRow(
            t, task.id, choice.source, self.spl(task), v_s, v_a, regret,
            student_success=_success(s_trajs),
            student_policy_loss=s_rep.policy_loss, student_value_loss=s_rep.value_loss,
            antagonist_policy_loss=a_rep.policy_loss, antagonist_value_loss=a_rep.value_loss,
            teacher_policy_loss=t_rep.policy_loss, teacher_value_loss=t_rep.value_loss,
            student_updates=1, antagonist_updates=1, teacher_updates=1, state_updates=1,
            state_length=len(self.teacher_state), fallback=int(choice.fallback),
        )

    def run(self, iterations: Optional[int] = None, progress=None):
        """Train up to ``iterations`` (default: the configured budget)."""
        target = self.config.run.iterations if iterations is None else iterations
        self.pretrain()
        while self.iteration < target:
            try:
                row = self.step()
            except NonFiniteLoss:
                self._dump_diagnostics()
                raise
            if progress is not None:
                progress(row)
        if self.output_dir is not None:
            from .evaluation import write_training_log
            self.output_dir.mkdir(parents=True, exist_ok=True)
            write_training_log(self.log, self.output_dir / "log.csv")
            self.save(self.output_dir / "checkpoints" / "final.bin")
        return self.student.policy, self.log

    def _dump_diagnostics(self):
        log.error("non-finite loss at iteration %d (mode %s)", self.iteration + 1,
                  self.mode.value)
        if self.output_dir is not None:
            path = self.output_dir / "checkpoints" / f"abort_{self.iteration + 1:06d}.bin"
            self.save(path)
            log.error("state before the failing iteration saved to %s", path)

    # ------------------------------------------------------------- checkpoint

    def _agents(self):
        out = {"student": self.student}
        if self.antagonist is not None:
            out["antagonist"] = self.antagonist
            out["teacher"] = self.teacher
        return out

    def to_checkpoint(self) -> Checkpoint:
        arrays, opt_meta = {}, {}
        for name, agent in self._agents().items():
            arrays[f"{name}.policy"] = agent.policy.params
            arrays[f"{name}.value"] = agent.value_net.params
            for opt_name in ("policy_opt", "value_opt"):
                opt: AdamState = getattr(agent, opt_name)
                arrays[f"{name}.{opt_name}.m"] = opt.m
                arrays[f"{name}.{opt_name}.v"] = opt.v
                opt_meta[f"{name}.{opt_name}"] = {
                    "step": opt.step, "learning_rate": opt.learning_rate,
                    "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps}
        if self.vae is not None:
            arrays["vae"] = self.vae.params
        state_hist = self.teacher_state.entries()
        if state_hist:
            arrays["teacher_state.latents"] = np.stack([z for z, _ in state_hist])
        if self.segment:
            arrays["segment.states"] = np.stack([s.state for s in self.segment])
            arrays["segment.actions"] = np.stack([s.action for s in self.segment])
            arrays["segment.next_states"] = np.stack([s.next_state for s in self.segment])
        meta = {
            "config": self.config.to_dict(),
            "iteration": self.iteration,
            "rng": {k: _rng_state(g) for k, g in self.rngs.items()},
            "optimizers": opt_meta,
            "vae_pretrained": bool(getattr(self, "vae_pretrained", False)),
            "teacher_state_returns": [r for _, r in state_hist],
            "segment": [[s.log_prob, s.reward] for s in self.segment],
            "log": [asdict(r) for r in self.log],
        }
        return Checkpoint(arrays, meta)

    def save(self, path):
        save_checkpoint(self.to_checkpoint(), path)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, output_dir=None, config: RunConfig = None,
                        pool=None) -> "Trainer":
        """Rebuild a trainer; ``config`` may override the stored one (e.g. a longer budget)."""
        meta = ckpt.meta
        stored = RunConfig.from_dict(meta["config"])
        if config is None:
            config = stored
        elif config.mode is not stored.mode:
            raise ConfigError(f"checkpoint was written in mode {stored.run.mode!r}")
        trainer = cls(config, output_dir=output_dir, pool=pool)
        for name, agent in trainer._agents().items():
            agent.policy.params = ckpt.arrays[f"{name}.policy"]
            agent.value_net.params = ckpt.arrays[f"{name}.value"]
            for opt_name in ("policy_opt", "value_opt"):
                om = meta["optimizers"][f"{name}.{opt_name}"]
                setattr(agent, opt_name, AdamState(
                    ckpt.arrays[f"{name}.{opt_name}.m"].copy(),
                    ckpt.arrays[f"{name}.{opt_name}.v"].copy(),
                    om["step"], om["learning_rate"], om["beta1"], om["beta2"], om["eps"]))
        if "vae" in ckpt.arrays and trainer.vae is not None:
            trainer.vae.params = ckpt.arrays["vae"]
            trainer.vae_pretrained = meta.get("vae_pretrained", True)
            if trainer.vae_pretrained:
                trainer.real_cache = RealLatentCache(trainer.vae, trainer.train_set)
        returns = meta["teacher_state_returns"]
        state = TeacherState(config.teacher.history)
        for k, r in enumerate(returns):
            state = update_state(state, ckpt.arrays["teacher_state.latents"][k], r)
        trainer.teacher_state = state
        trainer.segment = [
            TeacherTransition(ckpt.arrays["segment.states"][k].copy(),
                              ckpt.arrays["segment.actions"][k].copy(), lp, rw,
                              ckpt.arrays["segment.next_states"][k].copy())
            for k, (lp, rw) in enumerate(meta["segment"])
        ]
        trainer.rngs = {k: _rng_from_state(s) for k, s in meta["rng"].items()}
        trainer.iteration = meta["iteration"]
        trainer.log = TrainingLog([LogRow(**r) for r in meta["log"]])
        return trainer


def _success(trajs) -> float:
    return float(np.mean([t.outcome is Outcome.REACHED_GOAL for t in trajs]))


def run_gcl(config: RunConfig, **kw):
    if config.mode is not RunMode.GCL:
        raise ConfigError("run_gcl needs run.mode = gcl")
    return Trainer(config, **kw).run()


def run_baseline(config: RunConfig, **kw):
    if config.mode not in BASELINE_MODES:
        raise ConfigError(f"run_baseline needs one of {[m.value for m in BASELINE_MODES]}")
    return Trainer(config, **kw).run()


def run_ablation(config: RunConfig, **kw):
    if config.mode not in ABLATION_MODES:
        raise ConfigError(f"run_ablation needs one of {[m.value for m in ABLATION_MODES]}")
    return Trainer(config, **kw).run()


def run(config: RunConfig, **kw):
    """Dispatch on ``config.run.mode``."""
    mode = config.mode
    if mode is RunMode.GCL:
        return run_gcl(config, **kw)
    if mode in BASELINE_MODES:
        return run_baseline(config, **kw)
    return run_ablation(config, **kw)
