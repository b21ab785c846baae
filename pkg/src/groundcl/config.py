"""Run configuration and its flat ``section.key = value`` text format.

Example::

    # comments start with '#'
    run.mode = gcl
    run.iterations = 1000
    ppo.student.learning_rate = 3e-4
    teacher.epsilon = 0.3
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from typing import Optional

from .errors import ConfigError
from .gridnav import NavConfig
from .ppo import PpoConfig
from .teacher import TeacherConfig
from .vae import VaeConfig


class RunMode(str, enum.Enum):
    GCL = "gcl"
    BASE_RL = "base_rl"
    MANUAL_CL = "manual_cl"
    STATELESS_TEACHER = "stateless_teacher"
    GCL_NO_REAL = "gcl_no_real"
    GCL_NO_TASK = "gcl_no_task"
    GCL_NO_PERFORMANCE = "gcl_no_performance"

    @classmethod
    def parse(cls, value) -> "RunMode":
        try:
            return cls(value)
        except ValueError:
            raise ConfigError(
                f"unknown mode {value!r}; valid modes: {', '.join(valid_modes())}") from None

    @property
    def uses_teacher(self) -> bool:
        return self not in (RunMode.BASE_RL, RunMode.MANUAL_CL)


def valid_modes():
    return [m.value for m in RunMode]


BASELINE_MODES = (RunMode.BASE_RL, RunMode.MANUAL_CL, RunMode.STATELESS_TEACHER)
ABLATION_MODES = (RunMode.GCL_NO_REAL, RunMode.GCL_NO_TASK, RunMode.GCL_NO_PERFORMANCE)


@dataclass
class RunSection:
    mode: str = "gcl"
    iterations: int = 1000
    episodes_per_task: int = 8
    master_seed: int = 0
    output_dir: str = "runs/default"
    checkpoint_every: int = 100
    eval_episodes: int = 1


@dataclass
class TaskPoolConfig:
    width: int = 16
    height: int = 16
    pool_size: int = 300
    density_min: float = 0.3
    density_max: float = 0.6
    smoothing_iterations: int = 2
    seed: int = 0
    train_ratio: float = 0.7
    dir: Optional[str] = None


def _teacher_ppo():
    return PpoConfig(learning_rate=1e-4, ppo_epochs=10, minibatch_size=16, init_log_std=0.0)


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    tasks: TaskPoolConfig = field(default_factory=TaskPoolConfig)
    env: NavConfig = field(default_factory=NavConfig)
    student: PpoConfig = field(default_factory=PpoConfig)
    teacher_ppo: PpoConfig = field(default_factory=_teacher_ppo)
    vae: VaeConfig = field(default_factory=VaeConfig)
    teacher: TeacherConfig = field(default_factory=TeacherConfig)

    @property
    def mode(self) -> RunMode:
        return RunMode.parse(self.run.mode)

    def validate(self) -> "RunConfig":
        RunMode.parse(self.run.mode)
        if self.run.iterations < 1:
            raise ConfigError("run.iterations must be >= 1")
        if self.run.episodes_per_task < 1:
            raise ConfigError("run.episodes_per_task must be >= 1")
        if not 0.0 <= self.teacher.epsilon <= 1.0:
            raise ConfigError("teacher.epsilon must lie in [0, 1]")
        if self.teacher.history < 1 or self.teacher.segment_length < 1:
            raise ConfigError("teacher.history and teacher.segment_length must be >= 1")
        if not 0.0 < self.tasks.train_ratio < 1.0:
            raise ConfigError("tasks.train_ratio must lie in (0, 1)")
        if not 0.0 <= self.tasks.density_min <= self.tasks.density_max <= 1.0:
            raise ConfigError("need 0 <= tasks.density_min <= tasks.density_max <= 1")
        try:
            PpoConfig(**dataclasses.asdict(self.student))
            PpoConfig(**dataclasses.asdict(self.teacher_ppo))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        cfg = cls()
        for section, values in data.items():
            for key, value in values.items():
                _set(cfg, section, key, value, coerce=False)
        return cfg


# config-file prefix -> RunConfig attribute
_SECTIONS = {
    "run": "run",
    "tasks": "tasks",
    "env": "env",
    "ppo.student": "student",
    "ppo.teacher": "teacher_ppo",
    "vae": "vae",
    "teacher": "teacher",
}


def _coerce(raw: str, default, key):
    text = raw.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(p) for p in text.replace(" ", "").split(",") if p)
        if default is None:
            return None if text.lower() in ("", "none", "null") else text
        return text
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key}") from None


def _set(cfg, attr, key, value, coerce=True, full_key=None):
    section = getattr(cfg, attr, None)
    full_key = full_key or f"{attr}.{key}"
    if section is None or not dataclasses.is_dataclass(section):
        raise ConfigError(f"unknown config section in {full_key!r}")
    names = {f.name for f in dataclasses.fields(section)}
    if key not in names:
        raise ConfigError(f"unknown config key {full_key!r}")
    current = getattr(section, key)
    if coerce:
        value = _coerce(value, current, full_key)
    elif isinstance(current, tuple) and isinstance(value, list):
        value = tuple(value)
    setattr(section, key, value)


def parse_config(text: str, path=None) -> RunConfig:
    cfg = RunConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path or '<config>'}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in stripped.split("=", 1))
        prefix, _, name = key.rpartition(".")
        if prefix not in _SECTIONS:
            raise ConfigError(f"{path or '<config>'}:{lineno}: unknown config key {key!r}")
        try:
            _set(cfg, _SECTIONS[prefix], name, value, full_key=key)
        except ConfigError as exc:
            raise ConfigError(f"{path or '<config>'}:{lineno}: {exc}") from None
    return cfg.validate()


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, path)


def format_config(cfg: RunConfig) -> str:
    lines = []
    for prefix, attr in _SECTIONS.items():
        section = getattr(cfg, attr)
        for f in dataclasses.fields(section):
            value = getattr(section, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif value is None:
                value = "none"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{prefix}.{f.name} = {value}")
    return "\n".join(lines) + "\n"
