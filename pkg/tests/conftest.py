import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from groundcl.config import RunConfig  # noqa: E402
from groundcl.taskgen import Task, default_endpoints  # noqa: E402
from oracles import open_arena  # noqa: E402

DATA = Path(__file__).parent / "data"

_ACCEPTANCE: list[str] = []


def record_acceptance(name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    _ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def arena_task():
    start, goal = default_endpoints(16, 16)
    return Task(open_arena(), start, goal, "open")


def small_config(mode="gcl", iterations=8, **overrides):
    cfg = RunConfig()
    cfg.run.mode = mode
    cfg.run.iterations = iterations
    cfg.run.episodes_per_task = 2
    cfg.tasks.pool_size = 24
    cfg.vae.epochs = 5
    cfg.vae.hidden = 32
    cfg.student.hidden = (16, 16)
    cfg.teacher_ppo.hidden = (16, 16)
    cfg.env.max_steps = 40
    for key, value in overrides.items():
        section, name = key.split("__")
        setattr(getattr(cfg, section), name, value)
    return cfg.validate()


@pytest.fixture
def make_config():
    return small_config
