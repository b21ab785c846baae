"""Evaluation metrics and the CSV files a run leaves behind.

Every CSV is UTF-8 with LF line endings and a fixed header. Floats are
written with ``repr`` so the readers here recover them bit-for-bit; an empty
field means "absent".

Headers::

    log.csv          one column per LogRow field, in declaration order
    episodes.csv     task_id,outcome,steps,episode_return,progress,mean_speed
    metrics.csv      task_success,navigation_progress,avg_steps,avg_reward,avg_speed,n_episodes
    difficulty.csv   iteration,shortest_path_length,source,regret,spl_rolling_mean

``avg_steps`` averages successful episodes only. ``avg_speed`` is the mean,
over episodes, of each episode's mean commanded linear velocity in cell
units per step.
"""

from __future__ import annotations

import csv
import os
import typing
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .curriculum import LOG_COLUMNS, LogRow, TrainingLog
from .errors import FormatError
from .gridnav import NavConfig, Outcome, navigation_progress
from .ppo import collect_rollouts
from .taskgen import RealTaskSet

ROLLING_WINDOW = 50
EPISODE_COLUMNS = ["task_id", "outcome", "steps", "episode_return", "progress", "mean_speed"]
METRIC_COLUMNS = ["task_success", "navigation_progress", "avg_steps", "avg_reward",
                  "avg_speed", "n_episodes"]
DIFFICULTY_COLUMNS = ["iteration", "shortest_path_length", "source", "regret",
                      "spl_rolling_mean"]


@dataclass
class EpisodeRecord:
    task_id: str
    outcome: str
    steps: int
    episode_return: float
    progress: float
    mean_speed: float

    @property
    def success(self) -> bool:
        return self.outcome == Outcome.REACHED_GOAL.value


@dataclass
class EvalMetrics:
    task_success: float
    navigation_progress: float
    avg_steps: Optional[float]
    avg_reward: float
    avg_speed: float
    n_episodes: int


@dataclass
class EvalReport:
    metrics: EvalMetrics
    per_task: dict
    episodes: list


def metrics_from_records(records) -> EvalMetrics:
    records = list(records)
    if not records:
        raise ValueError("no episodes to summarize")
    success = np.array([r.success for r in records])
    steps = np.array([r.steps for r in records], dtype=np.float64)
    return EvalMetrics(
        task_success=float(np.mean(success)),
        navigation_progress=float(np.mean([r.progress for r in records])),
        avg_steps=float(np.mean(steps[success])) if success.any() else None,
        avg_reward=float(np.mean([r.episode_return for r in records])),
        avg_speed=float(np.mean([r.mean_speed for r in records])),
        n_episodes=len(records),
    )


def evaluate_policy(policy, test_set, episodes_per_task=1, rng=None,
                    env_config: Optional[NavConfig] = None) -> EvalReport:
    """Run the deterministic policy mean on every task of ``test_set``."""
    tasks = list(test_set.tasks if isinstance(test_set, RealTaskSet) else test_set)
    if not tasks:
        raise ValueError("test set is empty")
    rng = rng if rng is not None else np.random.default_rng(0)
    trajs = collect_rollouts(policy, None, tasks, episodes_per_task, rng, env_config,
                             deterministic=True)
    records = [
        EpisodeRecord(t.task_id, t.outcome.value, len(t), t.episode_return,
                      navigation_progress(t), float(np.mean(t.speeds)))
        for t in trajs
    ]
    per_task = {}
    for task in tasks:
        mine = [r for r in records if r.task_id == task.id]
        per_task[task.id] = metrics_from_records(mine)
    return EvalReport(metrics_from_records(records), per_task, records)


# ---------------------------------------------------------------- CSV plumbing

def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_rows(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    os.replace(tmp, path)


def _read_rows(path, header):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        found = next(reader, None)
        if found != list(header):
            raise FormatError(f"unexpected header {found}", path, 1)
        rows = []
        for lineno, row in enumerate(reader, 2):
            if len(row) != len(header):
                raise FormatError(f"expected {len(header)} fields, got {len(row)}", path, lineno)
            rows.append((lineno, dict(zip(header, row))))
    return rows


def _parser(annotation):
    """Map a resolved field type to a text parser; ``Optional`` accepts the empty string."""
    text = str(annotation)
    optional = "Optional" in text or "None" in text
    if "int" in text:
        base = int
    elif "float" in text:
        base = float
    else:
        base = str
    if optional:
        return lambda s: None if s == "" else base(s)
    return base


def _read_dataclasses(path, cls, header):
    hints = typing.get_type_hints(cls)
    parsers = {name: _parser(hints[name]) for name in header}
    out = []
    for lineno, row in _read_rows(path, header):
        try:
            out.append(cls(**{k: parsers[k](v) for k, v in row.items()}))
        except ValueError as exc:
            raise FormatError(str(exc), path, lineno) from None
    return out


def write_training_log(log: TrainingLog, path):
    _write_rows(path, LOG_COLUMNS, ([getattr(r, c) for c in LOG_COLUMNS] for r in log))


def read_training_log(path) -> TrainingLog:
    return TrainingLog(_read_dataclasses(path, LogRow, LOG_COLUMNS))


def write_episodes(records, path):
    _write_rows(path, EPISODE_COLUMNS, ([getattr(r, c) for c in EPISODE_COLUMNS] for r in records))


def read_episodes(path):
    return _read_dataclasses(path, EpisodeRecord, EPISODE_COLUMNS)


def write_metrics(metrics: EvalMetrics, path):
    _write_rows(path, METRIC_COLUMNS, [[getattr(metrics, c) for c in METRIC_COLUMNS]])


def read_metrics(path) -> EvalMetrics:
    rows = _read_dataclasses(path, EvalMetrics, METRIC_COLUMNS)
    if len(rows) != 1:
        raise FormatError("metrics file must hold exactly one row", path)
    return rows[0]


def rolling_mean(values, window=ROLLING_WINDOW) -> np.ndarray:
    """Trailing mean over up to ``window`` values ending at each position."""
    values = np.asarray(values, dtype=np.float64)
    csum = np.concatenate([[0.0], np.cumsum(values)])
    idx = np.arange(1, values.size + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


def emit_difficulty_series(log: TrainingLog, path, window=ROLLING_WINDOW):
    rows = list(log)
    if not rows:
        raise ValueError("training log is empty")
    spl = rolling_mean([r.shortest_path_length for r in rows], window)
    _write_rows(path, DIFFICULTY_COLUMNS,
                ([r.iteration, r.shortest_path_length, r.source, r.regret, float(m)]
                 for r, m in zip(rows, spl)))
    return Path(path)


def read_difficulty_series(path):
    out = []
    for lineno, row in _read_rows(path, DIFFICULTY_COLUMNS):
        try:
            out.append({
                "iteration": int(row["iteration"]),
                "shortest_path_length": int(row["shortest_path_length"]),
                "source": row["source"],
                "regret": None if row["regret"] == "" else float(row["regret"]),
                "spl_rolling_mean": float(row["spl_rolling_mean"]),
            })
        except ValueError as exc:
            raise FormatError(str(exc), path, lineno) from None
    return out


def format_metrics_table(metrics: EvalMetrics) -> str:
    width = max(len(c) for c in METRIC_COLUMNS)
    lines = []
    for key, value in asdict(metrics).items():
        shown = "n/a" if value is None else (f"{value:.4f}" if isinstance(value, float) else value)
        lines.append(f"{key:<{width}}  {shown}")
    return "\n".join(lines)

