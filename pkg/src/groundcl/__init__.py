"""Curriculum learning for grid navigation with a VAE-grounded teacher."""

from .config import RunConfig, RunMode, load_config, parse_config
from .curriculum import Trainer, TrainingLog, run, run_ablation, run_baseline, run_gcl, split_train_test
from .evaluation import EvalMetrics, evaluate_policy
from .taskgen import RealTaskSet, Task, generate_task, generate_task_pool, shortest_path_length

__version__ = "0.1.0"

__all__ = [
    "EvalMetrics", "RealTaskSet", "RunConfig", "RunMode", "Task", "Trainer", "TrainingLog",
    "evaluate_policy", "generate_task", "generate_task_pool", "load_config", "parse_config",
    "run", "run_ablation", "run_baseline", "run_gcl", "shortest_path_length", "split_train_test",
]
