"""Occupancy-grid navigation tasks: generation, validation, difficulty, file I/O.

Grids are boolean ``(height, width)`` arrays indexed ``grid[row, col]`` with
``True`` marking an obstacle. Cells are addressed as ``(col, row)`` tuples.
Row 0 is the top of the arena; the start sits near the bottom edge and the
goal near the top edge.
"""

from __future__ import annotations

import os
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import FormatError, GenerationFailed

Cell = tuple[int, int]

MAX_GENERATION_RETRIES = 100
MANIFEST_NAME = "manifest.txt"
TASK_SUFFIX = ".task"


@dataclass(eq=False)
class Task:
    grid: np.ndarray
    start: Cell
    goal: Cell
    id: Optional[str] = None

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=bool)
        self.start = (int(self.start[0]), int(self.start[1]))
        self.goal = (int(self.goal[0]), int(self.goal[1]))

    @property
    def width(self) -> int:
        return self.grid.shape[1]

    @property
    def height(self) -> int:
        return self.grid.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Task):
            return NotImplemented
        return (
            self.start == other.start
            and self.goal == other.goal
            and self.id == other.id
            and self.grid.shape == other.grid.shape
            and bool(np.array_equal(self.grid, other.grid))
        )

    def with_id(self, task_id: Optional[str]) -> "Task":
        return Task(self.grid.copy(), self.start, self.goal, task_id)


@dataclass
class GenerationParams:
    width: int = 16
    height: int = 16
    obstacle_density: float = 0.25
    smoothing_iterations: int = 1
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.obstacle_density <= 1.0:
            raise ValueError(f"obstacle_density must be in [0, 1], got {self.obstacle_density}")
        if self.smoothing_iterations < 0:
            raise ValueError("smoothing_iterations must be >= 0")
        if self.width < 4 or self.height < 4:
            raise ValueError("arena must be at least 4x4")


@dataclass
class RealTaskSet:
    tasks: list[Task]
    split_seed: int = 0

    def __post_init__(self):
        if not self.tasks:
            raise ValueError("RealTaskSet must be non-empty")

    def __len__(self):
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def __getitem__(self, i):
        return self.tasks[i]

    def ids(self) -> list[Optional[str]]:
        return [t.id for t in self.tasks]


@dataclass
class ValidityReport:
    ok: bool
    reasons: list[str] = field(default_factory=list)

    def __bool__(self):
        return self.ok


# ---------------------------------------------------------------------------
# geometry helpers


def _in_bounds(grid: np.ndarray, cell: Cell) -> bool:
    col, row = cell
    return 0 <= row < grid.shape[0] and 0 <= col < grid.shape[1]


def wall_border(grid: np.ndarray) -> np.ndarray:
    grid = np.array(grid, dtype=bool, copy=True)
    grid[0, :] = grid[-1, :] = True
    grid[:, 0] = grid[:, -1] = True
    return grid


def default_endpoints(width: int, height: int) -> tuple[Cell, Cell]:
    """Nominal start (bottom-center) and goal (top-center) interior cells."""
    return (width // 2, height - 2), (width // 2, 1)


def nearest_free_cell(grid: np.ndarray, cell: Cell) -> Optional[Cell]:
    """Closest free interior cell to ``cell`` by Euclidean distance.

    Ties break on row then column so the result is deterministic.
    """
    col, row = cell
    if _in_bounds(grid, cell) and not grid[row, col]:
        return cell
    free_rows, free_cols = np.nonzero(~grid[1:-1, 1:-1])
    if free_rows.size == 0:
        return None
    free_rows = free_rows + 1
    free_cols = free_cols + 1
    d2 = (free_rows - row) ** 2 + (free_cols - col) ** 2
    order = np.lexsort((free_cols, free_rows, d2))
    best = order[0]
    return int(free_cols[best]), int(free_rows[best])


def place_endpoints(grid: np.ndarray) -> Optional[tuple[Cell, Cell]]:
    """Start/goal by the fixed convention, nudged onto free cells."""
    h, w = grid.shape
    nominal_start, nominal_goal = default_endpoints(w, h)
    start = nearest_free_cell(grid, nominal_start)
    goal = nearest_free_cell(grid, nominal_goal)
    if start is None or goal is None or start == goal:
        return None
    return start, goal


def smooth(grid: np.ndarray, outside_blocked: bool = False) -> np.ndarray:
    """One majority-rule pass: obstacle iff >= 5 of the 3x3 block are obstacles.

    Cells beyond the edge count as obstacles only if ``outside_blocked``.
    """
    padded = np.pad(grid.astype(np.int8), 1, constant_values=int(outside_blocked))
    h, w = grid.shape
    counts = np.zeros((h, w), dtype=np.int8)
    for dr in range(3):
        for dc in range(3):
            counts += padded[dr:dr + h, dc:dc + w]
    return counts >= 5


# ---------------------------------------------------------------------------
# operations


def shortest_path_length(task: Task) -> Optional[int]:
    """Exact 4-connected BFS step count from start to goal, or None."""
    grid = task.grid
    h, w = grid.shape
    if not (_in_bounds(grid, task.start) and _in_bounds(grid, task.goal)):
        return None
    sc, sr = task.start
    gc, gr = task.goal
    if grid[sr, sc] or grid[gr, gc]:
        return None
    if task.start == task.goal:
        return 0
    dist = np.full((h, w), -1, dtype=np.int64)
    dist[sr, sc] = 0
    queue = deque([(sr, sc)])
    while queue:
        r, c = queue.popleft()
        d = dist[r, c] + 1
        for nr, nc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if 0 <= nr < h and 0 <= nc < w and not grid[nr, nc] and dist[nr, nc] < 0:
                if nr == gr and nc == gc:
                    return int(d)
                dist[nr, nc] = d
                queue.append((nr, nc))
    return None


def validate_task(task: Task) -> ValidityReport:
    reasons = []
    grid = task.grid
    for name, cell in (("start", task.start), ("goal", task.goal)):
        if not _in_bounds(grid, cell):
            reasons.append(f"{name}-out-of-bounds")
        elif grid[cell[1], cell[0]]:
            reasons.append(f"{name}-occupied")
    if task.start == task.goal:
        reasons.append("start==goal")
    if not reasons and shortest_path_length(task) is None:
        reasons.append("unreachable")
    return ValidityReport(not reasons, reasons)


def generate_task(params: GenerationParams, task_id: Optional[str] = None) -> Task:
    """Cellular-automata arena: random interior fill then majority smoothing.

    Retries with derived seeds until a solvable layout appears.
    """
    h, w = params.height, params.width
    for attempt in range(MAX_GENERATION_RETRIES):
        rng = np.random.default_rng(np.random.SeedSequence([params.rng_seed, attempt]))
        # the interior is filled and smoothed on its own so the walls do not
        # seed extra obstacles along the border
        interior = rng.random((h - 2, w - 2)) < params.obstacle_density
        for _ in range(params.smoothing_iterations):
            interior = smooth(interior)
        grid = wall_border(np.pad(interior, 1))
        ends = place_endpoints(grid)
        if ends is None:
            continue
        task = Task(grid, ends[0], ends[1], task_id)
        if validate_task(task):
            return task
    raise GenerationFailed(
        f"no solvable {w}x{h} task at density {params.obstacle_density} "
        f"after {MAX_GENERATION_RETRIES} attempts (seed {params.rng_seed})"
    )


def generate_task_pool(n, seed, width=16, height=16, density_range=(0.3, 0.6),
                       smoothing_iterations=2, prefix="task"):
    """``n`` tasks with per-task density drawn uniformly from ``density_range``."""
    rng = np.random.default_rng(seed)
    lo, hi = density_range
    tasks = []
    for i in range(n):
        density = float(rng.uniform(lo, hi))
        task_seed = int(rng.integers(0, 2**63 - 1))
        params = GenerationParams(width, height, density, smoothing_iterations, task_seed)
        tasks.append(generate_task(params, task_id=f"{prefix}-{i:04d}"))
    return tasks


# ---------------------------------------------------------------------------
# file format


def format_task(task: Task) -> str:
    lines = [
        f"width {task.width}",
        f"height {task.height}",
        f"start {task.start[0]} {task.start[1]}",
        f"goal {task.goal[0]} {task.goal[1]}",
    ]
    if task.id is not None:
        lines.append(f"id {task.id}")
    for row in task.grid:
        lines.append("".join("#" if v else "." for v in row))
    return "\n".join(lines) + "\n"


def _header_ints(parts, n, key, path, lineno):
    if len(parts) != n + 1:
        raise FormatError(f"'{key}' expects {n} integer(s)", path, lineno)
    try:
        return [int(p) for p in parts[1:]]
    except ValueError:
        raise FormatError(f"'{key}' has a non-integer field", path, lineno) from None


def parse_task(text: str, path=None) -> Task:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    header = {}
    lineno = 0
    expected = ["width", "height", "start", "goal"]
    for key in expected:
        if lineno >= len(lines):
            raise FormatError(f"truncated header: missing '{key}'", path, lineno + 1)
        parts = lines[lineno].split()
        if not parts or parts[0] != key:
            raise FormatError(f"expected '{key}' line", path, lineno + 1)
        n = 1 if key in ("width", "height") else 2
        header[key] = _header_ints(parts, n, key, path, lineno + 1)
        lineno += 1
    task_id = None
    if lineno < len(lines) and lines[lineno].startswith("id "):
        task_id = lines[lineno][3:].strip()
        if not task_id:
            raise FormatError("empty id", path, lineno + 1)
        lineno += 1
    (width,), (height,) = header["width"], header["height"]
    if width < 1 or height < 1:
        raise FormatError("width and height must be positive", path, 1)
    rows = lines[lineno:]
    if len(rows) < height:
        raise FormatError(
            f"truncated grid: {len(rows)} of {height} rows present", path, lineno + len(rows) + 1
        )
    if len(rows) > height:
        raise FormatError(f"extra content after {height} grid rows", path, lineno + height + 1)
    grid = np.zeros((height, width), dtype=bool)
    for r, row in enumerate(rows):
        if len(row) != width:
            raise FormatError(
                f"grid row {r} has width {len(row)}, expected {width}", path, lineno + r + 1
            )
        bad = set(row) - {"#", "."}
        if bad:
            raise FormatError(
                f"grid row {r} has invalid character(s) {sorted(bad)!r}", path, lineno + r + 1
            )
        grid[r] = [ch == "#" for ch in row]
    return Task(grid, tuple(header["start"]), tuple(header["goal"]), task_id)


def save_task(task: Task, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_task(task))


def load_task(path) -> Task:
    with open(path, encoding="utf-8") as fh:
        return parse_task(fh.read(), path)


def save_tasks(task_set: RealTaskSet, path) -> None:
    """Write one ``<id>.task`` file per task plus an ordered manifest."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    ids = task_set.ids()
    if any(i is None for i in ids):
        raise ValueError("every task needs an id to be saved into a task directory")
    if len(set(ids)) != len(ids):
        raise ValueError("task ids must be unique")
    for task in task_set.tasks:
        save_task(task, path / f"{task.id}{TASK_SUFFIX}")
    manifest = ["# groundcl task manifest", f"split_seed {task_set.split_seed}", *ids]
    tmp = path / (MANIFEST_NAME + ".tmp")
    tmp.write_text("\n".join(manifest) + "\n", encoding="utf-8")
    os.replace(tmp, path / MANIFEST_NAME)


def load_tasks(path) -> RealTaskSet:
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    lines = manifest_path.read_text(encoding="utf-8").splitlines()
    body = [(i + 1, ln.strip()) for i, ln in enumerate(lines) if ln.strip() and not ln.startswith("#")]
    if not body:
        raise FormatError("empty manifest", manifest_path)
    lineno, first = body[0]
    parts = first.split()
    if parts[0] != "split_seed" or len(parts) != 2:
        raise FormatError("expected 'split_seed <int>'", manifest_path, lineno)
    try:
        split_seed = int(parts[1])
    except ValueError:
        raise FormatError("split_seed is not an integer", manifest_path, lineno) from None
    tasks = []
    for lineno, task_id in body[1:]:
        task_file = path / f"{task_id}{TASK_SUFFIX}"
        if not task_file.exists():
            raise FormatError(f"missing task file for id '{task_id}'", manifest_path, lineno)
        task = load_task(task_file)
        if task.id != task_id:
            raise FormatError(f"task file id {task.id!r} does not match manifest", task_file)
        tasks.append(task)
    if not tasks:
        raise FormatError("manifest lists no tasks", manifest_path)
    return RealTaskSet(tasks, split_seed)
