import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import DATA
from groundcl.errors import FormatError, GenerationFailed
from groundcl.taskgen import (GenerationParams, RealTaskSet, Task, default_endpoints,
                              format_task, generate_task, generate_task_pool, load_task,
                              load_tasks, parse_task, save_tasks, shortest_path_length,
                              smooth, validate_task)
from oracles import dijkstra_steps, open_arena

GOLDEN = DATA / "golden_density025_seed42_16x16.task"


def test_zero_density_is_open_arena():
    task = generate_task(GenerationParams(16, 16, 0.0, 1, 99))
    assert np.array_equal(task.grid, open_arena())


def test_full_density_fails():
    with pytest.raises(GenerationFailed):
        generate_task(GenerationParams(16, 16, 1.0, 0, 3))


def test_golden_grid_is_byte_stable():
    task = generate_task(GenerationParams(16, 16, 0.25, 1, 42), task_id="golden")
    assert format_task(task) == GOLDEN.read_text(encoding="utf-8")
    assert load_task(GOLDEN) == task


def test_same_seed_same_grid():
    p = GenerationParams(16, 16, 0.45, 2, 7)
    assert generate_task(p).grid.tobytes() == generate_task(p).grid.tobytes()


def test_corridor_path_length():
    grid = np.zeros((8, 8), dtype=bool)
    assert shortest_path_length(Task(grid, (1, 1), (1, 5))) == 4


def test_walled_in_goal_is_unreachable():
    grid = open_arena(8, 8)
    grid[2:5, 2:5] = True
    grid[3, 3] = False
    task = Task(grid, (1, 1), (3, 3))
    assert shortest_path_length(task) is None
    report = validate_task(task)
    assert not report and report.reasons == ["unreachable"]


def test_random_grid_matches_dijkstra():
    rng = np.random.default_rng(7)
    grid = rng.random((12, 12)) < 0.3
    grid[1, 1] = grid[10, 10] = False
    task = Task(grid, (1, 1), (10, 10))
    assert shortest_path_length(task) == dijkstra_steps(grid, (1, 1), (10, 10))


def test_validity_reasons(arena_task):
    assert validate_task(arena_task)
    grid = arena_task.grid.copy()
    grid[arena_task.start[1], arena_task.start[0]] = True
    assert validate_task(Task(grid, arena_task.start, arena_task.goal)).reasons == ["start-occupied"]
    same = Task(arena_task.grid, arena_task.start, arena_task.start)
    assert "start==goal" in validate_task(same).reasons


def test_open_arena_path_is_manhattan():
    for w, h in [(16, 16), (10, 7), (5, 9)]:
        start, goal = default_endpoints(w, h)
        task = Task(open_arena(w, h), start, goal)
        assert shortest_path_length(task) == abs(start[0] - goal[0]) + abs(start[1] - goal[1])


def test_majority_smoothing():
    grid = np.zeros((3, 3), dtype=bool)
    grid[0, :] = True
    grid[1, 0] = grid[1, 1] = True
    out = smooth(grid)
    assert out[1, 1] and out[0, 1] and not out[2, 2]
    assert smooth(np.zeros((3, 3), bool), outside_blocked=True)[0, 0]


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 0.6), st.integers(0, 3), st.integers(0, 2**32))
def test_generated_tasks_are_valid(density, smoothing, seed):
    # unsmoothed random fill stops percolating well below 0.6
    density = density if smoothing else density / 2
    task = generate_task(GenerationParams(16, 16, density, smoothing, seed))
    assert validate_task(task)
    assert shortest_path_length(task) is not None
    assert task.grid[0].all() and task.grid[-1].all()
    assert task.grid[:, 0].all() and task.grid[:, -1].all()


@settings(max_examples=60, deadline=None)
@given(st.integers(3, 14), st.integers(3, 14), st.floats(0.0, 0.7), st.integers(0, 2**31))
def test_bfs_equals_dijkstra(w, h, density, seed):
    rng = np.random.default_rng(seed)
    grid = rng.random((h, w)) < density
    cells = [(c, r) for r in range(h) for c in range(w)]
    i, j = rng.choice(len(cells), 2, replace=False)
    start, goal = cells[i], cells[j]
    grid[start[1], start[0]] = grid[goal[1], goal[0]] = False
    assert shortest_path_length(Task(grid, start, goal)) == dijkstra_steps(grid, start, goal)


def test_pool_ids_and_round_trip(tmp_path):
    tasks = generate_task_pool(10, 5)
    assert [t.id for t in tasks] == [f"task-{i:04d}" for i in range(10)]
    original = RealTaskSet(tasks, 17)
    save_tasks(original, tmp_path / "pool")
    loaded = load_tasks(tmp_path / "pool")
    assert loaded.split_seed == 17
    assert loaded.tasks == original.tasks


def test_truncated_file_rejected(arena_task):
    text = format_task(arena_task)
    with pytest.raises(FormatError, match="truncated"):
        parse_task("\n".join(text.splitlines()[:10]))
    with pytest.raises(FormatError, match="truncated"):
        parse_task("width 16\nheight 16\n")


def test_wrong_row_width_names_row(arena_task):
    lines = format_task(arena_task).splitlines()
    lines[5 + 3] = lines[5 + 3][:-1]  # five header lines including the id
    with pytest.raises(FormatError) as err:
        parse_task("\n".join(lines) + "\n", path="bad.task")
    assert "grid row 3" in str(err.value)
    assert "bad.task:9" in str(err.value)


def test_bad_character_rejected(arena_task):
    text = format_task(arena_task).replace("#.", "#x", 1)
    with pytest.raises(FormatError, match="invalid character"):
        parse_task(text)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_format_round_trip(seed):
    task = generate_task(GenerationParams(12, 10, 0.4, 1, seed), task_id=f"t{seed}")
    assert parse_task(format_task(task)) == task
