import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from groundcl.errors import DimensionMismatch
from groundcl.taskgen import Task, generate_task_pool, validate_task
from groundcl.vae import (TaskVae, decode, decode_logits, elbo_batch, encode, grid_to_task,
                          kl_weight_schedule, reconstruction_accuracy, sample_latent, train_vae)
from oracles import central_difference, relative_error


def _structurally_valid(task: Task):
    g = task.grid
    assert g[0].all() and g[-1].all() and g[:, 0].all() and g[:, -1].all()
    assert not g[task.start[1], task.start[0]] and not g[task.goal[1], task.goal[0]]
    assert task.start != task.goal


def test_zero_encoder_gives_zero_mean(arena_task):
    vae = TaskVae(init="zeros")
    mu, log_sigma = encode(vae, arena_task)
    assert np.all(mu == 0.0) and np.all(log_sigma == 0.0)


def test_encode_is_deterministic(arena_task, rng):
    vae = TaskVae(rng=rng)
    a, b = encode(vae, arena_task), encode(vae, arena_task)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_log_sigma_is_clamped(arena_task, rng):
    vae = TaskVae(rng=rng)
    vae.encoder.layers()[-1][1][8:] = [50.0, -50.0] * 4
    _, log_sigma = encode(vae, arena_task)
    assert log_sigma.max() <= 2.0 and log_sigma.min() >= -6.0


def test_dimension_checks(rng):
    vae = TaskVae(rng=rng)
    with pytest.raises(DimensionMismatch):
        encode(vae, Task(np.zeros((8, 8), bool), (1, 1), (2, 2)))
    with pytest.raises(DimensionMismatch):
        decode(vae, np.zeros(5))


def test_negative_bias_decodes_empty_arena():
    vae = TaskVae(init="zeros")
    vae.decoder.layers()[-1][1][:] = -5.0
    task, reachable = decode(vae, np.ones(8))
    interior = task.grid[1:-1, 1:-1]
    assert reachable and not interior.any()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.1, 5.0))
def test_any_latent_decodes_to_valid_structure(seed, scale):
    rng = np.random.default_rng(seed)
    vae = TaskVae(rng=rng)
    vae.decoder.layers()[-1][1][:] = rng.normal(0.0, 2.0, vae.n_cells)
    task, reachable = decode(vae, scale * sample_latent(rng))
    _structurally_valid(task)
    assert reachable == bool(validate_task(task))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.0, 1.0))
def test_grid_to_task_structure(seed, density):
    grid = np.random.default_rng(seed).random((16, 16)) < density
    task, reachable = grid_to_task(grid)
    _structurally_valid(task)
    assert reachable == bool(validate_task(task))


def test_standard_posterior_has_zero_kl():
    vae = TaskVae(init="zeros")
    x = np.zeros((1, 256))
    _, _, kl, _ = elbo_batch(vae, x, np.zeros((1, 8)))
    assert kl == 0.0


def test_saturated_logits_reconstruct_perfectly():
    vae = TaskVae(init="zeros")
    target = np.random.default_rng(0).random(256) < 0.4
    vae.decoder.layers()[-1][1][:] = np.where(target, 800.0, -800.0)
    _, recon, _, _ = elbo_batch(vae, target[None, :].astype(float), np.zeros((1, 8)))
    assert recon == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4),
       st.lists(st.floats(-5, 1.5), min_size=4, max_size=4))
def test_kl_is_nonnegative(mu, log_sigma):
    mu, log_sigma = np.array(mu), np.array(log_sigma)
    kl = 0.5 * np.sum(mu ** 2 + np.exp(2 * log_sigma) - 1 - 2 * log_sigma)
    vae = TaskVae(4, 4, latent_dim=4, hidden=3, init="zeros")
    vae.encoder.layers()[-1][1][:] = np.concatenate([mu, log_sigma])
    _, _, got, _ = elbo_batch(vae, np.zeros((1, 16)), np.zeros((1, 4)))
    assert got >= 0.0 and got == pytest.approx(kl)


def test_elbo_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    vae = TaskVae(6, 5, latent_dim=3, hidden=7, kl_weight=0.7, rng=rng)
    x = (rng.random((4, 30)) < 0.4).astype(float)
    eps = rng.standard_normal((4, 3))
    _, _, _, grad = elbo_batch(vae, x, eps)

    def f(p):
        clone = vae.copy()
        clone.params = p
        return elbo_batch(clone, x, eps)[0]
    assert relative_error(grad, central_difference(f, vae.params)) < 1e-4


def test_kl_warmup_schedule():
    assert kl_weight_schedule(0, 100, 1.0, 0.2) == pytest.approx(0.05)
    assert kl_weight_schedule(19, 100, 1.0, 0.2) == 1.0
    assert kl_weight_schedule(80, 100, 0.5, 0.2) == 0.5
    assert kl_weight_schedule(0, 100, 0.5, 0.0) == 0.5


def test_sample_latent_statistics():
    assert np.array_equal(sample_latent(np.random.default_rng(5)),
                          sample_latent(np.random.default_rng(5)))
    rng = np.random.default_rng(6)
    draws = np.stack([sample_latent(rng, 8) for _ in range(10_000)])
    assert np.all(np.abs(draws.mean(axis=0)) < 0.05)
    assert np.all(np.abs(draws.var(axis=0) - 1.0) < 0.1)


def test_memorizes_single_task():
    task = generate_task_pool(1, 3)[0]
    vae = TaskVae(hidden=64, rng=np.random.default_rng(0))
    vae, curve = train_vae(vae, [task], 300, np.random.default_rng(1), learning_rate=3e-3)
    assert reconstruction_accuracy(vae, [task]) >= 0.99
    assert curve[-1] < curve[0]


def test_training_is_deterministic():
    tasks = generate_task_pool(12, 4)
    out = []
    for _ in range(2):
        vae = TaskVae(hidden=16, rng=np.random.default_rng(0))
        vae, _ = train_vae(vae, tasks, 5, np.random.default_rng(1))
        out.append(vae.params)
    assert np.array_equal(out[0], out[1])


def test_decode_of_untrained_model_matches_logits(rng):
    vae = TaskVae(rng=rng)
    z = sample_latent(rng)
    task, _ = decode(vae, z)
    raw = decode_logits(vae, z).reshape(16, 16) > 0
    interior = np.zeros((16, 16), bool)
    interior[1:-1, 1:-1] = True
    for c, r in (task.start, task.goal):
        interior[max(r - 1, 1):r + 2, max(c - 1, 1):c + 2] = False
    assert np.array_equal(task.grid[interior], raw[interior])
