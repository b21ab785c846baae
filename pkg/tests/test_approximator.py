import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from groundcl.approximator import (AdamState, GaussianPolicy, Mlp, adam_step, clip_grad_norm,
                                   param_count)
from groundcl.errors import DimensionMismatch, NonFiniteGradient
from oracles import central_difference, hand_forward, relative_error


def test_zero_net_outputs_zero():
    net = Mlp([5, 7, 3], init="zeros")
    assert np.all(net(np.arange(5.0)) == 0.0)


def test_identity_linear_layer():
    net = Mlp([4, 4], params=np.concatenate([np.eye(4).ravel(), np.zeros(4)]))
    x = np.array([0.5, -1.0, 2.0, 3.0])
    assert np.array_equal(net(x), x)


def test_forward_matches_hand_rolled(rng):
    net = Mlp([3, 5, 4, 2], rng=rng)
    x = rng.standard_normal(3)
    layers = net.layers()
    expected = hand_forward([w for w, _ in layers], [b for _, b in layers], x)
    assert np.allclose(net(x), expected, atol=1e-12)


def test_forward_batch_equals_rows(rng):
    net = Mlp([3, 6, 2], rng=rng)
    xs = rng.standard_normal((5, 3))
    assert np.allclose(net(xs), np.stack([net(x) for x in xs]))


def test_dimension_mismatch(rng):
    net = Mlp([3, 4, 2], rng=rng)
    with pytest.raises(DimensionMismatch):
        net(np.zeros(4))
    _, cache = net.forward(np.zeros(3))
    with pytest.raises(DimensionMismatch):
        net.backward(cache, np.zeros(3))


def test_constant_loss_zero_gradient(rng):
    net = Mlp([3, 4, 2], rng=rng)
    _, cache = net.forward(rng.standard_normal(3))
    assert np.all(net.backward(cache, np.zeros(2)) == 0.0)


def test_linear_least_squares_closed_form(rng):
    a = rng.standard_normal((6, 3))
    y = rng.standard_normal((6, 2))
    net = Mlp([3, 2], rng=rng)
    out, cache = net.forward(a)
    grad = net.backward(cache, out - y)  # d/dparams of 0.5 * ||A W + b - Y||^2
    (w, b), = net.layers()
    resid = a @ w + b - y
    assert np.allclose(grad, np.concatenate([(a.T @ resid).ravel(), resid.sum(axis=0)]))


def _squared_norm_loss(net, x):
    def loss(p):
        return float(np.sum(Mlp(net.layer_sizes, net.activations, net.output_activation,
                                params=p)(x) ** 2))
    return loss


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(["identity", "softplus", "sigmoid"]))
def test_backward_matches_finite_differences(seed, out_act):
    rng = np.random.default_rng(seed)
    net = Mlp([4, 6, 5, 3], "tanh", out_act, rng=rng)
    x = rng.standard_normal((2, 4))
    y, cache = net.forward(x)
    grad = net.backward(cache, 2.0 * y)
    assert relative_error(grad, central_difference(_squared_norm_loss(net, x), net.params)) < 1e-4


def test_backward_is_pure(rng):
    net = Mlp([3, 4, 2], "relu", rng=rng)
    before = net.params.copy()
    y, cache = net.forward(rng.standard_normal((4, 3)))
    g1 = net.backward(cache, y)
    g2 = net.backward(cache, y)
    assert np.array_equal(g1, g2) and np.array_equal(before, net.params)


def test_input_gradient_matches_finite_differences(rng):
    net = Mlp([3, 5, 2], rng=rng)
    x = rng.standard_normal(3)
    y, cache = net.forward(x)
    _, gx = net.backward(cache, 2.0 * y, return_input_grad=True)
    fd = central_difference(lambda v: float(np.sum(net(v) ** 2)), x)
    assert relative_error(gx, fd) < 1e-6


@given(st.lists(st.integers(1, 12), min_size=2, max_size=5))
def test_param_count_formula(sizes):
    expected = sum(a * b + b for a, b in zip(sizes, sizes[1:]))
    assert param_count(sizes) == expected
    assert Mlp(sizes, init="zeros").n_params == expected


def test_adam_zero_gradient_keeps_params():
    p = np.array([1.0, -2.0])
    new, state = adam_step(p, np.zeros(2), AdamState.zeros(2, 0.1))
    assert np.array_equal(new, p) and state.step == 1


def test_adam_first_step_magnitude():
    p = np.zeros(3)
    new, _ = adam_step(p, np.array([5.0, -0.2, 3e3]), AdamState.zeros(3, 0.01))
    assert np.allclose(np.abs(new), 0.01, rtol=1e-5)


def test_adam_on_quadratic_decreases():
    target = np.array([3.0, -1.0, 0.5])
    p, state = np.zeros(3), AdamState.zeros(3, 0.05)
    losses = []
    for _ in range(100):
        losses.append(float(np.sum((p - target) ** 2)))
        p, state = adam_step(p, 2.0 * (p - target), state)
    assert all(b < a for a, b in zip(losses[5:], losses[6:]))


def test_adam_rejects_non_finite():
    with pytest.raises(NonFiniteGradient):
        adam_step(np.zeros(2), np.array([np.nan, 0.0]), AdamState.zeros(2))


def test_clip_grad_norm():
    g, norm = clip_grad_norm(np.array([3.0, 4.0]), 1.0)
    assert norm == 5.0 and np.linalg.norm(g) == pytest.approx(1.0)
    g, _ = clip_grad_norm(np.array([0.3, 0.4]), 1.0)
    assert np.array_equal(g, [0.3, 0.4])


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31))
def test_policy_log_prob_gradient(seed):
    rng = np.random.default_rng(seed)
    pol = GaussianPolicy(4, 2, (5,), rng=rng, final_scale=1.0)
    obs = rng.standard_normal((3, 4))
    act = rng.standard_normal((3, 2))
    weights = rng.standard_normal(3)
    grad, _, _ = pol.log_prob_grad(obs, act, weights)

    def f(p):
        clone = pol.copy()
        clone.params = p
        return float(np.dot(weights, clone.log_prob(obs, act)))
    assert relative_error(grad, central_difference(f, pol.params)) < 1e-4


def test_policy_log_prob_and_entropy(rng):
    pol = GaussianPolicy(3, 2, (4,), rng=rng, init_log_std=0.2)
    obs = rng.standard_normal(3)
    a = rng.standard_normal(2)
    mean, std = pol.mean_action(obs), np.exp(0.2)
    manual = np.sum(-0.5 * ((a - mean) / std) ** 2 - np.log(std) - 0.5 * np.log(2 * np.pi))
    assert pol.log_prob(obs, a) == pytest.approx(manual)
    assert pol.entropy() == pytest.approx(2 * (0.5 + 0.5 * np.log(2 * np.pi) + 0.2))
