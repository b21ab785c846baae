"""Small dense networks with hand-written backprop, Adam, and a Gaussian head.

Everything works on a single flat float64 parameter vector per network so
optimizers, gradient clipping and checkpoints never need to know the layer
structure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, NonFiniteGradient

HIDDEN_ACTIVATIONS = ("tanh", "relu")
OUTPUT_ACTIVATIONS = ("identity", "softplus", "sigmoid")
LOG_2PI = math.log(2.0 * math.pi)


def param_count(layer_sizes: Sequence[int]) -> int:
    return sum(i * o + o for i, o in zip(layer_sizes[:-1], layer_sizes[1:]))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class Mlp:
    """Fully connected network ``x -> act(x W1 + b1) -> ... -> out_act(h Wn + bn)``.

    Inputs may be a single vector or a batch of row vectors.
    """

    def __init__(self, layer_sizes, activation="tanh", output_activation="identity",
                 params=None, rng=None, init="scaled", final_scale=1.0):
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        if len(self.layer_sizes) < 2:
            raise ValueError("need at least input and output widths")
        n_hidden = len(self.layer_sizes) - 2
        if isinstance(activation, str):
            activation = [activation] * n_hidden
        self.activations = tuple(activation)
        if len(self.activations) != n_hidden:
            raise ValueError("one activation per hidden layer")
        for a in self.activations:
            if a not in HIDDEN_ACTIVATIONS:
                raise ValueError(f"unknown hidden activation {a!r}")
        if output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {output_activation!r}")
        self.output_activation = output_activation

        n = param_count(self.layer_sizes)
        if params is not None:
            params = np.asarray(params, dtype=np.float64)
            if params.shape != (n,):
                raise DimensionMismatch(f"expected {n} parameters, got {params.shape}")
            self.params = params.copy()
        elif init == "zeros":
            self.params = np.zeros(n)
        elif init == "scaled":
            rng = rng if rng is not None else np.random.default_rng()
            self.params = np.zeros(n)
            layers = self._slices()
            for k, (ws, _bs, fan_in, fan_out) in enumerate(layers):
                w = rng.standard_normal(fan_in * fan_out) / math.sqrt(fan_in)
                if k == len(layers) - 1:
                    w *= final_scale
                self.params[ws] = w
        else:
            raise ValueError(f"unknown init {init!r}")

    @property
    def n_params(self) -> int:
        return self.params.size

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def _slices(self):
        out = []
        offset = 0
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            ws = slice(offset, offset + fan_in * fan_out)
            offset += fan_in * fan_out
            bs = slice(offset, offset + fan_out)
            offset += fan_out
            out.append((ws, bs, fan_in, fan_out))
        return out

    def layers(self, params=None):
        """(W, b) views for each layer; W has shape (fan_in, fan_out)."""
        p = self.params if params is None else params
        return [(p[ws].reshape(fi, fo), p[bs]) for ws, bs, fi, fo in self._slices()]

    def copy(self) -> "Mlp":
        return Mlp(self.layer_sizes, list(self.activations), self.output_activation,
                   params=self.params)

    def forward(self, x):
        """Returns ``(output, cache)``; the cache feeds :meth:`backward`."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.ndim != 2 or h.shape[1] != self.input_dim:
            raise DimensionMismatch(f"input width {x.shape[-1]} != {self.input_dim}")
        inputs, outs = [], []
        layers = self.layers()
        for k, (w, b) in enumerate(layers):
            inputs.append(h)
            z = h @ w + b
            if k < len(layers) - 1:
                h = np.tanh(z) if self.activations[k] == "tanh" else np.maximum(z, 0.0)
                outs.append((z, h))
            else:
                if self.output_activation == "identity":
                    h = z
                elif self.output_activation == "softplus":
                    h = np.logaddexp(0.0, z)
                else:
                    h = _sigmoid(z)
                outs.append((z, h))
        y = h[0] if single else h
        return y, (single, inputs, outs)

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, output_gradient, return_input_grad=False):
        """Flat parameter gradient of ``sum(output * output_gradient)``."""
        single, inputs, outs = cache
        g = np.asarray(output_gradient, dtype=np.float64)
        if single:
            g = g[None, :]
        if g.shape != outs[-1][1].shape:
            raise DimensionMismatch(f"output gradient shape {g.shape} != {outs[-1][1].shape}")
        grad = np.zeros_like(self.params)
        layers = self.layers()
        slices = self._slices()
        for k in range(len(layers) - 1, -1, -1):
            z, a = outs[k]
            if k == len(layers) - 1:
                if self.output_activation == "softplus":
                    g = g * _sigmoid(z)
                elif self.output_activation == "sigmoid":
                    g = g * a * (1.0 - a)
            elif self.activations[k] == "tanh":
                g = g * (1.0 - a * a)
            else:
                g = g * (z > 0.0)
            ws, bs, _, _ = slices[k]
            grad[ws] = (inputs[k].T @ g).ravel()
            grad[bs] = g.sum(axis=0)
            g = g @ layers[k][0].T
        if return_input_grad:
            return grad, (g[0] if single else g)
        return grad


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n, learning_rate=3e-4, **kw):
        return cls(np.zeros(n), np.zeros(n), 0, learning_rate, **kw)


def adam_step(params, grad, state: AdamState):
    """One bias-corrected Adam step; returns ``(new_params, new_state)``."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.shape or state.m.shape != params.shape:
        raise DimensionMismatch("params, grad and moments must have equal length")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient("non-finite gradient passed to Adam")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    if not np.all(np.isfinite(new_params)):
        raise NonFiniteGradient("Adam update produced non-finite parameters")
    new_state = AdamState(m, v, t, state.learning_rate, state.beta1, state.beta2, state.eps)
    return new_params, new_state


def clip_grad_norm(grad, max_norm):
    norm = float(np.linalg.norm(grad))
    if max_norm is not None and max_norm > 0 and norm > max_norm:
        grad = grad * (max_norm / (norm + 1e-12))
    return grad, norm


class GaussianPolicy:
    """Diagonal Gaussian with an MLP mean and a state-independent log-std.

    ``params`` is ``[mlp params, log_std]``.
    """

    def __init__(self, obs_dim, act_dim, hidden=(64, 64), rng=None, init_log_std=-0.5,
                 final_scale=0.01, mean_bias=None):
        self.net = Mlp([obs_dim, *hidden, act_dim], "tanh", "identity", rng=rng,
                       final_scale=final_scale)
        if mean_bias is not None:
            self.net.layers()[-1][1][:] = mean_bias
        self.log_std = np.full(act_dim, float(init_log_std))
        self.sample_count = 0

    @property
    def obs_dim(self):
        return self.net.input_dim

    @property
    def act_dim(self):
        return self.net.output_dim

    @property
    def params(self):
        return np.concatenate([self.net.params, self.log_std])

    @params.setter
    def params(self, value):
        value = np.asarray(value, dtype=np.float64)
        n = self.net.n_params
        if value.shape != (n + self.act_dim,):
            raise DimensionMismatch("policy parameter vector has wrong length")
        self.net.params = value[:n].copy()
        self.log_std = value[n:].copy()

    def copy(self) -> "GaussianPolicy":
        clone = object.__new__(GaussianPolicy)
        clone.net = self.net.copy()
        clone.log_std = self.log_std.copy()
        clone.sample_count = 0
        return clone

    def mean_action(self, obs):
        return self.net(obs)

    def sample(self, obs, rng):
        """Draw actions; returns ``(actions, log_probs, means)``."""
        mean = self.net(obs)
        noise = rng.standard_normal(mean.shape)
        actions = mean + np.exp(self.log_std) * noise
        self.sample_count += 1
        return actions, self.log_prob_from_mean(mean, actions), mean

    def log_prob_from_mean(self, mean, actions):
        std = np.exp(self.log_std)
        zs = (actions - mean) / std
        return -0.5 * np.sum(zs * zs, axis=-1) - np.sum(self.log_std) - 0.5 * self.act_dim * LOG_2PI

    def log_prob(self, obs, actions):
        return self.log_prob_from_mean(self.net(obs), actions)

    def entropy(self) -> float:
        return float(np.sum(self.log_std) + 0.5 * self.act_dim * (1.0 + LOG_2PI))

    def log_prob_grad(self, obs, actions, dloss_dlogp, dloss_dlogstd_extra=None):
        """Gradient over ``params`` of ``sum_i dloss_dlogp[i] * log_prob_i``.

        ``dloss_dlogstd_extra`` adds a direct log-std term (entropy bonus).
        Also returns the forward means and log-probs.
        """
        mean, cache = self.net.forward(obs)
        std = np.exp(self.log_std)
        diff = actions - mean
        logp = self.log_prob_from_mean(mean, actions)
        w = dloss_dlogp[:, None]
        dmean = w * diff / (std * std)
        dlogstd = np.sum(w * ((diff / std) ** 2 - 1.0), axis=0)
        if dloss_dlogstd_extra is not None:
            dlogstd = dlogstd + dloss_dlogstd_extra
        grad = np.concatenate([self.net.backward(cache, dmean), dlogstd])
        return grad, mean, logp
