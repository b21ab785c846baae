"""Latent task model: an MLP VAE over flattened occupancy grids.

The decoder output is post-processed into a structurally valid task (walls on
the border, free start/goal with one cell of clearance). Reachability is
reported, never repaired.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .approximator import AdamState, Mlp, adam_step
from .errors import DimensionMismatch, NonFiniteLoss
from .taskgen import (RealTaskSet, Task, default_endpoints, place_endpoints,
                      shortest_path_length, wall_border)

LOG_SIGMA_MIN, LOG_SIGMA_MAX = -6.0, 2.0


@dataclass
class VaeConfig:
    latent_dim: int = 8
    hidden: int = 128
    epochs: int = 500
    learning_rate: float = 1e-3
    batch_size: int = 32
    kl_weight: float = 1.0
    warmup_fraction: float = 0.2


class TaskVae:
    def __init__(self, width=16, height=16, latent_dim=8, hidden=128, kl_weight=1.0,
                 rng=None, init="scaled"):
        self.width, self.height = int(width), int(height)
        self.latent_dim = int(latent_dim)
        self.kl_weight = float(kl_weight)
        n_cells = self.width * self.height
        self.encoder = Mlp([n_cells, hidden, 2 * self.latent_dim], "tanh", rng=rng, init=init)
        self.decoder = Mlp([self.latent_dim, hidden, n_cells], "tanh", rng=rng, init=init)

    @property
    def n_cells(self):
        return self.width * self.height

    @property
    def params(self):
        return np.concatenate([self.encoder.params, self.decoder.params])

    @params.setter
    def params(self, value):
        value = np.asarray(value, dtype=np.float64)
        n = self.encoder.n_params
        if value.shape != (n + self.decoder.n_params,):
            raise DimensionMismatch("VAE parameter vector has wrong length")
        self.encoder.params = value[:n].copy()
        self.decoder.params = value[n:].copy()

    def copy(self) -> "TaskVae":
        clone = TaskVae(self.width, self.height, self.latent_dim,
                        self.encoder.layer_sizes[1], self.kl_weight, init="zeros")
        clone.params = self.params
        return clone

    def grid_vector(self, task: Task) -> np.ndarray:
        if task.grid.shape != (self.height, self.width):
            raise DimensionMismatch(
                f"task grid {task.grid.shape} does not match VAE {(self.height, self.width)}")
        return task.grid.astype(np.float64).ravel()


def _split_encoder_output(out, latent_dim):
    mu = out[..., :latent_dim]
    raw_log_sigma = out[..., latent_dim:]
    return mu, np.clip(raw_log_sigma, LOG_SIGMA_MIN, LOG_SIGMA_MAX), raw_log_sigma


def encode(vae: TaskVae, task: Task):
    out = vae.encoder(vae.grid_vector(task))
    mu, log_sigma, _ = _split_encoder_output(out, vae.latent_dim)
    return mu, log_sigma


def encode_batch(vae: TaskVae, tasks):
    x = np.stack([vae.grid_vector(t) for t in tasks])
    mu, log_sigma, _ = _split_encoder_output(vae.encoder(x), vae.latent_dim)
    return mu, log_sigma


def grid_to_task(grid: np.ndarray, task_id=None):
    """Enforce the structural conventions on a raw occupancy grid.

    Returns ``(task, reachable)``.
    """
    grid = wall_border(grid)
    h, w = grid.shape
    ends = place_endpoints(grid)
    if ends is None:
        ends = default_endpoints(w, h)
    start, goal = ends
    for col, row in (start, goal):
        grid[max(row - 1, 1):min(row + 2, h - 1), max(col - 1, 1):min(col + 2, w - 1)] = False
    if task_id is None:
        digest = hashlib.sha1(np.packbits(grid).tobytes() + repr((start, goal)).encode())
        task_id = "gen-" + digest.hexdigest()[:12]
    task = Task(grid, start, goal, task_id)
    return task, shortest_path_length(task) is not None


def decode_logits(vae: TaskVae, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != vae.latent_dim:
        raise DimensionMismatch(f"latent has dimension {z.shape[-1]}, expected {vae.latent_dim}")
    return vae.decoder(z)


def decode(vae: TaskVae, z):
    """Latent vector -> ``(task, reachable)``.

    Cells with sigmoid(logit) > 0.5 become obstacles.
    """
    logits = decode_logits(vae, z)
    grid = (logits > 0.0).reshape(vae.height, vae.width)
    return grid_to_task(grid)


def sample_latent(rng, latent_dim=8) -> np.ndarray:
    return rng.standard_normal(latent_dim)


def elbo_batch(vae: TaskVae, x, eps, kl_weight=None):
    """Negative ELBO averaged over the batch, with its exact parameter gradient.

    ``x``: (N, cells) binary targets; ``eps``: (N, latent) standard normal
    noise for the reparameterized sample ``z = mu + sigma * eps``.
    Returns ``(loss, recon, kl, grad)``.
    """
    beta = vae.kl_weight if kl_weight is None else kl_weight
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    eps = np.atleast_2d(np.asarray(eps, dtype=np.float64))
    n = x.shape[0]
    enc_out, enc_cache = vae.encoder.forward(x)
    mu, log_sigma, raw = _split_encoder_output(enc_out, vae.latent_dim)
    sigma = np.exp(log_sigma)
    z = mu + sigma * eps
    logits, dec_cache = vae.decoder.forward(z)

    recon_each = np.sum(np.logaddexp(0.0, logits) - x * logits, axis=1)
    kl_each = 0.5 * np.sum(mu * mu + sigma * sigma - 1.0 - 2.0 * log_sigma, axis=1)
    recon = float(np.mean(recon_each))
    kl = float(np.mean(kl_each))
    loss = recon + beta * kl

    dlogits = (0.5 * (1.0 + np.tanh(0.5 * logits)) - x) / n
    grad_dec, dz = vae.decoder.backward(dec_cache, dlogits, return_input_grad=True)
    dmu = dz + beta * mu / n
    dlog_sigma = dz * sigma * eps + beta * (sigma * sigma - 1.0) / n
    dlog_sigma = np.where((raw >= LOG_SIGMA_MIN) & (raw <= LOG_SIGMA_MAX), dlog_sigma, 0.0)
    grad_enc = vae.encoder.backward(enc_cache, np.concatenate([dmu, dlog_sigma], axis=1))
    return loss, recon, kl, np.concatenate([grad_enc, grad_dec])


def elbo_loss(vae: TaskVae, task: Task, rng, kl_weight=None):
    """Single-task negative ELBO with one reparameterized sample."""
    eps = rng.standard_normal((1, vae.latent_dim))
    return elbo_batch(vae, vae.grid_vector(task)[None, :], eps, kl_weight)


def kl_weight_schedule(epoch, epochs, kl_weight, warmup_fraction):
    warm = int(round(warmup_fraction * epochs))
    if warm <= 0:
        return kl_weight
    return kl_weight * min(1.0, (epoch + 1) / warm)


def train_vae(vae: TaskVae, real_set, epochs, rng, learning_rate=1e-3, batch_size=32,
              warmup_fraction=0.2):
    """Minibatch Adam on the negative ELBO; mutates and returns ``vae``.

    Returns ``(vae, loss_curve)`` with one mean loss per epoch.
    """
    tasks = list(real_set.tasks if isinstance(real_set, RealTaskSet) else real_set)
    if not tasks:
        raise ValueError("cannot train on an empty task set")
    x = np.stack([vae.grid_vector(t) for t in tasks])
    n = x.shape[0]
    opt = AdamState.zeros(vae.params.size, learning_rate)
    params = vae.params
    curve = []
    for epoch in range(epochs):
        beta = kl_weight_schedule(epoch, epochs, vae.kl_weight, warmup_fraction)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            eps = rng.standard_normal((idx.size, vae.latent_dim))
            loss, _, _, grad = elbo_batch(vae, x[idx], eps, beta)
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"VAE loss not finite at epoch {epoch}")
            params, opt = adam_step(params, grad, opt)
            vae.params = params
            total += loss * idx.size
        curve.append(total / n)
    return vae, np.array(curve)


def reconstruction_accuracy(vae: TaskVae, tasks) -> float:
    """Mean cell agreement between each task and ``decode(encode(task).mu)``."""
    tasks = list(tasks)
    mu, _ = encode_batch(vae, tasks)
    logits = decode_logits(vae, mu)
    acc = []
    for task, row in zip(tasks, logits):
        decoded, _ = grid_to_task((row > 0.0).reshape(vae.height, vae.width))
        acc.append(np.mean(decoded.grid == task.grid))
    return float(np.mean(acc))
