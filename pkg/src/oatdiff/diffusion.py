"""Noise schedule, forward corruption, and DDPM/DDIM reverse steps.

Step indices are 1-based (t = 1..T); arrays are stored with a leading entry
for t = 0 so that ``alpha_bar[0] == 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray  # index t in 0..T, beta[0] = 0
    alpha_bar: np.ndarray  # alpha_bar[0] = 1
    sigma: np.ndarray
    gamma: np.ndarray

    @property
    def T(self) -> int:
        return len(self.beta) - 1


def make_schedule(T: int = 1000, beta_1: float = 1e-4, beta_T: float = 0.02) -> NoiseSchedule:
    if T < 1 or not 0 < beta_1 <= beta_T < 1:
        raise ValueError(f"invalid schedule T={T}, beta_1={beta_1}, beta_T={beta_T}")
    if T == 1:
        beta = np.array([beta_1])
    else:
        beta = beta_1 + np.arange(T) * (beta_T - beta_1) / (T - 1)
    alpha_bar = np.cumprod(1.0 - beta)
    beta = np.concatenate([[0.0], beta])
    alpha_bar = np.concatenate([[1.0], alpha_bar])
    if np.any(np.diff(beta[1:]) < 0) or np.any(np.diff(alpha_bar) >= 0):
        raise ValueError("schedule violates monotonicity")
    return NoiseSchedule(beta=beta, alpha_bar=alpha_bar, sigma=np.sqrt(beta),
                         gamma=np.concatenate([[0.0], np.ones(T)]))


def _check_t(t, sched: NoiseSchedule, lo: int = 1):
    t_arr = np.asarray(t)
    if np.any(t_arr < lo) or np.any(t_arr > sched.T):
        raise ValueError(f"step {t} outside [{lo}, {sched.T}]")


def _bcast(v, x):
    v = np.asarray(v, dtype=np.float64)
    return v.reshape(v.shape + (1,) * (np.ndim(x) - v.ndim)) if v.ndim else v


def q_sample(x0, t, eps, sched: NoiseSchedule):
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps; ``t`` may be per batch element."""
    _check_t(t, sched)
    if np.shape(x0) != np.shape(eps):
        raise ValueError("x0 and eps shapes differ")
    ab = _bcast(sched.alpha_bar[t], x0)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def q_step(x_prev, t, z, sched: NoiseSchedule):
    """One forward Markov transition q(x_t | x_{t-1})."""
    _check_t(t, sched)
    b = sched.beta[t]
    return math.sqrt(1.0 - b) * x_prev + math.sqrt(b) * z


def ddpm_step(x_t, eps_hat, t: int, sched: NoiseSchedule, z):
    _check_t(t, sched)
    b = sched.beta[t]
    ab = sched.alpha_bar[t]
    mean = (x_t - (b / math.sqrt(1.0 - ab)) * eps_hat) / math.sqrt(1.0 - b)
    if t == 1:
        return mean
    return mean + sched.sigma[t] * z


def ddim_step(x_t, eps_hat, t: int, s: int, eta: float, sched: NoiseSchedule, z=None,
              clip_x0: bool = False):
    """Generalised DDIM jump from step t to an earlier step s (s = 0 allowed)."""
    if not 0 <= s < t <= sched.T:
        raise ValueError(f"need 0 <= s < t <= T, got s={s}, t={t}")
    ab_t = sched.alpha_bar[t]
    ab_s = sched.alpha_bar[s]
    x0 = (x_t - math.sqrt(1.0 - ab_t) * eps_hat) / math.sqrt(ab_t)
    if clip_x0:
        x0 = np.clip(x0, -1.0, 1.0)
    sigma = eta * math.sqrt((1.0 - ab_s) / (1.0 - ab_t)) * math.sqrt(1.0 - ab_t / ab_s)
    rest = 1.0 - ab_s - sigma * sigma
    assert rest >= -1e-12, "sigma^2 exceeds 1 - abar_s"
    out = math.sqrt(ab_s) * x0 + math.sqrt(max(rest, 0.0)) * eps_hat
    if sigma > 0:
        out = out + sigma * z
    return out


def make_nis_subsequence(T: int, nis: int) -> list[tuple[int, int]]:
    """Decreasing (t, s) pairs visiting ``nis`` roughly evenly spaced steps from T to 1."""
    if not 1 <= nis <= T:
        raise ValueError(f"nis must lie in [1, {T}]")
    if nis == 1:
        steps = [T]
    else:
        steps = sorted({int(np.floor(1 + i * (T - 1) / (nis - 1) + 0.5)) for i in range(nis)},
                       reverse=True)
    succ = steps[1:] + [0]
    return list(zip(steps, succ))


def to_diffusion_space(img):
    return 2.0 * img - 1.0


def from_diffusion_space(x):
    return (np.clip(x, -1.0, 1.0) + 1.0) / 2.0


def diffusion_loss(x0_batch, cond_batch, t_batch, eps_batch, denoiser, sched: NoiseSchedule):
    """Mean over the batch of gamma_t * ||eps - eps_theta(x_t, cond, t)||^2.

    ``denoiser(x_t, cond, t)`` must return a Tensor shaped like ``x0_batch``.
    ``cond_batch`` is passed through unchanged so it may be a Tensor carrying
    encoder gradients.
    """
    from .nn.tensor import Tensor, mul, tsum

    x0 = np.asarray(x0_batch)
    eps = np.asarray(eps_batch)
    t_batch = np.asarray(t_batch)
    if x0.shape != eps.shape or x0.shape[0] != len(t_batch):
        raise ValueError("batch shape mismatch")
    x_t = q_sample(x0, t_batch, eps, sched)
    pred = denoiser(x_t.astype(x0.dtype), cond_batch, t_batch)
    if not isinstance(pred, Tensor):
        pred = Tensor(np.asarray(pred))
    if pred.shape != x0.shape:
        raise ValueError(f"denoiser output {pred.shape} != {x0.shape}")
    diff = pred - Tensor(eps.astype(pred.dtype))
    w = _bcast(sched.gamma[t_batch], x0).astype(pred.dtype)
    return tsum(mul(mul(diff, diff), Tensor(w))) * (1.0 / x0.shape[0])
