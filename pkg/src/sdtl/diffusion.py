"""Conditional DDPM: noise schedule, forward corruption, loss, DDPM and DDIM sampling.

Timesteps are 0-based: index ``t`` holds beta_{t+1}. The denoiser is any
callable ``eps_model(x_in, t, s2)`` taking the 6-channel concatenation of the
noisy state and the condition.
"""
from dataclasses import dataclass

import numpy as np

from sdtl import tensor as T
from sdtl.errors import ConfigError, ContractError
from sdtl.tensor import Tensor, no_grad


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    sqrt_alpha_bars: np.ndarray
    sqrt_one_minus_alpha_bars: np.ndarray

    @property
    def T(self):
        return len(self.betas)

    def check_t(self, t):
        t = np.asarray(t)
        if np.any(t < 0) or np.any(t >= self.T):
            raise ContractError(f"timestep {t} outside [0, {self.T})")
        return t


def make_linear_schedule(T=200, beta_start=1e-4, beta_end=2e-2):
    if T < 1:
        raise ConfigError(f"T must be positive, got {T}")
    if not 0 < beta_start <= beta_end < 1:
        raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas = 1.0 - betas
    abar = np.cumprod(alphas)
    return NoiseSchedule(betas, alphas, abar, np.sqrt(abar), np.sqrt(1.0 - abar))


def _per_item(table, t, ndim, dtype):
    """Gather schedule values for batch timesteps ``t`` shaped for broadcasting."""
    v = np.asarray(table[np.asarray(t)], dtype=dtype)
    if v.ndim == 0:
        return v
    return v.reshape((-1,) + (1,) * (ndim - 1))


def q_sample(x0, t, eps, sched):
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps; ``t`` scalar or one per batch item."""
    sched.check_t(t)
    x0 = T.as_tensor(x0)
    eps = T.as_tensor(eps, like=x0)
    a = _per_item(sched.sqrt_alpha_bars, t, x0.ndim, x0.dtype)
    b = _per_item(sched.sqrt_one_minus_alpha_bars, t, x0.ndim, x0.dtype)
    return x0 * Tensor(a, dtype=x0.dtype) + eps * Tensor(b, dtype=x0.dtype)


def training_loss(eps_model, x0, cond, s2, sched, rng, t=None, eps=None):
    """Noise-prediction MSE. Returns (loss, t, eps)."""
    x0 = T.as_tensor(x0)
    if x0.shape != cond.shape:
        raise ContractError(f"x0 {x0.shape} and condition {cond.shape} differ")
    batched = x0.ndim == 4
    B = x0.shape[0] if batched else 1
    if t is None:
        t = rng.integers(0, sched.T, size=B) if batched else int(rng.integers(0, sched.T))
    if eps is None:
        eps = rng.standard_normal(x0.shape).astype(x0.dtype)
    eps = T.as_tensor(eps, like=x0)
    xt = q_sample(x0, t, eps, sched)
    pred = eps_model(T.concat([xt, cond], axis=-3), t, s2)
    loss = T.mean(T.square(pred - eps))
    return loss, t, eps


def ddpm_step(eps_model, x_t, t, cond, s2, sched, rng):
    """One ancestral step x_t -> x_{t-1} with sigma_t^2 = beta_t; no noise at t = 0."""
    sched.check_t(t)
    with no_grad():
        eps = eps_model(T.concat([x_t, cond], axis=-3), t, s2).data
    x = x_t.data
    beta, alpha = sched.betas[t], sched.alphas[t]
    mean = (x - beta / sched.sqrt_one_minus_alpha_bars[t] * eps) / np.sqrt(alpha)
    if t > 0:
        mean = mean + np.sqrt(beta) * rng.standard_normal(x.shape)
    return Tensor(mean, dtype=x.dtype)


def ddim_timesteps(T_steps, steps):
    if steps < 1 or steps > T_steps:
        raise ConfigError(f"DDIM steps must be in [1, {T_steps}], got {steps}")
    if steps == 1:
        return np.array([T_steps - 1])
    return np.round(np.linspace(T_steps - 1, 0, steps)).astype(int)


def ddim_sample(eps_model, cond, s2, sched, steps=10, rng=None, x_T=None, trace=None):
    """Deterministic (eta = 0) DDIM; returns the final x0 estimate clamped to [-1, 1]."""
    seq = ddim_timesteps(sched.T, steps)
    cond = T.as_tensor(cond)
    if x_T is None:
        x_T = rng.standard_normal(cond.shape)
    x = np.asarray(x_T, dtype=cond.dtype)
    B = cond.shape[0] if cond.ndim == 4 else None
    x0 = x
    with no_grad():
        for i, t in enumerate(seq):
            tt = np.full(B, t) if B is not None else int(t)
            eps = eps_model(T.concat([Tensor(x, dtype=cond.dtype), cond], axis=-3), tt, s2).data
            x0 = (x - sched.sqrt_one_minus_alpha_bars[t] * eps) / sched.sqrt_alpha_bars[t]
            if trace is not None:
                trace.append((int(t), x0.copy()))
            if i + 1 < len(seq):
                tp = seq[i + 1]
                x = sched.sqrt_alpha_bars[tp] * x0 + sched.sqrt_one_minus_alpha_bars[tp] * eps
            x = x.astype(cond.dtype, copy=False)
    return Tensor(np.clip(x0, -1.0, 1.0), dtype=cond.dtype)
