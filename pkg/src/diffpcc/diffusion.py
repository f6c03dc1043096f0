"""Noise schedule, forward noising, reverse sampling and the conditional training loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffnet import tensor as tt
from .diffnet.models import denoise
from .errors import ContractError


@dataclass(frozen=True)
class DiffusionSchedule:
    """Per-step tables indexed by ``t - 1`` for t = 1..T."""

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def check_t(self, t):
        t = np.asarray(t)
        if not np.issubdtype(t.dtype, np.integer) or np.any(t < 1) or np.any(t > self.T):
            raise ValueError(f"timestep must be an integer in [1, {self.T}], got {t}")
        return t

    def at(self, name, t):
        return getattr(self, name)[self.check_t(t) - 1]


def build_schedule(T=200, beta_1=1e-4, beta_T=0.05):
    """Linear variance schedule; both endpoints are reproduced exactly."""
    if T < 2:
        raise ValueError(f"T must be at least 2, got {T}")
    if not 0 < beta_1 <= beta_T < 1:
        raise ValueError(f"need 0 < beta_1 <= beta_T < 1, got {beta_1}, {beta_T}")
    # b1 + w * (bT - b1) is monotone in w under rounding; the last entry is pinned
    w = np.arange(T, dtype=np.float64) / (T - 1)
    beta = beta_1 + w * (beta_T - beta_1)
    beta[-1] = beta_T
    alpha = 1.0 - beta
    alpha_bar = np.empty(T)
    acc = 1.0
    for i in range(T):
        acc = acc * alpha[i]
        alpha_bar[i] = acc
    for arr in (beta, alpha, alpha_bar):
        arr.setflags(write=False)
    return DiffusionSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def forward_sample(x0, t, eps, sched):
    """Jump straight from x0 to x_t with the given standard-normal noise."""
    ab = sched.at("alpha_bar", t)
    return np.sqrt(ab) * np.asarray(x0, dtype=np.float64) + np.sqrt(1.0 - ab) * np.asarray(eps, dtype=np.float64)


def forward_chain(x0, t, sched, seed=None, noise=None):
    """Run the one-step Markov chain t times.

    Either ``noise`` (a sequence of t arrays shaped like x0) or ``seed`` supplies
    the per-step Gaussian draws. Works on any array of points.
    """
    sched.check_t(t)
    x = np.array(x0, dtype=np.float64)
    rng = None if noise is not None else np.random.default_rng(seed)
    for s in range(1, t + 1):
        eps = noise[s - 1] if noise is not None else rng.standard_normal(x.shape)
        x = np.sqrt(sched.alpha[s - 1]) * x + np.sqrt(sched.beta[s - 1]) * eps
    return x


def posterior_mean(x_t, t, eps_hat, sched):
    a = sched.at("alpha", t)
    b = sched.at("beta", t)
    ab = sched.at("alpha_bar", t)
    return (x_t - (b / np.sqrt(1.0 - ab)) * eps_hat) / np.sqrt(a)


def reverse_step(x_t, t, eps_hat, z, sched):
    """One ancestral step: predicted mean plus sqrt(beta_t) * z (z must be zero at t = 1)."""
    t = int(sched.check_t(t))
    z = np.asarray(z, dtype=np.float64)
    if t == 1 and np.any(z != 0):
        raise ContractError("no noise may be injected at the final step t=1")
    mu = posterior_mean(np.asarray(x_t, dtype=np.float64), t, np.asarray(eps_hat, dtype=np.float64), sched)
    return mu + np.sqrt(sched.beta[t - 1]) * z


def _noise_stream(seed, t, P):
    # independent stream per (seed, t); stream 0 seeds the prior draw x_T
    return np.random.default_rng([int(seed), int(t)]).standard_normal((P, 3))


def decode_batch(params, zhat, P, sched, seeds):
    """Reverse-diffuse one cloud per row of ``zhat`` (B, d); returns (B, P, 3)."""
    config = params.config
    if sched.T != config.T:
        raise ValueError(f"schedule has T={sched.T} but the model expects T={config.T}")
    if P < 1:
        raise ValueError(f"P must be positive, got {P}")
    zhat = np.atleast_2d(np.asarray(zhat, dtype=np.float64))
    seeds = list(seeds)
    B = zhat.shape[0]
    if len(seeds) != B:
        raise ValueError("one seed per latent code is required")
    W = params.constants()
    x = np.stack([_noise_stream(s, 0, P) for s in seeds])
    zt = tt.Tensor(zhat)
    for t in range(sched.T, 0, -1):
        eps_hat = denoise(W, x, np.full(B, t), zt, config).data
        if t > 1:
            z = np.stack([_noise_stream(s, t, P) for s in seeds])
        else:
            z = np.zeros_like(x)
        mu = posterior_mean(x, t, eps_hat, sched)
        x = mu + np.sqrt(sched.beta[t - 1]) * z
    return x


def decode(params, zhat, P, sched, seed=0):
    """Reconstruct a (P, 3) array of points conditioned on the latent ``zhat``."""
    return decode_batch(params, np.asarray(zhat)[None, :], P, sched, [seed])[0]


def diffusion_loss(W, x0, zhat, t, eps, sched, config):
    """Noise-prediction loss: squared error summed over coordinates, averaged over points and clouds.

    x0 and eps are (B, P, 3) arrays, t is (B,), ``zhat`` a (B, d) Tensor through
    which gradients flow.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape or x0.ndim != 3 or x0.shape[-1] != 3:
        raise ValueError(f"x0 {x0.shape} and eps {eps.shape} must both be (B, P, 3)")
    t = sched.check_t(np.asarray(t).reshape(-1))
    if t.shape[0] != x0.shape[0]:
        raise ValueError("one timestep per cloud is required")
    ab = sched.alpha_bar[t - 1][:, None, None]
    x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    pred = denoise(W, x_t, t, zhat, config)
    B, P, _ = x0.shape
    return tt.mul(tt.sum_(tt.square(tt.sub(eps, pred))), 1.0 / (B * P))
