"""Diffusion mathematics: schedule, forward process, posterior, samplers.

Every step function combines the input array with python-float schedule
coefficients, so the identical code path runs on numpy arrays (oracle tests)
and on torch tensors (training, where gradients must flow). Noise injection
dispatches on the array type.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    """beta_t and its derived arrays, 1-indexed through accessors (abar(0)=1)."""

    beta: np.ndarray  # (T,)
    alpha: np.ndarray  # 1 - beta
    alpha_bar: np.ndarray  # cumulative product of alpha
    beta_tilde: np.ndarray  # posterior variances; beta_tilde[0] = 0

    @property
    def timesteps(self) -> int:
        return len(self.beta)

    def abar(self, t: int) -> float:
        if t == 0:
            return 1.0
        return float(self.alpha_bar[t - 1])

    def beta_at(self, t: int) -> float:
        return float(self.beta[t - 1])

    def alpha_at(self, t: int) -> float:
        return float(self.alpha[t - 1])

    def beta_tilde_at(self, t: int) -> float:
        return float(self.beta_tilde[t - 1])


def linear_schedule(timesteps: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Evenly spaced beta from beta_start to beta_end."""
    if timesteps < 1:
        raise ValueError("timesteps must be >= 1")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    beta = np.linspace(beta_start, beta_end, timesteps, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    prev = np.concatenate(([1.0], alpha_bar[:-1]))
    beta_tilde = (1.0 - prev) / (1.0 - alpha_bar) * beta
    return NoiseSchedule(beta=beta, alpha=alpha, alpha_bar=alpha_bar, beta_tilde=beta_tilde)


def _noise_like(x, rng):
    """Standard normal of x's shape; rng is np.random.Generator or torch.Generator."""
    if isinstance(x, np.ndarray):
        return rng.standard_normal(x.shape)
    import torch

    return torch.randn(x.shape, generator=rng, dtype=x.dtype, device=x.device)


def _per_sample(x, values):
    """Broadcast one coefficient per leading batch element onto x's shape."""
    arr = np.asarray(values, dtype=np.float64).reshape((-1,) + (1,) * (x.ndim - 1))
    if isinstance(x, np.ndarray):
        return arr
    import torch

    return torch.as_tensor(arr, dtype=x.dtype, device=x.device)


def forward_sample(h0, t, eps, sched: NoiseSchedule):
    """Closed-form noising: H_t = sqrt(abar_t) H_0 + sqrt(1-abar_t) eps.

    t may be a single step or one step per batch element (leading axis).
    """
    if eps.shape != h0.shape:
        raise ValueError(f"noise shape {eps.shape} != signal shape {h0.shape}")
    if np.ndim(t) == 0:
        ab = sched.abar(int(t))
        return math.sqrt(ab) * h0 + math.sqrt(1.0 - ab) * eps
    ab = sched.alpha_bar[np.asarray(t) - 1]
    return _per_sample(h0, np.sqrt(ab)) * h0 + _per_sample(h0, np.sqrt(1.0 - ab)) * eps


def posterior_params(h_t, h0, t: int, sched: NoiseSchedule):
    """Mean and variance of q(H_{t-1} | H_t, H_0)."""
    if not 1 <= t <= sched.timesteps:
        raise ValueError(f"t={t} outside 1..{sched.timesteps}")
    ab = sched.abar(t)
    eps_implied = (h_t - math.sqrt(ab) * h0) / math.sqrt(1.0 - ab)
    mean = (h_t - sched.beta_at(t) / math.sqrt(1.0 - ab) * eps_implied) / math.sqrt(sched.alpha_at(t))
    return mean, sched.beta_tilde_at(t)


def predict_x0(h_t, eps_hat, t: int, sched: NoiseSchedule, clip: bool = False):
    """Invert the forward closed form: H~_0 = (H_t - sqrt(1-abar_t) eps)/sqrt(abar_t)."""
    ab = sched.abar(t)
    x0 = (h_t - math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(ab)
    if clip:
        x0 = np.clip(x0, 0.0, 1.0) if isinstance(x0, np.ndarray) else x0.clamp(0.0, 1.0)
    return x0


def ddpm_step(h_t, eps_hat, t: int, sched: NoiseSchedule, rng=None, clip_x0: bool = False):
    """One Markovian reverse step; the injected noise is dropped at t=1.

    clip_x0 reroutes the mean through the posterior of the clamped clean-image
    prediction instead of the direct eps form; with the clamp inactive the two
    are algebraically identical.
    """
    if not 1 <= t <= sched.timesteps:
        raise ValueError(f"t={t} outside 1..{sched.timesteps}")
    if clip_x0:
        x0 = predict_x0(h_t, eps_hat, t, sched, clip=True)
        mean, _ = posterior_params(h_t, x0, t, sched)
    else:
        a = sched.alpha_at(t)
        ab = sched.abar(t)
        mean = (h_t - (1.0 - a) / math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(a)
    if t == 1:
        return mean
    if rng is None:
        raise ValueError("rng required for stochastic steps (t > 1)")
    return mean + math.sqrt(sched.beta_tilde_at(t)) * _noise_like(h_t, rng)


def nm_step(
    h_t,
    eps_hat,
    t_cur: int,
    t_prev: int,
    sigma: float,
    sched: NoiseSchedule,
    rng=None,
    clip_x0: bool = False,
):
    """Non-Markovian jump t_cur -> t_prev (t_prev may skip many steps).

    H_{t_prev} = sqrt(abar_prev) H~_0 + sqrt(1 - abar_prev - sigma^2) eps_hat
                 + sigma * fresh noise.
    """
    if not 0 <= t_prev < t_cur <= sched.timesteps:
        raise ValueError(f"need 0 <= t_prev < t_cur <= T, got ({t_prev}, {t_cur})")
    ab_prev = sched.abar(t_prev)
    if sigma < 0 or sigma**2 > 1.0 - ab_prev + 1e-15:
        raise ValueError(f"sigma={sigma} outside [0, sqrt(1-abar_prev)]")
    x0 = predict_x0(h_t, eps_hat, t_cur, sched, clip=clip_x0)
    direction = math.sqrt(max(1.0 - ab_prev - sigma**2, 0.0))
    out = math.sqrt(ab_prev) * x0 + direction * eps_hat
    if sigma > 0:
        if rng is None:
            raise ValueError("rng required when sigma > 0")
        out = out + sigma * _noise_like(h_t, rng)
    return out


def sigma_ddpm(t: int, sched: NoiseSchedule) -> float:
    """Per-step noise std that makes the non-Markovian family Markovian."""
    return math.sqrt(sched.beta_tilde_at(t))


def sigma_pair(t_cur: int, t_prev: int, sched: NoiseSchedule) -> float:
    """Variance-matching sigma for an arbitrary stride.

    Reduces exactly to sigma_ddpm(t_cur) when t_prev = t_cur - 1.
    """
    ab_cur = sched.abar(t_cur)
    ab_prev = sched.abar(t_prev)
    return math.sqrt((1.0 - ab_prev) / (1.0 - ab_cur) * (1.0 - ab_cur / ab_prev))


def subsequence(timesteps: int, n_steps: int, spacing: str = "uniform") -> tuple[int, ...]:
    """Strictly increasing sampling steps ending at T; uniform stride."""
    if spacing != "uniform":
        raise ValueError(f"unknown spacing {spacing!r}")
    if not 1 <= n_steps <= timesteps:
        raise ValueError(f"need 1 <= n_steps <= {timesteps}, got {n_steps}")
    steps = tuple(int(round(timesteps * (i + 1) / n_steps)) for i in range(n_steps))
    if steps[0] < 1 or any(b <= a for a, b in zip(steps, steps[1:])):
        raise ValueError("subsequence is not strictly increasing")
    return steps


@dataclass(frozen=True)
class SamplerSpec:
    """Which steps to visit and how much fresh noise to inject per jump."""

    steps: tuple[int, ...]
    sigma: str | float = "zero"  # "zero" | "ddpm" | explicit std >= 0

    def __post_init__(self) -> None:
        if not self.steps:
            raise ValueError("empty step subsequence")
        if any(b <= a for a, b in zip(self.steps, self.steps[1:])):
            raise ValueError("steps must be strictly increasing")
        if isinstance(self.sigma, str):
            if self.sigma not in ("zero", "ddpm"):
                raise ValueError(f"unknown sigma rule {self.sigma!r}")
        elif self.sigma < 0:
            raise ValueError("sigma must be >= 0")

    def sigma_for(self, t_cur: int, t_prev: int, sched: NoiseSchedule) -> float:
        if self.sigma == "zero":
            return 0.0
        if self.sigma == "ddpm":
            return sigma_pair(t_cur, t_prev, sched)
        return float(self.sigma)


def make_sampler(sched: NoiseSchedule, n_steps: int, sigma: str | float = "zero") -> SamplerSpec:
    return SamplerSpec(steps=subsequence(sched.timesteps, n_steps), sigma=sigma)


def training_loss(denoiser, h0, side, t, eps, sched: NoiseSchedule):
    """Mean squared error between the drawn noise and the denoiser's prediction."""
    h_t = forward_sample(h0, t, eps, sched)
    return ((eps - denoiser(side, h_t, t)) ** 2).mean()


def sample(
    denoiser,
    side,
    sched: NoiseSchedule,
    spec: SamplerSpec,
    rng=None,
    h_init=None,
    clip_x0: bool = False,
):
    """Run the reverse process conditioned on the side-information image.

    Starts from standard normal noise (or h_init when pinned for tests),
    walks the sampler subsequence backwards, and hands each jump to
    nm_step. One exception: the full sequence with the "ddpm" sigma rule
    is the plain ancestral sampler, so that case uses ddpm_step verbatim.
    """
    if spec.steps[-1] != sched.timesteps:
        raise ValueError("sampler subsequence must end at T")
    h = h_init
    if h is None:
        if rng is None:
            raise ValueError("rng required to draw the initial noise")
        h = _noise_like(side, rng)

    full_markovian = spec.sigma == "ddpm" and len(spec.steps) == sched.timesteps
    seq = spec.steps
    for i in range(len(seq) - 1, -1, -1):
        t_cur = seq[i]
        t_prev = seq[i - 1] if i > 0 else 0
        eps_hat = denoiser(side, h, t_cur)
        if full_markovian:
            h = ddpm_step(h, eps_hat, t_cur, sched, rng, clip_x0=clip_x0)
        else:
            sigma = spec.sigma_for(t_cur, t_prev, sched)
            h = nm_step(h, eps_hat, t_cur, t_prev, sigma, sched, rng, clip_x0=clip_x0)
    return h
