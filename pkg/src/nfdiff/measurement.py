"""Hybrid-combining pilot observations and Cholesky whitening.

Each pilot slot q applies a random +-1/sqrt(N) combiner C_q to the antenna
signal, so the stacked noise is colored with block-diagonal covariance
sigma^2 * Bdiag(C_q C_q^H). Whitening solves against the per-block Cholesky
factors, after which the noise is white with power sigma^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .polardict import TransformMatrix
from .sysgeom import SystemConfig


@dataclass(frozen=True)
class CombinerSet:
    slots: np.ndarray  # (Q, N_RF, N), real entries +-1/sqrt(N)

    @property
    def n_slots(self) -> int:
        return self.slots.shape[0]

    @property
    def stacked(self) -> np.ndarray:
        """C: (Q*N_RF) x N."""
        q, n_rf, n = self.slots.shape
        return self.slots.reshape(q * n_rf, n)


@dataclass(frozen=True)
class Observation:
    """Whitened measurements plus everything needed to reuse the whitener."""

    measurements: np.ndarray  # R~: (Q*N_RF) x K
    sensing_matrix: np.ndarray  # Phi~ = Xi^-1 C P: (Q*N_RF) x S
    noise_power: float
    whitener: np.ndarray  # Xi, block-diagonal lower triangular
    whitener_inv: np.ndarray  # Xi^-1


def draw_combiners(cfg: SystemConfig, rng: np.random.Generator) -> CombinerSet:
    """I.i.d. equiprobable +-1/sqrt(N) entries for all Q slots."""
    signs = rng.integers(0, 2, size=(cfg.pilot_len, cfg.n_rf, cfg.n_antennas))
    slots = (2.0 * signs - 1.0) / math.sqrt(cfg.n_antennas)
    return CombinerSet(slots=slots)


def draw_unit_noise(
    combiners: CombinerSet, n_subcarriers: int, rng: np.random.Generator
) -> np.ndarray:
    """Unit-power circularly-symmetric antenna noise, one (N, K) slab per slot."""
    q, _, n = combiners.slots.shape
    shape = (q, n, n_subcarriers)
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def observe(
    h: np.ndarray,
    combiners: CombinerSet,
    noise_power: float,
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
) -> np.ndarray:
    """Stacked pilot observations r_k = C h_k + Bdiag(C_q) n_k, (Q*N_RF) x K.

    Noise is circularly-symmetric complex Gaussian with covariance
    noise_power * I at the antennas, then passed through the slot's combiner
    (which is what colors it). Pass `noise` (unit power, from
    draw_unit_noise) to reuse one draw across noise levels; otherwise it is
    drawn from rng per slot.
    """
    if noise_power < 0:
        raise ValueError("noise_power must be >= 0")
    q, n_rf, n = combiners.slots.shape
    if h.shape[0] != n:
        raise ValueError(f"channel has {h.shape[0]} rows, combiners expect {n}")
    k = h.shape[1]
    if noise is not None and noise.shape != (q, n, k):
        raise ValueError(f"noise shape {noise.shape} != {(q, n, k)}")

    out = np.empty((q * n_rf, k), dtype=np.complex128)
    for qi in range(q):
        x = h
        if noise_power > 0:
            if noise is not None:
                slab = noise[qi]
            elif rng is not None:
                slab = (rng.standard_normal((n, k)) + 1j * rng.standard_normal((n, k))) / math.sqrt(2.0)
            else:
                raise ValueError("noisy observation needs rng or a pre-drawn noise slab")
            x = h + math.sqrt(noise_power) * slab
        out[qi * n_rf : (qi + 1) * n_rf] = combiners.slots[qi] @ x
    return out


def whiten(
    raw: np.ndarray,
    combiners: CombinerSet,
    noise_power: float,
    transform: TransformMatrix | np.ndarray,
) -> Observation:
    """Apply the block Cholesky whitener to raw measurements and to C P.

    The covariance factors as sigma^2 Xi Xi^H with Xi = Bdiag(chol(C_q C_q^H)),
    so one triangular solve per slot whitens both the data and the sensing
    matrix. Fails loudly on a rank-deficient combiner block.
    """
    q, n_rf, _ = combiners.slots.shape
    p = transform.p if isinstance(transform, TransformMatrix) else transform
    sensing_raw = combiners.stacked @ p

    xi = np.zeros((q * n_rf, q * n_rf))
    meas = np.empty_like(raw)
    sensing = np.empty(sensing_raw.shape, dtype=np.complex128)
    for qi in range(q):
        c_q = combiners.slots[qi]
        gram = c_q @ c_q.conj().T  # real for the +-1/sqrt(N) combiners
        try:
            chol = np.linalg.cholesky(gram)
        except np.linalg.LinAlgError as exc:
            raise ValueError(f"combiner block q={qi + 1} is rank deficient") from exc
        rows = slice(qi * n_rf, (qi + 1) * n_rf)
        xi[rows, rows] = chol
        meas[rows] = scipy.linalg.solve_triangular(chol, raw[rows], lower=True)
        sensing[rows] = scipy.linalg.solve_triangular(chol, sensing_raw[rows], lower=True)

    xi_inv = scipy.linalg.solve_triangular(xi, np.eye(q * n_rf), lower=True)
    return Observation(
        measurements=meas,
        sensing_matrix=sensing,
        noise_power=float(noise_power),
        whitener=xi,
        whitener_inv=xi_inv,
    )
