"""Stage-1 estimation: SOMP over the whitened model, baselines, image packing.

All subcarriers share one sparse support in the angle-distance domain, so the
greedy selection scores each atom by the summed absolute correlation against
every subcarrier's residual, then refits all selected atoms jointly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelMatrix, PathParams, steering_vector
from .measurement import CombinerSet, Observation
from .polardict import TransformMatrix
from .sysgeom import Geometry

RIDGE_COND_LIMIT = 1e12
RIDGE_SCALE = 1e-10


@dataclass
class SparseEstimate:
    support: list[int]
    coeffs: np.ndarray  # S x K, rows outside the support are zero
    residual_history: list[float]  # Frobenius norms, initial + after each refit
    meta: dict = field(default_factory=dict)


def default_tolerance(obs: Observation) -> float:
    """Residual floor 10% above the expected whitened-noise Frobenius norm."""
    rows, k = obs.measurements.shape
    return math.sqrt(obs.noise_power * rows * k) * 1.1


def somp_estimate(obs: Observation, max_atoms: int, tol: float = 0.0) -> SparseEstimate:
    """Greedy shared-support recovery from whitened measurements.

    Stops at max_atoms, or once the stacked residual norm drops to tol, or
    when no remaining atom correlates with the residual. Ties break toward
    the lowest atom index. A near-singular joint refit falls back to a
    trace-scaled ridge, recorded in meta.
    """
    r = obs.measurements
    phi = obs.sensing_matrix
    rows, s = phi.shape
    if max_atoms > rows:
        raise ValueError(f"max_atoms {max_atoms} exceeds measurement rows {rows}")

    support: list[int] = []
    residual = r.copy()
    history = [float(np.linalg.norm(residual))]
    ridge_iters: list[int] = []
    coeffs_sel = np.zeros((0, r.shape[1]), dtype=np.complex128)

    while len(support) < max_atoms and history[-1] > tol:
        scores = np.abs(phi.conj().T @ residual).sum(axis=1)
        if support:
            scores[support] = -1.0
        j = int(np.argmax(scores))  # argmax takes the first max: lowest index wins ties
        if scores[j] <= 0.0:
            break
        support.append(j)

        a = phi[:, support]
        gram = a.conj().T @ a
        rhs = a.conj().T @ r
        if np.linalg.cond(gram) > RIDGE_COND_LIMIT:
            gram = gram + (RIDGE_SCALE * np.trace(gram).real / len(support)) * np.eye(len(support))
            ridge_iters.append(len(support))
        coeffs_sel = np.linalg.solve(gram, rhs)
        residual = r - a @ coeffs_sel
        history.append(float(np.linalg.norm(residual)))

    coeffs = np.zeros((s, r.shape[1]), dtype=np.complex128)
    if support:
        coeffs[support] = coeffs_sel
    meta = {"ridge_iterations": ridge_iters, "stopped_on_tol": history[-1] <= tol}
    return SparseEstimate(support=support, coeffs=coeffs, residual_history=history, meta=meta)


def initial_estimate(transform: TransformMatrix | np.ndarray, est: SparseEstimate) -> ChannelMatrix:
    """Back-project the sparse coefficients: H_hat = P H_hat^AD."""
    p = transform.p if isinstance(transform, TransformMatrix) else transform
    if not est.support:
        return ChannelMatrix(entries=np.zeros((p.shape[0], est.coeffs.shape[1]), dtype=np.complex128))
    h = p[:, est.support] @ est.coeffs[est.support]
    return ChannelMatrix(entries=h, meta={"support": list(est.support)})


def baseline_estimate(
    raw: np.ndarray,
    combiners: CombinerSet,
    mode: str,
    paths: list[PathParams] | tuple[PathParams, ...] | None = None,
    geom: Geometry | None = None,
    whitener_inv: np.ndarray | None = None,
) -> ChannelMatrix:
    """Reference estimators.

    `ls` solves the unwhitened stacked system with the pseudo-inverse of C;
    when Q*N_RF < N that is the minimum-norm solution and the result is
    flagged. `genie_ls` is the bound: least squares restricted to the exact
    steering vectors at the true path parameters (whitened when a whitener
    is supplied, so it matches what SOMP sees).
    """
    c = combiners.stacked
    if mode == "ls":
        h = np.linalg.pinv(c) @ raw
        return ChannelMatrix(entries=h, meta={"underdetermined": c.shape[0] < c.shape[1]})
    if mode == "genie_ls":
        if paths is None or geom is None:
            raise ValueError("genie_ls needs the true paths and geometry")
        steer = np.stack([steering_vector(p.angle, p.distance, "exact", geom) for p in paths], axis=1)
        basis = c @ steer
        target = raw
        if whitener_inv is not None:
            basis = whitener_inv @ basis
            target = whitener_inv @ raw
        coef, *_ = np.linalg.lstsq(basis, target, rcond=None)
        return ChannelMatrix(entries=steer @ coef, meta={"support_size": steer.shape[1]})
    raise ValueError(f"unknown baseline mode {mode!r}")


def pack_image(h: ChannelMatrix | np.ndarray) -> np.ndarray:
    """Complex N x K -> real (2, N, K): channel 0 real part, channel 1 imaginary."""
    entries = h.entries if isinstance(h, ChannelMatrix) else h
    return np.stack([entries.real, entries.imag], axis=0)


def unpack_image(img: np.ndarray) -> np.ndarray:
    """Exact inverse of pack_image."""
    if img.shape[0] != 2:
        raise ValueError(f"expected 2 leading channels, got {img.shape[0]}")
    return img[0] + 1j * img[1]
