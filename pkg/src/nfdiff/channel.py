"""Near-field multipath channel synthesis.

Ground-truth channels use per-antenna spherical-wavefront distances; the
dictionary side of the pipeline uses the second-order Fresnel approximation,
so the two deliberately disagree off-grid. The planar model is the far-field
limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .sysgeom import SPEED_OF_LIGHT, Geometry, SystemConfig

STEERING_MODELS = ("exact", "fresnel", "planar")


@dataclass(frozen=True)
class PathParams:
    gain: complex  # complex path gain g_l, unit-variance draw by default
    angle: float  # arrival angle phi_l in [-pi/2, pi/2], radians
    distance: float  # BS-to-scatterer (or user) distance d_l, meters
    is_los: bool = False  # true only for the first path


@dataclass
class ChannelMatrix:
    """Complex N x K frequency-domain channel with its provenance."""

    entries: np.ndarray
    cfg: SystemConfig | None = None
    paths: tuple[PathParams, ...] = ()
    meta: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape


def steering_vector(phi: float, dist: float, model: str, geom: Geometry) -> np.ndarray:
    """Unit-norm array response at angle phi / distance dist.

    `exact` evaluates the true per-antenna distance
        d^(n) = sqrt(d^2 + (delta_n d_a)^2 - 2 d delta_n d_a sin(phi)),
    `fresnel` its second-order expansion
        d^(n) - d ~= (delta_n d_a)^2 cos^2(phi)/(2d) - delta_n d_a sin(phi),
    and `planar` the distance-free far-field vector. All three return
    (1/sqrt(N)) exp(-j 2 pi (d^(n) - d) / lambda) elementwise.
    """
    if model not in STEERING_MODELS:
        raise ValueError(f"unknown steering model {model!r}")
    if math.isnan(phi) or (model != "planar" and math.isnan(dist)):
        raise ValueError("NaN steering input")
    if not -math.pi / 2 <= phi <= math.pi / 2:
        raise ValueError(f"angle {phi} outside [-pi/2, pi/2]")

    offsets = geom.antenna_offsets  # delta_n * d_a, meters
    n = offsets.shape[0]
    wavenum = 2.0 * math.pi / geom.wavelength

    if model == "planar":
        # Far-field limit: linear phase progression over the element index.
        # At half-wavelength spacing this is the classic exp(j pi n sin phi).
        idx = np.arange(n, dtype=np.float64)
        phase = wavenum * geom.spacing * idx * math.sin(phi)
        return np.exp(1j * phase) / math.sqrt(n)

    if dist <= 0:
        raise ValueError(f"near-field model needs dist > 0, got {dist}")

    if model == "exact":
        sq = dist**2 + offsets**2 - 2.0 * dist * offsets * math.sin(phi)
        path_diff = np.sqrt(np.maximum(sq, 0.0)) - dist
    else:  # fresnel
        path_diff = offsets**2 * math.cos(phi) ** 2 / (2.0 * dist) - offsets * math.sin(phi)

    return np.exp(-1j * wavenum * path_diff) / math.sqrt(n)


def draw_paths(
    cfg: SystemConfig, dist_range: tuple[float, float], rng: np.random.Generator
) -> list[PathParams]:
    """Draw L paths: uniform angles, uniform distances, CN(0,1) gains."""
    d_lo, d_hi = dist_range
    if not 0 < d_lo <= d_hi:
        raise ValueError(f"invalid distance range ({d_lo}, {d_hi})")
    gains = (rng.standard_normal(cfg.n_paths) + 1j * rng.standard_normal(cfg.n_paths)) / math.sqrt(2.0)
    angles = rng.uniform(-math.pi / 2, math.pi / 2, cfg.n_paths)
    dists = rng.uniform(d_lo, d_hi, cfg.n_paths)
    return [
        PathParams(gain=complex(gains[l]), angle=float(angles[l]), distance=float(dists[l]), is_los=(l == 0))
        for l in range(cfg.n_paths)
    ]


def assemble_channel(
    paths: list[PathParams] | tuple[PathParams, ...],
    cfg: SystemConfig,
    geom: Geometry,
    steering_model: str = "exact",
) -> ChannelMatrix:
    """Sum the per-path rank-one contributions over all subcarriers.

    Column k is sqrt(N/L) * sum_l g_l exp(-j n_k d_l) a(phi_l, d_l) with
    n_k = 2 pi f_k / c; the steering vector itself is frequency-independent,
    so subcarriers share it and differ only by the delay phasor.
    """
    if not paths:
        raise ValueError("need at least one path")
    n = cfg.n_antennas
    l_count = len(paths)

    steer = np.stack(
        [steering_vector(p.angle, p.distance, steering_model, geom) for p in paths],
        axis=1,
    )  # N x L
    n_k = 2.0 * math.pi * geom.subcarrier_freqs / SPEED_OF_LIGHT  # (K,)
    dists = np.array([p.distance for p in paths])[:, None]  # L x 1
    gains = np.array([p.gain for p in paths])[:, None]
    phasors = gains * np.exp(-1j * n_k[None, :] * dists)  # L x K

    h = math.sqrt(n / l_count) * (steer @ phasors)
    return ChannelMatrix(entries=h, cfg=cfg, paths=tuple(paths))
