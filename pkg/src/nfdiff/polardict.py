"""Joint angle-distance sampling grid and the transform matrix P.

Angles are sampled uniformly in sin(phi); distances per angle follow the
polar-codebook rule of sampling uniformly in reciprocal distance, with ring s
at
    d_{n,s} = N^2 d_a^2 cos^2(phi_n) / (2 beta^2 lambda_c s),
plus one far-field atom (planar column) per angle so the dictionary spans
both regimes. beta controls ring density (coherence between neighbors).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import steering_vector
from .sysgeom import Geometry, SystemConfig

DEFAULT_BETA = 1.2
DEFAULT_ATOM_BUDGET = 500_000
DEFAULT_DISTANCE_FLOOR = 0.05  # meters; rings below this are physically silly


@dataclass(frozen=True)
class PolarGrid:
    angles: np.ndarray  # (N_ang,), strictly increasing, radians
    distances: tuple[np.ndarray, ...]  # per angle; entry 0 is inf (far-field atom)
    d_min: float
    beta: float

    @property
    def atoms_per_angle(self) -> np.ndarray:
        return np.array([len(d) for d in self.distances])

    @property
    def total_atoms(self) -> int:
        return int(self.atoms_per_angle.sum())


@dataclass(frozen=True)
class TransformMatrix:
    p: np.ndarray  # complex, N x S, unit-norm columns
    angle_index: np.ndarray  # (S,) int, column -> angle
    dist_index: np.ndarray  # (S,) int, column -> distance slot within the angle
    grid: PolarGrid

    @property
    def n_atoms(self) -> int:
        return self.p.shape[1]

    def column_params(self, j: int) -> tuple[float, float]:
        """(angle, distance) of column j; distance is inf for far-field atoms."""
        a = int(self.angle_index[j])
        return float(self.grid.angles[a]), float(self.grid.distances[a][self.dist_index[j]])


def build_grid(
    cfg: SystemConfig,
    geom: Geometry,
    d_min: float,
    beta: float = DEFAULT_BETA,
    atom_budget: int = DEFAULT_ATOM_BUDGET,
    distance_floor: float = DEFAULT_DISTANCE_FLOOR,
) -> PolarGrid:
    """Lay out N angles x (far-field atom + distance rings >= d_min)."""
    if d_min <= 0 or beta <= 0:
        raise ValueError("d_min and beta must be positive")
    if d_min < distance_floor:
        raise ValueError(f"d_min {d_min} below the physical floor {distance_floor}")

    n = cfg.n_antennas
    sines = -1.0 + 2.0 * np.arange(n, dtype=np.float64) / n  # uniform in sin, [-1, 1)
    angles = np.arcsin(sines)

    scale = n**2 * geom.spacing**2 / (2.0 * beta**2 * geom.wavelength)
    distances = []
    total = 0
    for phi in angles:
        ring_scale = scale * math.cos(phi) ** 2
        s_max = int(ring_scale / d_min) if ring_scale > 0 else 0
        rings = ring_scale / np.arange(1, s_max + 1, dtype=np.float64)
        dists = np.concatenate(([np.inf], rings))
        total += len(dists)
        if total > atom_budget:
            raise ValueError(f"grid exceeds atom budget {atom_budget}")
        distances.append(dists)

    return PolarGrid(angles=angles, distances=tuple(distances), d_min=d_min, beta=beta)


def build_transform(grid: PolarGrid, geom: Geometry) -> TransformMatrix:
    """Stack the steering columns: fresnel at each ring, planar for far field."""
    cols = []
    ang_idx = []
    dst_idx = []
    for a, phi in enumerate(grid.angles):
        for s, dist in enumerate(grid.distances[a]):
            if math.isinf(dist):
                cols.append(steering_vector(float(phi), math.inf, "planar", geom))
            else:
                cols.append(steering_vector(float(phi), float(dist), "fresnel", geom))
            ang_idx.append(a)
            dst_idx.append(s)
    p = np.stack(cols, axis=1)
    return TransformMatrix(
        p=p,
        angle_index=np.array(ang_idx, dtype=np.int64),
        dist_index=np.array(dst_idx, dtype=np.int64),
        grid=grid,
    )


def synthesize(transform: TransformMatrix | np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """P @ coeffs for a length-S coefficient vector (or S x K matrix)."""
    p = transform.p if isinstance(transform, TransformMatrix) else transform
    if coeffs.shape[0] != p.shape[1]:
        raise ValueError(f"coefficient length {coeffs.shape[0]} != atom count {p.shape[1]}")
    return p @ coeffs
