"""Paired-dataset generation and the on-disk layout.

Each record runs the full stage-1 pipeline (channel -> observe -> whiten ->
SOMP -> back-projection) and stores the packed side/target image pair. Arrays
live in raw little-endian float32 files next to a JSON manifest; per-record
randomness derives from (master seed, record index) so regeneration is
byte-identical.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass

import numpy as np

from ..channel import PathParams, assemble_channel, draw_paths
from ..cs_init import default_tolerance, initial_estimate, pack_image, somp_estimate
from ..measurement import draw_combiners, observe, whiten
from ..polardict import DEFAULT_BETA, TransformMatrix, build_grid, build_transform
from ..sysgeom import SPEED_OF_LIGHT, SystemConfig, derive_geometry

MANIFEST_NAME = "manifest.json"
DTYPE_TAG = "float32 little-endian"
ON_GRID_COHERENCE_CAP = 0.5


@dataclass
class Dataset:
    side: np.ndarray  # (count, 2, N, K) float32
    target: np.ndarray
    manifest: dict

    @property
    def count(self) -> int:
        return self.side.shape[0]

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.manifest["splits"][name]
        return self.side[lo:hi], self.target[lo:hi]

    @property
    def norm_bounds(self) -> tuple[float, float]:
        norm = self.manifest["normalization"]
        return norm["min"], norm["max"]


def normalize(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Affine map sending [lo, hi] to [0, 1]; values outside pass through unclipped."""
    if not math.isfinite(lo) or not math.isfinite(hi) or hi <= lo:
        raise ValueError(f"degenerate normalization bounds ({lo}, {hi})")
    return (x - lo) / (hi - lo)


def denormalize(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return x * (hi - lo) + lo


def split_bounds(count: int) -> dict[str, tuple[int, int]]:
    """Contiguous train/val/test split in a 5:1:1 ratio."""
    n_val = count // 7
    n_test = count // 7
    n_train = count - n_val - n_test
    return {
        "train": (0, n_train),
        "val": (n_train, n_train + n_val),
        "test": (n_train + n_val, count),
    }


def _draw_on_grid_paths(
    cfg: SystemConfig, transform: TransformMatrix, rng: np.random.Generator
) -> tuple[list[PathParams], list[int]]:
    """Pick L well-separated finite-distance atoms and use them as paths."""
    finite = np.flatnonzero(transform.dist_index > 0)  # slot 0 is the far-field atom
    if len(finite) < cfg.n_paths:
        raise ValueError("grid has too few finite-distance atoms for on-grid paths")
    for _ in range(200):
        cols = rng.choice(finite, size=cfg.n_paths, replace=False)
        sub = transform.p[:, cols]
        gram = np.abs(sub.conj().T @ sub)
        np.fill_diagonal(gram, 0.0)
        if gram.max() <= ON_GRID_COHERENCE_CAP:
            break
    else:
        raise RuntimeError("could not find a well-separated on-grid support")
    gains = (rng.standard_normal(cfg.n_paths) + 1j * rng.standard_normal(cfg.n_paths)) / math.sqrt(2.0)
    paths = []
    for l, j in enumerate(cols):
        phi, dist = transform.column_params(int(j))
        paths.append(PathParams(gain=complex(gains[l]), angle=phi, distance=dist, is_los=(l == 0)))
    return paths, [int(j) for j in cols]


def _assemble_from_atoms(
    transform: TransformMatrix, cols: list[int], paths: list[PathParams], cfg: SystemConfig, freqs: np.ndarray
) -> np.ndarray:
    """Exactly grid-sparse channel: columns of P weighted by delay phasors."""
    steer = transform.p[:, cols]
    n_k = 2.0 * math.pi * freqs / SPEED_OF_LIGHT
    dists = np.array([p.distance for p in paths])[:, None]
    gains = np.array([p.gain for p in paths])[:, None]
    phasors = gains * np.exp(-1j * n_k[None, :] * dists)
    return math.sqrt(cfg.n_antennas / len(paths)) * (steer @ phasors)


def generate_dataset(
    cfg: SystemConfig,
    dist_range: tuple[float, float],
    snr_range_db: tuple[float, float] | None,
    count: int,
    out_dir: str,
    seed: int | None = None,
    d_min: float | None = None,
    beta: float = DEFAULT_BETA,
    on_grid: bool = False,
    somp_atoms: int | None = None,
) -> dict:
    """Generate `count` side/target pairs and write them under out_dir.

    snr_range_db of None means noiseless records (sigma^2 = 0). d_min defaults
    to half the lower end of dist_range so the ring grid reaches the sampled
    distances.
    """
    if count < 7:
        raise ValueError("count must be >= 7 so every split is non-empty")
    seed = cfg.rng_seed if seed is None else seed
    d_min = 0.5 * dist_range[0] if d_min is None else d_min

    geom = derive_geometry(cfg)
    grid = build_grid(cfg, geom, d_min=d_min, beta=beta)
    transform = build_transform(grid, geom)
    max_atoms = somp_atoms if somp_atoms is not None else cfg.n_paths

    n, k = cfg.n_antennas, cfg.n_subcarriers
    side = np.empty((count, 2, n, k), dtype=np.float32)
    target = np.empty((count, 2, n, k), dtype=np.float32)
    records = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        if on_grid:
            paths, cols = _draw_on_grid_paths(cfg, transform, rng)
            h = _assemble_from_atoms(transform, cols, paths, cfg, geom.subcarrier_freqs)
        else:
            paths = draw_paths(cfg, dist_range, rng)
            h = assemble_channel(paths, cfg, geom, "exact").entries

        if snr_range_db is None:
            snr_db, sigma2 = None, 0.0
        else:
            snr_db = float(rng.uniform(snr_range_db[0], snr_range_db[1]))
            sigma2 = 10.0 ** (-snr_db / 10.0)

        combiners = draw_combiners(cfg, rng)
        raw = observe(h, combiners, sigma2, rng)
        obs = whiten(raw, combiners, sigma2, transform)
        est = somp_estimate(obs, max_atoms=max_atoms, tol=default_tolerance(obs))
        side[i] = pack_image(initial_estimate(transform, est).entries)
        target[i] = pack_image(h)
        records.append({"snr_db": snr_db, "noise_power": sigma2})

    splits = split_bounds(count)
    lo_t, hi_t = splits["train"]
    train_block = np.concatenate([side[lo_t:hi_t], target[lo_t:hi_t]])
    norm = {"min": float(train_block.min()), "max": float(train_block.max())}

    manifest = {
        "format_version": 1,
        "dtype": DTYPE_TAG,
        "count": count,
        "shape": [2, n, k],
        "splits": {name: list(bounds) for name, bounds in splits.items()},
        "normalization": norm,
        "config": asdict(cfg),
        "dist_range": list(dist_range),
        "snr_range_db": None if snr_range_db is None else list(snr_range_db),
        "d_min": d_min,
        "beta": beta,
        "on_grid": on_grid,
        "somp_atoms": max_atoms,
        "seed": seed,
        "files": {"side": "side.f32", "target": "target.f32"},
        "records": records,
    }

    os.makedirs(out_dir, exist_ok=True)
    side.astype("<f4").tofile(os.path.join(out_dir, "side.f32"))
    target.astype("<f4").tofile(os.path.join(out_dir, "target.f32"))
    with open(os.path.join(out_dir, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return manifest


def load_dataset(path: str) -> Dataset:
    with open(os.path.join(path, MANIFEST_NAME), encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest["dtype"] != DTYPE_TAG:
        raise ValueError(f"unsupported dtype {manifest['dtype']!r}")
    shape = (manifest["count"], *manifest["shape"])
    side = np.fromfile(os.path.join(path, manifest["files"]["side"]), dtype="<f4").reshape(shape)
    target = np.fromfile(os.path.join(path, manifest["files"]["target"]), dtype="<f4").reshape(shape)
    return Dataset(side=side, target=target, manifest=manifest)
