"""NMSE evaluation, experiment sweeps, CSV/plot emission.

A sweep regenerates fresh test instances per grid point (seeds disjoint by
(seed, point, trial)), runs every requested method on the same instances,
and averages linear NMSE. Diffusion methods consume the SOMP estimate as
side information and sample once per instance.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from ..channel import assemble_channel, draw_paths
from ..cs_init import baseline_estimate, default_tolerance, initial_estimate, pack_image, somp_estimate, unpack_image
from ..diffusion import SamplerSpec, subsequence, sample
from ..measurement import draw_combiners, draw_unit_noise, observe, whiten
from ..polardict import DEFAULT_BETA, build_grid, build_transform
from ..sysgeom import SystemConfig, derive_geometry
from .dataset import denormalize, normalize
from .training import TrainState, load_checkpoint

AXES = ("snr", "antennas", "pilots", "distance", "sampling_steps")
METHODS = ("somp", "ls", "genie_ls", "gdm", "nm_gdm")
DIFFUSION_METHODS = ("gdm", "nm_gdm")
SAMPLE_CHUNK = 128


def nmse(h_true: np.ndarray, h_est: np.ndarray) -> float:
    """Mean over the batch of ||H - H^||_F^2 / ||H||_F^2 (linear scale)."""
    if h_true.shape != h_est.shape:
        raise ValueError(f"shape mismatch {h_true.shape} vs {h_est.shape}")
    t = h_true.reshape(-1, *h_true.shape[-2:]) if h_true.ndim > 2 else h_true[None]
    e = h_est.reshape(-1, *h_est.shape[-2:]) if h_est.ndim > 2 else h_est[None]
    denom = np.sum(np.abs(t) ** 2, axis=(1, 2))
    if np.any(denom == 0):
        raise ValueError("zero-norm ground truth")
    ratios = np.sum(np.abs(t - e) ** 2, axis=(1, 2)) / denom
    return float(ratios.mean())


def nmse_db(linear: float) -> float:
    return 10.0 * math.log10(linear)


@dataclass
class SweepResult:
    axis: str
    values: list[float]
    methods: list[str]
    nmse_linear: dict[str, list[float]]
    trials: int
    meta: dict = field(default_factory=dict)

    def db(self, method: str) -> list[float]:
        return [nmse_db(v) for v in self.nmse_linear[method]]


def _resolve_checkpoint(checkpoint):
    """Accept a TrainState, a checkpoint directory, or a preloaded tuple."""
    if checkpoint is None:
        return None
    if isinstance(checkpoint, TrainState):
        sched = checkpoint.schedule
        return {
            "model": checkpoint.ema_model(),
            "sched": sched,
            "norm": (checkpoint.norm_min, checkpoint.norm_max),
            "shape": checkpoint.trained_shape,
        }
    if isinstance(checkpoint, str):
        _, ema_model, manifest, sched = load_checkpoint(checkpoint)
        return {
            "model": ema_model,
            "sched": sched,
            "norm": (manifest["normalization"]["min"], manifest["normalization"]["max"]),
            "shape": tuple(manifest["trained_shape"]),
        }
    raise TypeError(f"unsupported checkpoint handle {type(checkpoint)!r}")


def _point_config(cfg: SystemConfig, axis: str, value: float) -> SystemConfig:
    if axis == "antennas":
        return cfg.replace(n_antennas=int(value))
    if axis == "pilots":
        return cfg.replace(pilot_len=int(value))
    return cfg


def _diffusion_refine(ck: dict, sides: np.ndarray, spec: SamplerSpec, seed_int: int) -> np.ndarray:
    """Batch-sample refined channels from packed (unnormalized) side images.

    Sampling clamps the running clean-image prediction to the normalized data
    range: the early reverse jumps divide by a near-zero signal coefficient,
    and without the clamp small prediction errors there send the whole
    trajectory off scale.
    """
    lo, hi = ck["norm"]
    model = ck["model"]
    out = np.empty_like(sides)
    gen = torch.Generator().manual_seed(seed_int)

    def denoiser_fn(side_b, h_b, t):
        return model(side_b, h_b, torch.as_tensor(float(t)))

    with torch.no_grad():
        for lo_i in range(0, sides.shape[0], SAMPLE_CHUNK):
            chunk = sides[lo_i : lo_i + SAMPLE_CHUNK]
            side_t = torch.from_numpy(normalize(chunk, lo, hi).astype(np.float32))
            img = sample(denoiser_fn, side_t, ck["sched"], spec, rng=gen, clip_x0=True)
            out[lo_i : lo_i + chunk.shape[0]] = denormalize(img.numpy(), lo, hi)
    return out


def evaluate_sweep(
    cfg: SystemConfig,
    axis: str,
    grid: list[float],
    methods: list[str],
    trials: int,
    dist_range: tuple[float, float],
    checkpoint=None,
    seed: int = 0,
    snr_db: float = 5.0,
    d_min: float | None = None,
    beta: float = DEFAULT_BETA,
    steps: int = 50,
    sigma: str = "zero",
) -> SweepResult:
    """Run every method over the axis grid; paired instances per point."""
    if axis not in AXES:
        raise ValueError(f"unknown axis {axis!r}; choose from {AXES}")
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}")
    ck = _resolve_checkpoint(checkpoint)
    wants_diffusion = [m for m in methods if m in DIFFUSION_METHODS]
    if wants_diffusion and ck is None:
        raise ValueError(f"methods {wants_diffusion} need a checkpoint")

    result = SweepResult(
        axis=axis,
        values=[float(v) for v in grid],
        methods=list(methods),
        nmse_linear={m: [] for m in methods},
        trials=trials,
        meta={},
    )

    for p_idx, value in enumerate(grid):
        point_cfg = _point_config(cfg, axis, value)
        geom = derive_geometry(point_cfg)
        if wants_diffusion and (point_cfg.n_antennas, point_cfg.n_subcarriers) != tuple(ck["shape"]):
            raise ValueError(
                f"checkpoint trained at {tuple(ck['shape'])} cannot evaluate "
                f"({point_cfg.n_antennas}, {point_cfg.n_subcarriers}); retraining is out of scope"
            )

        point_dist = dist_range
        if axis == "distance":
            point_dist = (0.9 * value, 1.1 * value)
            result.meta.setdefault("fraunhofer_m", []).append(geom.fraunhofer_m)
        point_snr = value if axis == "snr" else snr_db
        sigma2 = 10.0 ** (-point_snr / 10.0)
        point_steps = int(value) if axis == "sampling_steps" else steps

        grid_dmin = 0.5 * point_dist[0] if d_min is None else d_min
        polar = build_grid(point_cfg, geom, d_min=grid_dmin, beta=beta)
        transform = build_transform(polar, geom)

        # snr and sampling_steps leave the instance distribution untouched, so
        # the same channel/combiner/noise draws serve every grid point and the
        # comparison across points is paired (common random numbers).
        shared_instances = axis in ("snr", "sampling_steps")

        truths = np.empty((trials, point_cfg.n_antennas, point_cfg.n_subcarriers), dtype=np.complex128)
        sides = np.empty((trials, 2, point_cfg.n_antennas, point_cfg.n_subcarriers), dtype=np.float32)
        per_method: dict[str, list[float]] = {m: [] for m in methods if m not in DIFFUSION_METHODS}
        for trial in range(trials):
            rng = np.random.default_rng([seed, trial] if shared_instances else [seed, p_idx, trial])
            paths = draw_paths(point_cfg, point_dist, rng)
            h = assemble_channel(paths, point_cfg, geom, "exact").entries
            combiners = draw_combiners(point_cfg, rng)
            unit_noise = draw_unit_noise(combiners, point_cfg.n_subcarriers, rng)
            raw = observe(h, combiners, sigma2, noise=unit_noise)
            obs = whiten(raw, combiners, sigma2, transform)
            est = somp_estimate(obs, max_atoms=point_cfg.n_paths, tol=default_tolerance(obs))
            h_somp = initial_estimate(transform, est).entries

            truths[trial] = h
            sides[trial] = pack_image(h_somp)
            if "somp" in per_method:
                per_method["somp"].append(nmse(h, h_somp))
            if "ls" in per_method:
                per_method["ls"].append(nmse(h, baseline_estimate(raw, combiners, "ls").entries))
            if "genie_ls" in per_method:
                genie = baseline_estimate(
                    raw, combiners, "genie_ls", paths=paths, geom=geom, whitener_inv=obs.whitener_inv
                )
                per_method["genie_ls"].append(nmse(h, genie.entries))

        for m, vals in per_method.items():
            result.nmse_linear[m].append(float(np.mean(vals)))

        for m in wants_diffusion:
            timesteps = ck["sched"].timesteps
            if m == "gdm":
                spec = SamplerSpec(steps=subsequence(timesteps, timesteps), sigma="ddpm")
            else:
                spec = SamplerSpec(steps=subsequence(timesteps, point_steps), sigma=sigma)
            seed_key = [seed, METHODS.index(m)] if shared_instances else [seed, p_idx, METHODS.index(m)]
            seed_int = int(np.random.SeedSequence(seed_key).generate_state(1)[0])
            refined = _diffusion_refine(ck, sides, spec, seed_int)
            per_inst = [nmse(truths[i], unpack_image(refined[i])) for i in range(trials)]
            result.nmse_linear[m].append(float(np.mean(per_inst)))

    return result


def refine_batch(
    cfg: SystemConfig,
    checkpoint,
    count: int,
    snr_db: float,
    dist_range: tuple[float, float],
    steps: int = 50,
    sigma: str = "zero",
    seed: int = 0,
    d_min: float | None = None,
    beta: float = DEFAULT_BETA,
) -> dict:
    """Two-stage estimation on `count` fresh instances; keeps the estimates.

    Returns ground truth, the SOMP stage-1 estimate, and the refined channels
    as complex (count, N, K) arrays plus both mean NMSEs.
    """
    ck = _resolve_checkpoint(checkpoint)
    if ck is None:
        raise ValueError("refinement needs a checkpoint")
    if (cfg.n_antennas, cfg.n_subcarriers) != tuple(ck["shape"]):
        raise ValueError(
            f"checkpoint trained at {tuple(ck['shape'])} cannot refine "
            f"({cfg.n_antennas}, {cfg.n_subcarriers})"
        )
    geom = derive_geometry(cfg)
    grid_dmin = 0.5 * dist_range[0] if d_min is None else d_min
    polar = build_grid(cfg, geom, d_min=grid_dmin, beta=beta)
    transform = build_transform(polar, geom)
    sigma2 = 10.0 ** (-snr_db / 10.0)

    truths = np.empty((count, cfg.n_antennas, cfg.n_subcarriers), dtype=np.complex128)
    somp = np.empty_like(truths)
    sides = np.empty((count, 2, cfg.n_antennas, cfg.n_subcarriers), dtype=np.float32)
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        paths = draw_paths(cfg, dist_range, rng)
        h = assemble_channel(paths, cfg, geom, "exact").entries
        combiners = draw_combiners(cfg, rng)
        raw = observe(h, combiners, sigma2, rng)
        obs = whiten(raw, combiners, sigma2, transform)
        est = somp_estimate(obs, max_atoms=cfg.n_paths, tol=default_tolerance(obs))
        truths[i] = h
        somp[i] = initial_estimate(transform, est).entries
        sides[i] = pack_image(somp[i])

    timesteps = ck["sched"].timesteps
    spec = SamplerSpec(steps=subsequence(timesteps, steps), sigma=sigma)
    seed_int = int(np.random.SeedSequence([seed, 0x7266]).generate_state(1)[0])
    refined_img = _diffusion_refine(ck, sides, spec, seed_int)
    refined = np.stack([unpack_image(refined_img[i]) for i in range(count)])
    return {
        "truth": truths,
        "somp": somp,
        "refined": refined,
        "nmse_somp": nmse(truths, somp),
        "nmse_refined": nmse(truths, refined),
    }


def emit_results(result: SweepResult, fmt: str, out_path: str) -> str:
    """Write the sweep as CSV or as a dB-scale plot; returns the written path."""
    if fmt == "csv":
        lines = [f"# axis: {result.axis}", "axis,method,nmse_linear,nmse_db,trials"]
        for i, v in enumerate(result.values):
            for m in result.methods:
                lin = result.nmse_linear[m][i]
                lines.append(f"{v:.17g},{m},{lin:.17g},{nmse_db(lin):.17g},{result.trials}")
        os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        return out_path
    if fmt == "plot":
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6.5, 4.5))
        for m in result.methods:
            ax.plot(result.values, result.db(m), marker="o", label=m)
        ax.set_xlabel(result.axis)
        ax.set_ylabel("NMSE (dB)")
        ax.grid(True, alpha=0.4)
        ax.legend()
        fig.tight_layout()
        os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
        fig.savefig(out_path, dpi=150)
        plt.close(fig)
        return out_path
    raise ValueError(f"unknown format {fmt!r}")


def load_results(path: str) -> SweepResult:
    """Inverse of the CSV emitter (round-trips a SweepResult exactly)."""
    axis = "unknown"
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("# axis:"):
                    axis = line.split(":", 1)[1].strip()
                continue
            if line.startswith("axis,"):
                continue
            value, method, lin, _db, trials = line.split(",")
            rows.append((float(value), method, float(lin), int(trials)))

    values: list[float] = []
    methods: list[str] = []
    for v, m, _, _ in rows:
        if v not in values:
            values.append(v)
        if m not in methods:
            methods.append(m)
    linear = {m: [math.nan] * len(values) for m in methods}
    trials = rows[0][3] if rows else 0
    for v, m, lin, _ in rows:
        linear[m][values.index(v)] = lin
    return SweepResult(
        axis=axis, values=values, methods=methods, nmse_linear=linear, trials=trials
    )
