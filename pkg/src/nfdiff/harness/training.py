"""Training loop for the conditional denoiser, EMA, checkpoint persistence.

Checkpoints are a directory: manifest.json plus one raw little-endian float32
file per named parameter, in raw/ and ema/ sets. Loading rebuilds the network
from the recorded config and validates every array shape against it.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from ..denoiser import ConditionalDenoiser, DenoiserConfig
from ..diffusion import NoiseSchedule, linear_schedule, training_loss
from .dataset import Dataset, normalize

MANIFEST_NAME = "manifest.json"


class EMA:
    """Exponential moving average of parameters: shadow = d*shadow + (1-d)*new."""

    def __init__(self, model: torch.nn.Module, decay: float) -> None:
        if not 0.0 <= decay < 1.0:
            raise ValueError("EMA decay must lie in [0, 1)")
        self.decay = decay
        self.shadow = {k: v.detach().clone() for k, v in model.state_dict().items()}

    @torch.no_grad()
    def update(self, model: torch.nn.Module) -> None:
        for k, v in model.state_dict().items():
            if v.dtype.is_floating_point:
                self.shadow[k].mul_(self.decay).add_(v, alpha=1.0 - self.decay)
            else:
                self.shadow[k].copy_(v)

    def copy_to(self, model: torch.nn.Module) -> None:
        model.load_state_dict(self.shadow)


@dataclass
class TrainOptions:
    iters: int = 10_000
    batch: int = 64
    lr: float = 1e-4
    ema: float = 0.9999
    seed: int = 0
    log_every: int = 0  # 0 silences progress prints


@dataclass
class TrainState:
    model: ConditionalDenoiser
    ema: EMA
    optimizer: torch.optim.Adam
    step: int
    norm_min: float
    norm_max: float
    denoiser_cfg: DenoiserConfig
    schedule: NoiseSchedule
    schedule_bounds: tuple[float, float]
    trained_shape: tuple[int, int]
    system_config: dict
    loss_history: list[float] = field(default_factory=list)

    def ema_model(self) -> ConditionalDenoiser:
        model = ConditionalDenoiser(self.denoiser_cfg)
        self.ema.copy_to(model)
        model.eval()
        return model


def train(
    dataset: Dataset,
    denoiser_cfg: DenoiserConfig,
    sched: NoiseSchedule,
    opts: TrainOptions,
    schedule_bounds: tuple[float, float] = (1e-4, 0.02),
    out_dir: str | None = None,
) -> TrainState:
    """Noise-prediction training: random step, random noise, Adam descent.

    Every iteration draws a batch from the (normalized) training split, a
    uniform step t in 1..T per sample, fresh standard normal noise, and
    descends the mean squared error between that noise and the prediction.
    """
    lo, hi = dataset.norm_bounds
    side_np, target_np = dataset.split("train")
    if side_np.shape[0] == 0:
        raise ValueError("dataset has an empty training split")
    side_all = torch.from_numpy(normalize(side_np, lo, hi).astype(np.float32))
    target_all = torch.from_numpy(normalize(target_np, lo, hi).astype(np.float32))

    torch.manual_seed(opts.seed)  # parameter init + dropout stream
    model = ConditionalDenoiser(denoiser_cfg)
    model.train()
    optimizer = torch.optim.Adam(model.parameters(), lr=opts.lr)
    ema = EMA(model, opts.ema)

    draw_rng = np.random.default_rng([opts.seed, 0x726177])
    noise_gen = torch.Generator().manual_seed(opts.seed + 1)
    timesteps = sched.timesteps
    n_train = side_all.shape[0]

    def denoiser_fn(side, h_t, t):
        return model(side, h_t, torch.as_tensor(t, dtype=h_t.dtype))

    losses = []
    for it in range(opts.iters):
        idx = draw_rng.integers(0, n_train, size=opts.batch)
        t = draw_rng.integers(1, timesteps + 1, size=opts.batch)
        h0 = target_all[idx]
        side = side_all[idx]
        eps = torch.randn(h0.shape, generator=noise_gen)

        loss = training_loss(denoiser_fn, h0, side, t, eps, sched)
        if not torch.isfinite(loss):
            raise RuntimeError(f"non-finite loss {loss.item()} at iteration {it + 1}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        ema.update(model)
        losses.append(float(loss.item()))
        if opts.log_every and (it + 1) % opts.log_every == 0:
            recent = np.mean(losses[-opts.log_every :])
            print(f"iter {it + 1}/{opts.iters}  loss {recent:.5f}")

    state = TrainState(
        model=model,
        ema=ema,
        optimizer=optimizer,
        step=opts.iters,
        norm_min=lo,
        norm_max=hi,
        denoiser_cfg=denoiser_cfg,
        schedule=sched,
        schedule_bounds=schedule_bounds,
        trained_shape=(side_np.shape[2], side_np.shape[3]),
        system_config=dataset.manifest.get("config", {}),
        loss_history=losses,
    )
    if out_dir is not None:
        save_checkpoint(state, out_dir)
    return state


def save_checkpoint(state: TrainState, out_dir: str) -> None:
    os.makedirs(os.path.join(out_dir, "raw"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "ema"), exist_ok=True)

    params = []
    raw_state = state.model.state_dict()
    for name, tensor in raw_state.items():
        arr = tensor.detach().cpu().numpy()
        params.append({"name": name, "shape": list(arr.shape)})
        arr.astype("<f4").tofile(os.path.join(out_dir, "raw", f"{name}.f32"))
        state.ema.shadow[name].cpu().numpy().astype("<f4").tofile(
            os.path.join(out_dir, "ema", f"{name}.f32")
        )

    manifest = {
        "format_version": 1,
        "dtype": "float32 little-endian",
        "params": params,
        "denoiser": asdict(state.denoiser_cfg),
        "schedule": {
            "timesteps": state.schedule.timesteps,
            "beta_start": state.schedule_bounds[0],
            "beta_end": state.schedule_bounds[1],
            "spacing": "linear",
        },
        "step": state.step,
        "normalization": {"min": state.norm_min, "max": state.norm_max},
        "trained_shape": list(state.trained_shape),
        "config": state.system_config,
    }
    with open(os.path.join(out_dir, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def _load_param_set(directory: str, model: ConditionalDenoiser, params: list[dict]) -> None:
    expected = model.state_dict()
    names = {p["name"] for p in params}
    if names != set(expected):
        missing = sorted(set(expected) - names)
        extra = sorted(names - set(expected))
        raise ValueError(f"checkpoint/config mismatch: missing={missing[:3]} extra={extra[:3]}")
    loaded = {}
    for p in params:
        arr = np.fromfile(os.path.join(directory, f"{p['name']}.f32"), dtype="<f4")
        shape = tuple(p["shape"])
        if math.prod(shape) != arr.size or tuple(expected[p["name"]].shape) != shape:
            raise ValueError(f"shape mismatch for parameter {p['name']}")
        loaded[p["name"]] = torch.from_numpy(arr.reshape(shape).copy())
    model.load_state_dict(loaded)


def load_checkpoint(path: str) -> tuple[ConditionalDenoiser, ConditionalDenoiser, dict, NoiseSchedule]:
    """Rebuild (raw model, EMA model, manifest, schedule) from a checkpoint dir."""
    with open(os.path.join(path, MANIFEST_NAME), encoding="utf-8") as fh:
        manifest = json.load(fh)
    den = dict(manifest["denoiser"])
    for key in ("channel_mult", "attention"):
        if key in den and isinstance(den[key], list):
            den[key] = tuple(den[key])
    cfg = DenoiserConfig(**den)

    model = ConditionalDenoiser(cfg)
    ema_model = ConditionalDenoiser(cfg)
    _load_param_set(os.path.join(path, "raw"), model, manifest["params"])
    _load_param_set(os.path.join(path, "ema"), ema_model, manifest["params"])
    model.eval()
    ema_model.eval()

    s = manifest["schedule"]
    sched = linear_schedule(s["timesteps"], s["beta_start"], s["beta_end"])
    return model, ema_model, manifest, sched
