"""Command-line front end: dataset generation, training, refinement, sweeps."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict

from .denoiser import DenoiserConfig
from .diffusion import linear_schedule
from .harness.dataset import generate_dataset, load_dataset
from .harness.evaluate import AXES, METHODS, emit_results, evaluate_sweep, load_results, nmse_db, refine_batch
from .harness.training import TrainOptions, train
from .polardict import DEFAULT_BETA
from .sysgeom import SystemConfig, load_config


def _add_common(sub: argparse.ArgumentParser, out_default: str) -> None:
    sub.add_argument("--config", help="system config JSON; omitted means built-in defaults")
    sub.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    sub.add_argument("--out", default=out_default, help=f"output directory (default {out_default})")


def _load_cfg(args: argparse.Namespace) -> SystemConfig:
    return load_config(args.config) if args.config else SystemConfig()


def _parse_mult(text: str) -> tuple[int, int, int, int]:
    parts = text.split(":")
    if len(parts) != 4 or not all(p.strip().isdigit() for p in parts):
        raise argparse.ArgumentTypeError(f"expected 4 colon-separated integers, got {text!r}")
    return tuple(int(p) for p in parts)  # type: ignore[return-value]


def _parse_grid(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nfdiff",
        description="Near-field channel estimation: SOMP initialization + diffusion refinement.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    gen = subs.add_parser("generate-dataset", help="simulate channels and write side/target pairs")
    _add_common(gen, "dataset")
    gen.add_argument("--count", type=int, default=2000, help="record count (default 2000)")
    gen.add_argument("--dist-min", type=float, default=5.0, help="nearest path distance, m")
    gen.add_argument("--dist-max", type=float, default=30.0, help="farthest path distance, m")
    gen.add_argument("--snr-min", type=float, default=0.0, help="lower SNR bound, dB")
    gen.add_argument("--snr-max", type=float, default=20.0, help="upper SNR bound, dB")
    gen.add_argument("--noiseless", action="store_true", help="disable measurement noise")
    gen.add_argument("--d-min", type=float, default=None, help="dictionary distance floor, m")
    gen.add_argument("--beta", type=float, default=DEFAULT_BETA, help="ring oversampling factor")
    gen.add_argument("--on-grid", action="store_true", help="draw paths exactly on dictionary atoms")
    gen.add_argument("--somp-atoms", type=int, default=None, help="stage-1 atom budget (default L)")

    tr = subs.add_parser("train", help="fit the conditional denoiser on a dataset")
    _add_common(tr, "checkpoint")
    tr.add_argument("--dataset", required=True, help="directory written by generate-dataset")
    tr.add_argument("--iters", type=int, default=10_000, help="gradient steps (default 10000)")
    tr.add_argument("--batch", type=int, default=64, help="batch size (default 64)")
    tr.add_argument("--lr", type=float, default=1e-4, help="Adam learning rate (default 1e-4)")
    tr.add_argument("--ema", type=float, default=0.9999, help="EMA decay (default 0.9999)")
    tr.add_argument("--c1", type=int, default=64, help="base channel count (default 64)")
    tr.add_argument(
        "--eta-c",
        type=_parse_mult,
        default=(1, 2, 2, 2),
        help="per-level channel ratio as c1 multiples, e.g. 1:2:2:2",
    )
    tr.add_argument("--n-rb", type=int, default=3, help="residual blocks per level (default 3)")
    tr.add_argument("--dropout", type=float, default=0.1, help="dropout rate (default 0.1)")
    tr.add_argument("--timesteps", type=int, default=1000, help="diffusion steps T (default 1000)")
    tr.add_argument("--beta1", type=float, default=1e-4, help="schedule start (default 1e-4)")
    tr.add_argument("--beta-t", type=float, default=0.02, help="schedule end (default 0.02)")
    tr.add_argument("--log-every", type=int, default=0, help="print loss every n iters (0 = quiet)")

    rf = subs.add_parser("refine", help="two-stage estimation on fresh instances")
    _add_common(rf, "refined")
    rf.add_argument("--checkpoint", required=True, help="trained checkpoint directory")
    rf.add_argument("--count", type=int, default=100, help="instance count (default 100)")
    rf.add_argument("--snr-db", type=float, default=5.0, help="measurement SNR, dB (default 5)")
    rf.add_argument("--dist-min", type=float, default=5.0)
    rf.add_argument("--dist-max", type=float, default=30.0)
    rf.add_argument("--steps", type=int, default=50, help="sampling steps S (default 50)")
    rf.add_argument("--sigma", choices=("zero", "ddpm"), default="zero", help="per-jump noise rule")
    rf.add_argument("--d-min", type=float, default=None)
    rf.add_argument("--beta", type=float, default=DEFAULT_BETA)

    ev = subs.add_parser("evaluate", help="NMSE sweep over a system axis")
    _add_common(ev, "results")
    ev.add_argument("--axis", required=True, choices=AXES)
    ev.add_argument("--grid", required=True, type=_parse_grid, help="comma-separated grid values")
    ev.add_argument(
        "--methods",
        default="somp,nm_gdm",
        help=f"comma-separated subset of {','.join(METHODS)}",
    )
    ev.add_argument("--trials", type=int, default=200, help="instances per grid point (default 200)")
    ev.add_argument("--checkpoint", default=None, help="needed for diffusion methods")
    ev.add_argument("--steps", type=int, default=50, help="sampling steps S (default 50)")
    ev.add_argument("--sigma", choices=("zero", "ddpm"), default="zero", help="per-jump noise rule")
    ev.add_argument("--snr-db", type=float, default=5.0, help="SNR for non-SNR axes (default 5)")
    ev.add_argument("--dist-min", type=float, default=5.0)
    ev.add_argument("--dist-max", type=float, default=30.0)
    ev.add_argument("--d-min", type=float, default=None)
    ev.add_argument("--beta", type=float, default=DEFAULT_BETA)
    ev.add_argument("--plot", action="store_true", help="also render results.png")

    pl = subs.add_parser("plot", help="render a results CSV as a dB-scale figure")
    pl.add_argument("results", help="CSV written by evaluate")
    pl.add_argument("--out", default=None, help="output image path (default alongside the CSV)")

    return parser


def _cmd_generate(args: argparse.Namespace) -> int:
    cfg = _load_cfg(args)
    snr_range = None if args.noiseless else (args.snr_min, args.snr_max)
    manifest = generate_dataset(
        cfg,
        (args.dist_min, args.dist_max),
        snr_range,
        args.count,
        args.out,
        seed=args.seed,
        d_min=args.d_min,
        beta=args.beta,
        on_grid=args.on_grid,
        somp_atoms=args.somp_atoms,
    )
    print(f"wrote {manifest['count']} records to {args.out} (shape {manifest['shape']})")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.dataset)
    if args.config:
        cfg = load_config(args.config)
        if asdict(cfg) != dataset.manifest.get("config"):
            raise SystemExit("--config disagrees with the config embedded in the dataset")
    denoiser_cfg = DenoiserConfig(
        base_channels=args.c1,
        channel_mult=args.eta_c,
        n_resblocks=args.n_rb,
        dropout=args.dropout,
    )
    sched = linear_schedule(args.timesteps, args.beta1, args.beta_t)
    opts = TrainOptions(
        iters=args.iters,
        batch=args.batch,
        lr=args.lr,
        ema=args.ema,
        seed=args.seed,
        log_every=args.log_every,
    )
    state = train(
        dataset, denoiser_cfg, sched, opts,
        schedule_bounds=(args.beta1, args.beta_t),
        out_dir=args.out,
    )
    tail = state.loss_history[-100:]
    print(f"trained {state.step} iters; final-100 mean loss {sum(tail) / len(tail):.5f}; saved to {args.out}")
    return 0


def _cmd_refine(args: argparse.Namespace) -> int:
    cfg = _load_cfg(args)
    out = refine_batch(
        cfg,
        args.checkpoint,
        args.count,
        args.snr_db,
        (args.dist_min, args.dist_max),
        steps=args.steps,
        sigma=args.sigma,
        seed=args.seed,
        d_min=args.d_min,
        beta=args.beta,
    )
    os.makedirs(args.out, exist_ok=True)
    for name in ("truth", "somp", "refined"):
        out[name].astype("<c16").tofile(os.path.join(args.out, f"{name}.c128"))
    summary = {
        "count": args.count,
        "snr_db": args.snr_db,
        "steps": args.steps,
        "sigma": args.sigma,
        "nmse_somp_db": nmse_db(out["nmse_somp"]),
        "nmse_refined_db": nmse_db(out["nmse_refined"]),
        "shape": list(out["truth"].shape),
        "dtype": "complex128 little-endian",
    }
    with open(os.path.join(args.out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    print(
        f"somp {summary['nmse_somp_db']:.2f} dB -> refined {summary['nmse_refined_db']:.2f} dB "
        f"over {args.count} instances at {args.snr_db:g} dB SNR"
    )
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _load_cfg(args)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    result = evaluate_sweep(
        cfg,
        args.axis,
        args.grid,
        methods,
        args.trials,
        (args.dist_min, args.dist_max),
        checkpoint=args.checkpoint,
        seed=args.seed,
        snr_db=args.snr_db,
        d_min=args.d_min,
        beta=args.beta,
        steps=args.steps,
        sigma=args.sigma,
    )
    csv_path = emit_results(result, "csv", os.path.join(args.out, "results.csv"))
    print(f"wrote {csv_path}")
    if args.plot:
        png_path = emit_results(result, "plot", os.path.join(args.out, "results.png"))
        print(f"wrote {png_path}")
    return 0


def _cmd_plot(args: argparse.Namespace) -> int:
    result = load_results(args.results)
    out = args.out or os.path.splitext(args.results)[0] + ".png"
    emit_results(result, "plot", out)
    print(f"wrote {out}")
    return 0


_COMMANDS = {
    "generate-dataset": _cmd_generate,
    "train": _cmd_train,
    "refine": _cmd_refine,
    "evaluate": _cmd_evaluate,
    "plot": _cmd_plot,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
