"""Command-line entry point.

    taylorcast <train|eval|predict|rollout|lab|gen-data>
               [--config PATH] [--seed N] [--out DIR] [--threads N] ...

Every command resolves its parameters as defaults <- config file <- flags,
writes the resolved set to <out>/run_config.txt, and emits deterministic
CSV/PGM artifacts: rerunning with the same configuration reproduces the same
bytes.  Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import analytic
from .baselines import PointEstimateForecaster
from .data import (
    ScalarFieldSpec,
    ShapeSceneSpec,
    VideoClip,
    generate_moving_shapes,
    generate_scalar_field,
    load_clip,
    make_training_set,
    save_clip,
    split_window,
    subsample,
)
from .forecast import RolloutPlan, predict_continuous, rollout_ssim_curve
from .io_utils import write_csv, write_pgm, write_ppm
from .metrics import MetricReport, fitting_window, mae, mse, psnr, ssim
from .model import TaylorForecaster, load_checkpoint, save_checkpoint, train_loop
from .seeding import derive_seed, rng_for


class UsageError(Exception):
    pass


class CliParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# Configuration resolution: defaults <- config file <- explicit flags
# ---------------------------------------------------------------------------


def parse_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, value = line.split("=", 1)
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def resolve_config(args: argparse.Namespace, defaults: dict) -> dict:
    resolved = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        for key, raw in parse_config_file(config_path).items():
            if key not in resolved:
                raise UsageError(f"unknown config key {key!r}")
            resolved[key] = _coerce_like(defaults[key], raw, key)
    for key in resolved:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            resolved[key] = flag_value
    return resolved


def _coerce_like(default, raw: str, key: str):
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(type(default[0])(v) for v in raw.split(","))
        return raw
    except ValueError as exc:
        raise UsageError(f"bad value for {key}: {raw!r} ({exc})") from None


def write_run_config(out_dir: str, resolved: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    lines = []
    for key in sorted(resolved):
        value = resolved[key]
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key}={value}")
    with open(os.path.join(out_dir, "run_config.txt"), "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Shared dataset plumbing
# ---------------------------------------------------------------------------

DATASET_DEFAULTS = dict(
    dataset="moving-shapes",
    grid=16,
    shapes=1,
    observe=10,
    horizon=10,
    rate=1,
    clips=128,
)


def scene_spec(resolved: dict, seed: int):
    if resolved["dataset"] == "moving-shapes":
        return ShapeSceneSpec(
            n_shapes=resolved["shapes"],
            grid=(resolved["grid"], resolved["grid"]),
            size_range=(max(resolved["grid"] / 8.0, 2.0), max(resolved["grid"] / 6.0, 2.8)),
            speed_range=(0.3, 1.2),
            seed=seed,
        )
    if resolved["dataset"] == "scalar-field":
        return ScalarFieldSpec(grid=(resolved["grid"], resolved["grid"]), seed=seed)
    raise UsageError(f"unknown dataset {resolved['dataset']!r}")


def build_dataset(resolved: dict, seed_label: str, master_seed: int, n_clips: int, threads: int):
    spec = scene_spec(resolved, 0)
    seed = derive_seed(master_seed, seed_label)

    def one(i: int):
        clip_seed = int(rng_for(seed, f"clip-{i}").integers(2**63))
        scene = dataclasses.replace(spec, seed=clip_seed)
        total = (resolved["observe"] + resolved["horizon"]) * resolved["rate"]
        if isinstance(scene, ShapeSceneSpec):
            clip = generate_moving_shapes(scene, total)
        else:
            clip = generate_scalar_field(scene, total)
        clip = subsample(clip, resolved["rate"])
        return split_window(clip, resolved["observe"], resolved["horizon"])

    with ThreadPoolExecutor(max_workers=max(threads, 1)) as pool:
        pairs = list(pool.map(one, range(n_clips)))
    windows = np.stack([p[0] for p in pairs])
    targets = np.stack([p[1] for p in pairs])
    return windows, targets


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    defaults = dict(
        DATASET_DEFAULTS,
        gamma=0,  # 0: per-dataset default (4 moving-shapes, 2 scalar-field)
        latent=16,
        spatial_down=2,
        encoder_depth=2,
        decoder_channels=(24, 12),
        lr=1e-4,
        epochs=50,
        batch=8,
        dtype="float64",
        scheduler_factor=0.5,
        scheduler_patience=20,
        resume="",
    )
    resolved = resolve_config(args, defaults)
    if resolved["gamma"] == 0:
        resolved["gamma"] = 2 if resolved["dataset"] == "scalar-field" else 4
    out = args.out
    write_run_config(out, {**resolved, "seed": args.seed, "command": "train"})

    X, y = build_dataset(resolved, "train-data", args.seed, resolved["clips"], args.threads)
    taus = [float(t) for t in range(1, resolved["horizon"] + 1)]

    if resolved["resume"]:
        model, opt, extra = load_checkpoint(resolved["resume"])
        if opt is None:
            raise RuntimeError("checkpoint lacks optimizer state; cannot resume")
        start_epoch = int(extra.get("epoch", 0.0))
        from . import nn as _nn

        scheduler = _nn.PlateauScheduler(
            resolved["scheduler_factor"], resolved["scheduler_patience"], "max",
            best_metric=extra.get("sched_best"), epochs_since_improvement=int(extra.get("sched_count", 0)),
        )
        est = None
    else:
        est = TaylorForecaster(
            gamma=resolved["gamma"],
            latent_channels=resolved["latent"],
            clip_length=resolved["observe"],
            horizon=resolved["horizon"],
            in_channels=1,
            spatial_down=resolved["spatial_down"],
            encoder_depth=resolved["encoder_depth"],
            decoder_channels=tuple(resolved["decoder_channels"]),
            tau_unit=float(resolved["rate"]),
            lr=resolved["lr"],
            epochs=resolved["epochs"],
            batch_size=resolved["batch"],
            seed=args.seed,
            dtype=resolved["dtype"],
            scheduler_factor=resolved["scheduler_factor"],
            scheduler_patience=resolved["scheduler_patience"],
            verbose=0,
        )
        est.fit(X, y, taus)
        model, opt = est.model_, est.opt_state_
        history = est.history_

    if resolved["resume"]:
        scheduler_state = scheduler
        history = train_loop(
            model,
            opt,
            X.astype(model.config.np_dtype),
            y.astype(model.config.np_dtype),
            taus,
            epochs=resolved["epochs"],
            batch_size=resolved["batch"],
            seed=args.seed,
            scheduler=scheduler_state,
            start_epoch=start_epoch,
        )
        sched = scheduler_state
    else:
        sched = None

    extra = {"epoch": float(resolved["epochs"])}
    if sched is not None and sched.best_metric is not None:
        extra["sched_best"] = float(sched.best_metric)
        extra["sched_count"] = float(sched.epochs_since_improvement)
    save_checkpoint(os.path.join(out, "checkpoint.tsn"), model, opt, extra=extra)
    write_csv(
        os.path.join(out, "train_log.csv"),
        ["epoch", "loss", "lr", "train_ssim"],
        [[int(row["epoch"]), row["loss"], row["lr"], row["train_ssim"]] for row in history],
    )
    print(f"trained {resolved['epochs']} epochs -> {out}/checkpoint.tsn")
    return 0


def cmd_eval(args) -> int:
    defaults = dict(DATASET_DEFAULTS, clips=16, checkpoint="")
    resolved = resolve_config(args, defaults)
    if not resolved["checkpoint"]:
        raise UsageError("eval requires --checkpoint")
    out = args.out
    write_run_config(out, {**resolved, "seed": args.seed, "command": "eval"})

    model, _, _ = load_checkpoint(resolved["checkpoint"])
    if model.config.clip_length != resolved["observe"]:
        raise RuntimeError(
            f"checkpoint expects {model.config.clip_length} observed frames, run asks {resolved['observe']}"
        )
    X, y = build_dataset(resolved, "eval-data", args.seed, resolved["clips"], args.threads)
    taus = [float(t) for t in range(1, resolved["horizon"] + 1)]
    preds = model.predict(X, taus)

    window = fitting_window(y.shape[-2], y.shape[-1])

    def frame_row(k: int):
        ms = float(np.mean([mse(preds[n, k], y[n, k]) for n in range(len(X))]))
        ma = float(np.mean([mae(preds[n, k], y[n, k]) for n in range(len(X))]))
        ss = float(np.mean([ssim(preds[n, k], y[n, k], window_size=window) for n in range(len(X))]))
        ps = float(np.mean([psnr(preds[n, k], y[n, k]) for n in range(len(X))]))
        return [ms, ma, ss, ps]

    with ThreadPoolExecutor(max_workers=max(args.threads, 1)) as pool:
        per_frame = list(pool.map(frame_row, range(len(taus))))
    rows = [[f"{taus[k]:.2f}"] + per_frame[k] for k in range(len(taus))]
    means = [float(np.mean([r[i] for r in per_frame])) for i in range(4)]
    rows.append(["mean"] + means)
    write_csv(os.path.join(out, "metrics.csv"), ["tau", "mse", "mae", "ssim", "psnr"], rows)
    print(f"eval: mean mse={means[0]:.6g} mae={means[1]:.6g} ssim={means[2]:.6g} psnr={means[3]:.6g}")
    return 0


def cmd_predict(args) -> int:
    defaults = dict(checkpoint="", clip="", taus="", tau_start=1.0, tau_step=1.0, count=0, gt_diff=False)
    resolved = resolve_config(args, defaults)
    if not resolved["checkpoint"] or not resolved["clip"]:
        raise UsageError("predict requires --checkpoint and --clip")
    out = args.out
    write_run_config(out, {**resolved, "seed": args.seed, "command": "predict"})

    model, _, _ = load_checkpoint(resolved["checkpoint"])
    clip, _ = load_clip(resolved["clip"])
    observe = model.config.clip_length
    if clip.length < observe:
        raise RuntimeError(f"clip has {clip.length} frames, model needs {observe}")
    window = clip.frames[None, :, :observe]

    if resolved["taus"]:
        taus = [float(t) for t in str(resolved["taus"]).split(",")]
        frames = model.predict(window, taus)[0]
    else:
        count = resolved["count"] or 1
        tau_arr, batch = predict_continuous(model, window, resolved["tau_start"], resolved["tau_step"], count)
        taus = [float(t) for t in tau_arr]
        frames = batch[0]

    for tau, frame in zip(taus, frames):
        name = f"pred_t+{tau:.2f}"
        if frame.shape[0] == 3:
            write_ppm(os.path.join(out, name + ".ppm"), frame)
        else:
            write_pgm(os.path.join(out, name + ".pgm"), frame)

    if resolved["gt_diff"]:
        rows = []
        for tau, frame in zip(taus, frames):
            index = observe - 1 + tau * 1.0  # offsets are in clip-frame intervals
            frame_index = int(round(index))
            if abs(index - frame_index) > 1e-9 or frame_index >= clip.length:
                continue
            truth = clip.frames[:, frame_index]
            rows.append(
                [
                    f"{tau:.2f}",
                    mse(frame, truth),
                    mae(frame, truth),
                    ssim(frame, truth, window_size=fitting_window(*truth.shape[-2:])),
                    psnr(frame, truth),
                ]
            )
        write_csv(os.path.join(out, "gt_diff.csv"), ["tau", "mse", "mae", "ssim", "psnr"], rows)
    print(f"wrote {len(taus)} frames to {out}")
    return 0


def cmd_rollout(args) -> int:
    defaults = dict(DATASET_DEFAULTS, clips=8, checkpoint="", steps=(10, 7, 5, 2, 1), rollout_horizon=70)
    resolved = resolve_config(args, defaults)
    if not resolved["checkpoint"]:
        raise UsageError("rollout requires --checkpoint")
    out = args.out
    write_run_config(out, {**resolved, "seed": args.seed, "command": "rollout"})

    model, _, _ = load_checkpoint(resolved["checkpoint"])
    horizon = resolved["rollout_horizon"]
    observe = resolved["observe"]
    local = dict(resolved)
    local["horizon"] = horizon
    X, y = build_dataset(local, "rollout-data", args.seed, resolved["clips"], args.threads)

    steps = tuple(resolved["steps"])
    curves = {}
    for step in steps:
        curves[step] = rollout_ssim_curve(model, X, y, RolloutPlan(horizon=horizon, step=int(step)))
    header = ["frame"] + [f"ssim_step{int(s)}" for s in steps]
    rows = [[k + 1] + [curves[s][k] for s in steps] for k in range(horizon)]
    write_csv(os.path.join(out, "rollout_ssim.csv"), header, rows)
    summary = " ".join(f"step{int(s)}={curves[s][-1]:.4f}" for s in steps)
    print(f"rollout final-frame SSIM: {summary}")
    return 0


def cmd_lab(args) -> int:
    defaults = dict(
        family="sin",
        mode="derivatives",
        gamma=0,  # 0: per-mode default (8 for the table, 4 for the comparison)
        t0=4.75,
        lab_horizon=2.0,
        euler_dt=0.25,
        epochs=150,
        n_train=512,
    )
    resolved = resolve_config(args, defaults)
    out = args.out
    write_run_config(out, {**resolved, "seed": args.seed, "command": "lab"})
    family = analytic.AnalyticFamily(resolved["family"], **({"window": 8} if resolved["family"] == "sin2d" else {}))

    if resolved["mode"] == "euler-taylor":
        gamma = resolved["gamma"] or 4
        rows = analytic.compare_euler_taylor(
            family, t0=resolved["t0"], horizon=resolved["lab_horizon"], gamma=gamma, euler_dt=resolved["euler_dt"]
        )
        write_csv(
            os.path.join(out, "euler_taylor.csv"),
            ["tau", "truth", "taylor", "euler", "abs_err_taylor", "abs_err_euler"],
            [[r["tau"], r["truth"], r["taylor"], r["euler"], r["abs_err_taylor"], r["abs_err_euler"]] for r in rows],
        )
        worst_t = max(r["abs_err_taylor"] for r in rows)
        worst_e = max(r["abs_err_euler"] for r in rows)
        print(f"max|err| taylor(gamma={gamma})={worst_t:.6g} euler(dt={resolved['euler_dt']})={worst_e:.6g}")
        return 0

    if resolved["mode"] == "derivatives":
        gamma = resolved["gamma"] or 8
        _, report = analytic.fit_derivative_estimator(
            family, gamma=gamma, n_train=resolved["n_train"], epochs=resolved["epochs"], seed=args.seed
        )
        if family.is_field:
            write_csv(
                os.path.join(out, "derivatives.csv"),
                ["order", "mean_abs_error", "max_abs_error"],
                [[r["order"], r["mean_abs_error"], r["max_abs_error"]] for r in report["orders"]],
            )
            summary = " ".join(f"d{r['order']}={r['mean_abs_error']:.4g}" for r in report["orders"])
            print(f"mean-abs coefficient errors: {summary}")
        else:
            write_csv(
                os.path.join(out, "derivatives.csv"),
                ["order", "estimated", "analytic", "abs_error", "rel_error"],
                [[r["order"], r["estimated"], r["analytic"], r["abs_error"], r["rel_error"]] for r in report["orders"]],
            )
            summary = " ".join(f"d{r['order']}={r['abs_error']:.4g}" for r in report["orders"])
            print(f"abs coefficient errors at t*={report['t_star']}: {summary}")
        return 0

    raise UsageError(f"unknown lab mode {resolved['mode']!r}")


def cmd_gen_data(args) -> int:
    defaults = dict(DATASET_DEFAULTS, clips=4, frames=20)
    resolved = resolve_config(args, defaults)
    out = args.out
    write_run_config(out, {**resolved, "seed": args.seed, "command": "gen-data"})
    spec = scene_spec(resolved, 0)
    master = derive_seed(args.seed, "gen-data")

    def one(i: int):
        clip_seed = int(rng_for(master, f"clip-{i}").integers(2**63))
        scene = dataclasses.replace(spec, seed=clip_seed)
        if isinstance(scene, ShapeSceneSpec):
            clip = generate_moving_shapes(scene, resolved["frames"])
        else:
            clip = generate_scalar_field(scene, resolved["frames"])
        clip = subsample(clip, resolved["rate"])
        save_clip(clip, os.path.join(out, f"clip_{i:03d}.tcc"), seed=clip_seed)

    with ThreadPoolExecutor(max_workers=max(args.threads, 1)) as pool:
        list(pool.map(one, range(resolved["clips"])))
    print(f"wrote {resolved['clips']} clips to {out}")
    return 0


# ---------------------------------------------------------------------------
# Argument wiring
# ---------------------------------------------------------------------------


def build_parser() -> CliParser:
    parser = CliParser(prog="taylorcast", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
        p.add_argument("--out", required=needs_out, help="output directory")

    def dataset_flags(p):
        p.add_argument("--dataset", choices=["moving-shapes", "scalar-field"], default=None)
        p.add_argument("--grid", type=int, default=None)
        p.add_argument("--shapes", type=int, default=None)
        p.add_argument("--observe", type=int, default=None)
        p.add_argument("--horizon", type=int, default=None)
        p.add_argument("--rate", type=int, default=None)
        p.add_argument("--clips", type=int, default=None)

    p = sub.add_parser("train", help="train a forecaster on synthetic data")
    common(p)
    dataset_flags(p)
    p.add_argument("--gamma", type=int, default=None)
    p.add_argument("--latent", type=int, default=None)
    p.add_argument("--spatial-down", dest="spatial_down", type=int, default=None)
    p.add_argument("--encoder-depth", dest="encoder_depth", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--dtype", choices=["float32", "float64"], default=None)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on fresh clips")
    common(p)
    dataset_flags(p)
    p.add_argument("--checkpoint", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="predict frames from a clip file")
    common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--clip", default=None, help="clip file from gen-data")
    p.add_argument("--taus", default=None, help="comma-separated offsets, e.g. 0.7,1.3,3.9")
    p.add_argument("--tau-start", dest="tau_start", type=float, default=None)
    p.add_argument("--tau-step", dest="tau_step", type=float, default=None)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--gt-diff", dest="gt_diff", action="store_const", const=True, default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("rollout", help="long-horizon segmented rollout study")
    common(p)
    dataset_flags(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--rollout-horizon", dest="rollout_horizon", type=int, default=None)
    p.add_argument("--steps", type=lambda s: tuple(int(v) for v in s.split(",")), default=None)
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("lab", help="analytic-function laboratory")
    common(p)
    p.add_argument("--family", choices=["sin", "cos", "exp", "sin2d"], default=None)
    p.add_argument("--mode", choices=["derivatives", "euler-taylor"], default=None)
    p.add_argument("--gamma", type=int, default=None)
    p.add_argument("--t0", type=float, default=None)
    p.add_argument("--lab-horizon", dest="lab_horizon", type=float, default=None)
    p.add_argument("--euler-dt", dest="euler_dt", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--n-train", dest="n_train", type=int, default=None)
    p.set_defaults(func=cmd_lab)

    p = sub.add_parser("gen-data", help="write synthetic clip files")
    common(p)
    dataset_flags(p)
    p.add_argument("--frames", type=int, default=None)
    p.set_defaults(func=cmd_gen_data)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure contract: exit code 2
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
