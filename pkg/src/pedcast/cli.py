"""Command line interface.

Verbs: synth | prepare | train | eval | sweep | predict.  Exit codes:
0 success, 1 usage or configuration problem, 2 data problem, 3 numeric
failure.  The environment variable PEDCAST_THREADS sets how many worker
threads evaluation may use (default 1).
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import evaluation, reporting, synthetic
from .data import cut_windows, leave_one_out, load_manifest, load_scenes
from .errors import ConfigError, DataError, NumericError, PedcastError
from .training import TrainConfig, load_checkpoint, train

DEFAULTS_NOTE = (
    "defaults: 8 observed + 12 predicted frames (0.4 s each), hidden size "
    "128, embedding size 64, lr 0.001, batch 8 windows, 150 epochs, 50 "
    "evaluation runs, kernel width sigma 4 m")


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; this package reserves 2 for data
    # problems, so remap to 1
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_train_flags(p):
    p.add_argument("--sigma", type=float, default=4.0,
                   help="correntropy kernel width in metres (default 4)")
    p.add_argument("--epochs", type=int, default=150)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--hidden", type=int, default=128,
                   help="LSTM hidden size D (default 128)")
    p.add_argument("--embed", type=int, default=64,
                   help="embedding size E (default 64)")
    p.add_argument("--clip", type=float, default=10.0,
                   help="global gradient-norm clip (default 10)")
    p.add_argument("--stride", type=int, default=1,
                   help="training window stride (default 1)")
    p.add_argument("--ce-units", choices=["world", "normalized"],
                   default="world",
                   help="coordinate system seen by the kernel (default world)")
    p.add_argument("--ablation", choices=["full", "no-interaction"],
                   default="full",
                   help="no-interaction zeroes the pooled input")
    p.add_argument("--checkpoint-every", type=int, default=50)


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.lr, batch_size=args.batch, epochs=args.epochs,
        sigma=args.sigma, hidden_dim=args.hidden, embed_dim=args.embed,
        grad_clip_norm=args.clip, seed=args.seed, window_stride=args.stride,
        interaction=(args.ablation == "full"), ce_units=args.ce_units,
        checkpoint_every=args.checkpoint_every)


def build_parser() -> _Parser:
    p = _Parser(prog="pedcast",
                description="Pedestrian trajectory forecasting toolkit. "
                            + DEFAULTS_NOTE)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", parents=[], epilog=DEFAULTS_NOTE,
                        help="generate the synthetic five-dataset corpus")
    sp.add_argument("--out", default="data", help="output directory")
    sp.add_argument("--size", choices=["desk", "full"], default="desk")
    sp.add_argument("--seed", type=int, default=1234)

    sp = sub.add_parser("prepare", epilog=DEFAULTS_NOTE,
                        help="load datasets and report their statistics")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", default=None,
                    help="also write stats.csv under this directory")

    sp = sub.add_parser("train", epilog=DEFAULTS_NOTE,
                        help="train one model with a held-out dataset")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--holdout", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default="out")
    _add_train_flags(sp)

    sp = sub.add_parser("eval", epilog=DEFAULTS_NOTE,
                        help="evaluate a checkpoint on its held-out dataset")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--holdout", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--sigma", type=float, default=None,
                    help="kernel width; default: the trained value")
    sp.add_argument("--runs", type=int, default=50)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--mode", choices=["greedy", "sampled"], default="sampled")
    sp.add_argument("--feedback", choices=["targets", "all"],
                    default="targets",
                    help="whose predictions feed back into the loop")
    sp.add_argument("--eval-stride", type=int, default=1)
    sp.add_argument("--no-trajectories", action="store_true",
                    help="skip the per-window trajectory CSV export")
    sp.add_argument("--out", default="out")

    sp = sub.add_parser("sweep", epilog=DEFAULTS_NOTE,
                        help="train and evaluate across kernel widths")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--holdout", action="append", default=None,
                    help="repeatable; default: every dataset in turn")
    sp.add_argument("--sigmas", default="2,4,8,16,32",
                    help="comma-separated kernel widths (default 2,4,8,16,32)")
    sp.add_argument("--runs", type=int, default=50)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--mode", choices=["greedy", "sampled"], default="sampled")
    sp.add_argument("--eval-stride", type=int, default=1)
    sp.add_argument("--out", default="out")
    _add_train_flags(sp)

    sp = sub.add_parser("predict", epilog=DEFAULTS_NOTE,
                        help="export one window's predicted trajectories")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--holdout", required=True,
                    help="dataset the window is cut from")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--window", type=int, default=0, help="window index")
    sp.add_argument("--sigma", type=float, default=None)
    sp.add_argument("--mode", choices=["greedy", "sampled"], default="greedy")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default="out")
    return p


def _scenes(args):
    return load_scenes(load_manifest(args.manifest))


def _scene_or_fail(scenes, name):
    if name not in scenes:
        raise ConfigError(f"unknown dataset {name!r}; manifest lists "
                          f"{sorted(scenes)}")
    return scenes[name]


def cmd_synth(args) -> int:
    manifest = synthetic.generate_corpus(args.out, args.size, args.seed)
    print(f"wrote synthetic corpus to {args.out} (manifest: {manifest})")
    return 0


def cmd_prepare(args) -> int:
    scenes = _scenes(args)
    header = f"{'dataset':<10} {'pedestrians':>12} {'frames':>8} {'crowded':>8}"
    lines = [header]
    rows = []
    for name, scene in scenes.items():
        crowded = scene.crowded_frames()
        lines.append(f"{name:<10} {scene.n_pedestrians:>12d} "
                     f"{scene.n_frames:>8d} {crowded:>8d}")
        rows.append((name, scene.n_pedestrians, scene.n_frames, crowded))
    print("\n".join(lines))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "stats.csv"), "w") as fh:
            fh.write("dataset,pedestrians,frames,crowded_frames\n")
            for name, peds, frames, crowded in rows:
                fh.write(f"{name},{peds},{frames},{crowded}\n")
    return 0


def cmd_train(args) -> int:
    scenes = _scenes(args)
    split = leave_one_out(scenes.keys(), args.holdout)
    config = _train_config(args)
    out_dir = os.path.join(args.out, "checkpoints")
    last = {"loss": float("nan")}

    def progress(stats):
        last["loss"] = stats.mean_loss
        print(f"epoch {stats.epoch:4d}/{config.epochs}  "
              f"mean loss {stats.mean_loss:10.4f}  "
              f"{stats.wall_seconds:6.1f} s", flush=True)

    result = train(split, scenes, config, out_dir=out_dir, progress=progress)
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def cmd_eval(args) -> int:
    scenes = _scenes(args)
    scene = _scene_or_fail(scenes, args.holdout)
    ckpt = load_checkpoint(args.checkpoint)
    sigma = args.sigma if args.sigma is not None else ckpt.params.sigma
    report = evaluation.evaluate(
        ckpt.params, scene, sigma, runs=args.runs, seed=args.seed,
        mode=args.mode, feedback=args.feedback, obs_len=ckpt.config.obs_len,
        pred_len=ckpt.config.pred_len, stride=args.eval_stride,
        ce_units=ckpt.config.ce_units)
    os.makedirs(args.out, exist_ok=True)
    reporting.write_metrics_csv([report], os.path.join(args.out, "metrics.csv"))
    table = reporting.metrics_table([report])
    with open(os.path.join(args.out, "metrics.txt"), "w") as fh:
        fh.write(table)
    reporting.render_per_frame_figure(
        [report], os.path.join(args.out, "per_frame.png"))
    print(table, end="")

    if not args.no_trajectories:
        tdir = os.path.join(args.out, "trajectories")
        os.makedirs(tdir, exist_ok=True)
        windows = cut_windows(scene, ckpt.config.obs_len, ckpt.config.pred_len,
                              args.eval_stride)
        for i, window in enumerate(windows):
            trajs = evaluation.rollout(ckpt.params, window, sigma, None,
                                       "greedy", args.feedback,
                                       ckpt.config.ce_units)
            reporting.write_trajectory_csv(
                window, trajs,
                os.path.join(tdir, f"{scene.name}_w{i:04d}.csv"))
    return 0


def cmd_sweep(args) -> int:
    scenes = _scenes(args)
    holdouts = args.holdout if args.holdout else sorted(scenes)
    try:
        sigmas = [float(s) for s in args.sigmas.split(",") if s]
    except ValueError:
        raise ConfigError(f"bad --sigmas value {args.sigmas!r}") from None
    config = _train_config(args)
    cache = os.path.join(args.out, "checkpoints")
    os.makedirs(cache, exist_ok=True)
    reports = []
    for holdout in holdouts:
        split = leave_one_out(scenes.keys(), holdout)
        reports.extend(evaluation.sigma_sweep(
            split, scenes, sigmas, config, runs=args.runs, seed=args.seed,
            mode=args.mode, cache_dir=cache, eval_stride=args.eval_stride))
    os.makedirs(args.out, exist_ok=True)
    reporting.write_metrics_csv(reports, os.path.join(args.out, "metrics.csv"))
    reporting.write_sweep_averages(reports,
                                   os.path.join(args.out, "averages.csv"))
    table = reporting.metrics_table(reports)
    with open(os.path.join(args.out, "table.txt"), "w") as fh:
        fh.write(table)
    reporting.render_sweep_figure(reports, os.path.join(args.out, "sweep.png"))
    reporting.render_per_frame_figure(reports,
                                      os.path.join(args.out, "per_frame.png"))
    print(table, end="")
    return 0


def cmd_predict(args) -> int:
    scenes = _scenes(args)
    scene = _scene_or_fail(scenes, args.holdout)
    ckpt = load_checkpoint(args.checkpoint)
    sigma = args.sigma if args.sigma is not None else ckpt.params.sigma
    windows = cut_windows(scene, ckpt.config.obs_len, ckpt.config.pred_len)
    if not 0 <= args.window < len(windows):
        raise ConfigError(f"window index {args.window} out of range; "
                          f"{scene.name} has {len(windows)} windows")
    window = windows[args.window]
    rng = np.random.default_rng(args.seed)
    trajs = evaluation.rollout(ckpt.params, window, sigma, rng, args.mode,
                               ce_units=ckpt.config.ce_units)
    os.makedirs(args.out, exist_ok=True)
    base = os.path.join(args.out, f"{scene.name}_w{args.window:04d}")
    reporting.write_trajectory_csv(window, trajs, base + ".csv")
    reporting.render_trajectory_figure(window, trajs, base + ".png")
    print(f"wrote {base}.csv and {base}.png "
          f"({len(trajs)} predicted pedestrians)")
    return 0


_COMMANDS = {"synth": cmd_synth, "prepare": cmd_prepare, "train": cmd_train,
             "eval": cmd_eval, "sweep": cmd_sweep, "predict": cmd_predict}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"pedcast: configuration error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"pedcast: data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"pedcast: numeric failure: {exc}", file=sys.stderr)
        return 3
    except PedcastError as exc:
        print(f"pedcast: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
