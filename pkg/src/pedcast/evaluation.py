"""Closed-loop rollout and evaluation of trained predictors.

At test time the eight observed frames are replayed from ground truth;
from then on every predicted position is fed back into both the position
embedding and the correntropy weights of later steps.  Pedestrians that
are not evaluation targets keep their ground-truth positions while they
remain in the scene (switchable to all-predicted feedback).

Displacement metrics are reported in world metres: ADE is the mean
Euclidean distance over the twelve predicted frames, FDE the distance at
the final frame.  Sampled evaluation repeats the rollout `runs` times
with rng seeds seed+r and reports the mean and the unbiased variance of
the per-run means.
"""
from __future__ import annotations

import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import ndmath as nd
from .data import Scene, SplitPlan, cut_windows
from .errors import ConfigError, ContractError, DimensionError
from .model import (GaussianParams2D, ModelParams, head_rows, sample_position,
                    scene_step_rows)
from .training import (Checkpoint, TrainConfig, load_checkpoint, train)

THREADS_ENV = "PEDCAST_THREADS"


@dataclass
class PredictedTrajectory:
    """Twelve predicted world positions for one pedestrian, with context."""
    ped_id: int
    predicted: np.ndarray   # (pred_len, 2) world coordinates
    observed: np.ndarray    # (obs_len, 2) world coordinates
    is_target: bool


@dataclass
class MetricsReport:
    dataset: str
    sigma: float
    runs: int
    mode: str
    seed: int
    ade_mean: float
    ade_var: float
    fde_mean: float
    fde_var: float
    per_frame_ade: list
    per_frame_peds: list


@dataclass
class InferenceTiming:
    seconds_per_step: float
    n_pedestrians: int
    reps: int
    hardware: str


def ade(predicted: np.ndarray, truth: np.ndarray) -> float:
    """Mean Euclidean displacement between two equal-length tracks."""
    p, t = np.asarray(predicted, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 2 or p.shape[1] != 2:
        raise DimensionError(f"ade: shapes {p.shape} vs {t.shape}")
    return float(np.mean(np.sqrt(((p - t) ** 2).sum(axis=1))))


def fde(predicted: np.ndarray, truth: np.ndarray) -> float:
    """Euclidean displacement at the final predicted frame."""
    p, t = np.asarray(predicted, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 2 or p.shape[1] != 2:
        raise DimensionError(f"fde: shapes {p.shape} vs {t.shape}")
    return float(np.sqrt(((p[-1] - t[-1]) ** 2).sum()))


def rollout(params: ModelParams, window, sigma: float,
            rng: np.random.Generator | None = None, mode: str = "sampled",
            feedback: str = "targets", ce_units: str = "world") -> list:
    """Predict the window's future for every fully observed pedestrian.

    mode "greedy" takes the Gaussian mean, "sampled" draws through the
    Cholesky factor (requires rng).  feedback "targets" keeps ground
    truth for non-target neighbours while present; "all" feeds every
    prediction back.  Returns PredictedTrajectory objects whose
    `predicted` arrays always hold pred_len positions.
    """
    if mode not in ("greedy", "sampled"):
        raise ConfigError(f"mode must be greedy or sampled, got {mode!r}")
    if feedback not in ("targets", "all"):
        raise ConfigError(f"feedback must be targets or all, got {feedback!r}")
    if mode == "sampled" and rng is None:
        raise ConfigError("sampled rollout needs an rng")

    u = len(window.ped_ids)
    d = params.hidden_dim
    obs, total = window.obs_len, window.total_len
    follow = window.observed_full_idx
    targets = set(window.target_idx.tolist())
    h, c = nd.zeros((u, d)), nd.zeros((u, d))
    cur_norm = window.norm.copy()
    cur_world = window.world.copy()
    preds_norm = np.empty((window.pred_len, len(follow), 2))

    for t in range(total - 1):
        idx = window.present_indices(t)
        if len(idx):
            kernel = cur_world if ce_units == "world" else cur_norm
            h, c = scene_step_rows(h, c, idx, cur_norm[t, idx],
                                   kernel[t, idx], params, sigma, None)
        nxt = t + 1
        if nxt < obs:
            continue
        g = head_rows(nd.gather_rows(h, follow), params).data
        if mode == "greedy":
            step_pred = g[:, 0:2].copy()
        else:
            step_pred = np.empty((len(follow), 2))
            for k in range(len(follow)):
                p = sample_position(GaussianParams2D.from_vector(g[k]), rng)
                step_pred[k] = (p.x, p.y)
        preds_norm[nxt - obs] = step_pred
        for k, row in enumerate(follow):
            if feedback == "targets" and int(row) not in targets:
                continue
            if not window.present[nxt, row]:
                continue
            cur_norm[nxt, row] = step_pred[k]
            cur_world[nxt, row] = window.transform.denormalize_array(step_pred[k])

    out = []
    pred_world = window.transform.denormalize_array(
        preds_norm.reshape(-1, 2)).reshape(preds_norm.shape)
    for k, row in enumerate(follow):
        out.append(PredictedTrajectory(
            ped_id=int(window.ped_ids[row]),
            predicted=np.ascontiguousarray(pred_world[:, k, :]),
            observed=window.world[:obs, row].copy(),
            is_target=int(row) in targets))
    return out


def _eval_one_run(params, windows, sigma, run_seed, mode, feedback, ce_units,
                  pred_len):
    rng = np.random.default_rng(run_seed)
    ade_sum = fde_sum = 0.0
    n_traj = 0
    err = np.zeros(pred_len)
    for window in windows:
        obs = window.obs_len
        trajs = rollout(params, window, sigma, rng, mode, feedback, ce_units)
        for traj, row in zip(trajs, window.observed_full_idx):
            truth = window.world[obs:, row]
            dist = np.sqrt(((traj.predicted - truth) ** 2).sum(axis=1))
            mask = window.present[obs:, row]
            err[mask] += dist[mask]
            if traj.is_target:
                ade_sum += dist.mean()
                fde_sum += dist[-1]
                n_traj += 1
    return ade_sum / n_traj, fde_sum / n_traj, err


def evaluate(params: ModelParams, scene: Scene, sigma: float, runs: int = 50,
             seed: int = 0, mode: str = "sampled", feedback: str = "targets",
             obs_len: int = 8, pred_len: int = 12, stride: int = 1,
             ce_units: str = "world", threads: int | None = None) -> MetricsReport:
    """Monte-Carlo evaluation on every window of a held-out scene.

    Run r uses rng seed seed+r, so runs are independent and the report
    does not depend on how they are scheduled across threads.
    """
    if runs < 1:
        raise ConfigError(f"runs must be >= 1, got {runs}")
    windows = cut_windows(scene, obs_len, pred_len, stride)
    if not windows:
        raise ContractError(f"scene {scene.name!r} yields no evaluation windows")

    counts = np.zeros(pred_len, dtype=np.int64)
    n_targets = 0
    for w in windows:
        counts += w.present[obs_len:, w.observed_full_idx].sum(axis=1)
        n_targets += len(w.target_idx)

    if threads is None:
        threads = int(os.environ.get(THREADS_ENV, "1"))
    jobs = [(seed + r) for r in range(runs)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(
                lambda s: _eval_one_run(params, windows, sigma, s, mode,
                                        feedback, ce_units, pred_len), jobs))
    else:
        results = [_eval_one_run(params, windows, sigma, s, mode, feedback,
                                 ce_units, pred_len) for s in jobs]

    run_ade = np.array([r[0] for r in results])
    run_fde = np.array([r[1] for r in results])
    err_total = np.sum([r[2] for r in results], axis=0)
    per_frame = err_total / (np.maximum(counts, 1) * runs)

    return MetricsReport(
        dataset=scene.name, sigma=float(sigma), runs=runs, mode=mode,
        seed=seed,
        ade_mean=float(run_ade.mean()),
        ade_var=float(run_ade.var(ddof=1)) if runs > 1 else 0.0,
        fde_mean=float(run_fde.mean()),
        fde_var=float(run_fde.var(ddof=1)) if runs > 1 else 0.0,
        per_frame_ade=[float(x) for x in per_frame],
        per_frame_peds=[int(x) for x in counts])


def train_or_load(split: SplitPlan, scenes: dict, config: TrainConfig,
                  cache_dir, progress=None) -> Checkpoint:
    """Reuse a cached checkpoint when its config matches, else train."""
    tag = f"{split.test}_sigma{config.sigma:g}"
    if not config.interaction:
        tag += "_nointeraction"
    path = os.path.join(cache_dir, f"{tag}.ckpt")
    if os.path.exists(path):
        ckpt = load_checkpoint(path)
        if ckpt.config == config and ckpt.epoch >= config.epochs:
            return ckpt
    return train(split, scenes, config, out_dir=cache_dir,
                 progress=progress).checkpoint


def sigma_sweep(split: SplitPlan, scenes: dict, sigmas, config: TrainConfig,
                runs: int = 50, seed: int = 0, mode: str = "sampled",
                cache_dir=None, eval_stride: int = 1, feedback: str = "targets",
                threads: int | None = None, progress=None) -> list:
    """Train (or reuse) one model per kernel width and evaluate each."""
    reports = []
    for sigma in sigmas:
        cfg = replace(config, sigma=float(sigma))
        if cache_dir is not None:
            ckpt = train_or_load(split, scenes, cfg, cache_dir, progress)
        else:
            ckpt = train(split, scenes, cfg, progress=progress).checkpoint
        reports.append(evaluate(
            ckpt.params, scenes[split.test], float(sigma), runs=runs,
            seed=seed, mode=mode, obs_len=cfg.obs_len, pred_len=cfg.pred_len,
            stride=eval_stride, ce_units=cfg.ce_units, threads=threads))
    return reports


# ---------------------------------------------------------------------------
# timing

def _hardware_note() -> str:
    cpu = platform.processor() or platform.machine()
    return f"{cpu} / {platform.system()} {platform.release()} / python {platform.python_version()}"


def _time_step(params: ModelParams, pos_world: np.ndarray,
               pos_norm: np.ndarray, sigma: float, reps: int) -> InferenceTiming:
    n = len(pos_world)
    idx = np.arange(n)
    h, c = nd.zeros((n, params.hidden_dim)), nd.zeros((n, params.hidden_dim))
    for _ in range(3):  # warm start
        h, c = scene_step_rows(h, c, idx, pos_norm, pos_world, params, sigma, None)
        head_rows(h, params)
    t0 = time.perf_counter()
    for _ in range(reps):
        h, c = scene_step_rows(h, c, idx, pos_norm, pos_world, params, sigma, None)
        head_rows(h, params)
    elapsed = time.perf_counter() - t0
    return InferenceTiming(elapsed / reps, n, reps, _hardware_note())


def time_inference(params: ModelParams, scene: Scene,
                   reps: int = 100) -> InferenceTiming:
    """Wall time of one full-scene step + Gaussian head on the scene's
    most crowded frame."""
    if scene.transform is None:
        raise ContractError("scene must be normalized before timing")
    best = max(range(scene.n_frames), key=lambda t: len(scene.frames[t][0]))
    _, xy = scene.frames[best]
    return _time_step(params, xy, scene.transform.normalize_array(xy),
                      params.sigma, reps)


def time_inference_synthetic(params: ModelParams, n_pedestrians: int,
                             reps: int = 100, seed: int = 0) -> InferenceTiming:
    """Same measurement on a random frame with a chosen pedestrian count."""
    rng = np.random.default_rng(seed)
    xy = rng.uniform(0.0, 20.0, size=(n_pedestrians, 2))
    norm = (xy - 10.0) / 10.0
    return _time_step(params, xy, norm, params.sigma, reps)
