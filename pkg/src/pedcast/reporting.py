"""Result files: delimited metrics, text tables, trajectory CSVs, figures.

Writers emit deterministic bytes for identical inputs (no timestamps,
fixed float formatting), so repeated runs with the same seed can be
compared file-for-file.
"""
from __future__ import annotations

import csv
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .evaluation import MetricsReport, PredictedTrajectory


def _fmt(x: float) -> str:
    return f"{x:.6f}"


# ---------------------------------------------------------------------------
# metrics

def metrics_csv_rows(reports) -> list:
    pred_len = len(reports[0].per_frame_ade) if reports else 0
    head = (["dataset", "sigma", "runs", "ade_mean", "ade_var",
             "fde_mean", "fde_var"]
            + [f"per_frame_ade_{k + 1:02d}" for k in range(pred_len)]
            + [f"per_frame_peds_{k + 1:02d}" for k in range(pred_len)])
    rows = [head]
    for r in reports:
        rows.append([r.dataset, f"{r.sigma:g}", str(r.runs),
                     _fmt(r.ade_mean), _fmt(r.ade_var),
                     _fmt(r.fde_mean), _fmt(r.fde_var)]
                    + [_fmt(x) for x in r.per_frame_ade]
                    + [str(x) for x in r.per_frame_peds])
    return rows


def write_metrics_csv(reports, path):
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(metrics_csv_rows(reports))


def metrics_table(reports) -> str:
    """Human-readable summary, metres."""
    lines = [f"{'dataset':<10} {'sigma':>6} {'runs':>5} "
             f"{'ADE (m)':>10} {'ADE var':>10} {'FDE (m)':>10} {'FDE var':>10}"]
    for r in reports:
        lines.append(f"{r.dataset:<10} {r.sigma:>6g} {r.runs:>5d} "
                     f"{r.ade_mean:>10.4f} {r.ade_var:>10.4f} "
                     f"{r.fde_mean:>10.4f} {r.fde_var:>10.4f}")
    return "\n".join(lines) + "\n"


def sweep_averages(reports) -> list:
    """Per-sigma ADE/FDE averaged over datasets: (sigma, ade, fde) rows."""
    by_sigma = {}
    for r in reports:
        by_sigma.setdefault(r.sigma, []).append(r)
    rows = []
    for sigma in sorted(by_sigma):
        group = by_sigma[sigma]
        rows.append((sigma,
                     float(np.mean([g.ade_mean for g in group])),
                     float(np.mean([g.fde_mean for g in group]))))
    return rows


def write_sweep_averages(reports, path):
    rows = sweep_averages(reports)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sigma", "ade_mean", "fde_mean"])
        for sigma, a, f in rows:
            w.writerow([f"{sigma:g}", _fmt(a), _fmt(f)])


# ---------------------------------------------------------------------------
# trajectories

def write_trajectory_csv(window, trajectories, path):
    """One window's tracks: rows of (ped_id, step, kind, x, y).

    Steps 1..obs_len are observation frames, obs_len+1..total_len the
    prediction horizon.  `obs` and `truth` rows come from the data for
    every pedestrian while present; `pred` rows hold the model output
    for the fully observed pedestrians.
    """
    obs, total = window.obs_len, window.total_len
    rows = []
    for k, pid in enumerate(window.ped_ids):
        for t in range(total):
            if not window.present[t, k]:
                continue
            kind = "obs" if t < obs else "truth"
            x, y = window.world[t, k]
            rows.append((int(pid), t + 1, kind, x, y))
    for traj in trajectories:
        for step, (x, y) in enumerate(traj.predicted, start=obs + 1):
            rows.append((traj.ped_id, step, "pred", float(x), float(y)))
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ped_id", "step", "kind", "x", "y"])
        for pid, step, kind, x, y in rows:
            w.writerow([pid, step, kind, _fmt(x), _fmt(y)])


# ---------------------------------------------------------------------------
# figures

def _save(fig, path):
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_per_frame_figure(reports, path):
    """Mean displacement per prediction frame, one line per report."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    for r in reports:
        frames = np.arange(1, len(r.per_frame_ade) + 1)
        label = f"{r.dataset} sigma={r.sigma:g}"
        ax1.plot(frames, r.per_frame_ade, marker="o", ms=3, label=label)
        ax2.plot(frames, r.per_frame_peds, marker="s", ms=3, label=label)
    ax1.set_xlabel("prediction frame")
    ax1.set_ylabel("mean error (m)")
    ax2.set_xlabel("prediction frame")
    ax2.set_ylabel("pedestrians")
    ax1.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, path)


def render_sweep_figure(reports, path):
    """Dataset-averaged ADE and FDE against the kernel width."""
    rows = sweep_averages(reports)
    sigmas = [r[0] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.4))
    ax.plot(sigmas, [r[1] for r in rows], marker="o", label="ADE")
    ax.plot(sigmas, [r[2] for r in rows], marker="s", label="FDE")
    ax.set_xscale("log", base=2)
    ax.set_xticks(sigmas, [f"{s:g}" for s in sigmas])
    ax.set_xlabel("kernel width sigma (m)")
    ax.set_ylabel("error (m)")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def render_trajectory_figure(window, trajectories, path):
    """Observed, true future and predicted tracks of one window."""
    fig, ax = plt.subplots(figsize=(5, 5))
    obs = window.obs_len
    for k in range(len(window.ped_ids)):
        mask_o = window.present[:obs, k]
        mask_t = window.present[obs:, k]
        ax.plot(window.world[:obs, k][mask_o, 0], window.world[:obs, k][mask_o, 1],
                color="0.4", lw=1.0)
        ax.plot(window.world[obs:, k][mask_t, 0], window.world[obs:, k][mask_t, 1],
                color="tab:green", lw=1.2)
    for traj in trajectories:
        ax.plot(traj.predicted[:, 0], traj.predicted[:, 1], "--",
                color="tab:red", lw=1.2)
    ax.plot([], [], color="0.4", label="observed")
    ax.plot([], [], color="tab:green", label="truth")
    ax.plot([], [], "--", color="tab:red", label="predicted")
    ax.set_aspect("equal")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def write_timing_note(timing, path):
    with open(path, "w") as fh:
        fh.write(f"seconds_per_step {timing.seconds_per_step:.6f}\n")
        fh.write(f"pedestrians {timing.n_pedestrians}\n")
        fh.write(f"reps {timing.reps}\n")
        fh.write(f"hardware {timing.hardware}\n")
