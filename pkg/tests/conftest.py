"""Shared fixtures and builders for the test suite."""
import numpy as np
import pytest

from pedcast.data import (FormatConfig, Scene, cut_windows, load_dataset,
                          normalize_scene)
from pedcast.model import ModelParams


def make_params(embed_dim=4, hidden_dim=8, seed=0, sigma=2.0,
                interaction=True, offset_biases=True):
    """Small random parameter set for gradient and transcription tests.

    Freshly initialised biases are exactly zero, which parks the relu
    pre-activations of the interaction embedding on the kink where the
    analytic convention (slope 0) and a central difference (half slope)
    legitimately disagree.  Offsetting the biases moves the checks onto
    smooth ground; production training never sits on the kink either
    because the first update perturbs every bias.
    """
    rng = np.random.default_rng(seed)
    p = ModelParams.init(embed_dim, hidden_dim, rng, sigma=sigma,
                         interaction=interaction)
    if offset_biases:
        for v in (p.b_e, p.b_a, p.b_o, p.lstm.b):
            v.data += rng.uniform(-0.2, 0.2, size=v.data.shape)
    return p


def scene_from_tracks(tracks, name="toy", stride=10):
    """Build a normalized Scene from {ped_id: [(frame, x, y), ...]}.

    The frame grid runs densely from the first to the last observed id;
    grid frames nobody occupies stay in the scene as empty frames, the
    same layout load_dataset produces.
    """
    by_frame = {}
    for pid, rows in tracks.items():
        for fr, x, y in rows:
            by_frame.setdefault(int(fr), []).append((int(pid), (x, y)))
    lo, hi = min(by_frame), max(by_frame)
    frame_ids = np.arange(lo, hi + 1, stride, dtype=np.int64)
    frames = []
    for fr in frame_ids:
        entries = sorted(by_frame.get(int(fr), []))
        ids = np.array([p for p, _ in entries], dtype=np.int64)
        xy = np.array([c for _, c in entries], dtype=np.float64).reshape(-1, 2)
        frames.append((ids, xy))
    return normalize_scene(Scene(name, frame_ids, frames, stride=stride))


def straight_line_tracks(n_peds=2, n_frames=20, speed=0.5, gap=4.0):
    """Parallel constant-velocity walkers, one full track per pedestrian."""
    tracks = {}
    for k in range(n_peds):
        tracks[k + 1] = [(t * 10, t * speed, k * gap) for t in range(n_frames)]
    return tracks


@pytest.fixture()
def line_scene():
    """Two straight parallel 20-frame walkers, normalized."""
    return scene_from_tracks(straight_line_tracks())


@pytest.fixture()
def line_window(line_scene):
    windows = cut_windows(line_scene, obs_len=8, pred_len=12)
    assert len(windows) == 1
    return windows[0]


def write_annotation_text(path, rows, delimiter=" "):
    """Write (frame, ped, x, y) rows as an annotation file."""
    with open(path, "w") as fh:
        for fr, pid, x, y in rows:
            fh.write(delimiter.join(str(v) for v in (fr, pid, x, y)) + "\n")
    return path
