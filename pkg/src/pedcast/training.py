"""Teacher-forced training of the trajectory predictor.

One window contributes the sum of its per-target prediction losses over
the 12 prediction frames; a batch sums eight windows, the gradient is
clipped by global norm and applied with bias-corrected Adam.  Ground
truth positions feed the network at every step during training.
"""
from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import ndmath as nd
from .data import Scene, SplitPlan, TrajectoryWindow, cut_windows
from .errors import ConfigError, ContractError, DomainError, NumericError
from .model import (ModelParams, Var, head_rows, nll_rows, scene_step_rows)

CKPT_MAGIC = b"PEDCAST1"
CKPT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 8
    epochs: int = 150
    sigma: float = 4.0
    hidden_dim: int = 128
    embed_dim: int = 64
    grad_clip_norm: float = 10.0
    seed: int = 0
    obs_len: int = 8
    pred_len: int = 12
    window_stride: int = 1
    interaction: bool = True
    ce_units: str = "world"
    checkpoint_every: int = 50

    def validate(self):
        positive = ("learning_rate", "batch_size", "epochs", "sigma",
                    "hidden_dim", "embed_dim", "grad_clip_norm", "obs_len",
                    "pred_len", "window_stride", "checkpoint_every")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got "
                                  f"{getattr(self, name)}")
        if self.ce_units not in ("world", "normalized"):
            raise ConfigError(f"ce_units must be world or normalized, "
                              f"got {self.ce_units!r}")


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState,
              lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    """One bias-corrected Adam update, in place on the parameter Vars."""
    state.t += 1
    t = state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ConfigError(f"adam: gradient shape {g.shape} does not match "
                              f"parameter {name!r} shape {p.data.shape}")
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale all gradients so their joint norm is at most max_norm."""
    sq = 0.0
    for g in grads.values():
        sq += float(np.dot(g.reshape(-1), g.reshape(-1)))
    norm = np.sqrt(sq)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return float(norm)


# ---------------------------------------------------------------------------
# loss

def window_loss(params: ModelParams, window: TrajectoryWindow, sigma: float,
                tape=None, ce_units: str = "world") -> nd.Var:
    """Summed prediction NLL of one window under teacher forcing.

    Steps every present pedestrian through frames 0..T-2 on ground truth
    and scores the targets' Gaussians against the next true position for
    each of the pred_len prediction frames.
    """
    if len(window.target_idx) == 0:
        raise ContractError("window has no full-presence targets")
    u = len(window.ped_ids)
    d = params.hidden_dim
    h, c = nd.zeros((u, d)), nd.zeros((u, d))
    collected = []
    for t in range(window.total_len - 1):
        idx = window.present_indices(t)
        if len(idx):
            kernel = (window.world if ce_units == "world" else window.norm)
            h, c = scene_step_rows(h, c, idx, window.norm[t, idx],
                                   kernel[t, idx], params, sigma, tape)
        if t >= window.obs_len - 1:
            collected.append(nd.gather_rows(h, window.target_idx, tape))
    stacked = nd.vstack(collected, tape)
    g = head_rows(stacked, params, tape)
    targets = np.concatenate(
        [window.norm[t + 1, window.target_idx]
         for t in range(window.obs_len - 1, window.total_len - 1)], axis=0)
    return nll_rows(g, targets, tape)


# ---------------------------------------------------------------------------
# checkpoints

@dataclass
class Checkpoint:
    params: ModelParams
    config: TrainConfig
    epoch: int
    adam: AdamState


def save_checkpoint(ckpt: Checkpoint, path):
    """Single-file container: magic, JSON header, flat little-endian f8."""
    named = ckpt.params.named()
    arrays = []
    for prefix, table in (("param", {k: v.data for k, v in named.items()}),
                          ("adam_m", ckpt.adam.m), ("adam_v", ckpt.adam.v)):
        for name in sorted(table):
            arrays.append((f"{prefix}/{name}", np.ascontiguousarray(
                table[name], dtype=np.float64)))
    offset = 0
    index = []
    for name, arr in arrays:
        index.append({"name": name, "shape": list(arr.shape),
                      "offset": offset})
        offset += arr.size
    header = {
        "format": "pedcast-checkpoint",
        "version": CKPT_VERSION,
        "config": asdict(ckpt.config),
        "epoch": ckpt.epoch,
        "adam_t": ckpt.adam.t,
        "dims": {"embed": ckpt.params.embed_dim,
                 "hidden": ckpt.params.hidden_dim},
        "sigma": ckpt.params.sigma,
        "interaction": ckpt.params.interaction,
        "init": {"gate_order": "ifog", "forget_bias": 1.0,
                 "weight_init": "uniform(-1/sqrt(fan), 1/sqrt(fan))"},
        "arrays": index,
        "dtype": "<f8",
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for _, arr in arrays:
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CKPT_MAGIC:
            raise ConfigError(f"{path}: not a checkpoint file")
        n = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(n).decode("utf-8"))
        payload = fh.read()
    if header.get("version") != CKPT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version "
                          f"{header.get('version')}")
    tables = {"param": {}, "adam_m": {}, "adam_v": {}}
    for entry in header["arrays"]:
        prefix, name = entry["name"].split("/", 1)
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        start = entry["offset"] * 8
        arr = np.frombuffer(payload, dtype="<f8", count=size,
                            offset=start).reshape(shape)
        tables[prefix][name] = arr.astype(np.float64)

    cfg = TrainConfig(**header["config"])
    rng = np.random.default_rng(0)
    params = ModelParams.init(header["dims"]["embed"], header["dims"]["hidden"],
                              rng, sigma=header["sigma"],
                              interaction=header["interaction"])
    for name, var in params.named().items():
        var.data[...] = tables["param"][name]
    adam = AdamState(m=tables["adam_m"], v=tables["adam_v"],
                     t=header["adam_t"])
    return Checkpoint(params, cfg, header["epoch"], adam)


# ---------------------------------------------------------------------------
# training loop

@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    wall_seconds: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list
    checkpoint_path: str | None = None


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    # keyed by (seed, epoch) so a resumed run shuffles identically
    return np.random.default_rng(np.random.SeedSequence([seed, epoch]))


def _param_norms(named: dict) -> dict:
    return {k: float(np.linalg.norm(v.data)) for k, v in named.items()}


def build_pool(split: SplitPlan, scenes: dict, config: TrainConfig) -> list:
    pool = []
    for name in split.train:
        if name not in scenes:
            raise ConfigError(f"split names unknown dataset {name!r}")
        pool.extend(cut_windows(scenes[name], config.obs_len, config.pred_len,
                                config.window_stride))
    return pool


def train(split: SplitPlan, scenes: dict, config: TrainConfig,
          out_dir=None, start: Checkpoint | None = None,
          progress=None) -> TrainResult:
    """Train on the windows of the split's four training scenes.

    `start` resumes from a checkpoint (same config) and continues with
    the epoch numbering it recorded, reproducing an uninterrupted run
    bit for bit.  `progress` is an optional callable(EpochStats).
    """
    config.validate()
    pool = build_pool(split, scenes, config)
    if not pool:
        raise ContractError(
            f"training pool for split {split.train!r} is empty")

    if start is not None:
        params = start.params
        adam = start.adam
        first_epoch = start.epoch
    else:
        rng = np.random.default_rng(config.seed)
        params = ModelParams.init(config.embed_dim, config.hidden_dim, rng,
                                  sigma=config.sigma,
                                  interaction=config.interaction)
        adam = AdamState()
        first_epoch = 0

    named = params.named()
    history = []
    ckpt_path = None
    log_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        tag = f"{split.test}_sigma{config.sigma:g}"
        if not config.interaction:
            tag += "_nointeraction"
        ckpt_path = os.path.join(out_dir, f"{tag}.ckpt")
        log_path = os.path.join(out_dir, f"{tag}_loss.csv")
        if start is None:
            with open(log_path, "w") as fh:
                fh.write("epoch,mean_loss,wall_seconds\n")

    ckpt = Checkpoint(params, config, first_epoch, adam)
    for epoch in range(first_epoch, config.epochs):
        t0 = time.perf_counter()
        order = _epoch_rng(config.seed, epoch).permutation(len(pool))
        total = 0.0
        for b0 in range(0, len(order), config.batch_size):
            batch = order[b0:b0 + config.batch_size]
            params.zero_grads()
            tape = nd.Tape()
            # DomainError here means a diverged parameter drove the head
            # outside its domain (sigma underflow to 0), so report it the
            # same way as an overflow to inf/nan
            try:
                losses = [window_loss(params, pool[k], config.sigma, tape,
                                      config.ce_units) for k in batch]
                loss = losses[0]
                for extra in losses[1:]:
                    loss = nd.add(loss, extra, tape)
                value = float(loss.data)
            except (DomainError, NumericError) as exc:
                raise NumericError(
                    f"{exc}; at epoch {epoch + 1}, "
                    f"windows {batch.tolist()}; "
                    f"parameter norms {_param_norms(named)}") from exc
            if not np.isfinite(value):
                raise NumericError(
                    f"non-finite batch loss {value!r} at epoch {epoch + 1}, "
                    f"windows {batch.tolist()}; "
                    f"parameter norms {_param_norms(named)}")
            tape.backward(loss)
            grads = {k: (v.grad if v.grad is not None
                         else np.zeros_like(v.data))
                     for k, v in named.items()}
            clip_gradients(grads, config.grad_clip_norm)
            adam_step(named, grads, adam, lr=config.learning_rate)
            total += value
        stats = EpochStats(epoch + 1, total / len(pool),
                           time.perf_counter() - t0)
        history.append(stats)
        ckpt = Checkpoint(params, config, epoch + 1, adam)
        if log_path is not None:
            with open(log_path, "a") as fh:
                fh.write(f"{stats.epoch},{stats.mean_loss!r},"
                         f"{stats.wall_seconds:.3f}\n")
        if ckpt_path is not None and ((epoch + 1) % config.checkpoint_every == 0
                                      or epoch + 1 == config.epochs):
            save_checkpoint(ckpt, ckpt_path)
        if progress is not None:
            progress(stats)
    return TrainResult(ckpt, history, ckpt_path)
