"""Interaction-aware trajectory predictor.

Each pedestrian carries an LSTM hidden state.  At every frame the current
position is embedded, the neighbours' previous hidden states are pooled
into a single D-vector with correntropy weights
    ce_ij = exp(-||p_i - p_j||^2 / (2 sigma^2)),
the pooled vector is embedded, and both embeddings feed one LSTM shared
by all pedestrians.  A linear head maps the hidden state to a bivariate
Gaussian over the next position (mu_x, mu_y, sigma_x, sigma_y, rho) with
exp applied to the scales and tanh to the correlation.

Weights ce_ij are treated as constants: no gradient flows into positions.
All pedestrians in a frame are updated simultaneously from the pre-step
snapshot, so the update is equivariant under reordering.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import ndmath as nd
from .errors import ConfigError, DimensionError, NumericError, UnitsError
from .ndmath import LSTMWeights, Tape, Var

LOG_2PI = math.log(2.0 * math.pi)
RHO_CLAMP = 0.999

WORLD = "world"
NORMALIZED = "normalized"


@dataclass(frozen=True)
class Position:
    """A 2-d point tagged with its coordinate system."""
    x: float
    y: float
    units: str = WORLD

    def array(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass
class PedestrianState:
    """Per-pedestrian recurrent state at one time index."""
    ped_id: int
    h: Var
    c: Var
    pos: Position

    @classmethod
    def fresh(cls, ped_id: int, hidden_dim: int, pos: Position):
        return cls(ped_id, nd.zeros(hidden_dim), nd.zeros(hidden_dim), pos)


@dataclass
class ModelParams:
    """All trainable parameters plus the dimensions they were built with."""
    w_e: Var          # (E, 2) position embedding
    b_e: Var          # (E,)
    w_a: Var          # (E, D) interaction embedding
    b_a: Var          # (E,)
    lstm: LSTMWeights  # input 2E, hidden D
    w_o: Var          # (5, D) Gaussian head
    b_o: Var          # (5,)
    embed_dim: int
    hidden_dim: int
    sigma: float = 4.0          # kernel bandwidth used at training time
    interaction: bool = True    # False: pooled input replaced by zeros

    @classmethod
    def init(cls, embed_dim: int, hidden_dim: int, rng: np.random.Generator,
             sigma: float = 4.0, interaction: bool = True):
        e, d = embed_dim, hidden_dim
        def uni(rows, cols):
            return Var(rng.uniform(-1.0 / math.sqrt(rows), 1.0 / math.sqrt(rows),
                                   size=(rows, cols)))
        w_e, b_e = uni(e, 2), nd.zeros(e)
        w_a, b_a = uni(e, d), nd.zeros(e)
        lstm = LSTMWeights.init(2 * e, d, rng)
        w_o, b_o = uni(5, d), nd.zeros(5)
        return cls(w_e, b_e, w_a, b_a, lstm, w_o, b_o, e, d,
                   sigma=sigma, interaction=interaction)

    def named(self) -> dict[str, Var]:
        return {
            "embed_pos.w": self.w_e, "embed_pos.b": self.b_e,
            "embed_int.w": self.w_a, "embed_int.b": self.b_a,
            "lstm.w_x": self.lstm.w_x, "lstm.w_h": self.lstm.w_h,
            "lstm.b": self.lstm.b,
            "head.w": self.w_o, "head.b": self.b_o,
        }

    def zero_grads(self):
        for v in self.named().values():
            v.zero_grad()

    def copy(self) -> "ModelParams":
        p = replace(self)
        p.w_e, p.b_e = Var(self.w_e.data.copy()), Var(self.b_e.data.copy())
        p.w_a, p.b_a = Var(self.w_a.data.copy()), Var(self.b_a.data.copy())
        p.lstm = LSTMWeights(Var(self.lstm.w_x.data.copy()),
                             Var(self.lstm.w_h.data.copy()),
                             Var(self.lstm.b.data.copy()))
        p.w_o, p.b_o = Var(self.w_o.data.copy()), Var(self.b_o.data.copy())
        return p


# ---------------------------------------------------------------------------
# correntropy

def correntropy_weight(p_i: Position, p_j: Position, sigma: float) -> float:
    """Gaussian-kernel similarity of two positions, in (0, 1]."""
    if sigma <= 0.0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    if p_i.units != p_j.units:
        raise UnitsError(
            f"correntropy of {p_i.units!r} against {p_j.units!r} position")
    dx = p_i.x - p_j.x
    dy = p_i.y - p_j.y
    return math.exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma))


def correntropy_matrix(xy: np.ndarray, sigma: float) -> np.ndarray:
    """Pairwise kernel weights for positions xy of shape (n, 2)."""
    if sigma <= 0.0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    diff = xy[:, None, :] - xy[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    return np.exp(-d2 / (2.0 * sigma * sigma))


# ---------------------------------------------------------------------------
# per-pedestrian ops (vector granularity)

def embed_position(p: Position, params: ModelParams,
                   tape: Tape | None = None) -> Var:
    """e = relu(W_e p + b_e); requires normalized coordinates."""
    if p.units != NORMALIZED:
        raise UnitsError(f"embed_position needs normalized input, got {p.units!r}")
    return nd.relu(nd.affine(params.w_e, p.array(), params.b_e, tape), tape)


def interaction_vector(target: PedestrianState, others: list[PedestrianState],
                       sigma: float, tape: Tape | None = None) -> Var:
    """Correntropy-weighted sum of previous hidden states.

    The target's own state enters with weight exactly 1.  Accumulation
    runs in the order given, one neighbour at a time, so the result is
    bit-reproducible against a plain pairwise-sum transcription.
    """
    acc = target.h
    for other in others:
        if other.h.data.shape != target.h.data.shape:
            raise DimensionError(
                f"interaction_vector: hidden shapes {other.h.data.shape} "
                f"vs {target.h.data.shape}")
        ce = correntropy_weight(target.pos, other.pos, sigma)
        acc = nd.add(acc, nd.mul(other.h, ce, tape), tape)
    return acc


def embed_interaction(hvec: Var, params: ModelParams,
                      tape: Tape | None = None) -> Var:
    """a = relu(W_a H + b_a)."""
    return nd.relu(nd.affine(params.w_a, hvec, params.b_a, tape), tape)


def step_scene(states: list[PedestrianState], positions: dict[int, Position],
               params: ModelParams, sigma: float,
               tape: Tape | None = None, ce_units: str = WORLD,
               to_normalized=None) -> list[PedestrianState]:
    """Advance every pedestrian present in `positions` by one frame.

    States for absent pedestrians pass through unchanged; ids present in
    positions but without a state get zero-initialised ones.  Interaction
    vectors for all pedestrians are computed from the pre-step snapshot.

    Positions may be world or normalized; `ce_units` picks which system
    the kernel sees, and `to_normalized` (world Position -> normalized
    Position) must be supplied when world positions are given.
    """
    by_id = {s.ped_id: s for s in states}
    order = [s.ped_id for s in states if s.ped_id in positions]
    order += sorted(pid for pid in positions if pid not in by_id)

    snapshot = {}
    for pid in order:
        pos = positions[pid]
        st = by_id.get(pid) or PedestrianState.fresh(pid, params.hidden_dim, pos)
        snapshot[pid] = replace(st, pos=pos)

    def norm_pos(pos: Position) -> Position:
        if pos.units == NORMALIZED:
            return pos
        if to_normalized is None:
            raise UnitsError("world positions given without a normalizer")
        return to_normalized(pos)

    def kernel_pos(pos: Position) -> Position:
        if pos.units == ce_units:
            return pos
        if ce_units == NORMALIZED:
            return norm_pos(pos)
        raise UnitsError("kernel wants world units but only normalized "
                         "positions were given")

    updated = []
    for pid in order:
        me = snapshot[pid]
        kp = replace(me, pos=kernel_pos(me.pos))
        others = [replace(snapshot[q], pos=kernel_pos(snapshot[q].pos))
                  for q in order if q != pid]
        e = embed_position(norm_pos(me.pos), params, tape)
        if params.interaction:
            hint = interaction_vector(kp, others, sigma, tape)
            a = embed_interaction(hint, params, tape)
        else:
            a = nd.zeros(params.embed_dim)
        x = nd.concat(e, a, tape)
        h2, c2 = nd.lstm_cell(x, me.h, me.c, params.lstm, tape)
        updated.append(PedestrianState(pid, h2, c2, me.pos))

    out = {s.ped_id: s for s in updated}
    result = [out.get(s.ped_id, s) for s in states]
    known = {s.ped_id for s in states}
    result += [s for s in updated if s.ped_id not in known]
    return result


# ---------------------------------------------------------------------------
# batched engine step (same math as step_scene, matrix granularity)

def scene_step_rows(h: Var, c: Var, idx: np.ndarray, pos_norm: np.ndarray,
                    pos_kernel: np.ndarray, params: ModelParams, sigma: float,
                    tape: Tape | None = None):
    """One frame update for the pedestrians in rows `idx` of (h, c).

    pos_norm feeds the position embedding, pos_kernel the correntropy
    weights; both are (len(idx), 2) constants.  Returns the new (h, c)
    with non-present rows carried over unchanged.
    """
    hp = nd.gather_rows(h, idx, tape)
    cp = nd.gather_rows(c, idx, tape)
    e = nd.relu(nd.linear(pos_norm, params.w_e, params.b_e, tape), tape)
    if params.interaction:
        ce = correntropy_matrix(pos_kernel, sigma)
        hint = nd.matmul_const(ce, hp, tape)
        a = nd.relu(nd.linear(hint, params.w_a, params.b_a, tape), tape)
        x = nd.hstack([e, a], tape)
    else:
        x = nd.hstack([e, np.zeros((len(idx), params.embed_dim))], tape)
    hn, cn = nd.lstm_rows(x, hp, cp, params.lstm, tape)
    return (nd.scatter_rows(h, idx, hn, tape),
            nd.scatter_rows(c, idx, cn, tape))


def head_rows(h_rows, params: ModelParams, tape: Tape | None = None) -> Var:
    """Gaussian parameters for each row of hidden state, activations applied.

    Output columns are (mu_x, mu_y, sigma_x, sigma_y, rho).
    """
    raw = nd.linear(h_rows, params.w_o, params.b_o, tape)
    mu = nd.slice_cols(raw, 0, 2, tape)
    sig = nd.exp(nd.slice_cols(raw, 2, 4, tape), tape)
    rho = nd.tanh(nd.slice_cols(raw, 4, 5, tape), tape)
    return nd.hstack([mu, sig, rho], tape)


def nll_rows(g: Var, targets: np.ndarray, tape: Tape | None = None) -> Var:
    """Summed negative log likelihood of targets under row-wise Gaussians.

    g is (n, 5) with activations already applied; targets is (n, 2).
    rho is clamped to +-0.999 before evaluation.
    """
    gd = g.data if isinstance(g, Var) else g
    if not np.isfinite(gd).all() or not np.isfinite(targets).all():
        raise NumericError(
            f"nll: non-finite inputs; params={gd!r} targets={targets!r}")
    mux = nd.slice_cols(g, 0, 1, tape)
    muy = nd.slice_cols(g, 1, 2, tape)
    sx = nd.slice_cols(g, 2, 3, tape)
    sy = nd.slice_cols(g, 3, 4, tape)
    rho = nd.clamp(nd.slice_cols(g, 4, 5, tape), -RHO_CLAMP, RHO_CLAMP, tape)

    tx, ty = targets[:, 0:1], targets[:, 1:2]
    zx = nd.div(nd.sub(tx, mux, tape), sx, tape)
    zy = nd.div(nd.sub(ty, muy, tape), sy, tape)
    cross = nd.mul(nd.mul(rho, zx, tape), zy, tape)
    z = nd.sub(nd.add(nd.mul(zx, zx, tape), nd.mul(zy, zy, tape), tape),
               nd.mul(cross, 2.0, tape), tape)
    omr = nd.sub(1.0, nd.mul(rho, rho, tape), tape)
    quad = nd.div(z, nd.mul(omr, 2.0, tape), tape)
    logdet = nd.add(nd.add(nd.log(sx, tape), nd.log(sy, tape), tape),
                    nd.mul(nd.log(omr, tape), 0.5, tape), tape)
    per_row = nd.add(nd.add(quad, logdet, tape), LOG_2PI, tape)
    return nd.reduce_sum(per_row, tape)


# ---------------------------------------------------------------------------
# Gaussian surface

@dataclass
class GaussianParams2D:
    """Bivariate Gaussian over the next position, in normalized units.

    sigma_x, sigma_y are positive and |rho| < 1 by construction of the
    head.  `vec` keeps the activated (5,) graph node when the value was
    produced differentiably.
    """
    mu_x: float
    mu_y: float
    sigma_x: float
    sigma_y: float
    rho: float
    vec: Var | None = None

    @classmethod
    def from_vector(cls, v) -> "GaussianParams2D":
        d = v.data if isinstance(v, Var) else np.asarray(v, dtype=np.float64)
        return cls(float(d[0]), float(d[1]), float(d[2]), float(d[3]),
                   float(d[4]), vec=v if isinstance(v, Var) else None)

    @classmethod
    def as_leaf(cls, mu_x, mu_y, sigma_x, sigma_y, rho) -> "GaussianParams2D":
        """Build from raw numbers with a gradient-tracked backing vector."""
        return cls.from_vector(Var(np.array([mu_x, mu_y, sigma_x, sigma_y, rho])))


def output_head(h: Var, params: ModelParams,
                tape: Tape | None = None) -> GaussianParams2D:
    """Map one hidden state to its Gaussian (vector granularity)."""
    hr = nd.reshape(h, (1, params.hidden_dim), tape)
    g = nd.reshape(head_rows(hr, params, tape), (5,), tape)
    return GaussianParams2D.from_vector(g)


def nll_loss(g: GaussianParams2D, target: Position,
             tape: Tape | None = None) -> Var:
    """Negative log likelihood of one target under one Gaussian."""
    if target.units != NORMALIZED:
        raise UnitsError(f"nll_loss target must be normalized, got {target.units!r}")
    vec = g.vec if g.vec is not None else Var(
        np.array([g.mu_x, g.mu_y, g.sigma_x, g.sigma_y, g.rho]))
    rows = nd.reshape(vec, (1, 5), tape)
    return nll_rows(rows, target.array().reshape(1, 2), tape)


def sample_position(g: GaussianParams2D, rng: np.random.Generator) -> Position:
    """Draw one position via the 2x2 Cholesky factor of the covariance."""
    z1, z2 = rng.standard_normal(2)
    x = g.mu_x + g.sigma_x * z1
    y = g.mu_y + g.sigma_y * (g.rho * z1 + math.sqrt(1.0 - g.rho * g.rho) * z2)
    return Position(x, y, NORMALIZED)
