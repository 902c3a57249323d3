"""Dense float64 arrays with tape-based reverse-mode differentiation.

Every differentiable value lives in a ``Var`` wrapping a numpy array.
Operations take an optional ``Tape``; when one is supplied the op appends
a backward closure to it.  ``Tape.backward`` seeds the loss gradient with
one and replays the recorded closures in exact reverse order, so the
replay order is always a valid reverse topological order of the dynamic
graph.  With ``tape=None`` the same functions run forward-only, which is
what inference uses.

Conventions:
  * vectors are 1-d arrays, matrices 2-d; shapes never change in place
  * gradient buffers are allocated lazily and always match the data shape
  * binary elementwise ops require identical shapes or a python scalar
    on one side; there is deliberately no silent broadcasting
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, NumericError


class Var:
    """A float64 array tracked for gradients."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def grad_buffer(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Var(shape={self.data.shape})"


def zeros(shape) -> Var:
    return Var(np.zeros(shape, dtype=np.float64))


def _d(x):
    """Raw array (or scalar) behind a Var-or-constant operand."""
    return x.data if isinstance(x, Var) else x


def _accum(x, g):
    if isinstance(x, Var):
        x.grad_buffer()
        x.grad += g


class Tape:
    """Ordered record of backward closures for one forward computation."""

    __slots__ = ("_ops",)

    def __init__(self):
        self._ops = []

    def record(self, backward_fn):
        self._ops.append(backward_fn)

    def __len__(self):
        return len(self._ops)

    def backward(self, out: Var):
        """Seed d(out)/d(out) = 1 and replay all closures newest-first."""
        if out.data.size != 1:
            raise DimensionError(
                f"backward needs a scalar loss, got shape {out.data.shape}")
        out.grad_buffer()
        out.grad += np.ones_like(out.data)
        for fn in reversed(self._ops):
            fn()


# ---------------------------------------------------------------------------
# linear maps

def affine(w: Var, x, b: Var, tape: Tape | None = None) -> Var:
    """y = W @ x + b for a single vector x."""
    wd, xd, bd = _d(w), _d(x), _d(b)
    if wd.ndim != 2 or xd.ndim != 1 or wd.shape[1] != xd.shape[0]:
        raise DimensionError(
            f"affine: W has shape {wd.shape}, x has shape {xd.shape}")
    if bd.shape != (wd.shape[0],):
        raise DimensionError(
            f"affine: b has shape {bd.shape}, expected ({wd.shape[0]},)")
    out = Var(wd @ xd + bd)
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            g = out.grad
            _accum(w, np.outer(g, xd))
            _accum(b, g)
            if isinstance(x, Var):
                _accum(x, wd.T @ g)
        tape.record(bwd)
    return out


def linear(x, w: Var, b: Var, tape: Tape | None = None) -> Var:
    """Row-wise affine map: Y = X @ W.T + b with X of shape (n, k)."""
    xd, wd, bd = _d(x), _d(w), _d(b)
    if xd.ndim != 2 or wd.ndim != 2 or xd.shape[1] != wd.shape[1]:
        raise DimensionError(
            f"linear: X has shape {xd.shape}, W has shape {wd.shape}")
    if bd.shape != (wd.shape[0],):
        raise DimensionError(
            f"linear: b has shape {bd.shape}, expected ({wd.shape[0]},)")
    out = Var(xd @ wd.T + bd)
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            g = out.grad
            _accum(w, g.T @ xd)
            _accum(b, g.sum(axis=0))
            if isinstance(x, Var):
                _accum(x, g @ wd)
        tape.record(bwd)
    return out


def matmul_const(a: np.ndarray, x: Var, tape: Tape | None = None) -> Var:
    """Y = A @ X where A is a constant matrix carrying no gradient."""
    xd = _d(x)
    if a.ndim != 2 or xd.ndim != 2 or a.shape[1] != xd.shape[0]:
        raise DimensionError(
            f"matmul_const: A has shape {a.shape}, X has shape {xd.shape}")
    out = Var(a @ xd)
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            _accum(x, a.T @ out.grad)
        tape.record(bwd)
    return out


# ---------------------------------------------------------------------------
# elementwise nonlinearities

def relu(x, tape: Tape | None = None) -> Var:
    xd = _d(x)
    out = Var(np.maximum(xd, 0.0))
    if tape is not None:
        mask = xd > 0.0
        def bwd():
            if out.grad is None:
                return
            _accum(x, out.grad * mask)
        tape.record(bwd)
    return out


def sigmoid(x, tape: Tape | None = None) -> Var:
    yd = 1.0 / (1.0 + np.exp(-_d(x)))
    out = Var(yd)
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            _accum(x, out.grad * yd * (1.0 - yd))
        tape.record(bwd)
    return out


def tanh(x, tape: Tape | None = None) -> Var:
    yd = np.tanh(_d(x))
    out = Var(yd)
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            _accum(x, out.grad * (1.0 - yd * yd))
        tape.record(bwd)
    return out


def exp(x, tape: Tape | None = None) -> Var:
    yd = np.exp(_d(x))
    out = Var(yd)
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            _accum(x, out.grad * yd)
        tape.record(bwd)
    return out


def log(x, tape: Tape | None = None) -> Var:
    xd = _d(x)
    if np.any(xd <= 0.0):
        bad = tuple(int(i) for i in np.argwhere(xd <= 0.0)[0])
        raise DomainError(
            f"log of non-positive value {float(xd[bad])!r} at index {bad}")
    out = Var(np.log(xd))
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            _accum(x, out.grad / xd)
        tape.record(bwd)
    return out


def clamp(x, lo: float, hi: float, tape: Tape | None = None) -> Var:
    """Clip to [lo, hi]; gradient is zero in the saturated region."""
    xd = _d(x)
    out = Var(np.clip(xd, lo, hi))
    if tape is not None:
        mask = (xd > lo) & (xd < hi)
        def bwd():
            if out.grad is None:
                return
            _accum(x, out.grad * mask)
        tape.record(bwd)
    return out


# ---------------------------------------------------------------------------
# elementwise binary ops (same shape, or python scalar on one side)

def _check_binary(ad, bd, name):
    a_scalar = np.ndim(ad) == 0
    b_scalar = np.ndim(bd) == 0
    if not a_scalar and not b_scalar and np.shape(ad) != np.shape(bd):
        raise DimensionError(
            f"{name}: shapes {np.shape(ad)} and {np.shape(bd)} differ")


def add(a, b, tape: Tape | None = None) -> Var:
    ad, bd = _d(a), _d(b)
    _check_binary(ad, bd, "add")
    out = Var(ad + bd)
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            g = out.grad
            if isinstance(a, Var):
                _accum(a, g if np.ndim(ad) else g.sum())
            if isinstance(b, Var):
                _accum(b, g if np.ndim(bd) else g.sum())
        tape.record(bwd)
    return out


def sub(a, b, tape: Tape | None = None) -> Var:
    ad, bd = _d(a), _d(b)
    _check_binary(ad, bd, "sub")
    out = Var(ad - bd)
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            g = out.grad
            if isinstance(a, Var):
                _accum(a, g if np.ndim(ad) else g.sum())
            if isinstance(b, Var):
                _accum(b, -g if np.ndim(bd) else -g.sum())
        tape.record(bwd)
    return out


def mul(a, b, tape: Tape | None = None) -> Var:
    ad, bd = _d(a), _d(b)
    _check_binary(ad, bd, "mul")
    out = Var(ad * bd)
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            g = out.grad
            if isinstance(a, Var):
                ga = g * bd
                _accum(a, ga if np.ndim(ad) else ga.sum())
            if isinstance(b, Var):
                gb = g * ad
                _accum(b, gb if np.ndim(bd) else gb.sum())
        tape.record(bwd)
    return out


# alias kept because callers read better with the explicit name
elementwise_mul = mul


def div(a, b, tape: Tape | None = None) -> Var:
    ad, bd = _d(a), _d(b)
    _check_binary(ad, bd, "div")
    out = Var(ad / bd)
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            g = out.grad
            if isinstance(a, Var):
                ga = g / bd
                _accum(a, ga if np.ndim(ad) else ga.sum())
            if isinstance(b, Var):
                gb = -g * ad / (bd * bd)
                _accum(b, gb if np.ndim(bd) else gb.sum())
        tape.record(bwd)
    return out


# ---------------------------------------------------------------------------
# shape ops

def concat(a, b, tape: Tape | None = None) -> Var:
    """Concatenate two vectors."""
    ad, bd = _d(a), _d(b)
    if ad.ndim != 1 or bd.ndim != 1:
        raise DimensionError(
            f"concat expects vectors, got shapes {ad.shape} and {bd.shape}")
    out = Var(np.concatenate([ad, bd]))
    if tape is not None:
        n = ad.shape[0]
        def bwd():
            if out.grad is None:
                return
            _accum(a, out.grad[:n])
            _accum(b, out.grad[n:])
        tape.record(bwd)
    return out


def hstack(parts, tape: Tape | None = None) -> Var:
    """Column-concatenate matrices that share a row count."""
    datas = [_d(p) for p in parts]
    rows = datas[0].shape[0]
    for d in datas:
        if d.ndim != 2 or d.shape[0] != rows:
            raise DimensionError(
                f"hstack: incompatible shapes {[d.shape for d in datas]}")
    out = Var(np.hstack(datas))
    if tape is not None:
        widths = [d.shape[1] for d in datas]
        def bwd():
            if out.grad is None:
                return
            j = 0
            for p, w in zip(parts, widths):
                _accum(p, out.grad[:, j:j + w])
                j += w
        tape.record(bwd)
    return out


def vstack(parts, tape: Tape | None = None) -> Var:
    """Row-concatenate matrices that share a column count."""
    datas = [_d(p) for p in parts]
    cols = datas[0].shape[1]
    for d in datas:
        if d.ndim != 2 or d.shape[1] != cols:
            raise DimensionError(
                f"vstack: incompatible shapes {[d.shape for d in datas]}")
    out = Var(np.vstack(datas))
    if tape is not None:
        heights = [d.shape[0] for d in datas]
        def bwd():
            if out.grad is None:
                return
            i = 0
            for p, h in zip(parts, heights):
                _accum(p, out.grad[i:i + h])
                i += h
        tape.record(bwd)
    return out


def slice_cols(x, j0: int, j1: int, tape: Tape | None = None) -> Var:
    xd = _d(x)
    if xd.ndim != 2:
        raise DimensionError(f"slice_cols expects a matrix, got {xd.shape}")
    out = Var(xd[:, j0:j1].copy())
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            if isinstance(x, Var):
                x.grad_buffer()
                x.grad[:, j0:j1] += out.grad
        tape.record(bwd)
    return out


def gather_rows(x, idx: np.ndarray, tape: Tape | None = None) -> Var:
    """Select rows by index.  Indices must be unique."""
    xd = _d(x)
    out = Var(xd[idx])
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            if isinstance(x, Var):
                x.grad_buffer()
                x.grad[idx] += out.grad
        tape.record(bwd)
    return out


def scatter_rows(base, idx: np.ndarray, rows, tape: Tape | None = None) -> Var:
    """Copy of base with rows[idx] replaced; replaced rows pass no gradient
    back to base."""
    basd, rowd = _d(base), _d(rows)
    if rowd.shape[1:] != basd.shape[1:]:
        raise DimensionError(
            f"scatter_rows: row shape {rowd.shape} vs base {basd.shape}")
    data = basd.copy()
    data[idx] = rowd
    out = Var(data)
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            _accum(rows, out.grad[idx])
            if isinstance(base, Var):
                g = out.grad.copy()
                g[idx] = 0.0
                _accum(base, g)
        tape.record(bwd)
    return out


def reshape(x, shape, tape: Tape | None = None) -> Var:
    xd = _d(x)
    out = Var(xd.reshape(shape))
    if tape is not None:
        orig = xd.shape
        def bwd():
            if out.grad is None:
                return
            _accum(x, out.grad.reshape(orig))
        tape.record(bwd)
    return out


def reduce_sum(x, tape: Tape | None = None) -> Var:
    """Sum of all elements, returned as a scalar Var."""
    xd = _d(x)
    out = Var(xd.sum())
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            _accum(x, np.full_like(xd, float(out.grad)))
        tape.record(bwd)
    return out


# ---------------------------------------------------------------------------
# LSTM cell

@dataclass
class LSTMWeights:
    """Packed LSTM parameters.

    Gate rows are ordered [input, forget, output, cell-candidate] so the
    three sigmoid gates occupy one contiguous block.  w_x is (4D, input),
    w_h is (4D, D), b is (4D,).
    """
    w_x: Var
    w_h: Var
    b: Var

    GATE_ORDER = "ifog"

    @property
    def hidden_size(self) -> int:
        return self.w_h.data.shape[1]

    @property
    def input_size(self) -> int:
        return self.w_x.data.shape[1]

    @classmethod
    def init(cls, input_size: int, hidden_size: int, rng: np.random.Generator):
        """Uniform(-1/sqrt(D), 1/sqrt(D)) weights, forget bias 1, others 0."""
        d = hidden_size
        bound = 1.0 / math.sqrt(d)
        w_x = rng.uniform(-bound, bound, size=(4 * d, input_size))
        w_h = rng.uniform(-bound, bound, size=(4 * d, d))
        b = np.zeros(4 * d)
        b[d:2 * d] = 1.0
        return cls(Var(w_x), Var(w_h), Var(b))


def lstm_rows(x, h_prev, c_prev, w: LSTMWeights, tape: Tape | None = None):
    """One LSTM step over rows: x (n, input), h_prev and c_prev (n, D).

    Fused forward/backward; the backward closure reads the gradients of
    both outputs, either of which may be unused.
    """
    xd, hd, cd = _d(x), _d(h_prev), _d(c_prev)
    wxd, whd, bd = w.w_x.data, w.w_h.data, w.b.data
    d = w.hidden_size
    if xd.ndim != 2 or xd.shape[1] != w.input_size:
        raise DimensionError(
            f"lstm: x has shape {xd.shape}, expected (n, {w.input_size})")
    if hd.shape != (xd.shape[0], d) or cd.shape != (xd.shape[0], d):
        raise DimensionError(
            f"lstm: h {hd.shape} / c {cd.shape}, expected ({xd.shape[0]}, {d})")

    z = xd @ wxd.T + hd @ whd.T + bd
    s = 1.0 / (1.0 + np.exp(-z[:, :3 * d]))
    i, f, o = s[:, :d], s[:, d:2 * d], s[:, 2 * d:]
    g = np.tanh(z[:, 3 * d:])
    c_new = f * cd + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    h_out, c_out = Var(h_new), Var(c_new)

    if tape is not None:
        def bwd():
            dh = h_out.grad
            dc_out = c_out.grad
            if dh is None and dc_out is None:
                return
            if dh is None:
                dh = 0.0
            dc = dh * o * (1.0 - tc * tc)
            if dc_out is not None:
                dc = dc + dc_out
            d_o = dh * tc
            dz = np.empty_like(z)
            dz[:, :d] = (dc * g) * i * (1.0 - i)
            dz[:, d:2 * d] = (dc * cd) * f * (1.0 - f)
            dz[:, 2 * d:3 * d] = d_o * o * (1.0 - o)
            dz[:, 3 * d:] = (dc * i) * (1.0 - g * g)
            _accum(w.w_x, dz.T @ xd)
            _accum(w.w_h, dz.T @ hd)
            _accum(w.b, dz.sum(axis=0))
            if isinstance(x, Var):
                _accum(x, dz @ wxd)
            if isinstance(h_prev, Var):
                _accum(h_prev, dz @ whd)
            if isinstance(c_prev, Var):
                _accum(c_prev, dc * f)
        tape.record(bwd)
    return h_out, c_out


def lstm_cell(x, h_prev, c_prev, w: LSTMWeights, tape: Tape | None = None):
    """Vector form of lstm_rows for a single pedestrian."""
    xd = _d(x)
    if xd.ndim != 1:
        raise DimensionError(f"lstm_cell expects a vector, got {xd.shape}")
    xr = reshape(x, (1, xd.shape[0]), tape)
    hr = reshape(h_prev, (1, _d(h_prev).shape[0]), tape)
    cr = reshape(c_prev, (1, _d(c_prev).shape[0]), tape)
    h2, c2 = lstm_rows(xr, hr, cr, w, tape)
    d = w.hidden_size
    return reshape(h2, (d,), tape), reshape(c2, (d,), tape)


# ---------------------------------------------------------------------------
# gradient checking

def gradient_check(loss_builder, params, epsilon: float = 1e-5) -> float:
    """Compare tape gradients with central finite differences.

    loss_builder(tape) must rebuild the same scalar loss from the current
    parameter values.  params is a dict of name -> Var.  Returns the max
    over all parameter elements of
        |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    if not (1e-7 <= epsilon <= 1e-3):
        raise ValueError(f"epsilon {epsilon} outside [1e-7, 1e-3]")
    for p in params.values():
        p.zero_grad()
    tape = Tape()
    loss = loss_builder(tape)
    if not np.isfinite(loss.data).all():
        raise NumericError(f"gradient_check: non-finite loss {loss.data!r}")
    tape.backward(loss)
    analytic = {k: (np.zeros_like(v.data) if v.grad is None else v.grad.copy())
                for k, v in params.items()}

    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        for k in range(flat.shape[0]):
            orig = flat[k]
            flat[k] = orig + epsilon
            up = float(loss_builder(None).data)
            flat[k] = orig - epsilon
            dn = float(loss_builder(None).data)
            flat[k] = orig
            numeric = (up - dn) / (2.0 * epsilon)
            a = float(analytic[name].reshape(-1)[k])
            denom = max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, abs(a - numeric) / denom)
    return worst
