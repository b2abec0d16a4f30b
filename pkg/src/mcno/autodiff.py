"""Dense float64 tensors with a tape-based reverse mode.

Only the handful of ops the operator model needs are provided.  Ops record
themselves on the innermost active :class:`Tape` when at least one input is
tracked (a parameter or the output of a tracked op); otherwise they are plain
numpy computations.

    >>> w = Tensor(np.eye(2)[None].repeat(3, 0), requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = sum_all(sample_mix(w, Tensor(np.ones((1, 3, 2)))))
    >>> grads = backward(tape, loss)
    >>> grads[w.node].shape
    (3, 2, 2)
"""
from __future__ import annotations

import itertools
import threading
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

_node_ids = itertools.count(1)
_local = threading.local()


class Tensor:
    """A float64 array, optionally linked to the tape through ``node``."""

    __slots__ = ("data", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64, order="C")
        self.requires_grad = requires_grad
        self.node: Optional[int] = next(_node_ids) if requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def tracked(self) -> bool:
        return self.node is not None

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = f", node={self.node}" if self.node is not None else ""
        return f"Tensor(shape={self.shape}{tag})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor_create(shape, fill: str = "zeros", *, value: float = 0.0, values=None,
                  rng=None, stddev: float = 1.0, requires_grad: bool = False) -> Tensor:
    """Create a tensor filled with zeros, a constant, given values or Gaussians."""
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0 or any(s < 1 for s in shape):
        raise ValueError(f"shape extents must be >= 1, got {shape}")
    if fill == "zeros":
        data = np.zeros(shape)
    elif fill == "constant":
        data = np.full(shape, float(value))
    elif fill == "values":
        data = np.asarray(values, dtype=np.float64)
        if data.size != int(np.prod(shape)):
            raise ValueError(f"{data.size} values do not fill shape {shape}")
        data = data.reshape(shape)
    elif fill == "gaussian":
        if rng is None:
            raise ValueError("gaussian fill needs an rng")
        data = rng.normal(shape, std=stddev)
    else:
        raise ValueError(f"unknown fill {fill!r}")
    return Tensor(data, requires_grad=requires_grad)


# ----------------------------------------------------------------------------
# tape


@dataclass
class Record:
    op: str
    inputs: tuple
    out: int
    backward: Callable


@dataclass
class Tape:
    """Ordered op records of one forward pass.  Freed by :func:`backward`."""

    records: list = field(default_factory=list)
    grads: dict = field(default_factory=dict)

    def __enter__(self):
        stack = getattr(_local, "tapes", None)
        if stack is None:
            stack = _local.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.tapes.pop()
        return False

    def grad(self, t: Tensor) -> np.ndarray:
        return self.grads[t.node]


def _active_tape() -> Optional[Tape]:
    stack = getattr(_local, "tapes", None)
    return stack[-1] if stack else None


def _emit(op: str, inputs: Sequence[Tensor], data: np.ndarray, backward: Callable) -> Tensor:
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(t.tracked for t in inputs):
        out.node = next(_node_ids)
        tape.records.append(Record(op, tuple(inputs), out.node, backward))
    return out


def backward(tape: Tape, loss: Tensor) -> dict:
    """Reverse sweep from a scalar ``loss``; returns ``{node: grad}``.

    Every tracked input seen on the tape gets a buffer, zero if unreached.
    Untracked constants get none.  The tape's records are released.
    """
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    if loss.node is None:
        raise ValueError("loss is not connected to any tracked tensor")
    grads = {loss.node: np.ones_like(loss.data)}
    for rec in reversed(tape.records):
        g = grads.get(rec.out)
        if g is None:
            continue
        in_grads = rec.backward(g)
        for t, gi in zip(rec.inputs, in_grads):
            if not t.tracked or gi is None:
                continue
            if t.node in grads:
                grads[t.node] = grads[t.node] + gi
            else:
                grads[t.node] = gi
    for rec in tape.records:
        for t in rec.inputs:
            if t.tracked and t.node not in grads:
                grads[t.node] = np.zeros_like(t.data)
    tape.records = []
    tape.grads = grads
    return grads


# ----------------------------------------------------------------------------
# arithmetic op counting


@contextmanager
def count_ops():
    """Collect arithmetic operation counts per op name while active."""
    prev = getattr(_local, "counter", None)
    counter = Counter()
    _local.counter = counter
    try:
        yield counter
    finally:
        _local.counter = prev


def _count(op: str, n: int):
    counter = getattr(_local, "counter", None)
    if counter is not None:
        counter[op] += int(n)


# ----------------------------------------------------------------------------
# ops


def _need(cond: bool, msg: str):
    if not cond:
        raise ValueError(msg)


def pointwise_linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Per-point affine map: ``out[b, g] = x[b, g] @ weight + bias``."""
    x, weight = as_tensor(x), as_tensor(weight)
    _need(x.data.ndim == 3, f"x must be [B,G,Cin], got {x.shape}")
    _need(weight.data.ndim == 2 and weight.shape[0] == x.shape[2],
          f"weight {weight.shape} does not match x channels {x.shape[2]}")
    B, G, cin = x.shape
    cout = weight.shape[1]
    x2 = x.data.reshape(B * G, cin)
    # one identically shaped product per batch row keeps results bitwise batch-invariant
    out = np.stack([xb @ weight.data for xb in x.data]).reshape(B * G, cout)
    inputs = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        _need(bias.shape == (cout,), f"bias {bias.shape} does not match {cout} outputs")
        out += bias.data
        inputs.append(bias)
    _count("pointwise_linear", 2 * B * G * cin * cout)

    def back(g):
        g2 = g.reshape(B * G, cout)
        gx = (g2 @ weight.data.T).reshape(B, G, cin) if x.tracked else None
        gw = x2.T @ g2 if weight.tracked else None
        grads = [gx, gw]
        if bias is not None:
            grads.append(g2.sum(axis=0) if bias.tracked else None)
        return grads

    return _emit("pointwise_linear", inputs, out.reshape(B, G, cout), back)


def sample_mix(phi: Tensor, vs: Tensor) -> Tensor:
    """Per-sample matrix-vector product: ``out[b, i] = phi[i] @ vs[b, i]``."""
    phi, vs = as_tensor(phi), as_tensor(vs)
    _need(phi.data.ndim == 3 and vs.data.ndim == 3, "phi must be [N,Co,Ci] and vs [B,N,Ci]")
    _need(phi.shape[0] == vs.shape[1], f"phi has {phi.shape[0]} samples, vs has {vs.shape[1]}")
    _need(phi.shape[2] == vs.shape[2], f"phi inner extent {phi.shape[2]} != vs channels {vs.shape[2]}")
    B, N, ci = vs.shape
    co = phi.shape[1]
    out = np.stack([np.matmul(phi.data, vb[:, :, None])[:, :, 0] for vb in vs.data])
    _count("sample_mix", 2 * B * N * ci * co)

    def back(g):
        gt = g.transpose(1, 2, 0)  # [N, Co, B]
        gphi = np.matmul(gt, vs.data.transpose(1, 0, 2)) if phi.tracked else None
        gvs = np.matmul(phi.data.transpose(0, 2, 1), gt).transpose(2, 0, 1) if vs.tracked else None
        return gphi, gvs

    return _emit("sample_mix", [phi, vs], out, back)


def gather_points(v: Tensor, idx) -> Tensor:
    """Select grid points ``idx`` (strictly increasing) from ``v[B, G, C]``."""
    v = as_tensor(v)
    idx = np.asarray(idx, dtype=np.int64)
    _need(v.data.ndim == 3, f"v must be [B,G,C], got {v.shape}")
    G = v.shape[1]
    if idx.ndim != 1 or idx.size == 0:
        raise ValueError("idx must be a non-empty 1-d index list")
    if idx[0] < 0 or idx[-1] >= G or np.any(idx < 0) or np.any(idx >= G):
        raise IndexError(f"indices out of range for grid of {G} points")
    if np.any(np.diff(idx) <= 0):
        raise ValueError("indices must be strictly increasing")

    def back(g):
        gv = np.zeros_like(v.data)
        gv[:, idx] = g
        return (gv,)

    return _emit("gather_points", [v], v.data[:, idx], back)


def reduce_mean_samples(z: Tensor) -> Tensor:
    """Monte Carlo average over the sample axis: ``[B, N, C] -> [B, C]``."""
    z = as_tensor(z)
    _need(z.data.ndim == 3, f"z must be [B,N,C], got {z.shape}")
    B, N, C = z.shape
    _count("reduce_mean_samples", B * N * C)

    def back(g):
        return (np.broadcast_to(g[:, None, :] / N, z.shape).copy(),)

    return _emit("reduce_mean_samples", [z], z.data.mean(axis=1), back)


def broadcast_points(m: Tensor, n_points: int) -> Tensor:
    """Repeat ``m[B, C]`` at every grid point: ``[B, G, C]``."""
    m = as_tensor(m)
    _need(m.data.ndim == 2, f"m must be [B,C], got {m.shape}")
    out = np.repeat(m.data[:, None, :], n_points, axis=1)

    def back(g):
        return (g.sum(axis=1),)

    return _emit("broadcast_points", [m], out, back)


@dataclass(frozen=True)
class InterpPlan:
    """Two-tap periodic linear interpolation from nodes ``xs`` to queries ``xq``."""

    left: np.ndarray
    right: np.ndarray
    weight: np.ndarray
    n_nodes: int

    def matrix(self) -> sp.csr_matrix:
        G = self.left.size
        rows = np.concatenate([np.arange(G), np.arange(G)])
        cols = np.concatenate([self.left, self.right])
        vals = np.concatenate([1.0 - self.weight, self.weight])
        return sp.csr_matrix((vals, (rows, cols)), shape=(G, self.n_nodes))


def interp_plan(xs, xq) -> InterpPlan:
    xs = np.asarray(xs, dtype=np.float64)
    xq = np.asarray(xq, dtype=np.float64)
    if xs.ndim != 1 or xs.size < 2:
        raise ValueError("need at least two interpolation nodes")
    if np.any(np.diff(xs) <= 0):
        raise ValueError("node coordinates must be strictly increasing")
    for name, arr in (("node", xs), ("query", xq)):
        if np.any(arr < 0.0) or np.any(arr >= 1.0):
            raise ValueError(f"{name} coordinates must lie in [0, 1)")
    N = xs.size
    i = np.searchsorted(xs, xq, side="right") - 1
    left = np.where(i < 0, N - 1, i)
    right = (left + 1) % N
    x_left = np.where(i < 0, xs[N - 1] - 1.0, xs[left])
    x_right = np.where(i == N - 1, xs[0] + 1.0, xs[right])
    w = (xq - x_left) / (x_right - x_left)
    return InterpPlan(left.astype(np.int64), right.astype(np.int64), w, N)


def interp1d_periodic(z: Tensor, xs=None, xq=None, plan: Optional[InterpPlan] = None) -> Tensor:
    """Periodic piecewise-linear interpolation along the point axis of ``z[B, N, C]``."""
    z = as_tensor(z)
    if plan is None:
        plan = interp_plan(xs, xq)
    _need(z.data.ndim == 3 and z.shape[1] == plan.n_nodes,
          f"z {z.shape} does not match {plan.n_nodes} interpolation nodes")
    B, N, C = z.shape
    G = plan.left.size
    w = plan.weight[None, :, None]
    out = z.data[:, plan.left] * (1.0 - w) + z.data[:, plan.right] * w
    _count("interp1d_periodic", 3 * B * G * C)

    def back(g):
        At = plan.matrix().T.tocsr()
        g2 = g.transpose(1, 0, 2).reshape(G, B * C)
        return ((At @ g2).reshape(N, B, C).transpose(1, 0, 2),)

    return _emit("interp1d_periodic", [z], out, back)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    _count("relu", x.data.size)

    def back(g):
        return (g * mask,)

    return _emit("relu", [x], np.where(mask, x.data, 0.0), back)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _need(a.shape == b.shape, f"shape mismatch {a.shape} vs {b.shape}")
    _count("add", a.data.size)
    return _emit("add", [a, b], a.data + b.data, lambda g: (g, g))


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a fixed scalar."""
    x = as_tensor(x)
    c = float(c)
    _count("scale", x.data.size)
    return _emit("scale", [x], x.data * c, lambda g: (g * c,))


def squeeze_channel(x: Tensor) -> Tensor:
    """``[B, G, 1] -> [B, G]``."""
    x = as_tensor(x)
    _need(x.data.ndim == 3 and x.shape[2] == 1, f"expected [B,G,1], got {x.shape}")
    return _emit("squeeze_channel", [x], x.data[:, :, 0], lambda g: (g[:, :, None],))


def sum_all(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return _emit("sum_all", [x], np.asarray(x.data.sum()),
                 lambda g: (np.full_like(x.data, float(g)),))


def rel_l2_loss(pred: Tensor, truth) -> Tensor:
    """Mean over rows of ``||pred - truth|| / ||truth||``."""
    pred = as_tensor(pred)
    t = truth.data if isinstance(truth, Tensor) else np.asarray(truth, dtype=np.float64)
    _need(pred.shape == t.shape and pred.data.ndim == 2,
          f"pred {pred.shape} and truth {t.shape} must be equal [B,G]")
    tn = np.linalg.norm(t, axis=1)
    if np.any(tn == 0):
        raise ValueError(f"truth row {int(np.argmin(tn))} has zero norm")
    d = pred.data - t
    dn = np.linalg.norm(d, axis=1)
    B = d.shape[0]

    def back(g):
        scale = np.divide(1.0, dn * tn, out=np.zeros_like(dn), where=dn > 0)
        return (float(g) / B * d * scale[:, None],)

    return _emit("rel_l2_loss", [pred], np.asarray(np.mean(dn / tn)), back)


# ----------------------------------------------------------------------------
# finite-difference gradient check


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    max_abs_error: float
    tol: float
    h: float
    n_checked: int
    per_param: list

    def __str__(self):
        flag = "PASS" if self.passed else "FAIL"
        return (f"{flag}: max rel err {self.max_rel_error:.3e}, max abs err "
                f"{self.max_abs_error:.3e} over {self.n_checked} "
                f"coordinates (tol {self.tol:g}, h {self.h:g})")


def grad_check(fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-6,
               tol: float = 1e-4, rng=None, max_coords: int = 64,
               abs_floor: float = 1e-8) -> GradCheckReport:
    """Compare tape gradients of ``fn()`` with central differences.

    Tensors with at most ``max_coords`` entries are checked exhaustively,
    larger ones on ``max_coords`` random coordinates (needs ``rng``).
    Absolute differences below ``abs_floor`` count as agreement.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    with Tape() as tape:
        loss = fn()
    grads = backward(tape, loss)
    worst = 0.0
    worst_abs = 0.0
    n_checked = 0
    per_param = []
    for p in params:
        g = grads.get(p.node, np.zeros_like(p.data)).reshape(-1)
        flat = p.data.reshape(-1)
        if flat.size <= max_coords:
            coords = np.arange(flat.size)
        else:
            if rng is None:
                raise ValueError("sampling coordinates of a large tensor needs an rng")
            coords = rng.choice(flat.size, max_coords)
        p_worst = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            fp = float(fn().data)
            flat[c] = orig - h
            fm = float(fn().data)
            flat[c] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError(f"non-finite function value at coordinate {c}")
            num = (fp - fm) / (2 * h)
            diff = abs(num - g[c])
            worst_abs = max(worst_abs, diff)
            err = 0.0 if diff < abs_floor else diff / max(abs(num), abs(g[c]))
            p_worst = max(p_worst, err)
        per_param.append(p_worst)
        worst = max(worst, p_worst)
        n_checked += coords.size
    return GradCheckReport(worst < tol, worst, worst_abs, tol, h, n_checked, per_param)
