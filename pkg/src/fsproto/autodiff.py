"""Reverse-mode automatic differentiation over small dense numpy arrays.

A ``Tensor`` wraps an ndarray and is treated as immutable once created.
While a ``Tape`` is active, ops whose inputs require gradients append their
output node to the tape; creation order is a valid topological order, so
replaying the tape in reverse accumulates exact adjoints into the leaves.
Without an active tape the same ops run forward-only.

Numeric width is a global run mode: float32 for training, float64 for
gradient checking. Widths are never mixed inside one graph.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import NumericOverflowError, ShapeError

_dtype = np.float32
_active_tape: "Tape | None" = None
_corrupt_op: str | None = None  # test hook, see set_backward_corruption

NORM_GUARD = 1e-12  # added to norms / squared distances before division or sqrt


def set_dtype(dtype) -> None:
    """Set the global numeric width. Must be np.float32 or np.float64."""
    global _dtype
    if dtype not in (np.float32, np.float64):
        raise ValueError("dtype must be np.float32 or np.float64")
    _dtype = dtype


def get_dtype():
    return _dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the numeric width (gradcheck runs under float64)."""
    global _dtype
    old = _dtype
    set_dtype(dtype)
    try:
        yield
    finally:
        _dtype = old


def set_backward_corruption(op: str | None) -> None:
    """Test hook: flip the sign of every adjoint emitted by nodes named `op`."""
    global _corrupt_op
    _corrupt_op = op


class Tensor:
    """Immutable dense value, optionally carrying a backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_backward")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf"):
        arr = np.asarray(data, dtype=_dtype)
        # scalar fast path: most graph nodes are 0-d and the full numpy
        # reduction dominates step time otherwise
        if arr.ndim == 0:
            finite = math.isfinite(arr.item())
        else:
            finite = bool(np.isfinite(arr).all())
        if not finite:
            raise NumericOverflowError(f"non-finite values produced by '{op}'")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.op = op
        self.grad: np.ndarray | None = None
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != ():
            raise ShapeError("item() requires a scalar tensor")
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.data.shape})"

    # Operator sugar; every op rejects shape mismatches eagerly.
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __neg__(self):
        return neg(self)


class Tape:
    """Ordered record of op nodes for one forward pass; single-threaded."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        global _active_tape
        if _active_tape is not None:
            raise RuntimeError("a Tape is already active; tapes do not nest")
        _active_tape = self
        return self

    def __exit__(self, *exc):
        global _active_tape
        _active_tape = None
        return False

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into .grad of every reachable leaf."""
        if loss.data.shape != ():
            raise ShapeError("backward requires a scalar loss")
        if not loss.requires_grad:
            return  # loss does not depend on any differentiable leaf
        loss.grad = np.ones((), dtype=loss.data.dtype)
        for node in reversed(self.nodes):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _lift(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def const(x) -> Tensor:
    """A leaf that never receives gradients."""
    return Tensor(x)


def _accum(t: Tensor, g: np.ndarray, op: str) -> None:
    if not t.requires_grad:
        return
    if op == _corrupt_op:
        g = -g
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _node(op: str, out_data, inputs: tuple[Tensor, ...], make_backward) -> Tensor:
    track = _active_tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track, op=op)
    if track:
        out._backward = make_backward(out)
        _active_tape.nodes.append(out)
    return out


def _require_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def _require_vector(op: str, x: Tensor) -> None:
    if x.data.ndim != 1:
        raise ShapeError(f"{op}: expected a vector, got shape {x.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("add", a, b)

    def bw(out):
        def run(g):
            _accum(a, g, "add")
            _accum(b, g, "add")

        return run

    return _node("add", a.data + b.data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("sub", a, b)

    def bw(out):
        def run(g):
            _accum(a, g, "sub")
            _accum(b, -g, "sub")

        return run

    return _node("sub", a.data - b.data, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    def bw(out):
        def run(g):
            _accum(a, -g, "neg")

        return run

    return _node("neg", -a.data, (a,), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; one operand may be a scalar (no other broadcasting)."""
    if a.data.shape != b.data.shape and a.data.shape != () and b.data.shape != ():
        raise ShapeError(f"mul: shape mismatch {a.data.shape} vs {b.data.shape}")

    def bw(out):
        def run(g):
            ga = g * b.data
            gb = g * a.data
            if a.data.shape == () and g.shape != ():
                ga = np.sum(ga)
            if b.data.shape == () and g.shape != ():
                gb = np.sum(gb)
            _accum(a, ga, "mul")
            _accum(b, gb, "mul")

        return run

    return _node("mul", a.data * b.data, (a, b), bw)


def matvec(w: Tensor, x: Tensor) -> Tensor:
    if w.data.ndim != 2 or x.data.ndim != 1 or w.data.shape[1] != x.data.shape[0]:
        raise ShapeError(f"matvec: incompatible shapes {w.data.shape} @ {x.data.shape}")

    def bw(out):
        def run(g):
            _accum(w, np.outer(g, x.data), "matvec")
            _accum(x, w.data.T @ g, "matvec")

        return run

    return _node("matvec", w.data @ x.data, (w, x), bw)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def bw(out):
        def run(g):
            _accum(a, g * (1.0 - out.data * out.data), "tanh")

        return run

    return _node("tanh", out_data, (a,), bw)


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out_data = np.exp(a.data)

    def bw(out):
        def run(g):
            _accum(a, g * out.data, "exp")

        return run

    return _node("exp", out_data, (a,), bw)


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = np.log(a.data)

    def bw(out):
        def run(g):
            _accum(a, g / a.data, "log")

        return run

    return _node("log", out_data, (a,), bw)


def vsum(a: Tensor) -> Tensor:
    """Sum of all entries, returning a scalar."""

    def bw(out):
        def run(g):
            _accum(a, np.broadcast_to(g, a.data.shape).copy(), "sum")

        return run

    return _node("sum", np.sum(a.data), (a,), bw)


def softmax(x: Tensor) -> Tensor:
    """Stable softmax of a vector (max-subtracted before exponentiation)."""
    _require_vector("softmax", x)
    shifted = x.data - np.max(x.data)
    e = np.exp(shifted)
    out_data = e / np.sum(e)

    def bw(out):
        def run(g):
            s = out.data
            _accum(x, s * (g - np.dot(g, s)), "softmax")

        return run

    return _node("softmax", out_data, (x,), bw)


def logsumexp(x: Tensor) -> Tensor:
    """Stable log(sum(exp(x))) of a vector, returning a scalar."""
    _require_vector("logsumexp", x)
    m = np.max(x.data)
    out_data = m + np.log(np.sum(np.exp(x.data - m)))

    def bw(out):
        def run(g):
            _accum(x, np.exp(x.data - out.data) * g, "logsumexp")

        return run

    return _node("logsumexp", out_data, (x,), bw)


def stack(parts: Sequence[Tensor]) -> Tensor:
    """Assemble scalar tensors into a vector."""
    if not parts:
        raise ShapeError("stack: needs at least one element")
    for p in parts:
        if p.data.shape != ():
            raise ShapeError("stack: all elements must be scalars")
    parts = tuple(parts)
    out_data = np.array([p.data for p in parts], dtype=_dtype)

    def bw(out):
        def run(g):
            for i, p in enumerate(parts):
                _accum(p, g[i], "stack")

        return run

    return _node("stack", out_data, parts, bw)


def pick(x: Tensor, i: int) -> Tensor:
    """Scalar projection x[i] of a vector."""
    _require_vector("pick", x)
    if not 0 <= i < x.data.shape[0]:
        raise ShapeError(f"pick: index {i} out of range for length {x.data.shape[0]}")

    def bw(out):
        def run(g):
            z = np.zeros_like(x.data)
            z[i] = g
            _accum(x, z, "pick")

        return run

    return _node("pick", x.data[i], (x,), bw)


def clamp_min(x: Tensor, floor: float) -> Tensor:
    """max(x, floor); gradient passes only where x exceeds the floor."""
    out_data = np.maximum(x.data, floor)

    def bw(out):
        def run(g):
            _accum(x, g * (x.data > floor), "clamp_min")

        return run

    return _node("clamp_min", out_data, (x,), bw)


def cosine(u: Tensor, v: Tensor) -> Tensor:
    """Cosine similarity of two vectors; norms guarded against zero."""
    _require_vector("cosine", u)
    _require_same_shape("cosine", u, v)
    ud, vd = u.data, v.data
    nu = math.sqrt(ud @ ud) + NORM_GUARD
    nv = math.sqrt(vd @ vd) + NORM_GUARD
    out_data = (ud @ vd) / (nu * nv)

    def bw(out):
        def run(g):
            c = out.data
            u_unit = u.data / nu
            v_unit = v.data / nv
            _accum(u, g * (v.data / (nu * nv) - c * u_unit / nu), "cosine")
            _accum(v, g * (u.data / (nu * nv) - c * v_unit / nv), "cosine")

        return run

    return _node("cosine", out_data, (u, v), bw)


def sqdist(u: Tensor, v: Tensor) -> Tensor:
    """Squared euclidean distance between two vectors."""
    _require_vector("sqdist", u)
    _require_same_shape("sqdist", u, v)
    diff = u.data - v.data

    def bw(out):
        def run(g):
            _accum(u, 2.0 * g * diff, "sqdist")
            _accum(v, -2.0 * g * diff, "sqdist")

        return run

    return _node("sqdist", diff @ diff, (u, v), bw)


def eucdist(u: Tensor, v: Tensor) -> Tensor:
    """Euclidean distance, computed as sqrt(sqdist + guard) so it stays smooth."""
    _require_vector("eucdist", u)
    _require_same_shape("eucdist", u, v)
    diff = u.data - v.data
    out_data = math.sqrt(diff @ diff + NORM_GUARD)

    def bw(out):
        def run(g):
            scale = g / out.data
            _accum(u, scale * diff, "eucdist")
            _accum(v, -scale * diff, "eucdist")

        return run

    return _node("eucdist", out_data, (u, v), bw)


def embed_mean(emb: Tensor, ids: Sequence[int]) -> Tensor:
    """Mean of embedding rows emb[ids]; zero vector (no gradient) for empty ids.

    Equivalent to the matrix-vector product emb.T @ a with a the averaging
    indicator vector; kept as one primitive so the adjoint touches only the
    referenced rows.
    """
    if emb.data.ndim != 2:
        raise ShapeError(f"embed_mean: embedding must be 2-d, got {emb.data.shape}")
    n_rows = emb.data.shape[0]
    ids = tuple(int(i) for i in ids)
    for i in ids:
        if not 0 <= i < n_rows:
            raise ShapeError(f"embed_mean: token id {i} outside vocabulary range [0, {n_rows})")
    if not ids:
        return _node("embed_mean", np.zeros(emb.data.shape[1], dtype=_dtype), (), lambda out: None)
    out_data = emb.data[list(ids)].mean(axis=0)

    def bw(out):
        def run(g):
            if not emb.requires_grad:
                return
            share = g / len(ids)
            if _corrupt_op == "embed_mean":
                share = -share
            if emb.grad is None:
                emb.grad = np.zeros_like(emb.data)
            np.add.at(emb.grad, list(ids), share)

        return run

    return _node("embed_mean", out_data, (emb,), bw)


def forward_backward(f, params: Mapping[str, Tensor]) -> tuple[float, dict[str, np.ndarray]]:
    """Evaluate the scalar f(params) and return (value, per-parameter gradients).

    Parameters untouched by f come back with exactly-zero gradients.
    """
    for p in params.values():
        p.grad = None
    with Tape() as tape:
        out = f(params)
    if not isinstance(out, Tensor) or out.data.shape != ():
        raise ShapeError("forward_backward: f must return a scalar Tensor")
    tape.backward(out)
    grads = {}
    for name, p in params.items():
        if p.grad is None:
            grads[name] = np.zeros_like(p.data)
        else:
            grads[name] = np.array(p.grad, dtype=p.data.dtype, copy=True)
        p.grad = None
    return float(out.data), grads


def finite_diff_grad(f, x: np.ndarray, eps: float) -> np.ndarray:
    """Central-difference gradient (f(x+eps*e_i) - f(x-eps*e_i)) / (2*eps)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.ravel(), grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x))
        flat[i] = orig - eps
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericOverflowError(f"finite_diff_grad: non-finite value at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


@dataclass
class GradcheckReport:
    """Per-parameter worst relative error between reverse-mode and central differences."""

    tol: float
    max_rel_err: dict[str, float]

    @property
    def passed(self) -> bool:
        return all(e <= self.tol for e in self.max_rel_err.values())

    @property
    def worst(self) -> float:
        return max(self.max_rel_err.values(), default=0.0)

    def lines(self) -> list[str]:
        width = max((len(n) for n in self.max_rel_err), default=4)
        out = []
        for name, err in sorted(self.max_rel_err.items()):
            status = "PASS" if err <= self.tol else "FAIL"
            out.append(f"{name:<{width}}  max_rel_err={err:.3e}  {status}")
        return out


def relative_error(a: np.ndarray, n: np.ndarray) -> np.ndarray:
    """|a - n| / max(|a|, |n|, 1e-8), elementwise."""
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
    return np.abs(a - n) / denom


def check_gradients(f, params: Mapping[str, np.ndarray], eps: float = 1e-4,
                    tol: float = 1e-4) -> GradcheckReport:
    """Compare reverse-mode gradients of f against central finite differences.

    f receives a dict of Tensors and must return a scalar Tensor. Requires the
    global float64 mode; float32 differences are too noisy for tight tolerances.
    """
    if get_dtype() is not np.float64:
        raise RuntimeError("check_gradients requires the float64 run mode")
    arrays = {name: np.array(a, dtype=np.float64) for name, a in params.items()}
    leaves = {name: Tensor(a, requires_grad=True) for name, a in arrays.items()}
    _, analytic = forward_backward(f, leaves)

    errors: dict[str, float] = {}
    for name in arrays:
        def eval_at(perturbed: np.ndarray, _name=name) -> float:
            trial = {n: Tensor(perturbed if n == _name else arrays[n]) for n in arrays}
            return f(trial).item()

        numeric = finite_diff_grad(eval_at, arrays[name], eps)
        err = relative_error(analytic[name], numeric)
        errors[name] = float(err.max()) if err.size else 0.0
    return GradcheckReport(tol=tol, max_rel_err=errors)
