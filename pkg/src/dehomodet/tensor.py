"""Reverse-mode automatic differentiation over dense float64 arrays.

The engine records primitive operations on an explicit gradient tape.
Entering a ``Tape`` makes it the active recorder for the current thread;
operations executed outside any tape run forward-only, which is how
inference skips autodiff bookkeeping entirely. ``Tape.backward`` walks
the records exactly once in reverse execution order (execution order is
a valid topological order by construction) and accumulates gradients
additively into every tensor that requires them.

Kept deliberately small and strict:

* float64 only, shapes checked eagerly, no broadcasting beyond
  scalar-with-tensor (``scale`` / ``add_const``) and the explicit
  row-vector forms (``add_rowvec``);
* every forward value and every gradient is checked finite, and a NaN
  or Inf raises ``NonFiniteError`` naming the operation that produced it;
* a tape and the records on it are confined to one thread; independent
  tapes on independent threads do not interact.

Gradient correctness is validated against central finite differences via
``finite_diff_check``, which wraps a tensor function and compares its
backward pass coordinate by coordinate.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "DiffTensor",
    "Tape",
    "FiniteDiffReport",
    "ShapeMismatchError",
    "NonFiniteError",
    "TapeError",
    "tensor",
    "constant",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "scale",
    "add_const",
    "add_rowvec",
    "maximum",
    "minimum",
    "relu",
    "sigmoid",
    "log",
    "exp",
    "power",
    "absolute",
    "clamp",
    "softmax",
    "layer_norm",
    "reduce_sum",
    "reduce_mean",
    "max_pool_set",
    "concat",
    "slice_axis",
    "gather_rows",
    "transpose",
    "reshape",
    "finite_diff_check",
    "save_weights",
    "load_weights",
]


class ShapeMismatchError(ValueError):
    """Operands have incompatible shapes for the requested operation."""


class NonFiniteError(ArithmeticError):
    """A forward value or a gradient became NaN or Inf."""


class TapeError(RuntimeError):
    """Tape misuse: nested activation, repeated backward, bad root."""


_TLS = threading.local()


def _active_tape() -> "Tape | None":
    return getattr(_TLS, "tape", None)


class DiffTensor:
    """Dense float64 array with an optional gradient buffer.

    ``grad`` is filled lazily during backward; ``gradient()`` reads it
    with the convention that an untouched buffer means a zero gradient.
    Leaf tensors (weights, inputs) are created through ``tensor`` or
    ``constant``; everything else comes out of primitive operations.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        data = np.array(values, dtype=np.float64)
        if not np.isfinite(data).all():
            raise NonFiniteError(f"tensor '{name or 'unnamed'}' created with non-finite values")
        self.data = data
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatchError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def tolist(self):
        return self.data.tolist()

    def gradient(self) -> np.ndarray:
        """Accumulated gradient, zeros if backward never reached this tensor."""
        if self.grad is None:
            return np.zeros_like(self.data)
        return self.grad

    def zero_grad(self) -> None:
        self.grad = None

    # Light operator sugar over the primitive functions.
    def __add__(self, other):
        if isinstance(other, DiffTensor):
            return add(self, other)
        return add_const(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, DiffTensor):
            return sub(self, other)
        return add_const(self, -float(other))

    def __rsub__(self, other):
        return add_const(scale(self, -1.0), float(other))

    def __mul__(self, other):
        if isinstance(other, DiffTensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, DiffTensor):
            return div(self, other)
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"DiffTensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"


def tensor(values, requires_grad: bool = False, name: str | None = None) -> DiffTensor:
    """Create a leaf tensor (copies its input)."""
    return DiffTensor(values, requires_grad=requires_grad, name=name)


def constant(values, name: str | None = None) -> DiffTensor:
    """Create a leaf tensor that never receives gradients."""
    return DiffTensor(values, requires_grad=False, name=name)


class Tape:
    """Ordered record of primitive operations for one backward pass.

    Use as a context manager; ops run inside the ``with`` block are
    recorded. ``backward`` may run once per tape; call ``reset`` to
    clear accumulated gradients before traversing again.
    """

    def __init__(self) -> None:
        self._records: list[tuple[str, DiffTensor, tuple[DiffTensor, ...], Callable[[np.ndarray], None]]] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            raise TapeError("a tape is already active on this thread")
        _TLS.tape = self
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        _TLS.tape = None
        return False

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, root: DiffTensor) -> None:
        """Seed d(root)/d(root) = 1 and pull gradients back through the records."""
        if self._consumed:
            raise TapeError("backward already ran on this tape; call reset() first")
        if root.data.shape != ():
            raise TapeError(f"backward root must be a scalar, got shape {root.data.shape}")
        self._consumed = True
        root.grad = np.ones((), dtype=np.float64)
        for name, out, inputs, pull in reversed(self._records):
            g = out.grad
            if g is None:
                continue  # this output does not influence the root
            pull(g)
            for t in inputs:
                if t.grad is not None and not np.isfinite(t.grad).all():
                    raise NonFiniteError(f"non-finite gradient flowing out of op '{name}'")

    def reset(self) -> None:
        """Clear every gradient this tape touched so backward may run again."""
        for _, out, inputs, _ in self._records:
            out.grad = None
            for t in inputs:
                t.grad = None
        self._consumed = False


def _accum(t: DiffTensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    g = np.asarray(g, dtype=np.float64)
    if g.shape != t.data.shape:
        g = g.reshape(t.data.shape)
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def _emit(
    name: str,
    data: np.ndarray,
    inputs: Sequence[DiffTensor],
    pull: Callable[[np.ndarray], None],
) -> DiffTensor:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"non-finite value produced by op '{name}'")
    out = DiffTensor.__new__(DiffTensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = any(t.requires_grad for t in inputs)
    tape = _active_tape()
    if tape is not None and out.requires_grad and not tape._consumed:
        grads_into = tuple(t for t in inputs if t.requires_grad)
        tape._records.append((name, out, grads_into, pull))
    return out


def _need(t, op: str) -> DiffTensor:
    if not isinstance(t, DiffTensor):
        raise TypeError(f"op '{op}' expects DiffTensor arguments, got {type(t).__name__}")
    return t


def _same_shape(a: DiffTensor, b: DiffTensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeMismatchError(f"op '{op}': shapes {a.data.shape} vs {b.data.shape}")


# --- binary elementwise ---------------------------------------------------

def add(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    _need(a, "add"); _need(b, "add"); _same_shape(a, b, "add")

    def pull(g):
        _accum(a, g)
        _accum(b, g)

    return _emit("add", a.data + b.data, (a, b), pull)


def sub(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    _need(a, "sub"); _need(b, "sub"); _same_shape(a, b, "sub")

    def pull(g):
        _accum(a, g)
        _accum(b, -g)

    return _emit("sub", a.data - b.data, (a, b), pull)


def mul(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    _need(a, "mul"); _need(b, "mul"); _same_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def pull(g):
        _accum(a, g * bd)
        _accum(b, g * ad)

    return _emit("mul", ad * bd, (a, b), pull)


def div(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    _need(a, "div"); _need(b, "div"); _same_shape(a, b, "div")
    ad, bd = a.data, b.data

    def pull(g):
        _accum(a, g / bd)
        _accum(b, -g * ad / (bd * bd))

    with np.errstate(divide="ignore", invalid="ignore"):
        data = ad / bd  # zero divisors surface as NonFiniteError below
    return _emit("div", data, (a, b), pull)


def maximum(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    """Elementwise max; a tie routes the gradient to the first argument."""
    _need(a, "maximum"); _need(b, "maximum"); _same_shape(a, b, "maximum")
    take_a = a.data >= b.data

    def pull(g):
        _accum(a, g * take_a)
        _accum(b, g * ~take_a)

    return _emit("maximum", np.maximum(a.data, b.data), (a, b), pull)


def minimum(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    """Elementwise min; a tie routes the gradient to the first argument."""
    _need(a, "minimum"); _need(b, "minimum"); _same_shape(a, b, "minimum")
    take_a = a.data <= b.data

    def pull(g):
        _accum(a, g * take_a)
        _accum(b, g * ~take_a)

    return _emit("minimum", np.minimum(a.data, b.data), (a, b), pull)


# --- scalar-with-tensor ---------------------------------------------------

def scale(a: DiffTensor, c: float) -> DiffTensor:
    _need(a, "scale")
    c = float(c)

    def pull(g):
        _accum(a, g * c)

    return _emit("scale", a.data * c, (a,), pull)


def add_const(a: DiffTensor, c: float) -> DiffTensor:
    _need(a, "add_const")

    def pull(g):
        _accum(a, g)

    return _emit("add_const", a.data + float(c), (a,), pull)


def add_rowvec(a: DiffTensor, v: DiffTensor) -> DiffTensor:
    """Add a row vector ``v`` of shape (n,) to every row of ``a`` of shape (m, n)."""
    _need(a, "add_rowvec"); _need(v, "add_rowvec")
    if a.data.ndim != 2 or v.data.ndim != 1 or a.data.shape[1] != v.data.shape[0]:
        raise ShapeMismatchError(f"op 'add_rowvec': shapes {a.data.shape} vs {v.data.shape}")

    def pull(g):
        _accum(a, g)
        _accum(v, g.sum(axis=0))

    return _emit("add_rowvec", a.data + v.data[None, :], (a, v), pull)


# --- matrix ops -----------------------------------------------------------

def matmul(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    _need(a, "matmul"); _need(b, "matmul")
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatchError(f"op 'matmul': shapes {a.data.shape} vs {b.data.shape}")
    ad, bd = a.data, b.data

    def pull(g):
        _accum(a, g @ bd.T)
        _accum(b, ad.T @ g)

    return _emit("matmul", ad @ bd, (a, b), pull)


def transpose(a: DiffTensor) -> DiffTensor:
    _need(a, "transpose")
    if a.data.ndim != 2:
        raise ShapeMismatchError(f"op 'transpose': needs a 2-D tensor, got shape {a.data.shape}")

    def pull(g):
        _accum(a, g.T)

    return _emit("transpose", a.data.T.copy(), (a,), pull)


def reshape(a: DiffTensor, shape: tuple[int, ...]) -> DiffTensor:
    _need(a, "reshape")
    try:
        data = a.data.reshape(shape).copy()
    except ValueError as exc:
        raise ShapeMismatchError(f"op 'reshape': {a.data.shape} -> {shape}: {exc}") from exc
    src_shape = a.data.shape

    def pull(g):
        _accum(a, g.reshape(src_shape))

    return _emit("reshape", data, (a,), pull)


# --- unary elementwise ----------------------------------------------------

def relu(a: DiffTensor) -> DiffTensor:
    _need(a, "relu")
    mask = a.data > 0.0  # subgradient 0 at the kink

    def pull(g):
        _accum(a, g * mask)

    return _emit("relu", np.maximum(a.data, 0.0), (a,), pull)


def sigmoid(a: DiffTensor) -> DiffTensor:
    _need(a, "sigmoid")
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def pull(g):
        _accum(a, g * out * (1.0 - out))

    return _emit("sigmoid", out, (a,), pull)


def log(a: DiffTensor) -> DiffTensor:
    _need(a, "log")
    if np.any(a.data <= 0.0):
        raise NonFiniteError("op 'log': argument has non-positive entries")
    ad = a.data

    def pull(g):
        _accum(a, g / ad)

    return _emit("log", np.log(ad), (a,), pull)


def exp(a: DiffTensor) -> DiffTensor:
    _need(a, "exp")
    out = np.exp(a.data)

    def pull(g):
        _accum(a, g * out)

    return _emit("exp", out, (a,), pull)


def power(a: DiffTensor, p: float) -> DiffTensor:
    """Elementwise ``a ** p`` for non-negative bases (p < 1 needs strictly positive)."""
    _need(a, "power")
    p = float(p)
    if np.any(a.data < 0.0):
        raise NonFiniteError("op 'power': negative base")
    ad = a.data

    def pull(g):
        _accum(a, g * p * np.power(ad, p - 1.0))

    return _emit("power", np.power(ad, p), (a,), pull)


def absolute(a: DiffTensor) -> DiffTensor:
    _need(a, "absolute")
    sign = np.sign(a.data)  # subgradient 0 at zero

    def pull(g):
        _accum(a, g * sign)

    return _emit("absolute", np.abs(a.data), (a,), pull)


def clamp(a: DiffTensor, lo: float, hi: float) -> DiffTensor:
    """Clip into [lo, hi]; gradient passes only where the input is strictly inside."""
    _need(a, "clamp")
    lo, hi = float(lo), float(hi)
    if not lo < hi:
        raise ValueError(f"op 'clamp': empty interval [{lo}, {hi}]")
    inside = (a.data > lo) & (a.data < hi)

    def pull(g):
        _accum(a, g * inside)

    return _emit("clamp", np.clip(a.data, lo, hi), (a,), pull)


# --- normalizations -------------------------------------------------------

def softmax(a: DiffTensor, axis: int = -1) -> DiffTensor:
    _need(a, "softmax")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def pull(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        _accum(a, (g - dot) * out)

    return _emit("softmax", out, (a,), pull)


LAYER_NORM_EPS = 1e-5


def layer_norm(a: DiffTensor, eps: float = LAYER_NORM_EPS) -> DiffTensor:
    """Normalize the last axis to zero mean, unit variance (no affine parameters)."""
    _need(a, "layer_norm")
    if a.data.ndim == 0:
        raise ShapeMismatchError("op 'layer_norm': needs at least one axis")
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv

    def pull(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        _accum(a, inv * (g - gm - xhat * gx))

    return _emit("layer_norm", xhat, (a,), pull)


# --- reductions -----------------------------------------------------------

def reduce_sum(a: DiffTensor, axis: int | None = None) -> DiffTensor:
    _need(a, "reduce_sum")
    if axis is None:
        src_shape = a.data.shape

        def pull(g):
            _accum(a, np.broadcast_to(g, src_shape))

        return _emit("reduce_sum", np.asarray(a.data.sum()), (a,), pull)

    def pull(g):
        _accum(a, np.repeat(np.expand_dims(g, axis), a.data.shape[axis], axis=axis))

    return _emit("reduce_sum", a.data.sum(axis=axis), (a,), pull)


def reduce_mean(a: DiffTensor, axis: int | None = None) -> DiffTensor:
    _need(a, "reduce_mean")
    if axis is None:
        n = a.data.size
        src_shape = a.data.shape

        def pull(g):
            _accum(a, np.broadcast_to(g / n, src_shape))

        return _emit("reduce_mean", np.asarray(a.data.mean()), (a,), pull)

    n = a.data.shape[axis]

    def pull(g):
        _accum(a, np.repeat(np.expand_dims(g / n, axis), n, axis=axis))

    return _emit("reduce_mean", a.data.mean(axis=axis), (a,), pull)


# --- structural -----------------------------------------------------------

def max_pool_set(items: Sequence[DiffTensor], shape: tuple[int, ...] | int) -> DiffTensor:
    """Elementwise max over a set of same-shaped tensors.

    The empty set pools to a zero tensor of the given shape (the additive
    identity for the downstream composition). Gradient at each coordinate
    flows to the single winning member; ties go to the lowest index.
    """
    if isinstance(shape, int):
        shape = (shape,)
    items = list(items)
    if not items:
        return constant(np.zeros(shape))
    for t in items:
        _need(t, "max_pool_set")
        if t.data.shape != tuple(shape):
            raise ShapeMismatchError(f"op 'max_pool_set': member shape {t.data.shape} vs {tuple(shape)}")
    stacked = np.stack([t.data for t in items], axis=0)
    winner = np.argmax(stacked, axis=0)  # first max wins, i.e. lowest index

    def pull(g):
        for k, t in enumerate(items):
            _accum(t, g * (winner == k))

    return _emit("max_pool_set", stacked.max(axis=0), tuple(items), pull)


def concat(items: Sequence[DiffTensor], axis: int = 0) -> DiffTensor:
    items = list(items)
    if not items:
        raise ValueError("op 'concat': empty input list")
    for t in items:
        _need(t, "concat")
    try:
        data = np.concatenate([t.data for t in items], axis=axis)
    except ValueError as exc:
        raise ShapeMismatchError(f"op 'concat': {[t.data.shape for t in items]}: {exc}") from exc
    sizes = [t.data.shape[axis] for t in items]
    offsets = np.cumsum([0] + sizes)

    def pull(g):
        for k, t in enumerate(items):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[k], offsets[k + 1])
            _accum(t, g[tuple(sl)])

    return _emit("concat", data, tuple(items), pull)


def slice_axis(a: DiffTensor, axis: int, start: int, stop: int) -> DiffTensor:
    _need(a, "slice_axis")
    ndim = a.data.ndim
    if not -ndim <= axis < ndim:
        raise ShapeMismatchError(f"op 'slice_axis': axis {axis} out of range for shape {a.data.shape}")
    axis = axis % ndim
    n = a.data.shape[axis]
    if not (0 <= start <= stop <= n):
        raise ShapeMismatchError(f"op 'slice_axis': range [{start}, {stop}) outside axis of length {n}")
    sl = [slice(None)] * ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    src_shape = a.data.shape

    def pull(g):
        buf = np.zeros(src_shape)
        buf[sl] = g
        _accum(a, buf)

    return _emit("slice_axis", a.data[sl].copy(), (a,), pull)


def gather_rows(a: DiffTensor, indices: Sequence[int]) -> DiffTensor:
    """Select rows of a 2-D tensor by index; duplicates accumulate gradient."""
    _need(a, "gather_rows")
    if a.data.ndim != 2:
        raise ShapeMismatchError(f"op 'gather_rows': needs a 2-D tensor, got shape {a.data.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeMismatchError("op 'gather_rows': indices must be 1-D")
    n = a.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ShapeMismatchError(f"op 'gather_rows': index out of range for {n} rows")
    src_shape = a.data.shape

    def pull(g):
        buf = np.zeros(src_shape)
        np.add.at(buf, idx, g)
        _accum(a, buf)

    return _emit("gather_rows", a.data[idx].copy(), (a,), pull)


# --- gradient checking ----------------------------------------------------

@dataclass
class FiniteDiffReport:
    """Outcome of comparing backward gradients to central finite differences.

    Relative error is |analytic - numeric| / max(1, |analytic|, |numeric|)
    per coordinate, so tiny gradients are judged on an absolute scale.
    """

    max_rel_err: float
    worst_index: tuple[int, ...]
    analytic: np.ndarray
    numeric: np.ndarray
    tol: float

    @property
    def ok(self) -> bool:
        return self.max_rel_err < self.tol


def finite_diff_check(
    f: Callable[[DiffTensor], DiffTensor],
    x: DiffTensor,
    eps: float = 1e-5,
    tol: float = 1e-5,
) -> FiniteDiffReport:
    """Check d f(x) / d x against central differences, coordinate by coordinate.

    ``f`` must map a DiffTensor to a scalar DiffTensor and must not mutate
    its argument. The analytic gradient is taken on a fresh tape; numeric
    probes run outside any tape so nothing is recorded.
    """
    if _active_tape() is not None:
        raise TapeError("finite_diff_check must run outside any active tape")
    was_required = x.requires_grad
    x.requires_grad = True
    x.zero_grad()
    try:
        with Tape() as tape:
            y = f(x)
            tape.backward(y)
        analytic = x.gradient().copy()
    finally:
        x.requires_grad = was_required
    x.zero_grad()

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x).item()
        flat[i] = orig - eps
        fm = f(x).item()
        flat[i] = orig
        num_flat[i] = (fp - fm) / (2.0 * eps)

    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    rel = np.abs(analytic - numeric) / denom
    worst = int(np.argmax(rel)) if rel.size else 0
    worst_index = np.unravel_index(worst, x.data.shape) if x.data.ndim else ()
    max_err = float(rel.max()) if rel.size else 0.0
    return FiniteDiffReport(
        max_rel_err=max_err,
        worst_index=tuple(int(k) for k in worst_index),
        analytic=analytic,
        numeric=numeric,
        tol=tol,
    )


# --- weight snapshots -----------------------------------------------------

WEIGHTS_SCHEMA_VERSION = 1


def save_weights(path, named: Mapping[str, DiffTensor] | Iterable[tuple[str, DiffTensor]]) -> None:
    """Write ordered (name, shape, values) records as JSON.

    Values round-trip exactly: JSON serialization uses the shortest
    repr of each float64, which parses back to the identical bits.
    """
    from . import files

    if isinstance(named, Mapping):
        items = list(named.items())
    else:
        items = list(named)
    records = []
    for name, t in items:
        records.append({"name": name, "shape": list(t.data.shape), "values": t.data.reshape(-1).tolist()})
    payload = {"schema_version": WEIGHTS_SCHEMA_VERSION, "records": records}
    files.atomic_write_text(path, json.dumps(payload, sort_keys=True))


def load_weights(path) -> dict[str, DiffTensor]:
    """Read records written by ``save_weights``; insertion order preserved."""
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("schema_version") != WEIGHTS_SCHEMA_VERSION:
        raise ValueError(f"unsupported weights schema: {payload.get('schema_version')!r}")
    out: dict[str, DiffTensor] = {}
    for rec in payload["records"]:
        arr = np.array(rec["values"], dtype=np.float64).reshape(rec["shape"])
        out[rec["name"]] = DiffTensor(arr, requires_grad=True, name=rec["name"])
    return out


def logit(p: float | np.ndarray) -> np.ndarray:
    """Inverse sigmoid on plain arrays (used for detached box reference updates)."""
    p = np.asarray(p, dtype=np.float64)
    p = np.clip(p, 1e-12, 1.0 - 1e-12)
    return np.log(p) - np.log1p(-p)
