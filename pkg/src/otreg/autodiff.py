"""Dense 2-D matrix ops with a reverse-mode differentiation tape.

Every op accepts plain ``numpy`` arrays or :class:`Var` handles.  When no
argument is a ``Var`` the op is a thin numpy call and returns an ``ndarray``;
otherwise the result is recorded on the (single) tape the inputs live on and
a ``Var`` is returned.  This lets the same loss code run untracked (finite
differences, evaluation) and tracked (training).

Matrices are always 2-D float64.  Binary ops broadcast only row vectors
(1 x n), column vectors (n x 1) and 1 x 1 scalars.
"""

from __future__ import annotations

import math
from typing import Callable, Dict, Mapping, Sequence

import numpy as np

from .errors import (
    ContractError,
    DegenerateInputError,
    DimensionError,
    DomainError,
    EvaluationError,
)

__all__ = [
    "Tape",
    "Var",
    "as_matrix",
    "value_of",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "scale",
    "exp",
    "log",
    "relu",
    "sqrt",
    "square",
    "clip",
    "transpose",
    "sum_all",
    "mean_all",
    "sum_rows",
    "sum_cols",
    "logsumexp",
    "take",
    "submatrix",
    "concat",
    "diag",
    "solve",
    "elementwise",
    "normalize_rows",
    "cosine_similarity_matrix",
    "backward",
    "grad_check",
]


def as_matrix(x, name="matrix") -> np.ndarray:
    """Coerce to a finite 2-D float64 array (scalars become 1 x 1)."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DomainError(f"{name} has non-finite entries")
    return a


class _Node:
    __slots__ = ("kind", "parents", "value", "vjp")

    def __init__(self, kind, parents, value, vjp):
        self.kind = kind
        self.parents = parents
        self.value = value
        self.vjp = vjp


class Tape:
    """Append-only record of executed operations.

    Single-writer.  Parameters are named leaves; :func:`backward` returns
    gradients keyed by those names.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.params: Dict[str, int] = {}

    def __len__(self):
        return len(self.nodes)

    def param(self, value, name: str) -> "Var":
        if name in self.params:
            raise ContractError(f"parameter {name!r} already registered")
        v = self._push("param", as_matrix(value, name).copy(), (), None)
        self.params[name] = v.index
        return v

    def constant(self, value) -> "Var":
        return self._push("const", as_matrix(value).copy(), (), None)

    def _push(self, kind, value, parents, vjp) -> "Var":
        self.nodes.append(_Node(kind, parents, value, vjp))
        return Var(self, len(self.nodes) - 1)


class Var:
    """Handle to a node on a :class:`Tape`."""

    __slots__ = ("tape", "index")
    __array_priority__ = 1000

    def __init__(self, tape: Tape, index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.index].value

    @property
    def shape(self):
        return self.value.shape

    @property
    def kind(self):
        return self.tape.nodes[self.index].kind

    def __float__(self):
        if self.value.size != 1:
            raise ContractError(f"cannot convert shape {self.shape} to float")
        return float(self.value.reshape(()))

    def __repr__(self):
        return f"Var(kind={self.kind!r}, shape={self.shape}, index={self.index})"

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    @property
    def T(self):
        return transpose(self)


def value_of(x) -> np.ndarray:
    if isinstance(x, Var):
        return x.value
    if isinstance(x, np.ndarray) and x.ndim == 2 and x.dtype == np.float64:
        return x
    return as_matrix(x)


def _record(kind, out, parents, vjp):
    tape = None
    for p in parents:
        if isinstance(p, Var):
            if tape is None:
                tape = p.tape
            elif p.tape is not tape:
                raise ContractError("operands live on different tapes")
    if tape is None:
        return out
    return tape._push(kind, out, tuple(parents), vjp)


def _check_broadcast(sa, sb, op):
    for da, db in zip(sa, sb):
        if da != db and da != 1 and db != 1:
            raise DimensionError(f"{op}: shapes {sa} and {sb} are not broadcastable")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


# -- matrix product ---------------------------------------------------------


def matmul(a, b):
    av, bv = value_of(a), value_of(b)
    if av.shape[1] != bv.shape[0]:
        raise DimensionError(f"matmul: {av.shape} x {bv.shape}")
    out = av @ bv
    return _record("matmul", out, (a, b), lambda g: (g @ bv.T, av.T @ g))


# -- pointwise binary ---------------------------------------------------------


def add(a, b):
    av, bv = value_of(a), value_of(b)
    _check_broadcast(av.shape, bv.shape, "add")
    out = av + bv
    return _record(
        "add", out, (a, b),
        lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)),
    )


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    _check_broadcast(av.shape, bv.shape, "sub")
    out = av - bv
    return _record(
        "sub", out, (a, b),
        lambda g: (_unbroadcast(g, av.shape), _unbroadcast(-g, bv.shape)),
    )


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    _check_broadcast(av.shape, bv.shape, "mul")
    out = av * bv
    return _record(
        "mul", out, (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def div(a, b):
    av, bv = value_of(a), value_of(b)
    _check_broadcast(av.shape, bv.shape, "div")
    if np.any(bv == 0):
        raise DomainError("div: zero divisor")
    out = av / bv
    return _record(
        "div", out, (a, b),
        lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)),
    )


# -- pointwise unary ---------------------------------------------------------


def neg(a):
    return _record("neg", -value_of(a), (a,), lambda g: (-g,))


def scale(a, c: float):
    """Multiply by a fixed (untracked) real."""
    c = float(c)
    return _record("scale", value_of(a) * c, (a,), lambda g: (g * c,))


def exp(a):
    out = np.exp(value_of(a))
    return _record("exp", out, (a,), lambda g: (g * out,))


def log(a):
    av = value_of(a)
    if np.any(av <= 0):
        raise DomainError("log of nonpositive entry")
    return _record("log", np.log(av), (a,), lambda g: (g / av,))


def relu(a):
    av = value_of(a)
    mask = av > 0  # subgradient 0 at exactly 0
    return _record("relu", np.where(mask, av, 0.0), (a,), lambda g: (g * mask,))


def sqrt(a):
    av = value_of(a)
    if np.any(av < 0):
        raise DomainError("sqrt of negative entry")
    out = np.sqrt(av)

    def vjp(g):
        if np.any(out == 0):
            raise DomainError("sqrt: gradient undefined at 0")
        return (g * 0.5 / out,)

    return _record("sqrt", out, (a,), vjp)


def square(a):
    av = value_of(a)
    return _record("square", av * av, (a,), lambda g: (2.0 * g * av,))


def clip(a, lo: float, hi: float):
    av = value_of(a)
    inside = (av >= lo) & (av <= hi)
    return _record("clip", np.clip(av, lo, hi), (a,), lambda g: (g * inside,))


def transpose(a):
    return _record("transpose", value_of(a).T.copy(), (a,), lambda g: (g.T,))


# -- reductions ----------------------------------------------------------------


def sum_all(a):
    av = value_of(a)
    out = np.array([[av.sum()]])
    return _record("sum", out, (a,), lambda g: (np.full(av.shape, g[0, 0]),))


def mean_all(a):
    av = value_of(a)
    n = av.size
    out = np.array([[av.sum() / n]])
    return _record("mean", out, (a,), lambda g: (np.full(av.shape, g[0, 0] / n),))


def sum_rows(a):
    """Sum across columns: n x m -> n x 1."""
    av = value_of(a)
    out = av.sum(axis=1, keepdims=True)
    return _record("sum_rows", out, (a,), lambda g: (np.broadcast_to(g, av.shape).copy(),))


def sum_cols(a):
    """Sum across rows: n x m -> 1 x m."""
    av = value_of(a)
    out = av.sum(axis=0, keepdims=True)
    return _record("sum_cols", out, (a,), lambda g: (np.broadcast_to(g, av.shape).copy(),))


def logsumexp(a, axis: int):
    """Stable log-sum-exp along ``axis`` keeping dims (axis=1 -> n x 1)."""
    av = value_of(a)
    m = av.max(axis=axis, keepdims=True)
    out = m + np.log(np.exp(av - m).sum(axis=axis, keepdims=True))
    return _record("logsumexp", out, (a,), lambda g: (g * np.exp(av - out),))


def take(a, rows: Sequence[int], cols: Sequence[int]):
    """Gather entries ``a[rows[i], cols[i]]`` into a column vector."""
    av = value_of(a)
    r = np.asarray(rows, dtype=np.intp)
    c = np.asarray(cols, dtype=np.intp)
    if r.shape != c.shape or r.ndim != 1:
        raise DimensionError("take: rows and cols must be equal-length 1-D")
    out = av[r, c].reshape(-1, 1)

    def vjp(g):
        full = np.zeros_like(av)
        np.add.at(full, (r, c), g[:, 0])
        return (full,)

    return _record("take", out, (a,), vjp)


def submatrix(a, rows: slice, cols: slice):
    av = value_of(a)
    out = av[rows, cols].copy()

    def vjp(g):
        full = np.zeros_like(av)
        full[rows, cols] = g
        return (full,)

    return _record("submatrix", out, (a,), vjp)


def concat(parts: Sequence, axis: int):
    """Stack matrices vertically (``axis=0``) or horizontally (``axis=1``)."""
    vals = [value_of(p) for p in parts]
    other = 1 - axis
    if len({v.shape[other] for v in vals}) != 1:
        raise DimensionError(f"concat: mismatched shapes {[v.shape for v in vals]}")
    out = np.concatenate(vals, axis=axis)
    bounds = np.cumsum([0] + [v.shape[axis] for v in vals])

    def vjp(g):
        if axis == 0:
            return tuple(g[bounds[i]:bounds[i + 1], :] for i in range(len(vals)))
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(vals)))

    return _record("concat", out, tuple(parts), vjp)


def diag(a):
    """Row or column vector -> square diagonal matrix."""
    av = value_of(a)
    if 1 not in av.shape:
        raise DimensionError(f"diag needs a vector, got {av.shape}")
    out = np.diag(av.ravel())
    return _record("diag", out, (a,), lambda g: (np.diag(g).reshape(av.shape).copy(),))


def solve(a, b):
    """``x = a^{-1} b`` for square nonsingular ``a``."""
    av, bv = value_of(a), value_of(b)
    if av.shape[0] != av.shape[1] or av.shape[1] != bv.shape[0]:
        raise DimensionError(f"solve: {av.shape} and {bv.shape}")
    try:
        out = np.linalg.solve(av, bv)
    except np.linalg.LinAlgError as exc:
        raise DomainError(f"solve: {exc}") from None

    def vjp(g):
        gb = np.linalg.solve(av.T, g)
        return (-gb @ out.T, gb)

    return _record("solve", out, (a, b), vjp)


_UNARY = {"exp": exp, "log": log, "relu": relu, "sqrt": sqrt, "square": square, "neg": neg}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(kind: str, a, b=None):
    """Dispatch a pointwise op by name (``exp``, ``log``, ``relu``, ``add``, ...)."""
    if kind in _UNARY:
        if b is not None:
            raise ContractError(f"{kind} is unary")
        return _UNARY[kind](a)
    if kind in _BINARY:
        if b is None:
            raise ContractError(f"{kind} is binary")
        return _BINARY[kind](a, b)
    raise ContractError(f"unknown elementwise op {kind!r}")


# -- composites ----------------------------------------------------------------


def normalize_rows(a):
    av = value_of(a)
    if np.any(np.all(av == 0, axis=1)):
        raise DegenerateInputError("zero-norm row")
    return div(a, sqrt(sum_rows(square(a))))


def cosine_similarity_matrix(a, b):
    """Pairwise cosine similarities of the rows of ``a`` and ``b``, clipped to [-1, 1]."""
    av, bv = value_of(a), value_of(b)
    if av.shape[1] != bv.shape[1]:
        raise DimensionError(f"cosine similarity: {av.shape[1]} vs {bv.shape[1]} columns")
    return clip(matmul(normalize_rows(a), transpose(normalize_rows(b))), -1.0, 1.0)


# -- differentiation -------------------------------------------------------------


def backward(root: Var, tape: Tape | None = None) -> Dict[str, np.ndarray]:
    """Reverse sweep from a scalar root; returns gradients for every named parameter."""
    if not isinstance(root, Var):
        raise ContractError("root is not tracked on a tape")
    tape = root.tape if tape is None else tape
    if root.tape is not tape:
        raise ContractError("root was produced on a different tape")
    if root.value.shape != (1, 1):
        raise ContractError(f"backward needs a scalar root, got shape {root.value.shape}")

    grads: list = [None] * (root.index + 1)
    grads[root.index] = np.ones((1, 1))
    nodes = tape.nodes
    for i in range(root.index, -1, -1):
        g = grads[i]
        node = nodes[i]
        if g is None or node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if not isinstance(parent, Var) or pg is None:
                continue
            j = parent.index
            grads[j] = pg if grads[j] is None else grads[j] + pg

    out = {}
    for name, idx in tape.params.items():
        g = grads[idx] if idx <= root.index else None
        out[name] = np.zeros_like(nodes[idx].value) if g is None else np.asarray(g, dtype=np.float64)
    return out


def grad_check(
    f: Callable[[Mapping[str, object]], object],
    params: Mapping[str, np.ndarray],
    step: float = 1e-5,
    analytic: Mapping[str, np.ndarray] | None = None,
) -> float:
    """Max over coordinates of ``|analytic - central difference| / max(1, |analytic|)``.

    ``f`` maps a dict of parameters (``Var`` or ``ndarray``) to a scalar.  The
    analytic gradient is taken from a tracked run of ``f`` unless supplied.
    """
    if step <= 0:
        raise ContractError("step must be positive")
    base = {k: as_matrix(v, k).copy() for k, v in params.items()}
    if analytic is None:
        tape = Tape()
        tracked = {k: tape.param(v, k) for k, v in base.items()}
        analytic = backward(f(tracked))

    def evaluate(p):
        val = float(np.asarray(value_of(f(p))).reshape(()))
        if not math.isfinite(val):
            raise EvaluationError("f returned a non-finite value")
        return val

    worst = 0.0
    for name, x in base.items():
        ga = np.asarray(analytic[name])
        for idx in np.ndindex(x.shape):
            orig = x[idx]
            x[idx] = orig + step
            fp = evaluate(base)
            x[idx] = orig - step
            fm = evaluate(base)
            x[idx] = orig
            fd = (fp - fm) / (2.0 * step)
            a = float(ga[idx])
            worst = max(worst, abs(a - fd) / max(1.0, abs(a)))
    return worst
