"""Tape-based reverse-mode automatic differentiation.

A :class:`Tape` records every primitive operation applied to
:class:`Variable` objects in program order, which is automatically a
topological order: every node's parents precede it.  ``backward`` walks
the tape once in reverse, accumulating gradients by addition at fan-out
points (the multivariate chain rule).

The tape is built fresh for every loss evaluation and supports
first-order gradients only.  Scalars and plain numpy arrays mixed into
arithmetic are treated as constants and receive no gradient entries.

``gradcheck`` compares reverse-mode gradients against central finite
differences at float64 and is the oracle used throughout the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T

__all__ = [
    "GradientError",
    "Tape",
    "Variable",
    "backward",
    "matmul",
    "conv2d",
    "avg_pool_x2",
    "resize_nearest_x2",
    "concat",
    "narrow",
    "gradcheck",
    "GradcheckReport",
]


class GradientError(RuntimeError):
    """Raised for invalid backward calls or malformed graphs."""


class _Node:
    __slots__ = ("value", "requires_grad", "vjps")

    def __init__(self, value, requires_grad, vjps):
        self.value = value
        self.requires_grad = requires_grad
        self.vjps = vjps  # tuple of (parent index, grad -> contribution)


class Tape:
    """Ordered record of primitive operations."""

    def __init__(self):
        self._nodes: list[_Node] = []

    def __len__(self):
        return len(self._nodes)

    def _record(self, value, vjps, requires_grad) -> "Variable":
        self._nodes.append(_Node(np.asarray(value), requires_grad, tuple(vjps)))
        return Variable(self, len(self._nodes) - 1)

    def variable(self, value, requires_grad: bool = True) -> "Variable":
        """Create a leaf node holding ``value``."""
        return self._record(value, (), requires_grad)

    def constant(self, value) -> "Variable":
        """Create a leaf that never receives gradients."""
        return self._record(value, (), False)


class Variable:
    """Handle to one tape node: a value plus its position in the record."""

    __slots__ = ("tape", "idx")

    def __init__(self, tape: Tape, idx: int):
        self.tape = tape
        self.idx = idx

    @property
    def value(self) -> np.ndarray:
        return self.tape._nodes[self.idx].value

    @property
    def requires_grad(self) -> bool:
        return self.tape._nodes[self.idx].requires_grad

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Variable(idx={self.idx}, shape={self.shape})"

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        return _binary(
            self, other, np.add,
            lambda g, av, bv: _unbroadcast(g, av.shape),
            lambda g, av, bv: _unbroadcast(g, bv.shape),
        )

    __radd__ = __add__

    def __sub__(self, other):
        return _binary(
            self, other, np.subtract,
            lambda g, av, bv: _unbroadcast(g, av.shape),
            lambda g, av, bv: _unbroadcast(-g, bv.shape),
        )

    def __rsub__(self, other):
        return _binary(
            self, other, lambda a, b: np.subtract(b, a),
            lambda g, av, bv: _unbroadcast(-g, av.shape),
            lambda g, av, bv: _unbroadcast(g, bv.shape),
        )

    def __mul__(self, other):
        return _binary(
            self, other, np.multiply,
            lambda g, av, bv: _unbroadcast(g * bv, av.shape),
            lambda g, av, bv: _unbroadcast(g * av, bv.shape),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _binary(
            self, other, np.divide,
            lambda g, av, bv: _unbroadcast(g / bv, av.shape),
            lambda g, av, bv: _unbroadcast(-g * av / (bv * bv), bv.shape),
        )

    def __rtruediv__(self, other):
        return _binary(
            self, other, lambda a, b: np.divide(b, a),
            lambda g, av, bv: _unbroadcast(-g * bv / (av * av), av.shape),
            lambda g, av, bv: _unbroadcast(g / av, bv.shape),
        )

    def __neg__(self):
        v = self.value
        return self.tape._record(
            -v, _vjps_for([(self, lambda g: -g)]), self.requires_grad
        )

    def __pow__(self, p):
        if isinstance(p, Variable) or not np.isscalar(p):
            raise GradientError("only scalar exponents are supported")
        v = self.value
        return self.tape._record(
            v ** p,
            _vjps_for([(self, lambda g: g * p * v ** (p - 1))]),
            self.requires_grad,
        )

    # -- unary ops ----------------------------------------------------------

    def relu(self) -> "Variable":
        v = self.value
        mask = v > 0
        return self.tape._record(
            np.maximum(v, 0), _vjps_for([(self, lambda g: g * mask)]), self.requires_grad
        )

    def sqrt(self) -> "Variable":
        y = np.sqrt(self.value)
        return self.tape._record(
            y, _vjps_for([(self, lambda g: g * 0.5 / y)]), self.requires_grad
        )

    def reshape(self, shape) -> "Variable":
        v = self.value
        old = v.shape
        return self.tape._record(
            v.reshape(shape),
            _vjps_for([(self, lambda g: g.reshape(old))]),
            self.requires_grad,
        )

    # -- reductions ---------------------------------------------------------

    def sum(self, axes=None, keepdims: bool = False) -> "Variable":
        return _reduction(self, "sum", axes, keepdims)

    def mean(self, axes=None, keepdims: bool = False) -> "Variable":
        return _reduction(self, "mean", axes, keepdims)


def _vjps_for(pairs):
    return tuple((var.idx, fn) for var, fn in pairs if var.requires_grad)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape``, inverting numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary(a, other, forward, vjp_a, vjp_b):
    if isinstance(other, Variable):
        if other.tape is not a.tape:
            raise GradientError("operands live on different tapes")
        av, bv = a.value, other.value
        value = forward(av, bv)
        vjps = _vjps_for(
            [
                (a, lambda g: vjp_a(g, av, bv)),
                (other, lambda g: vjp_b(g, av, bv)),
            ]
        )
        rg = a.requires_grad or other.requires_grad
    else:
        av = a.value
        bv = np.asarray(other, dtype=av.dtype)
        value = forward(av, bv)
        vjps = _vjps_for([(a, lambda g: vjp_a(g, av, bv))])
        rg = a.requires_grad
    return a.tape._record(value, vjps, rg)


def _reduction(x: Variable, op: str, axes, keepdims: bool) -> Variable:
    v = x.value
    ax = T._normalize_axes(axes, v.ndim)
    value = T.reduce(op, v, ax, keepdims)
    in_shape = v.shape
    n = 1
    for a in ax:
        n *= in_shape[a]
    scale = 1.0 / n if op == "mean" else 1.0

    def vjp(g):
        if not keepdims:
            shape = list(in_shape)
            for a in ax:
                shape[a] = 1
            g = g.reshape(shape)
        out = np.broadcast_to(g, in_shape)
        return out * scale if op == "mean" else out.copy()

    if op not in ("sum", "mean"):
        raise GradientError(f"no backward rule for reduction {op!r}")
    return x.tape._record(value, _vjps_for([(x, vjp)]), x.requires_grad)


# ---------------------------------------------------------------------------
# Structured primitives
# ---------------------------------------------------------------------------

def matmul(a: Variable, b: Variable) -> Variable:
    """2-D matrix product with gradients for both factors."""
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise T.ShapeMismatchError(f"matmul shapes {av.shape} and {bv.shape}")
    vjps = _vjps_for(
        [
            (a, lambda g: g @ bv.T),
            (b, lambda g: av.T @ g),
        ]
    )
    return a.tape._record(av @ bv, vjps, a.requires_grad or b.requires_grad)


def conv2d(
    x: Variable,
    kernel: Variable,
    bias: Variable | None = None,
    padding: str = "same",
) -> Variable:
    """Differentiable wrapper over :func:`sarnet.tensor.conv2d`."""
    xv, kv = x.value, kernel.value
    bv = bias.value if bias is not None else None
    value = T.conv2d(xv, kv, bv, padding)
    pairs = [
        (x, lambda g: T.conv2d_input_grad(g, kv, xv.shape, padding)),
        (kernel, lambda g: T.conv2d_kernel_grad(g, xv, kv.shape, padding)),
    ]
    rg = x.requires_grad or kernel.requires_grad
    if bias is not None:
        pairs.append((bias, lambda g: g.sum(axis=(0, 2, 3))))
        rg = rg or bias.requires_grad
    return x.tape._record(value, _vjps_for(pairs), rg)


def avg_pool_x2(x: Variable) -> Variable:
    v = x.value

    def vjp(g):
        return T.resize_nearest_x2(g) * 0.25

    return x.tape._record(
        T.avg_pool_x2(v), _vjps_for([(x, vjp)]), x.requires_grad
    )


def resize_nearest_x2(x: Variable) -> Variable:
    v = x.value
    n, c, h, w = v.shape

    def vjp(g):
        return g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))

    return x.tape._record(
        T.resize_nearest_x2(v), _vjps_for([(x, vjp)]), x.requires_grad
    )


def concat(parts: Sequence[Variable], axis: int = 1) -> Variable:
    """Concatenate variables along ``axis``."""
    if not parts:
        raise T.ShapeMismatchError("concat of zero tensors")
    tape = parts[0].tape
    values = [p.value for p in parts]
    value = np.concatenate(values, axis=axis)
    offsets = np.cumsum([0] + [v.shape[axis] for v in values])

    def make_vjp(i):
        lo, hi = offsets[i], offsets[i + 1]

        def vjp(g):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            return g[tuple(index)]

        return vjp

    vjps = _vjps_for([(p, make_vjp(i)) for i, p in enumerate(parts)])
    return tape._record(value, vjps, any(p.requires_grad for p in parts))


def narrow(x: Variable, axis: int, start: int, length: int) -> Variable:
    """Slice ``length`` entries from ``start`` along ``axis``."""
    v = x.value
    if start < 0 or length < 0 or start + length > v.shape[axis]:
        raise T.ShapeMismatchError(
            f"narrow [{start}:{start + length}) out of range for axis {axis} "
            f"of shape {v.shape}"
        )
    index = [slice(None)] * v.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def vjp(g):
        out = np.zeros_like(v)
        out[index] = g
        return out

    return x.tape._record(v[index], _vjps_for([(x, vjp)]), x.requires_grad)


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------

def backward(loss: Variable) -> dict[int, np.ndarray]:
    """Reverse sweep from a scalar ``loss``.

    Returns a map from node id to gradient for every node that requires
    gradients and is reachable from ``loss``; constants and detached
    leaves receive no entry.
    """
    if loss.value.size != 1:
        raise GradientError(f"loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GradientError("backward on a node detached from all inputs")
    nodes = loss.tape._nodes
    grads: dict[int, np.ndarray] = {loss.idx: np.ones_like(loss.value)}
    for idx in range(loss.idx, -1, -1):
        g = grads.get(idx)
        if g is None:
            continue
        for pid, fn in nodes[idx].vjps:
            contrib = fn(g)
            prev = grads.get(pid)
            grads[pid] = contrib if prev is None else prev + contrib
    return grads


# ---------------------------------------------------------------------------
# Finite-difference oracle
# ---------------------------------------------------------------------------

@dataclass
class GradcheckReport:
    """Outcome of one reverse-mode vs central-difference comparison."""

    name: str
    max_rel_err: tuple[float, ...]
    tol: float
    passed: bool

    @property
    def worst(self) -> float:
        return max(self.max_rel_err) if self.max_rel_err else 0.0


def gradcheck(
    f: Callable[..., Variable],
    inputs: Sequence[np.ndarray],
    tol: float = 1e-4,
    step: float = 1e-5,
    name: str = "f",
) -> GradcheckReport:
    """Compare reverse-mode gradients of scalar ``f`` to central differences.

    The step for element ``x`` is ``step * (1 + |x|)`` and the relative
    error is ``|a - b| / max(1, |a|, |b|)``.  Everything runs at float64.
    """
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    tape = Tape()
    variables = [tape.variable(a.copy()) for a in arrays]
    out = f(*variables)
    if out.value.size != 1:
        raise GradientError(f"gradcheck target must return a scalar, got {out.shape}")
    grads = backward(out)
    analytic = [
        np.asarray(grads.get(v.idx, np.zeros_like(a)), dtype=np.float64).reshape(a.shape)
        for v, a in zip(variables, arrays)
    ]

    def evaluate() -> float:
        t = Tape()
        vs = [t.variable(a, requires_grad=False) for a in arrays]
        return float(f(*vs).value)

    maxima = []
    for i, a in enumerate(arrays):
        flat = a.ravel()
        an = analytic[i].ravel()
        worst = 0.0
        for j in range(flat.size):
            orig = flat[j]
            h = step * (1.0 + abs(orig))
            flat[j] = orig + h
            fp = evaluate()
            flat[j] = orig - h
            fm = evaluate()
            flat[j] = orig
            fd = (fp - fm) / (2.0 * h)
            rel = abs(an[j] - fd) / max(1.0, abs(an[j]), abs(fd))
            worst = max(worst, rel)
        maxima.append(worst)
    return GradcheckReport(
        name=name,
        max_rel_err=tuple(maxima),
        tol=tol,
        passed=all(m <= tol for m in maxima),
    )
