"""Dense tensor operations on numpy arrays.

Every array in this package is a contiguous, row-major numpy ndarray of
real numbers (float64 for verification work, float32 permitted for
training).  This module provides the validated core operations the rest
of the package builds on: broadcast elementwise arithmetic, 2-D
convolution, reductions, nearest-neighbour upsampling and 2x average
pooling.

Conventions fixed here (they pin golden test values):

* ``conv2d`` uses the cross-correlation convention: the kernel is swept
  over the input without flipping.
* ``padding="same"`` pads by edge replication, not zeros.  Replication
  keeps constant inputs constant, so a per-image affine intensity map
  ``a*I + b`` stays a per-channel affine map of the convolution output
  everywhere, including borders.  Instance normalization can then cancel
  it exactly.
* ``reduce("var", ...)`` uses the biased 1/N normalizer.
* Reductions accumulate in float64 even for float32 storage.

All operations are pure: inputs are never mutated, and results are
deterministic for fixed inputs.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ShapeMismatchError",
    "elementwise",
    "add",
    "sub",
    "mul",
    "conv2d",
    "conv2d_input_grad",
    "conv2d_kernel_grad",
    "reduce",
    "resize_nearest_x2",
    "avg_pool_x2",
    "relu",
    "assert_finite",
]


class ShapeMismatchError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


def assert_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    """Raise ``ValueError`` if ``x`` contains NaN or Inf; return ``x``."""
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{what} contains non-finite values")
    return x


def _check_broadcastable_to(a_shape: tuple, b_shape: tuple) -> None:
    """Validate that ``b`` broadcasts to ``a`` without enlarging ``a``.

    The rule is numpy's trailing-axis alignment restricted so the result
    shape equals ``a``'s: after right-aligning the shapes, every axis of
    ``b`` must either match ``a``'s or be 1, and ``b`` may not have more
    axes than ``a``.
    """
    if len(b_shape) > len(a_shape):
        raise ShapeMismatchError(
            f"cannot broadcast shape {b_shape} to {a_shape}: too many axes"
        )
    for da, db in zip(reversed(a_shape), reversed(b_shape)):
        if db != 1 and db != da:
            raise ShapeMismatchError(
                f"cannot broadcast shape {b_shape} to {a_shape}"
            )


_ELEMENTWISE = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}


def elementwise(op: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pointwise ``op`` of ``a`` and ``b`` with ``b`` broadcast to ``a``.

    ``op`` is one of ``add``, ``sub``, ``mul``.  The result always has
    ``a``'s shape; a shape error names both shapes.
    """
    if op not in _ELEMENTWISE:
        raise ValueError(f"unknown elementwise op {op!r}")
    a = np.asarray(a)
    b = np.asarray(b)
    _check_broadcastable_to(a.shape, b.shape)
    return _ELEMENTWISE[op](a, b)


def add(a, b):
    return elementwise("add", a, b)


def sub(a, b):
    return elementwise("sub", a, b)


def mul(a, b):
    return elementwise("mul", a, b)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------

def _pad_edge(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), mode="edge")


def _unpad_edge_adjoint(g: np.ndarray, p: int) -> np.ndarray:
    """Adjoint of :func:`_pad_edge`: fold border gradients onto edge pixels."""
    if p == 0:
        return g
    g = g.copy()
    g[:, :, p, :] += g[:, :, :p, :].sum(axis=2)
    g[:, :, -p - 1, :] += g[:, :, -p:, :].sum(axis=2)
    g = g[:, :, p:-p, :]
    g[:, :, :, p] += g[:, :, :, :p].sum(axis=3)
    g[:, :, :, -p - 1] += g[:, :, :, -p:].sum(axis=3)
    return g[:, :, :, p:-p]


def _conv_checks(x: np.ndarray, kernel: np.ndarray, bias, padding: str):
    if x.ndim != 4:
        raise ShapeMismatchError(f"conv2d input must be rank 4, got shape {x.shape}")
    if kernel.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
        raise ShapeMismatchError(
            f"conv2d kernel must have shape [C_out, C_in, k, k], got {kernel.shape}"
        )
    if kernel.shape[1] != x.shape[1]:
        raise ShapeMismatchError(
            f"channel mismatch: input has {x.shape[1]} channels, "
            f"kernel expects {kernel.shape[1]} (shapes {x.shape} vs {kernel.shape})"
        )
    k = kernel.shape[2]
    if padding == "same":
        if k % 2 == 0:
            raise ShapeMismatchError(f"padding='same' requires odd kernel size, got {k}")
    elif padding == "valid":
        if k > x.shape[2] or k > x.shape[3]:
            raise ShapeMismatchError(
                f"kernel size {k} larger than input spatial dims {x.shape[2:]}"
            )
    else:
        raise ValueError(f"unknown padding {padding!r}")
    if bias is not None and np.asarray(bias).shape != (kernel.shape[0],):
        raise ShapeMismatchError(
            f"bias shape {np.asarray(bias).shape} must be ({kernel.shape[0]},)"
        )
    return k


def conv2d(
    x: np.ndarray,
    kernel: np.ndarray,
    bias: np.ndarray | None = None,
    padding: str = "same",
) -> np.ndarray:
    """2-D cross-correlation of ``x`` [N,C_in,H,W] with ``kernel`` [C_out,C_in,k,k].

    ``padding="same"`` edge-replicates by ``k // 2`` and preserves H, W;
    ``padding="valid"`` uses no padding and shrinks each spatial dim by
    ``k - 1``.  Stride is always 1.  The kernel is not flipped.
    """
    k = _conv_checks(x, kernel, bias, padding)
    xp = _pad_edge(x, k // 2) if padding == "same" else x
    n = x.shape[0]
    h_out = xp.shape[2] - k + 1
    w_out = xp.shape[3] - k + 1
    c_out = kernel.shape[0]
    acc = np.zeros((c_out, n, h_out, w_out), dtype=np.result_type(x, kernel))
    for di in range(k):
        for dj in range(k):
            xs = xp[:, :, di : di + h_out, dj : dj + w_out]
            acc += np.tensordot(kernel[:, :, di, dj], xs, axes=([1], [1]))
    out = np.ascontiguousarray(acc.transpose(1, 0, 2, 3))
    if bias is not None:
        out += np.asarray(bias).reshape(1, -1, 1, 1)
    return out


def conv2d_input_grad(
    grad: np.ndarray, kernel: np.ndarray, x_shape: tuple, padding: str
) -> np.ndarray:
    """Gradient of ``conv2d`` w.r.t. its input, given upstream ``grad``."""
    k = kernel.shape[2]
    p = k // 2 if padding == "same" else 0
    padded_shape = (x_shape[0], x_shape[1], x_shape[2] + 2 * p, x_shape[3] + 2 * p)
    h_out, w_out = grad.shape[2], grad.shape[3]
    gp = np.zeros(padded_shape, dtype=grad.dtype)
    for di in range(k):
        for dj in range(k):
            tap = np.tensordot(kernel[:, :, di, dj], grad, axes=([0], [1]))
            gp[:, :, di : di + h_out, dj : dj + w_out] += tap.transpose(1, 0, 2, 3)
    if padding == "same":
        return _unpad_edge_adjoint(gp, p)
    return gp


def conv2d_kernel_grad(
    grad: np.ndarray, x: np.ndarray, kernel_shape: tuple, padding: str
) -> np.ndarray:
    """Gradient of ``conv2d`` w.r.t. the kernel, given upstream ``grad``."""
    k = kernel_shape[2]
    xp = _pad_edge(x, k // 2) if padding == "same" else x
    h_out, w_out = grad.shape[2], grad.shape[3]
    gk = np.empty(kernel_shape, dtype=grad.dtype)
    for di in range(k):
        for dj in range(k):
            xs = xp[:, :, di : di + h_out, dj : dj + w_out]
            gk[:, :, di, dj] = np.tensordot(grad, xs, axes=([0, 2, 3], [0, 2, 3]))
    return gk


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------

def _normalize_axes(axes, rank: int) -> tuple:
    if axes is None:
        return tuple(range(rank))
    if isinstance(axes, int):
        axes = (axes,)
    axes = tuple(int(a) for a in axes)
    out = []
    for a in axes:
        if not -rank <= a < rank:
            raise ValueError(f"axis {a} out of range for rank {rank}")
        out.append(a % rank)
    if len(set(out)) != len(out):
        raise ValueError(f"duplicate axes in {axes}")
    return tuple(sorted(out))


def reduce(op: str, x: np.ndarray, axes=None, keepdims: bool = False) -> np.ndarray:
    """Reduction over ``axes``: ``mean``, ``var`` (biased, 1/N) or ``sum``.

    Accumulates in float64 regardless of storage dtype, then casts back,
    which keeps finite-difference comparisons tight for float32 data.
    """
    x = np.asarray(x)
    ax = _normalize_axes(axes, x.ndim)
    if op == "sum":
        out = np.sum(x, axis=ax, keepdims=keepdims, dtype=np.float64)
    elif op == "mean":
        out = np.mean(x, axis=ax, keepdims=keepdims, dtype=np.float64)
    elif op == "var":
        m = np.mean(x, axis=ax, keepdims=True, dtype=np.float64)
        out = np.mean((x - m) ** 2, axis=ax, keepdims=keepdims, dtype=np.float64)
    else:
        raise ValueError(f"unknown reduce op {op!r}")
    return np.asarray(out, dtype=x.dtype)


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------

def resize_nearest_x2(x: np.ndarray) -> np.ndarray:
    """Replicate each pixel of a [N,C,H,W] tensor into a 2x2 block."""
    if x.ndim != 4:
        raise ShapeMismatchError(f"resize_nearest_x2 expects rank 4, got {x.shape}")
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def avg_pool_x2(x: np.ndarray) -> np.ndarray:
    """Mean over non-overlapping 2x2 blocks of a [N,C,H,W] tensor."""
    if x.ndim != 4:
        raise ShapeMismatchError(f"avg_pool_x2 expects rank 4, got {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeMismatchError(f"avg_pool_x2 needs even spatial dims, got {h}x{w}")
    return x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
