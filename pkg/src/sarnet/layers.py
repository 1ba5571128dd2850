"""Neural building blocks: instance norm, pooling, dense maps, modulation.

All layer functions are pure maps over :class:`~sarnet.autodiff.Variable`
inputs; parameters live in a :class:`ParamStore` and are wrapped onto a
tape per forward pass.  Instance normalization uses the biased variance
and divides by ``sqrt(var + eps)``.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Variable
from .tensor import ShapeMismatchError

DEFAULT_NORM_EPS = 1e-8


class ParamStore:
    """Named parameter tensors with unique names and stable ordering."""

    def __init__(self):
        self._arrays: dict[str, np.ndarray] = {}

    def add(self, name: str, array: np.ndarray) -> None:
        if name in self._arrays:
            raise ValueError(f"duplicate parameter name {name!r}")
        self._arrays[name] = np.asarray(array)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __setitem__(self, name: str, array: np.ndarray) -> None:
        if name not in self._arrays:
            raise KeyError(f"unknown parameter {name!r}")
        array = np.asarray(array)
        if array.shape != self._arrays[name].shape:
            raise ShapeMismatchError(
                f"parameter {name!r}: shape {array.shape} != {self._arrays[name].shape}"
            )
        self._arrays[name] = array

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __len__(self) -> int:
        return len(self._arrays)

    def names(self) -> list[str]:
        return list(self._arrays)

    def items(self):
        return self._arrays.items()

    def total_parameters(self) -> int:
        return sum(a.size for a in self._arrays.values())

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore()
        for name, arr in self._arrays.items():
            out.add(name, arr.astype(dtype))
        return out

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name, arr in self._arrays.items():
            out.add(name, arr.copy())
        return out

    def as_variables(
        self, tape: ad.Tape, requires_grad: bool = True
    ) -> dict[str, Variable]:
        return {
            name: tape.variable(arr, requires_grad=requires_grad)
            for name, arr in self._arrays.items()
        }


# ---------------------------------------------------------------------------
# Initializers
# ---------------------------------------------------------------------------

def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def conv_init(rng: np.random.Generator, c_out: int, c_in: int, k: int) -> np.ndarray:
    return kaiming_uniform(rng, (c_out, c_in, k, k), fan_in=c_in * k * k)


def dense_init(rng: np.random.Generator, f_in: int, f_out: int) -> np.ndarray:
    return kaiming_uniform(rng, (f_in, f_out), fan_in=f_in)


# ---------------------------------------------------------------------------
# Functional layers
# ---------------------------------------------------------------------------

def instance_norm(x: Variable, eps: float = DEFAULT_NORM_EPS) -> Variable:
    """Per-sample, per-channel ``(x - mean) / sqrt(var + eps)`` over H, W."""
    m = x.mean(axes=(2, 3), keepdims=True)
    d = x - m
    v = (d * d).mean(axes=(2, 3), keepdims=True)
    return d / (v + eps).sqrt()


def global_avg_pool(x: Variable) -> Variable:
    """Spatial mean per channel: [N,C,H,W] -> [N,C]."""
    return x.mean(axes=(2, 3))


def dense(x: Variable, weight: Variable, bias: Variable) -> Variable:
    return ad.matmul(x, weight) + bias


def modulate(
    s: Variable,
    a: Variable,
    weight: Variable,
    bias: Variable,
    eps: float = DEFAULT_NORM_EPS,
) -> Variable:
    """Appearance-conditioned affine over normalized features.

    One dense map turns the appearance code [N,C_A] into per-channel
    ``(gamma, beta)`` of size 2*C, giving ``gamma * IN(s) + beta`` with
    gamma and beta broadcast over the spatial axes.
    """
    c = s.shape[1]
    if weight.shape[1] != 2 * c:
        raise ShapeMismatchError(
            f"modulation dense map produces {weight.shape[1]} values, "
            f"expected 2*{c} for {c} feature channels"
        )
    gb = dense(a, weight, bias)
    gamma = ad.narrow(gb, 1, 0, c).reshape((-1, c, 1, 1))
    beta = ad.narrow(gb, 1, c, c).reshape((-1, c, 1, 1))
    return gamma * instance_norm(s, eps) + beta


def conv_block(
    x: Variable,
    kernel: Variable,
    bias: Variable,
    with_norm: bool = True,
    eps: float = DEFAULT_NORM_EPS,
) -> Variable:
    """conv2d (same padding) -> optional instance norm -> ReLU."""
    y = ad.conv2d(x, kernel, bias, padding="same")
    if with_norm:
        y = instance_norm(y, eps)
    return y.relu()
