"""Training objectives: scene consistency, cycle, alignment, and the total.

All MSE terms are means over every element (not sums), which keeps the
loss weights stable across image sizes.  NCC is global (whole image) per
sample, averaged over the batch; a constant image contributes 0 to NCC
by convention rather than raising.  Cosine similarity is taken over
per-sample flattened codes; a zero-norm code contributes 0 to the
cosine penalty.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .autodiff import Variable

__all__ = [
    "LossWeights",
    "LossReport",
    "mse",
    "ncc",
    "scene_consistency",
    "cycle_loss",
    "align_loss",
    "total_loss",
    "paired_losses",
]


@dataclass(frozen=True)
class LossWeights:
    lambda_scene: float = 1.0
    lambda_cycle: float = 0.5
    lambda_align: float = 2.0
    lambda_cos: float = 0.1
    lambda_ncc: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be non-negative")


def mse(x: Variable, y) -> Variable:
    d = x - y
    return (d * d).mean()


def _masked_normalized_dot(num, sq_a, sq_b):
    """num / sqrt(sq_a * sq_b) per sample, 0 where either norm vanishes."""
    valid = (sq_a.value > 0) & (sq_b.value > 0)
    if valid.all():
        return num / (sq_a * sq_b).sqrt()
    mask = valid.astype(num.value.dtype)
    denom = (sq_a * sq_b * mask + (1.0 - mask)).sqrt()
    return (num * mask) / denom


def ncc(x: Variable, y: Variable) -> Variable:
    """Global zero-mean normalized cross-correlation, batch averaged.

    Inputs are [N,C,H,W]; statistics are taken per sample over all
    remaining axes.  The value lies in [-1, 1] and is invariant to
    positive affine intensity maps of either argument.
    """
    ax = tuple(range(1, len(x.shape)))
    xc = x - x.mean(axes=ax, keepdims=True)
    yc = y - y.mean(axes=ax, keepdims=True)
    num = (xc * yc).sum(axes=ax)
    sq_x = (xc * xc).sum(axes=ax)
    sq_y = (yc * yc).sum(axes=ax)
    return _masked_normalized_dot(num, sq_x, sq_y).mean()


def _scene_parts(s_a: Variable, s_b: Variable):
    d = s_a - s_b
    mse_term = (d * d).mean()
    n = s_a.shape[0]
    f_a = s_a.reshape((n, -1))
    f_b = s_b.reshape((n, -1))
    num = (f_a * f_b).sum(axes=(1,))
    sq_a = (f_a * f_a).sum(axes=(1,))
    sq_b = (f_b * f_b).sum(axes=(1,))
    cos = _masked_normalized_dot(num, sq_a, sq_b)
    # zero-norm samples contribute 0 to the penalty, not 1 - 0
    valid = ((sq_a.value > 0) & (sq_b.value > 0)).astype(num.value.dtype)
    cos_term = ((1.0 - cos) * valid).mean() if not valid.all() else (1.0 - cos).mean()
    return mse_term, cos_term


def scene_consistency(
    s_a: Variable, s_b: Variable, weights: LossWeights = LossWeights()
) -> Variable:
    """Mean-squared code difference plus weighted cosine dissimilarity."""
    mse_term, cos_term = _scene_parts(s_a, s_b)
    return mse_term + weights.lambda_cos * cos_term


def cycle_loss(recon_a: Variable, i_a, recon_b: Variable, i_b) -> Variable:
    """Self-reconstruction error, one mean-MSE term per domain."""
    return mse(recon_a, i_a) + mse(recon_b, i_b)


def _align_parts(b_to_a: Variable, i_a: Variable):
    return mse(b_to_a, i_a), 1.0 - ncc(b_to_a, i_a)


def align_loss(
    b_to_a: Variable, i_a: Variable, weights: LossWeights = LossWeights()
) -> Variable:
    """Cross-domain re-rendering error: MSE plus weighted (1 - NCC)."""
    mse_term, ncc_term = _align_parts(b_to_a, i_a)
    return mse_term + weights.lambda_ncc * ncc_term


def total_loss(scene, cycle, align, weights: LossWeights = LossWeights()):
    """Weighted sum of the three objectives; works on floats or Variables."""
    return (
        weights.lambda_scene * scene
        + weights.lambda_cycle * cycle
        + weights.lambda_align * align
    )


@dataclass
class LossReport:
    """Scalar loss values for one step, with per-term sub-components."""

    step: int
    scene: float
    cycle: float
    align: float
    total: float
    scene_mse: float
    scene_cos: float
    align_mse: float
    align_ncc: float

    CSV_HEADER = "step,scene,cycle,align,total,scene_mse,scene_cos,align_mse,align_ncc"

    def csv_row(self) -> str:
        vals = [
            self.scene, self.cycle, self.align, self.total,
            self.scene_mse, self.scene_cos, self.align_mse, self.align_ncc,
        ]
        return ",".join([str(self.step)] + [repr(float(v)) for v in vals])


def paired_losses(outputs, i_a: Variable, i_b: Variable,
                  weights: LossWeights = LossWeights(), step: int = 0):
    """Assemble the total training loss and its report for one batch.

    Returns ``(loss, report)`` where ``loss`` is the differentiable total
    and ``report`` carries the float values; ``report.total`` is exactly
    the weighted sum of its term fields.
    """
    scene_mse, scene_cos = _scene_parts(outputs.scene_a, outputs.scene_b)
    scene = scene_mse + weights.lambda_cos * scene_cos
    cycle = cycle_loss(outputs.recon_a, i_a, outputs.recon_b, i_b)
    align_mse, align_ncc = _align_parts(outputs.b_to_a, i_a)
    align = align_mse + weights.lambda_ncc * align_ncc
    loss = total_loss(scene, cycle, align, weights)

    scene_v = float(scene.value)
    cycle_v = float(cycle.value)
    align_v = float(align.value)
    report = LossReport(
        step=step,
        scene=scene_v,
        cycle=cycle_v,
        align=align_v,
        total=float(total_loss(scene_v, cycle_v, align_v, weights)),
        scene_mse=float(scene_mse.value),
        scene_cos=float(scene_cos.value),
        align_mse=float(align_mse.value),
        align_ncc=float(align_ncc.value),
    )
    return loss, report
