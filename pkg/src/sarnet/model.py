"""The three networks: scene encoder, appearance encoder, renderer.

The scene encoder is a U-Net with instance normalization in every block,
producing a full-resolution multi-channel scene code.  The appearance
encoder is a small conv stack without normalization, globally pooled to
a compact code: normalization would strip exactly the statistics the
code must carry.  The renderer is a stack of convolution blocks whose
features are re-modulated by the appearance code at every block, ending
in a linear projection back to image channels.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Variable
from .layers import (
    ParamStore,
    conv_block,
    conv_init,
    dense,
    dense_init,
    global_avg_pool,
    instance_norm,
    modulate,
)


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 64
    in_channels: int = 1
    base_channels: int = 32
    levels: int = 3
    scene_channels: int = 64
    appearance_dim: int = 32
    norm_eps: float = 1e-8
    seed: int = 0

    def validate(self) -> "ModelConfig":
        if self.levels < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")
        div = 2 ** self.levels
        if self.image_size % div:
            raise ValueError(
                f"image_size {self.image_size} must be divisible by {div} "
                f"(2**levels)"
            )
        return self

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name in d:
                kwargs[f.name] = type(f.default)(d[f.name])
        return cls(**kwargs).validate()


def _render_widths(cfg: ModelConfig) -> list[int]:
    # first block widens to 2*base, the rest stay at base
    widths = [2 * cfg.base_channels]
    widths += [cfg.base_channels] * (cfg.levels - 1)
    return widths


def init_params(cfg: ModelConfig) -> ParamStore:
    """Deterministically initialize all parameters from ``cfg.seed``.

    Conv and dense weights use Kaiming-uniform fan-in with zero biases.
    The modulation dense maps start as the exact identity (zero weight,
    bias fixing gamma=1 and beta=0), so the renderer initially ignores
    the appearance code.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    p = ParamStore()
    b = cfg.base_channels

    p.add("scene.in.k", conv_init(rng, b, cfg.in_channels, 3))
    p.add("scene.in.b", np.zeros(b))
    for level in range(1, cfg.levels + 1):
        c_in = b * 2 ** (level - 1)
        c_out = b * 2 ** level
        p.add(f"scene.down{level}.k", conv_init(rng, c_out, c_in, 3))
        p.add(f"scene.down{level}.b", np.zeros(c_out))
    for level in range(cfg.levels, 0, -1):
        deep = b * 2 ** level
        skip = b * 2 ** (level - 1)
        p.add(f"scene.up{level}.k", conv_init(rng, skip, deep + skip, 3))
        p.add(f"scene.up{level}.b", np.zeros(skip))
    p.add("scene.out.k", conv_init(rng, cfg.scene_channels, b, 1))
    p.add("scene.out.b", np.zeros(cfg.scene_channels))

    p.add("app.conv1.k", conv_init(rng, b, cfg.in_channels, 3))
    p.add("app.conv1.b", np.zeros(b))
    p.add("app.conv2.k", conv_init(rng, 2 * b, b, 3))
    p.add("app.conv2.b", np.zeros(2 * b))
    p.add("app.conv3.k", conv_init(rng, 2 * b, 2 * b, 3))
    p.add("app.conv3.b", np.zeros(2 * b))
    p.add("app.fc.w", dense_init(rng, 2 * b, cfg.appearance_dim))
    p.add("app.fc.b", np.zeros(cfg.appearance_dim))

    widths = _render_widths(cfg)
    c_prev = cfg.scene_channels
    for i, width in enumerate(widths, start=1):
        p.add(f"render.block{i}.k", conv_init(rng, width, c_prev, 3))
        p.add(f"render.block{i}.b", np.zeros(width))
        p.add(f"render.block{i}.mod.w", np.zeros((cfg.appearance_dim, 2 * width)))
        p.add(
            f"render.block{i}.mod.b",
            np.concatenate([np.ones(width), np.zeros(width)]),
        )
        c_prev = width
    p.add("render.out.k", conv_init(rng, cfg.in_channels, c_prev, 3))
    p.add("render.out.b", np.zeros(cfg.in_channels))
    return p


def _check_divisible(x: Variable, cfg: ModelConfig) -> None:
    div = 2 ** cfg.levels
    _, _, h, w = x.shape
    if h % div or w % div:
        raise ValueError(
            f"spatial size {h}x{w} must be divisible by {div} (2**levels)"
        )


def encode_scene(
    x: Variable, params: Mapping[str, Variable], cfg: ModelConfig
) -> Variable:
    """U-Net over [N,C_in,H,W] producing a [N,C_S,H,W] scene code."""
    _check_divisible(x, cfg)
    eps = cfg.norm_eps
    skips = [conv_block(x, params["scene.in.k"], params["scene.in.b"], eps=eps)]
    for level in range(1, cfg.levels + 1):
        y = ad.avg_pool_x2(skips[-1])
        y = conv_block(
            y, params[f"scene.down{level}.k"], params[f"scene.down{level}.b"], eps=eps
        )
        skips.append(y)
    y = skips[-1]
    for level in range(cfg.levels, 0, -1):
        y = ad.resize_nearest_x2(y)
        y = ad.concat([y, skips[level - 1]], axis=1)
        y = conv_block(
            y, params[f"scene.up{level}.k"], params[f"scene.up{level}.b"], eps=eps
        )
    return ad.conv2d(y, params["scene.out.k"], params["scene.out.b"], padding="same")


def scene_stem_post_norm(
    x: Variable, params: Mapping[str, Variable], cfg: ModelConfig
) -> Variable:
    """First scene-encoder activations right after instance norm (pre-ReLU)."""
    y = ad.conv2d(x, params["scene.in.k"], params["scene.in.b"], padding="same")
    return instance_norm(y, cfg.norm_eps)


def encode_appearance(
    x: Variable, params: Mapping[str, Variable], cfg: ModelConfig
) -> Variable:
    """Conv stack (no normalization) -> global average pool -> dense code."""
    y = conv_block(x, params["app.conv1.k"], params["app.conv1.b"], with_norm=False)
    y = ad.avg_pool_x2(y)
    y = conv_block(y, params["app.conv2.k"], params["app.conv2.b"], with_norm=False)
    y = ad.avg_pool_x2(y)
    y = conv_block(y, params["app.conv3.k"], params["app.conv3.b"], with_norm=False)
    y = global_avg_pool(y)
    return dense(y, params["app.fc.w"], params["app.fc.b"])


def render(
    s: Variable, a: Variable, params: Mapping[str, Variable], cfg: ModelConfig
) -> Variable:
    """Decode a scene code under an appearance code back to image space."""
    eps = cfg.norm_eps
    y = s
    for i in range(1, len(_render_widths(cfg)) + 1):
        y = ad.conv2d(
            y, params[f"render.block{i}.k"], params[f"render.block{i}.b"], padding="same"
        )
        y = modulate(
            y, a, params[f"render.block{i}.mod.w"], params[f"render.block{i}.mod.b"], eps
        )
        y = y.relu()
    return ad.conv2d(y, params["render.out.k"], params["render.out.b"], padding="same")


@dataclass
class PairOutputs:
    """Everything the losses need from one paired forward pass."""

    scene_a: Variable
    scene_b: Variable
    app_a: Variable
    app_b: Variable
    recon_a: Variable
    recon_b: Variable
    b_to_a: Variable
    a_to_b: Variable | None


def forward_pair(
    i_a: Variable,
    i_b: Variable,
    params: Mapping[str, Variable],
    cfg: ModelConfig,
    include_reverse: bool = True,
) -> PairOutputs:
    """Encode both images, reconstruct each, and translate across domains.

    Both encode passes and all renders are batched along axis 0 to keep
    the op count low.  ``include_reverse=False`` skips the A->B render
    that no default loss consumes.
    """
    if i_a.shape != i_b.shape:
        raise ValueError(f"paired images must share shape: {i_a.shape} vs {i_b.shape}")
    n = i_a.shape[0]
    both = ad.concat([i_a, i_b], axis=0)
    s_both = encode_scene(both, params, cfg)
    a_both = encode_appearance(both, params, cfg)
    s_a, s_b = ad.narrow(s_both, 0, 0, n), ad.narrow(s_both, 0, n, n)
    a_a, a_b = ad.narrow(a_both, 0, 0, n), ad.narrow(a_both, 0, n, n)

    scenes = [s_a, s_b, s_b] + ([s_a] if include_reverse else [])
    apps = [a_a, a_b, a_a] + ([a_b] if include_reverse else [])
    rendered = render(ad.concat(scenes, axis=0), ad.concat(apps, axis=0), params, cfg)
    recon_a = ad.narrow(rendered, 0, 0, n)
    recon_b = ad.narrow(rendered, 0, n, n)
    b_to_a = ad.narrow(rendered, 0, 2 * n, n)
    a_to_b = ad.narrow(rendered, 0, 3 * n, n) if include_reverse else None
    return PairOutputs(s_a, s_b, a_a, a_b, recon_a, recon_b, b_to_a, a_to_b)
