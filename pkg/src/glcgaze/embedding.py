"""Clip-to-token embedding: local patch tokens plus one global token.

The token matrix keeps the global token as row 0 throughout the network
(row 1 in one-based terms), optionally followed by a learned class token,
then the local tokens in T-major, H, W order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .config import ModelConfig, Triple
from .errors import ConfigError, ShapeError
from .nn import Conv3dLayer, Linear, Module, Parameter
from .ops import conv_output_extent
from .tensor import Tensor

LOCAL_KERNEL = (3, 7, 7)
LOCAL_PADDING = (1, 3, 3)
GLOBAL_STACK_KERNEL = (3, 3, 3)
GLOBAL_STACK_STRIDE = (1, 2, 2)
GLOBAL_STACK_PADDING = (1, 1, 1)
GLOBAL_STACK_DEPTH = 3


@dataclass
class TokenField:
    """Token matrix with its spatial bookkeeping.

    ``x`` is (S, D) or batched (B, S, D); rows [0, n_prefix) are the global
    token (and the class token, when present), the remaining rows unflatten
    to ``grid``.
    """

    x: Tensor
    grid: Triple
    n_prefix: int = 1

    def __post_init__(self):
        t, h, w = self.grid
        if self.x.shape[-2] != self.n_prefix + t * h * w:
            raise ShapeError(
                f"token count {self.x.shape[-2]} != prefix {self.n_prefix} + grid {self.grid}"
            )

    @property
    def n_local(self) -> int:
        t, h, w = self.grid
        return t * h * w

    @property
    def width(self) -> int:
        return self.x.shape[-1]

    @property
    def batched(self) -> bool:
        return self.x.ndim == 3


def global_stack_grid(grid: Triple, depth: int = GLOBAL_STACK_DEPTH) -> Triple:
    """Grid after the strided conv stack used by global embedding strategies c/d."""
    t, h, w = grid
    for _ in range(depth):
        t = conv_output_extent(t, GLOBAL_STACK_KERNEL[0], GLOBAL_STACK_STRIDE[0], GLOBAL_STACK_PADDING[0])
        h = conv_output_extent(h, GLOBAL_STACK_KERNEL[1], GLOBAL_STACK_STRIDE[1], GLOBAL_STACK_PADDING[1])
        w = conv_output_extent(w, GLOBAL_STACK_KERNEL[2], GLOBAL_STACK_STRIDE[2], GLOBAL_STACK_PADDING[2])
    return (t, h, w)


class LocalTokenEmbed(Module):
    """Patchify by strided conv and add the learnable positional table.

    The positional table applies to local tokens only; prefix tokens are
    appended later by :func:`tokenize` and never receive positions.
    """

    def __init__(self, cfg: ModelConfig):
        d = cfg.embed_dim
        self.conv = Conv3dLayer(cfg.in_channels, d, LOCAL_KERNEL, cfg.patch_stride, LOCAL_PADDING)
        self.pos = Parameter((cfg.n_local, d))
        self.grid = cfg.token_grid

    def __call__(self, clip: Tensor, add_positions: bool = True):
        """Returns (tokens (..., N, D), pre-positional local grid (..., D, T', H', W'))."""
        vol = self.conv(clip)
        batched = vol.ndim == 5
        t, h, w = self.grid
        n = t * h * w
        d = vol.shape[-4]
        if batched:
            tokens = ops.reshape(ops.permute(vol, (0, 2, 3, 4, 1)), (vol.shape[0], n, d))
        else:
            tokens = ops.reshape(ops.permute(vol, (1, 2, 3, 0)), (n, d))
        if add_positions:
            table = ops.embedding(self.pos, np.arange(n))
            tokens = ops.add(tokens, table)
        return tokens, vol


class GlobalTokenEmbed(Module):
    """One of the four global-token sources.

    a: global max pool over the raw clip, then a channel lift to D.
    b: global max pool over the unflattened local token grid (parameter-free).
    c: a fresh conv identical in shape to the local embedding layer, then the
       same three-conv stack as (d); weights are not shared with (d) or with
       the local embedding.
    d: three strided convs over the local token grid, flatten, one linear map.
    """

    def __init__(self, cfg: ModelConfig, strategy: str):
        if strategy not in ("a", "b", "c", "d"):
            raise ConfigError(f"unknown global embedding strategy {strategy!r}")
        self.strategy = strategy
        d = cfg.embed_dim
        self.clip_dims = (cfg.clip_t, cfg.clip_h, cfg.clip_w)
        self.grid = cfg.token_grid
        if strategy == "a":
            self.lift = Linear(cfg.in_channels, d)
        if strategy == "c":
            self.patch_conv = Conv3dLayer(
                cfg.in_channels, d, LOCAL_KERNEL, cfg.patch_stride, LOCAL_PADDING
            )
        if strategy in ("c", "d"):
            convs = []
            for _ in range(GLOBAL_STACK_DEPTH):
                convs.append(
                    Conv3dLayer(d, d, GLOBAL_STACK_KERNEL, GLOBAL_STACK_STRIDE, GLOBAL_STACK_PADDING)
                )
            self.conv1, self.conv2, self.conv3 = convs
            gt, gh, gw = global_stack_grid(self.grid)
            self.flatten_width = d * gt * gh * gw
            self.proj = Linear(self.flatten_width, d)

    def _run_stack(self, vol: Tensor) -> Tensor:
        for conv in (self.conv1, self.conv2, self.conv3):
            vol = conv(vol)
        flat = ops.reshape(vol, (vol.shape[0], -1) if vol.ndim == 5 else (-1,))
        return self.proj(flat)

    def __call__(self, clip: Tensor | None, local_grid: Tensor | None) -> Tensor:
        """Produce the global token, shape (1, D) or batched (B, 1, D)."""
        if self.strategy in ("a", "c"):
            if clip is None:
                raise ConfigError(f"strategy {self.strategy!r} consumes the raw clip")
            src = clip
        else:
            if local_grid is None:
                raise ConfigError(f"strategy {self.strategy!r} consumes the unflattened local grid")
            src = local_grid
        batched = src.ndim == 5
        if self.strategy == "a":
            pooled = ops.max_pool3d(clip, self.clip_dims)
            vec = ops.reshape(pooled, (clip.shape[0], -1) if batched else (-1,))
            out = self.lift(vec)
        elif self.strategy == "b":
            pooled = ops.max_pool3d(local_grid, self.grid)
            out = ops.reshape(pooled, (local_grid.shape[0], -1) if batched else (-1,))
        elif self.strategy == "c":
            out = self._run_stack(self.patch_conv(clip))
        else:
            out = self._run_stack(local_grid)
        d = out.shape[-1]
        return ops.reshape(out, (out.shape[0], 1, d) if batched else (1, d))


def tokenize(local: Tensor, global_token: Tensor, grid: Triple, class_token: Tensor | None = None) -> TokenField:
    """Assemble [global; class?; locals] with the global token as the first row."""
    if local.shape[-1] != global_token.shape[-1]:
        raise ShapeError(
            f"token width mismatch: locals {local.shape} vs global {global_token.shape}"
        )
    batched = local.ndim == 3
    rows = [global_token]
    n_prefix = 1
    if class_token is not None:
        n_prefix = 2
        rows.append(class_token)
    if batched:
        b, d = local.shape[0], local.shape[-1]
        rows = [r if r.ndim == 3 else ops.reshape(r, (1, 1, d)) for r in rows]
        rows = [r if r.shape[0] == b else ops.expand(r, (b, 1, d)) for r in rows]
    rows.append(local)
    x = ops.concat(rows, axis=-2)
    return TokenField(x=x, grid=grid, n_prefix=n_prefix)


def unflatten_locals(tf: TokenField) -> Tensor:
    """Inverse bookkeeping: local rows back to (..., D, T', H', W')."""
    t, h, w = tf.grid
    d = tf.width
    locals_ = ops.narrow(tf.x, -2, tf.n_prefix, tf.n_prefix + tf.n_local)
    if tf.batched:
        b = tf.x.shape[0]
        return ops.permute(ops.reshape(locals_, (b, t, h, w, d)), (0, 4, 1, 2, 3))
    return ops.permute(ops.reshape(locals_, (t, h, w, d)), (3, 0, 1, 2))


class TokenEmbedder(Module):
    """Full tokenizer for one model variant."""

    def __init__(self, cfg: ModelConfig, use_global_embed: bool, strategy: str | None):
        self.cfg = cfg
        self.local = LocalTokenEmbed(cfg)
        if use_global_embed:
            self.global_embed = GlobalTokenEmbed(cfg, strategy or cfg.strategy)
        else:
            # baseline keeps the first-row slot as a learned constant token
            self.global_embed = None
            self.global_const = Parameter((1, cfg.embed_dim))
        self.class_token = Parameter((1, cfg.embed_dim)) if cfg.n_prefix == 2 else None

    def __call__(self, clip: Tensor) -> TokenField:
        tokens, vol = self.local(clip)
        if self.global_embed is not None:
            gtok = self.global_embed(clip, vol)
        else:
            gtok = self.global_const
        return tokenize(tokens, gtok, self.local.grid, self.class_token)
