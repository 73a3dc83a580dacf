"""Attention stages: pooled multi-head self-attention and global-local correlation.

The global-local correlation stage computes dense attention logits and
subtracts a suppression matrix before the softmax, leaving each local row
attending only to itself and the global row. The matrix has zeros on the
diagonal and the first column and a large constant everywhere else; with the
default constant the off-support attention mass underflows to zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .embedding import TokenField
from .errors import ConfigError, ShapeError
from .nn import Conv3dLayer, LayerNorm, Linear, Mlp, Module
from .ops import conv_output_extent
from .tensor import Tensor

POOL_KERNEL = (3, 3, 3)
POOL_PADDING = (1, 1, 1)


@dataclass
class AttentionConfig:
    width: int
    head_dim: int
    q_stride: tuple[int, int, int] = (1, 1, 1)
    kv_stride: tuple[int, int, int] = (1, 1, 1)

    @property
    def heads(self) -> int:
        if self.width % self.head_dim:
            raise ConfigError(f"width {self.width} not divisible by head_dim {self.head_dim}")
        return self.width // self.head_dim


@dataclass
class SuppressionMask:
    """Rule-form mask: entry (i, j) is 0 when i == j or j is the first column, else lam."""

    lam: float = 1e8

    def matrix(self, n_tokens: int, dtype=np.float64) -> np.ndarray:
        m = np.full((n_tokens, n_tokens), self.lam, dtype=dtype)
        np.fill_diagonal(m, 0.0)
        m[:, 0] = 0.0
        return m


def build_suppression(n_local: int, lam: float = 1e8) -> SuppressionMask:
    if n_local < 0:
        raise ConfigError(f"negative local token count {n_local}")
    if lam <= 0:
        raise ConfigError(f"suppression constant must be positive, got {lam}")
    return SuppressionMask(lam=lam)


def split_heads(x: Tensor, head_dim: int) -> Tensor:
    d = x.shape[-1]
    heads = d // head_dim
    if x.ndim == 3:
        b, s, _ = x.shape
        return ops.permute(ops.reshape(x, (b, s, heads, head_dim)), (0, 2, 1, 3))
    s = x.shape[0]
    return ops.permute(ops.reshape(x, (s, heads, head_dim)), (1, 0, 2))


def split_qkv(qkv: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Split a fused (..., S, 3D) projection into q, k, v of (..., S, D).

    Goes through a stacked (3, ..., S, D) layout so each split is a contiguous
    block (fast to copy forward and to slice-add backward).
    """
    d3 = qkv.shape[-1]
    d = d3 // 3
    lead = qkv.shape[:-1]
    stacked = ops.permute(
        ops.reshape(qkv, lead + (3, d)), (qkv.ndim - 1,) + tuple(range(qkv.ndim - 1)) + (qkv.ndim,)
    )
    out = []
    for i in range(3):
        part = ops.narrow(stacked, 0, i, i + 1)
        out.append(ops.reshape(part, lead + (d,)))
    return tuple(out)


def merge_heads(x: Tensor) -> Tensor:
    if x.ndim == 4:
        b, heads, s, hd = x.shape
        return ops.reshape(ops.permute(x, (0, 2, 1, 3)), (b, s, heads * hd))
    heads, s, hd = x.shape
    return ops.reshape(ops.permute(x, (1, 0, 2)), (s, heads * hd))


def _transpose_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return ops.permute(x, axes)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q k^T / sqrt(d)) v over the last two axes.

    The 1/sqrt(d) scale rides in as the softmax temperature (same function,
    one less full-size intermediate).
    """
    d = q.shape[-1]
    logits = ops.matmul(q, _transpose_last(k))
    return ops.matmul(ops.softmax_t(logits, axis=-1, tau=float(np.sqrt(d))), v)


def glc(q: Tensor, k: Tensor, v: Tensor, mask: SuppressionMask) -> Tensor:
    """Masked attention: softmax((q k^T - S) / sqrt(d)) v.

    Shapes (S, d) per head, or any matching leading batch axes. Row 0 is the
    global token. Each row i > 0 effectively mixes only v[0] and v[i]; row 0
    reproduces v[0].
    """
    if q.shape != k.shape or q.shape != v.shape:
        raise ShapeError(f"glc expects matching q/k/v shapes, got {q.shape}/{k.shape}/{v.shape}")
    d = q.shape[-1]
    n_tokens = q.shape[-2]
    logits = ops.matmul(q, _transpose_last(k))
    s = Tensor(mask.matrix(n_tokens, dtype=q.dtype))
    shifted = ops.sub(logits, s)
    return ops.matmul(ops.softmax_t(shifted, axis=-1, tau=float(np.sqrt(d))), v)


def map_locals(x: Tensor, grid, n_prefix: int, fn, new_grid) -> Tensor:
    """Apply ``fn`` to the unflattened local grid; prefix rows bypass untouched.

    ``fn`` maps the channels-last volume (..., T, H, W, D) to
    (..., T2, H2, W2, D); token flattening order (T-major, then H, then W)
    makes the reshape a free view.
    """
    t, h, w = grid
    t2, h2, w2 = new_grid
    d = x.shape[-1]
    n = t * h * w
    lead = x.shape[:-2]
    prefix = ops.narrow(x, -2, 0, n_prefix)
    loc = ops.narrow(x, -2, n_prefix, n_prefix + n)
    vol = ops.reshape(loc, lead + (t, h, w, d))
    out = fn(vol)
    flat = ops.reshape(out, lead + (t2 * h2 * w2, d))
    return ops.concat([prefix, flat], axis=-2)


def pooled_grid(grid, stride) -> tuple[int, int, int]:
    return tuple(
        conv_output_extent(n, POOL_KERNEL[i], stride[i], POOL_PADDING[i])
        for i, n in enumerate(grid)
    )


def _is_identity(stride) -> bool:
    return stride is None or tuple(stride) == (1, 1, 1)


class AttentionBlock(Module):
    """Pre-norm attention + MLP layer with a resampled token grid.

    Encoder flavor: local Q/K/V rows are pooled by strided depthwise convs and
    the residual path max-pools to match; decoder flavor upsamples Q (and the
    residual) by trilinear resampling while K/V keep pooling. The global (and
    class) prefix rows bypass every resampling step and stay attached as the
    leading rows.
    """

    def __init__(
        self,
        d_in: int,
        d_out: int,
        head_dim: int,
        mlp_hidden: int,
        q_stride=None,
        kv_stride=None,
        q_upsample=None,
    ):
        if d_in % head_dim:
            raise ConfigError(f"attention width {d_in} not divisible by head_dim {head_dim}")
        if not _is_identity(q_stride) and not _is_identity(q_upsample):
            raise ConfigError("a layer cannot both pool and upsample its queries")
        self.head_dim = head_dim
        self.q_stride = None if _is_identity(q_stride) else tuple(q_stride)
        self.kv_stride = None if _is_identity(kv_stride) else tuple(kv_stride)
        self.q_upsample = None if _is_identity(q_upsample) else tuple(q_upsample)
        self.norm1 = LayerNorm(d_in)
        self.qkv = Linear(d_in, 3 * d_in)
        self.proj = Linear(d_in, d_in)
        self.norm2 = LayerNorm(d_in)
        self.mlp = Mlp(d_in, mlp_hidden, d_out)
        self.res_proj = Linear(d_in, d_out) if d_out != d_in else None
        if self.q_stride is not None:
            self.pool_q = Conv3dLayer(
                d_in, d_in, POOL_KERNEL, self.q_stride, POOL_PADDING, bias=False, groups=d_in
            )
        else:
            self.pool_q = None
        if self.kv_stride is not None:
            self.pool_k = Conv3dLayer(
                d_in, d_in, POOL_KERNEL, self.kv_stride, POOL_PADDING, bias=False, groups=d_in
            )
            self.pool_v = Conv3dLayer(
                d_in, d_in, POOL_KERNEL, self.kv_stride, POOL_PADDING, bias=False, groups=d_in
            )
        else:
            self.pool_k = self.pool_v = None

    def _pool_fn(self, layer):
        return lambda vol: ops.depthwise_pool_cl(vol, layer.weight, layer.stride, layer.padding)

    def output_grid(self, grid) -> tuple[int, int, int]:
        if self.q_stride is not None:
            return pooled_grid(grid, self.q_stride)
        if self.q_upsample is not None:
            return tuple(n * f for n, f in zip(grid, self.q_upsample))
        return tuple(grid)

    def __call__(self, tf: TokenField) -> TokenField:
        x, grid, n_prefix = tf.x, tf.grid, tf.n_prefix
        out_grid = self.output_grid(grid)

        h = self.norm1(x)
        q, k, v = split_qkv(self.qkv(h))

        if self.q_stride is not None:
            q = map_locals(q, grid, n_prefix, self._pool_fn(self.pool_q), out_grid)
        elif self.q_upsample is not None:
            q = map_locals(q, grid, n_prefix, lambda vol: ops.resize_cl(vol, out_grid), out_grid)
        if self.kv_stride is not None:
            kv_grid = pooled_grid(grid, self.kv_stride)
            k = map_locals(k, grid, n_prefix, self._pool_fn(self.pool_k), kv_grid)
            v = map_locals(v, grid, n_prefix, self._pool_fn(self.pool_v), kv_grid)

        qh = split_heads(q, self.head_dim)
        kh = split_heads(k, self.head_dim)
        vh = split_heads(v, self.head_dim)
        attn = merge_heads(scaled_dot_attention(qh, kh, vh))
        attn = self.proj(attn)

        if self.q_stride is not None:
            res = map_locals(
                x, grid, n_prefix, lambda vol: ops.max_pool_cl(vol, self.q_stride), out_grid
            )
        elif self.q_upsample is not None:
            res = map_locals(
                x, grid, n_prefix, lambda vol: ops.resize_cl(vol, out_grid), out_grid
            )
        else:
            res = x
        a = ops.add(res, attn)
        y = self.mlp(self.norm2(a))
        base = self.res_proj(a) if self.res_proj is not None else a
        return TokenField(ops.add(base, y), out_grid, n_prefix)


class GlobalLocalBlock(Module):
    """Correlation stage between the global token and each local token.

    Runs masked multi-head attention with its own projections, residual and
    MLP, then concatenates its output with the input along channels, so the
    first half of the output width is the input bit-for-bit.
    """

    def __init__(self, d: int, head_dim: int, mlp_hidden: int, lam: float = 1e8):
        if d % head_dim:
            raise ConfigError(f"width {d} not divisible by head_dim {head_dim}")
        self.head_dim = head_dim
        self.mask = build_suppression(0, lam)
        self.norm1 = LayerNorm(d)
        self.qkv = Linear(d, 3 * d)
        self.proj = Linear(d, d)
        self.norm2 = LayerNorm(d)
        self.mlp = Mlp(d, mlp_hidden, d)

    @property
    def heads(self) -> int:
        return self.qkv.w.shape[0] // self.head_dim

    def _project(self, x: Tensor):
        h = self.norm1(x)
        q, k, v = split_qkv(self.qkv(h))
        return (
            split_heads(q, self.head_dim),
            split_heads(k, self.head_dim),
            split_heads(v, self.head_dim),
        )

    def __call__(self, tf: TokenField) -> TokenField:
        x = tf.x
        q, k, v = self._project(x)
        attn = merge_heads(glc(q, k, v, self.mask))
        attn = self.proj(attn)
        a = ops.add(x, attn)
        x_glc = ops.add(a, self.mlp(self.norm2(a)))
        fused = ops.concat([x, x_glc], axis=-1)
        return TokenField(fused, tf.grid, tf.n_prefix)

    def head_maps(self, tf: TokenField) -> np.ndarray:
        """Correlation of the global token with each local token, per head.

        Weights are exp(q_global . k_i / sqrt(head_dim)) normalized over the
        local tokens, reshaped to the token grid. Returns (heads, T, H, W) or
        (B, heads, T, H, W) float arrays that each sum to 1.
        """
        q, k, _ = self._project(tf.x)
        qd, kd = q.data, k.data
        batched = qd.ndim == 4
        if not batched:
            qd, kd = qd[None], kd[None]
        # the global token is row 0 regardless of an extra class token
        q1 = qd[:, :, 0:1, :]
        k_loc = kd[:, :, tf.n_prefix :, :]
        logits = (q1 * k_loc).sum(axis=-1) / np.sqrt(self.head_dim)
        logits -= logits.max(axis=-1, keepdims=True)
        w = np.exp(logits)
        w /= w.sum(axis=-1, keepdims=True)
        maps = w.reshape(w.shape[0], w.shape[1], *tf.grid)
        return maps if batched else maps[0]
