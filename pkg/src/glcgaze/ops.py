"""Differentiable tensor primitives.

Every public function here computes its forward result with numpy and, when
grad tracking is active, registers a backward closure on the output tensor.
Backward closures accumulate into ``parent.grad`` by summation, and skip any
parent that does not require gradients (so e.g. convolving a constant input
never computes an input gradient).

Shape conventions: attention code uses row-token matrices ``(..., S, D)``;
volumetric code uses channel-first ``(C, T, H, W)`` with an optional leading
batch axis.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ShapeError
from .tensor import Tensor, make_op_output


def astensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x), dtype=dtype)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    """Coerce the operands of a binary op; bare scalars adopt the tensor's dtype."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor) and np.isscalar(b):
        return a, Tensor(np.asarray(b, dtype=a.dtype))
    if isinstance(b, Tensor) and not isinstance(a, Tensor) and np.isscalar(a):
        return Tensor(np.asarray(a, dtype=b.dtype)), b
    return astensor(a), astensor(b)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting expanded."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, extent in enumerate(shape):
        if extent == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    out_data = a.data + b.data

    def backward(g):
        a.accumulate_grad(_unbroadcast(g, a.shape))
        b.accumulate_grad(_unbroadcast(g, b.shape))

    return make_op_output(out_data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    out_data = a.data - b.data

    def backward(g):
        a.accumulate_grad(_unbroadcast(g, a.shape))
        b.accumulate_grad(_unbroadcast(-g, b.shape))

    return make_op_output(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.shape))

    return make_op_output(out_data, (a, b), backward)


def texp(x: Tensor) -> Tensor:
    out_data = np.exp(x.data)

    def backward(g):
        x.accumulate_grad(g * out_data)

    return make_op_output(out_data, (x,), backward)


def tlog(x: Tensor) -> Tensor:
    out_data = np.log(x.data)

    def backward(g):
        x.accumulate_grad(g / x.data)

    return make_op_output(out_data, (x,), backward)


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(x: Tensor) -> Tensor:
    # tanh form of the gaussian error linear unit
    xd = x.data
    x2 = xd * xd
    t = np.tanh(_GELU_C * (xd + 0.044715 * (x2 * xd)))
    out_data = 0.5 * xd * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 0.134145 * x2)
        dx = 0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner
        x.accumulate_grad(g * dx)

    return make_op_output(out_data, (x,), backward)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def _norm_axes(axis, ndim) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(x: Tensor, axis=None) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    out_data = x.data.sum(axis=axes if axis is not None else None)

    def backward(g):
        ge = np.expand_dims(g, axes) if x.ndim else g
        x.accumulate_grad(np.broadcast_to(ge, x.shape).copy())

    return make_op_output(np.asarray(out_data), (x,), backward)


def tmean(x: Tensor, axis=None) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if x.ndim else 1
    out_data = x.data.mean(axis=axes if axis is not None else None)

    def backward(g):
        ge = np.expand_dims(g, axes) if x.ndim else g
        x.accumulate_grad(np.broadcast_to(ge, x.shape) / count)

    return make_op_output(np.asarray(out_data), (x,), backward)


# ---------------------------------------------------------------------------
# structure
# ---------------------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    out_data = x.data.reshape(shape)

    def backward(g):
        x.accumulate_grad(g.reshape(x.shape))

    return make_op_output(out_data, (x,), backward)


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"permute axes {axes} invalid for shape {x.shape}")
    inv = tuple(np.argsort(axes))
    out_data = np.ascontiguousarray(x.data.transpose(axes))

    def backward(g):
        x.accumulate_grad(g.transpose(inv))

    return make_op_output(out_data, (x,), backward)


def narrow(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    axis = axis % x.ndim
    if not (0 <= start <= stop <= x.shape[axis]):
        raise ShapeError(f"narrow [{start}:{stop}] out of range for axis {axis} of {x.shape}")
    sl = tuple(slice(None) if a != axis else slice(start, stop) for a in range(x.ndim))
    out_data = x.data[sl]

    def backward(g):
        # accumulate straight into the sliced region; avoids a full zeros+add
        if not x.requires_grad:
            return
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        x.grad[sl] += g

    return make_op_output(out_data.copy(), (x,), backward)


def concat(tensors, axis: int) -> Tensor:
    tensors = [astensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of zero tensors")
    axis = axis % tensors[0].ndim
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(base) or any(
            o != b for a, (o, b) in enumerate(zip(other, base)) if a != axis
        ):
            raise ShapeError(f"concat shape mismatch: {[t.shape for t in tensors]} on axis {axis}")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = tuple(
                    slice(None) if a != axis else slice(int(start), int(stop))
                    for a in range(t.ndim)
                )
                t.accumulate_grad(g[sl])

    return make_op_output(out_data, tuple(tensors), backward)


def expand(x: Tensor, shape) -> Tensor:
    """Broadcast to ``shape``; the backward rule sums over the expanded axes."""
    shape = tuple(int(s) for s in shape)
    out_data = np.broadcast_to(x.data, shape).copy()

    def backward(g):
        x.accumulate_grad(_unbroadcast(g, x.shape))

    return make_op_output(out_data, (x,), backward)


def embedding(table: Tensor, indices) -> Tensor:
    """Row lookup into a learnable table; gradients scatter-add back."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.min(initial=0) < 0 or (idx.size and idx.max() >= table.shape[0]):
        raise ShapeError(f"embedding indices out of range for table {table.shape}")
    out_data = table.data[idx]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        table.accumulate_grad(gt)

    return make_op_output(out_data, (table,), backward)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product ``(..., M, K) @ (..., K, P)`` with equal leading dims."""
    a, b = astensor(a), astensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents disagree: {a.shape} @ {b.shape}")
    if a.dtype != b.dtype:
        raise ShapeError(f"matmul dtype mismatch: {a.dtype} vs {b.dtype}")
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g @ b.data.swapaxes(-1, -2))
        if b.requires_grad:
            b.accumulate_grad(a.data.swapaxes(-1, -2) @ g)

    return make_op_output(out_data, (a, b), backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map on the last axis: ``x @ w + b`` for x of shape (..., K)."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear shape mismatch: {x.shape} @ {w.shape}")
    xf = np.ascontiguousarray(x.data).reshape(-1, x.shape[-1])
    out = xf @ w.data
    if b is not None:
        np.add(out, b.data, out=out)
    out_data = out.reshape(x.shape[:-1] + (w.shape[1],))

    def backward(g):
        gf = g.reshape(-1, w.shape[1])
        if x.requires_grad:
            x.accumulate_grad((gf @ w.data.T).reshape(x.shape))
        if w.requires_grad:
            w.accumulate_grad(xf.T @ gf)
        if b is not None and b.requires_grad:
            b.accumulate_grad(gf.sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return make_op_output(out_data, parents, backward)


# ---------------------------------------------------------------------------
# normalization / activation over tokens
# ---------------------------------------------------------------------------


def softmax_t(x: Tensor, axis: int = -1, tau: float = 1.0) -> Tensor:
    """Temperature softmax along ``axis`` with max-subtraction for stability."""
    if not tau > 0:
        raise ConfigError(f"softmax temperature must be positive, got {tau}")
    z = x.data / tau
    np.subtract(z, z.max(axis=axis, keepdims=True), out=z)
    np.exp(z, out=z)
    z /= z.sum(axis=axis, keepdims=True)
    out_data = z

    def backward(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        dx = g - inner
        dx *= out_data
        dx /= tau
        x.accumulate_grad(dx)

    return make_op_output(out_data, (x,), backward)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Per-token normalization over the last axis with learnable scale/shift."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layernorm scale/shift must be ({d},), got {gamma.shape}/{beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xm = x.data - mu
    var = (xm * xm).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xm * inv
    out_data = xhat * gamma.data + beta.data

    def backward(g):
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).reshape(-1, d).sum(axis=0))
        if beta.requires_grad:
            beta.accumulate_grad(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gx = g * gamma.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            x.accumulate_grad(inv * (gx - m1 - xhat * m2))

    return make_op_output(out_data, (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# volumetric ops
# ---------------------------------------------------------------------------


def _as_batched_5d(x: Tensor):
    if x.ndim == 4:
        return x.data[None], False
    if x.ndim == 5:
        return x.data, True
    raise ShapeError(f"expected (C,T,H,W) or (B,C,T,H,W), got {x.shape}")


def conv_output_extent(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def conv3d(
    x: Tensor,
    kernel: Tensor,
    stride: tuple[int, int, int],
    padding: tuple[int, int, int],
    bias: Tensor | None = None,
    groups: int = 1,
) -> Tensor:
    """3-D cross-correlation (no kernel flip) with stride and zero padding.

    ``kernel`` has shape (C_out, C_in/groups, kT, kH, kW); only dense
    (``groups=1``) and depthwise (``groups == C_in == C_out``) modes exist.
    """
    xb, batched = _as_batched_5d(x)
    bsz, cin, *in_sp = xb.shape
    cout, ck, kt, kh, kw = kernel.shape
    st, sh, sw = stride
    pt, ph, pw = padding
    depthwise = groups == cin == cout and ck == 1
    if groups == 1:
        if ck != cin:
            raise ShapeError(f"conv3d channels disagree: input {cin}, kernel {kernel.shape}")
    elif not depthwise:
        raise ConfigError(f"conv3d groups={groups} unsupported (dense or depthwise only)")
    out_sp = [conv_output_extent(n, k, s, p) for n, k, s, p in zip(in_sp, (kt, kh, kw), stride, padding)]
    if min(out_sp) < 1:
        raise ConfigError(
            f"conv3d output extent non-positive: input {tuple(in_sp)}, kernel {(kt, kh, kw)}, "
            f"stride {stride}, padding {padding} -> {tuple(out_sp)}"
        )
    ot, oh, ow = out_sp

    if pt or ph or pw:
        xp = np.zeros(
            (bsz, cin, in_sp[0] + 2 * pt, in_sp[1] + 2 * ph, in_sp[2] + 2 * pw), dtype=xb.dtype
        )
        xp[:, :, pt : pt + in_sp[0], ph : ph + in_sp[1], pw : pw + in_sp[2]] = xb
    else:
        xp = xb

    def tap_slice(i, j, k):
        return (
            slice(None),
            slice(None),
            slice(i, i + st * ot, st),
            slice(j, j + sh * oh, sh),
            slice(k, k + sw * ow, sw),
        )

    pmat = None
    if depthwise:
        # shift-and-add over the taps; faster than gathering strided windows
        kd = kernel.data[:, 0]
        out_data = np.zeros((bsz, cin, ot, oh, ow), dtype=xb.dtype)
        for i in range(kt):
            for j in range(kh):
                for k in range(kw):
                    out_data += xp[tap_slice(i, j, k)] * kd[:, i, j, k][:, None, None, None]
    else:
        windows = sliding_window_view(xp, (kt, kh, kw), axis=(2, 3, 4))[:, :, ::st, ::sh, ::sw]
        pmat = np.ascontiguousarray(windows.transpose(0, 2, 3, 4, 1, 5, 6, 7)).reshape(
            bsz * ot * oh * ow, cin * kt * kh * kw
        )
        kmat = kernel.data.reshape(cout, -1)
        out_data = (pmat @ kmat.T).reshape(bsz, ot, oh, ow, cout).transpose(0, 4, 1, 2, 3)
    if bias is not None:
        out_data = out_data + bias.data[:, None, None, None]

    def backward(g):
        if not batched:
            g = g[None] if g.ndim == 4 else g
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=(0, 2, 3, 4)))
        if kernel.requires_grad:
            if depthwise:
                gk = np.empty_like(kernel.data)
                for i in range(kt):
                    for j in range(kh):
                        for k in range(kw):
                            gk[:, 0, i, j, k] = np.einsum(
                                "bcthw,bcthw->c", xp[tap_slice(i, j, k)], g, optimize=True
                            )
            else:
                gf = np.ascontiguousarray(g.transpose(0, 2, 3, 4, 1)).reshape(-1, cout)
                gk = (gf.T @ pmat).reshape(kernel.shape)
            kernel.accumulate_grad(gk)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            if depthwise:
                kd = kernel.data[:, 0]
                for i in range(kt):
                    for j in range(kh):
                        for k in range(kw):
                            gxp[tap_slice(i, j, k)] += g * kd[:, i, j, k][:, None, None, None]
            else:
                gf = np.ascontiguousarray(g.transpose(0, 2, 3, 4, 1)).reshape(-1, cout)
                gp = (gf @ kernel.data.reshape(cout, -1)).reshape(
                    bsz, ot, oh, ow, cin, kt, kh, kw
                ).transpose(0, 4, 1, 2, 3, 5, 6, 7)
                for i in range(kt):
                    for j in range(kh):
                        for k in range(kw):
                            gxp[tap_slice(i, j, k)] += gp[..., i, j, k]
            gx = gxp[:, :, pt : pt + in_sp[0], ph : ph + in_sp[1], pw : pw + in_sp[2]]
            x.accumulate_grad(gx if batched else gx[0])

    parents = [x, kernel] + ([bias] if bias is not None else [])
    if not batched:
        out_data = out_data[0]
    return make_op_output(out_data, tuple(parents), backward)


def max_pool3d(x: Tensor, kernel: tuple[int, int, int]) -> Tensor:
    """Non-overlapping max pooling (stride == kernel) over the last three axes."""
    kt, kh, kw = kernel
    *lead, t, h, w = x.shape
    if t % kt or h % kh or w % kw:
        raise ShapeError(f"max_pool3d kernel {kernel} does not divide spatial shape {(t, h, w)}")
    ot, oh, ow = t // kt, h // kh, w // kw
    nlead = len(lead)
    xr = x.data.reshape(*lead, ot, kt, oh, kh, ow, kw)
    order = tuple(range(nlead)) + (nlead, nlead + 2, nlead + 4, nlead + 1, nlead + 3, nlead + 5)
    xt = xr.transpose(order).reshape(*lead, ot, oh, ow, kt * kh * kw)
    idx = xt.argmax(axis=-1)
    out_data = np.take_along_axis(xt, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gt = np.zeros_like(xt)
        np.put_along_axis(gt, idx[..., None], g[..., None], axis=-1)
        gr = gt.reshape(*lead, ot, oh, ow, kt, kh, kw).transpose(tuple(np.argsort(order)))
        x.accumulate_grad(gr.reshape(x.shape))

    return make_op_output(out_data, (x,), backward)


_resize_matrix_cache: dict[tuple[int, int, str], np.ndarray] = {}


def linear_resize_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Dense 1-D interpolation operator for align-corners-false linear resizing."""
    key = (n_in, n_out, np.dtype(dtype).str)
    cached = _resize_matrix_cache.get(key)
    if cached is not None:
        return cached
    m = np.zeros((n_out, n_in), dtype=dtype)
    scale = n_in / n_out
    for o in range(n_out):
        src = (o + 0.5) * scale - 0.5
        src = min(max(src, 0.0), n_in - 1.0)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[o, i0] += 1.0 - frac
        m[o, i1] += frac
    _resize_matrix_cache[key] = m
    return m


def _apply_axis_matrix(arr: np.ndarray, m: np.ndarray, axis: int) -> np.ndarray:
    if m.shape[0] == m.shape[1]:
        # same-size align-corners-false resize is exactly the identity
        return arr
    moved = np.moveaxis(arr, axis, -1)
    out = moved @ m.T.astype(arr.dtype, copy=False)
    return np.moveaxis(out, -1, axis)


def trilinear_resize(x: Tensor, target: tuple[int, int, int]) -> Tensor:
    """Align-corners-false trilinear resampling of the last three axes.

    A linear operator, so the backward rule is its transpose.
    """
    if x.ndim < 3:
        raise ShapeError(f"trilinear_resize needs >=3 axes, got {x.shape}")
    if min(target) < 1:
        raise ConfigError(f"trilinear_resize target must be >=1, got {target}")
    in_sp = x.shape[-3:]
    mats = [linear_resize_matrix(n, t) for n, t in zip(in_sp, target)]
    out_data = x.data
    for off, m in enumerate(mats):
        out_data = _apply_axis_matrix(out_data, m, x.ndim - 3 + off)
    if out_data is x.data:
        out_data = x.data.copy()

    def backward(g):
        gx = g
        for off, m in enumerate(mats):
            gx = _apply_axis_matrix(gx, m.T, x.ndim - 3 + off)
        x.accumulate_grad(gx)

    return make_op_output(out_data, (x,), backward)


def resize_volume(data: np.ndarray, target: tuple[int, int, int]) -> np.ndarray:
    """Plain-numpy variant of :func:`trilinear_resize` for non-autodiff pipelines."""
    out = data
    for off, (n, t) in enumerate(zip(data.shape[-3:], target)):
        out = _apply_axis_matrix(out, linear_resize_matrix(n, t), data.ndim - 3 + off)
    return out


# ---------------------------------------------------------------------------
# channels-last token-grid variants
#
# Token matrices live as (..., T*H*W, D); these ops act on the (T, H, W) axes
# of the unflattened (..., T, H, W, D) view with D kept innermost, which is
# contiguous-friendly and needs no permutes. Each is numerically identical to
# the channel-first op it mirrors (asserted in the test suite).
# ---------------------------------------------------------------------------


def _cl_tap(i, j, k, st, sh, sw, ot, oh, ow):
    return (
        Ellipsis,
        slice(i, i + st * ot, st),
        slice(j, j + sh * oh, sh),
        slice(k, k + sw * ow, sw),
        slice(None),
    )


def depthwise_pool_cl(x: Tensor, weight: Tensor, stride, padding) -> Tensor:
    """Depthwise 3-D conv over the (T, H, W) axes of a channels-last volume.

    ``x`` is (..., T, H, W, D); ``weight`` is the depthwise kernel
    (D, 1, kT, kH, kW) shared with :func:`conv3d`'s layout.
    """
    d = x.shape[-1]
    cout, ck, kt, kh, kw = weight.shape
    if cout != d or ck != 1:
        raise ShapeError(f"depthwise weight {weight.shape} does not match channels {d}")
    st, sh, sw = stride
    pt, ph, pw = padding
    t, h, w = x.shape[-4:-1]
    ot = conv_output_extent(t, kt, st, pt)
    oh = conv_output_extent(h, kh, sh, ph)
    ow = conv_output_extent(w, kw, sw, pw)
    if min(ot, oh, ow) < 1:
        raise ConfigError(f"pooling of grid {(t, h, w)} by stride {stride} is empty")
    lead = x.shape[:-4]
    xp = np.zeros(lead + (t + 2 * pt, h + 2 * ph, w + 2 * pw, d), dtype=x.dtype)
    xp[(Ellipsis, slice(pt, pt + t), slice(ph, ph + h), slice(pw, pw + w), slice(None))] = x.data
    kd = weight.data[:, 0]  # (D, kT, kH, kW)
    out_data = np.zeros(lead + (ot, oh, ow, d), dtype=x.dtype)
    for i in range(kt):
        for j in range(kh):
            for k in range(kw):
                out_data += xp[_cl_tap(i, j, k, st, sh, sw, ot, oh, ow)] * kd[:, i, j, k]

    def backward(g):
        if weight.requires_grad:
            gk = np.empty_like(weight.data)
            axes = tuple(range(g.ndim - 1))
            for i in range(kt):
                for j in range(kh):
                    for k in range(kw):
                        gk[:, 0, i, j, k] = (
                            xp[_cl_tap(i, j, k, st, sh, sw, ot, oh, ow)] * g
                        ).sum(axis=axes)
            weight.accumulate_grad(gk)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kt):
                for j in range(kh):
                    for k in range(kw):
                        gxp[_cl_tap(i, j, k, st, sh, sw, ot, oh, ow)] += g * kd[:, i, j, k]
            x.accumulate_grad(
                gxp[(Ellipsis, slice(pt, pt + t), slice(ph, ph + h), slice(pw, pw + w), slice(None))]
            )

    return make_op_output(out_data, (x, weight), backward)


def max_pool_cl(x: Tensor, kernel) -> Tensor:
    """Non-overlapping max pool over the (T, H, W) axes of (..., T, H, W, D)."""
    kt, kh, kw = kernel
    t, h, w, d = x.shape[-4:]
    if t % kt or h % kh or w % kw:
        raise ShapeError(f"max_pool_cl kernel {kernel} does not divide grid {(t, h, w)}")
    lead = x.shape[:-4]
    nl = len(lead)
    ot, oh, ow = t // kt, h // kh, w // kw
    xr = x.data.reshape(lead + (ot, kt, oh, kh, ow, kw, d))
    order = tuple(range(nl)) + (nl, nl + 2, nl + 4, nl + 6, nl + 1, nl + 3, nl + 5)
    xt = xr.transpose(order).reshape(lead + (ot, oh, ow, d, kt * kh * kw))
    idx = xt.argmax(axis=-1)
    out_data = np.take_along_axis(xt, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gt = np.zeros_like(xt)
        np.put_along_axis(gt, idx[..., None], g[..., None], axis=-1)
        gr = gt.reshape(lead + (ot, oh, ow, d, kt, kh, kw)).transpose(tuple(np.argsort(order)))
        x.accumulate_grad(gr.reshape(x.shape))

    return make_op_output(out_data, (x,), backward)


def resize_cl(x: Tensor, target) -> Tensor:
    """Trilinear resize over the (T, H, W) axes of (..., T, H, W, D)."""
    if min(target) < 1:
        raise ConfigError(f"resize target must be >=1, got {target}")
    in_sp = x.shape[-4:-1]
    mats = [linear_resize_matrix(n, t) for n, t in zip(in_sp, target)]
    out_data = x.data
    for off, m in enumerate(mats):
        out_data = _apply_axis_matrix(out_data, m, x.ndim - 4 + off)
    if out_data is x.data:
        out_data = x.data.copy()

    def backward(g):
        gx = g
        for off, m in enumerate(mats):
            gx = _apply_axis_matrix(gx, m.T, x.ndim - 4 + off)
        x.accumulate_grad(gx)

    return make_op_output(out_data, (x,), backward)
