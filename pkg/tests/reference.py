"""Naive reference implementations used as independent oracles.

Everything here is written with explicit Python loops or direct formula
evaluation, deliberately sharing no code with the package's vectorized ops.
"""

import numpy as np


def matmul_loops(a, b):
    m, k = a.shape
    k2, p = b.shape
    assert k == k2
    out = np.zeros((m, p), dtype=a.dtype)
    for i in range(m):
        for j in range(p):
            acc = 0.0
            for x in range(k):
                acc += a[i, x] * b[x, j]
            out[i, j] = acc
    return out


def conv3d_loops(x, kernel, stride, padding, bias=None, groups=1):
    cin, t, h, w = x.shape
    cout, ck, kt, kh, kw = kernel.shape
    st, sh, sw = stride
    pt, ph, pw = padding
    ot = (t + 2 * pt - kt) // st + 1
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (w + 2 * pw - kw) // sw + 1
    xp = np.zeros((cin, t + 2 * pt, h + 2 * ph, w + 2 * pw), dtype=x.dtype)
    xp[:, pt : pt + t, ph : ph + h, pw : pw + w] = x
    out = np.zeros((cout, ot, oh, ow), dtype=x.dtype)
    cin_per_group = cin // groups
    cout_per_group = cout // groups
    for o in range(cout):
        g = o // cout_per_group
        for it in range(ot):
            for ih in range(oh):
                for iw in range(ow):
                    acc = 0.0
                    for c in range(ck):
                        for a in range(kt):
                            for b in range(kh):
                                for d in range(kw):
                                    acc += (
                                        xp[g * cin_per_group + c, it * st + a, ih * sh + b, iw * sw + d]
                                        * kernel[o, c, a, b, d]
                                    )
                    out[o, it, ih, iw] = acc
        if bias is not None:
            out[o] += bias[o]
    return out


def maxpool3d_loops(x, kernel):
    kt, kh, kw = kernel
    c, t, h, w = x.shape
    out = np.zeros((c, t // kt, h // kh, w // kw), dtype=x.dtype)
    for ci in range(c):
        for it in range(t // kt):
            for ih in range(h // kh):
                for iw in range(w // kw):
                    out[ci, it, ih, iw] = x[
                        ci, it * kt : (it + 1) * kt, ih * kh : (ih + 1) * kh, iw * kw : (iw + 1) * kw
                    ].max()
    return out


def softmax_ref(x, axis=-1, tau=1.0):
    z = np.asarray(x, dtype=np.float64) / tau
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def layernorm_ref(x, gamma, beta, eps=1e-6):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gamma + beta


def trilinear_sample_1d(arr, src):
    src = min(max(src, 0.0), len(arr) - 1.0)
    i0 = int(np.floor(src))
    i1 = min(i0 + 1, len(arr) - 1)
    f = src - i0
    return arr[i0] * (1 - f) + arr[i1] * f


def trilinear_loops(x, target):
    """Direct align-corners-false evaluation, one output sample at a time."""
    c, t, h, w = x.shape
    t2, h2, w2 = target
    out = np.zeros((c, t2, h2, w2), dtype=np.float64)

    def src_index(o, n_out, n_in):
        s = (o + 0.5) * (n_in / n_out) - 0.5
        return min(max(s, 0.0), n_in - 1.0)

    for ci in range(c):
        for ot in range(t2):
            st = src_index(ot, t2, t)
            t0, t1 = int(np.floor(st)), min(int(np.floor(st)) + 1, t - 1)
            ft = st - t0
            for oh in range(h2):
                sh = src_index(oh, h2, h)
                h0, h1 = int(np.floor(sh)), min(int(np.floor(sh)) + 1, h - 1)
                fh = sh - h0
                for ow in range(w2):
                    sw = src_index(ow, w2, w)
                    w0, w1 = int(np.floor(sw)), min(int(np.floor(sw)) + 1, w - 1)
                    fw = sw - w0
                    acc = 0.0
                    for (ti, wt) in ((t0, 1 - ft), (t1, ft)):
                        for (hi, wh) in ((h0, 1 - fh), (h1, fh)):
                            for (wi, ww) in ((w0, 1 - fw), (w1, fw)):
                                acc += wt * wh * ww * x[ci, ti, hi, wi]
                    out[ci, ot, oh, ow] = acc
    return out


def dense_attention_ref(q, k, v, scale):
    """Full-materialization softmax attention: softmax(q k^T * scale) v."""
    logits = (np.asarray(q, dtype=np.float64) @ np.asarray(k, dtype=np.float64).T) * scale
    return softmax_ref(logits, axis=-1) @ np.asarray(v, dtype=np.float64)


def suppression_matrix_ref(n_tokens, lam):
    s = np.full((n_tokens, n_tokens), lam, dtype=np.float64)
    for i in range(n_tokens):
        s[i, i] = 0.0
        s[i, 0] = 0.0
    return s


def masked_attention_ref(q, k, v, lam):
    """Dense masked-softmax attention: softmax((q k^T - S) / sqrt(D)) v."""
    q = np.asarray(q, dtype=np.float64)
    n, d = q.shape
    logits = q @ np.asarray(k, dtype=np.float64).T
    logits = (logits - suppression_matrix_ref(n, lam)) / np.sqrt(d)
    return softmax_ref(logits, axis=-1) @ np.asarray(v, dtype=np.float64)


def gaussian_label_loops(gx, gy, h, w, kernel_size, sigma):
    """Truncated gaussian on a grid, renormalized; square window around the gaze."""
    radius = (kernel_size - 1) / 2
    out = np.zeros((h, w), dtype=np.float64)
    for i in range(h):
        for j in range(w):
            if abs(i - gy) <= radius and abs(j - gx) <= radius:
                out[i, j] = np.exp(-((i - gy) ** 2 + (j - gx) ** 2) / (2 * sigma**2))
    return out / out.sum()


def disk_pixels(gx, gy, radius, h, w):
    pts = set()
    for i in range(h):
        for j in range(w):
            if (j - gx) ** 2 + (i - gy) ** 2 <= radius**2:
                pts.add((i, j))
    return pts
