"""Named gradient checks for the CLI: every primitive, the correlation block,
and a miniature end-to-end network, all in float64."""

from __future__ import annotations

import numpy as np

from . import ops
from .attention import GlobalLocalBlock
from .config import tiny_config
from .embedding import TokenField
from .gradcheck import GradCheckReport, SuiteReport, grad_check
from .network import build_model
from .objectives import kl_loss
from .tensor import Tensor


def _leaf(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


def _primitive_checks(rng):
    def sq(t):
        return ops.tsum(ops.mul(t, t))

    a, b = _leaf(rng, 3, 4), _leaf(rng, 3, 4)
    bias = _leaf(rng, 4)
    m1, m2 = _leaf(rng, 3, 4), _leaf(rng, 4, 2)
    lx, lw, lb = _leaf(rng, 2, 5), _leaf(rng, 5, 3), _leaf(rng, 3)
    ex = _leaf(rng, 6)
    lg = Tensor(np.abs(rng.normal(size=6)) + 0.5, requires_grad=True)
    ge = _leaf(rng, 7)
    sm = _leaf(rng, 3, 5)
    ln_x, ln_g, ln_b = _leaf(rng, 3, 6), _leaf(rng, 6), _leaf(rng, 6)
    cv_x, cv_k, cv_b = _leaf(rng, 2, 3, 4, 4), _leaf(rng, 3, 2, 3, 3, 3), _leaf(rng, 3)
    dw_x, dw_k = _leaf(rng, 3, 2, 4, 4), _leaf(rng, 3, 1, 3, 3, 3)
    mp = _leaf(rng, 2, 2, 4, 4)
    tr = _leaf(rng, 2, 2, 4, 4)
    pc_x, pc_k = _leaf(rng, 2, 2, 4, 4, 3), _leaf(rng, 3, 1, 3, 3, 3)
    mc = _leaf(rng, 2, 2, 4, 4, 3)
    rc = _leaf(rng, 2, 2, 4, 4, 3)
    cc_a, cc_b = _leaf(rng, 2, 3), _leaf(rng, 2, 2)
    em = _leaf(rng, 4, 3)
    nr = _leaf(rng, 4, 3)
    rs = _leaf(rng, 3, 4)
    me = _leaf(rng, 3, 4)
    xp = _leaf(rng, 1, 4)

    return {
        "add": (lambda: sq(ops.add(a, ops.add(b, bias))), [a, b, bias]),
        "mul": (lambda: ops.tsum(ops.mul(a, b)), [a, b]),
        "matmul": (lambda: sq(ops.matmul(m1, m2)), [m1, m2]),
        "linear": (lambda: sq(ops.linear(lx, lw, lb)), [lx, lw, lb]),
        "exp": (lambda: ops.tsum(ops.texp(ex)), [ex]),
        "log": (lambda: ops.tsum(ops.tlog(lg)), [lg]),
        "gelu": (lambda: sq(ops.gelu(ge)), [ge]),
        "softmax_t": (lambda: sq(ops.softmax_t(sm, axis=-1, tau=2.0)), [sm]),
        "layernorm": (lambda: sq(ops.layernorm(ln_x, ln_g, ln_b)), [ln_x, ln_g, ln_b]),
        "conv3d": (lambda: sq(ops.conv3d(cv_x, cv_k, (1, 2, 2), (1, 1, 1), bias=cv_b)), [cv_x, cv_k, cv_b]),
        "conv3d_depthwise": (
            lambda: sq(ops.conv3d(dw_x, dw_k, (1, 2, 2), (1, 1, 1), groups=3)),
            [dw_x, dw_k],
        ),
        "max_pool3d": (lambda: sq(ops.max_pool3d(mp, (1, 2, 2))), [mp]),
        "trilinear_resize": (lambda: sq(ops.trilinear_resize(tr, (3, 6, 3))), [tr]),
        "depthwise_pool_cl": (
            lambda: sq(ops.depthwise_pool_cl(pc_x, pc_k, (1, 2, 2), (1, 1, 1))),
            [pc_x, pc_k],
        ),
        "max_pool_cl": (lambda: sq(ops.max_pool_cl(mc, (1, 2, 2))), [mc]),
        "resize_cl": (lambda: sq(ops.resize_cl(rc, (3, 6, 3))), [rc]),
        "concat": (lambda: sq(ops.gelu(ops.concat([cc_a, cc_b], axis=1))), [cc_a, cc_b]),
        "embedding": (lambda: sq(ops.embedding(em, np.array([0, 2, 2, 1]))), [em]),
        "narrow": (lambda: sq(ops.mul(ops.narrow(nr, 0, 1, 3), 2.0)), [nr]),
        "reshape_permute": (lambda: sq(ops.permute(ops.reshape(rs, (4, 3)), (1, 0))), [rs]),
        "sum_mean": (lambda: sq(ops.mul(ops.tsum(me, axis=1), ops.tmean(me, axis=1))), [me]),
        "expand": (lambda: sq(ops.gelu(ops.expand(xp, (3, 2, 4)))), [xp]),
    }


def _glc_block_check(rng):
    block = GlobalLocalBlock(16, 8, 64)
    block.init_params(11)
    block.to_dtype(np.float64)
    x = Tensor(rng.normal(size=(1 + 16, 16)), requires_grad=True)

    def loss():
        out = block(TokenField(x, (4, 2, 2)))
        return ops.tsum(ops.mul(out.x, out.x))

    return loss, [x] + [p for _, p in block.named_parameters()]


def _network_tiny_check(rng):
    cfg = tiny_config(dtype="float64")
    model = build_model(cfg, "mvit+global+glc", seed=13, all_random=True)
    clip = Tensor(rng.random((3, 4, 8, 8)), requires_grad=True)
    labels = rng.random((4, 2, 2))
    labels /= labels.sum(axis=(-1, -2), keepdims=True)

    def loss():
        return kl_loss(labels, model.forward_gaze(clip))

    return loss, [clip] + [p for _, p in model.named_parameters()]


def available_checks() -> list[str]:
    rng = np.random.default_rng(0)
    return list(_primitive_checks(rng).keys()) + ["glc_block", "network_tiny"]


def run_suite(names=None, h: float = 1e-5, tol: float = 1e-4, seed: int = 0) -> SuiteReport:
    """Run the named checks (all by default) and collect one report per check."""
    rng = np.random.default_rng([seed, 0xC4EC])
    checks = dict(_primitive_checks(rng))
    report = SuiteReport()
    wanted = list(names) if names else available_checks()
    for name in wanted:
        if name == "glc_block":
            fn, wrt = _glc_block_check(rng)
        elif name == "network_tiny":
            fn, wrt = _network_tiny_check(rng)
        elif name in checks:
            fn, wrt = checks[name]
        else:
            raise KeyError(f"unknown gradient check {name!r}; known: {available_checks()}")
        report.reports.append(grad_check(fn, wrt, h=h, tol=tol, name=name))
    return report
