"""Backward-pass semantics and finite-difference checks for every primitive."""

import numpy as np
import pytest

from glcgaze import ops
from glcgaze.errors import UsageError
from glcgaze.gradcheck import grad_check
from glcgaze.tensor import Tensor, no_grad

SEEDS = range(20)


def leaf(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


class TestBackwardSemantics:
    def test_sum_grad_is_ones(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        ops.tsum(x).backward()
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_matmul_grad_matches_analytic(self):
        rng = np.random.default_rng(3)
        a = leaf(rng, 4, 5)
        b = leaf(rng, 5, 3)
        ops.tsum(ops.matmul(a, b)).backward()
        ones = np.ones((4, 3))
        np.testing.assert_allclose(a.grad, ones @ b.data.T, atol=1e-12)
        np.testing.assert_allclose(b.grad, a.data.T @ ones, atol=1e-12)

    def test_disconnected_tensor_has_zero_grad(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = Tensor(np.ones(3), requires_grad=True)
        ops.tsum(ops.mul(x, 2.0)).backward()
        assert y.grad is None  # reads as exactly zero
        np.testing.assert_array_equal(x.grad, np.full(3, 2.0))

    def test_accumulation_over_multiple_paths(self):
        x = Tensor(np.array([3.0]), requires_grad=True)
        y = ops.add(ops.mul(x, 2.0), ops.mul(x, 5.0))
        ops.tsum(y).backward()
        np.testing.assert_allclose(x.grad, [7.0])

    def test_same_tensor_used_twice(self):
        rng = np.random.default_rng(4)
        a = leaf(rng, 3, 3)
        ops.tsum(ops.matmul(a, a)).backward()
        ones = np.ones((3, 3))
        np.testing.assert_allclose(a.grad, ones @ a.data.T + a.data.T @ ones, atol=1e-12)

    def test_non_scalar_backward_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(UsageError):
            ops.mul(x, 2.0).backward()

    def test_no_grad_suppresses_tape(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = ops.mul(x, 2.0)
        assert not y.requires_grad and y._backward is None

    def test_backward_is_deterministic(self):
        def run():
            rng = np.random.default_rng(99)
            a = leaf(rng, 6, 6)
            b = leaf(rng, 6, 6)
            loss = ops.tsum(ops.gelu(ops.matmul(a, b)))
            loss.backward()
            return a.grad.copy(), b.grad.copy(), float(loss.data)

        g1a, g1b, l1 = run()
        g2a, g2b, l2 = run()
        assert l1 == l2
        np.testing.assert_array_equal(g1a, g2a)
        np.testing.assert_array_equal(g1b, g2b)


class TestGradCheckHarness:
    def test_identity_function(self):
        x = Tensor(np.random.default_rng(0).normal(size=5))
        rep = grad_check(lambda: ops.tsum(x), x)
        assert rep.passed and rep.max_rel_err < 1e-9

    def test_softmax_sum_of_squares(self):
        x = Tensor(np.random.default_rng(1).normal(size=8))

        def f():
            s = ops.softmax_t(x, axis=-1, tau=1.5)
            return ops.tsum(ops.mul(s, s))

        rep = grad_check(f, x, name="softmax_sq")
        assert rep.passed, rep.summary()

    def test_broken_backward_detected(self):
        x = Tensor(np.array([1.0, 2.0]))

        def bad_square():
            out = ops.mul(x, x)
            orig = out._backward

            def wrong(g):
                orig(g * 0.5)  # deliberately wrong scale

            out._backward = wrong
            return ops.tsum(out)

        rep = grad_check(bad_square, x)
        assert not rep.passed

    def test_float32_inputs_rejected(self):
        x = Tensor(np.zeros(3, dtype=np.float32))
        with pytest.raises(UsageError):
            grad_check(lambda: ops.tsum(x), x)

    def test_report_contains_worst_element(self):
        x = Tensor(np.array([0.1, 0.2]))
        rep = grad_check(lambda: ops.tsum(ops.texp(x)), x)
        assert rep.n_elements == 2
        assert rep.passed
        assert "pass" in rep.summary()


def primitive_cases(rng):
    """(name, closure, leaves) for every registered backward rule, smallest useful sizes."""

    def case(name, builder, *leaves):
        return (name, (lambda: builder(*leaves)), list(leaves))

    x44 = leaf(rng, 2, 3, 4, 4)
    return [
        case("add", lambda a, b: ops.tsum(ops.add(a, b)), leaf(rng, 3, 4), leaf(rng, 3, 4)),
        case("add_broadcast", lambda a, b: ops.tsum(ops.add(a, b)), leaf(rng, 3, 4), leaf(rng, 4)),
        case("sub", lambda a, b: ops.tsum(ops.sub(a, b)), leaf(rng, 3, 4), leaf(rng, 3, 4)),
        case("mul", lambda a, b: ops.tsum(ops.mul(a, b)), leaf(rng, 3, 4), leaf(rng, 3, 4)),
        case("exp", lambda a: ops.tsum(ops.texp(a)), leaf(rng, 5)),
        case("log", lambda a: ops.tsum(ops.tlog(a)), Tensor(np.abs(rng.normal(size=5)) + 0.5, requires_grad=True)),
        case("gelu", lambda a: ops.tsum(ops.gelu(a)), leaf(rng, 7)),
        case("expand", lambda a: ops.tsum(ops.gelu(ops.expand(a, (3, 2, 4)))), leaf(rng, 1, 4)),
        case("matmul", lambda a, b: ops.tsum(ops.matmul(a, b)), leaf(rng, 3, 4), leaf(rng, 4, 2)),
        case("matmul_batched", lambda a, b: ops.tsum(ops.matmul(a, b)), leaf(rng, 2, 3, 4), leaf(rng, 2, 4, 2)),
        case("linear", lambda x, w, b: ops.tsum(ops.linear(x, w, b)), leaf(rng, 2, 3), leaf(rng, 3, 4), leaf(rng, 4)),
        case("sum_axis", lambda a: ops.tsum(ops.mul(ops.tsum(a, axis=1), ops.tsum(a, axis=1))), leaf(rng, 3, 4)),
        case("mean", lambda a: ops.tsum(ops.mul(ops.tmean(a, axis=0), 3.0)), leaf(rng, 3, 4)),
        case("reshape", lambda a: ops.tsum(ops.mul(ops.reshape(a, (12,)), ops.reshape(a, (12,)))), leaf(rng, 3, 4)),
        case("permute", lambda a: ops.tsum(ops.mul(ops.permute(a, (1, 0)), 2.0)), leaf(rng, 3, 4)),
        case("narrow", lambda a: ops.tsum(ops.mul(ops.narrow(a, 0, 1, 3), ops.narrow(a, 0, 0, 2))), leaf(rng, 4, 3)),
        case("concat", lambda a, b: ops.tsum(ops.gelu(ops.concat([a, b], axis=1))), leaf(rng, 2, 3), leaf(rng, 2, 2)),
        case("embedding", lambda t: ops.tsum(ops.mul(ops.embedding(t, np.array([0, 2, 2, 1])), 1.5)), leaf(rng, 3, 4)),
        case("softmax_t", lambda a: ops.tsum(ops.mul(ops.softmax_t(a, axis=-1, tau=2.0), ops.softmax_t(a, axis=-1, tau=2.0))), leaf(rng, 3, 5)),
        case("layernorm", lambda x, g, b: ops.tsum(ops.mul(ops.layernorm(x, g, b), ops.layernorm(x, g, b))), leaf(rng, 3, 6), leaf(rng, 6), leaf(rng, 6)),
        case("conv3d", lambda x, k, b: ops.tsum(ops.gelu(ops.conv3d(x, k, (1, 2, 2), (1, 1, 1), bias=b))), leaf(rng, 2, 3, 4, 4), leaf(rng, 3, 2, 3, 3, 3), leaf(rng, 3)),
        case("conv3d_depthwise", lambda x, k: ops.tsum(ops.gelu(ops.conv3d(x, k, (1, 2, 2), (1, 1, 1), groups=3))), leaf(rng, 3, 2, 4, 4), leaf(rng, 3, 1, 3, 3, 3)),
        case("conv3d_batched", lambda x, k: ops.tsum(ops.gelu(ops.conv3d(x, k, (1, 1, 1), (0, 1, 1)))), leaf(rng, 2, 2, 2, 3, 3), leaf(rng, 2, 2, 1, 3, 3)),
        case("max_pool3d", lambda x: ops.tsum(ops.mul(ops.max_pool3d(x, (1, 2, 2)), 2.0)), x44),
        case("trilinear_resize", lambda x: ops.tsum(ops.gelu(ops.trilinear_resize(x, (3, 6, 3)))), leaf(rng, 2, 2, 4, 4)),
        case(
            "depthwise_pool_cl",
            lambda x, k: ops.tsum(ops.gelu(ops.depthwise_pool_cl(x, k, (1, 2, 2), (1, 1, 1)))),
            leaf(rng, 2, 2, 4, 4, 3),
            leaf(rng, 3, 1, 3, 3, 3),
        ),
        case("max_pool_cl", lambda x: ops.tsum(ops.mul(ops.max_pool_cl(x, (1, 2, 2)), 2.0)), leaf(rng, 2, 2, 4, 4, 3)),
        case("resize_cl", lambda x: ops.tsum(ops.gelu(ops.resize_cl(x, (3, 6, 3)))), leaf(rng, 2, 2, 4, 4, 3)),
    ]


@pytest.mark.parametrize("seed", SEEDS)
def test_every_backward_rule_passes_grad_check(seed):
    """Spec invariant: each backward rule within 1e-4 of central differences, 20 seeds."""
    rng = np.random.default_rng(1000 + seed)
    for name, fn, leaves in primitive_cases(rng):
        rep = grad_check(fn, leaves, h=1e-5, tol=1e-4, name=name)
        assert rep.passed, rep.summary()
