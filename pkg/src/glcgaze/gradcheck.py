"""Finite-difference verification of backward rules.

The harness compares the tape's analytic gradient against central differences
in float64. Per-element relative error is ``|a - n| / max(1, |a|, |n|)``; a
check passes iff every element is within tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError
from .tensor import Tensor, no_grad


@dataclass
class GradCheckReport:
    name: str
    passed: bool
    max_rel_err: float
    # (input index, flat element index, analytic, numeric) of the worst element
    worst: tuple[int, int, float, float] = (0, 0, 0.0, 0.0)
    n_elements: int = 0

    def summary(self) -> str:
        state = "pass" if self.passed else "FAIL"
        i, j, a, n = self.worst
        return (
            f"{self.name}: {state}  max_rel_err={self.max_rel_err:.3e} "
            f"(input {i}, element {j}: analytic={a:.6e}, numeric={n:.6e})"
        )


def grad_check(f, wrt, h: float = 1e-5, tol: float = 1e-4, name: str = "") -> GradCheckReport:
    """Check gradients of ``f`` with respect to the tensors in ``wrt``.

    ``f`` takes no arguments and recomputes a scalar loss from the very tensor
    objects listed in ``wrt`` (plain inputs or module parameters alike), so
    perturbing their ``data`` in place changes the loss. All checked tensors
    must be float64.
    """
    if isinstance(wrt, Tensor):
        wrt = [wrt]
    for t in wrt:
        if t.dtype != np.float64:
            raise UsageError("grad_check requires float64 tensors")
        t.requires_grad = True
        t.grad = None

    out = f()
    if out.size != 1:
        raise UsageError(f"grad_check target must be scalar, got shape {out.shape}")
    out.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in wrt]
    for t in wrt:
        t.grad = None

    max_err = 0.0
    worst = (0, 0, 0.0, 0.0)
    total = 0
    with no_grad():
        for ti, t in enumerate(wrt):
            flat = t.data.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + h
                up = float(f().data)
                flat[j] = orig - h
                down = float(f().data)
                flat[j] = orig
                numeric = (up - down) / (2 * h)
                a = float(analytic[ti].reshape(-1)[j])
                err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
                total += 1
                if err > max_err:
                    max_err = err
                    worst = (ti, j, a, numeric)
    return GradCheckReport(name=name, passed=max_err <= tol, max_rel_err=max_err, worst=worst, n_elements=total)


@dataclass
class SuiteReport:
    reports: list[GradCheckReport] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)

    def lines(self):
        return [r.summary() for r in self.reports]
