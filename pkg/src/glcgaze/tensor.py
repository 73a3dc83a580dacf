"""Dense tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array plus an optional gradient buffer. Operations in
:mod:`glcgaze.ops` record a backward closure and the (grad-requiring) parent
tensors on each result; ``backward()`` on a scalar loss walks that implicit
graph once in reverse topological order and accumulates gradients by summation
over all paths.

Gradients are only tracked while grad mode is enabled (see :class:`no_grad`)
and only through tensors with ``requires_grad=True``. A tensor that is not on
any path to the loss keeps ``grad is None``, which reads as an exact zero.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import UsageError

FLOAT_DTYPES = (np.float32, np.float64)

# When enabled, every op asserts its output is finite. Costs ~10-20% runtime.
_debug_checks = bool(int(os.environ.get("GLC_DEBUG", "0")))

_grad_enabled = True


def set_debug_checks(flag: bool) -> None:
    global _debug_checks
    _debug_checks = bool(flag)


def debug_checks_enabled() -> bool:
    return _debug_checks


class no_grad:
    """Context manager that disables graph recording inside its body."""

    def __enter__(self):
        global _grad_enabled
        self._saved = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._saved
        return False


def grad_enabled() -> bool:
    return _grad_enabled


def _coerce(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype in FLOAT_DTYPES:
        return arr
    return arr.astype(np.float64)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _coerce(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- bookkeeping -------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            g = np.asarray(g, dtype=self.data.dtype)
            self.grad = np.array(np.broadcast_to(g, self.data.shape))
        else:
            self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # -- autodiff ----------------------------------------------------------

    def backward(self) -> None:
        """Populate ``grad`` on every grad-requiring tensor reachable from a scalar loss."""
        if self.data.size != 1:
            raise UsageError(f"backward() requires a scalar loss, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.accumulate_grad(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar (implemented in ops.py, bound at import) -----------

    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    def sum(self, axis=None):
        from . import ops

        return ops.tsum(self, axis)

    def mean(self, axis=None):
        from . import ops

        return ops.tmean(self, axis)

    def reshape(self, *shape):
        from . import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def permute(self, *axes):
        from . import ops

        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.permute(self, axes)


def make_op_output(out_data: np.ndarray, parents, backward_fn) -> Tensor:
    """Wrap an op result, attaching the tape entry when grad tracking applies."""
    if _debug_checks and not np.all(np.isfinite(out_data)):
        raise FloatingPointError("non-finite values produced by a forward primitive")
    grad_parents = tuple(p for p in parents if isinstance(p, Tensor) and p.requires_grad)
    out = Tensor(out_data)
    if _grad_enabled and grad_parents:
        out.requires_grad = True
        out._parents = grad_parents
        out._backward = backward_fn
    return out
