"""Parameter containers and the handful of layer types the model needs."""

from __future__ import annotations

import zlib

import numpy as np

from . import ops
from .errors import UsageError
from .tensor import Tensor


def derive_rng(seed: int, *tags) -> np.random.Generator:
    """Deterministic per-purpose RNG stream: the stream depends only on (seed, tags)."""
    keys = [int(seed) & 0xFFFFFFFF] + [zlib.crc32(str(t).encode()) for t in tags]
    return np.random.default_rng(keys)


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, bound: float = 2.0) -> np.ndarray:
    """Normal draws, redrawing anything beyond ``bound`` standard deviations."""
    x = rng.standard_normal(shape)
    while True:
        mask = np.abs(x) > bound
        n_bad = int(mask.sum())
        if n_bad == 0:
            break
        x[mask] = rng.standard_normal(n_bad)
    return x * std


_INITS = {
    "trunc_normal": lambda rng, shape: trunc_normal(rng, shape),
    "zeros": lambda rng, shape: np.zeros(shape),
    "ones": lambda rng, shape: np.ones(shape),
}


class Parameter(Tensor):
    __slots__ = ("init_kind",)

    def __init__(self, shape, init_kind: str = "trunc_normal", dtype=np.float32):
        if init_kind not in _INITS:
            raise UsageError(f"unknown init kind {init_kind!r}")
        super().__init__(np.zeros(shape), requires_grad=True, dtype=dtype)
        self.init_kind = init_kind


class Module:
    """Minimal parameter tree. Attribute assignment registers children in order."""

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self.__dict__.setdefault("_params", {})[name] = value
        elif isinstance(value, Module):
            self.__dict__.setdefault("_modules", {})[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = ""):
        """Yield (name, tensor) in declaration order; names are stable paths."""
        for name, p in self.__dict__.get("_params", {}).items():
            yield (prefix + name, p)
        for name, mod in self.__dict__.get("_modules", {}).items():
            yield from mod.named_parameters(prefix + name + ".")

    def parameter_count(self) -> int:
        return sum(p.size for _, p in self.named_parameters())

    def init_params(self, seed: int, all_random: bool = False) -> None:
        """Fill every parameter from its init kind.

        Values depend only on (seed, parameter name), so submodules shared
        between two model variants initialize identically. ``all_random``
        replaces zero/one inits with truncated-normal draws (used by tests
        that need a non-degenerate network).
        """
        for name, p in self.named_parameters():
            kind = p.init_kind
            if all_random:
                kind = "trunc_normal"
            rng = derive_rng(seed, "init", name)
            p.data = _INITS[kind](rng, p.shape).astype(p.dtype)
            p.grad = None

    def to_dtype(self, dtype) -> "Module":
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.grad = None


class ModuleList(Module):
    def __init__(self, mods=()):
        self._items = []
        for m in mods:
            self.append(m)

    def append(self, mod: Module) -> None:
        setattr(self, str(len(self._items)), mod)
        self._items.append(mod)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, bias: bool = True):
        self.w = Parameter((d_in, d_out))
        self.b = Parameter((d_out,), "zeros") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.w, self.b)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-6):
        self.gamma = Parameter((d,), "ones")
        self.beta = Parameter((d,), "zeros")
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layernorm(x, self.gamma, self.beta, self.eps)


class Conv3dLayer(Module):
    def __init__(self, c_in, c_out, kernel, stride, padding, bias=True, groups=1, init="trunc_normal"):
        ck = c_in // groups
        self.weight = Parameter((c_out, ck, *kernel), init)
        self.bias = Parameter((c_out,), "zeros") if bias else None
        self.stride = tuple(stride)
        self.padding = tuple(padding)
        self.groups = groups

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv3d(x, self.weight, self.stride, self.padding, self.bias, self.groups)


class Mlp(Module):
    """Two-layer perceptron with a gelu in between."""

    def __init__(self, d_in: int, hidden: int, d_out: int):
        self.fc1 = Linear(d_in, hidden)
        self.fc2 = Linear(hidden, d_out)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ops.gelu(self.fc1(x)))
