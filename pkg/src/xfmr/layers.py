"""Parameter containers and the standard layers the blocks are built from."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

__all__ = ["Module", "Linear", "LayerNorm", "Mlp", "trunc_normal", "drop_path_mask"]


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float32) -> np.ndarray:
    """Normal(0, std) samples redrawn until they land within +/- 2 std."""
    out = rng.standard_normal(shape) * std
    bound = 2.0 * std
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum())) * std
        bad = np.abs(out) > bound
    return out.astype(dtype)


def _walk(name: str, value):
    if isinstance(value, Tensor):
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(f"{name}.{i}", item)


class Module:
    """Tiny parameter registry: any Tensor attribute is a parameter, any
    Module (or nested list of Modules) is a child."""

    def named_parameters(self, prefix: str = ""):
        for key, value in vars(self).items():
            yield from _walk(f"{prefix}{key}" if prefix else key, value)

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def requires_grad_(self, flag: bool = True):
        for p in self.parameters():
            p.requires_grad = flag
        return self


class Linear(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, dtype=np.float32):
        self.w = Tensor(trunc_normal(rng, (d_in, d_out), dtype=dtype), requires_grad=True)
        self.b = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.matmul(x, self.w) + self.b


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float32, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class Mlp(Module):
    """Token-wise two-layer feed-forward with GELU."""

    def __init__(self, rng, dim: int, hidden: int, dtype=np.float32):
        self.fc1 = Linear(rng, dim, hidden, dtype)
        self.fc2 = Linear(rng, hidden, dim, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


def drop_path_mask(rng: np.random.Generator, batch: int, rate: float, rank: int, dtype) -> Tensor | None:
    """Per-sample stochastic-depth keep mask scaled by 1/keep, or None if off.

    The mask broadcasts over all non-batch axes of a rank-``rank`` tensor.
    """
    if rate <= 0.0:
        return None
    keep = 1.0 - rate
    mask = (rng.random(batch) < keep).astype(dtype) / dtype(keep)
    return Tensor(mask.reshape((batch,) + (1,) * (rank - 1)))
