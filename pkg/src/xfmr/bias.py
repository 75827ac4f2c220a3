"""Attention position-bias providers.

Four interchangeable kinds feed the additive bias matrix of grouped
attention: a dynamic MLP over relative offsets (optionally with residual
hidden blocks), a learned fixed-range relative-bias table, and an absolute
per-position embedding baseline (which contributes no attention bias and is
added once after the first stage instead).

The dynamic provider never goes out of range: its bias table is rebuilt for
whatever slot extent a layout asks for, at the cost of one tiny MLP forward
per possible offset pair, which is O(G^2) instead of the O(G^4) cost of
evaluating every slot pair directly.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .attention import GroupLayout
from .layers import LayerNorm, Linear, Module, trunc_normal
from .tensor import Tensor

__all__ = [
    "BiasRangeError",
    "BIAS_KINDS",
    "DynamicPositionBias",
    "RelativePositionBias",
    "AbsolutePositionEmbedding",
    "bake_to_table",
    "pair_offset_index",
]

BIAS_KINDS = ("ape", "rpb", "dpb", "dpb-res")


class BiasRangeError(RuntimeError):
    """A fixed bias table was asked for an offset outside its trained range."""


def pair_offset_index(slots_h: int, slots_w: int, table_h: int, table_w: int) -> np.ndarray:
    """Flat lookup indices for every ordered slot pair of a slot grid.

    Slot s has coordinates (s // slots_w, s % slots_w); pair (i, j) looks up
    row offset xi-xj and column offset yi-yj, shifted so the most negative
    offset of a (table_h, table_w) table maps to index 0.
    """
    n = slots_h * slots_w
    coords_x = np.arange(n) // slots_w
    coords_y = np.arange(n) % slots_w
    dx = coords_x[:, None] - coords_x[None, :]
    dy = coords_y[:, None] - coords_y[None, :]
    if abs(dx).max(initial=0) > table_h // 2 or abs(dy).max(initial=0) > table_w // 2:
        raise BiasRangeError(
            f"slot grid {slots_h}x{slots_w} needs offsets up to "
            f"(+/-{slots_h - 1}, +/-{slots_w - 1}) but the bias table only covers "
            f"(+/-{table_h // 2}, +/-{table_w // 2}); "
            f"retrain or use the dynamic position bias"
        )
    return (dx + table_h // 2) * table_w + (dy + table_w // 2)


class DynamicPositionBias(Module):
    """MLP mapping a relative offset (dx, dy) to one bias value per head."""

    kind = "dpb"

    def __init__(self, rng, dim: int, heads: int, residual: bool = False, dtype=np.float32):
        if dim % 4:
            raise ValueError("embedding dim must be divisible by 4")
        hidden = dim // 4
        self.heads = heads
        self.residual = residual
        self.dtype = np.dtype(dtype)
        self.fc_in = Linear(rng, 2, hidden, dtype)
        self.norm1 = LayerNorm(hidden, dtype)
        self.fc1 = Linear(rng, hidden, hidden, dtype)
        self.norm2 = LayerNorm(hidden, dtype)
        self.fc2 = Linear(rng, hidden, hidden, dtype)
        self.norm3 = LayerNorm(hidden, dtype)
        self.fc_out = Linear(rng, hidden, heads, dtype)
        self.eval_count = 0  # forward passes through the MLP, for cost audits

    def offset_bias(self, dx: float, dy: float) -> Tensor:
        """Bias vector (1, heads) for one raw signed offset pair."""
        self.eval_count += 1
        x = self.fc_in(Tensor(np.array([[dx, dy]], dtype=self.dtype)))
        y = self.fc1(T.relu(self.norm1(x)))
        x = x + y if self.residual else y
        y = self.fc2(T.relu(self.norm2(x)))
        x = x + y if self.residual else y
        return self.fc_out(T.relu(self.norm3(x)))

    def table(self, slots_h: int, slots_w: int) -> Tensor:
        """Bias table (2*slots_h-1, 2*slots_w-1, heads) covering every offset
        a slot grid of that extent can produce; one MLP pass per entry."""
        rows = [
            self.offset_bias(dx, dy)
            for dx in range(1 - slots_h, slots_h)
            for dy in range(1 - slots_w, slots_w)
        ]
        return T.concat(rows, axis=0).reshape(2 * slots_h - 1, 2 * slots_w - 1, self.heads)

    def bias_matrix(self, layout: GroupLayout) -> Tensor:
        sh, sw = layout.slots
        table = self.table(sh, sw)
        idx = pair_offset_index(sh, sw, 2 * sh - 1, 2 * sw - 1)
        return T.index_rows(table.reshape((2 * sh - 1) * (2 * sw - 1), self.heads), idx)


class RelativePositionBias(Module):
    """Learned bias table over a fixed offset range; errors beyond it."""

    kind = "rpb"

    def __init__(self, rng, heads: int, max_slots_h: int, max_slots_w: int, dtype=np.float32,
                 table: np.ndarray | None = None):
        self.heads = heads
        shape = (2 * max_slots_h - 1, 2 * max_slots_w - 1, heads)
        if table is None:
            table = trunc_normal(rng, shape, dtype=dtype)
        elif table.shape != shape:
            raise ValueError(f"table shape {table.shape} does not match {shape}")
        self.table = Tensor(np.array(table), requires_grad=True)

    def bias_matrix(self, layout: GroupLayout) -> Tensor:
        sh, sw = layout.slots
        th, tw, _ = self.table.shape
        idx = pair_offset_index(sh, sw, th, tw)
        return T.index_rows(self.table.reshape(th * tw, self.heads), idx)


class AbsolutePositionEmbedding(Module):
    """Learnable per-position embedding added to the first stage's grid."""

    kind = "ape"

    def __init__(self, rng, grid: tuple[int, int], dim: int, dtype=np.float32):
        self.grid = grid
        self.embedding = Tensor(trunc_normal(rng, (*grid, dim), dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        h, w = x.shape[-3], x.shape[-2]
        if (h, w) != self.grid:
            raise BiasRangeError(
                f"absolute position embedding was trained for grid {self.grid}, got {(h, w)}"
            )
        return x + self.embedding


def bake_to_table(dpb: DynamicPositionBias, slots_h: int, slots_w: int) -> RelativePositionBias:
    """Freeze a dynamic provider into a fixed table for the given slot extent.

    The frozen table holds exactly the values the dynamic path would compute,
    so attention outputs are bit-identical at the same precision; the table
    then inherits the fixed-range restriction.
    """
    with T.no_grad():
        table = dpb.table(slots_h, slots_w).data
    return RelativePositionBias(
        None, dpb.heads, slots_h, slots_w, dtype=table.dtype, table=table
    )
