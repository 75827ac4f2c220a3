"""Grouped self-attention over a 2-D embedding grid.

Two grouping rules share one implementation: short-distance groups tile the
grid into adjacent blocks, long-distance groups collect positions sampled at
a fixed interval per axis. Grouping is a pure reshape/permute rearrangement
on divisible grids; other sizes are zero-padded up to the next multiple and
the padded slots are masked out of the softmax with a -inf sentinel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import Linear, Module
from .tensor import Tensor

__all__ = [
    "GroupLayout",
    "build_layout",
    "group",
    "ungroup",
    "attend_tokens",
    "GroupedAttention",
    "PooledFullAttention",
    "lsda_forward",
]

SDA = "sda"
LDA = "lda"


@dataclass(frozen=True)
class GroupLayout:
    """Invertible map from grid positions to (group, slot) coordinates."""

    mode: str
    grid: tuple[int, int]
    size: int  # group extent for SDA, sampling interval for LDA
    padded_grid: tuple[int, int]
    groups: tuple[int, int]  # group-index grid
    slots: tuple[int, int]  # per-group slot grid
    mask: np.ndarray  # (n_groups, n_slots) True for real positions
    forward_group: np.ndarray  # (H, W) -> group id
    forward_slot: np.ndarray  # (H, W) -> slot id
    inverse_flat: np.ndarray  # (n_groups, n_slots) -> r * W + c, -1 for padding

    @property
    def n_groups(self) -> int:
        return self.groups[0] * self.groups[1]

    @property
    def n_slots(self) -> int:
        return self.slots[0] * self.slots[1]


def build_layout(mode: str, height: int, width: int, size: int) -> GroupLayout:
    """Compute the (group, slot) assignment for every grid position.

    Short-distance: position (r, c) lands in group (r//G, c//G), slot
    (r%G, c%G). Long-distance: group (r%I, c%I), slot (r//I, c//I), applied
    independently per axis so rectangular grids are allowed.
    """
    if height < 1 or width < 1 or size < 1:
        raise ValueError("grid extents and group size must be positive")
    if mode not in (SDA, LDA):
        raise ValueError(f"unknown grouping mode {mode!r}")
    hp = math.ceil(height / size) * size
    wp = math.ceil(width / size) * size
    rows = np.arange(hp)[:, None]
    cols = np.arange(wp)[None, :]
    if mode == SDA:
        groups = (hp // size, wp // size)
        slots = (size, size)
        gid = (rows // size) * groups[1] + (cols // size)
        sid = (rows % size) * slots[1] + (cols % size)
    else:
        groups = (size, size)
        slots = (hp // size, wp // size)
        gid = (rows % size) * groups[1] + (cols % size)
        sid = (rows // size) * slots[1] + (cols // size)
    gid = np.broadcast_to(gid, (hp, wp))
    sid = np.broadcast_to(sid, (hp, wp))
    n_groups = groups[0] * groups[1]
    n_slots = slots[0] * slots[1]
    real = (rows < height) & (cols < width)
    mask = np.zeros((n_groups, n_slots), dtype=bool)
    mask[gid[real], sid[real]] = True
    inverse = np.full((n_groups, n_slots), -1, dtype=np.int64)
    rr, cc = np.nonzero(real)
    inverse[gid[real], sid[real]] = rr * width + cc
    return GroupLayout(
        mode=mode,
        grid=(height, width),
        size=size,
        padded_grid=(hp, wp),
        groups=groups,
        slots=slots,
        mask=mask,
        forward_group=np.ascontiguousarray(gid[:height, :width]),
        forward_slot=np.ascontiguousarray(sid[:height, :width]),
        inverse_flat=inverse,
    )


def _split_batch(x: Tensor) -> tuple[Tensor, bool]:
    if x.data.ndim == 3:
        return x.reshape((1,) + x.shape), True
    return x, False


def group(x: Tensor, layout: GroupLayout) -> Tensor:
    """Rearrange (..., H, W, D) into (..., n_groups, n_slots, D).

    Pure reshape/permute composition on the zero-padded grid; padded slots
    hold zeros and are excluded from attention by the layout mask.
    """
    x, squeeze = _split_batch(x)
    n, h, w, d = x.shape
    if (h, w) != layout.grid:
        raise T.ShapeError(f"tensor grid {(h, w)} does not match layout {layout.grid}")
    hp, wp = layout.padded_grid
    x = T.pad_hw(x, hp - h, wp - w)
    if layout.mode == SDA:
        gh, gw = layout.groups
        sh, sw = layout.slots
        x = x.reshape(n, gh, sh, gw, sw, d).permute(0, 1, 3, 2, 4, 5)
    else:
        gh, gw = layout.groups
        sh, sw = layout.slots
        x = x.reshape(n, sh, gh, sw, gw, d).permute(0, 2, 4, 1, 3, 5)
    out = x.reshape(n, layout.n_groups, layout.n_slots, d)
    return out.reshape(out.shape[1:]) if squeeze else out


def ungroup(g: Tensor, layout: GroupLayout) -> Tensor:
    """Exact inverse of :func:`group`; padded slots are discarded."""
    g, squeeze = _split_batch(g)
    n, ng, ns, d = g.shape
    if (ng, ns) != (layout.n_groups, layout.n_slots):
        raise T.ShapeError(f"grouped shape {(ng, ns)} does not match layout")
    gh, gw = layout.groups
    sh, sw = layout.slots
    hp, wp = layout.padded_grid
    x = g.reshape(n, gh, gw, sh, sw, d)
    if layout.mode == SDA:
        x = x.permute(0, 1, 3, 2, 4, 5)
    else:
        x = x.permute(0, 3, 1, 4, 2, 5)
    x = x.reshape(n, hp, wp, d)
    out = T.crop_hw(x, *layout.grid)
    return out.reshape(out.shape[1:]) if squeeze else out


def key_padding_logits(layout: GroupLayout, dtype) -> np.ndarray | None:
    """Additive (1, n_groups, 1, 1, n_slots) logits: 0 real, -inf padded."""
    if layout.mask.all():
        return None
    add = np.where(layout.mask, 0.0, -np.inf).astype(dtype)
    return add[None, :, None, None, :]


def attend_tokens(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    bias: Tensor | None = None,
    key_logits: np.ndarray | None = None,
) -> Tensor:
    """Vanilla scaled dot-product attention on (..., heads, S, d) operands.

    ``bias`` broadcasts over the leading axes as (heads, S, S); ``key_logits``
    is an additive constant carrying the -inf padding sentinel.
    """
    d = q.shape[-1]
    scores = T.matmul(q, k.permute(tuple(range(k.data.ndim - 2)) + (k.data.ndim - 1, k.data.ndim - 2)))
    scores = scores * (1.0 / math.sqrt(d))
    if bias is not None:
        scores = scores + bias
    if key_logits is not None:
        scores = scores + Tensor(key_logits)
    return T.matmul(T.softmax_lastdim(scores), v)


class GroupedAttention(Module):
    """Multi-head attention run independently inside each group.

    Cost per image scales with n_groups * slots^2 * dim, i.e. quadratic in
    the grid side when the group extent is fixed.
    """

    def __init__(self, rng, dim: int, heads: int, bias_provider: Module | None = None, dtype=np.float32):
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.q_proj = Linear(rng, dim, dim, dtype)
        self.k_proj = Linear(rng, dim, dim, dtype)
        self.v_proj = Linear(rng, dim, dim, dtype)
        self.out_proj = Linear(rng, dim, dim, dtype)
        self.bias = bias_provider

    def __call__(self, g: Tensor, layout: GroupLayout) -> Tensor:
        n, ng, ns, dim = g.shape
        h = self.heads
        d = dim // h

        def heads_first(t: Tensor) -> Tensor:
            return t.reshape(n, ng, ns, h, d).permute(0, 1, 3, 2, 4)

        q = heads_first(self.q_proj(g))
        k = heads_first(self.k_proj(g))
        v = heads_first(self.v_proj(g))
        bias = None
        if self.bias is not None:
            bias = self.bias.bias_matrix(layout).permute(2, 0, 1)  # (heads, S, S)
        mixed = attend_tokens(q, k, v, bias, key_padding_logits(layout, g.dtype))
        mixed = mixed.permute(0, 1, 3, 2, 4).reshape(n, ng, ns, dim)
        return self.out_proj(mixed)


class PooledFullAttention(Module):
    """Full-grid attention with keys/values average-pooled by a fixed factor.

    Ablation stand-in for architectures that merge adjacent key/value
    embeddings; queries stay at full resolution, no position bias is used.
    """

    def __init__(self, rng, dim: int, heads: int, reduction: int, dtype=np.float32):
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.reduction = reduction
        self.q_proj = Linear(rng, dim, dim, dtype)
        self.k_proj = Linear(rng, dim, dim, dtype)
        self.v_proj = Linear(rng, dim, dim, dtype)
        self.out_proj = Linear(rng, dim, dim, dtype)

    def _pool(self, x: Tensor) -> Tensor:
        r = self.reduction
        if r == 1:
            return x
        n, h, w, d = x.shape
        hp = math.ceil(h / r) * r
        wp = math.ceil(w / r) * r
        x = T.pad_hw(x, hp - h, wp - w)
        return x.reshape(n, hp // r, r, wp // r, r, d).mean(axis=(2, 4))

    def __call__(self, x: Tensor) -> Tensor:
        x, squeeze = _split_batch(x)
        n, hh, ww, dim = x.shape
        h = self.heads
        d = dim // h
        kv = self._pool(x)
        nk = kv.shape[1] * kv.shape[2]
        nq = hh * ww

        def heads_first(t: Tensor, count: int) -> Tensor:
            return t.reshape(n, count, h, d).permute(0, 2, 1, 3)

        q = heads_first(self.q_proj(x).reshape(n, nq, dim), nq)
        k = heads_first(self.k_proj(kv).reshape(n, nk, dim), nk)
        v = heads_first(self.v_proj(kv).reshape(n, nk, dim), nk)
        mixed = attend_tokens(q, k, v)
        mixed = mixed.permute(0, 2, 1, 3).reshape(n, hh, ww, dim)
        out = self.out_proj(mixed)
        return out.reshape(out.shape[1:]) if squeeze else out


def lsda_forward(x: Tensor, mode: str, size: int, attention: GroupedAttention) -> Tensor:
    """Group the grid, attend within groups, restore the grid."""
    x, squeeze = _split_batch(x)
    layout = build_layout(mode, x.shape[1], x.shape[2], size)
    out = ungroup(attention(group(x, layout), layout), layout)
    return out.reshape(out.shape[1:]) if squeeze else out
