"""Independent reference implementations used as test oracles.

Everything here is deliberately written with plain loops and the
definitional formulas, not with the library's reshape/permute machinery,
so agreement is evidence rather than tautology.
"""

from __future__ import annotations

import math

import numpy as np

from xfmr import no_grad


def matmul_loops(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Triple-loop matrix product for 2-D operands."""
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m), dtype=np.result_type(a, b))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def conv2d_loops(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None,
                 stride: int, padding: int) -> np.ndarray:
    """Direct-summation cross-correlation for a single (H, W, Cin) image."""
    h, w, cin = x.shape
    kh, kw, _, cout = kernel.shape
    xp = np.zeros((h + 2 * padding, w + 2 * padding, cin), dtype=x.dtype)
    xp[padding : padding + h, padding : padding + w] = x
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((oh, ow, cout), dtype=x.dtype)
    for r in range(oh):
        for c in range(ow):
            for co in range(cout):
                acc = 0.0
                for i in range(kh):
                    for j in range(kw):
                        for ci in range(cin):
                            acc += xp[r * stride + i, c * stride + j, ci] * kernel[i, j, ci, co]
                out[r, c, co] = acc + (bias[co] if bias is not None else 0.0)
    return out


def group_slot_of(mode: str, r: int, c: int, size: int) -> tuple[tuple[int, int], tuple[int, int]]:
    """Definitional (group, slot) coordinates of one grid position."""
    if mode == "sda":
        return (r // size, c // size), (r % size, c % size)
    return (r % size, c % size), (r // size, c // size)


def walk_layout(mode: str, height: int, width: int, size: int):
    """Enumerate every position's (group id, slot id) by brute force."""
    hp = math.ceil(height / size) * size
    wp = math.ceil(width / size) * size
    if mode == "sda":
        groups_w, slots_w = wp // size, size
    else:
        groups_w, slots_w = size, wp // size
    mapping = {}
    for r in range(height):
        for c in range(width):
            (gr, gc), (sr, sc) = group_slot_of(mode, r, c, size)
            mapping[(r, c)] = (gr * groups_w + gc, sr * slots_w + sc)
    return mapping


def masked_full_attention(
    x: np.ndarray,
    attn,
    mode: str,
    size: int,
    bias_provider=None,
) -> np.ndarray:
    """Full-grid attention with cross-group logits forced to -inf.

    Loops over every (query, key) token pair per head, using the grouped
    attention layer's weight values directly; group membership and slot
    offsets come from the definitional formulas above.
    """
    n, height, width, dim = x.shape
    heads = attn.heads
    d = dim // heads
    flat = x.reshape(n, height * width, dim)
    q = flat @ attn.q_proj.w.data + attn.q_proj.b.data
    k = flat @ attn.k_proj.w.data + attn.k_proj.b.data
    v = flat @ attn.v_proj.w.data + attn.v_proj.b.data
    out = np.zeros_like(x)
    for b in range(n):
        for i in range(height * width):
            ri, ci = divmod(i, width)
            gi, si = group_slot_of(mode, ri, ci, size)
            mixed = np.zeros(dim, dtype=x.dtype)
            for head in range(heads):
                sl = slice(head * d, (head + 1) * d)
                logits = np.full(height * width, -np.inf)
                for j in range(height * width):
                    rj, cj = divmod(j, width)
                    gj, sj = group_slot_of(mode, rj, cj, size)
                    if gj != gi:
                        continue
                    bias = 0.0
                    if bias_provider is not None:
                        with no_grad():
                            bias = float(
                                bias_provider.offset_bias(si[0] - sj[0], si[1] - sj[1]).data[0, head]
                            )
                    logits[j] = float(q[b, i, sl] @ k[b, j, sl]) / math.sqrt(d) + bias
                m = logits.max()
                p = np.exp(logits - m)
                p /= p.sum()
                mixed[sl] = (p[:, None] * v[b, :, sl]).sum(axis=0)
            out[b, ri, ci, :] = mixed @ attn.out_proj.w.data + attn.out_proj.b.data
    return out
