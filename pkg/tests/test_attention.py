import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import xfmr.tensor as T
from xfmr import (
    DynamicPositionBias,
    GroupedAttention,
    Tensor,
    attend_tokens,
    build_layout,
    grad_check,
    group,
    lsda_forward,
    no_grad,
    ungroup,
)
from xfmr.attention import PooledFullAttention, key_padding_logits

from oracles import masked_full_attention, walk_layout

rng = np.random.default_rng(99)


class TestLayout:
    def test_sda_6x6_g3(self):
        lay = build_layout("sda", 6, 6, 3)
        assert lay.n_groups == 4 and lay.n_slots == 9
        assert lay.padded_grid == (6, 6)
        assert lay.mask.all()

    def test_lda_9x9_i3_residue_groups(self):
        lay = build_layout("lda", 9, 9, 3)
        assert lay.n_groups == 9 and lay.n_slots == 9
        gid = lay.forward_group
        assert gid[0, 0] == gid[3, 0] == gid[6, 0] == gid[0, 3] == gid[3, 6]
        assert gid[0, 0] != gid[1, 0]

    def test_padded_7x5_g3(self):
        lay = build_layout("sda", 7, 5, 3)
        assert lay.padded_grid == (9, 6)
        assert lay.n_groups == 6
        assert (~lay.mask).sum() == 9 * 6 - 7 * 5  # 19 padded slots

    @given(
        st.sampled_from(["sda", "lda"]),
        st.integers(1, 13),
        st.integers(1, 13),
        st.integers(1, 6),
    )
    @settings(max_examples=60, deadline=None)
    def test_matches_brute_force_walker(self, mode, h, w, size):
        lay = build_layout(mode, h, w, size)
        walked = walk_layout(mode, h, w, size)
        for (r, c), (gid, sid) in walked.items():
            assert lay.forward_group[r, c] == gid
            assert lay.forward_slot[r, c] == sid
            assert lay.inverse_flat[gid, sid] == r * w + c
            assert lay.mask[gid, sid]

    @given(
        st.sampled_from(["sda", "lda"]),
        st.integers(1, 12),
        st.integers(1, 12),
        st.integers(1, 5),
    )
    @settings(max_examples=60, deadline=None)
    def test_forward_inverse_identity(self, mode, h, w, size):
        lay = build_layout(mode, h, w, size)
        # every real position appears exactly once
        assert lay.mask.sum() == h * w
        seen = lay.inverse_flat[lay.mask]
        assert sorted(seen.tolist()) == list(range(h * w))

    def test_bad_args(self):
        with pytest.raises(ValueError):
            build_layout("sda", 0, 3, 1)
        with pytest.raises(ValueError):
            build_layout("diagonal", 3, 3, 1)


class TestGroupUngroup:
    def test_constant_fills_real_slots(self):
        lay = build_layout("sda", 5, 5, 3)
        g = group(Tensor(np.full((5, 5, 2), 7.0)), lay)
        assert (g.data[lay.mask] == 7.0).all()
        assert (g.data[~lay.mask] == 0.0).all()

    def test_linear_index_sda(self):
        x = Tensor(np.arange(16.0).reshape(4, 4, 1))
        g = group(x, build_layout("sda", 4, 4, 2))
        assert sorted(g.data[0, :, 0].astype(int).tolist()) == [0, 1, 4, 5]

    def test_matches_algorithm_reshape_chain(self):
        # unbatched short-distance grouping is exactly the published
        # reshape(H//G, G, W//G, G, D) -> permute(0, 2, 1, 3, 4) chain
        x = Tensor(rng.standard_normal((6, 6, 8)))
        lay = build_layout("sda", 6, 6, 3)
        mine = group(x, lay)
        chain = x.reshape(2, 3, 2, 3, 8).permute(0, 2, 1, 3, 4).reshape(4, 9, 8)
        assert (mine.data == chain.data).all()

    def test_lda_matches_algorithm_reshape_chain(self):
        x = Tensor(rng.standard_normal((6, 6, 8)))
        lay = build_layout("lda", 6, 6, 3)  # interval 3, slots 2x2
        mine = group(x, lay)
        chain = x.reshape(2, 3, 2, 3, 8).permute(1, 3, 0, 2, 4).reshape(9, 4, 8)
        assert (mine.data == chain.data).all()

    @given(
        st.sampled_from(["sda", "lda"]),
        st.integers(1, 12),
        st.integers(1, 12),
        st.integers(1, 5),
        st.booleans(),
    )
    @settings(max_examples=60, deadline=None)
    def test_roundtrip_bitwise(self, mode, h, w, size, batched):
        lay = build_layout(mode, h, w, size)
        r = np.random.default_rng(17)
        shape = (2, h, w, 3) if batched else (h, w, 3)
        x = Tensor(r.standard_normal(shape))
        assert (ungroup(group(x, lay), lay).data == x.data).all()

    def test_ungroup_discards_padded_values(self):
        lay = build_layout("sda", 3, 3, 2)
        x = Tensor(rng.standard_normal((3, 3, 1)))
        g = group(x, lay)
        poisoned = g.data.copy()
        poisoned[~lay.mask] = 1e9
        back = ungroup(Tensor(poisoned), lay)
        assert (back.data == x.data).all()

    def test_shape_mismatch(self):
        lay = build_layout("sda", 4, 4, 2)
        with pytest.raises(T.ShapeError):
            group(Tensor(np.zeros((5, 4, 3))), lay)
        with pytest.raises(T.ShapeError):
            ungroup(Tensor(np.zeros((3, 4, 3))), lay)


def make_attention(dim=8, heads=2, bias=True, dtype=np.float64, seed=5):
    r = np.random.default_rng(seed)
    provider = DynamicPositionBias(r, dim, heads, dtype=dtype) if bias else None
    return GroupedAttention(r, dim, heads, provider, dtype=dtype)


class TestGroupedAttention:
    def test_single_token_group_reduces_to_projections(self):
        attn = make_attention(bias=False)
        lay = build_layout("sda", 1, 1, 1)
        x = Tensor(rng.standard_normal((1, 1, 1, 8)))
        with no_grad():
            out = ungroup(attn(group(x, lay), lay), lay).data
        expect = (x.data.reshape(1, 8) @ attn.v_proj.w.data + attn.v_proj.b.data)
        expect = expect @ attn.out_proj.w.data + attn.out_proj.b.data
        assert np.abs(out.reshape(1, 8) - expect).max() <= 1e-12

    def test_identical_queries_give_mean_of_values(self):
        attn = make_attention(bias=False)
        attn.q_proj.w.data = np.zeros_like(attn.q_proj.w.data)
        attn.q_proj.b.data = np.zeros_like(attn.q_proj.b.data)
        lay = build_layout("sda", 2, 2, 2)
        x = Tensor(rng.standard_normal((1, 2, 2, 8)))
        with no_grad():
            out = ungroup(attn(group(x, lay), lay), lay).data
        v = x.data.reshape(4, 8) @ attn.v_proj.w.data + attn.v_proj.b.data
        expect = (v.mean(axis=0) @ attn.out_proj.w.data + attn.out_proj.b.data)
        assert np.abs(out.reshape(4, 8) - expect).max() <= 1e-12

    @pytest.mark.parametrize(
        "mode,size,h,w",
        [
            ("sda", 3, 6, 6),
            ("sda", 3, 7, 5),
            ("lda", 3, 9, 9),
            ("lda", 2, 5, 7),
            ("sda", 4, 4, 4),
            ("lda", 1, 4, 4),
        ],
    )
    def test_equals_masked_full_attention(self, mode, size, h, w):
        attn = make_attention()
        x = Tensor(np.random.default_rng(31).standard_normal((2, h, w, 8)))
        lay = build_layout(mode, h, w, size)
        with no_grad():
            mine = ungroup(attn(group(x, lay), lay), lay).data
        ref = masked_full_attention(x.data, attn, mode, size, attn.bias)
        assert np.abs(mine - ref).max() <= 1e-5

    def test_indivisible_heads_rejected(self):
        with pytest.raises(ValueError):
            GroupedAttention(np.random.default_rng(0), 8, 3)

    def test_degenerate_modes_coincide(self):
        # interval 1 and group size = grid side both collapse to one group
        attn = make_attention(bias=False)
        x = Tensor(rng.standard_normal((1, 4, 4, 8)))
        with no_grad():
            a = lsda_forward(x, "sda", 4, attn).data
            b = lsda_forward(x, "lda", 1, attn).data
        assert np.abs(a - b).max() <= 1e-12

    def test_gradcheck_through_lsda(self):
        attn = make_attention(dim=4, heads=2, seed=11)
        x = Tensor(np.random.default_rng(12).standard_normal((1, 4, 4, 4)) * 0.5, requires_grad=True)
        params = [("x", x)] + list(attn.named_parameters())
        rep = grad_check(
            lambda: (lsda_forward(x, "sda", 2, attn) * 0.1).sum(),
            params,
            tol=1e-4,
            max_entries_per_tensor=6,
        )
        assert rep.passed, rep.summary()

    def test_gradcheck_through_padded_lda(self):
        attn = make_attention(dim=4, heads=1, seed=13)
        x = Tensor(np.random.default_rng(14).standard_normal((1, 3, 5, 4)) * 0.5, requires_grad=True)
        rep = grad_check(
            lambda: (lsda_forward(x, "lda", 2, attn) * 0.1).sum(),
            [("x", x)] + list(attn.named_parameters()),
            tol=1e-4,
            max_entries_per_tensor=6,
        )
        assert rep.passed, rep.summary()


class TestComplexityScaling:
    def _attention_map_macs(self, side, group_size):
        lay = build_layout("sda", side, side, group_size)
        dim, heads = 16, 2
        r = np.random.default_rng(0)
        x = Tensor(r.standard_normal((1, side, side, dim)).astype(np.float32))
        attn = GroupedAttention(r, dim, heads, None, dtype=np.float32)
        with no_grad():
            g = group(x, lay)
            d = dim // heads
            q = attn.q_proj(g).reshape(1, lay.n_groups, lay.n_slots, heads, d).permute(0, 1, 3, 2, 4)
            k = attn.k_proj(g).reshape(1, lay.n_groups, lay.n_slots, heads, d).permute(0, 1, 3, 2, 4)
            v = attn.v_proj(g).reshape(1, lay.n_groups, lay.n_slots, heads, d).permute(0, 1, 3, 2, 4)
            with T.count_macs() as counter:
                attend_tokens(q, k, v, key_logits=key_padding_logits(lay, np.float32))
        return counter.macs

    def test_grouped_cost_quadratic_full_cost_quartic(self):
        g7_s14 = self._attention_map_macs(14, 7)
        g7_s28 = self._attention_map_macs(28, 7)
        full_s14 = self._attention_map_macs(14, 14)
        full_s28 = self._attention_map_macs(28, 28)
        assert g7_s28 == 4 * g7_s14
        assert full_s28 == 16 * full_s14

    def test_group_equals_grid_collapses_to_full(self):
        assert self._attention_map_macs(14, 14) == self._attention_map_macs(14, 14)
        lay_full = build_layout("sda", 14, 14, 14)
        assert lay_full.n_groups == 1


class TestPooledFullAttention:
    def test_shapes_and_pooling(self):
        attn = PooledFullAttention(np.random.default_rng(0), 8, 2, reduction=2, dtype=np.float64)
        x = Tensor(rng.standard_normal((2, 6, 6, 8)))
        with no_grad():
            out = attn(x)
        assert out.shape == (2, 6, 6, 8)

    def test_reduction_one_is_plain_full_attention(self):
        attn = PooledFullAttention(np.random.default_rng(1), 8, 2, reduction=1, dtype=np.float64)
        x = Tensor(rng.standard_normal((1, 3, 3, 8)))
        with no_grad():
            out = attn(x)
        assert np.isfinite(out.data).all()
