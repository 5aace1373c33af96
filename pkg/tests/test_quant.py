"""Formats, scales, round-to-nearest casting, and lattice views."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lotion_lab.quant import FP4_E2M1_LEVELS, QuantFormat, cast_rtn, compute_scale, partition, quant_view

INT4 = QuantFormat.uniform_int(4)
FP4 = QuantFormat.fp4_e2m1()


def random_weights(rng, n, spread=True):
    w = rng.normal(size=n)
    if spread:
        w *= 10.0 ** rng.integers(-3, 4)
    return w


class TestFormat:
    def test_uniform_levels_match_explicit_codebook(self):
        # INT-n is the codebook {-(2^(n-1)-1), ..., 2^(n-1)-1} under the same scale
        cb = QuantFormat.codebook([float(z) for z in range(-7, 8)])
        rng = np.random.default_rng(0)
        for _ in range(50):
            w = random_weights(rng, int(rng.integers(2, 33)))
            np.testing.assert_array_equal(cast_rtn(w, INT4), cast_rtn(w, cb))
            vu, vc = quant_view(w, INT4), quant_view(w, cb)
            np.testing.assert_array_equal(vu.lo, vc.lo)
            np.testing.assert_array_equal(vu.hi, vc.hi)
            np.testing.assert_array_equal(vu.frac, vc.frac)

    def test_fp4_levels(self):
        assert FP4.max_level == 6.0
        assert 0.0 in FP4.levels and len(FP4.levels) == 15

    def test_validation(self):
        with pytest.raises(ValueError):
            QuantFormat.uniform_int(1)
        with pytest.raises(ValueError):
            QuantFormat.codebook([-1.0, 0.0, 0.5])  # not symmetric
        with pytest.raises(ValueError):
            QuantFormat.codebook([-1.0, 1.0])  # missing 0
        with pytest.raises(ValueError):
            QuantFormat(bits=4, levels=(0.0,))

    def test_names_round_trip(self):
        for name in ("int4", "int8", "fp4", "int4/b64", "fp4/b32"):
            assert QuantFormat.from_name(name).name == name
        with pytest.raises(ValueError):
            QuantFormat.from_name("float16")


class TestPartition:
    def test_blocks_cover_disjointly(self):
        blocks = partition(np.zeros(8), QuantFormat.uniform_int(4, block_size=4))
        assert blocks == [slice(0, 4), slice(4, 8)]

    def test_whole_tensor_is_one_block(self):
        assert partition(np.zeros(6), INT4) == [slice(0, 6)]

    def test_non_divisible_errors(self):
        with pytest.raises(ValueError, match="does not divide"):
            partition(np.zeros(6), QuantFormat.uniform_int(4, block_size=4))


class TestScale:
    def test_int4_scale(self):
        assert compute_scale([1.0, -2.0, 3.0], INT4) == 3.0 / 7.0

    def test_all_zero_block(self):
        assert compute_scale([0.0, 0.0], INT4) == 0.0

    def test_fp4_scale_at_max_level(self):
        assert compute_scale([6.0], FP4) == 1.0


class TestCast:
    def test_int4_hand_computed(self):
        s = 3.0 / 7.0
        out = cast_rtn([1.0, -2.0, 3.0], INT4)
        np.testing.assert_array_equal(out, [2 * s, -5 * s, 3.0])

    def test_lattice_is_fixed_point(self):
        rng = np.random.default_rng(1)
        w = cast_rtn(random_weights(rng, 40), INT4)
        np.testing.assert_array_equal(cast_rtn(w, INT4), w)

    def test_zero_block(self):
        np.testing.assert_array_equal(cast_rtn([0.0, 0.0], INT4), [0.0, 0.0])

    @pytest.mark.parametrize("fmt", [INT4, QuantFormat.uniform_int(8), FP4])
    def test_idempotent(self, fmt):
        rng = np.random.default_rng(2)
        for _ in range(300):
            w = random_weights(rng, int(rng.integers(2, 17)))
            q = cast_rtn(w, fmt)
            np.testing.assert_array_equal(cast_rtn(q, fmt), q)

    @pytest.mark.parametrize("fmt", [INT4, QuantFormat.uniform_int(3), FP4])
    def test_range_safety(self, fmt):
        rng = np.random.default_rng(3)
        for _ in range(300):
            w = random_weights(rng, int(rng.integers(2, 17)))
            q = cast_rtn(w, fmt)
            assert np.max(np.abs(q)) <= np.max(np.abs(w))

    def test_scale_equivariance_power_of_two_exact(self):
        rng = np.random.default_rng(4)
        w = random_weights(rng, 24)
        for c in (0.25, 2.0, 1024.0):
            np.testing.assert_array_equal(cast_rtn(c * w, INT4), c * cast_rtn(w, INT4))

    def test_scale_equivariance_general_close(self):
        rng = np.random.default_rng(5)
        w = random_weights(rng, 24)
        for c in (3.7, 0.0123, 91.0):
            np.testing.assert_allclose(cast_rtn(c * w, INT4), c * cast_rtn(w, INT4), rtol=1e-12)

    @pytest.mark.parametrize("fmt", [INT4, FP4])
    def test_nearest_representable_brute_force(self, fmt):
        rng = np.random.default_rng(6)
        for _ in range(100):
            w = random_weights(rng, 6, spread=False)
            q = cast_rtn(w, fmt)
            a = np.max(np.abs(w))
            s = a / fmt.max_level
            if fmt.is_uniform:
                levels = np.arange(-fmt.max_level, fmt.max_level + 1)
            else:
                levels = np.asarray(fmt.levels)
            codebook = s * levels
            codebook[np.abs(levels) >= fmt.max_level] = np.sign(
                levels[np.abs(levels) >= fmt.max_level]
            ) * a
            for i in range(w.size):
                best = np.min(np.abs(w[i] - codebook))
                assert abs(w[i] - q[i]) <= best + 1e-15 * max(a, 1.0)

    def test_blocked_cast_uses_per_block_scales(self):
        fmt = QuantFormat.uniform_int(4, block_size=2)
        w = np.array([1.0, -2.0, 100.0, 25.0])
        q = cast_rtn(w, fmt)
        # first block scaled by 2/7, second by 100/7
        np.testing.assert_allclose(q[:2], cast_rtn(w[:2], INT4))
        np.testing.assert_allclose(q[2:], cast_rtn(w[2:], INT4))

    def test_ties_round_half_away_from_zero(self):
        # scale 1, values exactly between lattice points
        w = np.array([7.0, 2.5, -2.5])
        q = cast_rtn(w, INT4)
        np.testing.assert_array_equal(q, [7.0, 3.0, -3.0])

    def test_non_divisible_block_size_errors(self):
        with pytest.raises(ValueError, match="does not divide"):
            cast_rtn(np.zeros(6), QuantFormat.uniform_int(4, block_size=4))


class TestView:
    def test_hand_computed_bracket(self):
        v = quant_view([1.0, -2.0, 3.0], INT4)
        s = 3.0 / 7.0
        assert v.lo[0] == 2 * s and v.hi[0] == 3 * s
        assert v.frac[0] == pytest.approx(1.0 / 3.0, rel=1e-12)

    def test_lattice_point_collapses(self):
        s = 3.0 / 7.0
        w = np.array([3.0, 2 * s])
        v = quant_view(w, INT4)
        assert v.frac[1] == 0.0 and v.lo[1] == w[1] and v.hi[1] == w[1]

    def test_fp4_between_levels(self):
        v = quant_view([6.0, 2.5], FP4)
        assert (v.lo[1], v.hi[1], v.frac[1]) == (2.0, 3.0, 0.5)

    def test_absmax_coordinate_is_always_lattice(self):
        rng = np.random.default_rng(7)
        for fmt in (INT4, FP4):
            for _ in range(100):
                w = random_weights(rng, 8)
                v = quant_view(w, fmt)
                i = int(np.argmax(np.abs(w)))
                assert v.lo[i] == w[i] == v.hi[i]

    @pytest.mark.parametrize("fmt", [INT4, QuantFormat.uniform_int(8), FP4])
    def test_reconstruction_and_bracket_invariants(self, fmt):
        rng = np.random.default_rng(8)
        for _ in range(200):
            w = random_weights(rng, int(rng.integers(2, 17)))
            v = quant_view(w, fmt)
            assert np.all(v.lo <= w) and np.all(w <= v.hi)
            assert np.all((0.0 <= v.frac) & (v.frac <= 1.0))
            np.testing.assert_allclose(v.lo + v.frac * (v.hi - v.lo), w, rtol=0, atol=1e-12 * max(1.0, np.max(np.abs(w))))

    def test_uniform_gap_equals_scale_off_lattice(self):
        rng = np.random.default_rng(9)
        w = random_weights(rng, 32, spread=False)
        v = quant_view(w, INT4)
        off = ~v.lattice_mask
        np.testing.assert_allclose(v.gap[off], v.scale[off], rtol=1e-12)

    def test_cast_outputs_are_lattice_points_of_their_view(self):
        rng = np.random.default_rng(10)
        for fmt in (INT4, FP4, QuantFormat.uniform_int(5, block_size=8)):
            for _ in range(100):
                w = random_weights(rng, 16)
                q = cast_rtn(w, fmt)
                v = quant_view(q, fmt)
                assert np.all(v.lattice_mask)
                np.testing.assert_array_equal(v.lo, q.reshape(-1))

    def test_block_index_layout(self):
        v = quant_view(np.arange(1.0, 7.0), QuantFormat.uniform_int(4, block_size=3))
        np.testing.assert_array_equal(v.block_index, [0, 0, 0, 1, 1, 1])


@given(
    st.lists(
        st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False),
        min_size=2,
        max_size=12,
    ),
    st.sampled_from([3, 4, 8]),
)
@settings(max_examples=300, deadline=None)
def test_cast_idempotent_and_in_range_property(values, bits):
    w = np.array(values)
    fmt = QuantFormat.uniform_int(bits)
    q = cast_rtn(w, fmt)
    np.testing.assert_array_equal(cast_rtn(q, fmt), q)
    assert np.max(np.abs(q)) <= np.max(np.abs(w))
