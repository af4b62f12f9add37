"""LLR/PMF algebra: prior expansion, moments, marginalization, extrinsics."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from turboeq import link, softinfo


@pytest.fixture(scope="module")
def qpsk():
    return link.build_constellation(4)


@pytest.fixture(scope="module")
def qam16():
    return link.build_constellation(16)


class TestBitLlrsToPmf:
    def test_zero_llrs_uniform(self, qpsk):
        pmf = softinfo.bitllrs_to_pmf(np.zeros(2), qpsk)
        np.testing.assert_allclose(pmf, 0.25, atol=1e-15)

    def test_single_bit_split(self, qpsk):
        """LLR [2, 0]: bit-1 probability is (1 + tanh(1))/2, split evenly within each partition."""
        pmf = softinfo.bitllrs_to_pmf(np.array([2.0, 0.0]), qpsk)
        p1 = 0.5 * (1 + np.tanh(1.0))  # 0.8807970779778823
        one_set = qpsk.bit_subsets[0][1]
        zero_set = qpsk.bit_subsets[0][0]
        assert abs(pmf[one_set].sum() - p1) < 1e-12
        assert abs(pmf[zero_set].sum() - (1 - p1)) < 1e-12
        np.testing.assert_allclose(pmf[one_set], p1 / 2, atol=1e-12)

    def test_saturated_llrs_one_hot(self, qpsk):
        pmf = softinfo.bitllrs_to_pmf(np.array([40.0, 40.0]), qpsk)
        assert abs(pmf[3] - 1.0) < 1e-9  # label (1,1) is index 3
        assert pmf.sum() == pytest.approx(1.0, abs=1e-12)

    def test_batched_blocks_normalized(self, qam16):
        rng = np.random.default_rng(0)
        L = rng.uniform(-12, 12, size=(50, 4))
        pmf = softinfo.bitllrs_to_pmf(L, qam16)
        np.testing.assert_allclose(pmf.sum(axis=-1), 1.0, atol=1e-9)
        assert (pmf >= 0).all()


class TestPmfMoments:
    def test_uniform_qpsk(self, qpsk):
        mean, var = softinfo.pmf_moments(np.full(4, 0.25), qpsk)
        assert abs(mean) < 1e-15
        assert abs(var - 1.0) < 1e-12

    def test_one_hot(self, qpsk):
        pmf = np.zeros(4)
        pmf[2] = 1.0
        mean, var = softinfo.pmf_moments(pmf, qpsk)
        assert mean == qpsk.points[2]
        assert var == 0.0

    def test_two_point_variance(self, qpsk):
        """PMF [1/2, 1/2, 0, 0]: variance is |s0 - s1|^2 / 4."""
        pmf = np.array([0.5, 0.5, 0.0, 0.0])
        _, var = softinfo.pmf_moments(pmf, qpsk)
        expected = np.abs(qpsk.points[0] - qpsk.points[1]) ** 2 / 4
        assert abs(var - expected) < 1e-14

    def test_variance_bounds(self, qam16):
        rng = np.random.default_rng(1)
        pmf = rng.dirichlet(np.ones(16), size=200)
        _, var = softinfo.pmf_moments(pmf, qam16)
        assert (var >= 0).all()
        assert (var <= np.max(np.abs(qam16.points) ** 2) + 1e-12).all()


class TestPmfToBitLlrs:
    def test_uniform_gives_zero(self, qam16):
        llrs = softinfo.pmf_to_bitllrs(np.full(16, 1 / 16), qam16)
        np.testing.assert_allclose(llrs, 0.0, atol=1e-12)

    def test_one_hot_saturates_at_clip(self, qpsk):
        pmf = np.zeros(4)
        pmf[1] = 1.0  # label (0, 1)
        llrs = softinfo.pmf_to_bitllrs(pmf, qpsk, clip=16.0)
        np.testing.assert_allclose(llrs, [-16.0, 16.0])

    @pytest.mark.parametrize("M", [4, 16])
    def test_round_trip(self, M):
        """Product-form PMFs marginalize back to their generating LLRs."""
        c = link.build_constellation(M)
        rng = np.random.default_rng(42)
        L = rng.uniform(-10, 10, size=(10_000, c.bits_per_symbol))
        back = softinfo.pmf_to_bitllrs(softinfo.bitllrs_to_pmf(L, c), c, clip=50.0)
        assert np.abs(back - L).max() < 1e-9

    @given(st.lists(st.floats(-10, 10), min_size=2, max_size=2))
    @settings(max_examples=100, deadline=None)
    def test_round_trip_property(self, llrs):
        c = link.build_constellation(4)
        L = np.asarray(llrs)
        back = softinfo.pmf_to_bitllrs(softinfo.bitllrs_to_pmf(L, c), c, clip=50.0)
        assert np.abs(back - L).max() < 1e-9


class TestExtrinsicSubtract:
    def test_plain_difference(self):
        out = softinfo.extrinsic_subtract(np.array([3.0]), np.array([1.0]), clip=16.0)
        assert out[0] == 2.0

    def test_clamped(self):
        out = softinfo.extrinsic_subtract(np.array([40.0]), np.array([-40.0]), clip=16.0)
        assert out[0] == 16.0

    def test_zero_prior_identity(self):
        x = np.array([-20.0, 3.0, 20.0])
        out = softinfo.extrinsic_subtract(x, np.zeros(3), clip=16.0)
        np.testing.assert_allclose(out, [-16.0, 3.0, 16.0])

    def test_antisymmetry(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=20), rng.normal(size=20)
        lhs = softinfo.extrinsic_subtract(a, b, 16.0)
        rhs = softinfo.extrinsic_subtract(-b, -a, 16.0)
        np.testing.assert_allclose(lhs, rhs)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            softinfo.extrinsic_subtract(np.zeros(3), np.zeros(4), 16.0)


class TestCheckPmf:
    def test_accepts_valid_blocks(self, qpsk):
        softinfo.check_pmf(np.full(8, 0.25), 4)

    def test_rejects_negative(self):
        bad = np.array([0.5, 0.6, -0.1, 0.0])
        with pytest.raises(ValueError):
            softinfo.check_pmf(bad, 4)

    def test_rejects_bad_sum(self):
        with pytest.raises(ValueError):
            softinfo.check_pmf(np.full(4, 0.3), 4)
