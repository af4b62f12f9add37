"""LDPC alist ingestion, systematic encoding, BP decoding, interleaving."""

import numpy as np
import pytest

from turboeq import fec

TOY_ALIST = """6 3
1 2
1 1 1 1 1 1
2 2 2
1
1
2
2
3
3
1 2
3 4
5 6
"""


class TestAlist:
    def test_toy_code_dimensions(self):
        """Three weight-2 checks over six bits: rank 3, so k = 3."""
        code = fec.parse_alist(TOY_ALIST)
        assert code.n == 6
        assert code.k == 3
        expected = np.zeros((3, 6), dtype=np.uint8)
        expected[0, [0, 1]] = 1
        expected[1, [2, 3]] = 1
        expected[2, [4, 5]] = 1
        np.testing.assert_array_equal(code.H, expected)

    def test_malformed_entry_count(self):
        with pytest.raises(ValueError):
            fec.parse_alist("6 3\n1 2\n1 1 1 1 1 1\n2 2 2\n1\n1\n2\n")

    def test_inconsistent_degree(self):
        bad = TOY_ALIST.replace("1 1 1 1 1 1", "2 1 1 1 1 1")
        with pytest.raises(ValueError):
            fec.parse_alist(bad)

    def test_load_deterministic(self):
        a = fec.parse_alist(TOY_ALIST)
        b = fec.parse_alist(TOY_ALIST)
        np.testing.assert_array_equal(a.H, b.H)
        np.testing.assert_array_equal(a.systematic_map, b.systematic_map)

    def test_builtin_codes_present(self):
        names = fec.builtin_code_names()
        for expected in ("regular_3_6_n96", "regular_3_6_n256", "regular_3_6_n1024"):
            assert expected in names

    @pytest.mark.parametrize("name,n", [("regular_3_6_n96", 96), ("regular_3_6_n256", 256)])
    def test_builtin_regular_degrees(self, name, n):
        code = fec.load_builtin_code(name)
        assert code.n == n
        np.testing.assert_array_equal(code.H.sum(axis=0), 3)
        np.testing.assert_array_equal(code.H.sum(axis=1), 6)

    def test_full_one_matrix_rejected(self):
        # rank n leaves no information bits
        square = np.eye(4, dtype=int)
        lines = ["4 4", "1 1", "1 1 1 1", "1 1 1 1"]
        lines += [str(i + 1) for i in range(4)]
        lines += [str(i + 1) for i in range(4)]
        with pytest.raises(ValueError):
            fec.parse_alist("\n".join(lines))


@pytest.fixture(scope="module")
def code():
    return fec.load_builtin_code("regular_3_6_n96")


class TestEncode:
    def test_zero_maps_to_zero(self, code):
        cw = fec.encode(np.zeros(code.k, dtype=int), code)
        assert not cw.any()

    def test_syndrome_zero(self, code):
        rng = np.random.default_rng(0)
        for _ in range(20):
            cw = fec.encode(rng.integers(0, 2, code.k), code)
            assert not ((code.H @ cw) % 2).any()

    def test_linearity(self, code):
        rng = np.random.default_rng(1)
        a = rng.integers(0, 2, code.k)
        b = rng.integers(0, 2, code.k)
        lhs = fec.encode((a + b) % 2, code)
        rhs = (fec.encode(a, code) + fec.encode(b, code)) % 2
        np.testing.assert_array_equal(lhs, rhs)

    def test_systematic_positions(self, code):
        rng = np.random.default_rng(2)
        info = rng.integers(0, 2, code.k)
        cw = fec.encode(info, code)
        np.testing.assert_array_equal(cw[code.systematic_map], info)

    def test_length_mismatch(self, code):
        with pytest.raises(ValueError):
            fec.encode(np.zeros(code.k + 1, dtype=int), code)


class TestBpDecode:
    def test_noiseless_zero_iterations(self, code):
        rng = np.random.default_rng(3)
        cw = fec.encode(rng.integers(0, 2, code.k), code)
        res = fec.bp_decode(np.where(cw == 1, 20.0, -20.0), code)
        assert res.syndrome_ok
        assert res.iterations_used == 0

    def test_all_zero_llrs_fixed_point(self, code):
        res = fec.bp_decode(np.zeros(code.n), code)
        np.testing.assert_array_equal(res.posterior_llrs, np.zeros(code.n))

    def test_single_flip_corrected(self, code):
        rng = np.random.default_rng(4)
        ok = 0
        trials = 200
        for _ in range(trials):
            cw = fec.encode(rng.integers(0, 2, code.k), code)
            llr = np.where(cw == 1, 18.0, -18.0)
            flip = rng.integers(0, code.n)
            llr[flip] *= -1
            res = fec.bp_decode(llr, code)
            if res.syndrome_ok and (fec.hard_decision(res.posterior_llrs) == cw).all():
                ok += 1
        assert ok / trials >= 0.99

    def test_clipping_bound(self, code):
        """No bit with channel magnitude above the total incoming message bound can flip."""
        rng = np.random.default_rng(5)
        cw = fec.encode(rng.integers(0, 2, code.k), code)
        llr = np.where(cw == 1, 100.0, -100.0)
        llr[::7] *= -1  # adversarial flips elsewhere
        res = fec.bp_decode(llr, code, max_iter=5)
        strong = np.abs(llr) > 3 * fec.MSG_CLIP
        same = np.sign(res.posterior_llrs[strong]) == np.sign(llr[strong])
        assert same.all()


class TestInterleaver:
    def test_round_trip(self):
        rng = np.random.default_rng(6)
        for seed in range(10_000):
            pi = fec.Interleaver.random(32, seed)
            v = rng.normal(size=32)
            back = fec.deinterleave(fec.interleave(v, pi), pi)
            if not np.array_equal(back, v):
                raise AssertionError(f"round trip broke at seed {seed}")

    def test_identity(self):
        pi = fec.Interleaver.identity(10)
        v = np.arange(10.0)
        np.testing.assert_array_equal(fec.interleave(v, pi), v)

    def test_multiset_preserved(self):
        pi = fec.Interleaver.random(32, seed=9)
        v = np.random.default_rng(0).normal(size=32)
        assert sorted(fec.interleave(v, pi)) == sorted(v)

    def test_length_mismatch(self):
        pi = fec.Interleaver.random(8, seed=0)
        with pytest.raises(ValueError):
            fec.interleave(np.zeros(9), pi)


class TestHardDecision:
    def test_sign_rule_with_tie(self):
        np.testing.assert_array_equal(fec.hard_decision(np.array([3.2, -0.1, 0.0])), [1, 0, 0])

    def test_all_positive(self):
        assert fec.hard_decision(np.ones(5)).all()

    def test_negation_complements_nonzero(self):
        rng = np.random.default_rng(8)
        llrs = rng.normal(size=100)
        llrs = llrs[llrs != 0]
        a = fec.hard_decision(llrs)
        b = fec.hard_decision(-llrs)
        np.testing.assert_array_equal(a, 1 - b)
