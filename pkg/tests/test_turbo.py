"""Turbo loop orchestration: prior schedule, extrinsic chain, early stopping."""

import numpy as np
import pytest

from turboeq import fec, link, softinfo
from turboeq.turbo import TurboConfig, run_turbo


@pytest.fixture(scope="module")
def setup():
    code = fec.load_builtin_code("regular_3_6_n96")
    c = link.build_constellation(4)
    ss = np.random.SeedSequence(1234)
    s_task, s_bits, s_pil, s_il, s_tx = ss.spawn(5)
    rng = np.random.default_rng(s_task)
    H = (rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))) / np.sqrt(2)
    task = link.Task(H=H, sigma2=0.2, quant=link.QuantizerSpec(-4, 4, 10))
    rngb = np.random.default_rng(s_bits)
    info = rngb.integers(0, 2, size=(2, code.k)).astype(np.uint8)
    ils = [fec.Interleaver.random(code.n, s) for s in s_il.spawn(2)]
    coded = np.stack([fec.interleave(fec.encode(info[n], code), ils[n]) for n in range(2)])
    X = np.stack([link.modulate(coded[n], c) for n in range(2)])
    pilots = link.generate_pilots(2, 4, c, s_pil)
    Z, Y = link.transmit_frame(task, pilots, X, s_tx)
    return dict(code=code, c=c, task=task, info=info, ils=ils, coded=coded, X=X, pilots=pilots, Z=Z, Y=Y)


class OracleEqualizer:
    """Emits one-hot PMFs at the transmitted symbols."""

    def __init__(self, X, c):
        d2 = np.abs(X.T[:, :, None] - c.points[None, None, :]) ** 2
        self.idx = d2.argmin(axis=2)  # (T, N_t)
        self.order = c.order

    def equalize(self, Z, pilots, Y, priors, iteration):
        T, n_t = self.idx.shape
        out = np.zeros((T, n_t, self.order))
        out[np.arange(T)[:, None], np.arange(n_t)[None, :], self.idx] = 1.0
        return out


class RecordingEqualizer:
    """Prior-ignoring equalizer that logs the priors it was handed."""

    def __init__(self, inner):
        self.inner = inner
        self.seen_priors = []
        self.posteriors = []

    def equalize(self, Z, pilots, Y, priors, iteration):
        self.seen_priors.append(np.array(priors, copy=True))
        uniform = np.full_like(np.asarray(priors, dtype=float), 1.0 / priors.shape[-1])
        post = self.inner.equalize(Z, pilots, Y, uniform, iteration)
        self.posteriors.append(np.array(post, copy=True))
        return post


class TestRunTurbo:
    def test_oracle_equalizer_zero_ber_early_stop(self, setup):
        eq = OracleEqualizer(setup["X"], setup["c"])
        decoded, trace = run_turbo(
            eq, setup["code"], setup["ils"], setup["Z"], setup["pilots"], setup["Y"],
            setup["c"], TurboConfig(n_iterations=5), truth=setup["info"],
        )
        assert len(trace) == 1  # early stop on first syndrome pass
        assert trace.ber[0] == 0.0
        assert all(trace.syndrome_ok[0])
        np.testing.assert_array_equal(decoded, setup["info"])

    def test_first_iteration_priors_uniform(self, setup):
        from turboeq.equalizers import LmmsePicEqualizer

        rec = RecordingEqualizer(LmmsePicEqualizer.perfect_csi(setup["task"], setup["c"]))
        run_turbo(
            rec, setup["code"], setup["ils"], setup["Z"], setup["pilots"], setup["Y"],
            setup["c"], TurboConfig(n_iterations=3), truth=setup["info"],
        )
        np.testing.assert_allclose(rec.seen_priors[0], 0.25, atol=1e-15)

    def test_prior_ignoring_equalizer_constant_posteriors(self, setup):
        """When the equalizer ignores priors, channel posteriors repeat across iterations."""
        from turboeq.equalizers import LmmsePicEqualizer

        rec = RecordingEqualizer(LmmsePicEqualizer.perfect_csi(setup["task"], setup["c"]))
        run_turbo(
            rec, setup["code"], setup["ils"], setup["Z"], setup["pilots"], setup["Y"],
            setup["c"], TurboConfig(n_iterations=4), truth=setup["info"],
        )
        for later in rec.posteriors[1:]:
            np.testing.assert_allclose(later, rec.posteriors[0], atol=1e-12)

    def test_single_iteration_equals_single_pass(self, setup):
        """n_iterations=1 reproduces equalize -> marginalize -> decode by hand."""
        from turboeq.equalizers import LmmsePicEqualizer

        eq = LmmsePicEqualizer.perfect_csi(setup["task"], setup["c"])
        code, c, ils = setup["code"], setup["c"], setup["ils"]
        decoded, trace = run_turbo(
            eq, code, ils, setup["Z"], setup["pilots"], setup["Y"], c,
            TurboConfig(n_iterations=1), truth=setup["info"],
        )
        T = setup["Y"].shape[1]
        uniform = np.full((T, 2, 4), 0.25)
        post = eq.equalize(setup["Z"], setup["pilots"], setup["Y"], uniform, 1)
        bound = float(-np.log(1e-12))
        llrs = softinfo.pmf_to_bitllrs(post.transpose(1, 0, 2), c, bound).reshape(2, code.n)
        llrs = np.clip(llrs, -16.0, 16.0)
        for n in range(2):
            res = fec.bp_decode(fec.deinterleave(llrs[n], ils[n]), code, 20)
            manual = fec.hard_decision(res.posterior_llrs[code.systematic_map])
            np.testing.assert_array_equal(decoded[n], manual)
        assert len(trace) == 1

    def test_invalid_pmf_rejected(self, setup):
        class BadEqualizer:
            def equalize(self, Z, pilots, Y, priors, iteration):
                out = np.full_like(np.asarray(priors, dtype=float), 0.3)
                return out

        with pytest.raises(ValueError):
            run_turbo(
                BadEqualizer(), setup["code"], setup["ils"], setup["Z"], setup["pilots"],
                setup["Y"], setup["c"], TurboConfig(n_iterations=1),
            )

    def test_interleaver_count_mismatch(self, setup):
        eq = OracleEqualizer(setup["X"], setup["c"])
        with pytest.raises(ValueError):
            run_turbo(
                eq, setup["code"], setup["ils"][:1], setup["Z"], setup["pilots"],
                setup["Y"], setup["c"], TurboConfig(n_iterations=1),
            )

    def test_trace_without_truth_has_nan_ber(self, setup):
        eq = OracleEqualizer(setup["X"], setup["c"])
        _, trace = run_turbo(
            eq, setup["code"], setup["ils"], setup["Z"], setup["pilots"], setup["Y"],
            setup["c"], TurboConfig(n_iterations=2),
        )
        assert np.isnan(trace.ber[0])

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TurboConfig(n_iterations=0)

    def test_extrinsic_chain_identity(self, setup, monkeypatch):
        """Each iteration's priors equal the re-interleaved clamp of decoder
        posterior minus the decoder's channel input, captured by instrumenting
        the decoder."""
        from turboeq import turbo as turbo_mod
        from turboeq.equalizers import LmmsePicEqualizer

        captured = []
        real_decode = fec.bp_decode

        def spy(llrs, code, max_iter=20):
            result = real_decode(llrs, code, max_iter)
            captured.append((np.array(llrs, copy=True), result.posterior_llrs.copy()))
            return result

        monkeypatch.setattr(turbo_mod.fec, "bp_decode", spy)
        rec = RecordingEqualizer(LmmsePicEqualizer.perfect_csi(setup["task"], setup["c"]))
        clip = 16.0
        run_turbo(
            rec, setup["code"], setup["ils"], setup["Z"], setup["pilots"], setup["Y"],
            setup["c"], TurboConfig(n_iterations=3, llr_clip=clip), truth=setup["info"],
        )
        n_iters = len(rec.seen_priors)
        n_t = 2
        for it in range(n_iters - 1):
            for n in range(n_t):
                chan_in, post = captured[it * n_t + n]
                expected_prior_llrs = fec.interleave(np.clip(post - chan_in, -clip, clip), setup["ils"][n])
                expected_pmf = softinfo.bitllrs_to_pmf(
                    expected_prior_llrs.reshape(-1, 2), setup["c"]
                )
                np.testing.assert_allclose(
                    rec.seen_priors[it + 1][:, n, :], expected_pmf, atol=1e-12
                )
