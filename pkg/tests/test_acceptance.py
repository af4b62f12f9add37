"""Acceptance suite: one test per criterion, each at its stated tolerance,
printing a PASS line with the measured value (run with -s to see them).

Criterion 6 trains the desk-scale Transformer from scratch (~5000 steps,
deterministic; several minutes of wall time shared with criterion 7).  Set
TURBOEQ_ACCEPT_CKPT to a checkpoint produced with the same recipe to skip the
in-test training during development.
"""

import os
import time

import numpy as np
import pytest

from oracles import oracle_map
from turboeq import classic, fec, link, softinfo, verify
from turboeq.equalizers import LmmsePicEqualizer
from turboeq.harness import ExperimentConfig, run_sweep, run_uncoded_ser, write_metrics_csv
from turboeq.icl import IclConfig, IclModel, tokenize_inference
from turboeq.link import TaskDistribution
from turboeq.pretrain import TaskPool, TrainConfig, per_position_loss, train
from turboeq.turbo import TurboConfig, run_turbo
from turboeq import tensor as tz

DESK_MODEL_CONFIG = IclConfig(
    backbone="transformer",
    n_t=2,
    n_r=2,
    mod_order=4,
    n_layers=2,
    d_embed=64,
    n_heads=4,
    d_ffn=256,
    max_seq_len=96,
    use_positional_embedding=True,
    init_seed=0,
)
DESK_TRAIN_CONFIG = dict(
    t_train=16,
    batch_size=128,
    iterations_per_epoch=200,
    epochs=25,  # 5000 steps
    peak_lr=1e-3,
)
DESK_POOL = dict(n_tasks=256, seed=1, bit_widths=(2, 3, 4, 10))
DESK_TRAIN_SEED = 2


def _report(criterion: str, detail: str) -> None:
    print(f"\nPASS criterion {criterion}: {detail}")


@pytest.fixture(scope="module")
def desk_model():
    """The criterion-6 desk-scale Transformer, trained in-test unless a checkpoint is supplied."""
    env = os.environ.get("TURBOEQ_ACCEPT_CKPT")
    if env and os.path.exists(env):
        model = IclModel.from_checkpoint(env)
        assert model.cfg == DESK_MODEL_CONFIG, "supplied checkpoint does not match the desk recipe"
        return model, None
    pool = TaskPool.sample(
        TaskDistribution(bit_widths=DESK_POOL["bit_widths"]), DESK_POOL["n_tasks"], DESK_POOL["seed"]
    )
    model = IclModel(DESK_MODEL_CONFIG)
    cfg = TrainConfig(**DESK_TRAIN_CONFIG)
    start = time.time()
    train(model, pool, cfg, seed=DESK_TRAIN_SEED)
    minutes = (time.time() - start) / 60
    assert minutes <= 30.0, f"desk training took {minutes:.1f} min, over the 30 min budget"
    return model, minutes


def test_criterion_1_map_oracle_equivalence():
    """MAP marginals match an independent brute-force enumeration to 1e-12."""
    start = time.time()
    c = link.build_constellation(4)
    rng = np.random.default_rng(101)
    worst = 0.0
    for trial in range(20):
        task = link.Task(
            H=(rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))) / np.sqrt(2),
            sigma2=float(rng.uniform(1e-3, 1.0)),
            quant=link.QuantizerSpec(-4, 4, int(rng.choice([2, 3, 4, 10]))),
        )
        idx = rng.integers(0, 4, size=(6, 2))
        X = c.points[idx].T
        _, Y = link.transmit_frame(task, X, X, seed=trial)
        priors = np.full((6, 2, 4), 0.25)
        ours = classic.map_equalize(task, Y, priors, c)
        ref = oracle_map(task, Y, priors, c)
        worst = max(worst, float(np.abs(ours - ref).max()))
    assert worst < 1e-12
    _report("1 (MAP oracle equivalence)", f"max abs deviation {worst:.2e} over 20 tasks, {time.time()-start:.1f}s")


def test_criterion_2_soft_algebra_round_trip():
    """pmf_to_bitllrs(bitllrs_to_pmf(L)) = L within 1e-9 for |L| <= 10, M in {4, 16}."""
    start = time.time()
    rng = np.random.default_rng(202)
    worst = 0.0
    for M in (4, 16):
        c = link.build_constellation(M)
        L = rng.uniform(-10, 10, size=(10_000, c.bits_per_symbol))
        back = softinfo.pmf_to_bitllrs(softinfo.bitllrs_to_pmf(L, c), c, clip=50.0)
        worst = max(worst, float(np.abs(back - L).max()))
    assert worst < 1e-9
    _report("2 (soft-algebra round trip)", f"max abs error {worst:.2e}, {time.time()-start:.1f}s")


def test_criterion_3_gradient_suite():
    """Primitives under 1e-6 and full layer stacks under 1e-4 against finite differences."""
    start = time.time()
    results = verify.gradient_suite(seed=0)
    for name, err, tol in results:
        assert err < tol, f"{name}: {err:.3e} >= {tol}"
    prim = max(err for name, err, tol in results if tol == verify.PRIMITIVE_TOL)
    layer = max(err for name, err, tol in results if tol == verify.LAYER_TOL)
    _report(
        "3 (gradient suite)",
        f"worst primitive {prim:.2e} (<1e-6), worst layer {layer:.2e} (<1e-4), {time.time()-start:.1f}s",
    )


def test_criterion_4_causality_and_cache_equivalence():
    """Future-token perturbations leave past outputs fixed; caching matches the
    uncached forward to 1e-12 over 100 random prompts, both backbones."""
    start = time.time()
    c = link.build_constellation(4)
    worst_leak = 0.0
    worst_cache = 0.0
    rng = np.random.default_rng(404)
    for backbone in ("transformer", "ssm"):
        cfg = IclConfig(
            backbone=backbone, n_layers=2, d_embed=32, n_heads=4, d_ffn=64, d_state=8, init_seed=7
        )
        model = IclModel(cfg)
        for trial in range(50):
            task = link.sample_task(TaskDistribution(), seed=(trial, 1))
            t_p = int(rng.integers(2, 9))
            pilots = link.generate_pilots(2, t_p, c, seed=(trial, 2))
            Z, _ = link.transmit_frame(task, pilots, pilots, seed=(trial, 3))
            y = link.quantize(rng.standard_normal(2) + 1j * rng.standard_normal(2), task.quant)
            p = rng.dirichlet(np.ones(4), size=2).ravel()
            prompt = tokenize_inference(Z, pilots, y, p).tokens
            with tz.no_grad():
                base = model.forward_tokens(prompt[None]).data[0]
                bumped = prompt.copy()
                pos = int(rng.integers(1, prompt.shape[0]))
                bumped[pos] += rng.standard_normal(prompt.shape[1])
                pert = model.forward_tokens(bumped[None]).data[0]
            worst_leak = max(worst_leak, float(np.abs(pert[:pos] - base[:pos]).max()))
            cache = model.build_context_cache(Z, pilots)
            cached = model.query_with_cache(cache, y, p)
            direct = model.equalize(Z, pilots, y, p)
            worst_cache = max(worst_cache, float(np.abs(cached - direct).max()))
    assert worst_leak < 1e-12
    assert worst_cache < 1e-12
    _report(
        "4 (causality + cache equivalence)",
        f"max causal leak {worst_leak:.2e}, max cache deviation {worst_cache:.2e}, {time.time()-start:.1f}s",
    )


def test_criterion_5_turbo_gain_classical():
    """Perfect-CSI LMMSE-PIC at SNR 5 dB (iteration-1 BER in [1e-2, 1e-1]):
    fifth-iteration BER at most half the first-iteration BER over 300 frames."""
    start = time.time()
    code = fec.load_builtin_code("regular_3_6_n256")
    c = link.build_constellation(4)
    cfg = TurboConfig(n_iterations=5)
    n_frames = 300
    errs = np.zeros(5)
    for f in range(n_frames):
        ss = np.random.SeedSequence([505, f])
        s_task, s_bits, s_pil, s_il, s_tx = ss.spawn(5)
        rng = np.random.default_rng(s_task)
        H = (rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))) / np.sqrt(2)
        task = link.Task(H=H, sigma2=10 ** (-5.0 / 10.0), quant=link.QuantizerSpec(-4, 4, 10))
        info = np.random.default_rng(s_bits).integers(0, 2, size=(2, code.k)).astype(np.uint8)
        ils = [fec.Interleaver.random(code.n, s) for s in s_il.spawn(2)]
        X = np.stack(
            [link.modulate(fec.interleave(fec.encode(info[n], code), ils[n]), c) for n in range(2)]
        )
        pilots = link.generate_pilots(2, 8, c, s_pil)
        Z, Y = link.transmit_frame(task, pilots, X, s_tx)
        eq = LmmsePicEqualizer.perfect_csi(task, c)
        _, trace = run_turbo(eq, code, ils, Z, pilots, Y, c, cfg, truth=info)
        per_iter = list(trace.ber) + [trace.ber[-1]] * (5 - len(trace.ber))
        errs += np.asarray(per_iter) * 2 * code.k
    ber = errs / (n_frames * 2 * code.k)
    assert 1e-2 <= ber[0] <= 1e-1, f"iteration-1 BER {ber[0]:.4f} outside the required band"
    assert ber[4] <= ber[0] / 2, f"BER5 {ber[4]:.4f} > BER1/2 {ber[0]/2:.4f}"
    _report(
        "5 (classical turbo gain)",
        f"BER1 {ber[0]:.4f} -> BER5 {ber[4]:.4f} (ratio {ber[4]/ber[0]:.2f}) over {n_frames} frames, "
        f"{time.time()-start:.0f}s",
    )


def test_criterion_6_icl_signature(desk_model):
    """Desk-scale training shows the ICL signature: (a) later positions beat
    position 1, (b) more pilots help at SNR 10 dB, (c) a true one-hot prior
    raises the posterior mass on the true symbol."""
    model, minutes = desk_model
    start = time.time()

    pool = TaskPool.sample(
        TaskDistribution(bit_widths=DESK_POOL["bit_widths"]), DESK_POOL["n_tasks"], DESK_POOL["seed"]
    )
    cfg = TrainConfig(**DESK_TRAIN_CONFIG)
    pp = per_position_loss(model, pool, cfg, seed=99, n_prompts=128)
    assert pp[-1] < pp[0], f"per-position loss did not improve: j=1 {pp[0]:.3f}, j=T {pp[-1]:.3f}"

    sers = []
    for t_p in (2, 4, 8):
        err, tot, _ = run_uncoded_ser(
            "icl", 2, 2, 4, t_p, 10.0, 10, n_frames=100, symbols_per_frame=32, seed=606, model=model
        )
        sers.append(err / tot)
    assert sers[2] < sers[0], f"SER did not improve with pilot length: {sers}"

    c = link.build_constellation(4)
    rng = np.random.default_rng(607)
    mean_uniform = []
    mean_onehot = []
    for f in range(50):
        ss = np.random.SeedSequence([608, f])
        s_task, s_sym, s_pil, s_tx = ss.spawn(4)
        rt = np.random.default_rng(s_task)
        H = (rt.standard_normal((2, 2)) + 1j * rt.standard_normal((2, 2))) / np.sqrt(2)
        task = link.Task(H=H, sigma2=0.1, quant=link.QuantizerSpec(-4, 4, 4))
        idx = np.random.default_rng(s_sym).integers(0, 4, size=(16, 2))
        X = c.points[idx].T
        pilots = link.generate_pilots(2, 4, c, s_pil)
        Z, Y = link.transmit_frame(task, pilots, X, s_tx)
        cache = model.build_context_cache(Z, pilots)
        uniform = np.full((16, 8), 0.25)
        onehot = np.zeros((16, 2, 4))
        onehot[np.arange(16)[:, None], np.arange(2)[None, :], idx] = 1.0
        pu = model.query_with_cache(cache, Y.T, uniform).reshape(16, 2, 4)
        po = model.query_with_cache(cache, Y.T, onehot.reshape(16, 8)).reshape(16, 2, 4)
        sel = (np.arange(16)[:, None], np.arange(2)[None, :], idx)
        mean_uniform.append(pu[sel].mean())
        mean_onehot.append(po[sel].mean())
    up, oh = float(np.mean(mean_uniform)), float(np.mean(mean_onehot))
    assert oh > up, f"one-hot prior did not raise the true-symbol posterior: {oh:.3f} vs {up:.3f}"

    trained = "pretrained checkpoint" if minutes is None else f"trained in {minutes:.1f} min"
    _report(
        "6 (ICL signature)",
        f"{trained}; position loss {pp[0]:.2f}->{pp[-1]:.2f}; SER vs T_P {[round(s, 3) for s in sers]}; "
        f"true-symbol posterior {up:.3f}->{oh:.3f} with one-hot prior; eval {time.time()-start:.0f}s",
    )


def test_criterion_7_quantization_robustness(desk_model):
    """At 3-bit resolution the ICL equalizer's uncoded SER is no worse than
    LS + LMMSE with 8 pilots, within two standard errors (paired frames)."""
    model, _ = desk_model
    start = time.time()
    n_frames, sym = 80, 32  # 80 * 32 * 2 = 5120 symbols
    _, _, icl_frames = run_uncoded_ser(
        "icl", 2, 2, 4, 8, 10.0, 3, n_frames, sym, seed=707, model=model
    )
    _, _, ls_frames = run_uncoded_ser("ls_lmmse", 2, 2, 4, 8, 10.0, 3, n_frames, sym, seed=707)
    diff = ls_frames - icl_frames  # positive favours ICL
    se = diff.std(ddof=1) / np.sqrt(n_frames)
    assert diff.mean() >= -2 * se, (
        f"ICL SER {icl_frames.mean():.4f} worse than LS+LMMSE {ls_frames.mean():.4f} "
        f"beyond 2 standard errors ({se:.4f})"
    )
    _report(
        "7 (quantization robustness)",
        f"SER at B=3: ICL {icl_frames.mean():.4f} vs LS+LMMSE {ls_frames.mean():.4f} "
        f"(margin {diff.mean():.4f} +- {se:.4f}, {n_frames * sym * 2} symbols), {time.time()-start:.0f}s",
    )


def test_criterion_8_determinism(tmp_path):
    """Identical (config, seed) reproduce metrics CSVs byte for byte and
    training checkpoints bit for bit."""
    start = time.time()
    cfg = ExperimentConfig(
        n_t=2, n_r=2, mod_order=4, t_pilot=4, code="regular_3_6_n96",
        snr_db=(6.0,), bit_widths=(4,), n_iterations=2,
        equalizer="blmmse_pic_perfect_csi", frames=5, seed=11,
    )
    p1, p2 = tmp_path / "m1.csv", tmp_path / "m2.csv"
    write_metrics_csv(p1, run_sweep(cfg), cfg)
    write_metrics_csv(p2, run_sweep(cfg), cfg)
    assert p1.read_bytes() == p2.read_bytes()

    ckpts = []
    for run in range(2):
        model = IclModel(IclConfig(n_layers=1, d_embed=12, n_heads=2, d_ffn=16, max_seq_len=16, init_seed=1))
        pool = TaskPool.sample(TaskDistribution(bit_widths=(4,)), 4, seed=7)
        tc = TrainConfig(t_train=4, batch_size=4, iterations_per_epoch=5, epochs=1, peak_lr=1e-3)
        train(model, pool, tc, seed=42)
        path = tmp_path / f"ckpt{run}"
        model.save(path)
        ckpts.append(path.read_bytes())
    assert ckpts[0] == ckpts[1]
    _report("8 (determinism)", f"CSV bytes and checkpoint bits identical across reruns, {time.time()-start:.0f}s")


def test_criterion_9_fec_sanity():
    """Noiseless BP succeeds with zero message rounds on 1000 codewords; a
    single high-confidence flip is corrected in at least 99% of 1000 trials."""
    start = time.time()
    code = fec.load_builtin_code("regular_3_6_n96")
    rng = np.random.default_rng(909)
    for _ in range(1000):
        cw = fec.encode(rng.integers(0, 2, code.k), code)
        res = fec.bp_decode(np.where(cw == 1, 20.0, -20.0), code)
        assert res.syndrome_ok and res.iterations_used == 0
    corrected = 0
    for _ in range(1000):
        cw = fec.encode(rng.integers(0, 2, code.k), code)
        llr = np.where(cw == 1, 18.0, -18.0)
        llr[rng.integers(0, code.n)] *= -1
        res = fec.bp_decode(llr, code)
        corrected += res.syndrome_ok and (fec.hard_decision(res.posterior_llrs) == cw).all()
    assert corrected >= 990
    _report(
        "9 (FEC sanity)",
        f"1000/1000 noiseless zero-round decodes, {corrected}/1000 single flips corrected, "
        f"{time.time()-start:.0f}s",
    )
