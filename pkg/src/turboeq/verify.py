"""Built-in verification suites behind the ``gradcheck`` and ``selftest`` CLI
subcommands: finite-difference gradient checks for every primitive and both
full backbones, and fast invariant checks over the soft-information algebra,
quantizer, causality, cache equivalence, and BP decoding.
"""

from __future__ import annotations

import numpy as np

from . import fec, link, softinfo
from . import tensor as tz
from .icl import IclConfig, IclModel, tokenize_inference

__all__ = ["gradient_suite", "selftest_suite", "PRIMITIVE_TOL", "LAYER_TOL"]

PRIMITIVE_TOL = 1e-6
LAYER_TOL = 1e-4


def _probe_loss(builder, probe):
    """Scalar contraction of a tensor-valued builder against a fixed probe array."""

    def f(ts):
        return tz.tsum(tz.mul(builder(ts), tz.Tensor(probe)))

    return f


def gradient_suite(seed: int = 0) -> list:
    """Finite-difference checks; returns (name, max_rel_error, tolerance) triples."""
    rng = np.random.default_rng(seed)
    results = []

    def prim(name, builder, *shapes):
        xs = [rng.standard_normal(s) for s in shapes]
        with tz.no_grad():
            out_shape = builder([tz.Tensor(x) for x in xs]).shape
        probe = rng.standard_normal(out_shape)
        err = tz.grad_check(_probe_loss(builder, probe), xs, step=1e-5)
        results.append((name, err, PRIMITIVE_TOL))

    prim("matmul", lambda ts: ts[0] @ ts[1], (4, 5), (5, 3))
    prim("matmul_batched", lambda ts: ts[0] @ ts[1], (2, 4, 5), (5, 3))
    prim("add_broadcast", lambda ts: ts[0] + ts[1], (4, 5), (5,))
    prim("scale", lambda ts: tz.scale(ts[0], -1.7), (4, 5))
    prim("mul", lambda ts: tz.mul(ts[0], ts[1]), (4, 5), (4, 5))
    prim("layer_norm", lambda ts: tz.layer_norm(ts[0]), (4, 5))
    prim("gelu", lambda ts: tz.gelu(ts[0]), (4, 5))
    prim("softmax", lambda ts: tz.softmax(ts[0]), (4, 5))
    prim("softplus", lambda ts: tz.softplus(ts[0]), (4, 5))
    prim("sigmoid", lambda ts: tz.sigmoid(ts[0]), (4, 5))
    prim("concat", lambda ts: tz.concat(ts, axis=1), (3, 2), (3, 4))
    prim("slice", lambda ts: ts[0][:, 1::2], (3, 6))
    prim("sum", lambda ts: tz.tsum(ts[0], axis=0), (4, 5))
    prim("log", lambda ts: tz.log(tz.maximum(ts[0], 0.5)), (4, 5))

    a_mat = np.tril(-np.abs(rng.standard_normal((4, 4)))) - np.eye(4)
    prim(
        "tri_solve",
        lambda ts: tz.tri_solve(a_mat, tz.softplus(ts[0]), ts[1]),
        (3, 2, 1),
        (3, 2, 4),
    )

    def model_check(name, backbone):
        cfg = IclConfig(
            backbone=backbone, n_t=2, n_r=2, mod_order=4, n_layers=2, d_embed=8,
            n_heads=2, d_ffn=12, d_state=4, init_seed=seed + 1,
        )
        model = IclModel(cfg)
        toks = rng.standard_normal((1, 5, cfg.token_width))
        with tz.no_grad():
            out_shape = model.forward_tokens(toks).shape
        probe = rng.standard_normal(out_shape)
        names = model.params.names()
        err = tz.grad_check(
            _probe_loss(lambda ts, m=model, t=toks: m.forward_tokens(t), probe),
            [model.params[n] for n in names],
            step=1e-5,
        )
        results.append((name, err, LAYER_TOL))

    model_check("transformer_stack", "transformer")
    model_check("ssm_stack", "ssm")

    # full training loss graph, answers included
    from .pretrain import position_weights, weighted_ce

    cfg = IclConfig(backbone="transformer", n_layers=1, d_embed=8, n_heads=2, d_ffn=12, init_seed=seed + 2)
    model = IclModel(cfg)
    t_train = 3
    toks = rng.standard_normal((1, 2 * t_train, cfg.token_width))
    answers = rng.integers(0, cfg.mod_order, size=(1, t_train, cfg.n_t))
    weights = position_weights(t_train, 0.5)

    def loss_f(ts):
        probs = model.forward_tokens(toks)
        return weighted_ce(probs[:, 0::2, :], answers, weights, cfg.n_t, cfg.mod_order)

    err = tz.grad_check(loss_f, [model.params[n] for n in model.params.names()], step=1e-5)
    results.append(("training_loss_graph", err, LAYER_TOL))
    return results


def _check(results, name, ok, detail=""):
    results.append((name, bool(ok), detail))


def selftest_suite(seed: int = 0) -> list:
    """Fast invariant checks; returns (name, passed, detail) triples."""
    rng = np.random.default_rng(seed)
    results = []

    # soft-information round trip
    c4 = link.build_constellation(4)
    c16 = link.build_constellation(16)
    worst = 0.0
    for c in (c4, c16):
        L = rng.uniform(-10, 10, size=(500, c.bits_per_symbol))
        back = softinfo.pmf_to_bitllrs(softinfo.bitllrs_to_pmf(L, c), c)
        worst = max(worst, float(np.abs(back - L).max()))
    _check(results, "softinfo_round_trip", worst < 1e-9, f"max abs err {worst:.2e}")

    # quantizer: idempotent, monotone, on-alphabet
    spec = link.QuantizerSpec(-4, 4, 3)
    v = rng.uniform(-8, 8, size=2000)
    q1 = link.quantize(v, spec)
    q2 = link.quantize(q1, spec)
    mono = np.all(np.diff(link.quantize(np.sort(v), spec)) >= 0)
    on_alphabet = np.isin(q1, spec.levels).all()
    _check(results, "quantizer_properties", np.array_equal(q1, q2) and mono and on_alphabet, "")

    # causality and cache equivalence for both backbones
    task = link.sample_task(link.TaskDistribution(), seed=rng.integers(2**32))
    pilots = link.generate_pilots(2, 4, c4, seed=rng.integers(2**32))
    Z, _ = link.transmit_frame(task, pilots, pilots, seed=rng.integers(2**32))
    y = link.quantize(rng.standard_normal((8, 2)) + 1j * rng.standard_normal((8, 2)), task.quant)
    p = np.full((8, 8), 0.25)
    for backbone in ("transformer", "ssm"):
        cfg = IclConfig(backbone=backbone, d_embed=16, n_layers=2, n_heads=2, d_ffn=32, d_state=4, init_seed=seed)
        model = IclModel(cfg)
        prompt = tokenize_inference(Z, pilots, y[0], p[0]).tokens
        with tz.no_grad():
            base = model.forward_tokens(prompt[None]).data[0]
            bumped = prompt.copy()
            bumped[-1, 0] += 1.0
            pert = model.forward_tokens(bumped[None]).data[0]
        leak = float(np.abs(base[:-1] - pert[:-1]).max())
        cache = model.build_context_cache(Z, pilots)
        diff = float(np.abs(model.equalize(Z, pilots, y, p) - model.query_with_cache(cache, y, p)).max())
        _check(results, f"{backbone}_causality", leak < 1e-12, f"leak {leak:.2e}")
        _check(results, f"{backbone}_cache_equivalence", diff < 1e-12, f"max diff {diff:.2e}")

    # BP noiseless decode
    code = fec.load_builtin_code("regular_3_6_n96")
    ok = True
    for _ in range(20):
        info = rng.integers(0, 2, code.k)
        cw = fec.encode(info, code)
        llr = np.where(cw == 1, 20.0, -20.0)
        res = fec.bp_decode(llr, code)
        ok &= res.syndrome_ok and res.iterations_used == 0
    _check(results, "bp_noiseless", ok, "")
    return results
