"""Experiment runner: Monte Carlo BER/FER sweeps over SNR and quantizer
resolution, deterministic per (config, seed), with delimited metrics output.

Frame seeds derive from SeedSequence([master, frame_index]), so grid points
share common random numbers (same channels, bits and noise innovations),
which tightens cross-SNR comparisons, and reruns reproduce metrics files
byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import fec, link
from .equalizers import (
    BussgangLmmsePicEqualizer,
    IclTurboEqualizer,
    LmmsePicEqualizer,
    MapEqualizer,
    RlsLmmsePicEqualizer,
)
from .icl.model import IclModel
from .classic import lmmse_pic, ls_estimate
from .turbo import TurboConfig, run_turbo

__all__ = [
    "EQUALIZER_NAMES",
    "ExperimentConfig",
    "MetricsRow",
    "snr_db_to_sigma2",
    "run_sweep",
    "write_metrics_csv",
    "read_metrics_csv",
    "run_uncoded_ser",
]

EQUALIZER_NAMES = (
    "rls_lmmse_pic",
    "blmmse_pic_perfect_csi",
    "map_perfect_csi",
    "icl_transformer",
    "icl_ssm",
)

CSV_HEADER = ["equalizer", "snr_db", "bits", "t_pilot", "rate", "turbo_iter", "frames", "bit_errors", "ber", "fer", "seed"]


def snr_db_to_sigma2(snr_db: float) -> float:
    """Noise variance at unit per-antenna symbol energy."""
    return 10.0 ** (-snr_db / 10.0)


@dataclass
class ExperimentConfig:
    n_t: int = 2
    n_r: int = 2
    mod_order: int = 4
    t_pilot: int = 8
    code: str = "regular_3_6_n256"
    rate_label: str = "1/2"
    snr_db: tuple = (4.0, 6.0, 8.0)
    bit_widths: tuple = (10,)
    n_iterations: int = 5
    llr_clip: float = 16.0
    bp_max_iter: int = 20
    equalizer: str = "rls_lmmse_pic"
    checkpoint: str | None = None
    frames: int = 100
    seed: int = 0
    l_min: float = -4.0
    l_max: float = 4.0
    bussgang_samples: int = 100_000

    def __post_init__(self):
        if self.frames < 1:
            raise ValueError("frame count must be at least 1")
        if self.equalizer not in EQUALIZER_NAMES:
            raise ValueError(f"unknown equalizer {self.equalizer!r}; pick one of {EQUALIZER_NAMES}")
        self.snr_db = tuple(float(s) for s in self.snr_db)
        self.bit_widths = tuple(int(b) for b in self.bit_widths)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            raw = json.load(fh)
        return cls(**raw)


@dataclass
class MetricsRow:
    equalizer: str
    snr_db: float
    bits: int
    t_pilot: int
    rate: str
    turbo_iter: int
    frames: int
    bit_errors: int
    ber: float
    fer: float
    seed: int


def _load_code(name: str) -> fec.LdpcCode:
    if Path(name).exists():
        return fec.load_alist(name)
    return fec.load_builtin_code(name)


def _make_equalizer(cfg: ExperimentConfig, task: link.Task, c, model, eq_seed):
    name = cfg.equalizer
    if name == "rls_lmmse_pic":
        return RlsLmmsePicEqualizer(c)
    if name == "blmmse_pic_perfect_csi":
        return BussgangLmmsePicEqualizer(task, c, cfg.bussgang_samples, eq_seed)
    if name == "map_perfect_csi":
        return MapEqualizer(task, c)
    if name in ("icl_transformer", "icl_ssm"):
        if model is None:
            raise ValueError(f"equalizer {name} needs a trained checkpoint")
        return IclTurboEqualizer(model)
    raise ValueError(name)


def _run_frame(cfg: ExperimentConfig, code, c, snr_db, bits, frame_idx, model):
    ss = np.random.SeedSequence([cfg.seed, frame_idx])
    s_task, s_bits, s_pilot, s_il, s_tx, s_eq = ss.spawn(6)
    rng_task = np.random.default_rng(s_task)
    H = (rng_task.standard_normal((cfg.n_r, cfg.n_t)) + 1j * rng_task.standard_normal((cfg.n_r, cfg.n_t))) / np.sqrt(2.0)
    task = link.Task(H=H, sigma2=snr_db_to_sigma2(snr_db), quant=link.QuantizerSpec(cfg.l_min, cfg.l_max, bits))

    rng_bits = np.random.default_rng(s_bits)
    info = rng_bits.integers(0, 2, size=(cfg.n_t, code.k)).astype(np.uint8)
    il_seeds = s_il.spawn(cfg.n_t)
    interleavers = [fec.Interleaver.random(code.n, il_seeds[n]) for n in range(cfg.n_t)]
    X = np.stack(
        [link.modulate(fec.interleave(fec.encode(info[n], code), interleavers[n]), c) for n in range(cfg.n_t)]
    )
    pilots = link.generate_pilots(cfg.n_t, cfg.t_pilot, c, s_pilot)
    Z, Y = link.transmit_frame(task, pilots, X, s_tx)

    eq = _make_equalizer(cfg, task, c, model, s_eq)
    turbo_cfg = TurboConfig(n_iterations=cfg.n_iterations, llr_clip=cfg.llr_clip, bp_max_iter=cfg.bp_max_iter)
    _, trace = run_turbo(eq, code, interleavers, Z, pilots, Y, c, turbo_cfg, truth=info)

    # extend converged traces so every iteration index gets a row
    errors = [int(round(b * cfg.n_t * code.k)) for b in trace.ber]
    fers = list(trace.fer)
    while len(errors) < cfg.n_iterations:
        errors.append(errors[-1])
        fers.append(fers[-1])
    return errors, fers


def run_sweep(cfg: ExperimentConfig, progress=None) -> list:
    """Monte Carlo sweep over the (snr_db x bit_widths) grid; one row per turbo iteration."""
    code = _load_code(cfg.code)
    c = link.build_constellation(cfg.mod_order)
    model = None
    if cfg.equalizer in ("icl_transformer", "icl_ssm"):
        if not cfg.checkpoint:
            raise ValueError("ICL equalizers require a checkpoint path")
        model = IclModel.from_checkpoint(cfg.checkpoint)
        backbone = "transformer" if cfg.equalizer == "icl_transformer" else "ssm"
        if model.cfg.backbone != backbone:
            raise ValueError(f"checkpoint backbone {model.cfg.backbone!r} does not match {cfg.equalizer!r}")

    rows = []
    for snr in cfg.snr_db:
        for bits in cfg.bit_widths:
            err_per_iter = np.zeros(cfg.n_iterations, dtype=np.int64)
            fer_per_iter = np.zeros(cfg.n_iterations, dtype=np.int64)
            for frame_idx in range(cfg.frames):
                errors, fers = _run_frame(cfg, code, c, snr, bits, frame_idx, model)
                err_per_iter += np.asarray(errors, dtype=np.int64)
                fer_per_iter += np.asarray(fers, dtype=np.int64)
                if progress:
                    progress(snr, bits, frame_idx)
            denom = cfg.frames * code.k * cfg.n_t
            for it in range(cfg.n_iterations):
                rows.append(
                    MetricsRow(
                        equalizer=cfg.equalizer,
                        snr_db=snr,
                        bits=bits,
                        t_pilot=cfg.t_pilot,
                        rate=cfg.rate_label,
                        turbo_iter=it + 1,
                        frames=cfg.frames,
                        bit_errors=int(err_per_iter[it]),
                        ber=err_per_iter[it] / denom,
                        fer=fer_per_iter[it] / cfg.frames,
                        seed=cfg.seed,
                    )
                )
    return rows


def write_metrics_csv(path, rows, cfg: ExperimentConfig | None = None) -> None:
    lines = ["# turboeq metrics v1"]
    lines.append("# snr_definition: sigma2 = 10^(-snr_db/10) at unit per-antenna symbol energy")
    if cfg is not None:
        lines.append("# config: " + json.dumps(asdict(cfg), sort_keys=True))
    lines.append(",".join(CSV_HEADER))
    for r in rows:
        lines.append(
            ",".join(
                [
                    r.equalizer,
                    f"{r.snr_db:.6g}",
                    str(r.bits),
                    str(r.t_pilot),
                    r.rate,
                    str(r.turbo_iter),
                    str(r.frames),
                    str(r.bit_errors),
                    f"{r.ber:.12g}",
                    f"{r.fer:.12g}",
                    str(r.seed),
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_metrics_csv(path) -> list:
    rows = []
    for line in Path(path).read_text(encoding="ascii").splitlines():
        if not line or line.startswith("#") or line.startswith(CSV_HEADER[0] + ","):
            continue
        parts = line.split(",")
        rows.append(
            MetricsRow(
                equalizer=parts[0],
                snr_db=float(parts[1]),
                bits=int(parts[2]),
                t_pilot=int(parts[3]),
                rate=parts[4],
                turbo_iter=int(parts[5]),
                frames=int(parts[6]),
                bit_errors=int(parts[7]),
                ber=float(parts[8]),
                fer=float(parts[9]),
                seed=int(parts[10]),
            )
        )
    return rows


def run_uncoded_ser(
    kind: str,
    n_t: int,
    n_r: int,
    mod_order: int,
    t_pilot: int,
    snr_db: float,
    bits: int,
    n_frames: int,
    symbols_per_frame: int,
    seed: int,
    model: IclModel | None = None,
    l_min: float = -4.0,
    l_max: float = 4.0,
):
    """Uncoded symbol error rate with uniform priors; returns (errors, total, per-frame SER array).

    ``kind`` selects the detector: "icl" (cached queries), "ls_lmmse"
    (LS estimate then LMMSE-PIC), or "map" (perfect CSI).  Frames share the
    seed schedule of :func:`run_sweep`, so different detectors evaluated at
    the same seed see identical channels and noise.
    """
    c = link.build_constellation(mod_order)
    sigma2 = snr_db_to_sigma2(snr_db)
    errors = 0
    total = 0
    per_frame = []
    for frame_idx in range(n_frames):
        ss = np.random.SeedSequence([seed, frame_idx])
        s_task, s_sym, s_pilot, s_tx = ss.spawn(4)
        rng_task = np.random.default_rng(s_task)
        H = (rng_task.standard_normal((n_r, n_t)) + 1j * rng_task.standard_normal((n_r, n_t))) / np.sqrt(2.0)
        task = link.Task(H=H, sigma2=sigma2, quant=link.QuantizerSpec(l_min, l_max, bits))
        rng_sym = np.random.default_rng(s_sym)
        idx_true = rng_sym.integers(0, mod_order, size=(symbols_per_frame, n_t))
        X = c.points[idx_true].T  # (N_t, T)
        pilots = link.generate_pilots(n_t, t_pilot, c, s_pilot)
        Z, Y = link.transmit_frame(task, pilots, X, s_tx)
        uniform = np.full((symbols_per_frame, n_t, mod_order), 1.0 / mod_order)

        if kind == "icl":
            if model is None:
                raise ValueError("kind 'icl' needs a model")
            cache = model.build_context_cache(Z, pilots)
            probs = model.query_with_cache(cache, Y.T, uniform.reshape(symbols_per_frame, -1))
            post = probs.reshape(symbols_per_frame, n_t, mod_order)
        elif kind == "ls_lmmse":
            est = ls_estimate(Z, pilots)
            post = lmmse_pic(est, Y, uniform, c)
        elif kind == "map":
            from .classic import map_equalize

            post = map_equalize(task, Y, uniform, c)
        else:
            raise ValueError(f"unknown detector kind {kind!r}")

        idx_hat = post.argmax(axis=2)
        frame_err = int(np.sum(idx_hat != idx_true))
        errors += frame_err
        total += symbols_per_frame * n_t
        per_frame.append(frame_err / (symbols_per_frame * n_t))
    return errors, total, np.asarray(per_frame)
