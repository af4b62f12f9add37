"""Iterative exchange between a soft equalizer and the BP decoder.

One frame carries an independently encoded codeword per transmit stream.  Each
turbo iteration converts prior LLRs to symbol PMFs, equalizes, extracts
channel-extrinsic LLRs, deinterleaves, BP-decodes per stream, and feeds the
re-interleaved decoder-extrinsic LLRs back as the next priors.  Iteration 1
always starts from exactly uniform priors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from . import fec, softinfo
from .link import Constellation

__all__ = ["SoftEqualizer", "TurboConfig", "IterationTrace", "run_turbo"]

# Posterior marginals are capped by the PMF sum floor (ln 1e12); the loop clips
# only extrinsic differences at the configured bound.  Clipping the posterior
# at the prior's own bound zeroes the extrinsic for confident bits and stalls
# the iteration gain.
_POSTERIOR_LLR_BOUND = float(-np.log(1e-12))


class SoftEqualizer(Protocol):
    """Contract every soft equalizer implements for the turbo loop.

    ``priors`` and the returned posteriors are (T, N_t, M) PMF arrays; the
    implementation must not mutate its inputs.  ``iteration`` counts from 1.
    """

    def equalize(
        self,
        Z: np.ndarray,
        pilots: np.ndarray,
        Y: np.ndarray,
        priors: np.ndarray,
        iteration: int,
    ) -> np.ndarray: ...


@dataclass(frozen=True)
class TurboConfig:
    n_iterations: int = 5
    llr_clip: float = softinfo.DEFAULT_LLR_CLIP
    bp_max_iter: int = 20

    def __post_init__(self):
        if self.n_iterations < 1:
            raise ValueError("need at least one turbo iteration")


@dataclass
class IterationTrace:
    """Per-iteration diagnostics; BER/FER entries are NaN/False when truth is unknown."""

    ber: list = field(default_factory=list)
    fer: list = field(default_factory=list)
    mean_abs_extrinsic: list = field(default_factory=list)
    syndrome_ok: list = field(default_factory=list)  # tuple of bools per stream

    def __len__(self):
        return len(self.ber)


def run_turbo(
    equalizer: SoftEqualizer,
    code: fec.LdpcCode,
    interleavers: list,
    Z: np.ndarray,
    pilots: np.ndarray,
    Y: np.ndarray,
    c: Constellation,
    cfg: TurboConfig,
    truth: np.ndarray | None = None,
):
    """Run the full turbo loop on one frame.

    ``interleavers`` holds one
    :class:`~turboeq.fec.Interleaver` per transmit stream and ``truth``
    optionally the (N_t, K) information bits for BER tracking.  Returns
    (decoded info bits (N_t, K), IterationTrace).  Terminates early once every
    stream's syndrome is satisfied.
    """
    n_t = pilots.shape[0]
    T = Y.shape[1]
    q = c.bits_per_symbol
    if len(interleavers) != n_t:
        raise ValueError(f"need one interleaver per stream, got {len(interleavers)} for {n_t}")
    if T * q != code.n:
        raise ValueError(f"data length {T} x {q} bits does not match codeword length {code.n}")

    prior_llrs = np.zeros((n_t, code.n))  # interleaved domain, uniform at iteration 1
    trace = IterationTrace()
    decoded = np.zeros((n_t, code.k), dtype=np.uint8)

    for it in range(1, cfg.n_iterations + 1):
        priors = softinfo.bitllrs_to_pmf(prior_llrs.reshape(n_t, T, q), c)  # (N_t, T, M)
        posteriors = equalizer.equalize(Z, pilots, Y, priors.transpose(1, 0, 2), it)
        posteriors = np.asarray(posteriors)
        softinfo.check_pmf(posteriors.reshape(-1, c.order), c.order)

        post_llrs = softinfo.pmf_to_bitllrs(posteriors.transpose(1, 0, 2), c, _POSTERIOR_LLR_BOUND)  # (N_t, T, q)
        post_llrs = post_llrs.reshape(n_t, code.n)
        chan_ext = softinfo.extrinsic_subtract(post_llrs, prior_llrs, cfg.llr_clip)

        syndromes = []
        next_priors = np.empty_like(prior_llrs)
        info_errors = 0
        for n in range(n_t):
            chan_ext_dec = fec.deinterleave(chan_ext[n], interleavers[n])
            result = fec.bp_decode(chan_ext_dec, code, cfg.bp_max_iter)
            dec_ext = softinfo.extrinsic_subtract(result.posterior_llrs, chan_ext_dec, cfg.llr_clip)
            next_priors[n] = fec.interleave(dec_ext, interleavers[n])
            decoded[n] = fec.hard_decision(result.posterior_llrs[code.systematic_map])
            syndromes.append(result.syndrome_ok)
            if truth is not None:
                info_errors += int(np.sum(decoded[n] != truth[n]))

        trace.syndrome_ok.append(tuple(syndromes))
        trace.mean_abs_extrinsic.append(float(np.mean(np.abs(chan_ext))))
        if truth is not None:
            trace.ber.append(info_errors / (n_t * code.k))
            trace.fer.append(info_errors > 0)
        else:
            trace.ber.append(float("nan"))
            trace.fer.append(False)

        if all(syndromes):
            break
        prior_llrs = next_priors

    return decoded, trace
