"""LLR/PMF algebra shared by every soft equalizer.

Conventions fixed here and used everywhere else:

* LLR orientation is L = ln P(bit=1) / P(bit=0).
* Codeword bit k (0-based) belongs to symbol i = k // q at label position
  kappa = k % q, MSB first.
* Per-antenna symbol PMFs are length-M blocks concatenated antenna-major.
"""

from __future__ import annotations

import numpy as np

from .link import Constellation

__all__ = [
    "DEFAULT_LLR_CLIP",
    "bitllrs_to_pmf",
    "pmf_moments",
    "pmf_to_bitllrs",
    "extrinsic_subtract",
    "check_pmf",
]

DEFAULT_LLR_CLIP = 16.0

# Cell floor keeps saturated decoder feedback away from exact zeros without
# perturbing LLR round trips below magnitude ~30; the marginal-sum floor is
# what guards the log ratio itself.
_PMF_CELL_FLOOR = 1e-18
_SUM_FLOOR = 1e-12


def bitllrs_to_pmf(prior_llrs: np.ndarray, c: Constellation) -> np.ndarray:
    """Convert per-bit prior LLRs into symbol PMFs over the constellation.

    ``prior_llrs`` holds q LLRs per symbol; a trailing batch of symbols is
    accepted as shape (..., q).  Each output PMF is the product of the
    independent per-bit distributions, floored and renormalized.
    """
    L = np.asarray(prior_llrs, dtype=float)
    q = c.bits_per_symbol
    if L.shape[-1] != q:
        raise ValueError(f"expected {q} LLRs per symbol, got shape {L.shape}")
    signs = 2.0 * c.labels() - 1.0  # (M, q) in {-1, +1}
    t = np.tanh(L / 2.0)  # (..., q)
    factors = 0.5 * (1.0 + signs * t[..., None, :])  # (..., M, q)
    pmf = np.prod(factors, axis=-1)
    pmf = np.maximum(pmf, _PMF_CELL_FLOOR)
    return pmf / np.sum(pmf, axis=-1, keepdims=True)


def pmf_moments(pmf: np.ndarray, c: Constellation):
    """Mean and variance of the constellation symbol under PMFs of shape (..., M)."""
    pmf = np.asarray(pmf, dtype=float)
    mean = pmf @ c.points
    var = np.sum(pmf * np.abs(c.points - mean[..., None]) ** 2, axis=-1)
    return mean, var


def pmf_to_bitllrs(pmf: np.ndarray, c: Constellation, clip: float = DEFAULT_LLR_CLIP) -> np.ndarray:
    """Marginalize symbol PMFs into per-bit LLRs, clipped to +-clip.

    For each label position the LLR is the log ratio of total probability on
    the bit=1 subset to the bit=0 subset, with both sums floored at 1e-12.
    """
    pmf = np.asarray(pmf, dtype=float)
    q = c.bits_per_symbol
    out = np.empty(pmf.shape[:-1] + (q,), dtype=float)
    for kappa in range(q):
        zero_idx, one_idx = c.bit_subsets[kappa]
        p1 = np.maximum(np.sum(pmf[..., one_idx], axis=-1), _SUM_FLOOR)
        p0 = np.maximum(np.sum(pmf[..., zero_idx], axis=-1), _SUM_FLOOR)
        out[..., kappa] = np.log(p1) - np.log(p0)
    return np.clip(out, -clip, clip)


def extrinsic_subtract(posterior: np.ndarray, prior: np.ndarray, clip: float = DEFAULT_LLR_CLIP) -> np.ndarray:
    """Extrinsic LLRs: posterior minus prior, clamped to [-clip, +clip]."""
    posterior = np.asarray(posterior, dtype=float)
    prior = np.asarray(prior, dtype=float)
    if posterior.shape != prior.shape:
        raise ValueError(f"shape mismatch {posterior.shape} vs {prior.shape}")
    return np.clip(posterior - prior, -clip, clip)


def check_pmf(pmf: np.ndarray, order: int, tol: float = 1e-9) -> None:
    """Validate concatenated per-antenna PMF blocks: non-negative, each block summing to 1."""
    pmf = np.asarray(pmf)
    if pmf.shape[-1] % order != 0:
        raise ValueError(f"PMF length {pmf.shape[-1]} is not a multiple of the order {order}")
    if np.any(pmf < 0):
        raise ValueError("PMF has negative entries")
    blocks = pmf.reshape(pmf.shape[:-1] + (-1, order))
    sums = blocks.sum(axis=-1)
    if np.max(np.abs(sums - 1.0)) > tol:
        raise ValueError(f"PMF blocks deviate from unit sum by {np.max(np.abs(sums - 1.0)):.3e}")
