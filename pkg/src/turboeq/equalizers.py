"""Adapters exposing every equalizer through the turbo SoftEqualizer contract.

Each instance serves a single frame (one coherence block); the harness
constructs a fresh one per frame.  Priors and posteriors are (T, N_t, M)
arrays of per-antenna PMFs.
"""

from __future__ import annotations

import numpy as np

from . import classic
from .icl.model import IclModel
from .link import Constellation, Task
from .softinfo import pmf_moments

__all__ = [
    "LmmsePicEqualizer",
    "RlsLmmsePicEqualizer",
    "BussgangLmmsePicEqualizer",
    "MapEqualizer",
    "IclTurboEqualizer",
]


class LmmsePicEqualizer:
    """Soft LMMSE-PIC with a fixed channel estimate (perfect CSI when given the truth)."""

    def __init__(self, est: classic.ChannelEstimate, c: Constellation):
        self.est = est
        self.c = c

    @classmethod
    def perfect_csi(cls, task: Task, c: Constellation) -> "LmmsePicEqualizer":
        return cls(classic.ChannelEstimate(H_hat=task.H.copy(), sigma2_hat=task.sigma2), c)

    def equalize(self, Z, pilots, Y, priors, iteration):
        return classic.lmmse_pic(self.est, Y, priors, self.c)


class RlsLmmsePicEqualizer:
    """LS pilot estimate refreshed each turbo iteration with reliable decoder-fed soft symbols.

    A data index is promoted to a pseudo-pilot when every antenna's prior PMF
    peaks at or above ``reliability_threshold``; its weight is the smallest
    peak across antennas.  The refreshed estimate always re-solves from the
    original pilots plus the current pseudo-pilots.
    """

    def __init__(
        self,
        c: Constellation,
        reliability_threshold: float = 0.9,
        forgetting: float = 1.0,
    ):
        self.c = c
        self.reliability_threshold = reliability_threshold
        self.forgetting = forgetting
        self.base_est: classic.ChannelEstimate | None = None

    def equalize(self, Z, pilots, Y, priors, iteration):
        if self.base_est is None:
            self.base_est = classic.ls_estimate(Z, pilots)
        est = self.base_est
        if iteration > 1:
            pseudo = self._pseudo_pilots(Y, priors)
            if pseudo:
                est = classic.refine_estimate(self.base_est, pseudo, self.forgetting)
        return classic.lmmse_pic(est, Y, priors, self.c)

    def _pseudo_pilots(self, Y, priors):
        peaks = np.asarray(priors).max(axis=2)  # (T, N_t)
        weight = peaks.min(axis=1)  # (T,)
        keep = np.flatnonzero(weight >= self.reliability_threshold)
        if keep.size == 0:
            return []
        means, _ = pmf_moments(np.asarray(priors)[keep], self.c)  # (n, N_t)
        return [
            classic.PseudoPilot(soft_symbols=means[i], received=Y[:, keep[i]], weight=float(weight[keep[i]]))
            for i in range(keep.size)
        ]


class BussgangLmmsePicEqualizer(LmmsePicEqualizer):
    """Perfect-CSI LMMSE-PIC on the Bussgang-linearized front end.

    The quantizer is replaced by its per-dimension linear gain; the channel is
    scaled accordingly and the quantization distortion is folded into an
    effective noise variance.
    """

    def __init__(self, task: Task, c: Constellation, mc_samples: int = 100_000, seed=0):
        super().__init__(classic.bussgang_effective(task, mc_samples, seed), c)


class MapEqualizer:
    """Exact posterior equalizer with perfect CSI and the true quantized likelihood."""

    def __init__(self, task: Task, c: Constellation, budget: int = 1_000_000):
        self.task = task
        self.c = c
        self.budget = budget

    def equalize(self, Z, pilots, Y, priors, iteration):
        return classic.map_equalize(self.task, Y, priors, self.c, self.budget)


class IclTurboEqualizer:
    """ICL soft equalizer behind the turbo interface.

    The pilot context is processed into a cache on the first call and reused
    across turbo iterations; every iteration re-queries all data positions
    with the current decoder-derived priors appended to the query tokens.
    """

    def __init__(self, model: IclModel):
        self.model = model
        self.cache = None

    def equalize(self, Z, pilots, Y, priors, iteration):
        if self.cache is None:
            self.cache = self.model.build_context_cache(Z, pilots)
        T = Y.shape[1]
        priors = np.asarray(priors, dtype=float)
        flat_p = priors.reshape(T, -1)
        probs = self.model.query_with_cache(self.cache, Y.T, flat_p)  # (T, N_t*M)
        return probs.reshape(T, self.model.cfg.n_t, self.model.cfg.mod_order)
