"""Model-based soft equalizers: LS channel estimation with decoder-feedback
refinement, LMMSE with parallel interference cancellation, Bussgang-linearized
LMMSE for quantized front ends, and exact MAP with the true bin likelihood.

All equalizers consume and produce the per-antenna symbol PMFs defined in
:mod:`turboeq.softinfo`; shapes are (T, N_t, M) with T the number of data
indices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr

from .link import Constellation, QuantizerSpec, Task, quantize
from .softinfo import pmf_moments

__all__ = [
    "ChannelEstimate",
    "PseudoPilot",
    "ls_estimate",
    "refine_estimate",
    "lmmse_pic",
    "bussgang_scale",
    "quantized_bin_loglik",
    "map_equalize",
]

_VAR_FLOOR = 1e-9


@dataclass
class ChannelEstimate:
    """Channel and noise estimate plus the pilot observations it came from."""

    H_hat: np.ndarray  # (N_r, N_t)
    sigma2_hat: float
    pilots: np.ndarray | None = None  # (N_t, T_P)
    received: np.ndarray | None = None  # (N_r, T_P)

    def __post_init__(self):
        if self.sigma2_hat < 0:
            raise ValueError("noise variance estimate must be non-negative")


@dataclass(frozen=True)
class PseudoPilot:
    """Decoder-derived soft symbol vector used as extra training data for estimation."""

    soft_symbols: np.ndarray  # (N_t,) complex, prior means
    received: np.ndarray  # (N_r,) complex
    weight: float  # reliability in [0, 1]


def ls_estimate(Z: np.ndarray, pilots: np.ndarray) -> ChannelEstimate:
    """Least-squares channel and noise-variance estimate from quantized pilot observations."""
    Z = np.asarray(Z)
    pilots = np.asarray(pilots)
    n_t, t_p = pilots.shape
    if t_p < n_t:
        raise ValueError(f"need at least {n_t} pilot uses, got {t_p}")
    gram = pilots @ pilots.conj().T
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > 1e8:
        raise ValueError(f"pilot Gram matrix ill-conditioned (cond={cond:.3e})")
    H_hat = Z @ pilots.conj().T @ np.linalg.inv(gram)
    resid = Z - H_hat @ pilots
    sigma2_hat = float(np.sum(np.abs(resid) ** 2) / (Z.shape[0] * t_p))
    return ChannelEstimate(H_hat=H_hat, sigma2_hat=sigma2_hat, pilots=pilots, received=Z)


def refine_estimate(
    est: ChannelEstimate,
    pseudo: list,
    forgetting: float = 1.0,
    ridge: float = 1e-12,
) -> ChannelEstimate:
    """Re-solve the channel estimate over pilots plus reliability-weighted pseudo-pilots.

    Observations are weighted by reliability times ``forgetting`` raised to
    their age (most recent first), so quasi-static channels use forgetting 1.
    An empty pseudo-pilot list returns the estimate unchanged.
    """
    if not pseudo:
        return est
    if est.pilots is None or est.received is None:
        raise ValueError("estimate carries no pilot history to refine against")
    X = np.concatenate([est.pilots] + [p.soft_symbols.reshape(-1, 1) for p in pseudo], axis=1)
    Z = np.concatenate([est.received] + [p.received.reshape(-1, 1) for p in pseudo], axis=1)
    w = np.concatenate([np.ones(est.pilots.shape[1]), np.array([p.weight for p in pseudo])])
    n_obs = w.size
    w = w * forgetting ** np.arange(n_obs - 1, -1, -1)
    Xw = X * w
    gram = Xw @ X.conj().T + ridge * np.eye(X.shape[0])
    H_hat = Z @ (Xw.conj().T) @ np.linalg.inv(gram)
    resid = (Z - H_hat @ X) * np.sqrt(w)
    denom = Z.shape[0] * max(w.sum(), 1e-12)
    sigma2_hat = float(np.sum(np.abs(resid) ** 2) / denom)
    return ChannelEstimate(H_hat=H_hat, sigma2_hat=sigma2_hat, pilots=est.pilots, received=est.received)


def lmmse_pic(est: ChannelEstimate, Y: np.ndarray, priors: np.ndarray, c: Constellation) -> np.ndarray:
    """Soft parallel-interference-cancellation LMMSE equalization.

    ``priors`` has shape (T, N_t, M).  Per stream, the prior means of all
    other streams are cancelled from the observation and a per-index LMMSE
    filter (prior variances on the interferers, unit energy on the stream of
    interest) produces the posterior mean and variance.  The posterior PMF
    combines the stream's own prior with the squared-distance softmax against
    the gain-scaled constellation: the filtered estimate sits near mu*x with
    mu = w^H h < 1, and matching the points to that bias keeps the bitwise
    LLRs calibrated, which the turbo loop needs to converge (see the turbo
    gain tests; the unscaled, prior-free form loses BER across iterations).
    """
    Y = np.asarray(Y)
    priors = np.asarray(priors, dtype=float)
    n_r, T = Y.shape
    _, n_t, M = priors.shape
    H = est.H_hat
    sigma2 = max(est.sigma2_hat, 1e-15)

    means, variances = pmf_moments(priors, c)  # (T, N_t)
    hh = np.einsum("rn,sn->nrs", H, H.conj())  # (N_t, N_r, N_r), h_n h_n^H per stream

    post = np.empty((T, n_t, M))
    eye = np.eye(n_r)
    with np.errstate(divide="ignore"):
        log_prior = np.log(np.maximum(priors, 1e-300))
    for n in range(n_t):
        others = [j for j in range(n_t) if j != n]
        # interference cancellation with prior means
        cancelled = Y.T - means[:, others] @ H[:, others].T  # (T, N_r)
        # filter covariance: unit energy on stream n, prior variances elsewhere
        cov = np.einsum("tj,jrs->trs", variances[:, others], hh[others]) if others else np.zeros((T, n_r, n_r))
        cov = cov + hh[n] + sigma2 * eye
        try:
            w = np.linalg.solve(cov, np.broadcast_to(H[:, n], (T, n_r)).copy()[..., None])[..., 0]
        except np.linalg.LinAlgError:
            cov = cov + 1e-12 * eye
            w = np.linalg.solve(cov, np.broadcast_to(H[:, n], (T, n_r)).copy()[..., None])[..., 0]
        x_hat = np.einsum("tr,tr->t", w.conj(), cancelled)
        mu = np.einsum("tr,r->t", w.conj(), H[:, n])  # effective signal gain, (T,)
        noise_cov = cov - hh[n]  # interference residual plus noise
        var_hat = np.einsum("tr,trs,ts->t", w.conj(), noise_cov, w).real
        var_hat = np.maximum(var_hat, _VAR_FLOOR)
        d2 = np.abs(x_hat[:, None] - mu[:, None] * c.points[None, :]) ** 2
        logits = -d2 / var_hat[:, None] + log_prior[:, n, :]
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        post[:, n, :] = e / e.sum(axis=1, keepdims=True)
    return post


def bussgang_scale(task: Task, mc_samples: int = 100_000, seed=0) -> np.ndarray:
    """Monte Carlo estimate of the per-receive-dimension Bussgang gains of the quantizer.

    For each receive dimension the front-end input is modelled as a zero-mean
    Gaussian whose per-axis variance matches the received signal-plus-noise
    power, and the gain is E[Q(v) v] / E[v^2].  Returns the diagonal gain
    vector; use :func:`bussgang_effective` for the linearized model.
    """
    if mc_samples < 10_000:
        raise ValueError("mc_samples below 10000 gives an unreliable gain estimate")
    rng = np.random.default_rng(seed)
    power = (np.einsum("rn,rn->r", task.H, task.H.conj()).real + task.sigma2) / 2.0  # per real axis
    gains = np.empty(task.n_r)
    for r in range(task.n_r):
        v = rng.standard_normal(mc_samples) * np.sqrt(power[r])
        qv = quantize(v, task.quant)
        gains[r] = float(np.dot(qv, v) / np.dot(v, v))
    return gains


def bussgang_effective(task: Task, mc_samples: int = 100_000, seed=0) -> ChannelEstimate:
    """Linearized perfect-CSI estimate: gains applied to H, distortion folded into the noise."""
    if mc_samples < 10_000:
        raise ValueError("mc_samples below 10000 gives an unreliable gain estimate")
    rng = np.random.default_rng(seed)
    power = (np.einsum("rn,rn->r", task.H, task.H.conj()).real + task.sigma2) / 2.0
    gains = np.empty(task.n_r)
    distortion = np.empty(task.n_r)  # per real axis
    for r in range(task.n_r):
        v = rng.standard_normal(mc_samples) * np.sqrt(power[r])
        qv = quantize(v, task.quant)
        g = float(np.dot(qv, v) / np.dot(v, v))
        gains[r] = g
        distortion[r] = float(np.mean((qv - g * v) ** 2))
    sigma2_eff = float(np.mean(gains**2 * task.sigma2 + 2.0 * distortion))
    return ChannelEstimate(H_hat=gains[:, None] * task.H, sigma2_hat=sigma2_eff)


def quantized_bin_loglik(y_axis, mean_axis, sigma2_axis, spec: QuantizerSpec):
    """Log probability that a Gaussian N(mean, sigma2) lands in the quantizer bin of ``y_axis``.

    Outer bins extend to +-infinity, absorbing the clipping tails.  All
    arguments broadcast; computed through stable normal log-CDF differences.
    """
    y = np.asarray(y_axis, dtype=float)
    step = spec.step
    k = np.rint((y - spec.l_min) / step - 0.5)
    if np.any(np.abs(y - (spec.l_min + step * (k + 0.5))) > 1e-9) or np.any(k < 0) or np.any(
        k > (1 << spec.bits) - 1
    ):
        raise ValueError("observation is not on the quantizer output alphabet")
    lo = spec.l_min + step * k
    hi = lo + step
    lo = np.where(k == 0, -np.inf, lo)
    hi = np.where(k == (1 << spec.bits) - 1, np.inf, hi)

    mean_axis = np.asarray(mean_axis, dtype=float)
    sd = np.sqrt(np.asarray(sigma2_axis, dtype=float))
    a = (lo - mean_axis) / sd
    b = (hi - mean_axis) / sd
    # reflect so both CDF arguments sit in the accurate left tail
    flip = a + b > 0
    a_use = np.where(flip, -b, a)
    b_use = np.where(flip, -a, b)
    log_hi = log_ndtr(b_use)
    log_lo = log_ndtr(a_use)
    diff = np.minimum(log_lo - log_hi, 0.0)  # <= 0; -inf for open lower edges
    with np.errstate(divide="ignore"):
        out = log_hi + np.log(-np.expm1(diff))
    return out if out.ndim else float(out)


def map_equalize(task: Task, Y: np.ndarray, priors: np.ndarray, c: Constellation, budget: int = 1_000_000) -> np.ndarray:
    """Exact per-antenna posteriors by enumerating every transmit hypothesis.

    The joint posterior over the M^N_t symbol vectors combines the factorized
    priors with the true quantized-observation likelihood, then marginalizes
    per antenna.  Refuses when M^N_t exceeds the enumeration budget.
    """
    Y = np.asarray(Y)
    priors = np.asarray(priors, dtype=float)
    T = Y.shape[1]
    n_t, M = priors.shape[1], priors.shape[2]
    n_hyp = M**n_t
    if n_hyp > budget:
        raise ValueError(f"enumeration of {n_hyp} hypotheses exceeds budget {budget}")

    grids = np.indices((M,) * n_t).reshape(n_t, n_hyp).T  # (n_hyp, N_t) index tuples
    X_hyp = c.points[grids]  # (n_hyp, N_t)
    means = X_hyp @ task.H.T  # (n_hyp, N_r)
    half_var = task.sigma2 / 2.0

    # per data index: log prior of each hypothesis
    log_prior = np.zeros((T, n_hyp))
    with np.errstate(divide="ignore"):
        logp = np.log(np.maximum(priors, 1e-300))
    for n in range(n_t):
        log_prior += logp[:, n, grids[:, n]]

    loglik = np.zeros((T, n_hyp))
    for part in (np.real, np.imag):
        y_ax = part(Y.T)[:, None, :]  # (T, 1, N_r)
        m_ax = part(means)[None, :, :]  # (1, n_hyp, N_r)
        loglik += quantized_bin_loglik(
            np.broadcast_to(y_ax, (T, n_hyp, Y.shape[0])),
            np.broadcast_to(m_ax, (T, n_hyp, Y.shape[0])),
            half_var,
            task.quant,
        ).sum(axis=2)

    joint = log_prior + loglik
    joint -= joint.max(axis=1, keepdims=True)
    w = np.exp(joint)
    w /= w.sum(axis=1, keepdims=True)

    post = np.zeros((T, n_t, M))
    for n in range(n_t):
        for m in range(M):
            mask = grids[:, n] == m
            post[:, n, m] = w[:, mask].sum(axis=1)
    # normalize away accumulation rounding
    post /= post.sum(axis=2, keepdims=True)
    return post
