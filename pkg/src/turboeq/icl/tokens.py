"""Prompt construction for the ICL soft equalizer.

Every token is a fixed-width real vector: the complex symbol vector's real
and imaginary parts (zero-padded when transmit and receive widths differ)
followed by a prior segment of M per transmit antenna.  Received tokens act
as queries: pilot observations carry the uniform prior, the data observation
carries the decoder-provided prior.  Transmitted tokens act as answers and
carry an all-zero prior segment, so the model cannot read prior information
off the context answers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["PromptTokens", "token_dim", "tokenize_inference", "tokenize_training"]

ROLE_PILOT_RX = "pilot_rx"
ROLE_PILOT_TX = "pilot_tx"
ROLE_QUERY = "query"
ROLE_ANSWER = "answer"


def token_dim(n_t: int, n_r: int, order: int) -> int:
    """Width of one token vector: symbol segment plus prior segment."""
    return 2 * max(n_t, n_r) + order * n_t


@dataclass(frozen=True)
class PromptTokens:
    """Token matrix (one row per token) with per-token role tags."""

    tokens: np.ndarray  # (L, D_tok) float64
    roles: tuple

    def __post_init__(self):
        if self.tokens.shape[0] != len(self.roles):
            raise ValueError("one role tag per token required")


def _symbol_segment(vec: np.ndarray, width: int) -> np.ndarray:
    """[Re(vec), Im(vec)] zero-padded to 2*width."""
    out = np.zeros(2 * width)
    n = vec.shape[0]
    out[:n] = vec.real
    out[width : width + n] = vec.imag
    return out


def tokenize_inference(Z: np.ndarray, pilots: np.ndarray, y: np.ndarray, p: np.ndarray) -> PromptTokens:
    """Build the 2*T_P + 1 token prompt for one data observation.

    Alternates received-pilot and transmitted-pilot tokens, then appends the
    query token holding the data observation ``y`` and its prior vector ``p``
    (length M*N_t, concatenated per-antenna PMFs).
    """
    Z = np.asarray(Z)
    pilots = np.asarray(pilots)
    y = np.asarray(y).ravel()
    p = np.asarray(p, dtype=float).ravel()
    n_r, t_p = Z.shape
    n_t = pilots.shape[0]
    if pilots.shape[1] != t_p:
        raise ValueError(f"pilot matrix has {pilots.shape[1]} uses but {t_p} were received")
    if y.shape[0] != n_r:
        raise ValueError(f"observation length {y.shape[0]} does not match {n_r} receive antennas")
    if p.shape[0] % n_t != 0:
        raise ValueError(f"prior length {p.shape[0]} is not a multiple of {n_t} antennas")
    order = p.shape[0] // n_t
    width = max(n_t, n_r)
    dim = token_dim(n_t, n_r, order)

    tokens = np.zeros((2 * t_p + 1, dim))
    roles = []
    uniform = np.full(order * n_t, 1.0 / order)
    for j in range(t_p):
        tokens[2 * j, : 2 * width] = _symbol_segment(Z[:, j], width)
        tokens[2 * j, 2 * width :] = uniform
        roles.append(ROLE_PILOT_RX)
        tokens[2 * j + 1, : 2 * width] = _symbol_segment(pilots[:, j], width)
        roles.append(ROLE_PILOT_TX)
    tokens[-1, : 2 * width] = _symbol_segment(y, width)
    tokens[-1, 2 * width :] = p
    roles.append(ROLE_QUERY)
    return PromptTokens(tokens=tokens, roles=tuple(roles))


def tokenize_training(ys: np.ndarray, priors: np.ndarray, xs: np.ndarray) -> PromptTokens:
    """Build the interleaved query/answer training prompt.

    ``ys`` is (T_train, N_r) received vectors, ``priors`` (T_train, M*N_t)
    prior vectors, ``xs`` (T_train, N_t) transmitted vectors.  Queries sit at
    odd positions (1-based) and carry their priors; answers carry zero prior
    segments, mirroring the inference layout.
    """
    ys = np.asarray(ys)
    priors = np.asarray(priors, dtype=float)
    xs = np.asarray(xs)
    t_train = ys.shape[0]
    if priors.shape[0] != t_train or xs.shape[0] != t_train:
        raise ValueError("query, prior and answer counts must match")
    n_r, n_t = ys.shape[1], xs.shape[1]
    order = priors.shape[1] // n_t
    if order * n_t != priors.shape[1]:
        raise ValueError(f"prior width {priors.shape[1]} is not a multiple of {n_t} antennas")
    width = max(n_t, n_r)
    dim = token_dim(n_t, n_r, order)

    tokens = np.zeros((2 * t_train, dim))
    roles = []
    for j in range(t_train):
        tokens[2 * j, : 2 * width] = _symbol_segment(ys[j], width)
        tokens[2 * j, 2 * width :] = priors[j]
        roles.append(ROLE_QUERY)
        tokens[2 * j + 1, : 2 * width] = _symbol_segment(xs[j], width)
        roles.append(ROLE_ANSWER)
    return PromptTokens(tokens=tokens, roles=tuple(roles))
