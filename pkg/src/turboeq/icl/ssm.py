"""Selective state-space backbone.

Each layer derives input-dependent state-transition and readout vectors plus a
per-channel discretization step, runs one bilinear-discretized scalar SSM per
embedding channel (all sharing a fixed lower-triangular state matrix), and
gates the concatenated readouts with a GLU.  The recurrence direction makes
the layer causal by construction.
"""

from __future__ import annotations

import math

import numpy as np

from .. import tensor as tz
from ..optim import ParamStore

__all__ = ["state_matrix", "init_layer_params", "forward", "build_state_cache", "query_forward"]


def state_matrix(d_state: int) -> np.ndarray:
    """Fixed stable lower-triangular transition matrix: -tril(ones) - diag(1..D_h)."""
    return -np.tril(np.ones((d_state, d_state))) - np.diag(np.arange(1, d_state + 1.0))


def init_layer_params(store: ParamStore, prefix: str, d_embed: int, d_state: int, rng) -> None:
    def lin(fan_out, fan_in):
        a = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-a, a, size=(fan_out, fan_in))

    store.add(f"{prefix}.w_b", lin(d_state, d_embed))
    store.add(f"{prefix}.e_b", np.zeros(d_state))
    store.add(f"{prefix}.w_c", lin(d_state, d_embed))
    store.add(f"{prefix}.e_c", np.zeros(d_state))
    store.add(f"{prefix}.w_delta", lin(1, d_embed).reshape(d_embed, 1))
    store.add(f"{prefix}.e_delta", np.zeros(d_embed))
    store.add(f"{prefix}.w_g", lin(d_embed, d_embed))
    store.add(f"{prefix}.w_u", lin(d_embed, d_embed))


def _layer_inputs(store: ParamStore, prefix: str, x: tz.Tensor):
    """Token-wise selective quantities: b, c (B, L, D_h) and step sizes (B, L, D_E)."""
    b = tz.add(x @ tz.transpose(store[f"{prefix}.w_b"], (1, 0)), store[f"{prefix}.e_b"])
    c = tz.add(x @ tz.transpose(store[f"{prefix}.w_c"], (1, 0)), store[f"{prefix}.e_c"])
    step = tz.softplus(tz.add(x @ store[f"{prefix}.w_delta"], store[f"{prefix}.e_delta"]))
    return b, c, step


def _scan_step(a_mat, a_t, h_prev, delta_l, u_l, b_l):
    """One recurrence step; ``h_prev`` may be None at the first token (zero state)."""
    forced = tz.mul(tz.mul(delta_l, u_l), b_l)  # (B, D_E, D_h)
    if h_prev is None:
        rhs = forced
    else:
        drift = tz.mul(tz.scale(delta_l, 0.5), h_prev @ a_t)
        rhs = h_prev + drift + forced
    return tz.tri_solve(a_mat, delta_l, rhs)


def layer_forward(store: ParamStore, prefix: str, x: tz.Tensor, a_mat: np.ndarray) -> tz.Tensor:
    """One selective SSM layer over embeddings (B, L, D)."""
    b_all, c_all, step_all = _layer_inputs(store, prefix, x)
    a_t = tz.Tensor(a_mat.T)
    length = x.shape[1]
    h = None
    outputs = []
    for l in range(length):
        delta_l = step_all[:, l, :, None]  # (B, D_E, 1)
        u_l = x[:, l, :, None]  # (B, D_E, 1)
        b_l = b_all[:, l, None, :]  # (B, 1, D_h)
        h = _scan_step(a_mat, a_t, h, delta_l, u_l, b_l)
        c_l = c_all[:, l, None, :]
        outputs.append(tz.tsum(tz.mul(c_l, h), axis=-1))  # (B, D_E)
    y = tz.stack(outputs, axis=1)  # (B, L, D_E)
    gate = tz.sigmoid(x @ tz.transpose(store[f"{prefix}.w_g"], (1, 0)))
    return tz.mul(gate, y @ tz.transpose(store[f"{prefix}.w_u"], (1, 0)))


def forward(store: ParamStore, e0: tz.Tensor, n_layers: int, d_state: int) -> tz.Tensor:
    a_mat = state_matrix(d_state)
    e = e0
    for i in range(n_layers):
        e = layer_forward(store, f"ssm.{i}", e, a_mat)
    return e


def build_state_cache(store: ParamStore, e0_ctx: tz.Tensor, n_layers: int, d_state: int) -> list:
    """Hidden state after the context, per layer: a (D_E, D_h) array each."""
    a_mat = state_matrix(d_state)
    states = []
    e = e0_ctx  # (1, L_ctx, D)
    for i in range(n_layers):
        prefix = f"ssm.{i}"
        b_all, c_all, step_all = _layer_inputs(store, prefix, e)
        a_t = tz.Tensor(a_mat.T)
        h = None
        outputs = []
        for l in range(e.shape[1]):
            h = _scan_step(
                a_mat,
                a_t,
                h,
                step_all[:, l, :, None],
                e[:, l, :, None],
                b_all[:, l, None, :],
            )
            outputs.append(tz.tsum(tz.mul(c_all[:, l, None, :], h), axis=-1))
        states.append(h.data[0].copy())  # (D_E, D_h)
        y = tz.stack(outputs, axis=1)
        gate = tz.sigmoid(e @ tz.transpose(store[f"{prefix}.w_g"], (1, 0)))
        e = tz.mul(gate, y @ tz.transpose(store[f"{prefix}.w_u"], (1, 0)))
    return states


def query_forward(store: ParamStore, state_cache: list, e_q: tz.Tensor, d_state: int) -> tz.Tensor:
    """Advance query embeddings (B, 1, D) one recurrence step from the cached context states."""
    a_mat = state_matrix(d_state)
    e = e_q
    for i, h_ctx in enumerate(state_cache):
        prefix = f"ssm.{i}"
        b_all, c_all, step_all = _layer_inputs(store, prefix, e)
        a_t = tz.Tensor(a_mat.T)
        h_prev = tz.Tensor(h_ctx[None])  # (1, D_E, D_h), broadcast over queries
        h = _scan_step(a_mat, a_t, h_prev, step_all[:, 0, :, None], e[:, 0, :, None], b_all[:, 0, None, :])
        out = tz.tsum(tz.mul(c_all[:, 0, None, :], h), axis=-1)  # (B, D_E)
        y = tz.reshape(out, (out.shape[0], 1, out.shape[1]))
        gate = tz.sigmoid(e @ tz.transpose(store[f"{prefix}.w_g"], (1, 0)))
        e = tz.mul(gate, y @ tz.transpose(store[f"{prefix}.w_u"], (1, 0)))
    return e
