"""Causally masked Transformer decoder backbone.

Post-norm layers: masked multi-head self-attention with output projection,
residual plus layer norm, then a GeLU feed-forward block with another
residual plus layer norm.  No positional encoding is added by default; token
order is carried by the causal mask and the role-dependent token structure.
"""

from __future__ import annotations

import math

import numpy as np

from .. import tensor as tz
from ..optim import ParamStore

_MASK_NEG = -1e30


def init_layer_params(store: ParamStore, prefix: str, d_embed: int, d_ffn: int, rng) -> None:
    def lin(fan_out, fan_in):
        a = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-a, a, size=(fan_out, fan_in))

    for name in ("w_q", "w_k", "w_v", "w_o"):
        store.add(f"{prefix}.{name}", lin(d_embed, d_embed))
    store.add(f"{prefix}.ln1_gain", np.ones(d_embed))
    store.add(f"{prefix}.ln1_bias", np.zeros(d_embed))
    store.add(f"{prefix}.w_ffn1", lin(d_ffn, d_embed))
    store.add(f"{prefix}.b_ffn1", np.zeros(d_ffn))
    store.add(f"{prefix}.w_ffn2", lin(d_embed, d_ffn))
    store.add(f"{prefix}.b_ffn2", np.zeros(d_embed))
    store.add(f"{prefix}.ln2_gain", np.ones(d_embed))
    store.add(f"{prefix}.ln2_bias", np.zeros(d_embed))


def _split_heads(x: tz.Tensor, n_heads: int) -> tz.Tensor:
    b, l, d = x.shape
    return tz.transpose(tz.reshape(x, (b, l, n_heads, d // n_heads)), (0, 2, 1, 3))


def _merge_heads(x: tz.Tensor) -> tz.Tensor:
    b, h, l, dh = x.shape
    return tz.reshape(tz.transpose(x, (0, 2, 1, 3)), (b, l, h * dh))


def causal_mask(length: int) -> np.ndarray:
    mask = np.zeros((length, length))
    mask[np.triu_indices(length, k=1)] = _MASK_NEG
    return mask


def layer_forward(store: ParamStore, prefix: str, e_in: tz.Tensor, n_heads: int, mask: np.ndarray) -> tz.Tensor:
    """One decoder layer over embeddings of shape (B, L, D)."""
    d_head = e_in.shape[-1] // n_heads
    q = _split_heads(e_in @ tz.transpose(store[f"{prefix}.w_q"], (1, 0)), n_heads)
    k = _split_heads(e_in @ tz.transpose(store[f"{prefix}.w_k"], (1, 0)), n_heads)
    v = _split_heads(e_in @ tz.transpose(store[f"{prefix}.w_v"], (1, 0)), n_heads)
    scores = tz.scale(q @ tz.transpose(k, (0, 1, 3, 2)), 1.0 / math.sqrt(d_head))
    attn = tz.softmax(tz.add(scores, mask), axis=-1)
    ctx = _merge_heads(attn @ v)
    a = ctx @ tz.transpose(store[f"{prefix}.w_o"], (1, 0))
    e_mhsa = tz.add(
        tz.mul(tz.layer_norm(a + e_in), store[f"{prefix}.ln1_gain"]),
        store[f"{prefix}.ln1_bias"],
    )
    f = tz.gelu(tz.add(e_mhsa @ tz.transpose(store[f"{prefix}.w_ffn1"], (1, 0)), store[f"{prefix}.b_ffn1"]))
    pre = tz.add(f @ tz.transpose(store[f"{prefix}.w_ffn2"], (1, 0)), store[f"{prefix}.b_ffn2"]) + e_mhsa
    return tz.add(tz.mul(tz.layer_norm(pre), store[f"{prefix}.ln2_gain"]), store[f"{prefix}.ln2_bias"])


def forward(store: ParamStore, e0: tz.Tensor, n_layers: int, n_heads: int, max_seq_len: int) -> tz.Tensor:
    """Stack of decoder layers over (B, L, D) embeddings."""
    length = e0.shape[1]
    if length > max_seq_len:
        raise ValueError(f"sequence of {length} tokens exceeds the configured maximum {max_seq_len}")
    mask = causal_mask(length)
    e = e0
    for i in range(n_layers):
        e = layer_forward(store, f"tf.{i}", e, n_heads, mask)
    return e


def build_kv_cache(store: ParamStore, e0_ctx: tz.Tensor, n_layers: int, n_heads: int) -> list:
    """Per-layer keys and values of the context positions (context embeddings only).

    ``e0_ctx`` is (1, L_ctx, D).  Causality makes these independent of any
    later query token, so they can be reused across all data queries.
    """
    mask = causal_mask(e0_ctx.shape[1])
    cache = []
    e = e0_ctx
    for i in range(n_layers):
        prefix = f"tf.{i}"
        k = _split_heads(e @ tz.transpose(store[f"{prefix}.w_k"], (1, 0)), n_heads)
        v = _split_heads(e @ tz.transpose(store[f"{prefix}.w_v"], (1, 0)), n_heads)
        cache.append((k.data[0], v.data[0]))  # (H, L_ctx, D_head)
        e = layer_forward(store, prefix, e, n_heads, mask)
    return cache


def query_forward(store: ParamStore, kv_cache: list, e_q: tz.Tensor, n_heads: int) -> tz.Tensor:
    """Advance query embeddings (B, 1, D) through all layers against cached context keys/values."""
    e = e_q
    for i, (k_ctx, v_ctx) in enumerate(kv_cache):
        prefix = f"tf.{i}"
        d_head = e.shape[-1] // n_heads
        q = _split_heads(e @ tz.transpose(store[f"{prefix}.w_q"], (1, 0)), n_heads)  # (B, H, 1, Dh)
        k_self = _split_heads(e @ tz.transpose(store[f"{prefix}.w_k"], (1, 0)), n_heads)
        v_self = _split_heads(e @ tz.transpose(store[f"{prefix}.w_v"], (1, 0)), n_heads)
        k_ctx_t = tz.Tensor(np.swapaxes(k_ctx, -1, -2))  # (H, Dh, L_ctx)
        score_ctx = q @ k_ctx_t  # (B, H, 1, L_ctx)
        score_self = tz.tsum(tz.mul(q, k_self), axis=-1, keepdims=True)  # (B, H, 1, 1)
        scores = tz.scale(tz.concat([score_ctx, score_self], axis=-1), 1.0 / math.sqrt(d_head))
        attn = tz.softmax(scores, axis=-1)
        n_ctx = k_ctx.shape[1]
        ctx_part = attn[..., :n_ctx] @ tz.Tensor(v_ctx)  # (B, H, 1, Dh)
        self_part = tz.mul(attn[..., n_ctx:], v_self)
        a = _merge_heads(ctx_part + self_part) @ tz.transpose(store[f"{prefix}.w_o"], (1, 0))
        e_mhsa = tz.add(
            tz.mul(tz.layer_norm(a + e), store[f"{prefix}.ln1_gain"]),
            store[f"{prefix}.ln1_bias"],
        )
        f = tz.gelu(tz.add(e_mhsa @ tz.transpose(store[f"{prefix}.w_ffn1"], (1, 0)), store[f"{prefix}.b_ffn1"]))
        pre = tz.add(f @ tz.transpose(store[f"{prefix}.w_ffn2"], (1, 0)), store[f"{prefix}.b_ffn2"]) + e_mhsa
        e = tz.add(tz.mul(tz.layer_norm(pre), store[f"{prefix}.ln2_gain"]), store[f"{prefix}.ln2_bias"])
    return e
