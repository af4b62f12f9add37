"""The ICL soft equalizer model: embedding, backbone, multi-head classifier,
and the two-phase cached inference path.

One model instance serves one (N_t, N_r, M) configuration.  Inference returns
per-antenna posterior PMFs for the final prompt position; training code calls
:meth:`IclModel.forward_tokens` to obtain PMFs at every position.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .. import tensor as tz
from ..optim import ParamStore
from . import ssm as ssm_mod
from . import transformer as tf_mod
from .tokens import token_dim, tokenize_inference

__all__ = ["IclConfig", "ContextCache", "init_params", "IclModel"]

BACKBONES = ("transformer", "ssm")


@dataclass(frozen=True)
class IclConfig:
    """Architecture plus link-shape header; hashed for cache/checkpoint validation."""

    backbone: str = "transformer"
    n_t: int = 2
    n_r: int = 2
    mod_order: int = 4
    n_layers: int = 2
    d_embed: int = 64
    n_heads: int = 4
    d_ffn: int = 256
    d_state: int = 16
    max_seq_len: int = 96
    use_positional_embedding: bool = False
    init_seed: int = 0

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ValueError(f"unknown backbone {self.backbone!r}")
        if self.backbone == "transformer" and self.d_embed % self.n_heads != 0:
            raise ValueError("embedding width must divide evenly across attention heads")

    @property
    def token_width(self) -> int:
        return token_dim(self.n_t, self.n_r, self.mod_order)

    def hash(self) -> str:
        digest = hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()
        return digest[:16]


@dataclass
class ContextCache:
    """Frozen context summary: per-layer keys/values (Transformer) or hidden states (SSM)."""

    config_hash: str
    t_pilot: int
    layers: list


def init_params(cfg: IclConfig) -> ParamStore:
    """Deterministic parameter initialization recorded in the checkpoint header."""
    rng = np.random.default_rng(cfg.init_seed)
    store = ParamStore(
        meta={
            "config": asdict(cfg),
            "config_hash": cfg.hash(),
            "init": "uniform(+-sqrt(6/(fan_in+fan_out))) weights, zero biases, unit norm gains",
            "seed": cfg.init_seed,
        }
    )
    d_tok = cfg.token_width
    a = math.sqrt(6.0 / (d_tok + cfg.d_embed))
    store.add("embed.weight", rng.uniform(-a, a, size=(cfg.d_embed, d_tok)))
    if cfg.use_positional_embedding:
        store.add("embed.position", 0.02 * rng.standard_normal((cfg.max_seq_len, cfg.d_embed)))
    for i in range(cfg.n_layers):
        if cfg.backbone == "transformer":
            tf_mod.init_layer_params(store, f"tf.{i}", cfg.d_embed, cfg.d_ffn, rng)
        else:
            ssm_mod.init_layer_params(store, f"ssm.{i}", cfg.d_embed, cfg.d_state, rng)
    a_cls = math.sqrt(6.0 / (cfg.d_embed + cfg.mod_order))
    store.add("classifier.weight", rng.uniform(-a_cls, a_cls, size=(cfg.n_t * cfg.mod_order, cfg.d_embed)))
    store.add("classifier.bias", np.zeros(cfg.n_t * cfg.mod_order))
    return store


class IclModel:
    """Bundles a config with its parameters and exposes the equalizer interface."""

    def __init__(self, cfg: IclConfig, params: ParamStore | None = None):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg)

    @classmethod
    def from_checkpoint(cls, path) -> "IclModel":
        from ..optim import load_checkpoint

        store = load_checkpoint(path)
        cfg = IclConfig(**store.meta["config"])
        return cls(cfg, store)

    def save(self, path) -> None:
        from ..optim import save_checkpoint

        save_checkpoint(path, self.params)

    # ------------------------------------------------------------------
    # forward pieces
    # ------------------------------------------------------------------

    def embed(self, tokens, position_offset: int = 0) -> tz.Tensor:
        """Linear token embedding; accepts (L, D_tok) or (B, L, D_tok)."""
        if isinstance(tokens, tz.Tensor):
            t = tokens if tokens.ndim == 3 else tz.reshape(tokens, (1,) + tokens.shape)
        else:
            arr = np.asarray(tokens, dtype=float)
            t = tz.Tensor(arr if arr.ndim == 3 else arr[None])
        e = t @ tz.transpose(self.params["embed.weight"], (1, 0))
        if self.cfg.use_positional_embedding:
            e = e + self.params["embed.position"][position_offset : position_offset + e.shape[1]]
        return e

    def backbone_forward(self, e0: tz.Tensor) -> tz.Tensor:
        if self.cfg.backbone == "transformer":
            return tf_mod.forward(self.params, e0, self.cfg.n_layers, self.cfg.n_heads, self.cfg.max_seq_len)
        return ssm_mod.forward(self.params, e0, self.cfg.n_layers, self.cfg.d_state)

    def classify(self, e_out: tz.Tensor) -> tz.Tensor:
        """Per-antenna softmax heads; returns (B, L, N_t * M) with each M-block a PMF."""
        logits = tz.add(
            e_out @ tz.transpose(self.params["classifier.weight"], (1, 0)),
            self.params["classifier.bias"],
        )
        b, l, _ = logits.shape
        blocks = tz.reshape(logits, (b, l, self.cfg.n_t, self.cfg.mod_order))
        return tz.reshape(tz.softmax(blocks, axis=-1), (b, l, self.cfg.n_t * self.cfg.mod_order))

    def forward_tokens(self, tokens) -> tz.Tensor:
        """Full differentiable pass: tokens (B, L, D_tok) to per-position PMFs."""
        return self.classify(self.backbone_forward(self.embed(tokens)))

    # ------------------------------------------------------------------
    # inference
    # ------------------------------------------------------------------

    def equalize(self, Z, pilots, y, p) -> np.ndarray:
        """Posterior PMF vector(s) for data observation(s) without caching.

        ``y`` is (N_r,) for a single query or (n, N_r) for a batch sharing the
        same pilot context; ``p`` matches with (M*N_t,) or (n, M*N_t).
        Returns the final-position PMF(s), shape (M*N_t,) or (n, M*N_t).
        """
        y = np.asarray(y)
        single = y.ndim == 1
        ys = y[None, :] if single else y
        ps = np.asarray(p, dtype=float)
        ps = ps[None, :] if single else ps
        prompts = np.stack(
            [tokenize_inference(Z, pilots, ys[i], ps[i]).tokens for i in range(ys.shape[0])], axis=0
        )
        with tz.no_grad():
            probs = self.forward_tokens(prompts).data[:, -1, :]
        return probs[0] if single else probs

    def build_context_cache(self, Z, pilots) -> ContextCache:
        """Process the pilot context once; queries then cost O(T_P) (Transformer) or O(1) (SSM)."""
        ctx_tokens = tokenize_inference(Z, pilots, np.zeros(Z.shape[0]), self._uniform_prior()).tokens[:-1]
        with tz.no_grad():
            e0 = self.embed(ctx_tokens)
            if self.cfg.backbone == "transformer":
                layers = tf_mod.build_kv_cache(self.params, e0, self.cfg.n_layers, self.cfg.n_heads)
            else:
                layers = ssm_mod.build_state_cache(self.params, e0, self.cfg.n_layers, self.cfg.d_state)
        return ContextCache(config_hash=self.cfg.hash(), t_pilot=pilots.shape[1], layers=layers)

    def query_with_cache(self, cache: ContextCache, y, p) -> np.ndarray:
        """Posterior PMF(s) for data observation(s) against a prebuilt context cache."""
        if cache.config_hash != self.cfg.hash():
            raise ValueError("context cache was built for a different model configuration")
        y = np.asarray(y)
        single = y.ndim == 1
        ys = y[None, :] if single else y
        ps = np.asarray(p, dtype=float)
        ps = ps[None, :] if single else ps
        width = max(self.cfg.n_t, self.cfg.n_r)
        tok = np.zeros((ys.shape[0], 1, self.cfg.token_width))
        tok[:, 0, : ys.shape[1]] = ys.real
        tok[:, 0, width : width + ys.shape[1]] = ys.imag
        tok[:, 0, 2 * width :] = ps
        with tz.no_grad():
            e_q = self.embed(tok, position_offset=2 * cache.t_pilot)
            if self.cfg.backbone == "transformer":
                e = tf_mod.query_forward(self.params, cache.layers, e_q, self.cfg.n_heads)
            else:
                e = ssm_mod.query_forward(self.params, cache.layers, e_q, self.cfg.d_state)
            probs = self.classify(e).data[:, 0, :]
        return probs[0] if single else probs

    def _uniform_prior(self) -> np.ndarray:
        return np.full(self.cfg.n_t * self.cfg.mod_order, 1.0 / self.cfg.mod_order)
