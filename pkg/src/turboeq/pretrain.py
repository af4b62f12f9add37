"""Offline pre-training of the ICL soft equalizer.

Prompts interleave query/answer pairs: per position and antenna a prior PMF
is drawn from a Dirichlet, the transmitted symbol is drawn from that prior,
and the received vector comes from the link model of a task sampled uniformly
from the training pool.  The loss is cross entropy on the query-position
outputs, weighted logarithmically toward later positions so that predictions
are pushed to improve as context accumulates.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import tensor as tz
from .icl.model import IclModel
from .icl.tokens import tokenize_training
from .link import Constellation, Task, TaskDistribution, build_constellation, quantize, sample_task
from .optim import OptimizerState, adamw_step, cosine_lr, save_checkpoint

__all__ = [
    "TaskPool",
    "TrainConfig",
    "sample_prior",
    "make_training_prompt",
    "position_weights",
    "weighted_ce",
    "train",
    "per_position_loss",
    "write_loss_history",
]


@dataclass
class TaskPool:
    """Fixed set of tasks drawn i.i.d. from a task distribution.

    Task k is seeded by (seed, k), so pools with different master seeds are
    disjoint by construction; keep training and test master seeds apart.
    """

    tasks: list
    seed: int

    @classmethod
    def sample(cls, dist: TaskDistribution, n_tasks: int, seed: int) -> "TaskPool":
        tasks = [sample_task(dist, np.random.SeedSequence([seed, k])) for k in range(n_tasks)]
        return cls(tasks=tasks, seed=seed)

    def __len__(self):
        return len(self.tasks)


@dataclass
class TrainConfig:
    t_train: int = 40
    batch_size: int = 128
    iterations_per_epoch: int = 200
    epochs: int = 10
    peak_lr: float = 1e-4
    lam: float = 0.5
    dirichlet_beta: float = 1.0
    warmup_frac: float = 0.01
    weight_decay: float = 0.01
    checkpoint_every: int = 500
    checkpoint_path: str | None = None

    def __post_init__(self):
        if min(self.t_train, self.batch_size, self.iterations_per_epoch, self.epochs) < 1:
            raise ValueError("t_train, batch_size, iterations_per_epoch and epochs must be positive")
        if self.lam <= 0 or self.peak_lr <= 0:
            raise ValueError("lam and peak_lr must be positive")

    @property
    def total_steps(self) -> int:
        return self.epochs * self.iterations_per_epoch


def sample_prior(beta: np.ndarray, seed) -> np.ndarray:
    """One Dirichlet draw via normalized Gamma variates."""
    beta = np.asarray(beta, dtype=float)
    if np.any(beta <= 0):
        raise ValueError("Dirichlet concentration entries must be positive")
    rng = np.random.default_rng(seed)
    g = rng.standard_gamma(beta)
    return g / g.sum()


def _synthesize(task: Task, c: Constellation, t_train: int, beta: float, rng):
    """Priors, symbols, indices and received vectors for one training prompt."""
    n_t = task.n_t
    M = c.order
    g = rng.standard_gamma(beta, size=(t_train, n_t, M))
    priors = g / g.sum(axis=-1, keepdims=True)
    cdf = np.cumsum(priors, axis=-1)
    u = rng.random((t_train, n_t))
    idx = (u[..., None] < cdf).argmax(axis=-1)
    X = c.points[idx]  # (T, N_t)
    noise = np.sqrt(task.sigma2 / 2.0) * (
        rng.standard_normal((t_train, task.n_r)) + 1j * rng.standard_normal((t_train, task.n_r))
    )
    Y = quantize(X @ task.H.T + noise, task.quant)  # (T, N_r)
    return priors, idx, X, Y


def make_training_prompt(task: Task, t_train: int, seed, c: Constellation | None = None, beta: float = 1.0):
    """Build one interleaved training prompt; returns (PromptTokens, answer indices (T, N_t))."""
    if c is None:
        raise ValueError("a constellation is required to synthesize prompts")
    rng = np.random.default_rng(seed)
    priors, idx, X, Y = _synthesize(task, c, t_train, beta, rng)
    tokens = tokenize_training(Y, priors.reshape(t_train, -1), X)
    return tokens, idx


def position_weights(t_train: int, lam: float) -> np.ndarray:
    """Normalized log(1 + lam*j) weights over query positions j = 1..T, strictly increasing."""
    if t_train < 1 or lam <= 0:
        raise ValueError("need t_train >= 1 and lam > 0")
    raw = np.log1p(lam * np.arange(1, t_train + 1))
    return raw / raw.sum()


def weighted_ce(outputs, answers: np.ndarray, weights: np.ndarray, n_t: int, order: int) -> tz.Tensor:
    """Position-weighted cross entropy against the transmitted symbol indices.

    ``outputs`` holds query-position PMFs, shape (B, T, N_t*M) (a Tensor keeps
    the graph alive for backward; arrays work for evaluation).  The returned
    scalar is the batch mean.  Probabilities are floored at 1e-12.
    """
    out = outputs if isinstance(outputs, tz.Tensor) else tz.Tensor(np.asarray(outputs, dtype=float))
    answers = np.asarray(answers)
    if answers.ndim == 2:
        answers = answers[None]
    b, t, width = out.shape
    if answers.shape != (b, t, n_t):
        raise ValueError(f"answers shape {answers.shape} does not match outputs {(b, t, n_t)}")
    if np.any(answers < 0) or np.any(answers >= order):
        raise ValueError("answer index outside the constellation")
    mask = np.zeros((b, t, width))
    flat_idx = np.arange(n_t) * order + answers  # (B, T, N_t)
    bb, tt = np.meshgrid(np.arange(b), np.arange(t), indexing="ij")
    for n in range(n_t):
        mask[bb, tt, flat_idx[..., n]] += np.asarray(weights)[None, :]
    picked = tz.mul(tz.log(tz.maximum(out, 1e-12)), mask)
    return tz.scale(tz.tsum(picked), -1.0 / b)


def _batch_tokens(pool: TaskPool, c: Constellation, cfg: TrainConfig, rng):
    """Synthesize one mini-batch of training prompts; returns (tokens (B,L,D), answers (B,T,N_t))."""
    task_ids = rng.integers(0, len(pool.tasks), size=cfg.batch_size)
    toks = []
    ans = []
    for tid in task_ids:
        priors, idx, X, Y = _synthesize(pool.tasks[tid], c, cfg.t_train, cfg.dirichlet_beta, rng)
        toks.append(tokenize_training(Y, priors.reshape(cfg.t_train, -1), X).tokens)
        ans.append(idx)
    return np.stack(toks), np.stack(ans)


def train(model: IclModel, pool: TaskPool, cfg: TrainConfig, seed: int):
    """Optimize the model on pool tasks; returns (ParamStore, history rows).

    History rows are (step, lr, loss).  Checkpoints are written every
    ``cfg.checkpoint_every`` steps plus at the end when a path is configured.
    Fully deterministic in (model init, pool, cfg, seed).
    """
    c = build_constellation(model.cfg.mod_order)
    if 2 * cfg.t_train > model.cfg.max_seq_len:
        raise ValueError("training prompt exceeds the model's maximum sequence length")
    rng = np.random.default_rng(seed)
    weights = position_weights(cfg.t_train, cfg.lam)
    opt = OptimizerState(weight_decay=cfg.weight_decay)
    warmup = max(1, int(round(cfg.warmup_frac * cfg.total_steps)))
    history = []

    for step in range(1, cfg.total_steps + 1):
        tokens, answers = _batch_tokens(pool, c, cfg, rng)
        model.params.zero_grad()
        # per-op finiteness scans are off in the hot loop; the loss guard below
        # still aborts divergent runs with a diagnostic checkpoint
        with tz.fast_math():
            probs = model.forward_tokens(tokens)
            query_probs = probs[:, 0::2, :]
            loss = weighted_ce(query_probs, answers, weights, model.cfg.n_t, model.cfg.mod_order)
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                if cfg.checkpoint_path:
                    save_checkpoint(str(cfg.checkpoint_path) + ".diverged", model.params)
                raise RuntimeError(f"non-finite loss at step {step}")
            tz.backward(loss)
        lr = cosine_lr(step, cfg.total_steps, cfg.peak_lr, warmup)
        adamw_step(model.params, opt, lr)
        history.append((step, lr, loss_val))
        if cfg.checkpoint_path and (step % cfg.checkpoint_every == 0 or step == cfg.total_steps):
            model.params.meta["trained_steps"] = step
            save_checkpoint(cfg.checkpoint_path, model.params)
    return model.params, history


def per_position_loss(model: IclModel, pool: TaskPool, cfg: TrainConfig, seed, n_prompts: int = 64) -> np.ndarray:
    """Mean unweighted cross entropy per query position over fresh prompts from the pool."""
    c = build_constellation(model.cfg.mod_order)
    rng = np.random.default_rng(seed)
    eval_cfg = TrainConfig(
        t_train=cfg.t_train,
        batch_size=n_prompts,
        iterations_per_epoch=1,
        epochs=1,
        peak_lr=cfg.peak_lr,
        lam=cfg.lam,
        dirichlet_beta=cfg.dirichlet_beta,
    )
    tokens, answers = _batch_tokens(pool, c, eval_cfg, rng)
    with tz.no_grad():
        probs = model.forward_tokens(tokens).data[:, 0::2, :]
    n_t, order = model.cfg.n_t, model.cfg.mod_order
    flat_idx = np.arange(n_t) * order + answers
    picked = np.take_along_axis(probs, flat_idx.reshape(n_prompts, cfg.t_train, n_t), axis=-1)
    return -np.log(np.maximum(picked, 1e-12)).sum(axis=-1).mean(axis=0)


def write_loss_history(path, history) -> None:
    """Loss history CSV with columns step, lr, loss."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "lr", "loss"])
        for step, lr, loss in history:
            writer.writerow([step, f"{lr:.12g}", f"{loss:.12g}"])
