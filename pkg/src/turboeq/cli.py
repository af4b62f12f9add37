"""Command-line interface.

Subcommands: ``train`` (pre-train an ICL model from a JSON config), ``sweep``
(Monte Carlo BER sweep to CSV, optionally rendering figures alongside),
``gradcheck`` (finite-difference gradient suite), ``selftest`` (fast invariant
suite).  Every run is deterministic in its config and seed.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import harness, pretrain, report, verify
from .icl.model import IclConfig, IclModel
from .link import TaskDistribution


def _cmd_train(args) -> int:
    with open(args.config) as fh:
        raw = json.load(fh)
    model_cfg = IclConfig(**raw.get("model", {}))
    train_kwargs = dict(raw.get("train", {}))
    dist = TaskDistribution(
        n_t=model_cfg.n_t, n_r=model_cfg.n_r, **raw.get("task_distribution", {})
    )
    n_tasks = int(raw.get("n_train_tasks", 256))
    pool_seed = int(raw.get("pool_seed", 1))
    seed = args.seed if args.seed is not None else int(raw.get("seed", 0))

    checkpoint = args.checkpoint or raw.get("checkpoint", "model.ckpt")
    cfg = pretrain.TrainConfig(checkpoint_path=str(checkpoint), **train_kwargs)
    pool = pretrain.TaskPool.sample(dist, n_tasks, pool_seed)
    model = IclModel(model_cfg)
    print(
        f"training {model_cfg.backbone} ({model.params.n_parameters()} parameters) "
        f"for {cfg.total_steps} steps on {n_tasks} tasks"
    )
    _, history = pretrain.train(model, pool, cfg, seed)
    if args.out:
        pretrain.write_loss_history(args.out, history)
        print(f"loss history written to {args.out}")
    print(f"final loss {history[-1][2]:.5f}; checkpoint at {checkpoint}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = harness.ExperimentConfig.from_json(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.frames is not None:
        cfg.frames = args.frames
    if args.checkpoint is not None:
        cfg.checkpoint = args.checkpoint
    rows = harness.run_sweep(cfg)
    out = args.out or "metrics.csv"
    harness.write_metrics_csv(out, rows, cfg)
    print(f"{len(rows)} metric rows written to {out}")
    if args.plot:
        path = report.render_ber_figure(rows, args.plot, title=f"{cfg.equalizer} sweep")
        print(f"figure written to {path}")
    return 0


def _cmd_gradcheck(args) -> int:
    results = verify.gradient_suite(seed=args.seed or 0)
    failed = 0
    for name, err, tol in results:
        ok = err < tol
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'}  {name:24s} max rel err {err:.3e} (tol {tol:.0e})")
    print(f"{len(results) - failed}/{len(results)} gradient checks passed")
    return 1 if failed else 0


def _cmd_selftest(args) -> int:
    results = verify.selftest_suite(seed=args.seed or 0)
    failed = 0
    for name, ok, detail in results:
        failed += not ok
        suffix = f"  [{detail}]" if detail else ""
        print(f"{'PASS' if ok else 'FAIL'}  {name}{suffix}")
    print(f"{len(results) - failed}/{len(results)} selftest checks passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="turboeq", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="pre-train an ICL equalizer from a JSON config")
    p_train.add_argument("--config", required=True, help="JSON file with model/train/task_distribution sections")
    p_train.add_argument("--out", help="loss-history CSV path")
    p_train.add_argument("--seed", type=int, help="override training seed")
    p_train.add_argument("--checkpoint", help="override checkpoint path")
    p_train.set_defaults(func=_cmd_train)

    p_sweep = sub.add_parser("sweep", help="run a BER/FER sweep and write metrics CSV")
    p_sweep.add_argument("--config", required=True, help="experiment config JSON")
    p_sweep.add_argument("--out", help="metrics CSV path (default metrics.csv)")
    p_sweep.add_argument("--seed", type=int, help="override master seed")
    p_sweep.add_argument("--frames", type=int, help="override frame count")
    p_sweep.add_argument("--checkpoint", help="override model checkpoint")
    p_sweep.add_argument("--plot", help="also render BER figure(s) to this file")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.set_defaults(func=_cmd_gradcheck)

    p_self = sub.add_parser("selftest", help="fast invariant suite")
    p_self.add_argument("--seed", type=int, default=0)
    p_self.set_defaults(func=_cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
