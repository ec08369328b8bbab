"""Command-line entry point: ``train``, ``evaluate``, ``oracle`` and ``curves``.

Exit codes: 0 success, 1 invalid input, 2 flagged numerical failure.
"""
from __future__ import annotations

import argparse
import io
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import oracle
from .config import ConfigError, ExperimentConfig, load_config
from .envs import ENVIRONMENTS, make_env
from .experiment import ExperimentFailed, emit_learning_curves, find_run_logs, run_experiment, run_rng
from .trainers import ALGORITHMS, FlaggedRunError, RunLog, TrainedModel, evaluate

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nestedac", description="Nested actor-critic for constrained cooperative games")
    sub = parser.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="train and evaluate a multi-run experiment")
    tr.add_argument("--config", help="key = value experiment file; flags override it")
    tr.add_argument("--env", choices=sorted(ENVIRONMENTS))
    tr.add_argument("--algo", nargs="+", choices=ALGORITHMS)
    tr.add_argument("--alpha", nargs="+", type=float)
    tr.add_argument("--episodes", type=int)
    tr.add_argument("--eval-episodes", type=int)
    tr.add_argument("--runs", type=int)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--workers", type=int)
    tr.add_argument("--out")

    ev = sub.add_parser("evaluate", help="roll out a saved model")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--episodes", type=int, default=10_000)
    ev.add_argument("--seed", type=int, default=0)

    orc = sub.add_parser("oracle", help="exact dual analysis of an enumerable game")
    orc.add_argument("--env", default="grid", choices=sorted(ENVIRONMENTS))
    orc.add_argument("--alpha", type=float, default=0.1)
    orc.add_argument("--lambda-max", type=float, default=5.0)
    orc.add_argument("--grid-points", type=int, default=51)
    orc.add_argument("--refine-rounds", type=int, default=20)
    orc.add_argument("--gamma", type=float, default=0.99)
    orc.add_argument("--start-mode", default=None, help="grid world start placement (independent or shared)")
    orc.add_argument("--out", help="directory for dual_grid.csv, solution.csv and game.npz")

    cu = sub.add_parser("curves", help="moving-average learning curves from run logs")
    cu.add_argument("--logs", required=True, help="directory searched recursively for run_*.csv")
    cu.add_argument("--window", type=int, default=100)
    cu.add_argument("--out", help="output CSV (default: <logs>/curves.csv)")
    return parser


def _train(args) -> int:
    base = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {
        "env": args.env, "algorithms": tuple(args.algo) if args.algo else None,
        "alphas": tuple(args.alpha) if args.alpha else None, "episodes": args.episodes,
        "eval_episodes": args.eval_episodes, "runs": args.runs, "seed": args.seed,
        "workers": args.workers, "out": args.out,
    }
    config = base.with_updates(**{k: v for k, v in overrides.items() if v is not None})
    table = run_experiment(config)
    sys.stdout.write(table.to_csv())
    return EXIT_OK


def _evaluate(args) -> int:
    if args.episodes < 1:
        raise ValueError("--episodes must be >= 1")
    model = TrainedModel.load(args.checkpoint)
    env = make_env(model.spec.env_id, model.spec.thresholds, model.spec.gamma, **model.meta.get("env_options", {}))
    report = evaluate(model, env, args.episodes, run_rng(args.seed))
    print(json.dumps({"expected_cost": report.expected_cost, "expected_penalty": report.expected_penalty.tolist(),
                      "episodes": report.episodes, "penalty_stderr": report.penalty_stderr().tolist()}))
    return EXIT_OK


def oracle_tables(env, lambda_max: float, grid_points: int, refine_rounds: int) -> tuple[str, str, oracle.TabularGame]:
    """Dual grid CSV and solution CSV for an enumerable environment."""
    tab = oracle.fold_horizon(oracle.enumerate_joint(env), env.spec.max_steps)
    sol = oracle.dual_maximize(tab, lambda_max, grid_points, refine_rounds)
    k = tab.k
    grid_buf = io.StringIO()
    w = csv.writer(grid_buf, lineterminator="\n")
    w.writerow([*[f"lambda_{j}" for j in range(k)], "g"])
    for lam, g in zip(sol.grid, sol.grid_values):
        w.writerow([*map(repr, map(float, lam)), repr(float(g))])
    sol_buf = io.StringIO()
    w = csv.writer(sol_buf, lineterminator="\n")
    channels = ["cost", *range(k)]
    names = ["cost", *[f"penalty_{j}" for j in range(k)]]
    w.writerow([*[f"lambda_star_{j}" for j in range(k)], "g_star",
                *[f"discounted_{n}" for n in names], *[f"undiscounted_{n}" for n in names]])
    disc = [oracle.policy_eval(tab, sol.policy, c)[1] for c in channels]
    undisc = [oracle.policy_eval(tab, sol.policy, c, gamma=1.0)[1] for c in channels]
    w.writerow([*map(repr, map(float, sol.lam)), repr(sol.value), *map(repr, disc), *map(repr, undisc)])
    return grid_buf.getvalue(), sol_buf.getvalue(), tab


def _oracle(args) -> int:
    options = {} if args.start_mode is None else {"start_mode": args.start_mode}
    env = make_env(args.env, (args.alpha,), args.gamma, **options)
    grid_csv, sol_csv, tab = oracle_tables(env, args.lambda_max, args.grid_points, args.refine_rounds)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "dual_grid.csv").write_text(grid_csv)
        (out / "solution.csv").write_text(sol_csv)
        tab.save(out / "game.npz")
    sys.stdout.write(grid_csv + "\n" + sol_csv)
    return EXIT_OK


def _curves(args) -> int:
    paths = find_run_logs(args.logs)
    if not paths:
        raise ValueError(f"no run_*.csv logs under {args.logs}")
    target = Path(args.out) if args.out else Path(args.logs) / "curves.csv"
    emit_learning_curves([RunLog.read(p) for p in paths], args.window, target)
    print(target)
    return EXIT_OK


COMMANDS = {"train": _train, "evaluate": _evaluate, "oracle": _oracle, "curves": _curves}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    try:
        return COMMANDS[args.command](args)
    except (ExperimentFailed, FlaggedRunError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, KeyError, OSError, oracle.NotEnumerable) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
