"""Multi-run orchestration, result tables and learning curves."""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import ExperimentConfig, serialize_config
from .trainers import EvalReport, FlaggedRunError, RunLog, evaluate, median_over_runs, train


def run_rng(seed: int) -> np.random.Generator:
    """Counter-based generator for one run; run i of an experiment uses ``seed + i``."""
    return np.random.Generator(np.random.Philox(seed))


def cell_dir(root: Path, algorithm: str, alpha: float) -> Path:
    return root / f"{algorithm}_alpha{alpha!r}"


@dataclass
class ResultRow:
    algorithm: str
    alpha: float
    expected_cost: float
    expected_penalty: np.ndarray
    runs: int
    flagged: int = 0


@dataclass
class ResultTable:
    rows: list[ResultRow] = field(default_factory=list)

    def row(self, algorithm: str, alpha: float) -> ResultRow:
        for r in self.rows:
            if r.algorithm == algorithm and r.alpha == alpha:
                return r
        raise KeyError((algorithm, alpha))

    def to_csv(self) -> str:
        k = max((r.expected_penalty.shape[0] for r in self.rows), default=0)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["algorithm", "alpha", "median_expected_cost",
                    *[f"median_expected_penalty_{j}" for j in range(k)], "runs", "flagged"])
        for r in self.rows:
            w.writerow([r.algorithm, repr(r.alpha), repr(r.expected_cost),
                        *map(repr, map(float, r.expected_penalty)), r.runs, r.flagged])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ResultTable":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        k = sum(1 for h in header if h.startswith("median_expected_penalty_"))
        rows = []
        for rec in reader:
            rows.append(ResultRow(rec[0], float(rec[1]), float(rec[2]), np.array([float(v) for v in rec[3:3 + k]]),
                                  int(rec[3 + k]), int(rec[4 + k])))
        return cls(rows)


class ExperimentFailed(RuntimeError):
    """At least one run was flagged; the partial table and manifest are on disk."""

    def __init__(self, table: ResultTable, failures: list[dict]):
        super().__init__(f"{len(failures)} run(s) flagged with numerical failures")
        self.table = table
        self.failures = failures


def _report_json(report: EvalReport) -> dict:
    return {"expected_cost": report.expected_cost, "expected_penalty": report.expected_penalty.tolist(),
            "episodes": report.episodes, "cost_std": report.cost_std, "penalty_std": report.penalty_std.tolist()}


def _run_one(job: tuple[ExperimentConfig, str, float, int]) -> dict:
    """Train and evaluate one seed, writing its log, checkpoint and evaluation to disk."""
    config, algorithm, alpha, index = job
    seed = config.seed + index
    directory = cell_dir(Path(config.out), algorithm, alpha)
    directory.mkdir(parents=True, exist_ok=True)
    env = config.make_env(alpha)
    train_rng, eval_rng = run_rng(seed).spawn(2)
    try:
        model, log = train(algorithm, env, config.train_config(), train_rng)
    except FlaggedRunError as exc:
        return {"algorithm": algorithm, "alpha": alpha, "run": index, "seed": seed,
                "episode": exc.episode, "reason": exc.reason}
    log.header["seed"] = seed
    log.write(directory / f"run_{index}.csv")
    model.meta["seed"] = seed
    model.save(directory / f"run_{index}.npz")
    report = evaluate(model, env, config.eval_episodes, eval_rng)
    (directory / f"run_{index}_eval.json").write_text(json.dumps(_report_json(report), sort_keys=True) + "\n")
    return {"report": report}


def run_experiment(config: ExperimentConfig) -> ResultTable:
    """Train ``config.runs`` seeds for every (algorithm, alpha) pair and tabulate medians.

    Writes ``table.csv`` and ``config.txt`` at the output root. Flagged runs
    are left out of the medians and listed in ``failures.json``; the table is
    still written before :class:`ExperimentFailed` is raised.
    """
    root = Path(config.out)
    root.mkdir(parents=True, exist_ok=True)
    (root / "config.txt").write_text(serialize_config(config))
    jobs = [(config, algo, alpha, i) for algo in config.algorithms for alpha in config.alphas for i in range(config.runs)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(job) for job in jobs]
    table = ResultTable()
    failures: list[dict] = []
    for algo in config.algorithms:
        for alpha in config.alphas:
            cell = [res for (_, a, al, _), res in zip(jobs, results) if a == algo and al == alpha]
            reports = [res["report"] for res in cell if "report" in res]
            failed = [res for res in cell if "report" not in res]
            failures.extend(failed)
            if reports:
                med = median_over_runs(reports)
                table.rows.append(ResultRow(algo, alpha, med.expected_cost, med.expected_penalty, len(reports), len(failed)))
            else:
                k = config.make_env(alpha).spec.k_penalties
                table.rows.append(ResultRow(algo, alpha, float("nan"), np.full(k, np.nan), 0, len(failed)))
    (root / "table.csv").write_text(table.to_csv())
    manifest = root / "failures.json"
    if failures:
        manifest.write_text(json.dumps(failures, indent=2, sort_keys=True) + "\n")
        raise ExperimentFailed(table, failures)
    if manifest.exists():
        manifest.unlink()
    return table


# -- learning curves -----------------------------------------------------------------

def moving_average(values: np.ndarray, window: int) -> np.ndarray:
    """Trailing means over complete windows: entry i averages values[i : i + window]."""
    if window < 1:
        raise ValueError("window must be >= 1")
    if window > values.shape[0]:
        raise ValueError(f"window {window} is larger than the log ({values.shape[0]} episodes)")
    c = np.cumsum(np.concatenate([np.zeros((1,) + values.shape[1:]), values]), axis=0)
    if window == 1:
        return values.astype(np.float64)
    return (c[window:] - c[:-window]) / window


@dataclass
class Curve:
    step: np.ndarray
    cost_ma: np.ndarray
    penalty_ma: np.ndarray  # (n, K)
    lambdas: np.ndarray  # (n, K)

    def to_csv(self) -> str:
        k = self.penalty_ma.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "cost_ma", *[f"penalty_ma_{j}" for j in range(k)], *[f"lambda_{j}" for j in range(k)]])
        for i in range(self.step.shape[0]):
            w.writerow([int(self.step[i]), repr(float(self.cost_ma[i])), *map(repr, map(float, self.penalty_ma[i])),
                        *map(repr, map(float, self.lambdas[i]))])
        return buf.getvalue()


def learning_curve(run_logs: Sequence[RunLog], window: int) -> Curve:
    """Average the logs episode by episode, then smooth with a trailing window.

    Logs of unequal length are truncated to the shortest. ``step`` is the
    episode index at the end of each window; ``lambda_j`` is the (run-averaged)
    multiplier at that episode.
    """
    if not run_logs:
        raise ValueError("need at least one run log")
    n = min(len(log.records) for log in run_logs)
    cost = np.mean([log.array("cost")[:n] for log in run_logs], axis=0)
    pens = np.mean([log.array("penalties")[:n] for log in run_logs], axis=0)
    lams = np.mean([log.array("lambdas")[:n] for log in run_logs], axis=0)
    cost_ma = moving_average(cost, window)
    pen_ma = moving_average(pens, window)
    steps = np.arange(window - 1, n)
    return Curve(steps, cost_ma, pen_ma, lams[window - 1:])


def emit_learning_curves(run_logs: Sequence[RunLog], window: int, path: str | Path | None = None) -> str:
    """CSV ``step, cost_ma, penalty_ma_j, lambda_j``; also written to ``path`` when given."""
    text = learning_curve(run_logs, window).to_csv()
    if path is not None:
        Path(path).write_text(text)
    return text


def find_run_logs(directory: str | Path) -> list[Path]:
    return sorted(p for p in Path(directory).rglob("run_*.csv"))


def quartile_means(values: Iterable[float]) -> tuple[float, float]:
    """Means of the first and last quarter of a sequence."""
    v = np.asarray(list(values), dtype=np.float64)
    q = max(1, v.shape[0] // 4)
    return float(v[:q].mean()), float(v[-q:].mean())
