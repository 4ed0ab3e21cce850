"""Experiment suites: reference levels, parallel runs, CSV persistence and manifests."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import tomli

from . import __version__
from .agents import ALGORITHMS, DOUBLING, PSRL_LAGRANGIAN, AgentConfig, epoch_count_bound, preset, run_agent
from .cmdp import AverageValues, ContractViolation
from .envs import ASSETS, BUILTIN_ENVS, make_env
from .lp import InfeasibleError, solve_cmdp
from .metrics import MetricsLog, compute_regret

log = logging.getLogger(__name__)

NUM_CHECKPOINTS = 128
FLOAT_FMT = ".12g"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    env: str
    budget: float
    algorithms: tuple[str, ...]
    horizon: int
    runs: int
    base_seed: int = 0
    agents: dict[str, AgentConfig] = field(default_factory=dict)
    out_dir: str = "results"

    def __post_init__(self):
        if self.env not in ASSETS and self.env not in BUILTIN_ENVS:
            raise ConfigError(f"unknown environment {self.env!r}")
        if not 0.0 <= self.budget <= 1.0:
            raise ConfigError("budget must lie in [0, 1]")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        for name in self.algorithms:
            if name not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm {name!r}")
        if len(set(self.algorithms)) != len(self.algorithms):
            raise ConfigError("algorithms listed twice")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        try:
            exp = dict(data["experiment"])
            env = exp.pop("env")
            algorithms = tuple(exp.pop("algorithms"))
            overrides = data.get("agents", {})
            unknown = set(overrides) - set(algorithms)
            if unknown:
                raise ConfigError(f"agent settings for algorithms not in the list: {sorted(unknown)}")
            agents = {a: preset(env, a, **overrides.get(a, {})) for a in algorithms}
            allowed = {"budget", "horizon", "runs", "base_seed", "out_dir"}
            extra = set(exp) - allowed
            if extra:
                raise ConfigError(f"unknown experiment keys: {sorted(extra)}")
            return cls(env=env, budget=float(exp["budget"]), algorithms=algorithms,
                       horizon=int(exp["horizon"]), runs=int(exp["runs"]),
                       base_seed=int(exp.get("base_seed", 0)), agents=agents,
                       out_dir=str(exp.get("out_dir", "results")))
        except KeyError as err:
            raise ConfigError(f"missing config key {err}") from None
        except (TypeError, ContractViolation) as err:
            raise ConfigError(str(err)) from None

    @classmethod
    def from_toml(cls, path) -> "ExperimentConfig":
        try:
            with open(path, "rb") as fh:
                data = tomli.load(fh)
        except OSError as err:
            raise ConfigError(f"cannot read {path}: {err}") from None
        except tomli.TOMLDecodeError as err:
            raise ConfigError(f"{path}: {err}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {"env": self.env, "budget": self.budget, "algorithms": list(self.algorithms),
                "horizon": self.horizon, "runs": self.runs, "base_seed": self.base_seed,
                "agents": {a: asdict(self.agents[a]) for a in self.algorithms}}

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def agent(self, algorithm: str) -> AgentConfig:
        return self.agents.get(algorithm) or preset(self.env, algorithm)


@dataclass(frozen=True)
class ReferenceLevels:
    optimal: AverageValues
    fast: AverageValues
    safe: AverageValues | None

    def to_dict(self) -> dict:
        def pack(v):
            return None if v is None else {"reward_rate": v.reward_rate, "cost_rates": list(map(float, v.cost_rates))}
        return {"optimal": pack(self.optimal), "fast": pack(self.fast), "safe": pack(self.safe)}

    @classmethod
    def from_dict(cls, data: dict) -> "ReferenceLevels":
        def unpack(v):
            return None if v is None else AverageValues(v["reward_rate"], np.asarray(v["cost_rates"]))
        return cls(unpack(data["optimal"]), unpack(data["fast"]), unpack(data["safe"]))


def compute_reference_levels(env_name: str, budget: float) -> ReferenceLevels:
    """LP levels: constrained optimum, unconstrained (budget 1) and zero-budget."""
    cmdp = make_env(env_name, budget).cmdp
    m = cmdp.num_constraints
    _, optimal = solve_cmdp(cmdp)
    _, fast = solve_cmdp(cmdp.replace(thresholds=np.ones(m)))
    try:
        _, safe = solve_cmdp(cmdp.replace(thresholds=np.zeros(m)))
    except InfeasibleError:
        safe = None
    return ReferenceLevels(optimal, fast, safe)


def checkpoints(horizon: int, count: int = NUM_CHECKPOINTS) -> np.ndarray:
    """Distinct steps, roughly log-spaced over ``[1, horizon]``, always ending at ``horizon``."""
    pts = np.unique(np.round(np.logspace(0, math.log10(horizon), count)).astype(np.int64))
    pts = np.clip(pts, 1, horizon)
    return np.unique(np.append(pts, horizon))


def _fmt(x: float) -> str:
    return format(float(x), FLOAT_FMT)


def _csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([str(row[0])] + [_fmt(v) for v in row[1:]])
    return buf.getvalue()


@dataclass
class RunResult:
    algorithm: str
    run: int
    seed: int
    error: str | None = None
    steps: np.ndarray | None = None
    avg_reward: np.ndarray | None = None
    avg_costs: np.ndarray | None = None
    reward_regret: np.ndarray | None = None
    cost_regrets: np.ndarray | None = None
    planned_reward: np.ndarray | None = None
    planned_costs: np.ndarray | None = None
    num_epochs: int = 0
    schedule: str = DOUBLING
    full_log: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def _planned_series(metrics: MetricsLog, steps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Time-averaged true-model values of the per-epoch policy ``pi_k``."""
    by_epoch = {e.index: e.info["planned_true"] for e in metrics.events}
    per_step = np.array([by_epoch[k] for k in metrics.epochs])
    avg = np.cumsum(per_step, axis=0) / np.arange(1, len(metrics) + 1)[:, None]
    picked = avg[steps - 1]
    return picked[:, 0], picked[:, 1:]


def _run_one(task) -> RunResult:
    env_name, budget, config, horizon, run, seed, r_star, full_logs = task
    res = RunResult(config.algorithm, run, seed, schedule=config.schedule(horizon).kind)
    try:
        env = make_env(env_name, budget)
        metrics = run_agent(env, config, horizon, seed)
        steps = checkpoints(horizon)
        regret = compute_regret(metrics, r_star, env.cmdp.thresholds)
        res.steps = steps
        res.avg_reward = metrics.running_avg_reward[steps - 1]
        res.avg_costs = metrics.running_avg_costs[steps - 1]
        res.reward_regret = regret.reward_regret[steps - 1]
        res.cost_regrets = regret.cost_regrets[steps - 1]
        res.num_epochs = metrics.num_epochs
        if config.algorithm == PSRL_LAGRANGIAN:
            res.planned_reward, res.planned_costs = _planned_series(metrics, steps)
        if full_logs:
            m = env.num_constraints
            header = ["t", "state", "action", "next_state", "reward"] + [f"cost_{i}" for i in range(m)] + ["epoch"]
            rows = zip(range(1, horizon + 1), metrics.states, metrics.actions, metrics.next_states,
                       metrics.rewards, *metrics.costs.T, metrics.epochs)
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([row[0], row[1], row[2], row[3], _fmt(row[4])] + [_fmt(c) for c in row[5:5 + m]] + [row[-1]])
            res.full_log = buf.getvalue()
    except Exception as err:  # a failed run must not take the suite down
        log.exception("run %d of %s failed", run, config.algorithm)
        res.error = f"{type(err).__name__}: {err}"
    return res


def _mean_std(x: np.ndarray) -> tuple[float, float]:
    """Mean and population std, taken about the first run so equal runs give exactly 0."""
    d = x - x[0]
    md = d.mean()
    return float(x[0] + md), float(np.sqrt(np.mean((d - md) ** 2)))


def aggregate_rows(results: list[RunResult], planned: bool = False):
    """Checkpoint rows of mean and population std across runs."""
    ok = [r for r in results if r.ok]
    if not ok:
        return None
    if planned:
        rew = np.stack([r.planned_reward for r in ok])
        cost = np.stack([r.planned_costs for r in ok])
    else:
        rew = np.stack([r.avg_reward for r in ok])
        cost = np.stack([r.avg_costs for r in ok])
    steps = ok[0].steps
    rows = []
    for j, step in enumerate(steps):
        row = [int(step), *_mean_std(rew[:, j])]
        for i in range(cost.shape[2]):
            row += [*_mean_std(cost[:, j, i])]
        rows.append(row)
    return rows


def aggregate_header(num_constraints: int) -> list[str]:
    header = ["step", "mean_avg_reward", "std_avg_reward"]
    for i in range(num_constraints):
        header += [f"mean_avg_cost_{i}", f"std_avg_cost_{i}"]
    return header


def version_string() -> str:
    """Package version, plus the short commit hash when run from a git checkout."""
    here = Path(__file__).resolve().parent
    try:
        sha = subprocess.run(["git", "rev-parse", "--short", "HEAD"], cwd=here, capture_output=True,
                             text=True, timeout=5).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        sha = ""
    return f"{__version__}+g{sha}" if sha else __version__


@dataclass
class SuiteResult:
    out_dir: Path
    manifest: dict
    failures: int
    results: list[RunResult]


def run_suite(config: ExperimentConfig, out_dir=None, workers: int = 1, full_logs: bool = False) -> SuiteResult:
    """Run every (algorithm, run) pair and write CSVs plus a manifest.

    Layout under ``out_dir``::

        manifest.json
        aggregate/<algorithm>.csv
        aggregate/PSRLLagrangian_planned.csv   (per-epoch policy, not the mixture)
        runs/<algorithm>/run_<j>.csv
        logs/<algorithm>/run_<j>.csv           (with full_logs)
    """
    out = Path(out_dir if out_dir is not None else config.out_dir)
    levels = compute_reference_levels(config.env, config.budget)
    r_star = levels.optimal.reward_rate
    S, A = make_env(config.env, config.budget).cmdp.reward.shape
    m = len(levels.optimal.cost_rates)
    tasks = [(config.env, config.budget, config.agent(algo), config.horizon, j, config.base_seed + j, r_star, full_logs)
             for algo in config.algorithms for j in range(config.runs)]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]

    (out / "aggregate").mkdir(parents=True, exist_ok=True)
    run_header = ["step", "avg_reward"] + [f"avg_cost_{i}" for i in range(m)] + ["reward_regret"] + \
        [f"cost_regret_{i}" for i in range(m)]
    bound_checks = []
    for res in results:
        run_dir = out / "runs" / res.algorithm
        run_dir.mkdir(parents=True, exist_ok=True)
        if res.ok:
            rows = [[int(s), res.avg_reward[j], *res.avg_costs[j], res.reward_regret[j], *res.cost_regrets[j]]
                    for j, s in enumerate(res.steps)]
            (run_dir / f"run_{res.run:03d}.csv").write_text(_csv_text(run_header, rows))
            if res.full_log is not None:
                log_dir = out / "logs" / res.algorithm
                log_dir.mkdir(parents=True, exist_ok=True)
                (log_dir / f"run_{res.run:03d}.csv").write_text(res.full_log)
            applies = res.schedule == DOUBLING and config.horizon > 1
            bound = epoch_count_bound(S, A, config.horizon) if config.horizon > 1 else None
            bound_checks.append({"algorithm": res.algorithm, "run": res.run, "epochs": res.num_epochs,
                                 "bound": bound, "applies": applies,
                                 "ok": (res.num_epochs <= bound) if applies else None})
    for algo in config.algorithms:
        mine = [r for r in results if r.algorithm == algo]
        rows = aggregate_rows(mine)
        if rows is not None:
            (out / "aggregate" / f"{algo}.csv").write_text(_csv_text(aggregate_header(m), rows))
        if algo == PSRL_LAGRANGIAN:
            rows = aggregate_rows(mine, planned=True)
            if rows is not None:
                (out / "aggregate" / f"{algo}_planned.csv").write_text(_csv_text(aggregate_header(m), rows))

    failures = [{"algorithm": r.algorithm, "run": r.run, "error": r.error} for r in results if not r.ok]
    violated = [c for c in bound_checks if c["ok"] is False]
    if violated:
        log.warning("epoch-count bound exceeded on %d runs", len(violated))
    manifest = {
        "version": version_string(),
        "config_hash": config.config_hash(),
        "config": config.to_dict(),
        "seeds": {algo: [config.base_seed + j for j in range(config.runs)] for algo in config.algorithms},
        "horizon": config.horizon,
        "reference_levels": levels.to_dict(),
        "epoch_bound_checks": bound_checks,
        "epoch_bound_ok": not violated,
        "failures": failures,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return SuiteResult(out, manifest, len(failures), results)


def read_aggregate(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = np.array(body, dtype=float).reshape(len(body), len(header))
    return {name: cols[:, j] for j, name in enumerate(header)}


def default_workers() -> int:
    return max(1, (os.cpu_count() or 1))
