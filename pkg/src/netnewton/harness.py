"""
Experiment drivers and CSV output.

Each driver builds the network and objectives from an :class:`ExperimentConfig`,
runs the requested methods, and (given an output directory) writes one trace
CSV per run plus ``config.resolved.json`` describing exactly what ran.

Trace CSV columns: ``iter, comm_sends, F_value, grad_norm,
weighted_grad_norm, rel_error, alpha, stage, max_local_grad_norm``.
``comm_sends`` counts directed vector sends (node to one neighbor); halve it
for the per-pair exchange count.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .adaptive import AnnConfig, AnnResult, ann_run
from .objectives import (
    LogisticDataConfig,
    QuadraticEnsembleConfig,
    generate_logistic,
    generate_quadratic,
    make_rng,
    quadratic_optimum,
)
from .penalty import PenalizedProblem
from .solvers import DivergenceError, IterationRecord, SolverConfig, SolverResult, run_solver
from .topology import build_cycle_weights, build_d_regular_cycle

log = logging.getLogger(__name__)

SCENARIOS = (
    "quadratic_fixed",
    "quadratic_histogram",
    "ann_sweep",
    "logistic_separable",
    "logistic_nonseparable",
)

TRACE_COLUMNS = [
    "iter", "comm_sends", "F_value", "grad_norm", "weighted_grad_norm",
    "rel_error", "alpha", "stage", "max_local_grad_norm",
]

_SCENARIO_DEFAULTS = {
    "quadratic_fixed": dict(max_iters=3000, tol=1e-9, target_error=0.19),
    "quadratic_histogram": dict(max_iters=20000, tol=1e-10, target_error=1e-2, realizations=100),
    "ann_sweep": dict(max_iters=5000, tol=1e-3, target_error=5e-2),
    "logistic_separable": dict(p=10, mu=3.0, sigma_plus=1.0, sigma_minus=1.0, max_iters=500, tol=1e-12),
    "logistic_nonseparable": dict(p=10, mu=2.0, sigma_plus=2.0, sigma_minus=2.0, max_iters=500, tol=1e-12),
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat parameter set shared by every scenario; unused fields are ignored.

    ``max_iters`` is the per-run cap (per stage for ``ann_sweep``).
    """

    scenario: str = "quadratic_fixed"
    n: int = 100
    p: int = 4
    xi: int = 2
    alpha: float = 1e-2
    alpha0_list: tuple = (1e-1, 1e-2)
    eta: float = 0.1
    outer_rounds: int = 3
    d: int = 4
    d_set: tuple = (2, 4, 6, 8, 10)
    k_list: tuple = (0, 1, 2)
    include_dgd: bool = True
    epsilon: float = 1.0
    tol: float = 1e-9
    target_error: float = 0.19
    max_iters: int = 3000
    realizations: int = 1
    seed: int = 0
    q_i: int = 50
    mu: float = 3.0
    sigma_plus: float = 1.0
    sigma_minus: float = 1.0
    lam: float = 1e-4
    workers: int = 1

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose from {', '.join(SCENARIOS)}")
        for name in ("alpha0_list", "d_set", "k_list"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.n < 3:
            raise ConfigError("n must be at least 3")
        if not self.alpha > 0 or any(a <= 0 for a in self.alpha0_list):
            raise ConfigError("penalty parameters must be positive")
        if not 0 < self.eta < 1:
            raise ConfigError(f"eta must lie in (0, 1), got {self.eta}")
        if not 0 < self.epsilon <= 1:
            raise ConfigError("epsilon must lie in (0, 1]")
        if any(k < 0 for k in self.k_list):
            raise ConfigError("K values must be nonnegative")
        if self.max_iters < 1 or self.realizations < 1 or self.outer_rounds < 1:
            raise ConfigError("max_iters, realizations and outer_rounds must be at least 1")
        if not self.tol > 0 or not self.target_error > 0:
            raise ConfigError("tol and target_error must be positive")
        degrees = self.d_set if self.scenario == "quadratic_histogram" else (self.d,)
        for d in degrees:
            if d % 2 or not 2 <= d <= self.n - 1:
                raise ConfigError(f"degree {d} must be even with 2 <= d <= n - 1")
        if self.scenario.startswith("quadratic") or self.scenario == "ann_sweep":
            if self.p % 2:
                raise ConfigError("quadratic scenarios need even p")
        else:
            if self.q_i < 1 or self.lam <= 0 or self.sigma_plus <= 0 or self.sigma_minus <= 0:
                raise ConfigError("invalid logistic data parameters")

    @classmethod
    def for_scenario(cls, scenario: str, **overrides) -> ExperimentConfig:
        params = dict(_SCENARIO_DEFAULTS.get(scenario, {}))
        params.update(overrides)
        return cls(scenario=scenario, **params)

    @classmethod
    def from_mapping(cls, data: dict) -> ExperimentConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        data = dict(data)
        scenario = data.pop("scenario", "quadratic_fixed")
        return cls.for_scenario(scenario, **data)

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict) or any(isinstance(v, dict) for v in data.values()):
            raise ConfigError("config must be a flat JSON object")
        return cls.from_mapping(data)

    def to_dict(self) -> dict:
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


# --- trace CSV -------------------------------------------------------------


def write_trace_csv(path, trace: list[IterationRecord]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for r in trace:
            writer.writerow([
                r.t, r.comm_exchanges_cumulative, repr(r.F_value), repr(r.grad_norm),
                repr(r.weighted_grad_norm), repr(r.rel_error), repr(r.alpha_current),
                r.stage, repr(r.max_local_grad_norm),
            ])


def read_trace_csv(path) -> list[IterationRecord]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRACE_COLUMNS:
            raise ValueError(f"unexpected trace columns {reader.fieldnames}")
        for row in reader:
            out.append(IterationRecord(
                t=int(row["iter"]),
                F_value=float(row["F_value"]),
                grad_norm=float(row["grad_norm"]),
                weighted_grad_norm=float(row["weighted_grad_norm"]),
                rel_error=float(row["rel_error"]),
                comm_exchanges_cumulative=int(row["comm_sends"]),
                alpha_current=float(row["alpha"]),
                stage=int(row["stage"]),
                max_local_grad_norm=float(row["max_local_grad_norm"]),
            ))
    return out


def first_below(values, threshold):
    """Index of the first entry strictly below ``threshold``, or None."""
    values = np.asarray(values)
    hits = np.flatnonzero(values < threshold)
    return int(hits[0]) if hits.size else None


def iterations_to_error(trace, target):
    idx = first_below([r.rel_error for r in trace], target)
    return None if idx is None else trace[idx].t


def iterations_to_value(trace, target):
    """First iteration with ``F(y_t) <= target``, or None."""
    hits = np.flatnonzero(np.array([r.F_value for r in trace]) <= target)
    return int(trace[hits[0]].t) if hits.size else None


def _method_configs(cfg: ExperimentConfig, tol=None, max_iters=None):
    tol = cfg.tol if tol is None else tol
    max_iters = cfg.max_iters if max_iters is None else max_iters
    out = []
    if cfg.include_dgd:
        out.append(SolverConfig("dgd", 0, 1.0, tol, max_iters))
    out += [SolverConfig("nn", k, cfg.epsilon, tol, max_iters) for k in cfg.k_list]
    return out


def _out_dir(out_dir):
    if out_dir is None:
        return None
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _quadratic_problem(cfg: ExperimentConfig, d: int, rng=None, alpha=None):
    topo = build_d_regular_cycle(cfg.n, d)
    w = build_cycle_weights(topo, d)
    ens = generate_quadratic(cfg.n, QuadraticEnsembleConfig(cfg.p, cfg.xi, cfg.seed), rng=rng)
    prob = PenalizedProblem(topo, w, ens, cfg.alpha if alpha is None else alpha)
    return prob, quadratic_optimum(ens)


# --- scenarios -------------------------------------------------------------


@dataclass
class FixedRunResult:
    results: dict[str, SolverResult]
    x_star: np.ndarray
    target_error: float
    iterations_to_target: dict[str, int | None] = field(default_factory=dict)
    sends_to_target: dict[str, int | None] = field(default_factory=dict)
    final_error: dict[str, float] = field(default_factory=dict)


def run_fixed_quadratic(cfg: ExperimentConfig, out_dir=None) -> FixedRunResult:
    """DGD and NN-K on one shared quadratic instance and d-regular cycle."""
    if cfg.scenario != "quadratic_fixed":
        raise ConfigError(f"run_fixed_quadratic needs scenario quadratic_fixed, got {cfg.scenario}")
    out = _out_dir(out_dir)
    prob, x_star = _quadratic_problem(cfg, cfg.d)
    y0 = np.zeros((prob.n, prob.p))
    summary = FixedRunResult(results={}, x_star=x_star, target_error=cfg.target_error)
    for scfg in _method_configs(cfg):
        res = run_solver(prob, y0, scfg, x_star=x_star)
        summary.results[scfg.label] = res
        t_hit = iterations_to_error(res.trace, cfg.target_error)
        summary.iterations_to_target[scfg.label] = t_hit
        summary.sends_to_target[scfg.label] = (
            None if t_hit is None else res.trace[t_hit].comm_exchanges_cumulative
        )
        summary.final_error[scfg.label] = res.trace[-1].rel_error
        if out is not None:
            write_trace_csv(out / f"trace_{scfg.label}.csv", res.trace)
    if out is not None:
        cfg.save(out / "config.resolved.json")
    return summary


@dataclass
class HistogramRow:
    realization: int
    seed: int
    d: int
    method: str
    iterations: int | None
    exchanges: int | None
    censored: bool


@dataclass
class HistogramResult:
    rows: list[HistogramRow]

    def methods(self):
        return list(dict.fromkeys(r.method for r in self.rows))

    def complete_realizations(self):
        """Realizations in which every method reached the target."""
        by_real: dict[int, list[HistogramRow]] = {}
        for r in self.rows:
            by_real.setdefault(r.realization, []).append(r)
        return sorted(k for k, v in by_real.items() if not any(r.censored for r in v))

    def summary(self, *, complete_only=True) -> dict[str, dict]:
        keep = set(self.complete_realizations()) if complete_only else None
        out = {}
        for m in self.methods():
            rows = [r for r in self.rows if r.method == m]
            used = [r for r in rows if not r.censored and (keep is None or r.realization in keep)]
            ex = np.array([r.exchanges for r in used], dtype=float)
            it = np.array([r.iterations for r in used], dtype=float)
            out[m] = dict(
                count=len(used),
                censored=sum(r.censored for r in rows),
                mean_exchanges=float(ex.mean()) if ex.size else math.nan,
                median_exchanges=float(np.median(ex)) if ex.size else math.nan,
                mean_iterations=float(it.mean()) if it.size else math.nan,
            )
        return out

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["realization", "seed", "d", "method", "iterations", "exchanges", "censored"])
            for r in self.rows:
                writer.writerow([r.realization, r.seed, r.d, r.method,
                                 "" if r.iterations is None else r.iterations,
                                 "" if r.exchanges is None else r.exchanges, int(r.censored)])


def _histogram_realization(cfg: ExperimentConfig, r: int) -> list[HistogramRow]:
    # realization r draws from PCG64(seed + r): the degree first, then the objectives
    seed = cfg.seed + r
    rng = make_rng(seed)
    d = int(rng.choice(np.array(cfg.d_set)))
    prob, x_star = _quadratic_problem(cfg, d, rng=rng)
    y0 = np.zeros((prob.n, prob.p))
    rows = []
    for scfg in _method_configs(cfg):
        try:
            res = run_solver(prob, y0, scfg, x_star=x_star, stop_error=cfg.target_error)
            t_hit = iterations_to_error(res.trace, cfg.target_error)
        except DivergenceError:
            t_hit = None
        exchanges = None if t_hit is None else scfg.rounds_per_iteration * t_hit
        rows.append(HistogramRow(r, seed, d, scfg.label, t_hit, exchanges, t_hit is None))
    return rows


def run_histogram(cfg: ExperimentConfig, out_dir=None) -> HistogramResult:
    """Repeat the quadratic study over random instances and random even degrees.

    Exchanges are per neighbor pair: ``t`` for DGD and ``(K + 1) t`` for
    NN-K.  Runs that never reach the target within ``max_iters`` (or stall
    at a plateau above it) are marked censored.
    """
    if cfg.scenario != "quadratic_histogram":
        raise ConfigError(f"run_histogram needs scenario quadratic_histogram, got {cfg.scenario}")
    out = _out_dir(out_dir)
    reals = range(cfg.realizations)
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            chunks = list(pool.map(_histogram_realization, [cfg] * cfg.realizations, reals))
    else:
        chunks = [_histogram_realization(cfg, r) for r in reals]
    result = HistogramResult([row for chunk in chunks for row in chunk])
    if out is not None:
        result.to_csv(out / "histogram.csv")
        summary = result.summary()
        (out / "histogram_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        cfg.save(out / "config.resolved.json")
    return result


@dataclass
class AnnSweepResult:
    runs: dict[tuple[float, str], AnnResult | None]
    x_star: np.ndarray
    target_error: float

    def iterations_to_target(self, alpha0, label):
        run = self.runs[(alpha0, label)]
        if run is None:
            return None
        return iterations_to_error(run.trace, self.target_error)


def run_ann_sweep(cfg: ExperimentConfig, out_dir=None) -> AnnSweepResult:
    """Adaptive DGD and ANN-K for every initial penalty in ``alpha0_list``.

    A run that diverges is stored as ``None``.
    """
    if cfg.scenario != "ann_sweep":
        raise ConfigError(f"run_ann_sweep needs scenario ann_sweep, got {cfg.scenario}")
    out = _out_dir(out_dir)
    prob, x_star = _quadratic_problem(cfg, cfg.d)
    y0 = np.zeros((prob.n, prob.p))
    runs = {}
    for alpha0 in cfg.alpha0_list:
        for scfg in _method_configs(cfg):
            acfg = AnnConfig(alpha0, cfg.eta, cfg.tol, scfg.K, scfg.epsilon, cfg.outer_rounds,
                             cfg.max_iters, scfg.method)
            label = "DGD" if scfg.method == "dgd" else f"ANN-{scfg.K}"
            try:
                res = ann_run(prob, y0, acfg, x_star=x_star)
            except DivergenceError as exc:
                log.warning("alpha0=%g %s diverged: %s", alpha0, label, exc)
                res = None
            runs[(alpha0, label)] = res
            if out is not None and res is not None:
                write_trace_csv(out / f"trace_alpha0={alpha0:g}_{label}.csv", res.trace)
    if out is not None:
        cfg.save(out / "config.resolved.json")
    return AnnSweepResult(runs=runs, x_star=x_star, target_error=cfg.target_error)


@dataclass
class LogisticRunResult:
    results: dict[str, SolverResult]
    problem: PenalizedProblem

    def final_values(self):
        return {k: v.trace[-1].F_value for k, v in self.results.items()}


def run_logistic(cfg: ExperimentConfig, out_dir=None) -> LogisticRunResult:
    """DGD and NN-K on synthetic logistic regression for ``max_iters`` iterations."""
    if cfg.scenario not in ("logistic_separable", "logistic_nonseparable"):
        raise ConfigError(f"run_logistic needs a logistic scenario, got {cfg.scenario}")
    out = _out_dir(out_dir)
    topo = build_d_regular_cycle(cfg.n, cfg.d)
    w = build_cycle_weights(topo, cfg.d)
    data = LogisticDataConfig(cfg.p, cfg.q_i, cfg.mu, cfg.sigma_plus, cfg.sigma_minus, cfg.lam, cfg.seed)
    prob = PenalizedProblem(topo, w, generate_logistic(cfg.n, data), cfg.alpha)
    y0 = np.zeros((prob.n, prob.p))
    results = {}
    for scfg in _method_configs(cfg):
        res = run_solver(prob, y0, scfg)
        results[scfg.label] = res
        if out is not None:
            write_trace_csv(out / f"trace_{scfg.label}.csv", res.trace)
    if out is not None:
        cfg.save(out / "config.resolved.json")
    return LogisticRunResult(results=results, problem=prob)


def run_scenario(cfg: ExperimentConfig, out_dir=None):
    if cfg.scenario == "quadratic_fixed":
        return run_fixed_quadratic(cfg, out_dir)
    if cfg.scenario == "quadratic_histogram":
        return run_histogram(cfg, out_dir)
    if cfg.scenario == "ann_sweep":
        return run_ann_sweep(cfg, out_dir)
    return run_logistic(cfg, out_dir)
