"""Command-line entry point: ``netnewton {run,hist,ann,validate}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import harness
from .harness import ConfigError, ExperimentConfig
from .solvers import DivergenceError

EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_VALIDATION = 4


def _int_list(text):
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser():
    parser = argparse.ArgumentParser(prog="netnewton", description="Network Newton decentralized optimization simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario_choice):
        p.add_argument("--config", help="flat JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory for CSV traces")
        p.add_argument("--k", type=_int_list, help="comma-separated K values, e.g. 0,1,2")
        p.add_argument("--max-iters", type=int)
        if scenario_choice:
            p.add_argument("--scenario", choices=harness.SCENARIOS)

    common(sub.add_parser("run", help="run a single scenario"), True)
    p_hist = sub.add_parser("hist", help="histogram study over random realizations")
    common(p_hist, False)
    p_hist.add_argument("--realizations", type=int)
    p_hist.add_argument("--workers", type=int)
    common(sub.add_parser("ann", help="adaptive penalty sweep"), False)
    p_val = sub.add_parser("validate", help="weight, derivative and oracle checks")
    p_val.add_argument("--seed", type=int, default=0)
    return parser


def _resolve_config(args, command_scenario):
    data = {}
    if args.config:
        ExperimentConfig.load(args.config)  # validates the file on its own
        with open(args.config) as fh:
            data = json.load(fh)
    file_scenario = data.pop("scenario", None)
    if command_scenario is not None:
        if file_scenario not in (None, command_scenario):
            raise ConfigError(f"config scenario {file_scenario!r} does not match command {args.command!r}")
        scenario = command_scenario
    else:
        scenario = getattr(args, "scenario", None) or file_scenario or "quadratic_fixed"
    for key, attr in (("seed", "seed"), ("k_list", "k"), ("max_iters", "max_iters"),
                      ("realizations", "realizations"), ("workers", "workers")):
        value = getattr(args, attr, None)
        if value is not None:
            data[key] = value
    return ExperimentConfig.from_mapping({"scenario": scenario, **data})


def _report(cfg, result):
    if isinstance(result, harness.FixedRunResult):
        for label, t in result.iterations_to_target.items():
            print(f"{label}: iterations to e<{cfg.target_error:g} = {t}, "
                  f"sends = {result.sends_to_target[label]}, final e = {result.final_error[label]:.3e}")
    elif isinstance(result, harness.HistogramResult):
        for label, s in result.summary().items():
            print(f"{label}: mean exchanges {s['mean_exchanges']:.1f} over {s['count']} runs "
                  f"({s['censored']} censored)")
    elif isinstance(result, harness.AnnSweepResult):
        for (alpha0, label), run in result.runs.items():
            t = result.iterations_to_target(alpha0, label)
            status = "diverged" if run is None else f"iterations to e<{cfg.target_error:g} = {t}"
            print(f"alpha0={alpha0:g} {label}: {status}")
    elif isinstance(result, harness.LogisticRunResult):
        for label, value in result.final_values().items():
            print(f"{label}: F after {cfg.max_iters} iterations = {value:.6e}")


def _validate(seed):
    from .objectives import LogisticDataConfig, check_derivatives, generate_logistic
    from .penalty import PenalizedProblem, gradient, nn_direction
    from .topology import build_cycle_weights, build_d_regular_cycle, validate_weights

    ok = True
    for n in (10, 50, 100):
        for d in (2, 4, 6, 8, 10):
            if d > n - 1:
                print(f"weights n={n:3d} d={d:2d}: skipped, no simple {d}-regular graph on {n} nodes")
                continue
            topo = build_d_regular_cycle(n, d)
            report = validate_weights(build_cycle_weights(topo, d), topo)
            status = "pass" if report.ok else "FAIL " + ",".join(report.failures())
            print(f"weights n={n:3d} d={d:2d}: {status} (row dev {report.row_sum_deviation:.1e}, "
                  f"slem {report.second_eigenvalue_modulus:.6f})")
            ok &= report.ok
    ens = generate_logistic(5, LogisticDataConfig(p=3, q_i=10, seed=seed))
    rng = np.random.default_rng(seed)
    worst = max(check_derivatives(obj, 0.1 * rng.standard_normal(3)) for obj in ens)
    print(f"logistic derivatives: worst relative error {worst:.2e}")
    ok &= worst < 1e-5
    topo = build_d_regular_cycle(5, 2)
    prob = PenalizedProblem(topo, build_cycle_weights(topo, 2), ens, 1e-2)
    y = rng.standard_normal((5, 3))
    g = gradient(prob, y)
    d = nn_direction(prob, y, 1).direction
    descent = float(np.sum(g * d))
    print(f"NN-1 direction descent check: <g, d> = {descent:.3e}")
    ok &= descent < 0
    return ok


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "validate":
        return 0 if _validate(args.seed) else EXIT_VALIDATION
    scenario = {"run": None, "hist": "quadratic_histogram", "ann": "ann_sweep"}[args.command]
    try:
        cfg = _resolve_config(args, scenario)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = harness.run_scenario(cfg, args.out)
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    _report(cfg, result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
