"""Command-line entry points.

``qmla run``       launch a batch of search instances from a JSON config
``qmla bath``      estimate the bath spin count and T2 from Hahn-echo data
``qmla estimate``  print the expected runtime of one instance
``qmla report``    re-aggregate a results directory

Exit codes: 0 success, 2 config error, 3 partial batch failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .bath import (
    DEFAULT_BATH_PRIOR,
    FitError,
    estimate_T2,
    fit_logistic,
    mha_run,
)
from .harness import (
    ConfigError,
    aggregate_report,
    emit_plot_data,
    estimate_runtime,
    load_config,
    run_batch,
    _write_json_atomic,
)
from .smc import PriorSpec
from .system import RecordedDataset


def _resolve_workers(args, config) -> int:
    if args.parallelism is not None:
        return args.parallelism
    env = os.environ.get("QMLA_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as err:
            raise ConfigError(f"QMLA_WORKERS must be an integer, got {env!r}") from err
    return config.parallelism


def _cmd_run(args) -> int:
    config = load_config(args.config)
    if config.mode not in ("simulate", "replay"):
        raise ConfigError("'qmla run' needs a simulate or replay config")
    overrides = {}
    if args.instances is not None:
        overrides["instances"] = args.instances
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        config = config.replace(**overrides)
    workers = _resolve_workers(args, config)
    report = run_batch(config, args.out, workers=workers)
    print(f"completed {config.instances - len(report.failures)}/{config.instances} instances")
    for name, count in report.win_counts.items():
        print(f"  {name}: {count} wins")
    if report.success_rate is not None:
        print(f"success rate: {report.success_rate:.2f}")
    if report.credible_rate is not None:
        print(f"credible rate: {report.credible_rate:.2f}")
    if report.median_r_squared is not None:
        print(f"median R^2: {report.median_r_squared:.3f}")
    print(f"report written to {Path(args.out) / 'report.json'}")
    return 3 if report.failures else 0


def _bath_prior(config) -> PriorSpec:
    marginals = config.bath.get("prior")
    if marginals is None:
        return DEFAULT_BATH_PRIOR
    return PriorSpec(tuple(tuple(m) for m in marginals))


def _cmd_bath(args) -> int:
    config = load_config(args.config)
    if config.mode != "bath":
        raise ConfigError("'qmla bath' needs a config with mode 'bath'")
    dataset_path = args.data or config.dataset_path
    dataset = RecordedDataset.from_csv(dataset_path)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    bath = config.bath
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
    trace = mha_run(
        dataset,
        int(bath["mha_steps"]),
        int(bath["cle_epochs"]),
        int(bath["cle_particles"]),
        rng,
        prior=_bath_prior(config),
        n_start=int(bath["n_start"]),
        n_max=bath["n_max"],
        shots=config.noise.shot_count,
        squared_cross=bool(bath["squared_cross"]),
    )
    _write_json_atomic(out_dir / "mha_trace.json", trace.to_dict())
    with open(out_dir / "mha_trace.csv", "w", encoding="utf-8") as fh:
        fh.write("step,n_before,proposal,ll_proposal,ll_current,accepted,n_after\n")
        for s in trace.steps:
            fh.write(
                f"{s['step']},{s['n_before']},{s['proposal']},{s['ll_proposal']!r},"
                f"{s['ll_current']!r},{int(s['accepted'])},{s['n_after']}\n"
            )
    samples = trace.log_likelihood_samples()
    with open(out_dir / "plateau.csv", "w", encoding="utf-8") as fh:
        fh.write("n_s,mean_abs_loglik\n")
        for n in sorted(samples):
            fh.write(f"{n},{float(np.mean(samples[n]))!r}\n")
    fits: dict = {"final_n": trace.current_n}
    try:
        logistic = fit_logistic(trace)
        fits["logistic"] = logistic.to_dict()
        print(f"plateau onset: {logistic.plateau_onset:.1f} spins")
    except (ValueError, FitError) as err:
        fits["logistic"] = {"error": str(err)}
        print(f"logistic fit unavailable: {err}")
    omega0 = bath.get("omega0")
    if omega0 is None and trace.final_hypers is not None:
        omega0 = trace.final_hypers["omega0"]
    if omega0:
        try:
            t2 = estimate_T2(
                dataset, float(omega0), exponent=float(bath["envelope_exponent"])
            )
            fits["t2"] = t2.to_dict()
            if math.isfinite(t2.t2):
                print(f"T2 = {t2.t2:.1f} +/- {t2.stderr:.1f} us")
            else:
                print("no decay detected in revival envelope")
        except (ValueError, FitError) as err:
            fits["t2"] = {"error": str(err)}
            print(f"T2 fit unavailable: {err}")
    _write_json_atomic(out_dir / "fits.json", fits)
    print(f"bath analysis written to {out_dir}")
    return 0


def _cmd_estimate(args) -> int:
    config = load_config(args.config)
    seconds = estimate_runtime(config)
    print(f"expected runtime per instance: {seconds:.0f} s ({seconds / 3600.0:.2f} h)")
    rounds = math.ceil(config.instances / max(1, config.parallelism))
    print(
        f"batch of {config.instances} at parallelism {config.parallelism}: "
        f"~{rounds * seconds / 3600.0:.2f} h"
    )
    return 0


def _cmd_report(args) -> int:
    out_dir = Path(args.dir)
    report_path = out_dir / "report.json"
    if not report_path.exists():
        raise ConfigError(f"{report_path} not found; run a batch first")
    stored = json.loads(report_path.read_text(encoding="utf-8"))
    from .harness import parse_config

    config = parse_config(stored["config"])
    results = []
    for path in sorted(out_dir.glob("instance_*.json")):
        results.append(json.loads(path.read_text(encoding="utf-8")))
    report = aggregate_report(config, results, stored.get("failures", []))
    emit_plot_data(results, out_dir, credible_models=config.credible_models)
    _write_json_atomic(report_path, report.to_dict())
    print(f"re-aggregated {len(results)} instances into {report_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qmla",
        description="Bayesian model learning for quantum spin systems",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a batch of search instances")
    run.add_argument("config", help="path to a JSON config")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--instances", type=int, default=None)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--parallelism", type=int, default=None)
    run.set_defaults(func=_cmd_run)

    bath = sub.add_parser("bath", help="spin-bath estimation from Hahn-echo data")
    bath.add_argument("config", help="path to a JSON config with mode 'bath'")
    bath.add_argument("--data", default=None, help="Hahn-echo CSV (overrides config)")
    bath.add_argument("--out", required=True, help="output directory")
    bath.set_defaults(func=_cmd_bath)

    estimate = sub.add_parser("estimate", help="print the expected runtime")
    estimate.add_argument("config", help="path to a JSON config")
    estimate.set_defaults(func=_cmd_estimate)

    report = sub.add_parser("report", help="re-aggregate a results directory")
    report.add_argument("dir", help="directory with instance_*.json files")
    report.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
