"""Command-line interface: ``mnarshift <command> ...``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np
import pandas as pd

from . import io
from .adapt import adapt
from .errors import MnarShiftError
from .external import ExternalSchema, load_external_csv
from .harness import FactorialConfig, available_cpus, emit_report, read_results, run_factorial
from .impute import ImputerConfig, MCMCConfig, impute
from .metrics import auroc, brier, rmse
from .simgen import DagSpec, make_shift, split_domains
from .theory import run_verification

MINI_FACTORIAL = dict(
    sample_sizes=(750, 1500),
    target_props=(0.5,),
    miss_pcts=(0.1, 0.3),
    dags=(1, 2, 3, 4, 5, 6, 7, 8),
    nonlinearity=(1, 3),
    methods=("mean", "mice_norm", "mice_ri"),
    reps=5,
)


def _imputer_config(args) -> ImputerConfig:
    mcmc = MCMCConfig(iterations=args.iterations, burn_in=args.burn_in, prior_sd=args.prior_sd)
    return ImputerConfig(args.method, bayes_variant=args.variant, leak=args.leak, cycles=args.cycles,
                         donors=args.donors, mcmc=mcmc)


def _add_imputer_args(p):
    p.add_argument("--method", default="mice_norm", choices=["mean", "mice_norm", "mice_pmm", "mice_ri", "bayes"])
    p.add_argument("--variant", default="joint", choices=["z_model", "joint", "no_outcome", "no_missingness"])
    p.add_argument("--leak", action="store_true", help="let a Bayesian imputer read Y on target data")
    p.add_argument("--cycles", type=int, default=10)
    p.add_argument("--donors", type=int, default=5)
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--burn-in", type=int, default=500)
    p.add_argument("--prior-sd", type=float, default=2.5)


def cmd_generate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dag = DagSpec(args.dag)
    shift = make_shift(dag, args.nonlinearity, args.source_miss, args.target_miss, args.seed,
                       covariate_shift=args.covariate_shift)
    split = split_domains(args.n, args.target_prop, shift, args.seed)
    io.write_masked_csv(out / "source.csv", split.source)
    io.write_masked_csv(out / "target.csv", split.target)
    truth = split.target_truth
    frame = pd.DataFrame(truth.X, columns=list(split.target.columns))
    frame["Y"] = truth.reveal_outcome("export")
    frame.to_csv(out / "target_truth.csv", index=False, float_format="%.17g", lineterminator="\n")
    io.write_params(out / "params_source.json", dag, shift.source, seed=args.seed)
    io.write_params(out / "params_target.json", dag, shift.target, seed=args.seed)
    print(f"wrote {split.source.n} source and {split.target.n} target rows to {out}")
    return 0


def cmd_impute(args) -> int:
    ds = io.read_masked_csv(args.input)
    cfg = _imputer_config(args)
    t0 = time.perf_counter()
    imp = impute(ds, cfg, args.seed)
    wall = time.perf_counter() - t0
    io.write_imputed_csv(args.out, imp, ds.Y)
    manifest = io.imputer_manifest(cfg, args.seed, round(wall, 4), input=str(args.input),
                                   diagnostics={k: np.asarray(v).tolist() for k, v in imp.diagnostics.items()})
    io.write_json(str(args.out) + ".manifest.json", manifest)
    print(f"imputed {int(ds.missing.sum())} cells with {cfg.method} in {wall:.2f}s")
    return 0


def cmd_adapt(args) -> int:
    src, y_src = io.read_imputed_csv(args.source)
    tgt, _ = io.read_imputed_csv(args.target)
    if y_src is None:
        raise MnarShiftError("source file has no Y column")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = adapt(src, tgt, y_src, kind=args.kind, clip_quantile=args.clip_quantile)
    pd.DataFrame({"w": res.weights.w}).to_csv(out / "weights.csv", index=False, float_format="%.17g", lineterminator="\n")
    pd.DataFrame({"prediction": res.predictions}).to_csv(out / "predictions.csv", index=False, float_format="%.17g", lineterminator="\n")
    io.write_json(out / "model.json", {
        "outcome": res.outcome.to_dict(),
        "classifier": {
            "columns": list(res.classifier.columns),
            "coefficients": res.classifier.coefficients.tolist(),
            "iterations": res.classifier.n_iter,
        },
        "clip_quantile": args.clip_quantile,
    })
    print(f"weights: median {np.median(res.weights.w):.3f}, max {res.weights.w.max():.3f}; wrote {out}")
    return 0


def _load_config(args) -> FactorialConfig:
    if args.config:
        d = io.read_json(args.config)
    elif args.preset == "mini":
        d = dict(MINI_FACTORIAL)
    else:
        d = {}
    if args.seed is not None:
        d["master_seed"] = args.seed
    return FactorialConfig.from_dict(d)


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    jobs = args.jobs or available_cpus()

    def progress(i, total):
        if args.verbose:
            print(f"\r{i}/{total} cells", end="", file=sys.stderr, flush=True)

    path = run_factorial(cfg, args.out, jobs=jobs, progress=progress)
    if args.verbose:
        print(file=sys.stderr)
    rows = read_results(path)
    errors = [r for r in rows if r.status != "ok"]
    print(f"{len(rows)} rows, {len(errors)} with error status -> {path}")
    if args.report:
        emit_report(rows, Path(args.out) / "report")
    return 0 if not errors or args.allow_errors else 1


def cmd_report(args) -> int:
    paths = emit_report(args.results, args.out, bins=args.bins)
    for name, p in paths.items():
        print(f"{name}: {p}")
    return 0


def cmd_verify(args) -> int:
    checks = run_verification(seed=args.seed or 0)
    width = max(len(c.name) for c in checks)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name:<{width}}  measured={c.measured:.3g}  need {c.threshold}")
    return 0 if all(c.passed for c in checks) else 1


def cmd_apply(args) -> int:
    schema = ExternalSchema.from_dict(io.read_json(args.schema))
    data = load_external_csv(args.csv, schema)
    cfg = _imputer_config(args)
    src = impute(data.source, cfg, args.seed or 0)
    tgt = impute(data.target, dataclasses.replace(cfg, leak=False), (args.seed or 0) + 1)
    binary = data.report["binary_outcome"]
    res = adapt(src, tgt, data.source.Y, kind="weighted_logistic" if binary else "weighted_linear",
                clip_quantile=args.clip_quantile)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pd.DataFrame({"prediction": res.predictions}).to_csv(out / "predictions.csv", index=False, float_format="%.17g", lineterminator="\n")
    labels = data.target_labels
    metrics = {"rmse": rmse(res.predictions, labels)}
    if binary:
        metrics.update(brier=brier(res.predictions, labels), auroc=auroc(res.predictions, labels))
    io.write_json(out / "metrics.json", {"metrics": metrics, "data": data.report, "imputer": cfg.to_dict()})
    print(json.dumps(metrics, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mnarshift", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="simulate a source/target pair and write CSVs")
    p.add_argument("--dag", type=int, default=1)
    p.add_argument("--nonlinearity", type=int, default=1)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--target-prop", type=float, default=0.5)
    p.add_argument("--source-miss", type=float, default=0.05)
    p.add_argument("--target-miss", type=float, default=0.3)
    p.add_argument("--covariate-shift", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("impute", help="complete a masked CSV")
    p.add_argument("input")
    _add_imputer_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_impute)

    p = sub.add_parser("adapt", help="importance-weighted outcome model from two completed CSVs")
    p.add_argument("source")
    p.add_argument("target")
    p.add_argument("--kind", default="weighted_linear", choices=["weighted_linear", "weighted_logistic"])
    p.add_argument("--clip-quantile", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("simulate", help="run a factorial simulation")
    p.add_argument("--config", help="JSON file with FactorialConfig fields")
    p.add_argument("--preset", choices=["full", "mini"], default="mini")
    p.add_argument("--seed", type=int, default=None, help="override master_seed")
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--report", action="store_true", help="also write summary CSVs")
    p.add_argument("--allow-errors", action="store_true")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="summarize a results file")
    p.add_argument("results")
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("verify", help="exact enumeration and decomposition checks")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("apply", help="impute, reweight and evaluate on an external two-domain CSV")
    p.add_argument("csv")
    p.add_argument("--schema", required=True, help="JSON file with ExternalSchema fields")
    _add_imputer_args(p)
    p.add_argument("--clip-quantile", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_apply)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MnarShiftError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
