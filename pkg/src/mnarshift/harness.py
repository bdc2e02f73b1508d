"""Factorial simulation runner.

One cell = (n, target_prop, miss_pct, dag, nonlinearity, rep).  A cell
draws one missingness-shift pair, splits it into domains, and then runs
every configured method through

    impute(source), impute(target) -> domain classifier -> weights
    -> weighted outcome fit -> target predictions -> metrics

producing one :class:`SimCellResult` per method.

Seeding uses common random numbers: structural parameters depend on
(dag, nonlinearity, rep) only and the drawn data additionally on
(n, target_prop), so cells that differ only in ``miss_pct`` see the same
covariates and outcomes and differ only through the calibrated target
missingness intercepts.
"""
from __future__ import annotations

import dataclasses
import hashlib
import itertools
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .adapt import fit_domain_classifier, fit_weighted_outcome, importance_weights, predict_target
from .errors import CalibrationError, ConfigError, ConvergenceError, MnarShiftError, SingularDesignError, WeightError
from .impute import ImputerConfig, MCMCConfig, impute, impute_oracle
from .metrics import binned_error_curve, imputation_rmse, rmse
from .rng import derive_seed
from .simgen import NONLINEARITY_LEVELS, DagSpec, DomainSplit, make_shift, split_domains

STATUSES = ("ok", "generation_error", "imputer_error", "classifier_error")
SHIFT_CONVENTION = (
    "shared covariate and outcome mechanism; target missingness weights redrawn; "
    "intercepts calibrated to source_miss (source) and miss_pct (target)"
)


@dataclass(frozen=True)
class MethodSpec:
    name: str
    config: ImputerConfig | None  # None = oracle truth-fill

    @property
    def leak(self) -> bool:
        return self.config is not None and self.config.leak and self.config.uses_outcome


def _bayes(variant, leak=False):
    return ImputerConfig("bayes", bayes_variant=variant, leak=leak)


METHOD_REGISTRY: dict[str, ImputerConfig | None] = {
    "mean": ImputerConfig("mean"),
    "mice_norm": ImputerConfig("mice_norm"),
    "mice_pmm": ImputerConfig("mice_pmm"),
    "mice_ri": ImputerConfig("mice_ri"),
    "bayes_z": _bayes("z_model"),
    "bayes_z_leak": _bayes("z_model", leak=True),
    "bayes_joint": _bayes("joint"),
    "bayes_joint_leak": _bayes("joint", leak=True),
    "bayes_no_outcome": _bayes("no_outcome"),
    "bayes_no_missingness": _bayes("no_missingness"),
    "oracle": None,
}


def method_spec(name: str, mcmc: MCMCConfig | None = None) -> MethodSpec:
    if name not in METHOD_REGISTRY:
        raise ConfigError(f"unknown method {name!r}; choose from {sorted(METHOD_REGISTRY)}")
    cfg = METHOD_REGISTRY[name]
    if cfg is not None and mcmc is not None:
        cfg = dataclasses.replace(cfg, mcmc=mcmc)
    return MethodSpec(name, cfg)


@dataclass(frozen=True)
class SimCell:
    n: int
    target_prop: float
    miss_pct: float
    dag: int
    nonlinearity: int
    rep: int

    @property
    def cell_id(self) -> str:
        return f"n{self.n}-tp{self.target_prop:g}-m{self.miss_pct:g}-dag{self.dag}-nl{self.nonlinearity}-r{self.rep}"

    def params_seed(self, master_seed: int) -> int:
        return derive_seed(master_seed, "params", self.dag, self.nonlinearity, self.rep)

    def data_seed(self, master_seed: int) -> int:
        return derive_seed(master_seed, "data", self.dag, self.nonlinearity, self.rep, self.n, repr(self.target_prop))


@dataclass(frozen=True)
class FactorialConfig:
    sample_sizes: tuple[int, ...] = (750, 1000, 1500, 3000, 5000)
    target_props: tuple[float, ...] = (0.3, 0.5, 0.75)
    miss_pcts: tuple[float, ...] = (0.05, 0.1, 0.15, 0.2, 0.25, 0.3)
    dags: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7, 8)
    nonlinearity: tuple[int, ...] = NONLINEARITY_LEVELS
    methods: tuple[str, ...] = ("mean", "mice_norm", "bayes_joint", "bayes_joint_leak")
    reps: int = 1
    master_seed: int = 0
    source_miss: float = 0.05
    covariate_shift: float = 0.0
    mcmc: MCMCConfig = field(default_factory=MCMCConfig)
    outcome_kind: str = "weighted_linear"

    def __post_init__(self):
        for name in ("sample_sizes", "target_props", "miss_pcts", "dags", "nonlinearity", "methods"):
            if len(getattr(self, name)) == 0:
                raise ConfigError(f"{name} must be non-empty")
        if self.reps < 1:
            raise ConfigError("reps must be >= 1")
        for m in self.methods:
            method_spec(m)
        for d in self.dags:
            DagSpec(d)
        if any(k not in NONLINEARITY_LEVELS for k in self.nonlinearity):
            raise ConfigError(f"nonlinearity levels must come from {NONLINEARITY_LEVELS}")
        if not all(0 < p < 1 for p in (*self.target_props, *self.miss_pcts, self.source_miss)):
            raise ConfigError("proportions and missingness rates must lie in (0, 1)")

    def cells(self) -> list[SimCell]:
        return [
            SimCell(n, tp, m, d, k, r)
            for n, tp, m, d, k, r in itertools.product(
                self.sample_sizes, self.target_props, self.miss_pcts, self.dags, self.nonlinearity, range(self.reps)
            )
        ]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "FactorialConfig":
        d = dict(d)
        if isinstance(d.get("mcmc"), dict):
            d["mcmc"] = MCMCConfig(**d["mcmc"])
        for k in ("sample_sizes", "target_props", "miss_pcts", "dags", "nonlinearity", "methods"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class SimCellResult:
    n: int
    target_prop: float
    miss_pct: float
    dag: int
    nonlinearity: int
    method: str
    rep: int
    seed: int
    status: str
    target_rmse: float | None = None
    imp_rmse_source: float | None = None
    imp_rmse_target: float | None = None
    n_masked_source: int | None = None
    n_masked_target: int | None = None
    outcome_reads: str = ""
    error: str = ""
    runtime_ms: float = 0.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def identity(self) -> tuple:
        """Everything except wall-clock time."""
        d = self.to_dict()
        d.pop("runtime_ms")
        return tuple(sorted(d.items()))


def _cell_fields(cell: SimCell, seed: int) -> dict:
    return dict(n=cell.n, target_prop=cell.target_prop, miss_pct=cell.miss_pct, dag=cell.dag,
                nonlinearity=cell.nonlinearity, rep=cell.rep, seed=seed)


def _cache_key(spec: MethodSpec) -> str:
    """Source imputations ignore the leak flag (the source always carries ``Y``)."""
    if spec.config is None:
        return "oracle"
    cfg = dataclasses.replace(spec.config, leak=False)
    return json.dumps(cfg.to_dict(), sort_keys=True)


def _impute_pair(split: DomainSplit, spec: MethodSpec, seed: int, source_cache: dict):
    if spec.config is None:
        src = impute_oracle(split.source, split.source_truth.X)
        tgt = impute_oracle(split.target, split.target_truth.X)
        return src, tgt
    key = _cache_key(spec)
    if key not in source_cache:
        source_cache[key] = impute(split.source, spec.config, derive_seed(seed, "impute", "source", key))
    target = split.target
    if spec.leak:
        target = target.with_outcome(split.target_truth.reveal_outcome(f"imputer:{spec.name}"))
    return source_cache[key], impute(target, spec.config, derive_seed(seed, "impute", "target", key))


def run_method(split: DomainSplit, spec: MethodSpec, seed: int, outcome_kind: str = "weighted_linear", source_cache=None) -> dict:
    """Run one method on a prepared split; returns the metric fields (status included)."""
    source_cache = {} if source_cache is None else source_cache
    split.target_truth.access_log.clear()
    try:
        src, tgt = _impute_pair(split, spec, seed, source_cache)
    except (MnarShiftError, np.linalg.LinAlgError) as exc:
        return {"status": "imputer_error", "error": f"{type(exc).__name__}: {exc}",
                "outcome_reads": ";".join(split.target_truth.access_log)}
    out = {
        "imp_rmse_source": imputation_rmse(src.Xhat, split.source_truth.X, split.source.R, split.source.maskable),
        "imp_rmse_target": imputation_rmse(tgt.Xhat, split.target_truth.X, split.target.R, split.target.maskable),
        "n_masked_source": int((split.source.R == 0).sum()),
        "n_masked_target": int((split.target.R == 0).sum()),
    }
    try:
        clf = fit_domain_classifier(src, tgt)
        w = importance_weights(clf, src.features())
        model = fit_weighted_outcome(src, split.source.Y, w, kind=outcome_kind)
        pred = predict_target(model, tgt)
    except (ConvergenceError, WeightError, SingularDesignError, ConfigError, np.linalg.LinAlgError) as exc:
        out.update(status="classifier_error", error=f"{type(exc).__name__}: {exc}",
                   outcome_reads=";".join(split.target_truth.access_log))
        return out
    y_t = split.target_truth.reveal_outcome("metrics")
    out.update(status="ok", target_rmse=rmse(pred, y_t), outcome_reads=";".join(split.target_truth.access_log))
    return out


def prepare_split(cell: SimCell, config: FactorialConfig) -> DomainSplit:
    dag = DagSpec(cell.dag)
    p_seed = cell.params_seed(config.master_seed)
    shift = make_shift(dag, cell.nonlinearity, config.source_miss, cell.miss_pct, p_seed,
                       covariate_shift=config.covariate_shift, calibration_seed=p_seed)
    return split_domains(cell.n, cell.target_prop, shift, cell.data_seed(config.master_seed))


def run_cell(cell: SimCell, config: FactorialConfig) -> list[SimCellResult]:
    """All configured methods on one cell; failures are recorded, never raised."""
    seed = cell.data_seed(config.master_seed)
    base = _cell_fields(cell, seed)
    specs = [method_spec(m, config.mcmc) for m in config.methods]
    t0 = time.perf_counter()
    try:
        split = prepare_split(cell, config)
    except (CalibrationError, FloatingPointError, ConfigError) as exc:
        ms = 1000 * (time.perf_counter() - t0)
        return [SimCellResult(method=s.name, status="generation_error", error=f"{type(exc).__name__}: {exc}",
                              runtime_ms=ms, **base) for s in specs]
    setup_ms = 1000 * (time.perf_counter() - t0)
    cache: dict = {}
    rows = []
    for spec in specs:
        t1 = time.perf_counter()
        fields = run_method(split, spec, seed, config.outcome_kind, cache)
        rows.append(SimCellResult(method=spec.name, runtime_ms=setup_ms + 1000 * (time.perf_counter() - t1),
                                  **base, **fields))
    return rows


def _run_cell_payload(args):
    cell, config = args
    return cell, run_cell(cell, config)


def _jsonl_line(row: SimCellResult) -> str:
    return json.dumps(row.to_dict(), sort_keys=True) + "\n"


def run_factorial(config: FactorialConfig, out_dir, jobs: int = 1, progress=None) -> Path:
    """Execute every cell, appending rows to ``results.jsonl`` in completion order.

    Also writes a sorted CSV mirror and ``manifest.json``.  If writing
    fails, ``results.partial`` is left next to the results file.
    """
    if jobs < 1:
        raise ConfigError("jobs must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = out / "results.jsonl"
    partial = out / "results.partial"
    cells = config.cells()
    rows: list[SimCellResult] = []
    started = time.time()
    try:
        partial.write_text("incomplete\n")
        with results.open("w", encoding="utf-8", newline="\n") as sink:
            if jobs == 1:
                completed = (_run_cell_payload((c, config)) for c in cells)
                for i, (cell, cell_rows) in enumerate(completed):
                    _sink(sink, cell_rows, rows, progress, i, len(cells))
            else:
                with ProcessPoolExecutor(max_workers=jobs) as pool:
                    futures = [pool.submit(_run_cell_payload, (c, config)) for c in cells]
                    for i, fut in enumerate(as_completed(futures)):
                        cell, cell_rows = fut.result()
                        _sink(sink, cell_rows, rows, progress, i, len(cells))
        write_results_csv(rows, out / "results.csv")
        counts = {s: sum(r.status == s for r in rows) for s in STATUSES}
        manifest = {
            "config": config.to_dict(),
            "config_hash": config.config_hash(),
            "version": __version__,
            "shift_convention": SHIFT_CONVENTION,
            "n_cells": len(cells),
            "n_rows": len(rows),
            "status_counts": counts,
            "jobs": jobs,
            "wall_time_s": round(time.time() - started, 3),
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError:
        try:
            partial.write_text(f"incomplete: {len(rows)} rows written\n")
        except OSError:
            pass
        raise
    partial.unlink()
    return results


def _sink(sink, cell_rows, rows, progress, i, total):
    for r in cell_rows:
        sink.write(_jsonl_line(r))
    sink.flush()
    rows.extend(cell_rows)
    if progress is not None:
        progress(i + 1, total)


def _sort_key(r: SimCellResult):
    return (r.n, r.target_prop, r.miss_pct, r.dag, r.nonlinearity, r.rep, r.method)


def write_results_csv(rows, path):
    frame = pd.DataFrame([r.to_dict() for r in sorted(rows, key=_sort_key)],
                         columns=[f.name for f in dataclasses.fields(SimCellResult)])
    frame.to_csv(path, index=False, na_rep="", lineterminator="\n")


def read_results(path) -> list[SimCellResult]:
    with open(path, encoding="utf-8") as fh:
        return [SimCellResult(**json.loads(line)) for line in fh if line.strip()]


def emit_report(results_path, out_dir, bins: int = 20, floor: float = 1.0) -> dict[str, Path]:
    """Marginal and stratified summaries of the ok rows plus binned error curves."""
    rows = read_results(results_path) if not isinstance(results_path, list) else results_path
    frame = pd.DataFrame([r.to_dict() for r in rows])
    ok = frame[frame["status"] == "ok"] if len(frame) else frame
    if ok.empty:
        raise ConfigError("no ok rows to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}

    def summarize(by):
        g = ok.groupby(by, sort=True)
        s = g["target_rmse"].agg(
            n_rows="count", mean="mean", sd="std",
            q10=lambda v: v.quantile(0.1), median="median", q90=lambda v: v.quantile(0.9),
        )
        s["imp_rmse_target_mean"] = g["imp_rmse_target"].mean()
        s["imp_rmse_source_mean"] = g["imp_rmse_source"].mean()
        return s.reset_index()

    tables = {
        "summary_by_method": ["method"],
        "by_miss_pct": ["method", "miss_pct"],
        "by_dag": ["method", "dag"],
        "by_nonlinearity": ["method", "nonlinearity"],
        "by_sample_size": ["method", "n"],
    }
    for name, by in tables.items():
        path = out / f"{name}.csv"
        summarize(by).to_csv(path, index=False, lineterminator="\n")
        paths[name] = path

    status = frame.groupby(["method", "status"]).size().rename("rows").reset_index()
    status.to_csv(out / "status_counts.csv", index=False, lineterminator="\n")
    paths["status_counts"] = out / "status_counts.csv"

    records = ok.to_dict("records")
    for name, x_min in (("curve_impute_error", None), ("curve_impute_error_above_floor", floor)):
        usable = [r for r in records if r.get("imp_rmse_target") is not None and (x_min is None or r["imp_rmse_target"] > x_min)]
        k = min(bins, len(usable) // 2)
        if k < 2:
            continue
        curve = binned_error_curve(usable, "imp_rmse_target", "target_rmse", bins=k)
        path = out / f"{name}.csv"
        pd.DataFrame(curve.rows()).to_csv(path, index=False, lineterminator="\n")
        paths[name] = path
    (out / "NOTES.txt").write_text(
        "imputation RMSE is pooled over masked cells (not averaged per column)\n"
        f"binned curves: equal-count bins of imp_rmse_target; floor={floor}\n"
    )
    return paths


def available_cpus() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)
