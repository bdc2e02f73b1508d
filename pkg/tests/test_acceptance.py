"""Exit criteria.  Each test reports one PASS/FAIL line in the terminal summary."""
import math
import time

import numpy as np
import pandas as pd
import pytest
from scipy import stats

from mnarshift.adapt import adapt, fit_weighted_outcome
from mnarshift.cli import MINI_FACTORIAL
from mnarshift.glm import add_intercept, conjugate_posterior, irls_logistic, logistic_loglik
from mnarshift.harness import FactorialConfig, available_cpus, read_results, run_cell, run_factorial
from mnarshift.impute import ImputerConfig, MCMCConfig, gibbs_regression, impute
from mnarshift.impute import bayes
from mnarshift.impute.base import ImputedDataset
from mnarshift.metrics import auroc, binned_error_curve, brier, rmse
from mnarshift.simgen import MaskedDataset, toy_covariate_shift
from mnarshift.theory import complete_case_trials, conditional_shift_distance, random_joint_pair, self_censoring_fixture

pytestmark = pytest.mark.acceptance


def as_imputed(x, domain):
    x = np.asarray(x, float).reshape(len(x), -1)
    columns = tuple(f"X{i + 1}" for i in range(x.shape[1]))
    return ImputedDataset(Xhat=x, R=np.ones((len(x), 0), np.int8), maskable=(), columns=columns,
                          source_config=None, domain_tag=domain)


def linear_cells(methods, **kw):
    base = dict(sample_sizes=(750,), target_props=(0.5,), miss_pcts=(0.1, 0.2, 0.3), dags=tuple(range(1, 9)),
                nonlinearity=(1,), methods=methods, reps=5, master_seed=2024)
    base.update(kw)
    return FactorialConfig(**base)


def mean_by_method(rows):
    frame = pd.DataFrame([r.to_dict() for r in rows])
    assert (frame["status"] == "ok").all(), frame.loc[frame["status"] != "ok", ["method", "error"]]
    return frame.groupby("method")["target_rmse"].mean()


@pytest.mark.criterion(1, "covariate-shift toy: weighting moves the slope towards the target fit")
def test_criterion_1_toy_weighting(record_property):
    t0 = time.perf_counter()
    wins = 0
    for seed in range(100):
        xs, ys = toy_covariate_shift(2000, 0.0, seed)
        xt, yt = toy_covariate_shift(2000, 1.0, seed)
        weighted = adapt(as_imputed(xs, "source"), as_imputed(xt, "target"), ys).outcome.coefficients[1]
        unweighted = fit_weighted_outcome(as_imputed(xs, "source"), ys).coefficients[1]
        target = fit_weighted_outcome(as_imputed(xt, "source"), yt).coefficients[1]
        wins += abs(weighted - target) < abs(unweighted - target)
    elapsed = time.perf_counter() - t0
    record_property("measured", f"{wins}/100 wins in {elapsed:.1f}s")
    assert wins >= 95
    assert elapsed < 30


@pytest.mark.criterion(2, "oracle imputation reaches the noise floor, mean imputation does not")
def test_criterion_2_oracle_floor(record_property):
    t0 = time.perf_counter()
    cfg = FactorialConfig(sample_sizes=(3000,), target_props=(0.5,), miss_pcts=(0.3,), dags=(1,), nonlinearity=(1,),
                          methods=("mean", "oracle"), reps=50, master_seed=11)
    rows = [r for cell in cfg.cells() for r in run_cell(cell, cfg)]
    means = mean_by_method(rows)
    elapsed = time.perf_counter() - t0
    record_property("measured", f"oracle {means['oracle']:.4f}, mean {means['mean']:.4f} in {elapsed:.1f}s")
    assert abs(means["oracle"] - 1.0) < 0.05
    assert means["mean"] > 1.0 and means["mean"] > means["oracle"]
    assert elapsed < 120


@pytest.mark.criterion(3, "enumeration: MAR pairs agree, self-censoring shifts")
def test_criterion_3_enumeration(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = max(conditional_shift_distance(*random_joint_pair(rng, mar=True)) for _ in range(100))
    sc = conditional_shift_distance(*self_censoring_fixture())
    elapsed = time.perf_counter() - t0
    record_property("measured", f"MAR max {worst:.2e}, self-censoring {sc:.4f} in {elapsed:.2f}s")
    assert worst < 1e-10
    assert sc > 0.01
    assert elapsed < 5


@pytest.mark.criterion(4, "complete-case regression: unbiased without R->Y, bias detected with R->Y")
def test_criterion_4_complete_case(record_property):
    t0 = time.perf_counter()
    trials = complete_case_trials(n_seeds=50)
    elapsed = time.perf_counter() - t0
    record_property("measured", f"pooled |z| {trials.pooled_slope_z:.2f}, detected {trials.detected_fraction:.2f} "
                                f"in {elapsed:.1f}s")
    assert trials.pooled_slope_z < 3
    assert trials.detected_fraction >= 0.8
    assert elapsed < 60


@pytest.mark.criterion(5, "mean imputation: target RMSE rises with the missingness rate")
def test_criterion_5_missingness_sweep(record_property):
    t0 = time.perf_counter()
    levels = (0.05, 0.1, 0.15, 0.2, 0.25, 0.3)
    cfg = FactorialConfig(sample_sizes=(1000,), target_props=(0.5,), miss_pcts=levels, dags=(1,), nonlinearity=(1,),
                          methods=("mean",), reps=20, master_seed=5)
    rows = [r for cell in cfg.cells() for r in run_cell(cell, cfg)]
    frame = pd.DataFrame([r.to_dict() for r in rows])
    assert (frame["status"] == "ok").all()
    level_means = frame.groupby("miss_pct")["target_rmse"].mean().reindex(levels).to_numpy()
    rho = stats.spearmanr(levels, level_means).statistic
    elapsed = time.perf_counter() - t0
    record_property("measured", "level means " + " ".join(f"{v:.3f}" for v in level_means)
                    + f"; rho {rho:.2f} in {elapsed:.1f}s")
    assert rho > 0
    assert np.all(np.diff(level_means) >= 0)
    assert elapsed < 180


@pytest.mark.criterion(6, "method ordering on linear cells: leak Bayes <= MICE norm <= mean, no-leak above leak")
def test_criterion_6_method_ordering(record_property):
    t0 = time.perf_counter()
    cfg = linear_cells(("mean", "mice_norm", "bayes_joint", "bayes_joint_leak"))
    cells = cfg.cells()
    rows = [r for cell in cells for r in run_cell(cell, cfg)]
    m = mean_by_method(rows)
    elapsed = time.perf_counter() - t0
    record_property("measured", f"{len(cells)} cells: leak {m['bayes_joint_leak']:.3f}, mice_norm {m['mice_norm']:.3f}, "
                                f"mean {m['mean']:.3f}, no-leak {m['bayes_joint']:.3f} in {elapsed:.0f}s")
    assert len(cells) >= 100
    assert m["bayes_joint_leak"] <= m["mice_norm"] <= m["mean"]
    assert m["bayes_joint"] > m["bayes_joint_leak"]
    assert elapsed < 900


@pytest.mark.criterion(7, "mini-factorial: adaptation error increases with imputation error above the floor")
def test_criterion_7_mini_factorial(record_property, tmp_path):
    t0 = time.perf_counter()
    cfg = FactorialConfig(**MINI_FACTORIAL, master_seed=7)
    rows = read_results(run_factorial(cfg, tmp_path, jobs=available_cpus()))
    elapsed = time.perf_counter() - t0
    ok = [r for r in rows if r.status == "ok"]
    above = [r for r in ok if r.imp_rmse_target is not None and r.imp_rmse_target > 1.0]
    curve = binned_error_curve(above, "imp_rmse_target", "target_rmse", bins=min(20, len(above) // 10))
    rho = curve.spearman()
    record_property("measured", f"{len(rows)} rows ({len(ok)} ok), {len(above)} above floor, "
                                f"{len(curve.count)} bins, rho {rho:.2f} in {elapsed:.0f}s")
    assert len(rows) == 960
    assert rho > 0
    assert elapsed < 600


FAST = MCMCConfig(iterations=40, burn_in=10)
IMPUTERS = [
    ImputerConfig("mean"),
    ImputerConfig("mice_norm", cycles=3),
    ImputerConfig("mice_pmm", cycles=3, donors=3),
    ImputerConfig("mice_ri", cycles=3),
    *[ImputerConfig("bayes", bayes_variant=v, mcmc=FAST) for v in ("z_model", "joint", "no_outcome", "no_missingness")],
]


def random_masked(seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(20, 80))
    X = r.normal(size=(n, 1)) + r.normal(size=(n, 3))
    R = (r.random((n, 2)) > r.uniform(0.05, 0.6)).astype(np.int8)
    R[:3] = 1
    Xs = X.copy()
    Xs[:, 1:][R == 0] = np.nan
    return MaskedDataset(Xstar=Xs, R=R, Y=X.sum(axis=1) + r.normal(size=n))


def mask_preserved(n_inputs):
    for cfg in IMPUTERS:
        for seed in range(n_inputs):
            ds = random_masked(seed)
            out = impute(ds, cfg, seed)
            obs = ~ds.missing
            if not (np.array_equal(out.Xhat[obs], ds.Xstar[obs]) and np.isfinite(out.Xhat).all()):
                return False
    return True


def pmm_closed(n_inputs):
    for seed in range(n_inputs):
        ds = random_masked(seed)
        out = impute(ds, IMPUTERS[2], seed)
        for j in ds.maskable:
            if not set(out.Xhat[ds.missing[:, j], j]) <= set(ds.Xstar[~ds.missing[:, j], j]):
                return False
    return True


def irls_grid_gap(seed):
    r = np.random.default_rng(seed)
    x = r.normal(size=200)
    y = (r.random(200) < 1 / (1 + np.exp(-(r.normal() + r.normal() * x)))).astype(float)
    fit = irls_logistic(x, y, tol=1e-10)
    b0, b1 = fit.coefficients
    B0, B1 = np.meshgrid(np.linspace(b0 - 3, b0 + 3, 201), np.linspace(b1 - 3, b1 + 3, 201), indexing="ij")
    eta = B0[..., None] + B1[..., None] * x
    grid = np.sum(y * eta - np.logaddexp(0, eta), axis=-1).max()
    return grid - logistic_loglik(x[:, None], y, fit.coefficients)


def conjugate_gap():
    r = np.random.default_rng(1)
    X = r.normal(size=(60, 2))
    y = 0.5 + X @ np.array([1.0, -0.8]) + r.normal(size=60)
    draws = gibbs_regression(X, y, iterations=4000, burn_in=500, prior_sd=2.5, rng_seed=3)
    exact = conjugate_posterior(add_intercept(X), y, prior_sd=2.5, noise_shape=bayes.NOISE_SHAPE,
                                noise_scale=bayes.NOISE_SCALE)
    return float(np.abs(draws.mean(axis=0) - exact.mean).max())


def scale_invariance_gap(n_cases):
    worst = 0.0
    for seed in range(n_cases):
        r = np.random.default_rng(seed)
        X = r.normal(size=(60, 2))
        y = r.normal(size=60)
        w = r.uniform(0.2, 3.0, 60)
        c = 10 ** r.uniform(-3, 3)
        a = fit_weighted_outcome(as_imputed(X, "source"), y, w).coefficients
        b = fit_weighted_outcome(as_imputed(X, "source"), y, c * w).coefficients
        worst = max(worst, float(np.abs(a - b).max()))
    return worst


def harness_reruns_identical(tmp_path):
    cfg = FactorialConfig(sample_sizes=(300,), target_props=(0.5,), miss_pcts=(0.2,), dags=(1, 6),
                          nonlinearity=(1, 3), methods=("mean", "mice_pmm"), reps=1, master_seed=9)
    outputs = []
    for jobs, name in ((1, "a"), (2, "b"), (1, "c")):
        run_factorial(cfg, tmp_path / name, jobs=jobs)
        csv = pd.read_csv(tmp_path / name / "results.csv").drop(columns="runtime_ms")
        outputs.append(csv.to_csv(index=False).encode())
    return outputs[0] == outputs[1] == outputs[2]


@pytest.mark.criterion(8, "property suites: masks, PMM closure, IRLS optimality, conjugacy, scale invariance, reruns")
def test_criterion_8_property_suites(record_property, tmp_path):
    results = {
        "mask x200": mask_preserved(200),
        "pmm closure": pmm_closed(200),
        "irls vs grid": max(irls_grid_gap(s) for s in range(25)) <= 1e-6,
        "conjugate": conjugate_gap() < 0.01,
        "scale invariance": scale_invariance_gap(50) < 1e-8,
        "reruns identical": harness_reruns_identical(tmp_path),
    }
    record_property("measured", ", ".join(f"{k} {'ok' if v else 'FAIL'}" for k, v in results.items()))
    assert all(results.values()), results


def loop_rmse(a, b):
    return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)) / len(a))


def loop_brier(p, y):
    return sum((x - t) ** 2 for x, t in zip(p, y)) / len(p)


def pair_auroc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in pos for b in neg)
    return wins / (len(pos) * len(neg))


@pytest.mark.criterion(9, "metric oracles: AUROC pair counting, Brier and RMSE naive loops")
def test_criterion_9_metric_oracles(record_property):
    worst_auc = worst_brier = worst_rmse = 0.0
    for seed in range(50):
        r = np.random.default_rng(1000 + seed)
        n = int(r.integers(2, 120))
        scores = np.round(r.normal(size=n), 1)
        labels = r.integers(0, 2, n)
        labels[:2] = [0, 1]
        probs = r.random(n)
        a, b = r.normal(size=n), r.normal(size=n)
        worst_auc = max(worst_auc, abs(auroc(scores, labels) - pair_auroc(scores, labels)))
        worst_brier = max(worst_brier, abs(brier(probs, labels) - loop_brier(probs, labels)))
        worst_rmse = max(worst_rmse, abs(rmse(a, b) - loop_rmse(a, b)))
    record_property("measured", f"max gaps auroc {worst_auc:.1e}, brier {worst_brier:.1e}, rmse {worst_rmse:.1e}")
    assert worst_auc < 1e-12 and worst_brier < 1e-12 and worst_rmse < 1e-12
