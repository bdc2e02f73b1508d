import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mnarshift.errors import ConfigError, ImputationError
from mnarshift.impute import (
    ImputerConfig,
    MCMCConfig,
    impute,
    impute_mean,
    impute_mice_norm,
    impute_mice_pmm,
    impute_mice_ri,
    nearest_donors,
    sweep_order,
)
from mnarshift.metrics import imputation_rmse
from mnarshift.simgen import MaskedDataset

FAST_MCMC = MCMCConfig(iterations=40, burn_in=10)
ALL_CONFIGS = [
    ImputerConfig("mean"),
    ImputerConfig("mice_norm", cycles=3),
    ImputerConfig("mice_pmm", cycles=3, donors=3),
    ImputerConfig("mice_ri", cycles=3),
    *[ImputerConfig("bayes", bayes_variant=v, mcmc=FAST_MCMC) for v in ("z_model", "joint", "no_outcome", "no_missingness")],
]


def masked(X, R, Y=None, domain="source", maskable=(1, 2)):
    X = np.array(X, dtype=float)
    R = np.asarray(R, dtype=np.int8)
    Xs = X.copy()
    for k, j in enumerate(maskable):
        Xs[R[:, k] == 0, j] = np.nan
    return MaskedDataset(Xstar=Xs, R=R, maskable=maskable, Y=Y, domain_tag=domain, columns=tuple(f"X{i + 1}" for i in range(X.shape[1])))


def random_masked(seed, n=60, rate=0.3, with_y=True):
    r = np.random.default_rng(seed)
    Z = r.normal(size=(n, 1))
    X = Z + r.normal(size=(n, 3))
    R = (r.random((n, 2)) > rate).astype(np.int8)
    R[:3] = 1  # a few complete rows keep every column observable
    Y = X.sum(axis=1) + r.normal(size=n) if with_y else None
    return X, masked(X, R, Y)


def test_mean_fill_simple():
    ds = masked([[0, 1, 5], [0, 2, 5], [0, 3, 5], [0, 9, 5]], [[1, 1], [1, 1], [1, 1], [0, 1]])
    assert impute_mean(ds).Xhat[3, 1] == 2.0


def test_mean_fill_arithmetic():
    ds = masked([[0, 0, 1], [0, 0, 1], [0, 10, 1], [0, 7, 1], [0, 7, 1]], [[1, 1], [1, 1], [1, 1], [0, 1], [0, 1]])
    np.testing.assert_allclose(impute_mean(ds).Xhat[3:, 1], 10 / 3)


def test_mean_no_missing_is_identity(rng):
    X = rng.normal(size=(10, 3))
    assert np.array_equal(impute_mean(masked(X, np.ones((10, 2)))).Xhat, X)


def test_mean_all_missing_column_named(rng):
    ds = masked(rng.normal(size=(5, 3)), np.column_stack([np.zeros(5), np.ones(5)]))
    with pytest.raises(ImputationError, match="X2"):
        impute_mean(ds)


def test_sweep_order_ascending_missingness():
    R = np.ones((10, 2), np.int8)
    R[:4, 0] = 0
    R[:2, 1] = 0
    ds = masked(np.zeros((10, 3)), R)
    assert sweep_order(ds) == [2, 1]


def test_mice_norm_exact_linear_relation(rng):
    x1 = rng.normal(size=400)
    X = np.column_stack([x1, 2 * x1, rng.normal(size=400)])
    R = np.ones((400, 2), np.int8)
    R[rng.random(400) < 0.3, 0] = 0
    out = impute_mice_norm(masked(X, R))
    miss = R[:, 0] == 0
    np.testing.assert_allclose(out.Xhat[miss, 1], 2 * x1[miss], atol=1e-6)


def test_mice_norm_independent_columns_near_mean():
    r = np.random.default_rng(5)
    X = r.normal(size=(5000, 3))
    R = (r.random((5000, 2)) > 0.3).astype(np.int8)
    out = impute_mice_norm(masked(X, R))
    miss = R[:, 0] == 0
    err = np.sqrt(np.mean((out.Xhat[miss, 1] - X[miss, 1]) ** 2))
    assert abs(err - X[:, 1].std()) < 0.03 * X[:, 1].std()


def test_mice_norm_constant_predictors_give_mean_fill(rng):
    n = 50
    X = np.column_stack([np.ones(n), rng.normal(size=n), np.full(n, 3.0)])
    R = np.ones((n, 2), np.int8)
    R[::5, 0] = 0
    ds = masked(X, R)
    np.testing.assert_allclose(impute_mice_norm(ds).Xhat, impute_mean(ds).Xhat, atol=1e-9)


def brute_nearest(pred_obs, pred_mis, k):
    out = []
    for m in pred_mis:
        ranked = sorted(range(len(pred_obs)), key=lambda i: (abs(pred_obs[i] - m), i))
        out.append(ranked[:k])
    return np.array(out)


@settings(max_examples=100)
@given(st.integers(0, 10_000), st.integers(1, 6), st.booleans())
def test_nearest_donors_match_brute_force(seed, k, ties):
    r = np.random.default_rng(seed)
    n_obs = int(r.integers(k, 30))
    pred_obs = r.normal(size=n_obs)
    if ties:
        pred_obs = np.round(pred_obs, 1)
    pred_mis = r.normal(size=7)
    got = nearest_donors(pred_obs, pred_mis, k)
    want = brute_nearest(pred_obs, pred_mis, k)
    np.testing.assert_array_equal(np.sort(got, axis=1), np.sort(want, axis=1))


def test_pmm_single_donor_is_nearest_prediction():
    r = np.random.default_rng(11)
    X = r.normal(size=(200, 3))
    X[:, 1] += X[:, 0]
    R = np.ones((200, 2), np.int8)
    R[r.random(200) < 0.25, 0] = 0
    cfg = ImputerConfig("mice_pmm", cycles=1, donors=1)
    out = impute_mice_pmm(masked(X, R), cfg)
    # single incomplete column, one cycle: predictions come from the mean-initialized design
    obs = R[:, 0] == 1
    A = np.column_stack([np.ones(200), X[:, 0], X[:, 2]])
    beta = np.linalg.solve(A[obs].T @ A[obs] + 1e-6 * np.eye(3), A[obs].T @ X[obs, 1])
    pred = A @ beta
    for i in np.flatnonzero(~obs):
        d = np.abs(pred[obs] - pred[i])
        nearest = np.flatnonzero(obs)[np.argmin(d)]
        assert out.Xhat[i, 1] == X[nearest, 1]


def test_pmm_constant_column():
    X = np.column_stack([np.arange(20.0), np.full(20, 4.2), np.arange(20.0) ** 2])
    R = np.ones((20, 2), np.int8)
    R[::3, 0] = 0
    out = impute_mice_pmm(masked(X, R), ImputerConfig("mice_pmm", donors=2))
    assert np.all(out.Xhat[:, 1] == 4.2)


def test_pmm_too_many_donors():
    X = np.arange(12.0).reshape(4, 3)
    R = np.array([[1, 1], [1, 1], [0, 1], [0, 1]])
    with pytest.raises(ImputationError):
        impute_mice_pmm(masked(X, R), ImputerConfig("mice_pmm", donors=3))


@settings(max_examples=40)
@given(st.integers(0, 100_000))
def test_pmm_closure(seed):
    X, ds = random_masked(seed)
    out = impute_mice_pmm(ds, ImputerConfig("mice_pmm", cycles=2, donors=3), seed)
    for j in ds.maskable:
        observed = set(ds.Xstar[~ds.missing[:, j], j])
        assert set(out.Xhat[ds.missing[:, j], j]) <= observed


def test_ri_no_missing_is_identity(rng):
    X = rng.normal(size=(30, 3))
    assert np.array_equal(impute_mice_ri(masked(X, np.ones((30, 2)))).Xhat, X)


def test_ri_offset_near_zero_under_mcar():
    r = np.random.default_rng(8)
    n = 5000
    X = r.normal(size=(n, 3)) + r.normal(size=(n, 1))
    R = (r.random((n, 2)) > 0.3).astype(np.int8)
    out = impute_mice_ri(masked(X, R), rng_seed=1)
    for col in ("X2", "X3"):
        assert abs(out.diagnostics["offsets"][col]) < 2 * out.diagnostics["offset_se"][col]


def self_censored(seed, n=1000):
    r = np.random.default_rng(seed)
    X = r.normal(size=(n, 3)) + 0.8 * r.normal(size=(n, 1))
    R = np.ones((n, 2), np.int8)
    R[:, 0] = r.random(n) > 1 / (1 + np.exp(-(2.0 * X[:, 1] - 1.0)))  # high X2 hidden
    return masked(X, R)


def test_ri_offset_direction_self_censoring():
    hits = sum(impute_mice_ri(self_censored(s), ImputerConfig("mice_ri", cycles=5), s).diagnostics["offsets"]["X2"] > 0
               for s in range(100))
    assert hits >= 90


def test_ri_nonconvergence_is_imputation_error(monkeypatch):
    from mnarshift.errors import ConvergenceError
    from mnarshift.impute import mice

    def boom(*a, **k):
        raise ConvergenceError("stuck", 7, 1.5)

    monkeypatch.setattr(mice, "irls_logistic", boom)
    with pytest.raises(ImputationError, match="7 iterations"):
        impute_mice_ri(self_censored(0, 200))


@pytest.mark.parametrize("cfg", ALL_CONFIGS, ids=lambda c: f"{c.method}-{c.bayes_variant}")
def test_deterministic(cfg):
    _, ds = random_masked(3)
    a, b = impute(ds, cfg, 9), impute(ds, cfg, 9)
    assert np.array_equal(a.Xhat, b.Xhat)


@settings(max_examples=25)
@given(st.integers(0, 2**31), st.floats(0.05, 0.6))
def test_mask_preservation_all_imputers(seed, rate):
    """25 draws x 8 imputers = 200 randomized inputs."""
    _, ds = random_masked(seed, n=40, rate=rate)
    for cfg in ALL_CONFIGS:
        out = impute(ds, cfg, seed)
        obs = ~ds.missing
        assert np.array_equal(out.Xhat[obs], ds.Xstar[obs])
        assert np.isfinite(out.Xhat).all()
        assert np.array_equal(out.R, ds.R)


@pytest.mark.parametrize("variant", ["z_model", "joint", "no_outcome", "no_missingness"])
def test_no_leak_target_ignores_outcome(variant):
    _, ds = random_masked(4)
    tgt = dataclasses.replace(ds, domain_tag="target")
    cfg = ImputerConfig("bayes", bayes_variant=variant, leak=False, mcmc=FAST_MCMC)
    with_y = impute(tgt, cfg, 2).Xhat
    without = impute(tgt.without_outcome(), cfg, 2).Xhat
    assert with_y.tobytes() == without.tobytes()


def test_leak_requires_outcome():
    _, ds = random_masked(4, with_y=False)
    cfg = ImputerConfig("bayes", bayes_variant="joint", leak=True, mcmc=FAST_MCMC)
    with pytest.raises(ConfigError):
        impute(dataclasses.replace(ds, domain_tag="target"), cfg)


def test_leak_changes_target_imputation():
    _, ds = random_masked(4)
    tgt = dataclasses.replace(ds, domain_tag="target")
    a = impute(tgt, ImputerConfig("bayes", leak=True, mcmc=FAST_MCMC), 2).Xhat
    b = impute(tgt, ImputerConfig("bayes", leak=False, mcmc=FAST_MCMC), 2).Xhat
    assert not np.array_equal(a, b)


@pytest.mark.parametrize("kw", [
    {"method": "knn"}, {"bayes_variant": "pvae"}, {"donors": 0}, {"cycles": 0},
])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        ImputerConfig(**kw)


@pytest.mark.parametrize("kw", [{"iterations": 100, "burn_in": 100}, {"burn_in": -1}, {"prior_sd": 0.5}, {"prior_sd": 6}])
def test_mcmc_validation(kw):
    with pytest.raises(ConfigError):
        MCMCConfig(**kw)


def test_config_roundtrip():
    cfg = ImputerConfig("bayes", bayes_variant="z_model", leak=True, mcmc=MCMCConfig(300, 50, 2.0))
    assert ImputerConfig.from_dict(cfg.to_dict()) == cfg


def test_imputation_rmse_of_mean_fill_is_sd():
    r = np.random.default_rng(0)
    X = r.normal(size=(10_000, 3))
    R = (r.random((10_000, 2)) > 0.5).astype(np.int8)
    out = impute_mean(masked(X, R))
    assert abs(imputation_rmse(out.Xhat, X, R, (1, 2)) - 1.0) < 0.03
