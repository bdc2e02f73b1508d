import dataclasses

import numpy as np
import pytest
from scipy import stats

from mnarshift.errors import ConfigError, SamplerError
from mnarshift.glm import add_intercept, conjugate_posterior
from mnarshift.impute import ImputerConfig, MCMCConfig, gibbs_regression, impute, impute_bayes, impute_mice_norm
from mnarshift.impute import bayes
from mnarshift.metrics import imputation_rmse
from mnarshift.simgen import MaskedDataset


def test_gibbs_kernel_matches_conjugate_posterior():
    r = np.random.default_rng(1)
    X = r.normal(size=(60, 2))
    y = 0.5 + X @ np.array([1.0, -0.8]) + r.normal(size=60)
    draws = gibbs_regression(X, y, iterations=4000, burn_in=500, prior_sd=2.5, rng_seed=3)
    exact = conjugate_posterior(add_intercept(X), y, prior_sd=2.5, noise_shape=bayes.NOISE_SHAPE,
                                noise_scale=bayes.NOISE_SCALE)
    np.testing.assert_allclose(draws.mean(axis=0), exact.mean, atol=0.01)
    mc_se = draws.std(axis=0) / np.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - exact.mean) < 3 * mc_se + 1e-12)
    np.testing.assert_allclose(np.cov(draws.T), exact.coef_cov, atol=0.1 * np.diag(exact.coef_cov).max())


def test_truncated_normal_sign_moments():
    r = np.random.default_rng(0)
    mu = np.full(200_000, 0.7)
    pos = bayes.truncated_normal_sign(mu, np.ones_like(mu, bool), r)
    neg = bayes.truncated_normal_sign(mu, np.zeros_like(mu, bool), r)
    assert pos.min() > 0 and neg.max() <= 0
    np.testing.assert_allclose(pos.mean(), stats.truncnorm(-0.7, np.inf, loc=0.7).mean(), atol=0.01)
    np.testing.assert_allclose(neg.mean(), stats.truncnorm(-np.inf, -0.7, loc=0.7).mean(), atol=0.01)


def test_truncated_normal_far_tail_is_finite():
    r = np.random.default_rng(0)
    mu = np.array([-40.0, 40.0])
    z = bayes.truncated_normal_sign(mu, np.array([True, False]), r)
    assert np.all(np.isfinite(z)) and z[0] > 0 and z[1] <= 0


def outcome_linked(seed, n=300, domain="target"):
    """X2 strongly tied to Y, high X2 hidden."""
    r = np.random.default_rng(seed)
    X = r.normal(size=(n, 3))
    X[:, 1] += 0.5 * X[:, 0]
    Y = 2.0 * X[:, 1] + 0.3 * r.normal(size=n)
    R = np.ones((n, 2), np.int8)
    R[:, 0] = r.random(n) > 1 / (1 + np.exp(-(X[:, 1] - 0.5)))
    Xs = X.copy()
    Xs[R[:, 0] == 0, 1] = np.nan
    return X, MaskedDataset(Xstar=Xs, R=R, Y=Y, domain_tag=domain)


@pytest.mark.slow
def test_leak_beats_no_leak_with_outcome_signal():
    mcmc = MCMCConfig(iterations=300, burn_in=100)
    gaps = []
    for seed in range(50):
        X, ds = outcome_linked(seed)
        leak = impute_bayes(ds, ImputerConfig("bayes", leak=True, mcmc=mcmc), seed)
        blind = impute_bayes(ds, ImputerConfig("bayes", leak=False, mcmc=mcmc), seed)
        gaps.append(imputation_rmse(blind.Xhat, X, ds.R, ds.maskable) - imputation_rmse(leak.Xhat, X, ds.R, ds.maskable))
    assert np.mean(gaps) > 0


@pytest.mark.slow
def test_no_missingness_variant_close_to_mice_norm_under_mcar():
    r = np.random.default_rng(21)
    n = 3000
    L = r.normal(size=(n, 1))
    X = L + r.normal(size=(n, 3))
    R = (r.random((n, 2)) > 0.3).astype(np.int8)
    Xs = X.copy()
    Xs[:, 1:][R == 0] = np.nan
    ds = MaskedDataset(Xstar=Xs, R=R)
    bayes_fit = impute(ds, ImputerConfig("bayes", bayes_variant="no_missingness", mcmc=MCMCConfig(600, 200)), 1)
    mice_fit = impute_mice_norm(ds)
    a = imputation_rmse(bayes_fit.Xhat, X, R, ds.maskable)
    b = imputation_rmse(mice_fit.Xhat, X, R, ds.maskable)
    assert abs(a - b) < 0.05 * b


def test_variants_use_outcome_only_where_allowed():
    _, ds = outcome_linked(0, n=80, domain="source")
    mcmc = MCMCConfig(30, 10)
    for variant, expected in [("z_model", True), ("joint", True), ("no_outcome", False), ("no_missingness", False)]:
        out = impute_bayes(ds, ImputerConfig("bayes", bayes_variant=variant, mcmc=mcmc))
        assert out.diagnostics["used_outcome"] is expected
    tgt = dataclasses.replace(ds, domain_tag="target")
    assert impute_bayes(tgt, ImputerConfig("bayes", mcmc=mcmc)).diagnostics["used_outcome"] is False
    assert impute_bayes(tgt, ImputerConfig("bayes", leak=True, mcmc=mcmc)).diagnostics["used_outcome"] is True


def test_source_joint_needs_outcome():
    _, ds = outcome_linked(0, n=50, domain="source")
    with pytest.raises(ConfigError):
        impute_bayes(ds.without_outcome(), ImputerConfig("bayes", mcmc=MCMCConfig(20, 5)))


def test_posterior_mean_averages_kept_draws():
    _, ds = outcome_linked(2, n=60)
    out = impute_bayes(ds, ImputerConfig("bayes", mcmc=MCMCConfig(50, 20)))
    assert out.diagnostics["kept_draws"] == 30


def test_divergent_chain_reports_iteration(monkeypatch):
    _, ds = outcome_linked(0, n=50)
    calls = {"n": 0}
    original = bayes._Network.sweep

    def sweep(self):
        original(self)
        calls["n"] += 1
        if calls["n"] == 4:
            self.S[0, 0] = np.nan

    monkeypatch.setattr(bayes._Network, "sweep", sweep)
    with pytest.raises(SamplerError) as err:
        impute_bayes(ds, ImputerConfig("bayes", mcmc=MCMCConfig(20, 5)))
    assert err.value.iteration == 4


def test_wrong_method_rejected():
    _, ds = outcome_linked(0, n=30)
    with pytest.raises(ConfigError):
        impute_bayes(ds, ImputerConfig("mean"))
