"""Joint Bayesian imputation by Gibbs sampling.

The model is a network of linear equations over standardized variables:

* covariates ``X_k ~ N(b0 + b'[Z, X_{<k}], s2_k)`` (a chain factorization of
  a joint normal, optionally driven by per-row latent ``Z ~ N(0, I)``);
* each indicator ``R_j = 1{U_j > 0}``, ``U_j ~ N(c0 + c'[X, R_{<j}], 1)``
  (probit with latent-variable augmentation, standing in for expit);
* outcome ``Y ~ N(a0 + a'[X, R], s2_y)``.

Every full conditional is then either Normal-inverse-Gamma (equation
parameters), truncated normal (``U``) or normal (missing cells and ``Z``),
so each sweep is exact.  The variants drop pieces of the network:

===============  =====  ===========  =======
variant          Z      indicators   outcome
===============  =====  ===========  =======
z_model          yes    yes          yes
joint            no     yes          yes
no_outcome       no     yes          no
no_missingness   no     no           no
===============  =====  ===========  =======

The outcome enters target-domain fits only when ``leak`` is set.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from ..errors import ConfigError, SamplerError, SingularDesignError
from ..glm import RIDGE_FLOOR, conjugate_posterior
from ..rng import stream
from ..simgen import MaskedDataset
from .base import ImputedDataset, ImputerConfig, finish, observed_means

NOISE_SHAPE = 1.0
NOISE_SCALE = 1.0


@dataclass
class _Equation:
    response: int
    predictors: list[int]
    probit: bool = False
    fixed: bool = False
    beta: np.ndarray | None = None
    s2: float = 1.0

    def linear_predictor(self, S: np.ndarray, rows=slice(None)) -> np.ndarray:
        return self.beta[0] + S[rows][:, self.predictors] @ self.beta[1:]


def sample_gaussian_equation(A, y, prior_sd, rng):
    """One exact draw of ``(beta, s2)`` from the NIG posterior."""
    post = conjugate_posterior(A, y, prior_sd=prior_sd, noise_shape=NOISE_SHAPE, noise_scale=NOISE_SCALE)
    return post.sample(rng)


def sample_probit_equation(A, u, prior_sd, rng):
    """Draw ``beta ~ N(V A'u, V)``, ``V = (A'A + I/prior_sd^2)^-1`` (unit noise)."""
    p = A.shape[1]
    prec = A.T @ A
    prec[np.diag_indices(p)] += 1.0 / prior_sd**2 + RIDGE_FLOOR
    chol = np.linalg.cholesky(prec)
    mean = np.linalg.solve(prec, A.T @ u)
    # beta = mean + L^-T z has covariance prec^-1
    return mean + np.linalg.solve(chol.T, rng.standard_normal(p))


def truncated_normal_sign(mu: np.ndarray, positive: np.ndarray, rng) -> np.ndarray:
    """``N(mu, 1)`` truncated to ``(0, inf)`` where ``positive`` else ``(-inf, 0]``."""
    # reflect so every draw is z > a with a = -mu (positive) or mu (negative)
    a = np.where(positive, -mu, mu)
    logv = np.log(rng.random(mu.shape[0]))
    z = -special.ndtri_exp(special.log_ndtr(-a) + logv)
    z = np.maximum(z, a)
    return mu + np.where(positive, z, -z)


def gibbs_regression(X, y, iterations=4000, burn_in=500, prior_sd=2.5, rng_seed=0) -> np.ndarray:
    """Posterior draws of ``[intercept, coefficients]`` for a fully observed regression.

    Uses the same NIG kernel as :func:`impute_bayes`; exposed for testing.
    """
    rng = stream(rng_seed, "gibbs_regression")
    A = np.hstack([np.ones((len(y), 1)), np.asarray(X, float).reshape(len(y), -1)])
    draws = np.empty((iterations - burn_in, A.shape[1]))
    for it in range(iterations):
        beta, _ = sample_gaussian_equation(A, y, prior_sd, rng)
        if it >= burn_in:
            draws[it - burn_in] = beta
    return draws


class _Network:
    def __init__(self, ds: MaskedDataset, cfg: ImputerConfig, use_y: bool, rng):
        variant = cfg.bayes_variant
        n, p = ds.Xstar.shape
        miss = ds.missing
        self.rng = rng
        self.prior_sd = cfg.mcmc.prior_sd
        self.center = observed_means(ds)
        sd = np.nanstd(ds.Xstar, axis=0)
        self.scale = np.where(sd > 0, sd, 1.0)

        columns = [np.where(miss[:, k], 0.0, (ds.Xstar[:, k] - self.center[k]) / self.scale[k]) for k in range(p)]
        sample_rows = [miss[:, k].copy() for k in range(p)]
        x_nodes = list(range(p))
        r_nodes = []
        for j in range(len(ds.maskable)):
            r_nodes.append(len(columns))
            columns.append(ds.R[:, j].astype(float))
            sample_rows.append(np.zeros(n, bool))
        z_nodes = []
        if variant == "z_model":
            for _ in range(cfg.mcmc.latent_dim):
                z_nodes.append(len(columns))
                columns.append(rng.standard_normal(n))
                sample_rows.append(np.ones(n, bool))
        u_nodes = []
        if variant != "no_missingness":
            for j in range(len(ds.maskable)):
                u_nodes.append(len(columns))
                columns.append(np.where(ds.R[:, j] == 1, 0.5, -0.5))
                sample_rows.append(np.zeros(n, bool))
        y_node = None
        if use_y:
            y = np.asarray(ds.Y, dtype=float)
            self.y_center, self.y_scale = y.mean(), (y.std() or 1.0)
            y_node = len(columns)
            columns.append((y - self.y_center) / self.y_scale)
            sample_rows.append(np.zeros(n, bool))

        self.S = np.column_stack(columns)
        self.sample_rows = sample_rows
        self.x_nodes, self.z_nodes, self.u_nodes, self.r_nodes = x_nodes, z_nodes, u_nodes, r_nodes
        self.R = ds.R

        eqs: list[_Equation] = []
        for z in z_nodes:
            eqs.append(_Equation(z, [], fixed=True, beta=np.zeros(1), s2=1.0))
        for k in x_nodes:
            preds = z_nodes + x_nodes[:k]
            involved = [k] + preds
            if not any(sample_rows[v].any() for v in involved):
                continue
            eqs.append(_Equation(k, preds))
        for j, u in enumerate(u_nodes):
            eqs.append(_Equation(u, x_nodes + r_nodes[:j], probit=True))
        if y_node is not None:
            eqs.append(_Equation(y_node, x_nodes + r_nodes))
        self.equations = eqs
        self.own = {e.response: e for e in eqs}
        self.appears_in = {v: [(e, 1 + e.predictors.index(v)) for e in eqs if v in e.predictors] for v in range(len(columns))}
        self.missing_cells = miss
        self.ones = np.ones((n, 1))

        for e in eqs:
            if not e.fixed:
                self._update_params(e)
        for j, u in enumerate(self.u_nodes):
            self._sample_probit_latent(j, u)

    def _design(self, e: _Equation) -> np.ndarray:
        return np.hstack([self.ones, self.S[:, e.predictors]])

    def _update_params(self, e: _Equation):
        A = self._design(e)
        y = self.S[:, e.response]
        if e.probit:
            e.beta = sample_probit_equation(A, y, self.prior_sd, self.rng)
        else:
            e.beta, e.s2 = sample_gaussian_equation(A, y, self.prior_sd, self.rng)

    def _sample_probit_latent(self, j, u):
        e = self.own[u]
        mu = e.linear_predictor(self.S)
        self.S[:, u] = truncated_normal_sign(mu, self.R[:, j] == 1, self.rng)

    def _sample_cells(self, v: int):
        rows = self.sample_rows[v]
        if not rows.any():
            return
        S = self.S[rows]
        own = self.own[v]
        prec = np.full(S.shape[0], 1.0 / own.s2)
        num = own.linear_predictor(S) / own.s2
        for e, idx in self.appears_in[v]:
            b = e.beta[idx]
            partial = e.linear_predictor(S) - b * S[:, v]
            prec += b * b / e.s2
            num += b * (S[:, e.response] - partial) / e.s2
        self.S[rows, v] = num / prec + self.rng.standard_normal(S.shape[0]) / np.sqrt(prec)

    def sweep(self):
        for e in self.equations:
            if not e.fixed:
                self._update_params(e)
        for j, u in enumerate(self.u_nodes):
            self._sample_probit_latent(j, u)
        for z in self.z_nodes:
            self._sample_cells(z)
        for k in self.x_nodes:
            self._sample_cells(k)

    def finite(self) -> bool:
        return bool(np.all(np.isfinite(self.S))) and all(
            np.all(np.isfinite(e.beta)) and np.isfinite(e.s2) for e in self.equations
        )

    def covariates(self) -> np.ndarray:
        return self.S[:, self.x_nodes]

    def unstandardize(self, Xs: np.ndarray) -> np.ndarray:
        return Xs * self.scale + self.center


def impute_bayes(ds: MaskedDataset, cfg: ImputerConfig, rng_seed: int = 0) -> ImputedDataset:
    """Posterior-mean imputation of the missing cells.

    Target-domain data contribute their outcome only when ``cfg.leak`` is
    set; otherwise ``ds.Y`` is never read for target data.
    """
    if cfg.method != "bayes":
        raise ConfigError(f"impute_bayes needs method='bayes', got {cfg.method!r}")
    use_y = False
    if cfg.uses_outcome:
        if ds.domain_tag == "source" or cfg.leak:
            if ds.Y is None:
                raise ConfigError(f"{cfg.bayes_variant} on {ds.domain_tag} data requires the outcome")
            use_y = True
    rng = stream(rng_seed, "impute_bayes", cfg.bayes_variant)
    miss = ds.missing
    if not miss.any():
        return finish(ds, ds.Xstar, cfg, iterations=0)
    try:
        net = _Network(ds, cfg, use_y, rng)
        total = np.zeros(int(miss.sum()))
        kept = 0
        for it in range(cfg.mcmc.iterations):
            net.sweep()
            if not net.finite():
                raise SamplerError("non-finite sampler state", it + 1)
            if it >= cfg.mcmc.burn_in:
                total += net.covariates()[miss]
                kept += 1
    except (np.linalg.LinAlgError, SingularDesignError) as exc:
        raise SamplerError(f"linear algebra failure: {exc}", -1) from exc
    means = np.zeros_like(ds.Xstar)
    means[miss] = total / kept
    Xhat = np.where(miss, net.unstandardize(means), ds.Xstar)
    return finish(ds, Xhat, cfg, iterations=cfg.mcmc.iterations, kept_draws=kept, used_outcome=use_y)
