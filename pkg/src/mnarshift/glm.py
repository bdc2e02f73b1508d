"""Small numerical kernels shared by the imputers and the adaptation step.

* ``expit``: numerically safe logistic function.
* ``ridge_solve``: normal equations with a ridge floor.
* ``conjugate_posterior``: exact Normal-inverse-Gamma update for linear
  regression (also the weighted least-squares backend).
* ``irls_logistic``: Newton/IRLS fit of a (row-weighted) logistic regression.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import ConfigError, ConvergenceError, SeparationError, SingularDesignError

RIDGE_FLOOR = 1e-6


def expit(t):
    return special.expit(t)


def add_intercept(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return np.hstack([np.ones((X.shape[0], 1)), X])


def ridge_solve(A: np.ndarray, y: np.ndarray, ridge: float = RIDGE_FLOOR) -> np.ndarray:
    """Solve ``(A'A + ridge*I) b = A'y``."""
    gram = A.T @ A
    gram[np.diag_indices_from(gram)] += ridge
    try:
        coef = np.linalg.solve(gram, A.T @ y)
    except np.linalg.LinAlgError as exc:
        raise SingularDesignError(f"normal equations singular after ridge floor {ridge}") from exc
    if not np.all(np.isfinite(coef)):
        raise SingularDesignError("non-finite least-squares solution")
    return coef


@dataclass(frozen=True)
class NIGPosterior:
    """Normal-inverse-Gamma posterior ``beta | s2 ~ N(mean, s2*cov_unscaled)``, ``s2 ~ IG(shape, scale)``."""

    mean: np.ndarray
    cov_unscaled: np.ndarray
    shape: float
    scale: float

    @property
    def noise_variance_mean(self) -> float:
        return self.scale / (self.shape - 1.0) if self.shape > 1.0 else np.inf

    @property
    def coef_cov(self) -> np.ndarray:
        """Marginal covariance of beta (multivariate t)."""
        return self.noise_variance_mean * self.cov_unscaled

    def sample(self, rng: np.random.Generator) -> tuple[np.ndarray, float]:
        s2 = self.scale / rng.gamma(self.shape)
        chol = np.linalg.cholesky(self.cov_unscaled)
        beta = self.mean + np.sqrt(s2) * (chol @ rng.standard_normal(self.mean.shape[0]))
        return beta, s2


def conjugate_posterior(
    X: np.ndarray,
    y: np.ndarray,
    prior_mean=0.0,
    prior_sd=np.inf,
    noise_shape: float = 1.0,
    noise_scale: float = 1.0,
    ridge: float = RIDGE_FLOOR,
) -> NIGPosterior:
    """Exact NIG update for ``y = X beta + eps``.

    ``prior_sd`` scales the prior covariance ``prior_sd**2 * I`` (relative to
    the noise variance); ``np.inf`` gives the flat-prior limit, in which the
    posterior mean is the least-squares solution.  The ridge floor is added
    to the posterior precision only.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    p = X.shape[1]
    prior_sd = np.broadcast_to(np.asarray(prior_sd, dtype=float), (p,))
    if np.any(prior_sd <= 0) or noise_shape <= 0 or noise_scale <= 0:
        raise ConfigError("prior scales must be positive")
    m0 = np.broadcast_to(np.asarray(prior_mean, dtype=float), (p,)).copy()
    prec0 = np.where(np.isinf(prior_sd), 0.0, 1.0 / prior_sd**2)

    prec_n = X.T @ X + np.diag(prec0)
    prec_n[np.diag_indices(p)] += ridge
    try:
        chol = np.linalg.cholesky(prec_n)
    except np.linalg.LinAlgError as exc:
        raise SingularDesignError("posterior precision not positive definite") from exc
    rhs = X.T @ y + prec0 * m0
    mean = _chol_solve(chol, rhs)
    cov = _chol_solve(chol, np.eye(p))
    n = X.shape[0]
    quad = y @ y + m0 @ (prec0 * m0) - mean @ (prec_n @ mean)
    scale = noise_scale + 0.5 * max(quad, 0.0)
    return NIGPosterior(mean=mean, cov_unscaled=cov, shape=noise_shape + 0.5 * n, scale=scale)


def _chol_solve(chol: np.ndarray, b: np.ndarray) -> np.ndarray:
    from scipy.linalg import cho_solve

    return cho_solve((chol, True), b)


@dataclass(frozen=True)
class LogisticModel:
    """Logistic regression on standardized features.

    ``coefficients[0]`` is the intercept; the rest act on
    ``(x - feature_mean) / feature_scale``.
    """

    coefficients: np.ndarray
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    n_iter: int = 0
    covariance: np.ndarray | None = field(default=None, repr=False)
    columns: tuple[str, ...] | None = None

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        Xs = (np.asarray(X, dtype=float) - self.feature_mean) / self.feature_scale
        return self.coefficients[0] + Xs @ self.coefficients[1:]

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return expit(self.decision_function(X))

    @property
    def standard_errors(self) -> np.ndarray:
        if self.covariance is None:
            raise ValueError("model was fitted without covariance")
        return np.sqrt(np.diag(self.covariance))


def _penalized_loglik(A, y, w, beta, ridge):
    eta = A @ beta
    ll = np.sum(w * (y * eta - np.logaddexp(0.0, eta)))
    return ll - 0.5 * ridge * np.sum(beta[1:] ** 2)


def logistic_loglik(X: np.ndarray, y: np.ndarray, coefficients: np.ndarray, row_weights=None) -> float:
    """Log-likelihood of ``coefficients`` (intercept first) on raw features ``X``."""
    A = add_intercept(X)
    w = np.ones(A.shape[0]) if row_weights is None else np.asarray(row_weights, float)
    return float(_penalized_loglik(A, np.asarray(y, float), w, np.asarray(coefficients, float), 0.0))


def irls_logistic(
    X: np.ndarray,
    y: np.ndarray,
    row_weights: np.ndarray | None = None,
    tol: float = 1e-8,
    max_iter: int = 100,
    ridge: float = RIDGE_FLOOR,
    separation_bound: float = 30.0,
) -> LogisticModel:
    """Fit ``P(y=1|x) = expit(b0 + x'b)`` by iteratively reweighted least squares.

    Features are used as given (identity standardization); the intercept is
    not penalized.  Newton steps are halved until the penalized
    log-likelihood does not decrease.  Convergence is declared when the
    largest coefficient change falls below ``tol``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if n < p:
        raise ConfigError(f"need n >= p, got n={n}, p={p}")
    if tol <= 0:
        raise ConfigError("tol must be positive")
    if not np.all((y == 0) | (y == 1)):
        raise ConfigError("labels must be 0/1")
    w = np.ones(n) if row_weights is None else np.asarray(row_weights, dtype=float)
    if w.shape != (n,) or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ConfigError("row_weights must be finite, non-negative, one per row")

    A = add_intercept(X)
    penalty = np.full(p + 1, ridge)
    penalty[0] = 0.0
    beta = np.zeros(p + 1)
    ybar = np.sum(w * y) / np.sum(w)
    if 0.0 < ybar < 1.0:
        beta[0] = np.log(ybar / (1.0 - ybar))
    ll = _penalized_loglik(A, y, w, beta, ridge)
    grad = np.zeros(p + 1)
    for it in range(1, max_iter + 1):
        mu = expit(A @ beta)
        grad = A.T @ (w * (y - mu)) - penalty * beta
        hess = (A * (w * mu * (1.0 - mu))[:, None]).T @ A
        hess[np.diag_indices(p + 1)] += np.maximum(penalty, RIDGE_FLOOR * 1e-3)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        t = 1.0
        while True:
            cand = beta + t * step
            ll_new = _penalized_loglik(A, y, w, cand, ridge)
            if ll_new >= ll - 1e-12 * abs(ll) or t < 1e-10:
                break
            t *= 0.5
        change = np.max(np.abs(cand - beta))
        beta, ll = cand, ll_new
        if not np.all(np.isfinite(beta)):
            raise ConvergenceError("non-finite coefficients", it, float(np.linalg.norm(grad)))
        if change < tol:
            break
    else:
        _raise_failure(A, y, beta, grad, max_iter, separation_bound)
    if np.max(np.abs(beta[1:]), initial=0.0) > separation_bound and _separated(A, y, beta):
        _raise_failure(A, y, beta, grad, it, separation_bound)

    mu = expit(A @ beta)
    hess = (A * (w * mu * (1.0 - mu))[:, None]).T @ A
    hess[np.diag_indices(p + 1)] += np.maximum(penalty, RIDGE_FLOOR * 1e-3)
    cov = np.linalg.pinv(hess)
    return LogisticModel(
        coefficients=beta,
        feature_mean=np.zeros(p),
        feature_scale=np.ones(p),
        n_iter=it,
        covariance=cov,
    )


def _separated(A, y, beta) -> bool:
    margin = (2.0 * y - 1.0) * (A @ beta)
    return bool(np.all(margin > 0))


def _raise_failure(A, y, beta, grad, n_iter, bound):
    gnorm = float(np.linalg.norm(grad))
    if _separated(A, y, beta):
        raise SeparationError("perfect separation: coefficients diverging", n_iter, gnorm)
    raise ConvergenceError("IRLS did not converge", n_iter, gnorm)
