"""Exact checks of the identification results on small instances.

* Observed-data conditionals ``P(Y | X_o, X*_u, R)`` by enumeration over a
  discrete joint: under MAR they do not depend on the missingness
  mechanism, under self-censoring they do.
* Split of the squared conditional-mean error into missing / complete rows.
* Complete-case regression, consistent when ``Y`` is independent of ``R``
  given the covariates.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SchemaError
from .simgen import MaskedDataset

MAX_LEVELS = 4


@dataclass(frozen=True, eq=False)
class DiscreteJoint:
    """``table[y, xo, xu, r]`` with ``r = 1`` meaning ``X_u`` is observed."""

    table: np.ndarray

    def __post_init__(self):
        t = self.table
        if t.ndim != 4 or t.shape[3] != 2:
            raise ConfigError("table must have axes (Y, X_o, X_u, R) with binary R")
        if max(t.shape[:3]) > MAX_LEVELS:
            raise ConfigError(f"supports are capped at {MAX_LEVELS} levels")
        if np.any(t < 0) or abs(t.sum() - 1.0) > 1e-12:
            raise ConfigError("probabilities must be non-negative and sum to 1")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.table.shape[:3]

    @classmethod
    def from_factors(cls, p_xo, p_xu_given_xo, p_y_given_x, p_observed) -> "DiscreteJoint":
        """Build ``P(xo) P(xu|xo) P(y|xo,xu) P(r|xo,xu)``.

        Shapes: ``p_xo (O,)``, ``p_xu_given_xo (O, U)``,
        ``p_y_given_x (O, U, K)``, ``p_observed (O, U)`` = ``P(R=1 | xo, xu)``.
        """
        p_xo = np.asarray(p_xo, float)
        p_xu = np.asarray(p_xu_given_xo, float)
        p_y = np.asarray(p_y_given_x, float)
        p_r1 = np.asarray(p_observed, float)
        p_x = p_xo[:, None] * p_xu
        p_r = np.stack([1.0 - p_r1, p_r1], axis=-1)
        t = np.einsum("ou,ouk,our->kour", p_x, p_y, p_r)
        return cls(t / t.sum())


@dataclass(frozen=True, eq=False)
class ObservedConditional:
    """``probs[xo, e, y]`` where ``e < U`` is an observed value of ``X_u`` and ``e == U`` is NA."""

    probs: np.ndarray
    defined: np.ndarray


def observed_conditional(joint: DiscreteJoint) -> ObservedConditional:
    t = joint.table
    n_y, n_o, n_u = joint.shape
    mass = np.zeros((n_o, n_u + 1, n_y))
    # R = 1: the observed value pins down x_u
    mass[:, :n_u, :] = np.transpose(t[:, :, :, 1], (1, 2, 0))
    # R = 0: every x_u is compatible with NA
    mass[:, n_u, :] = t[:, :, :, 0].sum(axis=2).T
    total = mass.sum(axis=2)
    defined = total > 0
    probs = np.zeros_like(mass)
    probs[defined] = mass[defined] / total[defined][:, None]
    return ObservedConditional(probs=probs, defined=defined)


def conditional_shift_distance(joint_s: DiscreteJoint, joint_t: DiscreteJoint) -> float:
    """Largest total-variation distance between the two observed conditionals."""
    if joint_s.shape != joint_t.shape:
        raise SchemaError("joints have different supports", [f"source{joint_s.shape}", f"target{joint_t.shape}"])
    cs, ct = observed_conditional(joint_s), observed_conditional(joint_t)
    both = cs.defined & ct.defined
    if not both.any():
        return 0.0
    tv = 0.5 * np.abs(cs.probs - ct.probs).sum(axis=2)
    return float(tv[both].max())


def random_joint_pair(rng: np.random.Generator, shape=(2, 2, 3), mar: bool = True) -> tuple[DiscreteJoint, DiscreteJoint]:
    """Two joints sharing ``P(xo, xu, y)`` with independently drawn missingness mechanisms.

    With ``mar=True`` each mechanism depends on ``xo`` only.
    """
    n_y, n_o, n_u = shape
    p_xo = rng.dirichlet(np.ones(n_o))
    p_xu = rng.dirichlet(np.ones(n_u), size=n_o)
    p_y = rng.dirichlet(np.ones(n_y), size=(n_o, n_u))

    def mechanism():
        if mar:
            return np.repeat(rng.uniform(0.05, 0.95, size=(n_o, 1)), n_u, axis=1)
        return rng.uniform(0.05, 0.95, size=(n_o, n_u))

    return (
        DiscreteJoint.from_factors(p_xo, p_xu, p_y, mechanism()),
        DiscreteJoint.from_factors(p_xo, p_xu, p_y, mechanism()),
    )


def self_censoring_fixture() -> tuple[DiscreteJoint, DiscreteJoint]:
    """Binary ``Y, X_o, X_u``; ``X_u = 1`` is hidden far more often in the target."""
    p_xo = np.array([0.5, 0.5])
    p_xu = np.array([[0.7, 0.3], [0.3, 0.7]])
    p_y = np.array([[[0.9, 0.1], [0.4, 0.6]], [[0.7, 0.3], [0.1, 0.9]]])
    source = np.array([[0.9, 0.8], [0.9, 0.8]])
    target = np.array([[0.9, 0.2], [0.9, 0.2]])
    return (
        DiscreteJoint.from_factors(p_xo, p_xu, p_y, source),
        DiscreteJoint.from_factors(p_xo, p_xu, p_y, target),
    )


@dataclass(frozen=True)
class MSEDecomposition:
    """``pooled = p0 * term0 + (1 - p0) * term1``; ``term*`` are stratum means (None if empty)."""

    p0: float
    term0: float | None
    term1: float | None
    pooled: float

    @property
    def weighted0(self) -> float:
        return 0.0 if self.term0 is None else self.p0 * self.term0

    @property
    def weighted1(self) -> float:
        return 0.0 if self.term1 is None else (1.0 - self.p0) * self.term1


def mse_decomposition(predictions, target_truth, R) -> MSEDecomposition:
    """Squared error of ``predictions`` against conditional means, split by missingness.

    A row belongs to the ``R = 0`` stratum when any of its indicators is 0.
    """
    pred = np.asarray(predictions, float).ravel()
    truth = np.asarray(target_truth, float).ravel()
    R = np.asarray(R)
    if R.ndim == 1:
        R = R[:, None]
    if not pred.shape == truth.shape == (R.shape[0],):
        raise ConfigError("predictions, truth and R must be aligned")
    sq = (pred - truth) ** 2
    incomplete = np.any(R == 0, axis=1)
    p0 = float(incomplete.mean())
    term0 = float(sq[incomplete].mean()) if incomplete.any() else None
    term1 = float(sq[~incomplete].mean()) if (~incomplete).any() else None
    return MSEDecomposition(p0=p0, term0=term0, term1=term1, pooled=float(sq.mean()))


@dataclass(frozen=True, eq=False)
class CompleteCaseFit:
    coefficients: np.ndarray
    standard_errors: np.ndarray
    n_complete: int
    columns: tuple[str, ...]

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.coefficients[0] + np.asarray(X, float) @ self.coefficients[1:]


def complete_case_fit(ds: MaskedDataset) -> CompleteCaseFit:
    """Ordinary least squares of ``Y`` on the covariates over rows with every indicator 1."""
    if ds.Y is None:
        raise ConfigError("complete-case fit needs the outcome")
    rows = np.all(ds.R == 1, axis=1)
    X = ds.Xstar[rows]
    y = ds.Y[rows]
    p = X.shape[1] + 1
    if rows.sum() <= p:
        raise ConfigError(f"only {int(rows.sum())} complete rows for {p} coefficients")
    A = np.hstack([np.ones((X.shape[0], 1)), X])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    s2 = resid @ resid / (A.shape[0] - p)
    cov = s2 * np.linalg.pinv(A.T @ A)
    return CompleteCaseFit(coef, np.sqrt(np.diag(cov)), int(rows.sum()), ds.columns)


@dataclass(frozen=True)
class Check:
    name: str
    measured: float
    threshold: str
    passed: bool


def run_verification(n_mar_pairs: int = 100, seed: int = 0) -> list[Check]:
    """The enumeration and decomposition checks, plus a short complete-case Monte Carlo."""
    from .rng import stream
    from .simgen import DagSpec, apply_mask, generate, sample_params

    rng = stream(seed, "verify", "mar")
    worst = max(conditional_shift_distance(*random_joint_pair(rng, mar=True)) for _ in range(n_mar_pairs))
    checks = [Check(f"MAR null over {n_mar_pairs} joint pairs", worst, "< 1e-10", worst < 1e-10)]
    sc = conditional_shift_distance(*self_censoring_fixture())
    checks.append(Check("self-censoring shift", sc, "> 0.01", sc > 0.01))

    drng = stream(seed, "verify", "decomposition")
    pred, truth = drng.normal(size=500), drng.normal(size=500)
    R = (drng.random((500, 2)) > 0.3).astype(int)
    d = mse_decomposition(pred, truth, R)
    gap = abs(d.p0 * d.term0 + (1 - d.p0) * d.term1 - d.pooled)
    checks.append(Check("MSE split additivity", gap, "< 1e-12", gap < 1e-12))

    cc = complete_case_trials(n_seeds=50, seed=seed)
    checks.append(Check("complete-case slopes, no R->Y (pooled |z|)", cc.pooled_slope_z, "< 3", cc.pooled_slope_z < 3))
    checks.append(Check("complete-case intercept bias detected, R->Y", cc.detected_fraction, ">= 0.8", cc.detected_fraction >= 0.8))
    return checks


@dataclass(frozen=True)
class CompleteCaseTrials:
    slope_z: np.ndarray  # (seeds, 3) standardized slope errors without R -> Y
    detected: np.ndarray  # (seeds,) intercept bias beyond 3 s.e. with R -> Y

    @property
    def pooled_slope_z(self) -> float:
        return float(np.abs(self.slope_z.mean(axis=0) * np.sqrt(self.slope_z.shape[0])).max())

    @property
    def detected_fraction(self) -> float:
        return float(self.detected.mean())


def complete_case_trials(n_seeds: int = 50, n: int = 5000, miss_rate: float = 0.3, seed: int = 0) -> CompleteCaseTrials:
    """Complete-case OLS under DAG 1 (slopes vs truth) and DAG 5 (intercept vs ``alpha_y``)."""
    from .rng import derive_seed
    from .simgen import DagSpec, apply_mask, calibrate_missingness_intercept, generate, sample_params

    zs, detected = [], []
    for s in range(n_seeds):
        for dag_id in (1, 5):
            dag = DagSpec(dag_id)
            cell = derive_seed(seed, "complete-case", s)
            params = sample_params(dag, 1, cell)
            params = params.replace(alpha_r=calibrate_missingness_intercept(params, dag, miss_rate, cell, n_mc=20_000))
            fit = complete_case_fit(apply_mask(generate(n, dag, params, cell)))
            if dag_id == 1:
                zs.append((fit.coefficients[1:] - params.hx.layers[0][0][:, 0]) / fit.standard_errors[1:])
            else:
                detected.append(abs(fit.coefficients[0] - params.alpha_y) > 3 * fit.standard_errors[0])
    return CompleteCaseTrials(slope_z=np.array(zs), detected=np.array(detected))
