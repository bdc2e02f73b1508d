"""Importance weighting from imputed data and weighted outcome models.

Pipeline for one source/target pair (both already imputed)::

    clf = fit_domain_classifier(src, tgt)          # P(target | X_o, X_u_hat, R)
    w = importance_weights(clf, src.features())    # odds p / (1 - p)
    model = fit_weighted_outcome(src, y_src, w)    # minimizes sum_i w_i * loss_i
    yhat = predict_target(model, tgt)
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, SchemaError, WeightError
from .glm import LogisticModel, add_intercept, conjugate_posterior, expit, irls_logistic
from .impute.base import ImputedDataset

__all__ = [
    "LogisticModel",
    "OutcomeModel",
    "WeightVector",
    "fit_domain_classifier",
    "fit_weighted_outcome",
    "importance_weights",
    "irls_logistic",
    "predict_target",
]

DEFAULT_CLIP_QUANTILE = 0.995


@dataclass(frozen=True, eq=False)
class WeightVector:
    w: np.ndarray
    clip_quantile: float | None = None

    def __post_init__(self):
        if not (np.all(np.isfinite(self.w)) and np.all(self.w > 0)):
            raise WeightError("importance weights must be finite and positive")

    def __len__(self) -> int:
        return self.w.shape[0]


@dataclass(frozen=True, eq=False)
class OutcomeModel:
    kind: str
    coefficients: np.ndarray
    columns: tuple[str, ...]
    active: np.ndarray = field(repr=False)
    fitted_on: str = "source"

    def predict(self, features: np.ndarray) -> np.ndarray:
        eta = self.coefficients[0] + np.asarray(features, float) @ self.coefficients[1:]
        return expit(eta) if self.kind == "weighted_logistic" else eta

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "columns": list(self.columns),
            "intercept": float(self.coefficients[0]),
            "coefficients": dict(zip(self.columns, map(float, self.coefficients[1:]))),
            "fitted_on": self.fitted_on,
        }


def _check_schema(a: ImputedDataset, b: ImputedDataset):
    if a.feature_names != b.feature_names:
        left, right = set(a.feature_names), set(b.feature_names)
        bad = sorted(left ^ right) or [x for x, y in zip(a.feature_names, b.feature_names) if x != y]
        raise SchemaError("source and target feature schemas differ", bad)


def fit_domain_classifier(src: ImputedDataset, tgt: ImputedDataset, **irls_kwargs) -> LogisticModel:
    """Logistic classifier of target (1) vs source (0) on jointly standardized features."""
    _check_schema(src, tgt)
    F = np.vstack([src.features(), tgt.features()])
    labels = np.concatenate([np.zeros(src.n), np.ones(tgt.n)])
    mean = F.mean(axis=0)
    scale = F.std(axis=0)
    scale[scale == 0] = 1.0
    fit = irls_logistic((F - mean) / scale, labels, **irls_kwargs)
    return replace(fit, feature_mean=mean, feature_scale=scale, columns=src.feature_names)


def importance_weights(model: LogisticModel, src_rows: np.ndarray, clip_quantile: float | None = None) -> WeightVector:
    """``w_i = p_i / (1 - p_i)`` with ``p_i`` the predicted target probability.

    With ``clip_quantile`` set, weights above that quantile are capped (and
    rows whose probability rounds to 1 are tolerated).
    """
    eta = model.decision_function(src_rows)
    p = expit(eta)
    saturated = p >= 1.0
    if saturated.any() and clip_quantile is None:
        raise WeightError(f"{int(saturated.sum())} source rows have target probability numerically 1")
    with np.errstate(over="ignore"):
        w = np.exp(eta)
    if clip_quantile is not None:
        if not 0.0 < clip_quantile < 1.0:
            raise ConfigError("clip_quantile must be in (0, 1)")
        finite = w[np.isfinite(w)]
        cap = np.quantile(finite, clip_quantile) if finite.size else np.finfo(float).max
        w = np.minimum(w, cap)
    return WeightVector(w=w, clip_quantile=clip_quantile)


def _as_weights(w) -> np.ndarray:
    return w.w if isinstance(w, WeightVector) else np.asarray(w, dtype=float)


def fit_weighted_outcome(
    src: ImputedDataset,
    y: np.ndarray,
    w: WeightVector | np.ndarray | None = None,
    kind: str = "weighted_linear",
    prior_sd: float = np.inf,
) -> OutcomeModel:
    """Minimize ``sum_i w_i * loss(y_i, g(x_i))`` over affine ``g`` on ``[X_hat, R]``.

    ``weighted_linear`` is the conjugate regression on ``sqrt(w)``-scaled
    rows (flat prior by default, i.e. weighted least squares);
    ``weighted_logistic`` is row-weighted IRLS.  Weights are rescaled to
    mean 1 first.  Design columns that are constant in the source get a
    zero coefficient.
    """
    F = src.features()
    y = np.asarray(y, dtype=float)
    n = F.shape[0]
    weights = np.ones(n) if w is None else _as_weights(w)
    if weights.shape != (n,) or y.shape != (n,):
        raise ConfigError(f"need one weight and one outcome per source row ({n})")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)) or weights.sum() <= 0:
        raise ConfigError("weights must be finite, non-negative and not all zero")
    # weights only matter up to scale; normalizing keeps the ridge floor scale-free
    weights = weights / weights.mean()
    active = np.ptp(F, axis=0) > 0
    coef = np.zeros(F.shape[1] + 1)
    idx = np.concatenate([[0], 1 + np.flatnonzero(active)])
    if kind == "weighted_linear":
        sw = np.sqrt(weights)
        A = add_intercept(F[:, active]) * sw[:, None]
        coef[idx] = conjugate_posterior(A, y * sw, prior_sd=prior_sd).mean
    elif kind == "weighted_logistic":
        coef[idx] = irls_logistic(F[:, active], y, row_weights=weights).coefficients
    else:
        raise ConfigError(f"unknown outcome model kind {kind!r}")
    return OutcomeModel(kind=kind, coefficients=coef, columns=src.feature_names, active=active)


def predict_target(model: OutcomeModel, tgt: ImputedDataset) -> np.ndarray:
    if tuple(model.columns) != tgt.feature_names:
        raise SchemaError("target schema does not match the outcome model", set(model.columns) ^ set(tgt.feature_names))
    return model.predict(tgt.features())


@dataclass(frozen=True, eq=False)
class AdaptationResult:
    classifier: LogisticModel
    weights: WeightVector
    outcome: OutcomeModel
    predictions: np.ndarray


def adapt(
    src: ImputedDataset,
    tgt: ImputedDataset,
    y_src: np.ndarray,
    kind: str = "weighted_linear",
    clip_quantile: float | None = None,
    prior_sd: float = np.inf,
) -> AdaptationResult:
    clf = fit_domain_classifier(src, tgt)
    w = importance_weights(clf, src.features(), clip_quantile=clip_quantile)
    model = fit_weighted_outcome(src, y_src, w, kind=kind, prior_sd=prior_sd)
    return AdaptationResult(classifier=clf, weights=w, outcome=model, predictions=predict_target(model, tgt))
