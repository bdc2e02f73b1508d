"""Evaluation measures.

Undefined values (no masked cells, a single outcome class, an empty
stratum) are returned as ``None`` rather than NaN.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np
from scipy import stats

from .errors import ConfigError


@dataclass(frozen=True)
class MetricReport:
    target_rmse: float
    imp_rmse_source: float | None
    imp_rmse_target: float | None
    n_masked_source: int
    n_masked_target: int
    brier: float | None = None
    auroc: float | None = None


def _pair(pred, truth):
    pred = np.asarray(pred, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if pred.shape != truth.shape:
        raise ConfigError(f"length mismatch: {pred.shape[0]} vs {truth.shape[0]}")
    if pred.size == 0:
        raise ConfigError("need at least one value")
    return pred, truth


def rmse(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.sqrt(np.mean((truth - pred) ** 2)))


def imputation_rmse(imputed, truth, R, maskable=None) -> float | None:
    """RMSE over masked cells only (pooled over cells, not averaged per column).

    ``R`` is either full width (same shape as ``imputed``) or has one column
    per entry of ``maskable``.
    """
    imputed = np.asarray(imputed, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if imputed.shape != truth.shape:
        raise ConfigError(f"shape mismatch: {imputed.shape} vs {truth.shape}")
    R = np.asarray(R)
    if R.shape != imputed.shape:
        if maskable is None or R.shape != (imputed.shape[0], len(maskable)):
            raise ConfigError("R does not match the covariate matrix")
        full = np.ones(imputed.shape, dtype=R.dtype)
        full[:, list(maskable)] = R
        R = full
    masked = R == 0
    if not masked.any():
        return None
    return float(np.sqrt(np.mean((imputed[masked] - truth[masked]) ** 2)))


def _labels(labels):
    labels = np.asarray(labels).ravel()
    if not np.all((labels == 0) | (labels == 1)):
        raise ConfigError("labels must be 0/1")
    return labels.astype(float)


def brier(probs, labels) -> float:
    probs, labels = _pair(probs, _labels(labels))
    if np.any((probs < 0) | (probs > 1)):
        raise ConfigError("probabilities must lie in [0, 1]")
    return float(np.mean((probs - labels) ** 2))


def auroc(scores, labels) -> float | None:
    """Mann-Whitney AUROC with midranks for ties."""
    scores, labels = _pair(scores, _labels(labels))
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = stats.rankdata(scores, method="average")
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True, eq=False)
class BinnedCurve:
    x_mean: np.ndarray
    y_mean: np.ndarray
    y_se: np.ndarray
    count: np.ndarray

    def spearman(self) -> float:
        return float(stats.spearmanr(self.x_mean, self.y_mean).statistic)

    def rows(self) -> list[dict]:
        return [
            {"bin": i, "x_mean": float(x), "y_mean": float(y), "y_se": float(s), "count": int(c)}
            for i, (x, y, s, c) in enumerate(zip(self.x_mean, self.y_mean, self.y_se, self.count))
        ]


def _field(row, name):
    if isinstance(row, Mapping):
        return row.get(name)
    return getattr(row, name, None)


def binned_error_curve(results: Iterable, x_field: str, y_field: str, bins: int = 20, x_min: float | None = None) -> BinnedCurve:
    """Equal-count bins of ``x_field`` with the mean ``y_field`` in each.

    Rows with a missing value in either field are skipped; with ``x_min``
    only rows with ``x > x_min`` are used.
    """
    if bins < 2:
        raise ConfigError("need at least 2 bins")
    xs, ys = [], []
    for row in results:
        x, y = _field(row, x_field), _field(row, y_field)
        if x is None or y is None or not (np.isfinite(x) and np.isfinite(y)):
            continue
        if x_min is not None and not x > x_min:
            continue
        xs.append(float(x))
        ys.append(float(y))
    if len(xs) < bins:
        raise ConfigError(f"{len(xs)} usable rows for {bins} bins")
    x = np.asarray(xs)
    y = np.asarray(ys)
    order = np.argsort(x, kind="stable")
    groups = np.array_split(order, bins)
    x_mean = np.array([x[g].mean() for g in groups])
    y_mean = np.array([y[g].mean() for g in groups])
    y_se = np.array([y[g].std(ddof=1) / np.sqrt(len(g)) if len(g) > 1 else np.nan for g in groups])
    count = np.array([len(g) for g in groups])
    return BinnedCurve(x_mean=x_mean, y_mean=y_mean, y_se=y_se, count=count)
