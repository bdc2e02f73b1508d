"""Chained-equation imputers (single imputation).

All three share the same sweep: start from column means, then for each
cycle visit the incomplete columns in ascending order of missingness and
refit that column on every other (current) column.  They differ in how a
refitted column's missing cells are filled:

* ``norm``: the regression's conditional mean.
* ``pmm``: the observed value of a donor whose predicted mean is among the
  ``donors`` closest to the recipient's.
* ``ri``: the conditional mean shifted by a per-column offset tied to a
  logistic model of the column's response indicator (see
  :func:`impute_mice_ri`).
"""
from __future__ import annotations

import numpy as np

from ..errors import ConvergenceError, ImputationError, SingularDesignError
from ..glm import irls_logistic, ridge_solve
from ..rng import stream
from ..simgen import MaskedDataset
from .base import ImputedDataset, ImputerConfig, finish, observed_means, sweep_order

# Penalty on the standardized indicator model; keeps near-separable
# self-censoring masks finite.
RI_LOGISTIC_RIDGE = 1.0


def _design(cur: np.ndarray, j: int, rows: np.ndarray) -> np.ndarray:
    others = [k for k in range(cur.shape[1]) if k != j]
    block = cur[:, others]
    keep = np.ptp(block[rows], axis=0) > 0 if rows.any() else np.zeros(len(others), bool)
    return np.hstack([np.ones((cur.shape[0], 1)), block[:, keep]])


def _fit_column(cur, j, obs):
    A = _design(cur, j, obs)
    try:
        beta = ridge_solve(A[obs], cur[obs, j])
    except SingularDesignError as exc:
        raise ImputationError(f"regression for column {j} failed: {exc}") from exc
    return A, beta


def _chained(ds: MaskedDataset, cfg: ImputerConfig, fill) -> np.ndarray:
    miss = ds.missing
    cur = np.where(miss, observed_means(ds), ds.Xstar)
    order = sweep_order(ds)
    for cycle in range(cfg.cycles):
        for j in order:
            obs = ~miss[:, j]
            A, beta = _fit_column(cur, j, obs)
            cur[miss[:, j], j] = fill(j, cycle, A, beta, obs, cur)
    return cur


def impute_mice_norm(ds: MaskedDataset, cfg: ImputerConfig | None = None, rng_seed: int = 0) -> ImputedDataset:
    cfg = cfg or ImputerConfig("mice_norm")

    def fill(j, cycle, A, beta, obs, cur):
        return A[~obs] @ beta

    return finish(ds, _chained(ds, cfg, fill), cfg)


def nearest_donors(pred_obs: np.ndarray, pred_mis: np.ndarray, k: int) -> np.ndarray:
    """Indices (into ``pred_obs``) of the ``k`` closest predicted means per recipient.

    Ties in distance go to the lower observed-row index.
    """
    n_obs = pred_obs.shape[0]
    order = np.argsort(pred_obs, kind="stable")
    sorted_pred = pred_obs[order]
    pos = np.searchsorted(sorted_pred, pred_mis)
    start = np.clip(pos - k, 0, max(n_obs - 2 * k, 0))
    window = start[:, None] + np.arange(min(2 * k, n_obs))[None, :]
    # the k-th smallest distance in the window bounds the true k-th distance;
    # widen to every observed row within it so ties are resolved by index
    kth = np.sort(np.abs(sorted_pred[window] - pred_mis[:, None]), axis=1)[:, k - 1]
    slack = 1e-12 * (np.abs(pred_mis) + kth) + 1e-300
    lo = np.searchsorted(sorted_pred, pred_mis - kth - slack, side="left")
    hi = np.searchsorted(sorted_pred, pred_mis + kth + slack, side="right")
    width = int((hi - lo).max())
    cand = np.minimum(lo[:, None] + np.arange(width)[None, :], n_obs - 1)
    cand_idx = order[cand]
    dist = np.abs(sorted_pred[cand] - pred_mis[:, None])
    dist[np.arange(width)[None, :] >= (hi - lo)[:, None]] = np.inf
    rank = np.lexsort((cand_idx, dist), axis=-1)
    return np.take_along_axis(cand_idx, rank[:, :k], axis=1)


def impute_mice_pmm(ds: MaskedDataset, cfg: ImputerConfig | None = None, rng_seed: int = 0) -> ImputedDataset:
    cfg = cfg or ImputerConfig("mice_pmm")
    miss = ds.missing
    for j in sweep_order(ds):
        n_obs = int((~miss[:, j]).sum())
        if cfg.donors > n_obs:
            raise ImputationError(f"donors={cfg.donors} exceeds {n_obs} observed rows in column {ds.columns[j]}")
    rng = stream(rng_seed, "mice_pmm")

    def fill(j, cycle, A, beta, obs, cur):
        pred = A @ beta
        donors = nearest_donors(pred[obs], pred[~obs], cfg.donors)
        pick = donors[np.arange(donors.shape[0]), rng.integers(0, cfg.donors, donors.shape[0])]
        return ds.Xstar[obs, j][pick]

    return finish(ds, _chained(ds, cfg, fill), cfg)


def _tilt_slope(gamma: float, var: float) -> tuple[float, float]:
    """Invert the logistic-normal attenuation ``gamma = b / sqrt(1 + pi b^2 var / 8)``.

    Returns ``b`` and ``db/dgamma``; ``gamma`` beyond the invertible range is
    shrunk to 99% of the bound.
    """
    k = np.pi * var / 8.0
    bound = 0.99 / np.sqrt(k)
    g = float(np.clip(gamma, -bound, bound))
    root = 1.0 - k * g * g
    return g / np.sqrt(root), root ** -1.5


def impute_mice_ri(ds: MaskedDataset, cfg: ImputerConfig | None = None, rng_seed: int = 0) -> ImputedDataset:
    """Chained regression with an indicator-linked offset for MNAR columns.

    Each visit to column ``j``:

    1. regress ``x_j`` on the other columns over its observed rows
       (prediction ``m``, residual variance ``s2``);
    2. fit a logistic model of the column's indicator on ``m`` (the
       completed covariates combined into the predicted mean) and undo the
       logistic-normal attenuation of its slope to get ``b``, the slope of
       the indicator on ``x_j`` itself;
    3. set ``offset = -b * s2`` and fill the missing cells with ``m + offset``.

    Step 3 is exponential tilting: under a logistic indicator model,
    ``p(x | R=0) / p(x | R=1)`` is proportional to ``exp(-b x)``, which turns
    a normal observed-data conditional into the same normal shifted by
    ``-b * s2``.  Step 2 assumes the indicator depends on the other columns
    only through ``x_j`` (self-censoring); under MCAR ``b`` is near 0.
    """
    cfg = cfg or ImputerConfig("mice_ri")
    r_col = {col: i for i, col in enumerate(ds.maskable)}
    offsets = {}
    offset_se = {}
    iterations = {}

    def fill(j, cycle, A, beta, obs, cur):
        pred = A @ beta
        resid = cur[obs, j] - pred[obs]
        dof = max(int(obs.sum()) - A.shape[1], 1)
        s2 = float(resid @ resid / dof)
        if j not in r_col or A.shape[1] == 1:
            return pred[~obs]
        centre, scale = pred.mean(), pred.std()
        if scale == 0:
            return pred[~obs]
        try:
            model = irls_logistic((pred - centre) / scale, ds.R[:, r_col[j]], ridge=RI_LOGISTIC_RIDGE)
        except ConvergenceError as exc:
            raise ImputationError(
                f"indicator model for {ds.columns[j]} failed in cycle {cycle + 1}: {exc}"
            ) from exc
        gamma = model.coefficients[1] / scale
        b, db = _tilt_slope(gamma, s2)
        offsets[j] = -b * s2
        offset_se[j] = float(s2 * db * np.sqrt(model.covariance[1, 1]) / scale)
        iterations[j] = model.n_iter
        return pred[~obs] + offsets[j]

    Xhat = _chained(ds, cfg, fill)
    return finish(
        ds,
        Xhat,
        cfg,
        offsets={ds.columns[j]: float(v) for j, v in offsets.items()},
        offset_se={ds.columns[j]: v for j, v in offset_se.items()},
        logistic_iterations={ds.columns[j]: v for j, v in iterations.items()},
    )
