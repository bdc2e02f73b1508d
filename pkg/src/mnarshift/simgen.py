"""Synthetic data from the structural model behind the eight simulation DAGs.

Variables per row::

    Z_k ~ N(alpha_z[k], sigma_z)                                   k = 1..3
    X_k = alpha_x[k] + fz(Z)[k] + [x_chain] fx_k(X_1..X_{k-1}) + N(0, sigma_x)
    R_j ~ Bernoulli(expit(alpha_r[j] + gx(X)[j] + [r_chain] gr[j] . R_{<j}))
    Y   = alpha_y + hx(X) + [r_to_y] hm(R) + N(0, sigma_y)

``X_1`` is always observed; ``R`` holds the indicators of ``X_2`` and
``X_3`` (1 = observed).  The indicator logits take every covariate,
including the one they censor.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import CalibrationError, ConfigError
from .glm import expit
from .rng import derive_seed, stream

N_COVARIATES = 3
N_LATENT = 3
MASKABLE = (1, 2)
COLUMNS = ("X1", "X2", "X3")
NONLINEARITY_LEVELS = (1, 3, 5, 7)
DEFAULT_COEF_SCALE = 1.5
CALIBRATION_BRACKET = (-20.0, 20.0)
MAX_BRACKET_DOUBLINGS = 16


@dataclass(frozen=True)
class DagSpec:
    dag_id: int

    def __post_init__(self):
        if self.dag_id not in range(1, 9):
            raise ConfigError(f"dag_id must be in 1..8, got {self.dag_id}")

    @property
    def x_chain(self) -> bool:
        return self.dag_id in (2, 4, 6, 8)

    @property
    def r_chain(self) -> bool:
        return self.dag_id in (3, 4, 7, 8)

    @property
    def r_to_y(self) -> bool:
        return self.dag_id >= 5

    @classmethod
    def from_flags(cls, x_chain: bool, r_chain: bool, r_to_y: bool) -> "DagSpec":
        return cls(1 + int(x_chain) + 2 * int(r_chain) + 4 * int(r_to_y))


@dataclass(frozen=True, eq=False)
class MeanFn:
    """Feed-forward mean function: rectified hidden layers, affine output.

    ``layers`` is a sequence of ``(W, b)`` with ``W`` of shape (in, out).
    A single layer is an affine map.
    """

    layers: tuple[tuple[np.ndarray, np.ndarray], ...]
    activation: str = "relu"

    @property
    def kind(self) -> str:
        return "linear" if len(self.layers) == 1 else "mlp"

    @property
    def depth(self) -> int:
        return max(1, len(self.layers) - 1)

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].shape[1]

    def __call__(self, X: np.ndarray) -> np.ndarray:
        h = np.asarray(X, dtype=float)
        if h.ndim == 1:
            h = h[:, None]
        for W, b in self.layers[:-1]:
            h = h @ W + b
            if self.activation == "relu":
                h = np.maximum(h, 0.0)
        W, b = self.layers[-1]
        return h @ W + b

    def is_zero(self) -> bool:
        return all(not np.any(W) and not np.any(b) for W, b in self.layers)

    def weights(self) -> np.ndarray:
        """All free weights, flattened (output bias excluded: intercepts live elsewhere)."""
        parts = []
        for i, (W, b) in enumerate(self.layers):
            parts.append(W.ravel())
            if i < len(self.layers) - 1:
                parts.append(b.ravel())
        return np.concatenate(parts)

    def equals(self, other: "MeanFn") -> bool:
        return (
            self.activation == other.activation
            and len(self.layers) == len(other.layers)
            and all(
                np.array_equal(W1, W2) and np.array_equal(b1, b2)
                for (W1, b1), (W2, b2) in zip(self.layers, other.layers)
            )
        )

    def scaled(self, factor: float) -> "MeanFn":
        W, b = self.layers[-1]
        return MeanFn(self.layers[:-1] + ((W * factor, b * factor),), self.activation)

    @classmethod
    def affine(cls, W) -> "MeanFn":
        W = np.atleast_2d(np.asarray(W, dtype=float))
        return cls(((W, np.zeros(W.shape[1])),))

    @classmethod
    def zero(cls, in_dim: int, out_dim: int) -> "MeanFn":
        return cls.affine(np.zeros((in_dim, out_dim)))

    @classmethod
    def random(cls, rng, in_dim, out_dim, depth=1, width=None, scale=DEFAULT_COEF_SCALE) -> "MeanFn":
        if depth <= 1:
            return cls.affine(rng.normal(0.0, scale, size=(in_dim, out_dim)))
        width = width or depth
        layers = []
        d = in_dim
        for _ in range(depth):
            layers.append((rng.normal(0.0, scale, (d, width)), rng.normal(0.0, scale, width)))
            d = width
        layers.append((rng.normal(0.0, scale, (d, out_dim)), np.zeros(out_dim)))
        return cls(tuple(layers))

    def to_dict(self) -> dict:
        return {
            "activation": self.activation,
            "layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MeanFn":
        layers = tuple(
            (np.asarray(layer["W"], dtype=float).reshape(len(layer["W"]), -1), np.asarray(layer["b"], dtype=float))
            for layer in d["layers"]
        )
        return cls(layers, d.get("activation", "relu"))


@dataclass(frozen=True, eq=False)
class StructuralParams:
    alpha_z: np.ndarray
    alpha_x: np.ndarray
    alpha_r: np.ndarray
    alpha_y: float
    fz: MeanFn
    fx: tuple[MeanFn, ...]
    gx: MeanFn
    gr: np.ndarray
    hx: MeanFn
    hm: MeanFn
    sigma_z: float = 1.0
    sigma_x: float = 1.0
    sigma_y: float = 1.0
    coef_scale: float = DEFAULT_COEF_SCALE
    nonlinearity: int = 1

    def __post_init__(self):
        if min(self.sigma_z, self.sigma_x, self.sigma_y) <= 0:
            raise ConfigError("noise standard deviations must be positive")

    def replace(self, **changes) -> "StructuralParams":
        return dataclasses.replace(self, **changes)

    def same_outcome_mechanism(self, other: "StructuralParams") -> bool:
        return (
            self.alpha_y == other.alpha_y
            and self.sigma_y == other.sigma_y
            and self.hx.equals(other.hx)
            and self.hm.equals(other.hm)
        )

    def to_dict(self) -> dict:
        return {
            "alpha_z": self.alpha_z.tolist(),
            "alpha_x": self.alpha_x.tolist(),
            "alpha_r": self.alpha_r.tolist(),
            "alpha_y": float(self.alpha_y),
            "sigma_z": self.sigma_z,
            "sigma_x": self.sigma_x,
            "sigma_y": self.sigma_y,
            "coef_scale": self.coef_scale,
            "nonlinearity": self.nonlinearity,
            "fz": self.fz.to_dict(),
            "fx": [f.to_dict() for f in self.fx],
            "gx": self.gx.to_dict(),
            "gr": self.gr.tolist(),
            "hx": self.hx.to_dict(),
            "hm": self.hm.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StructuralParams":
        return cls(
            alpha_z=np.asarray(d["alpha_z"], float),
            alpha_x=np.asarray(d["alpha_x"], float),
            alpha_r=np.asarray(d["alpha_r"], float),
            alpha_y=float(d["alpha_y"]),
            fz=MeanFn.from_dict(d["fz"]),
            fx=tuple(MeanFn.from_dict(f) for f in d["fx"]),
            gx=MeanFn.from_dict(d["gx"]),
            gr=np.asarray(d["gr"], float).reshape(len(MASKABLE), len(MASKABLE)),
            hx=MeanFn.from_dict(d["hx"]),
            hm=MeanFn.from_dict(d["hm"]),
            sigma_z=float(d["sigma_z"]),
            sigma_x=float(d["sigma_x"]),
            sigma_y=float(d["sigma_y"]),
            coef_scale=float(d["coef_scale"]),
            nonlinearity=int(d["nonlinearity"]),
        )


@dataclass(frozen=True, eq=False)
class CompleteDataset:
    Z: np.ndarray
    X: np.ndarray
    R: np.ndarray
    Y: np.ndarray

    @property
    def n(self) -> int:
        return self.X.shape[0]


@dataclass(frozen=True, eq=False)
class MaskedDataset:
    """Factually observed data: ``Xstar`` carries NaN where a maskable cell is unobserved.

    ``R`` has one column per entry of ``maskable`` (the indices of the
    covariates that may be missing), 1 = observed.
    """

    Xstar: np.ndarray
    R: np.ndarray
    maskable: tuple[int, ...] = MASKABLE
    Y: np.ndarray | None = None
    domain_tag: str = "source"
    columns: tuple[str, ...] = COLUMNS

    def __post_init__(self):
        if self.domain_tag not in ("source", "target"):
            raise ConfigError(f"domain_tag must be source or target, got {self.domain_tag!r}")
        n, p = self.Xstar.shape
        if self.R.shape != (n, len(self.maskable)):
            raise ConfigError(f"R has shape {self.R.shape}, expected {(n, len(self.maskable))}")
        if len(self.columns) != p:
            raise ConfigError("column names do not match Xstar width")
        na = np.isnan(self.Xstar)
        expected = np.zeros_like(na)
        expected[:, list(self.maskable)] = self.R == 0
        if not np.array_equal(na, expected):
            raise ConfigError("NA cells must coincide with R == 0 on maskable columns")
        if self.Y is not None and self.Y.shape != (n,):
            raise ConfigError("Y must have one entry per row")

    @property
    def n(self) -> int:
        return self.Xstar.shape[0]

    @property
    def p(self) -> int:
        return self.Xstar.shape[1]

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.Xstar)

    @property
    def mask_columns(self) -> tuple[str, ...]:
        return tuple(f"R_{self.columns[j]}" for j in self.maskable)

    def without_outcome(self) -> "MaskedDataset":
        return dataclasses.replace(self, Y=None)

    def with_outcome(self, Y: np.ndarray) -> "MaskedDataset":
        return dataclasses.replace(self, Y=np.asarray(Y, dtype=float))


def _check_nonlinearity(nonlinearity: int):
    if nonlinearity not in NONLINEARITY_LEVELS:
        raise ConfigError(f"nonlinearity must be one of {NONLINEARITY_LEVELS}, got {nonlinearity}")


def sample_params(
    dag: DagSpec, nonlinearity: int, rng_seed: int, coef_scale: float = DEFAULT_COEF_SCALE
) -> StructuralParams:
    """Draw every intercept and mean-function weight i.i.d. N(0, coef_scale).

    Each component has its own stream, so e.g. changing ``nonlinearity``
    only changes ``fx``.
    """
    _check_nonlinearity(nonlinearity)

    def s(tag):
        return stream(rng_seed, "params", tag)

    alpha = s("alpha").normal(0.0, coef_scale, N_LATENT + N_COVARIATES + len(MASKABLE) + 1)
    alpha_z = alpha[:N_LATENT]
    alpha_x = alpha[N_LATENT:N_LATENT + N_COVARIATES]
    alpha_r = alpha[N_LATENT + N_COVARIATES:-1]
    alpha_y = float(alpha[-1])

    fz = MeanFn.random(s("fz"), N_LATENT, N_COVARIATES, scale=coef_scale)
    fx_rng = s("fx")
    fx = tuple(
        MeanFn.random(fx_rng, k, 1, depth=nonlinearity, width=nonlinearity, scale=coef_scale)
        for k in range(1, N_COVARIATES)
    )
    gx = MeanFn.random(s("gx"), N_COVARIATES, len(MASKABLE), scale=coef_scale)
    gr = np.tril(s("gr").normal(0.0, coef_scale, (len(MASKABLE), len(MASKABLE))), k=-1)
    hx = MeanFn.random(s("hx"), N_COVARIATES, 1, scale=coef_scale)
    hm = MeanFn.random(s("hm"), len(MASKABLE), 1, scale=coef_scale)
    if not dag.r_to_y:
        hm = MeanFn.zero(len(MASKABLE), 1)
    if not dag.r_chain:
        gr = np.zeros_like(gr)
    return StructuralParams(
        alpha_z=alpha_z,
        alpha_x=alpha_x,
        alpha_r=alpha_r,
        alpha_y=alpha_y,
        fz=fz,
        fx=fx,
        gx=gx,
        gr=gr,
        hx=hx,
        hm=hm,
        coef_scale=coef_scale,
        nonlinearity=nonlinearity,
    )


def redraw_missingness(params: StructuralParams, dag: DagSpec, rng_seed: int) -> StructuralParams:
    """Fresh ``gx`` (and ``gr`` for chained indicators) with everything else kept."""
    gx = MeanFn.random(stream(rng_seed, "params", "gx"), N_COVARIATES, len(MASKABLE), scale=params.coef_scale)
    gr = np.tril(stream(rng_seed, "params", "gr").normal(0.0, params.coef_scale, params.gr.shape), k=-1)
    if not dag.r_chain:
        gr = np.zeros_like(gr)
    return params.replace(gx=gx, gr=gr)


def _covariates(n, dag, params, seed):
    Z = params.alpha_z + params.sigma_z * stream(seed, "Z").standard_normal((n, N_LATENT))
    noise = params.sigma_x * stream(seed, "X").standard_normal((n, N_COVARIATES))
    X = params.alpha_x + params.fz(Z) + noise
    if dag.x_chain:
        for k in range(1, N_COVARIATES):
            X[:, k] += params.fx[k - 1](X[:, :k])[:, 0]
    return Z, X


def _indicator_logit(j, X, R, dag, params):
    t = params.alpha_r[j] + params.gx(X)[:, j]
    if dag.r_chain and j > 0:
        t = t + R[:, :j] @ params.gr[j, :j]
    return t


def generate(n: int, dag: DagSpec, params: StructuralParams, rng_seed: int) -> CompleteDataset:
    if n < 1:
        raise ConfigError("n must be >= 1")
    Z, X = _covariates(n, dag, params, rng_seed)
    U = stream(rng_seed, "R").random((n, len(MASKABLE)))
    R = np.zeros((n, len(MASKABLE)), dtype=np.int8)
    for j in range(len(MASKABLE)):
        R[:, j] = U[:, j] < expit(_indicator_logit(j, X, R, dag, params))
    Y = params.alpha_y + params.hx(X)[:, 0] + params.sigma_y * stream(rng_seed, "Y").standard_normal(n)
    if dag.r_to_y:
        Y = Y + params.hm(R.astype(float))[:, 0]
    return CompleteDataset(Z=Z, X=X, R=R, Y=Y)


def calibrate_missingness_intercept(
    params: StructuralParams,
    dag: DagSpec,
    target_rate: float,
    rng_seed: int,
    n_mc: int = 100_000,
    tol: float = 1e-7,
) -> np.ndarray:
    """Intercepts ``alpha_r`` giving marginal ``P(R_j = 0) = target_rate`` for each indicator.

    Bisection against a Monte Carlo estimate of ``mean(1 - expit(logit))``
    over ``n_mc`` simulated rows.  The bracket is ``CALIBRATION_BRACKET``
    shifted by minus the median of the rest of the logit, doubled until it
    contains the target.  Common random
    numbers make the estimate monotone in the intercept.  Indicators are
    calibrated in order because a chained indicator depends on its
    predecessors' draws.
    """
    if not 0.0 < target_rate < 1.0:
        raise ConfigError(f"target_rate must be in (0, 1), got {target_rate}")
    _, X = _covariates(n_mc, dag, params, derive_seed(rng_seed, "calibration"))
    U = stream(rng_seed, "calibration", "R").random((n_mc, len(MASKABLE)))
    alpha_r = np.array(params.alpha_r, dtype=float)
    R = np.zeros((n_mc, len(MASKABLE)))
    for j in range(len(MASKABLE)):
        base = _indicator_logit(j, X, R, dag, params.replace(alpha_r=np.zeros_like(alpha_r)))

        def miss_rate(a):
            return float(np.mean(expit(-(a + base))))

        centre = -float(np.median(base))
        lo, hi = centre + CALIBRATION_BRACKET[0], centre + CALIBRATION_BRACKET[1]
        for _ in range(MAX_BRACKET_DOUBLINGS):
            if miss_rate(hi) <= target_rate <= miss_rate(lo):
                break
            half = hi - centre
            lo, hi = centre - 2 * half, centre + 2 * half
        else:
            raise CalibrationError(
                f"R_{COLUMNS[MASKABLE[j]]}",
                f"missingness rate {target_rate} not reachable with intercept in [{lo:.3g}, {hi:.3g}] "
                f"(achievable range {miss_rate(hi):.4f}..{miss_rate(lo):.4f})",
            )
        a_lo, a_hi = lo, hi
        for _ in range(200):
            mid = 0.5 * (a_lo + a_hi)
            if miss_rate(mid) > target_rate:
                a_lo = mid
            else:
                a_hi = mid
            if a_hi - a_lo < tol * max(1.0, abs(mid)):
                break
        alpha_r[j] = 0.5 * (a_lo + a_hi)
        R[:, j] = U[:, j] < expit(alpha_r[j] + base)
    return alpha_r


def apply_mask(complete: CompleteDataset, domain_tag: str = "source", keep_outcome: bool = True) -> MaskedDataset:
    Xstar = complete.X.copy()
    for j, col in enumerate(MASKABLE):
        Xstar[complete.R[:, j] == 0, col] = np.nan
    return MaskedDataset(
        Xstar=Xstar,
        R=complete.R.copy(),
        maskable=MASKABLE,
        Y=complete.Y.copy() if keep_outcome else None,
        domain_tag=domain_tag,
    )


@dataclass(frozen=True, eq=False)
class ShiftConfig:
    """Source and target structural parameters; the outcome mechanism must agree."""

    dag: DagSpec
    source: StructuralParams
    target: StructuralParams

    def __post_init__(self):
        if not self.source.same_outcome_mechanism(self.target):
            raise ConfigError("source and target outcome mechanisms differ (concept shift is not supported)")


class TargetTruth:
    """Evaluation-only record of the target domain.

    The outcome is released through :meth:`reveal_outcome`, which records
    why it was read; pipelines audit ``access_log`` to prove that
    non-leaking imputers never saw it.
    """

    def __init__(self, complete: CompleteDataset):
        self.X = complete.X
        self.Z = complete.Z
        self.R = complete.R
        self._Y = complete.Y
        self.access_log: list[str] = []

    def reveal_outcome(self, purpose: str) -> np.ndarray:
        self.access_log.append(purpose)
        return self._Y.copy()


@dataclass(frozen=True, eq=False)
class DomainSplit:
    source: MaskedDataset
    target: MaskedDataset
    target_truth: TargetTruth = field(repr=False)
    source_truth: CompleteDataset = field(repr=False)


def split_domains(n_total: int, target_prop: float, shift: ShiftConfig, rng_seed: int) -> DomainSplit:
    """Draw ``n_total`` rows, ``round(target_prop * n_total)`` of them from the target mechanism."""
    if not 0.0 < target_prop < 1.0:
        raise ConfigError(f"target_prop must be in (0, 1), got {target_prop}")
    n_target = int(round(target_prop * n_total))
    n_source = n_total - n_target
    if n_target < 1 or n_source < 1:
        raise ConfigError("both domains need at least one row")
    src = generate(n_source, shift.dag, shift.source, derive_seed(rng_seed, "source"))
    tgt = generate(n_target, shift.dag, shift.target, derive_seed(rng_seed, "target"))
    return DomainSplit(
        source=apply_mask(src, "source"),
        target=apply_mask(tgt, "target", keep_outcome=False),
        target_truth=TargetTruth(tgt),
        source_truth=src,
    )


def make_shift(
    dag: DagSpec,
    nonlinearity: int,
    source_rate: float,
    target_rate: float,
    rng_seed: int,
    covariate_shift: float = 0.0,
    calibration_seed: int | None = None,
) -> ShiftConfig:
    """Missingness-shift pair: shared covariate and outcome mechanism, separate ``gx``.

    The target's indicator weights are redrawn; each domain's intercepts are
    calibrated to its own missingness rate.  ``covariate_shift`` adds a
    constant to every target covariate intercept.
    """
    base = sample_params(dag, nonlinearity, rng_seed)
    target = redraw_missingness(base, dag, derive_seed(rng_seed, "target-missingness"))
    if covariate_shift:
        target = target.replace(alpha_x=target.alpha_x + covariate_shift)
    cal = rng_seed if calibration_seed is None else calibration_seed
    source = base.replace(alpha_r=calibrate_missingness_intercept(base, dag, source_rate, derive_seed(cal, "source")))
    target = target.replace(alpha_r=calibrate_missingness_intercept(target, dag, target_rate, derive_seed(cal, "target")))
    return ShiftConfig(dag=dag, source=source, target=target)


def toy_covariate_shift(n: int, x_mean: float, rng_seed: int, alpha=0.2, beta=(0.2, -0.5), sigma=1.0):
    """One-dimensional covariate-shift toy: ``x ~ N(x_mean, 1)``, quadratic mean, Gaussian noise."""
    rng = stream(rng_seed, "toy", x_mean)
    x = rng.normal(x_mean, 1.0, n)
    y = alpha + beta[0] * x + beta[1] * x**2 + rng.normal(0.0, sigma, n)
    return x, y
