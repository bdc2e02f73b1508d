from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, ImputationError
from ..simgen import MaskedDataset

METHODS = ("mean", "mice_norm", "mice_pmm", "mice_ri", "bayes")
BAYES_VARIANTS = ("z_model", "joint", "no_outcome", "no_missingness")


@dataclass(frozen=True)
class MCMCConfig:
    iterations: int = 2000
    burn_in: int = 500
    prior_sd: float = 2.5
    latent_dim: int = 3

    def __post_init__(self):
        if not self.iterations > self.burn_in >= 0:
            raise ConfigError(f"need iterations > burn_in >= 0, got {self.iterations}, {self.burn_in}")
        if not 1.0 <= self.prior_sd <= 5.0:
            raise ConfigError(f"prior_sd must lie in [1, 5], got {self.prior_sd}")
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be >= 1")


@dataclass(frozen=True)
class ImputerConfig:
    method: str = "mean"
    bayes_variant: str = "joint"
    leak: bool = False
    cycles: int = 10
    donors: int = 5
    mcmc: MCMCConfig = field(default_factory=MCMCConfig)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown imputation method {self.method!r}")
        if self.bayes_variant not in BAYES_VARIANTS:
            raise ConfigError(f"unknown Bayesian variant {self.bayes_variant!r}")
        if self.cycles < 1:
            raise ConfigError("cycles must be >= 1")
        if self.donors < 1:
            raise ConfigError("donors must be >= 1")

    @property
    def uses_outcome(self) -> bool:
        return self.method == "bayes" and self.bayes_variant in ("z_model", "joint")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ImputerConfig":
        d = dict(d)
        if "mcmc" in d and isinstance(d["mcmc"], dict):
            d["mcmc"] = MCMCConfig(**d["mcmc"])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class ImputedDataset:
    """Completed covariates plus the original mask."""

    Xhat: np.ndarray
    R: np.ndarray
    maskable: tuple[int, ...]
    columns: tuple[str, ...]
    source_config: ImputerConfig | None
    domain_tag: str = "source"
    diagnostics: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.Xhat.shape[0]

    @property
    def feature_names(self) -> tuple[str, ...]:
        return self.columns + tuple(f"R_{self.columns[j]}" for j in self.maskable)

    def features(self) -> np.ndarray:
        """Covariates followed by the mask columns."""
        return np.hstack([self.Xhat, self.R.astype(float)])


def finish(ds: MaskedDataset, Xhat: np.ndarray, cfg: ImputerConfig | None, **diagnostics) -> ImputedDataset:
    miss = ds.missing
    out = np.where(miss, Xhat, ds.Xstar)
    if not np.all(np.isfinite(out)):
        raise ImputationError("imputation left non-finite cells")
    return ImputedDataset(
        Xhat=out,
        R=ds.R.copy(),
        maskable=ds.maskable,
        columns=ds.columns,
        source_config=cfg,
        domain_tag=ds.domain_tag,
        diagnostics=diagnostics,
    )


def observed_means(ds: MaskedDataset) -> np.ndarray:
    miss = ds.missing
    counts = (~miss).sum(axis=0)
    empty = [ds.columns[j] for j in np.flatnonzero(counts == 0)]
    if empty:
        raise ImputationError(f"column(s) with no observed values: {', '.join(empty)}")
    return np.nanmean(ds.Xstar, axis=0)


def impute_mean(ds: MaskedDataset, cfg: ImputerConfig | None = None) -> ImputedDataset:
    means = observed_means(ds)
    return finish(ds, np.broadcast_to(means, ds.Xstar.shape), cfg or ImputerConfig("mean"))


def impute_oracle(ds: MaskedDataset, truth: np.ndarray) -> ImputedDataset:
    """Fill masked cells with their true values (benchmark only)."""
    return finish(ds, np.asarray(truth, dtype=float), None, oracle=True)


def sweep_order(ds: MaskedDataset) -> list[int]:
    """Incomplete columns by ascending missing fraction, ties by index."""
    frac = ds.missing.mean(axis=0)
    cols = [j for j in range(ds.p) if frac[j] > 0]
    return sorted(cols, key=lambda j: (frac[j], j))
