"""Imputers for MNAR-masked covariates.

Use :func:`impute` to dispatch on :class:`ImputerConfig.method`; every
imputer returns an :class:`ImputedDataset` whose observed cells equal the
input exactly.
"""
from __future__ import annotations

from ..glm import conjugate_posterior
from ..simgen import MaskedDataset
from .base import (
    BAYES_VARIANTS,
    METHODS,
    ImputedDataset,
    ImputerConfig,
    MCMCConfig,
    impute_mean,
    impute_oracle,
    sweep_order,
)
from .bayes import gibbs_regression, impute_bayes
from .mice import impute_mice_norm, impute_mice_pmm, impute_mice_ri, nearest_donors


def impute(ds: MaskedDataset, cfg: ImputerConfig, rng_seed: int = 0) -> ImputedDataset:
    if cfg.method == "mean":
        return impute_mean(ds, cfg)
    if cfg.method == "mice_norm":
        return impute_mice_norm(ds, cfg, rng_seed)
    if cfg.method == "mice_pmm":
        return impute_mice_pmm(ds, cfg, rng_seed)
    if cfg.method == "mice_ri":
        return impute_mice_ri(ds, cfg, rng_seed)
    return impute_bayes(ds, cfg, rng_seed)


__all__ = [
    "BAYES_VARIANTS",
    "METHODS",
    "ImputedDataset",
    "ImputerConfig",
    "MCMCConfig",
    "conjugate_posterior",
    "gibbs_regression",
    "impute",
    "impute_bayes",
    "impute_mean",
    "impute_mice_norm",
    "impute_mice_pmm",
    "impute_mice_ri",
    "impute_oracle",
    "nearest_donors",
    "sweep_order",
]
