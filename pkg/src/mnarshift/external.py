"""Loading a two-domain tabular dataset into source/target masked datasets.

Categorical covariates are one-hot expanded (first level dropped); a
missing categorical value masks all of its indicator columns.  The
target outcome is returned separately so it can be kept away from the
imputers and the adaptation step.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import ConfigError, SchemaError
from .simgen import MaskedDataset

COLUMN_TYPES = ("real", "binary", "categorical")


@dataclass(frozen=True)
class ExternalSchema:
    columns: dict[str, str]
    outcome: str
    domain: str
    na_token: str = ""
    source_level: str | None = None
    target_level: str | None = None

    def __post_init__(self):
        if not self.columns:
            raise ConfigError("schema needs at least one covariate")
        bad = {k: v for k, v in self.columns.items() if v not in COLUMN_TYPES}
        if bad:
            raise ConfigError(f"unknown column types {bad}; allowed {COLUMN_TYPES}")
        if self.outcome in self.columns or self.domain in self.columns:
            raise ConfigError("outcome and domain columns cannot also be covariates")

    @classmethod
    def from_dict(cls, d: dict) -> "ExternalSchema":
        return cls(**d)


@dataclass(frozen=True, eq=False)
class ExternalData:
    source: MaskedDataset
    target: MaskedDataset
    target_labels: np.ndarray = field(repr=False)
    report: dict = field(default_factory=dict)


def _numeric(series: pd.Series, name: str, errors: list) -> pd.Series:
    out = pd.to_numeric(series, errors="coerce")
    bad = out.isna() & series.notna()
    if bad.any():
        errors.append(f"{name}: non-numeric values {sorted(series[bad].unique())[:5]}")
    return out


def _expand(df: pd.DataFrame, schema: ExternalSchema, errors: list):
    """Returns the covariate matrix, its column names, and the originating variable per column."""
    blocks, names, origin = [], [], []
    for col, kind in schema.columns.items():
        raw = df[col]
        if raw.isna().all():
            errors.append(f"{col}: every value is missing")
            continue
        if kind == "categorical":
            levels = sorted(raw.dropna().unique())
            for level in levels[1:]:
                v = (raw == level).astype(float)
                v[raw.isna()] = np.nan
                blocks.append(v.to_numpy())
                names.append(f"{col}={level}")
                origin.append(col)
            continue
        v = _numeric(raw, col, errors)
        if kind == "binary" and not set(v.dropna().unique()) <= {0.0, 1.0}:
            errors.append(f"{col}: binary column has values outside {{0, 1}}")
        blocks.append(v.to_numpy(dtype=float))
        names.append(col)
        origin.append(col)
    X = np.column_stack(blocks) if blocks else np.empty((len(df), 0))
    return X, tuple(names), origin


def _masked(X, names, maskable, Y, tag) -> MaskedDataset:
    R = (~np.isnan(X[:, list(maskable)])).astype(np.int8)
    return MaskedDataset(Xstar=X, R=R, maskable=maskable, Y=Y, domain_tag=tag, columns=names)


def load_external_csv(path, schema: ExternalSchema) -> ExternalData:
    df = pd.read_csv(path, dtype=str, keep_default_na=False, na_values=[schema.na_token])
    needed = [*schema.columns, schema.outcome, schema.domain]
    unknown = [c for c in needed if c not in df.columns]
    if unknown:
        raise SchemaError("columns not found in file", unknown)
    levels = sorted(df[schema.domain].dropna().unique())
    if len(levels) != 2:
        raise SchemaError("domain column must have exactly two levels", levels)
    src_level = schema.source_level or levels[0]
    tgt_level = schema.target_level or next(lv for lv in levels if lv != src_level)
    if {src_level, tgt_level} != set(levels):
        raise SchemaError("declared domain levels not present", [src_level, tgt_level])

    errors: list[str] = []
    X, names, origin = _expand(df, schema, errors)
    y = _numeric(df[schema.outcome], schema.outcome, errors)
    if y.isna().any():
        errors.append(f"{schema.outcome}: outcome has missing values")
    if errors:
        raise SchemaError("invalid external data", errors)
    if not X.shape[1]:
        raise SchemaError("no usable covariates", list(schema.columns))
    maskable = tuple(int(j) for j in np.flatnonzero(np.isnan(X).any(axis=0)))

    is_src = (df[schema.domain] == src_level).to_numpy()
    y = y.to_numpy(dtype=float)
    source = _masked(X[is_src], names, maskable, y[is_src], "source")
    target = _masked(X[~is_src], names, maskable, None, "target")

    raw = df[list(schema.columns)]
    cell_missing = raw.isna().to_numpy()
    binary_outcome = set(np.unique(y)) <= {0.0, 1.0}
    report = {
        "n_source": int(is_src.sum()),
        "n_target": int((~is_src).sum()),
        "source_level": src_level,
        "target_level": tgt_level,
        "binary_outcome": binary_outcome,
        "prevalence": float(y.mean()) if binary_outcome else None,
        "missing_rate_source": float(cell_missing[is_src].mean()),
        "missing_rate_target": float(cell_missing[~is_src].mean()),
        "expanded_columns": list(names),
    }
    return ExternalData(source=source, target=target, target_labels=y[~is_src], report=report)
