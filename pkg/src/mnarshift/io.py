"""CSV and JSON persistence.

CSV layout: header row, covariate columns, one ``R_<var>`` column per
maskable covariate, optional ``Y``, and a ``domain`` column.  Missing cells
are empty fields.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import SchemaError
from .impute.base import ImputedDataset, ImputerConfig
from .simgen import DagSpec, MaskedDataset, StructuralParams

OUTCOME = "Y"
DOMAIN = "domain"


def _frame(X, columns, R, maskable, Y, domain) -> pd.DataFrame:
    df = pd.DataFrame(X, columns=list(columns))
    for k, j in enumerate(maskable):
        df[f"R_{columns[j]}"] = np.asarray(R[:, k], dtype=int)
    if Y is not None:
        df[OUTCOME] = Y
    df[DOMAIN] = domain
    return df


def _write(df: pd.DataFrame, path):
    df.to_csv(path, index=False, na_rep="", float_format="%.17g", lineterminator="\n", encoding="utf-8")


def write_masked_csv(path, ds: MaskedDataset):
    _write(_frame(ds.Xstar, ds.columns, ds.R, ds.maskable, ds.Y, ds.domain_tag), path)


def write_imputed_csv(path, imp: ImputedDataset, Y: np.ndarray | None = None):
    _write(_frame(imp.Xhat, imp.columns, imp.R, imp.maskable, Y, imp.domain_tag), path)


def _parse(path):
    df = pd.read_csv(path, keep_default_na=False, na_values=[""], dtype=str)
    if DOMAIN not in df.columns:
        raise SchemaError("missing column", [DOMAIN])
    domains = df[DOMAIN].unique()
    if len(domains) != 1:
        raise SchemaError("expected a single domain per file", list(domains))
    mask_cols = [c for c in df.columns if c.startswith("R_")]
    columns = [c for c in df.columns if c not in mask_cols and c not in (OUTCOME, DOMAIN)]
    missing = [c for c in mask_cols if c[2:] not in columns]
    if missing:
        raise SchemaError("mask columns without a covariate", missing)
    maskable = tuple(columns.index(c[2:]) for c in mask_cols)
    X = df[columns].astype(float).to_numpy()
    R = df[mask_cols].astype(int).to_numpy().astype(np.int8) if mask_cols else np.ones((len(df), 0), np.int8)
    Y = df[OUTCOME].astype(float).to_numpy() if OUTCOME in df.columns else None
    return X, R, maskable, Y, str(domains[0]), tuple(columns)


def read_masked_csv(path) -> MaskedDataset:
    X, R, maskable, Y, domain, columns = _parse(path)
    return MaskedDataset(Xstar=X, R=R, maskable=maskable, Y=Y, domain_tag=domain, columns=columns)


def read_imputed_csv(path) -> tuple[ImputedDataset, np.ndarray | None]:
    X, R, maskable, Y, domain, columns = _parse(path)
    if np.isnan(X).any():
        raise SchemaError("completed file still has empty cells", [c for c, m in zip(columns, np.isnan(X).any(0)) if m])
    imp = ImputedDataset(Xhat=X, R=R, maskable=maskable, columns=columns, source_config=None, domain_tag=domain)
    return imp, Y


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_params(path, dag: DagSpec, params: StructuralParams, **extra):
    write_json(path, {"dag": dag.dag_id, "params": params.to_dict(), **extra})


def read_params(path) -> tuple[DagSpec, StructuralParams]:
    d = read_json(path)
    return DagSpec(int(d["dag"])), StructuralParams.from_dict(d["params"])


def imputer_manifest(cfg: ImputerConfig, seed: int, wall_time_s: float, **extra) -> dict:
    return {"method": cfg.method, "config": cfg.to_dict(), "seed": seed, "wall_time_s": wall_time_s, **extra}
