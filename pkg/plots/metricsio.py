"""Typed loading and schema validation for the experiment CSVs.

The harness documents both file formats in docs/metrics.md; everything here
checks inputs against that contract and fails loudly on drift instead of
plotting nonsense.
"""

from __future__ import annotations

import re

import pandas as pd


class SchemaError(Exception):
    """Input CSV does not match the documented metrics schema."""


METRICS_FIXED = ["phase", "episode", "iteration", "epsilon", "cost", "cost_norm", "reward"]
METRICS_FAMILIES = [
    "arrivals",
    "delivered",
    "reliability",
    "throughput",
    "target_throughput",
    "lambda",
    "mhat",
]
SUMMARY_FIXED = ["policy", "rate", "seed", "episodes", "cost_per_episode"]
SUMMARY_FAMILIES = ["reliability", "target", "rate", "throughput"]


def commodity_count(columns, family: str) -> int:
    """Number of commodities implied by columns like `<family>_c1`, `<family>_c2`."""
    pattern = re.compile(rf"^{re.escape(family)}_c(\d+)$")
    found = sorted(int(m.group(1)) for c in columns if (m := pattern.match(c)))
    if not found:
        raise SchemaError(f"no {family}_cN columns present")
    if found != list(range(1, len(found) + 1)):
        raise SchemaError(f"{family}_cN columns are not dense from c1: {found}")
    return len(found)


def _check_columns(df: pd.DataFrame, fixed: list[str], families: list[str], name: str) -> int:
    missing = [c for c in fixed if c not in df.columns]
    if missing:
        raise SchemaError(f"{name}: missing required columns {missing}")
    counts = {family: commodity_count(df.columns, family) for family in families}
    if len(set(counts.values())) != 1:
        raise SchemaError(f"{name}: inconsistent commodity column families {counts}")
    n = next(iter(counts.values()))
    expected = set(fixed) | {f"{fam}_c{i}" for fam in families for i in range(1, n + 1)}
    extra = [c for c in df.columns if c not in expected]
    if extra:
        raise SchemaError(f"{name}: unexpected columns {extra}")
    return n


def _coerce_numeric(df: pd.DataFrame, columns: list[str], name: str) -> None:
    for col in columns:
        try:
            df[col] = pd.to_numeric(df[col])
        except (ValueError, TypeError) as exc:
            raise SchemaError(f"{name}: column {col!r} is not numeric: {exc}") from None


def load_metrics(path) -> tuple[pd.DataFrame, int]:
    """metrics.csv as a typed frame plus its commodity count."""
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except FileNotFoundError:
        raise SchemaError(f"{path}: no such file") from None
    except pd.errors.EmptyDataError:
        raise SchemaError(f"{path}: empty file") from None
    n = _check_columns(df, METRICS_FIXED, METRICS_FAMILIES, str(path))
    if len(df) == 0:
        raise SchemaError(f"{path}: no data rows")
    bad_phases = set(df["phase"]) - {"train", "improve", "test"}
    if bad_phases:
        raise SchemaError(f"{path}: unknown phases {sorted(bad_phases)}")
    numeric = [c for c in df.columns if c != "phase"]
    df = df.replace("", None)
    _coerce_numeric(df, numeric, str(path))
    return df, n


def load_summary(path) -> tuple[pd.DataFrame, int]:
    """summary.csv as a typed frame plus its commodity count."""
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except FileNotFoundError:
        raise SchemaError(f"{path}: no such file") from None
    except pd.errors.EmptyDataError:
        raise SchemaError(f"{path}: empty file") from None
    n = _check_columns(df, SUMMARY_FIXED, SUMMARY_FAMILIES, str(path))
    if len(df) == 0:
        raise SchemaError(f"{path}: no data rows")
    numeric = [c for c in df.columns if c != "policy"]
    _coerce_numeric(df, numeric, str(path))
    if df["policy"].isna().any() or (df["policy"] == "").any():
        raise SchemaError(f"{path}: empty policy names")
    return df, n
