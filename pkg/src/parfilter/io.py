"""CSV ingestion and emission for p-value and covariate matrices."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import InvalidInputError


def _read_rows(path):
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InvalidInputError(f"{path}: cannot read ({exc.strerror})") from None
    rows = [r for r in rows if r]
    if not rows:
        raise InvalidInputError(f"{path}: file is empty")
    return path, rows[0], rows[1:]


def _parse_matrix(path, header, body, value_check=None):
    width = len(header)
    keys, values = [], np.empty((len(body), width - 1))
    seen = {}
    for r, row in enumerate(body, start=1):
        if len(row) != width:
            raise InvalidInputError(
                f"{path}: row {r} has {len(row)} fields, header has {width}"
            )
        key = row[0].strip()
        if key in seen:
            raise InvalidInputError(
                f"{path}: row {r}, column {header[0]}: duplicate feature {key!r} "
                f"(first seen at row {seen[key]})"
            )
        seen[key] = r
        keys.append(key)
        for c, txt in enumerate(row[1:], start=1):
            try:
                val = float(txt)
            except ValueError:
                raise InvalidInputError(
                    f"{path}: row {r}, column {header[c]}: cannot parse {txt!r} as a number"
                ) from None
            if value_check is not None:
                problem = value_check(val)
                if problem:
                    raise InvalidInputError(f"{path}: row {r}, column {header[c]}: {problem}")
            values[r - 1, c - 1] = val
    return keys, values


def _pvalue_problem(v: float):
    if math.isnan(v) or v < 0 or v > 1:
        return f"p-value {v!r} outside [0, 1]"
    return None


def _finite_problem(v: float):
    if not math.isfinite(v):
        return f"covariate {v!r} is not finite"
    return None


def read_pvalues(path):
    """Read ``feature,study_1,...,study_n``; returns (feature keys, m x n matrix)."""
    path, header, body = _read_rows(path)
    if len(header) < 2 or header[0].strip() != "feature":
        raise InvalidInputError(f"{path}: header must start with 'feature' followed by study columns")
    for c, name in enumerate(header[1:], start=1):
        if name.strip() != f"study_{c}":
            raise InvalidInputError(f"{path}: header column {c + 1} is {name!r}, expected 'study_{c}'")
    if not body:
        raise InvalidInputError(f"{path}: no data rows")
    return _parse_matrix(path, header, body, _pvalue_problem)


def read_covariates(path, features: Sequence[str]) -> np.ndarray:
    """Read ``feature,c_1,...,c_d`` and align rows to ``features``."""
    path, header, body = _read_rows(path)
    if len(header) < 2 or header[0].strip() != "feature":
        raise InvalidInputError(f"{path}: header must start with 'feature' followed by c_1..c_d")
    for c, name in enumerate(header[1:], start=1):
        if name.strip() != f"c_{c}":
            raise InvalidInputError(f"{path}: header column {c + 1} is {name!r}, expected 'c_{c}'")
    keys, values = _parse_matrix(path, header, body, _finite_problem)
    if len(keys) != len(features):
        raise InvalidInputError(
            f"{path}: {len(keys)} covariate rows but {len(features)} features in the p-value file"
        )
    index = {k: r for r, k in enumerate(keys)}
    out = np.empty((len(features), values.shape[1]))
    for i, key in enumerate(features):
        if key not in index:
            raise InvalidInputError(f"{path}: feature {key!r} (p-value row {i + 1}) has no covariate row")
        out[i] = values[index[key]]
    return out


def ingest(pvalue_csv, covariate_csvs: Optional[Mapping[int, str]] = None):
    """
    Load the p-value matrix and per-study covariates.

    ``covariate_csvs`` maps 0-based study index to a CSV path; studies
    without a file get a single all-zero column.
    """
    features, P = read_pvalues(pvalue_csv)
    m, n = P.shape
    covariate_csvs = dict(covariate_csvs or {})
    bad = [j for j in covariate_csvs if not 0 <= j < n]
    if bad:
        raise InvalidInputError(f"covariate file given for study {bad[0] + 1}, data has {n} studies")
    X = []
    for j in range(n):
        if j in covariate_csvs:
            X.append(read_covariates(covariate_csvs[j], features))
        else:
            X.append(np.zeros((m, 1)))
    return features, P, X


def _fmt(v: float) -> str:
    return repr(float(v))


def write_pvalues(path, features: Sequence[str], P) -> None:
    P = np.asarray(P, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature"] + [f"study_{j + 1}" for j in range(P.shape[1])])
        for key, row in zip(features, P):
            w.writerow([key] + [_fmt(v) for v in row])


def write_covariates(path, features: Sequence[str], X) -> None:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature"] + [f"c_{c + 1}" for c in range(X.shape[1])])
        for key, row in zip(features, X):
            w.writerow([key] + [_fmt(v) for v in row])
