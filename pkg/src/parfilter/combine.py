"""
Combining functions for restricted global nulls and GBHPC p-values.

All combiners operate along the last axis, so a 2-D array is treated as a
stack of independent p-value vectors (one per row).
"""

from __future__ import annotations

import itertools
from enum import Enum
from typing import Callable, Union

import numpy as np
from scipy import stats

from .errors import EnumerationLimitError, InvalidInputError

# clipping keeps log/norm quantiles finite
LOG_EPS = 1e-300
NORM_EPS = 1e-15
MAX_GROUP_SIZE = 25


class Combiner(str, Enum):
    BONFERRONI = "bonferroni"
    FISHER = "fisher"
    STOUFFER = "stouffer"
    SIMES = "simes"


CombinerLike = Union[Combiner, str, Callable[[np.ndarray], np.ndarray]]


def _as_pvalues(p) -> np.ndarray:
    arr = np.asarray(p, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.shape[-1] == 0:
        raise InvalidInputError("p-value vector must be nonempty")
    if np.isnan(arr).any():
        raise InvalidInputError("p-values must not be NaN")
    if (arr < 0).any() or (arr > 1).any():
        raise InvalidInputError("p-values must lie in [0, 1]")
    return arr


def _scalar_or_array(out: np.ndarray):
    return float(out) if out.ndim == 0 else out


def combine_bonferroni(p):
    """(l * min p) capped at 1."""
    arr = _as_pvalues(p)
    ell = arr.shape[-1]
    return _scalar_or_array(np.minimum(ell * arr.min(axis=-1), 1.0))


def combine_fisher(p):
    """Chi-squared(2l) survival function of -2 sum log p."""
    arr = _as_pvalues(p)
    ell = arr.shape[-1]
    stat = -2.0 * np.log(np.clip(arr, LOG_EPS, 1.0)).sum(axis=-1)
    return _scalar_or_array(np.clip(stats.chi2.sf(stat, 2 * ell), 0.0, 1.0))


def combine_stouffer(p):
    """1 - Phi(sum Phi^{-1}(1 - p) / sqrt(l))."""
    arr = _as_pvalues(p)
    ell = arr.shape[-1]
    z = stats.norm.isf(np.clip(arr, NORM_EPS, 1.0 - NORM_EPS)).sum(axis=-1)
    return _scalar_or_array(np.clip(stats.norm.sf(z / np.sqrt(ell)), 0.0, 1.0))


def combine_simes(p):
    """min_j l * p_(j) / j."""
    arr = _as_pvalues(p)
    ell = arr.shape[-1]
    ranks = np.arange(1, ell + 1)
    out = (ell * np.sort(arr, axis=-1) / ranks).min(axis=-1)
    return _scalar_or_array(np.minimum(out, 1.0))


_BUILTIN = {
    Combiner.BONFERRONI: combine_bonferroni,
    Combiner.FISHER: combine_fisher,
    Combiner.STOUFFER: combine_stouffer,
    Combiner.SIMES: combine_simes,
}


def get_combiner(combiner: CombinerLike) -> tuple[Callable, bool]:
    """Resolve a combiner spec to ``(function, is_builtin_symmetric)``."""
    if callable(combiner) and not isinstance(combiner, (str, Combiner)):
        return combiner, False
    try:
        key = Combiner(str(combiner.value if isinstance(combiner, Combiner) else combiner).lower())
    except ValueError:
        raise InvalidInputError(
            f"unknown combiner {combiner!r}; expected one of "
            f"{[c.value for c in Combiner]}"
        ) from None
    return _BUILTIN[key], True


def _check_level(u: int, ell: int) -> None:
    if not 1 <= u <= ell:
        raise InvalidInputError(f"replicability level u={u} outside [1, {ell}]")
    if ell > MAX_GROUP_SIZE:
        raise EnumerationLimitError(
            f"group size {ell} exceeds the enumeration limit of {MAX_GROUP_SIZE}"
        )


def gbhpc_enumerate(p, u: int, combiner: CombinerLike = Combiner.STOUFFER) -> float:
    """GBHPC p-value by explicit enumeration of all (l-u+1)-subsets."""
    arr = _as_pvalues(p)
    if arr.ndim != 1:
        raise InvalidInputError("gbhpc_enumerate expects a single p-value vector")
    ell = arr.size
    _check_level(u, ell)
    func, _ = get_combiner(combiner)
    size = ell - u + 1
    subsets = np.array(list(itertools.combinations(range(ell), size)))
    values = np.asarray(func(arr[subsets]), dtype=float).reshape(-1)
    return float(values.max())


def gbhpc(p, u: int, combiner: CombinerLike = Combiner.STOUFFER) -> float:
    """
    Generalized Benjamini-Heller partial-conjunction p-value.

    Maximum of the combined p-value over all subsets of size ``l - u + 1``.
    For the four built-in combiners (symmetric and non-decreasing) the maximum
    is attained at the ``l - u + 1`` largest p-values, which is what gets
    evaluated; custom callables fall back to full enumeration.
    """
    arr = _as_pvalues(p)
    if arr.ndim != 1:
        raise InvalidInputError("gbhpc expects a single p-value vector; use gbhpc_rows")
    ell = arr.size
    _check_level(u, ell)
    func, symmetric = get_combiner(combiner)
    if not symmetric:
        return gbhpc_enumerate(arr, u, func)
    top = np.sort(arr)[u - 1:]
    if top.size == 1:
        return float(top[0])
    return float(func(top))


def gbhpc_rows(P, u, combiner: CombinerLike = Combiner.STOUFFER) -> np.ndarray:
    """Row-wise GBHPC p-values; ``u`` may be a scalar or one level per row."""
    arr = _as_pvalues(P)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    m, ell = arr.shape
    levels = np.broadcast_to(np.asarray(u, dtype=int), (m,))
    func, symmetric = get_combiner(combiner)
    out = np.empty(m)
    if m == 0:
        return out
    for level in np.unique(levels):
        _check_level(int(level), ell)
        rows = levels == level
        if not symmetric:
            out[rows] = [gbhpc_enumerate(r, int(level), func) for r in arr[rows]]
            continue
        top = np.sort(arr[rows], axis=1)[:, level - 1:]
        out[rows] = top[:, 0] if top.shape[1] == 1 else func(top)
    return out
