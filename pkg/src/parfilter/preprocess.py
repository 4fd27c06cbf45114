"""Covariate preprocessing: natural cubic spline basis expansion."""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError


def spline_knots(values, df: int) -> np.ndarray:
    """df + 1 knots (boundaries included) at equally spaced quantiles."""
    x = np.asarray(values, dtype=float).reshape(-1)
    knots = np.quantile(x, np.linspace(0.0, 1.0, df + 1))
    if np.unique(knots).size < knots.size:
        raise InvalidInputError(
            f"{np.unique(x).size} distinct values cannot support {df + 1} distinct knots"
        )
    return knots


def spline_basis(values, df: int, knots=None) -> np.ndarray:
    """
    Natural cubic spline basis without the constant column.

    Uses the truncated-power form: the first column is x itself and the
    remaining df - 1 columns are differences of scaled truncated cubics,
    which are linear beyond the boundary knots. Cubic columns are divided
    by the squared knot range to keep them on the scale of x.
    """
    if df < 2:
        raise InvalidInputError(f"spline df must be at least 2, got {df}")
    x = np.asarray(values, dtype=float).reshape(-1)
    if not np.isfinite(x).all():
        raise InvalidInputError("spline input must be finite")
    kn = spline_knots(x, df) if knots is None else np.asarray(knots, dtype=float)
    if kn.size != df + 1:
        raise InvalidInputError(f"expected {df + 1} knots, got {kn.size}")
    scale = (kn[-1] - kn[0]) ** 2

    def d(k):
        last = kn[-1]
        return (np.maximum(x - kn[k], 0) ** 3 - np.maximum(x - last, 0) ** 3) / (last - kn[k])

    d_last = d(kn.size - 2)
    cols = [x] + [(d(k) - d_last) / scale for k in range(kn.size - 2)]
    return np.column_stack(cols)
