"""
Competitor procedures applied to PC p-values, plus the two-study adaptive
procedure of Bogomolov and Heller and the oracle rule used in simulations.

Every procedure returns a sorted array of rejected feature indices.
"""

from __future__ import annotations

import numpy as np

from .combine import Combiner, CombinerLike, gbhpc_rows
from .errors import InvalidInputError
from .select import harmonic_number


def _check(p, q):
    arr = np.asarray(p, dtype=float).reshape(-1)
    if np.isnan(arr).any() or (arr < 0).any() or (arr > 1).any():
        raise InvalidInputError("p-values must lie in [0, 1]")
    if not 0 < q < 1:
        raise InvalidInputError(f"FDR target q={q} must lie in (0, 1)")
    return arr


def pc_pvalues(P, u: int, combiner: CombinerLike = Combiner.STOUFFER) -> np.ndarray:
    """GBHPC p-values for u/[n] replicability, one per row of P."""
    return gbhpc_rows(P, u, combiner)


def _step_up(p: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    # reject the k smallest, k = max{i : p_(i) <= thresholds[i-1]}
    if p.size == 0:
        return np.array([], dtype=int)
    order = np.argsort(p, kind="stable")
    below = np.flatnonzero(p[order] <= thresholds)
    if below.size == 0:
        return np.array([], dtype=int)
    return np.sort(order[: below[-1] + 1])


def bh(p, q: float) -> np.ndarray:
    """Benjamini-Hochberg step-up."""
    arr = _check(p, q)
    m = arr.size
    return _step_up(arr, q * np.arange(1, m + 1) / max(m, 1))


def by(p, q: float) -> np.ndarray:
    """Benjamini-Yekutieli: BH at q / H_m."""
    arr = _check(p, q)
    return bh(arr, q / harmonic_number(arr.size))


def storey_pi0(p, lambda_: float = 0.5) -> float:
    """Modified Storey estimator (1 + #{p > lambda}) / ((1 - lambda) m)."""
    arr = np.asarray(p, dtype=float).reshape(-1)
    if not 0 < lambda_ < 1:
        raise InvalidInputError(f"lambda={lambda_} must lie in (0, 1)")
    if arr.size == 0:
        return 1.0
    return float((1 + np.sum(arr > lambda_)) / ((1 - lambda_) * arr.size))


def adaptive_bh_storey(p, q: float, lambda_: float = 0.5) -> np.ndarray:
    """Plug-in adaptive step-up with thresholds i q / (m pi0_hat)."""
    arr = _check(p, q)
    m = arr.size
    if m == 0:
        return np.array([], dtype=int)
    pi0 = storey_pi0(arr, lambda_)
    return _step_up(arr, q * np.arange(1, m + 1) / (m * pi0))


def _cofilter(p, q, tau, second_stage):
    arr = _check(p, q)
    if not 0 < tau <= 1:
        raise InvalidInputError(f"filter threshold tau={tau} must lie in (0, 1]")
    kept = np.flatnonzero(arr <= tau)
    if kept.size == 0:
        return np.array([], dtype=int)
    inner = second_stage(np.clip(arr[kept] / tau, 0.0, 1.0))
    return np.sort(kept[inner])


def cofilter_bh(p, q: float, tau: float = None) -> np.ndarray:
    """Filter at tau, then BH on the selection-adjusted p-values p / tau."""
    tau = q if tau is None else tau
    return _cofilter(p, q, tau, lambda r: bh(r, q))


def adaptive_cofilter_bh(p, q: float, tau: float = None, lambda_: float = 0.5) -> np.ndarray:
    """CoFilter with the adaptive (Storey) step-up as the second stage."""
    tau = q if tau is None else tau
    return _cofilter(p, q, tau, lambda r: adaptive_bh_storey(r, q, lambda_))


def bogomolov_heller_adaptive(P, q: float, lambda1: float = 0.5, lambda2: float = 0.5,
                              w1: float = 0.5, w2: float = 0.5) -> np.ndarray:
    """
    Two-study adaptive replicability procedure.

    Each study's p-values are screened by the other study's threshold, the
    null proportions are estimated Storey-style on the screened sets, and the
    rejection count is the largest r that reproduces itself.
    """
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[1] != 2:
        raise InvalidInputError("the two-study procedure needs an m x 2 matrix")
    _check(P, q)
    p1, p2 = P[:, 0], P[:, 1]
    s1 = p2 <= min(w2 * q, lambda2)
    s2 = p1 <= min(w1 * q, lambda1)
    both = np.flatnonzero(s1 & s2)
    if both.size == 0:
        return np.array([], dtype=int)

    def pi0(p, s, lam):
        if lam >= 1:
            return 1.0
        return (1 + np.sum(p[s] > lam)) / ((1 - lam) * s.sum())

    pi1, pi2 = pi0(p1, s1, lambda1), pi0(p2, s2, lambda2)
    n1, n2 = s1.sum(), s2.sum()

    def passing(r):
        c1 = min(r * w1 * q / (n1 * pi1), lambda1)
        c2 = min(r * w2 * q / (n2 * pi2), lambda2)
        return both[(p1[both] <= c1) & (p2[both] <= c2)]

    for r in range(both.size, 0, -1):
        hit = passing(r)
        if hit.size == r:
            return hit
    return np.array([], dtype=int)


def oracle_rejections(psi, q: float) -> np.ndarray:
    """
    Reject the l smallest posterior null probabilities, with l the largest
    count whose running mean stays at or below q.
    """
    psi = np.asarray(psi, dtype=float).reshape(-1)
    if not 0 < q < 1:
        raise InvalidInputError(f"FDR target q={q} must lie in (0, 1)")
    if psi.size == 0:
        return np.array([], dtype=int)
    srt = np.sort(psi)
    means = np.cumsum(srt) / np.arange(1, psi.size + 1)
    ok = np.flatnonzero(means <= q)
    if ok.size == 0:
        return np.array([], dtype=int)
    cut = srt[ok[-1]]
    return np.flatnonzero(psi <= cut)
