"""
ParFilter core: local PC p-values, FDP and null-proportion estimators, the
optimal threshold vector, the full procedure, and per-study post hoc FDR.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import weights as wts
from .combine import Combiner, CombinerLike, gbhpc_rows
from .config import TestingConfig, default_max_rep_config
from .errors import InvalidInputError, ModeMismatchError, NumericalError
from .select import SelectionResult, get_rule, harmonic_number

logger = logging.getLogger(__name__)

FEAS_SLACK = 1e-12
MAX_SWEEPS = 10_000

MODES = ("indep-adaptive", "indep-nonadaptive", "dependence")
WEIGHT_MODES = ("model-a", "model-b", "unit")
PI_MODES = ("one", "adaptive", "harmonic")


def local_pc_pvalues(P, config: TestingConfig, combiner: CombinerLike = Combiner.STOUFFER) -> np.ndarray:
    """m x K matrix whose column k is the GBHPC p-value over the studies in G_k at level u_ik."""
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape != (config.m, config.n):
        raise InvalidInputError(
            f"p-value matrix has shape {P.shape}, configuration expects ({config.m}, {config.n})"
        )
    out = np.empty((config.m, config.K))
    for k, group in enumerate(config.groups):
        out[:, k] = gbhpc_rows(P[:, list(group)], config.levels[:, k], combiner)
    return out


def pi_hat(mode: str, local_pc_col, in_s, nu_col, lambda_k: float):
    """
    Weighted null-proportion estimate for one group.

    Returns ``(value, flag)`` where ``flag`` is a warning string or None.
    ``in_s`` is a boolean mask of S_k; ``local_pc_col`` and ``nu_col`` are
    full-length columns.
    """
    in_s = np.asarray(in_s, dtype=bool)
    size = int(in_s.sum())
    if mode == "one":
        return 1.0, None
    if mode == "harmonic":
        return harmonic_number(max(size, 1)), None
    if mode != "adaptive":
        raise InvalidInputError(f"unknown null-proportion mode {mode!r}; expected {PI_MODES}")
    if not 0 < lambda_k < 1:
        raise InvalidInputError(f"adaptive estimator needs lambda in (0, 1), got {lambda_k}")
    if size == 0:
        return 1.0 / (1.0 - lambda_k), "empty selection set; adaptive estimate set to 1/(1-lambda)"
    p = np.asarray(local_pc_col, dtype=float)[in_s]
    nu = np.asarray(nu_col, dtype=float)[in_s]
    numer = nu.max() + nu[p > lambda_k].sum()
    return float(numer / ((1.0 - lambda_k) * size)), None


def _passes(local_pc, mask, nu, lambdas, t) -> np.ndarray:
    """m x K boolean: does feature i clear group k's threshold t_k."""
    out = mask & (nu > 0) & (local_pc <= lambdas)
    with np.errstate(invalid="ignore"):
        cut = nu * np.asarray(t, dtype=float)
    finite = np.isfinite(np.asarray(t, dtype=float))
    out[:, finite] &= local_pc[:, finite] <= cut[:, finite]
    return out


def rejection_set(t, local_pc, selection, nu, lambdas) -> np.ndarray:
    """Sorted indices of features clearing every group threshold."""
    mask = selection.mask if isinstance(selection, SelectionResult) else np.asarray(selection, bool)
    nu = nu.nu if isinstance(nu, wts.LocalWeights) else np.asarray(nu, dtype=float)
    passes = _passes(np.asarray(local_pc, dtype=float), mask, nu,
                     np.asarray(lambdas, dtype=float), t)
    return np.flatnonzero(passes.all(axis=1))


def fdp_hat(t_k: float, n_rejected: int, s_size: int, pi_k: float) -> float:
    """|S_k| * pi_k * t_k / (|R| v 1)."""
    return s_size * pi_k * t_k / max(n_rejected, 1)


def _exact_trial(c_k: float, r: int, size: int, pi_k: float, bound: float) -> float:
    """Largest float t <= c_k r whose estimated FDP at r rejections is <= bound exactly."""
    t = c_k * r
    while t > 0 and fdp_hat(t, r, size, pi_k) > bound:
        t = np.nextafter(t, 0.0)
    return float(t)


@dataclass
class ThresholdResult:
    t: np.ndarray
    iterations: int
    trace: list


def _step_up_count(ratios: np.ndarray, c: float, cap: float) -> int:
    """Largest r with ratio_(r) <= c r and c r <= cap (ratios sorted ascending)."""
    a = ratios.size
    if a == 0:
        return 0
    r = np.arange(1, a + 1)
    ok = (ratios <= c * r) & (c * r <= cap + FEAS_SLACK)
    hits = np.flatnonzero(ok)
    return int(hits[-1] + 1) if hits.size else 0


def compute_thresholds(local_pc, selection, nu, pis, config: TestingConfig, q: float,
                       lambdas=None) -> ThresholdResult:
    """
    Element-wise largest feasible threshold vector via coordinate sweeps.

    Each coordinate update maximizes t_k over [0, previous t_k] exactly: the
    FDP estimate is linear in t_k between jumps of |R|, so the maximizer is
    either the previous value (when it stays feasible) or c_k r for the
    largest achievable rejection count r, with c_k = w_k q / ((|S_k| v 1) pi_k).
    """
    P = np.asarray(local_pc, dtype=float)
    mask = selection.mask if isinstance(selection, SelectionResult) else np.asarray(selection, bool)
    nu = nu.nu if isinstance(nu, wts.LocalWeights) else np.asarray(nu, dtype=float)
    lam = config.lambdas if lambdas is None else np.asarray(lambdas, dtype=float)
    pis = np.asarray(pis, dtype=float)
    K = P.shape[1]
    sizes = np.maximum(mask.sum(axis=0), 1)
    c = config.weights * q / (sizes * pis)
    eligible = mask & (nu > 0) & (P <= lam)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(eligible, P / np.where(nu > 0, nu, 1.0), np.inf)

    t = np.full(K, np.inf)
    trace = [t.copy()]
    for sweep in range(1, MAX_SWEEPS + 1):
        previous = t.copy()
        for k in range(K):
            passes = _passes(P, mask, nu, lam, t)
            others = np.delete(passes, k, axis=1).all(axis=1) if K > 1 else np.ones(P.shape[0], bool)
            active = others & eligible[:, k]
            cap = t[k]
            if np.isfinite(cap):
                n_rej = int((active & (P[:, k] <= nu[:, k] * cap)).sum())
                if fdp_hat(cap, n_rej, sizes[k], pis[k]) <= config.weights[k] * q + FEAS_SLACK:
                    continue
            ratios = np.sort(ratio[active, k])
            r = _step_up_count(ratios, c[k], cap)
            # the sorted ratios may disagree with the exact p <= nu t rule by one ulp
            bound = config.weights[k] * q
            while r > 1:
                t_try = _exact_trial(c[k], r, sizes[k], pis[k], bound)
                if int((active & (P[:, k] <= nu[:, k] * t_try)).sum()) >= r:
                    break
                r -= 1
            t[k] = _exact_trial(c[k], max(r, 1), sizes[k], pis[k], bound)
            if t[k] > cap:
                t[k] = cap
        trace.append(t.copy())
        if np.array_equal(t, previous):
            return ThresholdResult(t, sweep, trace)
    raise NumericalError(f"threshold search did not settle after {MAX_SWEEPS} sweeps")


@dataclass
class RejectionReport:
    rejected: np.ndarray
    t_hat: np.ndarray
    selection: SelectionResult
    weights: wts.LocalWeights
    pi_hat: np.ndarray
    local_pc: np.ndarray
    lambdas: np.ndarray
    config: TestingConfig
    mode: str
    weight_mode: str
    pi_mode: str
    q: float
    combiner: str
    iterations: int
    trace: list = field(default_factory=list, repr=False)
    warnings: list = field(default_factory=list)

    @property
    def n_rejected(self) -> int:
        return int(self.rejected.size)

    @property
    def rejected_mask(self) -> np.ndarray:
        out = np.zeros(self.config.m, dtype=bool)
        out[self.rejected] = True
        return out

    @property
    def nu(self) -> np.ndarray:
        return self.weights.nu

    def fdp_hats(self) -> np.ndarray:
        sizes = np.maximum(self.selection.sizes, 1)
        return sizes * self.pi_hat * self.t_hat / max(self.n_rejected, 1)


def check_invariants(report: RejectionReport) -> None:
    """Feasibility, self-consistency and the fixed-point identity; raises NumericalError."""
    cfg = report.config
    q = report.q
    sizes = np.maximum(report.selection.sizes, 1)
    bound = cfg.weights * q
    if not np.isfinite(report.t_hat).all() or (report.t_hat < 0).any():
        raise NumericalError(f"threshold vector {report.t_hat} is not finite and non-negative")
    fdp = report.fdp_hats()
    if (fdp > bound + FEAS_SLACK).any():
        raise NumericalError(f"estimated FDPs {fdp} exceed group budgets {bound}")
    R = report.rejected
    n_rej = max(R.size, 1)
    if R.size:
        if not report.selection.mask[R].all():
            raise NumericalError("a rejected feature lies outside some selection set")
        limit = report.nu[R] * n_rej * bound / (sizes * report.pi_hat)
        if (report.local_pc[R] > limit * (1 + 1e-12) + FEAS_SLACK).any():
            raise NumericalError("self-consistency violated by a rejected feature")
        expected = R.size * bound / (sizes * report.pi_hat)
        if not np.allclose(report.t_hat, expected, rtol=1e-12, atol=FEAS_SLACK):
            raise NumericalError(
                f"threshold {report.t_hat} differs from fixed-point value {expected}"
            )


def resolve_mode(mode: str, weight_mode: str, lambdas, allow_no_guarantee: bool = False):
    """
    Map (mode, weight mode) to (pi mode, lambdas), refusing combinations
    that lose the FDR guarantee.
    """
    if mode not in MODES:
        raise InvalidInputError(f"unknown mode {mode!r}; expected one of {MODES}")
    if weight_mode not in WEIGHT_MODES:
        raise InvalidInputError(f"unknown weight mode {weight_mode!r}; expected one of {WEIGHT_MODES}")
    lam = np.asarray(lambdas, dtype=float)
    if mode == "dependence":
        if weight_mode == "model-a" and not allow_no_guarantee:
            raise ModeMismatchError(
                "dependence mode needs weights that ignore the p-values inside each group "
                "(model-b or unit); model-a weights carry no FDR guarantee under dependence. "
                "Pass allow_no_guarantee to run anyway."
            )
        return "harmonic", np.ones_like(lam)
    if weight_mode == "model-b" and not allow_no_guarantee:
        raise ModeMismatchError(
            f"{mode} mode needs weights trained on the non-selected rows of the same group "
            "(model-a or unit); model-b weights are only covered in dependence mode."
        )
    if mode == "indep-nonadaptive":
        return "one", np.ones_like(lam)
    if ((lam <= 0) | (lam >= 1)).any():
        raise ModeMismatchError(
            f"indep-adaptive mode needs every lambda_k strictly between 0 and 1, got {lam.tolist()}"
        )
    return "adaptive", lam


def parfilter(P, X=None, config: Optional[TestingConfig] = None, q: float = 0.05,
              mode: str = "indep-adaptive", weight_mode: str = "model-a",
              combiner: CombinerLike = Combiner.STOUFFER, selection_rule="threshold",
              allow_no_guarantee: bool = False, seed: int = wts.FIT_SEED) -> RejectionReport:
    """
    Run the ParFilter at replicability FDR target ``q``.

    ``config`` defaults to the maximum-replicability configuration (u = n).
    ``mode`` fixes the null-proportion estimator and tuning values:
    ``indep-adaptive`` (adaptive estimate, lambda from the configuration),
    ``indep-nonadaptive`` (estimate 1, lambda 1) or ``dependence``
    (harmonic estimate, lambda 1).
    """
    P = np.asarray(P, dtype=float)
    if P.ndim != 2:
        raise InvalidInputError("P must be an m x n matrix")
    if np.isnan(P).any() or (P < 0).any() or (P > 1).any():
        raise InvalidInputError("p-values must lie in [0, 1]")
    if not 0 < q < 1:
        raise InvalidInputError(f"FDR target q={q} must lie in (0, 1)")
    m, n = P.shape
    if config is None:
        config = default_max_rep_config(n, m)
    pi_mode, lambdas = resolve_mode(mode, weight_mode, config.lambdas, allow_no_guarantee)
    rule = get_rule(selection_rule)
    warnings = []
    if allow_no_guarantee and (
        (mode == "dependence" and weight_mode == "model-a")
        or (mode != "dependence" and weight_mode == "model-b")
    ):
        warnings.append(f"{weight_mode} weights in {mode} mode: no FDR guarantee")
    cfg = config.with_lambdas(lambdas)

    local = local_pc_pvalues(P, cfg, combiner)
    selection = rule(local, cfg, q)
    if not selection.compliant:
        if not allow_no_guarantee:
            raise ModeMismatchError(
                f"selection rule {selection.rule!r} may use p-values inside the group it selects for"
            )
        warnings.append(f"selection rule {selection.rule!r} is not guarantee-compliant")
    if weight_mode == "model-a":
        nu = wts.local_pc_weights_a(P, X, selection, cfg, seed=seed)
    elif weight_mode == "model-b":
        nu = wts.local_pc_weights_b(P, X, selection, cfg, seed=seed)
    else:
        nu = wts.unit_weights(selection)
    warnings.extend(nu.flags)

    pis = np.empty(cfg.K)
    for k in range(cfg.K):
        pis[k], flag = pi_hat(pi_mode, local[:, k], selection.mask[:, k], nu.nu[:, k], lambdas[k])
        if flag:
            warnings.append(f"group {k}: {flag}")
    for k in np.flatnonzero(selection.sizes == 0):
        warnings.append(f"group {k}: selection set is empty, nothing can be rejected")

    thr = compute_thresholds(local, selection, nu, pis, cfg, q, lambdas)
    R = rejection_set(thr.t, local, selection, nu, lambdas)
    comb = combiner.value if isinstance(combiner, Combiner) else str(combiner)
    report = RejectionReport(
        rejected=R, t_hat=thr.t, selection=selection, weights=nu, pi_hat=pis,
        local_pc=local, lambdas=np.asarray(lambdas, dtype=float), config=cfg, mode=mode,
        weight_mode=weight_mode, pi_mode=pi_mode, q=q, combiner=comb,
        iterations=thr.iterations, trace=thr.trace, warnings=warnings,
    )
    check_invariants(report)
    for w in warnings:
        logger.warning(w)
    return report


def posthoc_tau(p_col, in_s, rejected_mask, q_j: float):
    """
    Largest candidate tau (a study-j p-value in S_k(j)) meeting
    |S| tau / (|R cap {p <= tau}| v 1) <= q_j, or None.
    """
    p = np.asarray(p_col, dtype=float)
    cand = np.unique(p[np.asarray(in_s, bool)])
    size = int(np.asarray(in_s, bool).sum())
    pr = np.sort(p[np.asarray(rejected_mask, bool)])
    counts = np.searchsorted(pr, cand, side="right")
    ok = size * cand / np.maximum(counts, 1) <= q_j
    hits = np.flatnonzero(ok)
    return float(cand[hits[-1]]) if hits.size else None


def posthoc_study(report: RejectionReport, P, j: int, q_j: float) -> np.ndarray:
    """
    Features in the ParFilter rejection set declared non-null in study ``j``.

    Controls the study-j FDR among the PC rejections at ``q_j``; with
    singleton groups this is only informative when q_j <= w_k(j) q.
    """
    P = np.asarray(P, dtype=float)
    cfg = report.config
    if not 0 <= j < cfg.n:
        raise InvalidInputError(f"study index {j} outside [0, {cfg.n - 1}]")
    if not 0 < q_j < 1:
        raise InvalidInputError(f"q_j={q_j} must lie in (0, 1)")
    if report.n_rejected == 0:
        return np.array([], dtype=int)
    k = cfg.group_of(j)
    tau = posthoc_tau(P[:, j], report.selection.mask[:, k], report.rejected_mask, q_j)
    if tau is None:
        return np.array([], dtype=int)
    R = report.rejected
    return R[P[R, j] <= tau]
