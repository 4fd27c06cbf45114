"""
Working model and local PC weights.

Per study j, the working model treats p_ij | x_ij as the two-group mixture

    f(p | x) = pi(x) + (1 - pi(x)) * (1 - k(x)) * p^(-k(x)),

with pi(x) = expit(zeta' (1, x)) the null probability and
k(x) = expit(beta' (1, x)) the skew of the beta alternative. The model is
only used to build weights; nothing downstream assumes it holds.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize
from scipy.special import expit, log_expit

from .combine import MAX_GROUP_SIZE
from .config import TestingConfig
from .errors import EnumerationLimitError, InvalidInputError
from .select import SelectionResult

P_FLOOR = 1e-300
PARAM_BOUND = 20.0
N_RESTARTS = 3
PURE_NULL_TOL = 1e-4
ZETA_INFLATION = 1.5
NORMALIZATION_TOL = 1e-9
FIT_SEED = 20240611


@dataclass(frozen=True)
class WorkingModelParams:
    zeta: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        zeta = np.array(self.zeta, dtype=float).reshape(-1)
        beta = np.array(self.beta, dtype=float).reshape(-1)
        if zeta.shape != beta.shape:
            raise InvalidInputError("zeta and beta must have the same length")
        if not (np.isfinite(zeta).all() and np.isfinite(beta).all()):
            raise InvalidInputError("working-model parameters must be finite")
        zeta.setflags(write=False)
        beta.setflags(write=False)
        object.__setattr__(self, "zeta", zeta)
        object.__setattr__(self, "beta", beta)

    @property
    def dim(self) -> int:
        return self.zeta.size - 1

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.zeta, self.beta])

    @classmethod
    def from_theta(cls, theta) -> "WorkingModelParams":
        theta = np.asarray(theta, dtype=float)
        half = theta.size // 2
        return cls(theta[:half], theta[half:])

    def scaled(self, zeta_factor: float) -> "WorkingModelParams":
        return WorkingModelParams(zeta_factor * self.zeta, self.beta)


@dataclass(frozen=True)
class FitResult:
    params: WorkingModelParams
    loglik: float
    converged: bool
    grad_norm: float
    at_boundary: bool
    fallback: bool
    n_obs: int
    flags: tuple = ()


def design(x, m: Optional[int] = None) -> np.ndarray:
    """Design matrix (1, x) with one row per feature."""
    if x is None:
        if m is None:
            raise InvalidInputError("need m when no covariates are given")
        return np.ones((m, 1))
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise InvalidInputError("covariates must be a vector or an m x d matrix")
    if not np.isfinite(arr).all():
        raise InvalidInputError("covariates must be finite")
    return np.column_stack([np.ones(arr.shape[0]), arr])


def _clip_p(p) -> np.ndarray:
    arr = np.asarray(p, dtype=float)
    if np.isnan(arr).any() or (arr < 0).any() or (arr > 1).any():
        raise InvalidInputError("p-values must lie in [0, 1]")
    return np.clip(arr, P_FLOOR, 1.0)


def _components(params: WorkingModelParams, p, Z):
    eta_z = Z @ params.zeta
    eta_b = Z @ params.beta
    k = expit(eta_b)
    logp = np.log(p)
    log_pi = log_expit(eta_z)
    log_alt = log_expit(-eta_z) + log_expit(-eta_b) - k * logp
    log_f = np.logaddexp(log_pi, log_alt)
    return eta_z, eta_b, k, logp, log_pi, log_alt, log_f


def mixture_density(params: WorkingModelParams, p, x=None) -> np.ndarray:
    """Working-model density f(p | x); p = 0 is clipped to 1e-300."""
    pp = _clip_p(p)
    Z = design(x, np.size(pp)) if x is not None else np.ones((np.size(pp), 1))
    _check_dim(params, Z)
    *_, log_f = _components(params, pp.reshape(-1), Z)
    return np.exp(log_f).reshape(np.shape(pp))


def alternative_density(params: WorkingModelParams, p, x=None) -> np.ndarray:
    pp = _clip_p(p).reshape(-1)
    Z = design(x, pp.size) if x is not None else np.ones((pp.size, 1))
    _check_dim(params, Z)
    k = expit(Z @ params.beta)
    return (1.0 - k) * pp ** (-k)


def null_probability(params: WorkingModelParams, x=None, m: int = 1) -> np.ndarray:
    Z = design(x, m)
    _check_dim(params, Z)
    return expit(Z @ params.zeta)


def _check_dim(params: WorkingModelParams, Z: np.ndarray) -> None:
    if Z.shape[1] != params.zeta.size:
        raise InvalidInputError(
            f"covariate dimension {Z.shape[1] - 1} does not match parameters ({params.dim})"
        )


def loglik(params: WorkingModelParams, p, x=None) -> float:
    pp = _clip_p(p).reshape(-1)
    Z = design(x, pp.size)
    _check_dim(params, Z)
    return float(_components(params, pp, Z)[-1].sum())


def loglik_grad(params: WorkingModelParams, p, x=None) -> np.ndarray:
    """Gradient of the log-likelihood with respect to (zeta, beta)."""
    pp = _clip_p(p).reshape(-1)
    Z = design(x, pp.size)
    _check_dim(params, Z)
    return _value_and_grad(params.theta, pp, Z)[1]


def _value_and_grad(theta, p, Z):
    params = WorkingModelParams.from_theta(theta)
    eta_z, eta_b, k, logp, log_pi, log_alt, log_f = _components(params, p, Z)
    w0 = np.exp(log_pi - log_f)
    w1 = np.exp(log_alt - log_f)
    d_eta_z = w0 - expit(eta_z)
    d_eta_b = -w1 * k * (1.0 + (1.0 - k) * logp)
    grad = np.concatenate([Z.T @ d_eta_z, Z.T @ d_eta_b])
    return float(log_f.sum()), grad


def fit_working_model(p, x=None, seed: int = FIT_SEED, restarts: int = N_RESTARTS) -> FitResult:
    """
    Maximum-likelihood fit of the working model for one study.

    L-BFGS-B on the box [-20, 20] from an intercept-only warm start plus
    ``restarts`` random starts; the best local optimum is kept. If none of
    the runs converges, the intercept-only model is returned and flagged.
    """
    pp = _clip_p(p).reshape(-1)
    Z = design(x, pp.size)
    n_obs, width = Z.shape
    minimum = max(10, 2 * width)
    flags = []
    if n_obs < minimum:
        flags.append(f"only {n_obs} observations (recommended >= {minimum})")

    def objective(theta):
        val, grad = _value_and_grad(theta, pp, Z)
        return -val, -grad

    bounds = [(-PARAM_BOUND, PARAM_BOUND)] * (2 * width)
    warm = np.zeros(2 * width)
    warm[0] = 1.5  # null-heavy start, pi ~ 0.82
    rng = np.random.default_rng(seed)
    starts = [warm] + [rng.normal(0.0, 1.0, 2 * width) for _ in range(restarts)]

    best = None
    for start in starts:
        res = optimize.minimize(objective, start, jac=True, method="L-BFGS-B", bounds=bounds)
        if not np.isfinite(res.fun):
            continue
        if best is None or res.fun < best.fun - 1e-12 or (res.success and not best.success
                                                           and res.fun <= best.fun + 1e-9):
            best = res

    fallback = False
    if best is None or not best.success:
        fallback = True
        flags.append("no restart converged; using intercept-only fit")
        best = _intercept_only(pp, width)

    theta = np.asarray(best.x, dtype=float)
    _, grad = _value_and_grad(theta, pp, Z)
    # gradient components pinned at the box are not expected to vanish
    free = np.abs(np.abs(theta) - PARAM_BOUND) > 1e-6
    at_boundary = bool((~free).any())
    if at_boundary:
        flags.append("estimate on the parameter box boundary")
    # the likelihood has no interior maximum when the data look purely null;
    # the optimizer then stops somewhere along the flat ridge
    pi_fit = expit(Z @ theta[:width])
    k_fit = expit(Z @ theta[width:])
    if np.all((1.0 - pi_fit) * k_fit < PURE_NULL_TOL):
        at_boundary = True
        flags.append("fit degenerates to the pure-null boundary")
    return FitResult(
        params=WorkingModelParams.from_theta(theta),
        loglik=-float(best.fun),
        converged=bool(best.success) and not fallback,
        grad_norm=float(np.linalg.norm(grad[free])) if free.any() else 0.0,
        at_boundary=at_boundary,
        fallback=fallback,
        n_obs=n_obs,
        flags=tuple(flags),
    )


def _intercept_only(p, width):
    Z1 = np.ones((p.size, 1))

    def objective(theta):
        val, grad = _value_and_grad(theta, p, Z1)
        return -val, -grad

    res = optimize.minimize(objective, np.array([1.5, 0.0]), jac=True, method="L-BFGS-B",
                            bounds=[(-PARAM_BOUND, PARAM_BOUND)] * 2)
    theta = np.zeros(2 * width)
    theta[0] = res.x[0]
    theta[width] = res.x[1]
    res.x = theta
    return res


def observed_information(params: WorkingModelParams, p, x=None, h: float = 1e-5) -> np.ndarray:
    """Negative Hessian of the log-likelihood by central differences of the gradient."""
    pp = _clip_p(p).reshape(-1)
    Z = design(x, pp.size)
    theta = params.theta
    d = theta.size
    H = np.empty((d, d))
    for a in range(d):
        e = np.zeros(d)
        e[a] = h
        H[a] = (_value_and_grad(theta + e, pp, Z)[1] - _value_and_grad(theta - e, pp, Z)[1]) / (2 * h)
    return -(H + H.T) / 2


def standard_errors(params: WorkingModelParams, p, x=None) -> np.ndarray:
    info = observed_information(params, p, x)
    return np.sqrt(np.diag(np.linalg.inv(info)))


def expected_p(params: WorkingModelParams, x=None, m: int = 1) -> np.ndarray:
    """Mean of p | x under the working model."""
    Z = design(x, m)
    _check_dim(params, Z)
    k = expit(Z @ params.beta)
    pi = expit(Z @ params.zeta)
    return (2.0 * (1.0 - k) + k * pi) / (4.0 - 2.0 * k)


def study_posteriors(params: WorkingModelParams, p, x=None) -> np.ndarray:
    """Per-feature posterior probability that the study's base null is false."""
    pp = _clip_p(p).reshape(-1)
    Z = design(x, pp.size)
    _check_dim(params, Z)
    *_, log_alt, log_f = _components(params, pp, Z)
    return np.clip(np.exp(log_alt - log_f), 0.0, 1.0)


def omega(posteriors, v) -> np.ndarray:
    """
    Probability that at least ``v`` of the studies carry a signal.

    ``posteriors`` is an m x |J| matrix of independent per-study non-null
    probabilities; the Poisson-binomial tail is accumulated by dynamic
    programming. ``v`` may be a scalar or one level per row; v <= 0 gives 1.
    """
    W = np.asarray(posteriors, dtype=float)
    if W.ndim == 1:
        W = W.reshape(1, -1)
    m, size = W.shape
    if size > MAX_GROUP_SIZE:
        raise EnumerationLimitError(
            f"study set of size {size} exceeds the limit of {MAX_GROUP_SIZE}"
        )
    levels = np.broadcast_to(np.asarray(v, dtype=int), (m,))
    if (levels > size).any():
        raise InvalidInputError(f"level v exceeds study-set size {size}")
    dist = np.zeros((m, size + 1))
    dist[:, 0] = 1.0
    for j in range(size):
        w = W[:, j:j + 1]
        shifted = np.zeros_like(dist)
        shifted[:, 1:] = dist[:, :-1]
        dist = dist * (1.0 - w) + shifted * w
    tail = np.cumsum(dist[:, ::-1], axis=1)[:, ::-1]
    out = tail[np.arange(m), np.clip(levels, 0, size)]
    return np.clip(out, 0.0, 1.0)


def omega_enumerate(posteriors, v: int) -> float:
    """Reference implementation: explicit sum over all signal subsets."""
    w = np.asarray(posteriors, dtype=float).reshape(-1)
    total = 0.0
    for status in itertools.product([0, 1], repeat=w.size):
        s = np.array(status, dtype=bool)
        if s.sum() >= v:
            total += float(np.prod(np.where(s, w, 1.0 - w)))
    return total


@dataclass(frozen=True)
class LocalWeights:
    """m x K weight matrix; entries outside S_k are zero."""

    nu: np.ndarray
    mode: str
    fits: dict = field(default_factory=dict, compare=False)
    flags: tuple = ()

    def column(self, k: int, selection: SelectionResult) -> np.ndarray:
        return self.nu[selection.indices(k), k]


def _normalize(scores: np.ndarray, mask: np.ndarray, k: int, flags: list) -> np.ndarray:
    out = np.zeros(mask.shape[0])
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return out
    s = scores[idx]
    total = s.sum()
    if not np.isfinite(total) or total <= 0:
        flags.append(f"group {k}: working-model scores sum to zero on S_k; using unit weights")
        out[idx] = 1.0
        return out
    out[idx] = s * idx.size / total
    return out


def normalize_covariates(X, m: int, n: int) -> list:
    """Return one covariate block (m x d_j, possibly d_j = 0) per study."""
    if X is None:
        return [np.zeros((m, 0)) for _ in range(n)]
    if isinstance(X, np.ndarray) or (isinstance(X, Sequence) and len(X) > 0
                                      and np.ndim(X[0]) == 0):
        arr = np.asarray(X, dtype=float)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        if arr.shape[0] != m:
            raise InvalidInputError(f"covariates have {arr.shape[0]} rows, expected {m}")
        return [arr for _ in range(n)]
    blocks = []
    if len(X) != n:
        raise InvalidInputError(f"expected {n} covariate blocks, got {len(X)}")
    for j, blk in enumerate(X):
        if blk is None:
            blocks.append(np.zeros((m, 0)))
            continue
        arr = np.asarray(blk, dtype=float)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        if arr.shape[0] != m:
            raise InvalidInputError(
                f"covariates for study {j} have {arr.shape[0]} rows, expected {m}"
            )
        blocks.append(arr)
    return blocks


def _design_or_none(block: np.ndarray):
    return None if block.shape[1] == 0 else block


def local_pc_weights_a(P, X, selection: SelectionResult, config: TestingConfig,
                       seed: int = FIT_SEED) -> LocalWeights:
    """
    Weights trained on the non-selected rows of each group's own studies.

    For j in G_k the working model is fitted on rows outside S_k, zeta is
    inflated by 1.5, and the posterior that the local PC null is false is
    evaluated at the model-implied mean p-value.
    """
    P = np.asarray(P, dtype=float)
    m, n = P.shape
    blocks = normalize_covariates(X, m, n)
    nu = np.zeros((m, config.K))
    fits, flags = {}, []
    for k, group in enumerate(config.groups):
        mask = selection.mask[:, k]
        train = ~mask
        if train.sum() == 0:
            flags.append(f"group {k}: no non-selected rows; fitted on all rows "
                         "(weights then also see selected p-values)")
            train = np.ones(m, dtype=bool)
        post = np.empty((m, len(group)))
        for col, j in enumerate(group):
            xj = _design_or_none(blocks[j])
            fit = fit_working_model(P[train, j], None if xj is None else xj[train], seed=seed)
            fits[j] = fit
            flags.extend(f"study {j}: {f}" for f in fit.flags)
            tilde = fit.params.scaled(ZETA_INFLATION)
            p_tilde = expected_p(tilde, xj, m)
            post[:, col] = study_posteriors(tilde, p_tilde, xj)
        scores = omega(post, config.levels[:, k])
        nu[:, k] = _normalize(scores, mask, k, flags)
    return LocalWeights(nu, "a", fits, tuple(flags))


def local_pc_weights_b(P, X, selection: SelectionResult, config: TestingConfig,
                       seed: int = FIT_SEED) -> LocalWeights:
    """
    Weights built from the studies outside each group.

    Each study's model is fitted on all rows; for group k the posterior that
    at least r_ik = u - u_ik of the complementary studies carry a signal is
    evaluated at the model-implied mean p-values.
    """
    P = np.asarray(P, dtype=float)
    m, n = P.shape
    blocks = normalize_covariates(X, m, n)
    post = np.empty((m, n))
    fits, flags = {}, []
    for j in range(n):
        xj = _design_or_none(blocks[j])
        fit = fit_working_model(P[:, j], xj, seed=seed)
        fits[j] = fit
        flags.extend(f"study {j}: {f}" for f in fit.flags)
        p_hat = expected_p(fit.params, xj, m)
        post[:, j] = study_posteriors(fit.params, p_hat, xj)
    nu = np.zeros((m, config.K))
    for k, group in enumerate(config.groups):
        complement = [j for j in range(n) if j not in group]
        r = config.u - config.levels[:, k]
        if complement:
            scores = omega(post[:, complement], r)
        else:
            scores = np.ones(m)
        nu[:, k] = _normalize(scores, selection.mask[:, k], k, flags)
    return LocalWeights(nu, "b", fits, tuple(flags))


def unit_weights(selection: SelectionResult) -> LocalWeights:
    return LocalWeights(selection.mask.astype(float), "unit")
