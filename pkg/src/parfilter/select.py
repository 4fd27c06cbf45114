"""
Selection rules that shortlist features for each study group.

A rule sees the local PC p-values of the *other* groups only, so the
selected set S_k never depends on the p-values inside group k.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict

import numpy as np

from .config import TestingConfig
from .errors import InvalidInputError


@dataclass(frozen=True)
class SelectionResult:
    """Selected sets as an m x K boolean mask (column k is S_k)."""

    mask: np.ndarray
    rule: str
    params: dict = field(default_factory=dict)
    compliant: bool = True

    def __post_init__(self):
        mask = np.array(self.mask, dtype=bool)
        if mask.ndim != 2:
            raise InvalidInputError("selection mask must be m x K")
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @property
    def K(self) -> int:
        return self.mask.shape[1]

    @property
    def m(self) -> int:
        return self.mask.shape[0]

    @property
    def sizes(self) -> np.ndarray:
        return self.mask.sum(axis=0)

    def indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.mask[:, k])

    def sets(self) -> list:
        return [set(self.indices(k).tolist()) for k in range(self.K)]


def harmonic_number(m: int) -> float:
    return float(np.sum(1.0 / np.arange(1, max(int(m), 1) + 1)))


def _check_inputs(local_pc, config: TestingConfig, q: float) -> np.ndarray:
    arr = np.asarray(local_pc, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != config.K:
        raise InvalidInputError(
            f"local PC p-values must be m x {config.K}, got shape {arr.shape}"
        )
    if not 0 < q < 1:
        raise InvalidInputError(f"FDR target q={q} must lie in (0, 1)")
    return arr


def _thresholded(arr: np.ndarray, config: TestingConfig, scale: np.ndarray) -> np.ndarray:
    cut = np.minimum(scale, config.lambdas)
    passes = arr <= cut
    m, K = arr.shape
    mask = np.ones((m, K), dtype=bool)
    for k in range(K):
        others = [l for l in range(K) if l != k]
        if others:
            mask[:, k] = passes[:, others].all(axis=1)
    return mask


def threshold_selection(local_pc, config: TestingConfig, q: float) -> SelectionResult:
    """S_k = features whose local PC p-value in every other group l is <= (w_l q) ^ lambda_l."""
    arr = _check_inputs(local_pc, config, q)
    mask = _thresholded(arr, config, config.weights * q)
    return SelectionResult(mask, "threshold", {"q": q})


def inflated_threshold_selection(local_pc, config: TestingConfig, q: float) -> SelectionResult:
    """Like :func:`threshold_selection` with thresholds divided by the harmonic number H_m."""
    arr = _check_inputs(local_pc, config, q)
    h = harmonic_number(arr.shape[0])
    mask = _thresholded(arr, config, config.weights * q / h)
    return SelectionResult(mask, "inflated-threshold", {"q": q, "harmonic": h})


def select_all(local_pc, config: TestingConfig, q: float) -> SelectionResult:
    """Keep every feature in every group (no selection)."""
    arr = _check_inputs(local_pc, config, q)
    return SelectionResult(np.ones(arr.shape, dtype=bool), "all", {})


SelectionRule = Callable[..., SelectionResult]

RULES: Dict[str, SelectionRule] = {
    "threshold": threshold_selection,
    "inflated-threshold": inflated_threshold_selection,
    "all": select_all,
}


def get_rule(rule) -> SelectionRule:
    if callable(rule):
        return rule
    try:
        return RULES[rule]
    except KeyError:
        raise InvalidInputError(
            f"unknown selection rule {rule!r}; expected one of {sorted(RULES)}"
        ) from None
