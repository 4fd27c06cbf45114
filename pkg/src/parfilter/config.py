"""
Testing configurations: study partition, local error weights, per-feature
local replicability levels and per-group tuning values.

Study indices are 0-based in Python; JSON configuration files number studies
from 1, matching the ``study_<j>`` column headers of the CSV inputs.
"""

from __future__ import annotations

import dataclasses
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError

WEIGHT_TOL = 1e-12
# decimal configs get renormalized only if they are this close to summing to one
INGEST_WEIGHT_TOL = 1e-6
DEFAULT_LAMBDA = 0.5

LevelRule = Callable[..., np.ndarray]


@dataclass(frozen=True)
class TestingConfig:
    """A validated testing configuration for u/[n] replicability."""

    __test__ = False  # keep pytest from collecting this as a test class

    u: int
    groups: tuple
    weights: np.ndarray
    levels: np.ndarray
    lambdas: np.ndarray
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        groups = tuple(tuple(int(j) for j in g) for g in self.groups)
        object.__setattr__(self, "groups", groups)
        for name in ("weights", "lambdas"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        levels = np.array(self.levels, dtype=int)
        if levels.ndim == 1:
            levels = levels.reshape(1, -1)
        levels.setflags(write=False)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "u", int(self.u))
        self.validate()

    @property
    def K(self) -> int:
        return len(self.groups)

    @property
    def n(self) -> int:
        return sum(len(g) for g in self.groups)

    @property
    def m(self) -> int:
        return self.levels.shape[0]

    @property
    def group_sizes(self) -> np.ndarray:
        return np.array([len(g) for g in self.groups])

    def group_of(self, study: int) -> int:
        for k, g in enumerate(self.groups):
            if study in g:
                return k
        raise ConfigError(f"study {study} does not belong to any group")

    def validate(self) -> None:
        K = len(self.groups)
        if K == 0:
            raise ConfigError("configuration needs at least one group")
        if any(len(g) == 0 for g in self.groups):
            raise ConfigError("groups must be nonempty")
        flat = [j for g in self.groups for j in g]
        n = len(flat)
        if sorted(flat) != list(range(n)):
            raise ConfigError(
                f"groups {self.groups} do not partition the studies 0..{n - 1}"
            )
        if self.weights.shape != (K,):
            raise ConfigError(f"expected {K} local error weights, got {self.weights.size}")
        if (self.weights <= 0).any() or (self.weights > 1).any():
            raise ConfigError("local error weights must lie in (0, 1]")
        if abs(self.weights.sum() - 1.0) > WEIGHT_TOL:
            raise ConfigError(
                f"local error weights sum to {self.weights.sum()!r}, not 1"
            )
        if self.lambdas.shape != (K,):
            raise ConfigError(f"expected {K} tuning values, got {self.lambdas.size}")
        if (self.lambdas <= 0).any() or (self.lambdas > 1).any():
            raise ConfigError("tuning values lambda_k must lie in (0, 1]")
        if not 1 <= self.u <= n:
            raise ConfigError(f"replicability level u={self.u} outside [1, {n}]")
        if K > self.u:
            raise ConfigError(f"number of groups K={K} exceeds u={self.u}")
        if self.levels.ndim != 2 or self.levels.shape[1] != K:
            raise ConfigError(f"local levels must be an m x {K} matrix")
        sizes = np.array([len(g) for g in self.groups])
        bad = (self.levels < 1) | (self.levels > sizes)
        if bad.any():
            i, k = np.argwhere(bad)[0]
            raise ConfigError(
                f"feature {i}: local level {self.levels[i, k]} outside [1, {sizes[k]}] "
                f"for group {k}"
            )
        sums = self.levels.sum(axis=1)
        if (sums != self.u).any():
            i = int(np.flatnonzero(sums != self.u)[0])
            raise ConfigError(
                f"feature {i}: local levels sum to {sums[i]}, expected u={self.u}"
            )

    def with_lambdas(self, lambdas) -> "TestingConfig":
        lam = np.broadcast_to(np.asarray(lambdas, dtype=float), (self.K,))
        return dataclasses.replace(self, lambdas=lam.copy())

    def to_dict(self) -> dict:
        return {
            "u": self.u,
            "groups": [[j + 1 for j in g] for g in self.groups],
            "weights": self.weights.tolist(),
            "lambdas": self.lambdas.tolist(),
            "levels": self.levels.tolist(),
        }


def default_max_rep_config(n: int, m: int, lambda_: float = DEFAULT_LAMBDA) -> TestingConfig:
    """One study per group, equal weights, all local levels 1 (u = n)."""
    if n < 1:
        raise ConfigError("need at least one study")
    return TestingConfig(
        u=n,
        groups=tuple((j,) for j in range(n)),
        weights=np.full(n, 1.0 / n),
        levels=np.ones((m, n), dtype=int),
        lambdas=np.full(n, lambda_),
        provenance={"rule": "max-rep"},
    )


def parity_groups(n: int) -> tuple:
    # 1-based even studies form the first group, odd studies the second
    even = tuple(j for j in range(n) if (j + 1) % 2 == 0)
    odd = tuple(j for j in range(n) if (j + 1) % 2 == 1)
    return even, odd


def valid_level_set(u: int, group_sizes: Sequence[int]) -> list:
    """All level vectors (u_1..u_K) with 1 <= u_k <= |G_k| and sum u."""
    ranges = [range(1, int(s) + 1) for s in group_sizes]
    return [v for v in itertools.product(*ranges) if sum(v) == u]


def uniform_level_rule(m: int, group_sizes, u: int, rng: np.random.Generator, X=None) -> np.ndarray:
    """Draw each feature's level vector uniformly from the valid set; ignores X."""
    choices = valid_level_set(u, group_sizes)
    if not choices:
        raise ConfigError(f"no valid local levels for u={u} and group sizes {list(group_sizes)}")
    idx = rng.integers(len(choices), size=m)
    return np.asarray(choices, dtype=int)[idx].reshape(m, len(group_sizes))


def default_two_group_config(
    n: int,
    m: int,
    u: int,
    level_rule: Optional[LevelRule] = None,
    seed: Optional[int] = None,
    X=None,
    lambda_: float = DEFAULT_LAMBDA,
) -> TestingConfig:
    """
    Parity-based two-group configuration for u < n.

    ``level_rule(m, group_sizes, u, rng, X)`` returns the m x 2 level matrix;
    the default samples uniformly from the valid set. Covariate-driven rules
    are accepted but experimental.
    """
    if n < 2:
        raise ConfigError("two-group configuration needs n >= 2")
    if not 2 <= u <= n:
        raise ConfigError(f"two-group configuration needs 2 <= u <= n, got u={u}, n={n}")
    groups = parity_groups(n)
    sizes = [len(g) for g in groups]
    rule = level_rule or uniform_level_rule
    rng = np.random.default_rng(seed)
    levels = np.asarray(rule(m, sizes, u, rng, X), dtype=int)
    return TestingConfig(
        u=u,
        groups=groups,
        weights=np.array(sizes, dtype=float) / n,
        levels=levels,
        lambdas=np.full(2, lambda_),
        provenance={"rule": "two-group", "seed": seed},
    )


def sample_config(candidates: Sequence[TestingConfig], seed, probs=None) -> TestingConfig:
    """Pick one candidate configuration with an RNG independent of the data."""
    if len(candidates) == 0:
        raise ConfigError("candidate list is empty")
    rng = np.random.default_rng(seed)
    index = int(rng.choice(len(candidates), p=probs))
    chosen = candidates[index]
    provenance = dict(chosen.provenance, sampled_index=index, sample_seed=seed)
    return dataclasses.replace(chosen, provenance=provenance)


@dataclass(frozen=True)
class ImbalanceReport:
    replicated: np.ndarray
    imbalanced: np.ndarray

    @property
    def n_imbalanced(self) -> int:
        return int(self.imbalanced.sum())

    def labels(self) -> list:
        out = []
        for rep, imb in zip(self.replicated, self.imbalanced):
            out.append("imbalanced" if imb else ("balanced" if rep else "not-replicated"))
        return out


def imbalance_report(config: TestingConfig, truth) -> ImbalanceReport:
    """
    Flag replicated features for which some group's local PC null is true.

    ``truth`` is the m x n matrix of base-null indicators (True = null true).
    """
    H = np.asarray(truth, dtype=bool)
    if H.ndim != 2 or H.shape != (config.m, config.n):
        raise ConfigError(
            f"truth has shape {H.shape}, configuration expects ({config.m}, {config.n})"
        )
    signals = ~H
    replicated = signals.sum(axis=1) >= config.u
    local_null = np.zeros_like(replicated)
    for k, g in enumerate(config.groups):
        local_null |= signals[:, list(g)].sum(axis=1) < config.levels[:, k]
    return ImbalanceReport(replicated=replicated, imbalanced=replicated & local_null)


def config_from_dict(spec: dict, n: int, m: int) -> TestingConfig:
    """
    Build a configuration from a JSON-compatible mapping.

    ``levels`` may be an explicit m x K matrix, a single K-vector applied to
    every feature, ``"max-rep"`` or ``"two-group-random:SEED"``.
    """
    spec = dict(spec)
    levels = spec.get("levels", "max-rep")
    lam = spec.get("lambdas")
    if isinstance(levels, str) and levels == "max-rep":
        cfg = default_max_rep_config(n, m)
        if spec.get("u", n) != n:
            raise ConfigError("'max-rep' levels require u = n")
    elif isinstance(levels, str) and levels.startswith("two-group-random"):
        _, _, seed_txt = levels.partition(":")
        seed = int(seed_txt) if seed_txt else None
        if "u" not in spec:
            raise ConfigError("'two-group-random' levels need an explicit u")
        cfg = default_two_group_config(n, m, int(spec["u"]), seed=seed)
    else:
        if "groups" not in spec or "u" not in spec:
            raise ConfigError("explicit levels need 'groups' and 'u'")
        groups = [[int(j) - 1 for j in g] for g in spec["groups"]]
        K = len(groups)
        weights = spec.get("weights")
        if weights is None:
            weights = [len(g) / n for g in groups]
        lv = np.asarray(levels, dtype=int)
        if lv.ndim == 1:
            lv = np.tile(lv, (m, 1))
        cfg = TestingConfig(
            u=int(spec["u"]),
            groups=groups,
            weights=_renormalize(weights),
            levels=lv,
            lambdas=np.full(K, DEFAULT_LAMBDA) if lam is None else lam,
            provenance={"rule": "explicit"},
        )
        lam = None
    overrides = {}
    if "groups" in spec and cfg.provenance.get("rule") != "explicit":
        groups = tuple(tuple(int(j) - 1 for j in g) for g in spec["groups"])
        if groups != cfg.groups:
            raise ConfigError(f"groups {spec['groups']} conflict with levels rule {levels!r}")
    if "weights" in spec and cfg.provenance.get("rule") != "explicit":
        overrides["weights"] = _renormalize(spec["weights"])
    if lam is not None:
        overrides["lambdas"] = lam
    if cfg.n != n:
        raise ConfigError(f"configuration covers {cfg.n} studies but the data has {n}")
    if cfg.m != m:
        raise ConfigError(f"configuration covers {cfg.m} features but the data has {m}")
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def load_config(path, n: int, m: int) -> TestingConfig:
    path = Path(path)
    try:
        spec = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    try:
        return config_from_dict(spec, n, m)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _renormalize(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if abs(total - 1.0) > INGEST_WEIGHT_TOL:
        raise ConfigError(f"local error weights sum to {total!r}, not 1")
    return w / total
