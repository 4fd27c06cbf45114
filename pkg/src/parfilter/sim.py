"""
Simulation designs, ground truth, oracle posteriors and the Monte-Carlo
harness for replicability FDR / power studies.
"""

from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, Optional, Sequence

import numpy as np
from scipy import signal, stats
from scipy.special import expit

from . import baselines
from .combine import Combiner
from .config import TestingConfig, default_max_rep_config, default_two_group_config
from .engine import parfilter
from .errors import InvalidInputError, UnsupportedModeError
from .weights import omega

ALT_B = 7.0
FIGURE1_A = 0.26
XI_GRID_MAIN = (0.74, 0.76, 0.78, 0.80, 0.82)
XI_GRID_APPENDIX = (0.72, 0.74, 0.76, 0.78, 0.80, 0.82)

STREAM_X, STREAM_H, STREAM_P, STREAM_CONFIG = 0, 1, 2, 3


def gamma0(n: int) -> float:
    """Intercept making Pr(all n base nulls false) equal 0.01/n at x = 0."""
    return math.log((0.01 / n) ** (-1.0 / n) - 1.0)


def make_rng(seed: int, replicate: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, replicate, stream])))


@dataclass(frozen=True)
class Scenario:
    m: int
    n: int
    u: Optional[int] = None
    gamma1: float = 0.0
    xi: float = 0.78
    dependence: str = "independent"
    rho: float = -0.8
    reps: int = 1
    seed: int = 0
    q: float = 0.05
    kind: str = "main"
    name: str = ""

    def __post_init__(self):
        if self.u is None:
            object.__setattr__(self, "u", self.n)
        if not 1 <= self.u <= self.n:
            raise InvalidInputError(f"u={self.u} outside [1, {self.n}]")
        if self.dependence not in ("independent", "ar1"):
            raise InvalidInputError(f"unknown dependence {self.dependence!r}")
        if self.kind not in ("main", "figure1"):
            raise InvalidInputError(f"unknown scenario kind {self.kind!r}")
        if not self.name:
            object.__setattr__(self, "name", self.default_name())

    @property
    def gamma0(self) -> float:
        return gamma0(self.n)

    @property
    def extrapolated(self) -> bool:
        return not (0.7 <= self.xi < 0.9) or self.gamma1 not in (0.0, 1.0, 1.5)

    def default_name(self) -> str:
        if self.kind == "figure1":
            return f"figure1_n{self.n}"
        dep = "" if self.dependence == "independent" else "_ar1"
        return f"u{self.u}n{self.n}_g{self.gamma1:g}_xi{self.xi:g}{dep}"


@dataclass
class SimulatedDataset:
    P: np.ndarray
    X: Optional[np.ndarray]
    truth: np.ndarray  # True where the base null is true
    scenario: Scenario
    replicate: int
    z: Optional[np.ndarray] = field(default=None, repr=False)


def ar1_normals(rng: np.random.Generator, m: int, rho: float) -> np.ndarray:
    """Stationary AR(1) N(0,1) sequence with lag-h correlation rho^h."""
    scale = math.sqrt(1.0 - rho * rho)
    eps = rng.standard_normal(m)
    eps[0] /= scale  # so that z_1 = eps_1 ~ N(0, 1)
    return signal.lfilter([scale], [1.0, -rho], eps)


def generate(scenario: Scenario, replicate: int) -> SimulatedDataset:
    if scenario.kind == "figure1":
        return generate_figure1(scenario.m, scenario.n, replicate, scenario.seed)
    m, n = scenario.m, scenario.n
    x = make_rng(scenario.seed, replicate, STREAM_X).standard_normal(m)
    prob_null = expit(scenario.gamma0 + scenario.gamma1 * x)
    h_rng = make_rng(scenario.seed, replicate, STREAM_H)
    truth = h_rng.random((m, n)) < prob_null[:, None]
    p_rng = make_rng(scenario.seed, replicate, STREAM_P)
    a = 1.0 - scenario.xi
    z = None
    if scenario.dependence == "independent":
        unif = p_rng.random((m, n))
        alt = p_rng.beta(a, ALT_B, size=(m, n))
        P = np.where(truth, unif, alt)
    else:
        z = np.column_stack([ar1_normals(p_rng, m, scenario.rho) for _ in range(n)])
        u = stats.norm.cdf(z)
        P = np.where(truth, u, stats.beta.ppf(u, a, ALT_B))
    return SimulatedDataset(P=P, X=x.reshape(-1, 1), truth=truth, scenario=scenario,
                            replicate=replicate, z=z)


def generate_figure1(m: int, n: int, replicate: int, seed: int = 0) -> SimulatedDataset:
    """Every base null false; p-values iid Beta(0.26, 7)."""
    rng = make_rng(seed, replicate, STREAM_P)
    P = rng.beta(FIGURE1_A, ALT_B, size=(m, n))
    sc = Scenario(m=m, n=n, kind="figure1", seed=seed)
    return SimulatedDataset(P=P, X=None, truth=np.zeros((m, n), dtype=bool), scenario=sc,
                            replicate=replicate)


def study_nonnull_posteriors(dataset: SimulatedDataset, scenario: Scenario) -> np.ndarray:
    """True-model posterior that each base null is false."""
    if scenario.dependence != "independent":
        raise UnsupportedModeError("oracle posteriors are only available for independent p-values")
    if scenario.kind != "main":
        raise UnsupportedModeError("oracle posteriors need the logistic/beta design")
    x = dataset.X[:, 0]
    pi = expit(scenario.gamma0 + scenario.gamma1 * x)[:, None]
    p = np.clip(dataset.P, 1e-300, 1.0)
    f_alt = stats.beta.pdf(p, 1.0 - scenario.xi, ALT_B)
    num = (1.0 - pi) * f_alt
    return num / (pi + num)


def oracle_psi(dataset: SimulatedDataset, scenario: Scenario) -> np.ndarray:
    """Posterior probability that each feature's u/[n] PC null is true."""
    W = study_nonnull_posteriors(dataset, scenario)
    return np.clip(1.0 - omega(W, scenario.u), 0.0, 1.0)


def pc_null_true(truth, u: int) -> np.ndarray:
    H = np.asarray(truth, dtype=bool)
    n = H.shape[1]
    return H.sum(axis=1) >= n - u + 1


def fdr_tpr(rejections, truth, u: int):
    """(FDP, TPP) of a rejection set against base-null ground truth."""
    null = pc_null_true(truth, u)
    R = np.zeros(null.size, dtype=bool)
    R[np.asarray(rejections, dtype=int)] = True
    n_rej = int(R.sum())
    fdp = (R & null).sum() / max(n_rej, 1)
    tpp = (R & ~null).sum() / max(int((~null).sum()), 1)
    return float(fdp), float(tpp)


def scenario_config(scenario: Scenario, replicate: int, X=None) -> TestingConfig:
    if scenario.u == scenario.n:
        return default_max_rep_config(scenario.n, scenario.m)
    # drawn independently of the data
    seed = int(make_rng(scenario.seed, replicate, STREAM_CONFIG).integers(2 ** 31))
    return default_two_group_config(scenario.n, scenario.m, scenario.u, seed=seed, X=X)


# -- methods -----------------------------------------------------------------

MethodFn = Callable[[SimulatedDataset, Scenario, float], np.ndarray]


def _pc(ds, sc):
    return baselines.pc_pvalues(ds.P, sc.u, Combiner.STOUFFER)


def _parfilter_method(**kwargs) -> MethodFn:
    def run(ds, sc, q):
        cfg = scenario_config(sc, ds.replicate, ds.X)
        return parfilter(ds.P, ds.X, cfg, q, **kwargs).rejected
    return run


METHODS: Dict[str, MethodFn] = {
    "bh": lambda ds, sc, q: baselines.bh(_pc(ds, sc), q),
    "by": lambda ds, sc, q: baselines.by(_pc(ds, sc), q),
    "adaptive-bh": lambda ds, sc, q: baselines.adaptive_bh_storey(_pc(ds, sc), q),
    "cofilter-bh": lambda ds, sc, q: baselines.cofilter_bh(_pc(ds, sc), q),
    "adaptive-cofilter-bh": lambda ds, sc, q: baselines.adaptive_cofilter_bh(_pc(ds, sc), q),
    "parfilter": _parfilter_method(mode="indep-adaptive", weight_mode="model-a"),
    "no-covar-parfilter": _parfilter_method(mode="indep-adaptive", weight_mode="unit"),
    "non-adaptive-parfilter": _parfilter_method(mode="indep-nonadaptive", weight_mode="model-a"),
    "inflated-parfilter": _parfilter_method(mode="dependence", weight_mode="model-b",
                                            selection_rule="inflated-threshold"),
    "dependence-parfilter": _parfilter_method(mode="dependence", weight_mode="model-b"),
    "oracle": lambda ds, sc, q: baselines.oracle_rejections(oracle_psi(ds, sc), q),
}


def get_method(name: str) -> MethodFn:
    try:
        return METHODS[name]
    except KeyError:
        raise InvalidInputError(f"unknown method {name!r}; expected one of {sorted(METHODS)}") from None


# -- harness -----------------------------------------------------------------

def _replicate_metrics(scenario, methods, replicate):
    ds = generate(scenario, replicate)
    out = {}
    for name in methods:
        R = get_method(name)(ds, scenario, scenario.q)
        out[name] = fdr_tpr(R, ds.truth, scenario.u)
    return out


def _summarize(values: np.ndarray):
    mean = float(values.mean())
    if values.size < 2:
        return mean, float("nan")
    return mean, float(values.std(ddof=1) / math.sqrt(values.size))


def run_experiment(scenarios: Iterable[Scenario], methods: Sequence[str], reps: Optional[int] = None,
                   seed: Optional[int] = None, threads: int = 1) -> list:
    """
    Monte-Carlo FDR_rep / TPR_rep per (scenario, method) cell.

    ``reps`` and ``seed`` override the scenario values. Replicates are keyed
    by (seed, replicate, stream), so the table does not depend on ``threads``.
    """
    for name in methods:
        get_method(name)
    rows = []
    for sc in scenarios:
        if reps is not None or seed is not None:
            sc = dataclasses.replace(sc, reps=sc.reps if reps is None else reps,
                                     seed=sc.seed if seed is None else seed)
        if sc.reps < 1:
            raise InvalidInputError("reps must be at least 1")
        work = lambda r, sc=sc: _replicate_metrics(sc, methods, r)
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(work, range(sc.reps)))
        else:
            results = [work(r) for r in range(sc.reps)]
        for name in methods:
            vals = np.array([res[name] for res in results])
            fdr, fdr_se = _summarize(vals[:, 0])
            tpr, tpr_se = _summarize(vals[:, 1])
            rows.append({
                "scenario": sc.name, "n": sc.n, "u": sc.u, "m": sc.m, "gamma1": sc.gamma1,
                "xi": sc.xi, "dependence": sc.dependence, "method": name,
                "FDR": fdr, "TPR": tpr, "FDR_SE": fdr_se, "TPR_SE": tpr_se, "reps": sc.reps,
                "flag": "se-undefined" if sc.reps < 2 else "",
            })
    return rows


def run_figure1(n: int = 4, m_values: Sequence[int] = (1, 250), u_values: Optional[Sequence[int]] = None,
                reps: int = 500, seed: int = 0, q: float = 0.05,
                combiner=Combiner.STOUFFER) -> list:
    """Power of BH on GBHPC p-values when every base null is false."""
    u_values = list(range(1, n + 1)) if u_values is None else list(u_values)
    rows = []
    for m in m_values:
        power = np.zeros((len(u_values), reps))
        for r in range(reps):
            ds = generate_figure1(m, n, r, seed)
            for a, u in enumerate(u_values):
                R = baselines.bh(baselines.pc_pvalues(ds.P, u, combiner), q)
                power[a, r] = R.size / m
        for a, u in enumerate(u_values):
            tpr, se = _summarize(power[a])
            rows.append({
                "scenario": f"figure1_n{n}", "n": n, "u": u, "m": m, "gamma1": 0.0, "xi": float("nan"),
                "dependence": "independent", "method": "bh", "FDR": 0.0, "TPR": tpr,
                "FDR_SE": 0.0 if reps > 1 else float("nan"), "TPR_SE": se, "reps": reps,
                "flag": "se-undefined" if reps < 2 else "",
            })
    return rows


# -- presets -----------------------------------------------------------------

FIGURE1_M_GRID = (1,) + tuple(range(10, 1001, 10))


def preset(name: str) -> dict:
    """
    Named experiment designs. Returns a dict with ``kind`` ("figure1" or
    "grid"), and either figure-1 arguments or scenarios plus methods.
    """
    full_methods = ["bh", "by", "adaptive-bh", "cofilter-bh", "adaptive-cofilter-bh",
                    "parfilter", "no-covar-parfilter", "non-adaptive-parfilter",
                    "inflated-parfilter", "oracle"]
    if name == "figure1":
        return {"kind": "figure1", "n": 4, "m_values": FIGURE1_M_GRID, "reps": 500}
    if name == "appendix-d":
        return {"kind": "figure1", "n": 8, "m_values": (1,), "reps": 500}
    if name == "smoke":
        sc = Scenario(m=200, n=2, gamma1=1.0, xi=0.80, reps=2)
        return {"kind": "grid", "scenarios": [sc], "methods": ["bh", "parfilter", "oracle"]}
    if name in ("main", "main-appendix-xi"):
        grid = XI_GRID_MAIN if name == "main" else XI_GRID_APPENDIX
        scs = [Scenario(m=5000, n=n, gamma1=g, xi=xi, reps=500)
               for n, g, xi in itertools.product((2, 3, 4, 5), (0.0, 1.0, 1.5), grid)]
        return {"kind": "grid", "scenarios": scs, "methods": full_methods}
    if name == "u-less-than-n":
        scs = [Scenario(m=5000, n=n, u=u, gamma1=g, xi=xi, reps=500)
               for (u, n), g, xi in itertools.product(((2, 3), (3, 4), (3, 5), (4, 5)),
                                                      (0.0, 1.0, 1.5), XI_GRID_APPENDIX)]
        return {"kind": "grid", "scenarios": scs, "methods": full_methods}
    if name == "ar1":
        scs = [Scenario(m=5000, n=n, gamma1=g, xi=xi, dependence="ar1", reps=500)
               for n, g, xi in itertools.product((2, 3, 4, 5), (0.0, 1.0, 1.5), XI_GRID_APPENDIX)]
        methods = [mth for mth in full_methods if mth != "oracle"]
        return {"kind": "grid", "scenarios": scs, "methods": methods}
    raise InvalidInputError(f"unknown preset {name!r}; expected one of {PRESETS}")


PRESETS = ("figure1", "appendix-d", "smoke", "main", "main-appendix-xi", "u-less-than-n", "ar1")


def scenarios_from_dict(spec: dict) -> dict:
    """
    Build an experiment from a JSON mapping: scalar fields apply to every
    scenario, list-valued ``n``, ``u``, ``gamma1``, ``xi`` are crossed.
    """
    spec = dict(spec)
    methods = spec.pop("methods", ["bh", "parfilter"])
    if spec.get("kind") == "figure1":
        return {"kind": "figure1", "n": int(spec.get("n", 4)),
                "m_values": tuple(spec.get("m_values", (1, 250))),
                "reps": int(spec.get("reps", 500)), "seed": int(spec.get("seed", 0))}
    spec.pop("kind", None)
    axes = {k: spec.pop(k) for k in ("n", "u", "gamma1", "xi") if isinstance(spec.get(k), list)}
    allowed = {f.name for f in dataclasses.fields(Scenario)}
    unknown = set(spec) - allowed
    if unknown:
        raise InvalidInputError(f"unknown scenario fields {sorted(unknown)}")
    scs = []
    keys = list(axes)
    for combo in itertools.product(*(axes[k] for k in keys)):
        kw = dict(spec, **dict(zip(keys, combo)))
        scs.append(Scenario(**kw))
    return {"kind": "grid", "scenarios": scs, "methods": list(methods)}


def load_experiment(path) -> dict:
    path = Path(path)
    try:
        spec = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path}: invalid JSON ({exc})") from None
    try:
        return scenarios_from_dict(spec)
    except (InvalidInputError, TypeError) as exc:
        raise InvalidInputError(f"{path}: {exc}") from None


METRIC_COLUMNS = ["scenario", "n", "u", "m", "gamma1", "xi", "dependence", "method",
                  "FDR", "TPR", "FDR_SE", "TPR_SE", "reps", "flag"]
CURVE_COLUMNS = ["scenario", "u", "m", "method", "FDR", "TPR", "SE"]


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metrics_tsv(rows: list, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in METRIC_COLUMNS])


def write_power_curves_tsv(rows: list, path) -> None:
    """Long-format curve data: one line per (scenario, u, m, method)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for row in rows:
            w.writerow([_fmt(v) for v in (row["scenario"], row["u"], row["m"], row["method"],
                                          row["FDR"], row["TPR"], row["TPR_SE"])])
