"""
Command-line interface.

    parfilter analyze   --pvalues P.csv [--covariates J=FILE ...] --out DIR
    parfilter simulate  (--preset NAME | --config EXPERIMENT.json) --out DIR
    parfilter compare   --pvalues P.csv --out DIR
    parfilter preprocess spline --input COV.csv --df 5 --output OUT.csv

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 mode mismatch.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import baselines, io, sim
from .combine import Combiner
from .config import config_from_dict, default_max_rep_config, load_config
from .engine import WEIGHT_MODES, MODES, parfilter, posthoc_study
from .errors import (InvalidInputError, ModeMismatchError, NumericalError,
                     ParFilterError, UnsupportedModeError)
from .preprocess import spline_basis

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_MODE = 0, 2, 3, 4

logger = logging.getLogger("parfilter")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    return str(v)


def _write_tsv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _parse_covariates(specs) -> dict:
    out = {}
    for spec in specs or []:
        study, sep, path = spec.partition("=")
        if not sep:
            raise InvalidInputError(f"--covariates expects J=FILE, got {spec!r}")
        try:
            j = int(study)
        except ValueError:
            raise InvalidInputError(f"--covariates study number {study!r} is not an integer") from None
        if j < 1:
            raise InvalidInputError(f"--covariates study numbers start at 1, got {j}")
        out[j - 1] = path
    return out


def _resolve_config(arg, u, n, m):
    if arg is None or arg == "max-rep":
        if u is not None and u != n:
            raise InvalidInputError(f"max-rep configuration needs u = n = {n}; pass --config for u={u}")
        return default_max_rep_config(n, m)
    if arg.startswith("two-group-random"):
        if u is None:
            raise InvalidInputError("two-group-random configuration needs --u")
        return config_from_dict({"u": u, "levels": arg}, n, m)
    return load_config(arg, n, m)


def cmd_analyze(args) -> int:
    features, P, X = io.ingest(args.pvalues, _parse_covariates(args.covariates))
    m, n = P.shape
    cfg = _resolve_config(args.config, args.u, n, m)
    report = parfilter(P, X, cfg, args.q, mode=args.mode, weight_mode=args.weights,
                       combiner=args.combiner, selection_rule=args.selection,
                       allow_no_guarantee=args.allow_no_guarantee, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    K = cfg.K
    header = (["feature", "rejected"] + [f"local_pc_{k + 1}" for k in range(K)]
              + [f"selected_{k + 1}" for k in range(K)] + [f"nu_{k + 1}" for k in range(K)])
    mask = report.rejected_mask
    rows = []
    for i, key in enumerate(features):
        rows.append([key, bool(mask[i])] + list(report.local_pc[i])
                    + [bool(b) for b in report.selection.mask[i]] + list(report.nu[i]))
    _write_tsv(out / "rejections.tsv", header, rows)

    summary = [
        ("mode", report.mode), ("weights", report.weight_mode), ("pi_estimator", report.pi_mode),
        ("combiner", report.combiner), ("selection", report.selection.rule),
        ("q", float(report.q)), ("u", cfg.u), ("K", K), ("m", m), ("n", n),
        ("n_rejected", report.n_rejected), ("iterations", report.iterations),
    ]
    for k in range(K):
        summary += [
            (f"group_{k + 1}", ",".join(str(j + 1) for j in cfg.groups[k])),
            (f"weight_{k + 1}", float(cfg.weights[k])),
            (f"lambda_{k + 1}", float(report.lambdas[k])),
            (f"n_selected_{k + 1}", int(report.selection.sizes[k])),
            (f"pi_hat_{k + 1}", float(report.pi_hat[k])),
            (f"t_hat_{k + 1}", float(report.t_hat[k])),
        ]
    for spec in args.posthoc or []:
        j, q_j = _parse_posthoc(spec, cfg, args.q)
        chosen = posthoc_study(report, P, j, q_j)
        flags = np.zeros(m, dtype=bool)
        flags[chosen] = True
        _write_tsv(out / f"posthoc_{j + 1}.tsv", ["feature", "p_value", "rejected"],
                   [[features[i], P[i, j], bool(flags[i])] for i in report.rejected])
        summary += [(f"posthoc_q_{j + 1}", float(q_j)), (f"posthoc_n_{j + 1}", int(chosen.size))]
    summary += [("warning", w) for w in report.warnings]
    _write_tsv(out / "summary.tsv", ["key", "value"], summary)
    print(f"{report.n_rejected} of {m} features rejected; results in {out}")
    return EXIT_OK


def _parse_posthoc(spec: str, cfg, q: float):
    study, sep, level = spec.partition(":")
    try:
        j = int(study) - 1
    except ValueError:
        raise InvalidInputError(f"--posthoc expects J or J:QJ, got {spec!r}") from None
    if not 0 <= j < cfg.n:
        raise InvalidInputError(f"--posthoc study {study} outside 1..{cfg.n}")
    if sep:
        try:
            q_j = float(level)
        except ValueError:
            raise InvalidInputError(f"--posthoc level {level!r} is not a number") from None
    else:
        q_j = float(cfg.weights[cfg.group_of(j)] * q)
    return j, q_j


def cmd_simulate(args) -> int:
    if (args.preset is None) == (args.config is None):
        raise InvalidInputError("simulate needs exactly one of --preset or --config")
    exp = sim.preset(args.preset) if args.preset else sim.load_experiment(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if exp["kind"] == "figure1":
        rows = sim.run_figure1(
            n=exp["n"], m_values=exp["m_values"], reps=args.reps or exp["reps"],
            seed=args.seed if args.seed is not None else exp.get("seed", 0),
            q=0.05 if args.q is None else args.q,
            combiner=args.combiner,
        )
    else:
        methods = args.methods.split(",") if args.methods else exp["methods"]
        scenarios = exp["scenarios"]
        if args.q is not None:
            scenarios = [dataclasses.replace(s, q=args.q) for s in scenarios]
        rows = sim.run_experiment(scenarios, methods, reps=args.reps, seed=args.seed,
                                  threads=args.threads)
    sim.write_metrics_tsv(rows, out / "metrics.tsv")
    sim.write_power_curves_tsv(rows, out / "power_curves.tsv")
    print(f"{len(rows)} metric rows written to {out}")
    return EXIT_OK


COMPARE_METHODS = ("bh", "by", "adaptive-bh", "cofilter-bh", "adaptive-cofilter-bh", "parfilter")


def cmd_compare(args) -> int:
    features, P, X = io.ingest(args.pvalues, _parse_covariates(args.covariates))
    m, n = P.shape
    cfg = _resolve_config(args.config, args.u, n, m)
    methods = args.methods.split(",") if args.methods else list(COMPARE_METHODS)
    pc = baselines.pc_pvalues(P, cfg.u, args.combiner)
    results = {}
    for name in methods:
        if name == "parfilter":
            results[name] = parfilter(P, X, cfg, args.q, mode=args.mode, weight_mode=args.weights,
                                      combiner=args.combiner, seed=args.seed).rejected
        elif name == "bh":
            results[name] = baselines.bh(pc, args.q)
        elif name == "by":
            results[name] = baselines.by(pc, args.q)
        elif name == "adaptive-bh":
            results[name] = baselines.adaptive_bh_storey(pc, args.q)
        elif name == "cofilter-bh":
            results[name] = baselines.cofilter_bh(pc, args.q)
        elif name == "adaptive-cofilter-bh":
            results[name] = baselines.adaptive_cofilter_bh(pc, args.q)
        else:
            raise InvalidInputError(f"unknown method {name!r}; expected one of {COMPARE_METHODS}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    flags = {name: np.isin(np.arange(m), R) for name, R in results.items()}
    _write_tsv(out / "compare.tsv", ["feature", "pc_pvalue"] + methods,
               [[features[i], pc[i]] + [bool(flags[name][i]) for name in methods] for i in range(m)])
    for name in methods:
        print(f"{name}\t{results[name].size}")
    return EXIT_OK


def cmd_spline(args) -> int:
    path, header, body = io._read_rows(args.input)
    if args.column not in header:
        raise InvalidInputError(f"{path}: no column named {args.column!r}")
    c = header.index(args.column)
    features, values = [], []
    for r, row in enumerate(body, start=1):
        if len(row) != len(header):
            raise InvalidInputError(f"{path}: row {r} has {len(row)} fields, header has {len(header)}")
        try:
            values.append(float(row[c]))
        except ValueError:
            raise InvalidInputError(f"{path}: row {r}, column {args.column}: cannot parse {row[c]!r}") from None
        features.append(row[0])
    try:
        B = spline_basis(np.array(values), args.df)
    except InvalidInputError as exc:
        raise InvalidInputError(f"{path}, column {args.column}: {exc}") from None
    io.write_covariates(args.output, features, B)
    print(f"wrote {B.shape[1]} spline columns for {len(features)} features to {args.output}")
    return EXIT_OK


def _add_analysis_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--pvalues", required=True, help="CSV with header feature,study_1,...,study_n")
    p.add_argument("--covariates", action="append", metavar="J=FILE",
                   help="covariate CSV for study J (1-based); repeatable")
    p.add_argument("--config", help="JSON configuration, 'max-rep' or 'two-group-random:SEED'")
    p.add_argument("--u", type=int, help="replicability level for generated configurations")
    p.add_argument("--mode", choices=MODES, default="indep-adaptive")
    p.add_argument("--weights", choices=WEIGHT_MODES, default="model-a")
    p.add_argument("--q", type=float, default=0.05)
    p.add_argument("--combiner", choices=[c.value for c in Combiner], default="stouffer")
    p.add_argument("--seed", type=int, default=20240611, help="seed for optimizer restarts")
    p.add_argument("--out", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="parfilter", description="Replicability analysis with the ParFilter.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="run the ParFilter on a p-value matrix")
    _add_analysis_flags(a)
    a.add_argument("--selection", choices=["threshold", "inflated-threshold"], default="threshold")
    a.add_argument("--posthoc", action="append", metavar="J[:QJ]",
                   help="post hoc study-J discoveries at level QJ (default w_k(J) q); repeatable")
    a.add_argument("--allow-no-guarantee", action="store_true",
                   help="permit weight/mode combinations without an FDR guarantee")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", help="Monte-Carlo FDR/power experiments")
    s.add_argument("--preset", choices=sim.PRESETS)
    s.add_argument("--config", help="JSON experiment description")
    s.add_argument("--methods", help=f"comma-separated subset of {sorted(sim.METHODS)}")
    s.add_argument("--reps", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--q", type=float)
    s.add_argument("--combiner", choices=[c.value for c in Combiner], default="stouffer")
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="ParFilter next to the PC-p-value baselines")
    _add_analysis_flags(c)
    c.add_argument("--methods", help=f"comma-separated subset of {COMPARE_METHODS}")
    c.set_defaults(func=cmd_compare)

    pre = sub.add_parser("preprocess", help="covariate preprocessing")
    presub = pre.add_subparsers(dest="tool", required=True)
    sp = presub.add_parser("spline", help="natural cubic spline basis of one covariate column")
    sp.add_argument("--input", required=True)
    sp.add_argument("--column", default="c_1")
    sp.add_argument("--df", type=int, default=5)
    sp.add_argument("--output", required=True)
    sp.set_defaults(func=cmd_spline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s: %(message)s")
    if getattr(args, "q", None) is not None and not 0 < args.q < 1:
        print(f"error: --q {args.q} must lie in (0, 1)", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except (ModeMismatchError, UnsupportedModeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODE
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InvalidInputError, ParFilterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
