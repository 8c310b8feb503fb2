"""Command line interface: ``fit``, ``simulate`` and ``bootstrap``.

Exit codes: 0 on success, 1 on usage or configuration errors, 2 on
numerical failure.

Output files
------------
``fit --data D --config C --method M --out DIR``
    ``selected.json``  selected covariate names plus the tuning record.
    ``beta.csv``       columns ``t,covariate,estimate`` on the evaluation grid.
``simulate --config C --out DIR``
    ``selection.csv``  columns ``method,variable,selection_pct`` (one row
                       per method and variable).
    ``summary.csv``    one row per method: ``method,<variable columns>,
                       avg_model_size``.
    ``estimation.csv`` columns ``method,variable,bias,mse`` for the
                       signal-carrying variables.
    ``report.json``    everything above plus failure counts and the seed.
``bootstrap --data D --config C -B N --out DIR``
    ``band_<covariate>.csv``  columns ``t,lower,upper,estimate``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .bootstrap import bootstrap_ci
from .dataio import ingest_long_csv, parse_config_file
from .errors import NumericalError
from .flcm import FitConfig, FitResult, fit_flcm
from .sim import SimConfig, StudyReport, run_study

__all__ = ["main", "run"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits with code 2
        raise UsageError(f"{message}\n{self.format_usage()}")


FIT_KEYS = {f.name for f in dataclasses.fields(FitConfig)}
SIM_KEYS = {f.name for f in dataclasses.fields(SimConfig)}
DATA_KEYS = {"response", "covariates", "domain_min", "domain_max",
             "eval_points", "seed", "workers"}


def _fit_config_from(mapping: dict, method: str | None) -> FitConfig:
    kwargs = {k: v for k, v in mapping.items() if k in FIT_KEYS}
    unknown = set(mapping) - FIT_KEYS - DATA_KEYS
    if unknown:
        raise UsageError(f"unknown config keys for fit: {sorted(unknown)}")
    if method is not None:
        kwargs["method"] = method
    if "psi_grid" in kwargs and np.isscalar(kwargs["psi_grid"]):
        kwargs["psi_grid"] = (kwargs["psi_grid"],)
    try:
        return FitConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _sim_config_from(mapping: dict) -> SimConfig:
    unknown = set(mapping) - SIM_KEYS
    if unknown:
        raise UsageError(f"unknown config keys for simulate: {sorted(unknown)}")
    kwargs = dict(mapping)
    for key in ("methods", "psi_grid"):
        if key in kwargs and np.isscalar(kwargs[key]):
            kwargs[key] = (kwargs[key],)
    try:
        return SimConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_fit_outputs(fit: FitResult, data_domain, out_dir: Path, eval_points: int):
    out_dir.mkdir(parents=True, exist_ok=True)
    info = fit.tuning
    payload = {
        "selected": fit.selected_names,
        "tuning": {
            "method": info.method,
            "family": info.family,
            "lambda": info.lam,
            "psi": info.psi,
            "phi": info.phi,
            "ebic": info.ebic,
            "ebic_gamma": info.ebic_gamma,
            "rss": info.rss,
            "df": info.df,
            "k_selected": info.k_selected,
            "n_rows": info.n_rows,
            "whitened": info.whitened,
        },
    }
    (out_dir / "selected.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    grid = np.linspace(data_domain[0], data_domain[1], eval_points)
    lines = ["t,covariate,estimate"]
    for j, name in enumerate(fit.covariate_names):
        vals = fit.beta(j, grid)
        lines.extend(f"{_fmt(t)},{name},{_fmt(v)}" for t, v in zip(grid, vals))
    (out_dir / "beta.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_study_outputs(report: StudyReport, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["method,variable,selection_pct"]
    for m in report.methods:
        for name, pct in zip(report.variable_names, report.selection_pct[m]):
            lines.append(f"{m},{name},{_fmt(pct)}")
    (out_dir / "selection.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    header = "method," + ",".join(report.variable_names) + ",avg_model_size"
    lines = [header]
    for m in report.methods:
        row = ",".join(_fmt(p) for p in report.selection_pct[m])
        lines.append(f"{m},{row},{_fmt(report.avg_model_size[m])}")
    (out_dir / "summary.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    lines = ["method,variable,bias,mse"]
    for m in report.methods:
        for pos, j in enumerate(report.active_indices):
            lines.append(
                f"{m},{report.variable_names[j]},"
                f"{_fmt(report.bias[m][pos])},{_fmt(report.mse[m][pos])}"
            )
    (out_dir / "estimation.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    payload = {
        "study": report.study,
        "seed": report.seed,
        "replicates": report.replicates,
        "methods": report.methods,
        "variables": report.variable_names,
        "selection_pct": {m: [float(x) for x in report.selection_pct[m]]
                          for m in report.methods},
        "avg_model_size": {m: float(report.avg_model_size[m]) for m in report.methods},
        "bias": {m: [float(x) for x in report.bias[m]] for m in report.methods},
        "mse": {m: [float(x) for x in report.mse[m]] for m in report.methods},
        "n_completed": report.n_completed,
        "n_failed": report.n_failed,
    }
    (out_dir / "report.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _safe_name(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name)


def build_parser() -> _Parser:
    parser = _Parser(prog="flcreg", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit one dataset and emit the selection")
    p_fit.add_argument("--data", required=True, help="long-format CSV")
    p_fit.add_argument("--config", default=None, help="key = value config file")
    p_fit.add_argument("--method", choices=["flasso", "fscad", "fmcp"], default=None)
    p_fit.add_argument("--out", required=True, help="output directory")

    p_sim = sub.add_parser("simulate", help="run the replication study")
    p_sim.add_argument("--config", default=None)
    p_sim.add_argument("--out", required=True)

    p_boot = sub.add_parser("bootstrap", help="subject-level bootstrap bands")
    p_boot.add_argument("--data", required=True)
    p_boot.add_argument("--config", default=None)
    p_boot.add_argument("-B", type=int, default=200, dest="B")
    p_boot.add_argument("--seed", type=int, default=0)
    p_boot.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        mapping = parse_config_file(args.config) if args.config else {}

        if args.command == "simulate":
            config = _sim_config_from(mapping)
            report = run_study(config)
            _write_study_outputs(report, Path(args.out))
            return 0

        response = mapping.pop("response", "response")
        covariates = mapping.pop("covariates", None)
        if covariates is not None and np.isscalar(covariates):
            covariates = (covariates,)
        domain = None
        if "domain_min" in mapping or "domain_max" in mapping:
            if not ("domain_min" in mapping and "domain_max" in mapping):
                raise UsageError("domain_min and domain_max must be given together")
            domain = (float(mapping.pop("domain_min")), float(mapping.pop("domain_max")))
        eval_points = int(mapping.pop("eval_points", 100))
        seed = int(mapping.pop("seed", 0))
        workers = int(mapping.pop("workers", 1))

        data = ingest_long_csv(args.data, response=response,
                               covariates=list(covariates) if covariates else None,
                               domain=domain)

        if args.command == "fit":
            config = _fit_config_from(mapping, args.method)
            fit = fit_flcm(data, config)
            _write_fit_outputs(fit, data.domain, Path(args.out), eval_points)
            return 0

        # bootstrap
        config = _fit_config_from(mapping, None)
        result = bootstrap_ci(data, config, B=args.B, seed=args.seed,
                              eval_points=eval_points, workers=workers)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        for j, name in enumerate(result.covariate_names):
            lines = ["t,lower,upper,estimate"]
            for g in range(result.eval_grid.size):
                lines.append(
                    f"{_fmt(result.eval_grid[g])},{_fmt(result.lower[j, g])},"
                    f"{_fmt(result.upper[j, g])},{_fmt(result.estimate[j, g])}"
                )
            (out_dir / f"band_{_safe_name(name)}.csv").write_text(
                "\n".join(lines) + "\n", encoding="utf-8")
        return 0

    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


def run() -> None:
    sys.exit(main())
