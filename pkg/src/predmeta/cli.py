"""Command-line interface: ``predmeta analyze | simulate | crps``.

Exit codes: 0 success, 1 usage, 2 data validation, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .data import read_csv
from .datasets import covid_corticosteroids
from .exceptions import DataError, NumericalError
from .predictive import read_column, read_samples
from .report import METHOD_NAMES, build_report, report_to_csv, round_sig, write_grids
from .scoring import crps_mc

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _emit(text: str, output):
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _load_dataset(args):
    if args.input.startswith("builtin:"):
        name = args.input.split(":", 1)[1]
        if name in ("covid", "covid-reported"):
            return covid_corticosteroids("reported")
        if name == "covid-counts":
            return covid_corticosteroids("counts")
        raise DataError(f"unknown builtin dataset {name!r}; try builtin:covid or builtin:covid-counts")
    return read_csv(args.input, continuity=args.continuity)


def cmd_analyze(args) -> int:
    methods = []
    for item in args.variants:
        methods.extend(x.strip().lower() for x in item.split(",") if x.strip())
    bad = [m for m in methods if m not in METHOD_NAMES]
    if bad:
        raise UsageError(f"unknown variants {bad}; choose from {list(METHOD_NAMES)}")
    mc = [m for m in methods if m in ("fixed", "simplified", "full")]
    if mc and args.seed is None:
        raise UsageError(f"variants {mc} are Monte Carlo based; pass --seed for a reproducible run")
    levels = tuple(args.level) if args.level else (0.95, 0.99)
    if any(not 0 < lv < 1 for lv in levels):
        raise UsageError("--level values must lie in (0, 1)")
    if args.B < 2:
        raise UsageError("--B must be >= 2")
    dataset = _load_dataset(args)
    report = build_report(
        dataset,
        tau2_method=args.tau2,
        methods=methods,
        B=args.B,
        seed=args.seed,
        levels=levels,
        delta=args.delta,
        pcd_tau2_method=args.pcd_tau2,
        workers=args.workers,
    )
    if args.grid_dir:
        write_grids(dataset, report, args.grid_dir, args.B, args.seed, workers=args.workers)
    rounded = round_sig(report)
    text = json.dumps(rounded, indent=2) + "\n" if args.format == "json" else report_to_csv(rounded)
    _emit(text, args.output)
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .simulation import load_grid_config, run_grid, specs_from_config, write_results

    config = load_grid_config(args.config)
    if args.seed is not None:
        config = {**config, "seed": args.seed}
    specs, methods, master = specs_from_config(config)  # validates before any work
    results = run_grid(specs, methods, workers=args.workers)
    csv_path, manifest = write_results(results, args.out, config, master)
    sys.stderr.write(f"wrote {csv_path} and {manifest}\n")
    return EXIT_OK


def cmd_crps(args) -> int:
    samples = read_samples(args.samples)
    outcomes = read_column(args.outcomes)
    if outcomes.size == 0:
        raise DataError(f"{args.outcomes}: no outcomes")
    scores = np.atleast_1d(crps_mc(samples, outcomes))
    if args.format == "json":
        body = {"B": samples.B, "n_outcomes": int(outcomes.size), "mean_crps": float(scores.mean()), "crps": scores.tolist()}
        text = json.dumps(round_sig(body), indent=2) + "\n"
    else:
        text = "outcome,crps\n" + "".join(f"{y:.6g},{s:.6g}\n" for y, s in zip(outcomes, scores))
    _emit(text, args.output)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="predmeta", description="Predictive confidence distributions for random-effects meta-analysis.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("analyze", help="analyse one dataset")
    a.add_argument("input", help="CSV (label,effect,se or label,events1,total1,events2,total2) or builtin:covid")
    a.add_argument("--tau2", choices=("pm", "reml"), default="pm", help="plug-in tau^2 estimator")
    a.add_argument("--pcd-tau2", choices=("pm", "reml"), default=None, help="override the plug-in for the PCD variants")
    a.add_argument(
        "--variants",
        action="append",
        default=None,
        help="comma list from fixed,simplified,full,hts,skipka,wang (repeatable; default all)",
    )
    a.add_argument("--B", type=int, default=100_000, help="Monte Carlo draws per variant")
    a.add_argument("--seed", type=int, default=None, help="required for Monte Carlo variants")
    a.add_argument("--level", type=float, action="append", help="interval level (repeatable; default 0.95 and 0.99)")
    a.add_argument("--delta", type=float, default=0.0, help="threshold for Conf(theta_new >= delta)")
    a.add_argument("--format", choices=("json", "csv"), default="json")
    a.add_argument("--output", "-o", help="write here instead of stdout")
    a.add_argument("--grid-dir", help="also write plot-ready CSV grids here")
    a.add_argument("--continuity", action="store_true", help="add 0.5 to all cells of a table with a zero count")
    a.add_argument("--workers", type=int, default=1)
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", help="run a simulation grid from a JSON config")
    s.add_argument("config")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("crps", help="score a sample file against observed outcomes")
    c.add_argument("samples", help="draws written by analyze/write_samples (CSV with header, or .bin)")
    c.add_argument("outcomes", help="CSV with a header and outcomes in the first column")
    c.add_argument("--format", choices=("json", "csv"), default="json")
    c.add_argument("--output", "-o")
    c.set_defaults(func=cmd_crps)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "variants", "absent") is None:
            args.variants = [",".join(METHOD_NAMES)]
        if getattr(args, "workers", 1) < 1:
            raise UsageError("--workers must be >= 1")
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    except (DataError, FileNotFoundError, IsADirectoryError, UnicodeDecodeError) as exc:
        sys.stderr.write(f"data error: {exc}\n")
        return EXIT_DATA
    except NumericalError as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return EXIT_NUMERIC
    except ValueError as exc:
        sys.stderr.write(f"data error: {exc}\n")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
