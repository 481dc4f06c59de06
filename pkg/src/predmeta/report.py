"""Structured analysis report for one dataset.

Each section is computed independently; a failure in one section is recorded
as ``{"error": ..., "type": ...}`` and does not stop the others.
"""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .data import MetaDataset
from .edgington import EdgingtonCD
from .exceptions import DataError, NumericalError
from .heterogeneity import (
    estimate_tau2_pm,
    estimate_tau2_reml,
    generalized_q,
    higgins_i2,
    ivw_mean_hksj,
)
from .predictive import (
    VARIANTS,
    confidence_probability,
    equi_tailed_interval,
    hcdp_interval,
    hts_predictive,
    parametric_confidence,
    parametric_interval,
    sample_marginal_mu,
    sample_pcd_all,
    skipka_predictive,
    wang_ensemble,
)
from .scoring import interval_skewness, sample_skewness

METHOD_NAMES = {
    "fixed": "PCD-fixed",
    "simplified": "PCD-simplified",
    "full": "PCD-full",
    "hts": "HTS",
    "skipka": "Skipka",
    "wang": "Wang",
}
MC_METHODS = ("fixed", "simplified", "full")
DEFAULT_LEVELS = (0.95, 0.99)


def round_sig(obj, digits: int = 6):
    """Round every float in a nested structure to ``digits`` significant digits."""
    if isinstance(obj, dict):
        return {k: round_sig(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_sig(v, digits) for v in obj]
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return None
        return float(f"{x:.{digits}g}")
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _section(fn):
    try:
        return fn()
    except (DataError, NumericalError, ValueError, ArithmeticError) as exc:
        return {"error": str(exc), "type": type(exc).__name__}


def _interval_summary(lo, hi, center):
    width = hi - lo
    return {
        "lower": lo,
        "upper": hi,
        "width": width,
        "skewness": interval_skewness(lo, hi, center) if width > 0 else 0.0,
    }


def _sample_summary(draws, levels, delta):
    med = float(np.median(draws))
    out = {"median": med, "intervals": []}
    for lvl in levels:
        et = equi_tailed_interval(draws, lvl)
        hd = hcdp_interval(draws, lvl)
        out["intervals"].append(
            {
                "level": lvl,
                "equi_tailed": _interval_summary(et.lower, et.upper, med),
                "hcdp": _interval_summary(hd.lower, hd.upper, med),
            }
        )
    out["conf_ge_delta"] = confidence_probability(draws, delta, ">=")
    return out


def _parametric_summary(p, levels, delta):
    med = p.median()
    out = {"family": p.family, "location": p.location, "scale": p.scale, "df": p.df, "median": med, "intervals": []}
    for lvl in levels:
        et = parametric_interval(p, lvl)
        s = _interval_summary(et.lower, et.upper, med)
        s["skewness"] = 0.0  # symmetric family; avoids ppf round-off
        # symmetric unimodal: shortest interval is the equi-tailed one
        out["intervals"].append({"level": lvl, "equi_tailed": s, "hcdp": dict(s)})
    out["conf_ge_delta"] = parametric_confidence(p, delta, ">=")
    return out


def _tau2_value(est_sections, method):
    sec = est_sections[method]
    if "error" in sec:
        raise NumericalError(f"{method.upper()} estimate unavailable: {sec['error']}")
    return sec["value"]


def build_report(
    dataset: MetaDataset,
    tau2_method: str = "pm",
    methods: Sequence[str] = tuple(METHOD_NAMES),
    B: int = 100_000,
    seed: Optional[int] = None,
    levels: Sequence[float] = DEFAULT_LEVELS,
    delta: float = 0.0,
    pcd_tau2_method: Optional[str] = None,
    workers: int = 1,
) -> dict:
    """Run the full analysis and return a JSON-ready dict (unrounded).

    ``tau2_method`` picks the plug-in between-study variance for the
    conditional CD, HKSJ and the predictive methods; ``pcd_tau2_method``
    overrides it for the three PCD variants only.
    """
    for m in methods:
        if m not in METHOD_NAMES:
            raise ValueError(f"unknown method {m!r}; choose from {list(METHOD_NAMES)}")
    for t in (tau2_method, pcd_tau2_method):
        if t is not None and t not in ("pm", "reml"):
            raise ValueError("tau2 method must be 'pm' or 'reml'")
    mc = [m for m in methods if m in MC_METHODS]
    if mc and seed is None:
        raise ValueError(f"methods {mc} are Monte Carlo based and need an explicit seed")
    pcd_method = pcd_tau2_method or tau2_method

    report = {
        "version": __version__,
        "dataset": {"k": dataset.k, "scale": dataset.scale, "labels": dataset.labels},
        "settings": {
            "tau2_method": tau2_method,
            "pcd_tau2_method": pcd_method,
            "methods": [METHOD_NAMES[m] for m in methods],
            "B": B,
            "seed": seed,
            "levels": list(levels),
            "delta": delta,
        },
    }

    def pm():
        est = estimate_tau2_pm(dataset)
        return est.to_dict()

    def reml():
        return estimate_tau2_reml(dataset).to_dict()

    est = {"pm": _section(pm), "reml": _section(reml)}
    report["heterogeneity"] = {
        "Q0": _section(lambda: float(generalized_q(dataset, 0.0))),
        "I2": _section(lambda: higgins_i2(dataset)),
        **est,
    }

    def hksj():
        return ivw_mean_hksj(dataset, _tau2_value(est, tau2_method), levels[0]).to_dict()

    report["mean_hksj"] = _section(hksj)

    def cd_conditional():
        tau2 = _tau2_value(est, tau2_method)
        cd = EdgingtonCD(dataset, tau2)
        lo, hi = cd.interval(levels[0])
        mom = cd.moments()
        return {
            "tau2": tau2,
            "median": cd.median(),
            "ci": [lo, hi],
            "level": levels[0],
            "p_two_sided_at_0": cd.two_sided_p(0.0),
            "conf_mu_lt_0": cd.cdf(0.0),
            "mean": mom["mean"],
            "sd": mom["sd"],
            "skewness": mom["skewness"],
        }

    report["edgington_cd"] = _section(cd_conditional)

    def cd_marginal():
        mu = sample_marginal_mu(dataset, B, seed, workers)
        c0 = float(np.mean(mu <= 0.0))
        lo, hi = np.quantile(mu, [0.5 - levels[0] / 2, 0.5 + levels[0] / 2])
        return {
            "median": float(np.median(mu)),
            "mean": float(mu.mean()),
            "ci": [float(lo), float(hi)],
            "level": levels[0],
            "p_two_sided_at_0": 2 * min(c0, 1 - c0),
            "conf_mu_lt_0": c0,
            "skewness": sample_skewness(mu),
        }

    if seed is not None:
        report["edgington_cd_marginal"] = _section(cd_marginal)

    pred = {}
    pcd = tuple(METHOD_NAMES[m] for m in mc)
    if pcd:
        try:
            t = _tau2_value(est, pcd_method)
            draws = sample_pcd_all(dataset, t, B, seed, pcd, workers)
            for name in pcd:
                pred[name] = _section(lambda d=draws[name].draws: _sample_summary(d, levels, delta))
                if "error" not in pred[name]:
                    pred[name]["tau2_plugin"] = t
        except (DataError, NumericalError, ValueError) as exc:
            for name in pcd:
                pred[name] = {"error": str(exc), "type": type(exc).__name__}
    for m in methods:
        if m in MC_METHODS:
            continue
        name = METHOD_NAMES[m]

        def one(m=m):
            t = _tau2_value(est, tau2_method)
            if m == "hts":
                s = _parametric_summary(hts_predictive(dataset, t), levels, delta)
            elif m == "skipka":
                s = _parametric_summary(skipka_predictive(dataset, t), levels, delta)
            else:
                s = _sample_summary(wang_ensemble(dataset, t).draws, levels, delta)
            s["tau2_plugin"] = t
            return s

        pred[name] = _section(one)
    report["predictive"] = pred
    return report


def _flatten(obj, prefix=""):
    if isinstance(obj, dict):
        for k, v in obj.items():
            yield from _flatten(v, f"{prefix}.{k}" if prefix else str(k))
    elif isinstance(obj, list) and any(isinstance(v, (dict, list)) for v in obj):
        for i, v in enumerate(obj):
            yield from _flatten(v, f"{prefix}[{i}]")
    elif isinstance(obj, list):
        yield prefix, ";".join("NA" if v is None else str(v) for v in obj)
    else:
        yield prefix, "NA" if obj is None else str(obj)


def report_to_csv(report: dict) -> str:
    """Flatten a (rounded) report into ``key,value`` rows."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["key", "value"])
    for k, v in _flatten(report):
        w.writerow([k, v])
    return buf.getvalue()


def write_grids(dataset: MetaDataset, report: dict, out_dir, B: int, seed: Optional[int], bins: int = 200, workers: int = 1):
    """Plot-ready CSV grids: CD density/CDF and predictive histograms."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    cd_sec = report.get("edgington_cd", {})
    if "error" not in cd_sec:
        g = EdgingtonCD(dataset, cd_sec["tau2"]).grid()
        path = out / "cd_grid.csv"
        with path.open("w", encoding="utf-8") as fh:
            fh.write("mu,cdf,pdf\n")
            for row in zip(g["mu"], g["cdf"], g["pdf"]):
                fh.write(",".join(f"{v:.6g}" for v in row) + "\n")
        written.append(path)
    pcd = [v for v in VARIANTS if v in report["predictive"] and "error" not in report["predictive"][v]]
    if pcd and seed is not None:
        t = report["predictive"][pcd[0]]["tau2_plugin"]
        draws = sample_pcd_all(dataset, t, B, seed, tuple(pcd), workers)
        for name in pcd:
            dens, edges = np.histogram(draws[name].draws, bins=bins, density=True)
            path = out / f"{name}_hist.csv"
            with path.open("w", encoding="utf-8") as fh:
                fh.write("left,right,density\n")
                for a, b, d in zip(edges[:-1], edges[1:], dens):
                    fh.write(f"{a:.6g},{b:.6g},{d:.6g}\n")
            written.append(path)
    return written
