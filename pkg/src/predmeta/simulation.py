"""Simulation harness: data-generating mechanism, per-iteration evaluation of
prediction methods, and aggregation with Monte Carlo standard errors.

Randomness is derived from ``SeedSequence(seed, spawn_key=(iteration, ...))``
so every (scenario, iteration) pair is reproducible on its own and results
do not depend on how the work is split across processes.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .data import MetaDataset
from .exceptions import DataError
from .heterogeneity import estimate_tau2_reml
from .predictive import (
    VARIANTS,
    equi_tailed_interval,
    hts_predictive,
    parametric_interval,
    sample_pcd_all,
    skipka_predictive,
    wang_ensemble,
)
from .scoring import (
    FutureEffects,
    cohen_kappa,
    coverage,
    crps_mc,
    fisher_skewness,
    interval_skewness,
    kappa_se,
    pearson,
)

EFFECT_DISTS = ("normal", "skew-normal")
METHODS = VARIANTS + ("HTS", "Skipka", "Wang")
DEFAULT_METHODS = VARIANTS + ("HTS",)
LEVEL = 0.95


@dataclass(frozen=True)
class ScenarioSpec:
    k: int
    i2: float
    k_large: int = 0
    effect_dist: str = "normal"
    mu: float = -0.3
    alpha: float = -4.0
    n_iter: int = 4000
    n_future: int = 10_000
    B: int = 100_000
    seed: int = 0
    n_small: int = 50
    n_large: int = 500

    def __post_init__(self):
        if self.k < 2:
            raise DataError("k must be >= 2")
        if not 0 <= self.k_large <= self.k:
            raise DataError(f"k_large={self.k_large} must lie in [0, k={self.k}]")
        if not 0 <= self.i2 < 100:
            raise DataError(f"i2={self.i2} must lie in [0, 100)")
        if self.effect_dist not in EFFECT_DISTS:
            raise DataError(f"effect_dist must be one of {EFFECT_DISTS}")
        if self.n_iter < 1 or self.n_future < 1 or self.B < 2:
            raise DataError("n_iter, n_future must be >= 1 and B >= 2")

    @property
    def tau2(self) -> float:
        return tau2_from_i2(self.i2, typical_within_variance(self.n_small, self.mu))

    def label(self) -> str:
        return f"k{self.k}_i2{self.i2:g}_large{self.k_large}_{self.effect_dist}"


@dataclass(frozen=True)
class SkewNormalParams:
    xi: float
    omega: float
    alpha: float

    @property
    def delta(self) -> float:
        return self.alpha / math.sqrt(1 + self.alpha**2)

    def mean(self) -> float:
        return self.xi + self.omega * self.delta * math.sqrt(2 / math.pi)

    def variance(self) -> float:
        return self.omega**2 * (1 - 2 * self.delta**2 / math.pi)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        # delta |Z0| + sqrt(1 - delta^2) Z1 is standard skew-normal
        z0 = np.abs(rng.standard_normal(size))
        z1 = rng.standard_normal(size)
        d = self.delta
        return self.xi + self.omega * (d * z0 + math.sqrt(1 - d * d) * z1)


def moment_match_skew_normal(mean: float, variance: float, alpha: float) -> SkewNormalParams:
    """Skew-normal location/scale with the requested mean and variance."""
    if not variance > 0:
        raise ValueError("variance must be > 0")
    delta = alpha / math.sqrt(1 + alpha * alpha)
    omega = math.sqrt(variance / (1 - 2 * delta * delta / math.pi))
    xi = mean - omega * delta * math.sqrt(2 / math.pi)
    return SkewNormalParams(xi, omega, alpha)


def smd_variance(effect, n):
    """Large-sample variance of a standardised mean difference, two equal arms of total size ``n``."""
    n = np.asarray(n, dtype=float)
    n_t = n_c = n / 2
    return (n_t + n_c) / (n_t * n_c) + np.asarray(effect) ** 2 / (2 * (n_t + n_c))


def typical_within_variance(n: int = 50, effect: float = -0.3) -> float:
    return float(smd_variance(effect, n))


def tau2_from_i2(i2: float, sigma2_typical: float) -> float:
    """Between-study variance giving Higgins' I^2 (percent) against a typical within-study variance."""
    if not 0 <= i2 < 100:
        raise ValueError("i2 must lie in [0, 100)")
    f = i2 / 100.0
    return sigma2_typical * f / (1 - f)


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def _derived_seed(seed: int, *key: int) -> int:
    hi, lo = np.random.SeedSequence(seed, spawn_key=key).generate_state(2, np.uint32)
    return (int(hi) << 32) | int(lo)


def draw_effects(spec: ScenarioSpec, rng: np.random.Generator, size: int) -> np.ndarray:
    tau2 = spec.tau2
    if tau2 == 0:
        return np.full(size, spec.mu)
    if spec.effect_dist == "normal":
        return spec.mu + math.sqrt(tau2) * rng.standard_normal(size)
    return moment_match_skew_normal(spec.mu, tau2, spec.alpha).sample(rng, size)


def generate_iteration(spec: ScenarioSpec, iter_index: int):
    """One simulated meta-analysis.

    Returns ``(dataset, futures, true_effects)``. The last ``k_large`` studies
    have ``n_large`` participants. Estimates are drawn around the true effects
    with the SMD variance at the true effect; the reported variance is the
    same formula evaluated at the estimate.
    """
    rng = _rng(spec.seed, iter_index, 0)
    true = draw_effects(spec, rng, spec.k)
    futures = draw_effects(spec, rng, spec.n_future)
    n = np.full(spec.k, spec.n_small)
    if spec.k_large:
        n[spec.k - spec.k_large :] = spec.n_large
    est = true + np.sqrt(smd_variance(true, n)) * rng.standard_normal(spec.k)
    dataset = MetaDataset.from_arrays(est, smd_variance(est, n), scale="SMD")
    return dataset, FutureEffects(futures), true


def _safe(fn, *args):
    try:
        return fn(*args)
    except (ValueError, ArithmeticError):
        return float("nan")


def run_iteration(spec: ScenarioSpec, iter_index: int, methods: Sequence[str] = DEFAULT_METHODS) -> dict:
    """Evaluate every method on one simulated dataset.

    Returns ``{"gamma_est", "gamma_true", "methods": {name: {...} or {"error": msg}}}``.
    Per method: coverage of the 95% interval, width, interval skewness about the
    predictive median, and mean CRPS over the future effects.
    """
    dataset, futures, true = generate_iteration(spec, iter_index)
    out = {
        "gamma_est": _safe(fisher_skewness, dataset.effects, 1.0 / dataset.variances),
        "gamma_true": _safe(fisher_skewness, true),
        "methods": {},
    }
    try:
        tau2_hat = estimate_tau2_reml(dataset).value
    except Exception as exc:  # noqa: BLE001 - recorded as non-convergence
        for m in methods:
            out["methods"][m] = {"error": f"REML: {exc}"}
        return out

    pcd = [m for m in methods if m in VARIANTS]
    samples = {}
    if pcd:
        try:
            samples = sample_pcd_all(dataset, tau2_hat, spec.B, _derived_seed(spec.seed, iter_index, 1), pcd)
        except Exception as exc:  # noqa: BLE001
            for m in pcd:
                out["methods"][m] = {"error": str(exc)}
    prng = _rng(spec.seed, iter_index, 2)
    for m in methods:
        if m in out["methods"]:
            continue
        try:
            if m in VARIANTS:
                draws = samples[m].draws
                interval = equi_tailed_interval(draws, LEVEL)
                center = float(np.median(draws))
            elif m in ("HTS", "Skipka"):
                p = hts_predictive(dataset, tau2_hat) if m == "HTS" else skipka_predictive(dataset, tau2_hat)
                interval = parametric_interval(p, LEVEL)
                center = p.median()
                draws = p.sample(prng, spec.B)
            elif m == "Wang":
                draws = wang_ensemble(dataset, tau2_hat).draws
                interval = equi_tailed_interval(draws, LEVEL)
                center = float(np.median(draws))
            else:
                raise ValueError(f"unknown method {m!r}")
            width = interval.upper - interval.lower
            out["methods"][m] = {
                "coverage": coverage(interval, futures),
                "width": width,
                "skewness": interval_skewness(interval.lower, interval.upper, center) if width > 0 else 0.0,
                "crps": float(np.mean(crps_mc(draws, futures.values))),
            }
        except Exception as exc:  # noqa: BLE001
            out["methods"][m] = {"error": str(exc)}
    return out


def mcse(values) -> float:
    """Monte Carlo standard error of a mean: sd / sqrt(n) (0 for n < 2)."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return 0.0
    return float(v.std(ddof=1) / math.sqrt(v.size))


def required_iterations(between_var, target_mcse) -> int:
    """Iterations needed so the MCSE of a mean stays below ``target_mcse``.

    Computed in exact rational arithmetic from the decimal inputs.
    """
    n = Fraction(str(between_var)) / Fraction(str(target_mcse)) ** 2
    return math.ceil(n)


MEASURES = ("coverage", "width", "crps", "pearson_est", "pearson_true", "kappa_est", "kappa_true")


@dataclass
class ScenarioResult:
    spec: ScenarioSpec
    measures: dict = field(default_factory=dict)  # method -> measure -> (estimate, mcse, n)
    failures: dict = field(default_factory=dict)  # method -> count

    def rows(self):
        for method, ms in self.measures.items():
            for measure in MEASURES:
                est, se, n = ms[measure]
                yield method, measure, est, se, n


def _corr_summary(beta, gamma):
    ok = np.isfinite(gamma)
    b, g = beta[ok], gamma[ok]
    n = int(ok.sum())
    try:
        r = pearson(b, g)
        r_se = (1 - r * r) / math.sqrt(n)
    except ValueError:
        r, r_se = float("nan"), float("nan")
    if n:
        kap, kap_se = cohen_kappa(b, g), kappa_se(b, g)
    else:
        kap, kap_se = float("nan"), float("nan")
    return (r, r_se, n), (kap, kap_se, n)


def aggregate(spec: ScenarioSpec, outcomes: Sequence[dict], methods: Sequence[str]) -> ScenarioResult:
    """Means with MCSE per method, using only iterations where the method succeeded."""
    res = ScenarioResult(spec)
    g_est = np.array([o["gamma_est"] for o in outcomes])
    g_true = np.array([o["gamma_true"] for o in outcomes])
    for m in methods:
        ok = [i for i, o in enumerate(outcomes) if "error" not in o["methods"][m]]
        res.failures[m] = len(outcomes) - len(ok)
        vals = {key: np.array([outcomes[i]["methods"][m][key] for i in ok]) for key in ("coverage", "width", "crps", "skewness")}
        n = len(ok)
        ms = {}
        for key in ("coverage", "width", "crps"):
            ms[key] = (float(vals[key].mean()) if n else float("nan"), mcse(vals[key]), n)
        beta = vals["skewness"]
        ms["pearson_est"], ms["kappa_est"] = _corr_summary(beta, g_est[ok])
        ms["pearson_true"], ms["kappa_true"] = _corr_summary(beta, g_true[ok])
        res.measures[m] = ms
    return res


def run_scenario(spec: ScenarioSpec, methods: Sequence[str] = DEFAULT_METHODS, workers: int = 1) -> ScenarioResult:
    return run_grid([spec], methods, workers)[0]


def _task(args):
    spec, it, methods = args
    return run_iteration(spec, it, methods)


def run_grid(specs: Sequence[ScenarioSpec], methods: Sequence[str] = DEFAULT_METHODS, workers: int = 1):
    """Run every (scenario, iteration) pair and aggregate per scenario in index order."""
    methods = tuple(methods)
    if not methods:
        raise ValueError("methods must be non-empty")
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise DataError(f"unknown methods {unknown}; expected a subset of {METHODS}")
    tasks = [(spec, it, methods) for spec in specs for it in range(spec.n_iter)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_task, tasks, chunksize=max(1, len(tasks) // (8 * workers))))
    else:
        outcomes = [_task(t) for t in tasks]
    results, pos = [], 0
    for spec in specs:
        results.append(aggregate(spec, outcomes[pos : pos + spec.n_iter], methods))
        pos += spec.n_iter
    return results


# ---------------------------------------------------------------- config / io

_GRID_KEYS = ("k", "i2", "k_large", "effect_dist")
_SCALAR_KEYS = ("mu", "alpha", "n_iter", "n_future", "B", "n_small", "n_large")


def specs_from_config(config: dict) -> tuple[list[ScenarioSpec], tuple[str, ...], int]:
    """Expand a grid config into scenario specs.

    Keys ``k``, ``i2``, ``k_large``, ``effect_dist`` take lists and are crossed
    full-factorially; ``cells`` adds explicit extra scenarios. Scalars
    (``n_iter``, ``n_future``, ``B``, ``mu``, ``alpha``, ...) apply to all.
    Every spec is validated before returning.
    """
    if not isinstance(config, dict):
        raise DataError("grid config must be a JSON object")
    master = int(config.get("seed", 0))
    methods = tuple(config.get("methods", DEFAULT_METHODS))
    unknown = [m for m in methods if m not in METHODS]
    if unknown or not methods:
        raise DataError(f"unknown or empty methods {unknown}; expected a subset of {METHODS}")
    scalars = {key: config[key] for key in _SCALAR_KEYS if key in config}
    cells = []
    if any(key in config for key in _GRID_KEYS):
        axes = []
        for key in _GRID_KEYS:
            val = config.get(key, {"k_large": [0], "effect_dist": ["normal"]}.get(key))
            if val is None:
                raise DataError(f"grid config needs {key!r}")
            axes.append(val if isinstance(val, list) else [val])
        cells.extend(dict(zip(_GRID_KEYS, combo)) for combo in itertools.product(*axes))
    cells.extend(config.get("cells", []))
    if not cells:
        raise DataError("grid config defines no scenarios")
    specs = []
    for idx, cell in enumerate(cells):
        unknown_keys = set(cell) - set(_GRID_KEYS) - set(_SCALAR_KEYS)
        if unknown_keys:
            raise DataError(f"cell {idx}: unknown keys {sorted(unknown_keys)}")
        params = {**scalars, **cell}
        try:
            specs.append(ScenarioSpec(seed=_derived_seed(master, idx), **params))
        except TypeError as exc:
            raise DataError(f"cell {idx}: {exc}") from None
        except DataError as exc:
            raise DataError(f"cell {idx}: {exc}") from None
    return specs, methods, master


def load_grid_config(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: line {exc.lineno}: {exc.msg}") from None


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "NA"
    return f"{x:.6g}"


RESULT_COLUMNS = ("scenario", "k", "i2", "k_large", "effect_dist", "method", "measure", "estimate", "mcse", "n_convergent")


def results_csv(results: Sequence[ScenarioResult]) -> str:
    """Tidy CSV: one row per scenario x method x measure."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in results:
        s = r.spec
        for method, measure, est, se, n in r.rows():
            w.writerow([s.label(), s.k, _fmt(float(s.i2)), s.k_large, s.effect_dist, method, measure, _fmt(est), _fmt(se), n])
        for method, nfail in r.failures.items():
            w.writerow([s.label(), s.k, _fmt(float(s.i2)), s.k_large, s.effect_dist, method, "n_failed", nfail, "0", s.n_iter - nfail])
    return buf.getvalue()


def write_results(results: Sequence[ScenarioResult], out_dir, config: Optional[dict] = None, master_seed: int = 0):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(results_csv(results), encoding="utf-8")
    manifest = {
        "seed": master_seed,
        "grid": config,
        "scenarios": [asdict(r.spec) for r in results],
        "versions": {
            "predmeta": __version__,
            "numpy": np.__version__,
            "scipy": __import__("scipy").__version__,
            "python": platform.python_version(),
        },
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return out / "results.csv", out / "manifest.json"
