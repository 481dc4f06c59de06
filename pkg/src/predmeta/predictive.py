"""Predictive distributions for the effect in a new study.

Monte Carlo predictive confidence distributions built on Edgington's CD
(fixed / simplified / full handling of tau^2), the normal (Skipka) and
t (Higgins-Thompson-Spiegelhalter) comparators, ensemble estimates, and
interval / probability summaries of predictive draws.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy import stats

from .data import MetaDataset
from .edgington import quantile_batch
from .exceptions import DataError
from .heterogeneity import ivw_mean, tau2_from_q

DEFAULT_B = 100_000
BLOCK_SIZE = 8192
VARIANTS = ("PCD-fixed", "PCD-simplified", "PCD-full")
_ALIASES = {"fixed": "PCD-fixed", "simplified": "PCD-simplified", "full": "PCD-full"}


def canonical_variant(name: str) -> str:
    name = _ALIASES.get(name.lower(), name)
    if name not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; expected one of {VARIANTS}")
    return name


@dataclass(frozen=True)
class PredictiveSamples:
    draws: np.ndarray
    variant: str
    seed: Optional[int] = None
    tau2_used: Union[float, str, None] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        d = np.asarray(self.draws, dtype=float)
        if d.ndim != 1 or d.size < 1:
            raise ValueError("draws must be a non-empty 1-d array")
        if not np.all(np.isfinite(d)):
            raise ValueError("draws must be finite")
        d.flags.writeable = False
        object.__setattr__(self, "draws", d)

    @property
    def B(self) -> int:
        return self.draws.size

    def median(self) -> float:
        return float(np.median(self.draws))

    def sidecar(self) -> dict:
        return {"variant": self.variant, "seed": self.seed, "B": self.B, "tau2": self.tau2_used, **self.meta}


@dataclass(frozen=True)
class ParametricPredictive:
    """Normal or location-scale t predictive distribution."""

    family: str
    location: float
    scale: float
    df: Optional[int] = None

    def __post_init__(self):
        if self.family not in ("normal", "t"):
            raise ValueError("family must be 'normal' or 't'")
        if not self.scale > 0:
            raise ValueError("scale must be > 0")
        if self.family == "t" and (self.df is None or self.df < 1):
            raise ValueError("t family needs df >= 1")

    @property
    def _std(self):
        return stats.norm if self.family == "normal" else stats.t(self.df)

    def ppf(self, p):
        return self.location + self.scale * self._std.ppf(p)

    def cdf(self, x):
        return self._std.cdf((np.asarray(x) - self.location) / self.scale)

    def median(self) -> float:
        return self.location

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.family == "normal":
            z = rng.standard_normal(size)
        else:
            z = rng.standard_t(self.df, size)
        return self.location + self.scale * z


@dataclass(frozen=True)
class PredictionInterval:
    lower: float
    upper: float
    level: float
    kind: str

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise ValueError("lower must be <= upper")
        if not 0 < self.level < 1:
            raise ValueError("level must be in (0, 1)")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def to_dict(self) -> dict:
        return {"lower": self.lower, "upper": self.upper, "level": self.level, "kind": self.kind, "width": self.width}


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(block,))))


def _open_uniform(rng: np.random.Generator, n: int) -> np.ndarray:
    # strictly inside (0, 1)
    return (rng.integers(0, 2**53, size=n) + 0.5) * 2.0**-53


def _draw_block(dataset, variants, tau2_hat, seed, block, n):
    """Draws for one block; returns {variant: (tau2, mu, theta_new)}."""
    theta, var = dataset.effects, dataset.variances
    rng = _block_rng(seed, block)
    # fixed consumption order keeps W, U and Z shared across variants for a seed
    w = rng.chisquare(dataset.k - 1, size=n)
    u = _open_uniform(rng, n)
    z = rng.standard_normal(n)
    out = {}
    mu_plug = tau2_star = None
    if "PCD-fixed" in variants or "PCD-simplified" in variants:
        mu_plug = quantile_batch(theta, var, float(tau2_hat), u)
    if "PCD-simplified" in variants or "PCD-full" in variants:
        tau2_star = tau2_from_q(dataset, w)
    if "PCD-fixed" in variants:
        t = np.full(n, float(tau2_hat))
        out["PCD-fixed"] = (t, mu_plug, mu_plug + math.sqrt(tau2_hat) * z)
    if "PCD-simplified" in variants:
        out["PCD-simplified"] = (tau2_star, mu_plug, mu_plug + np.sqrt(tau2_star) * z)
    if "PCD-full" in variants:
        mu_full = quantile_batch(theta, var, tau2_star, u)
        out["PCD-full"] = (tau2_star, mu_full, mu_full + np.sqrt(tau2_star) * z)
    return out


def _run_blocks(dataset, variants, tau2_hat, B, seed, workers, block_size):
    starts = list(range(0, B, block_size))
    jobs = [(dataset, variants, tau2_hat, seed, i, min(block_size, B - s)) for i, s in enumerate(starts)]
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda a: _draw_block(*a), jobs))
    else:
        parts = [_draw_block(*a) for a in jobs]
    return {
        v: tuple(np.concatenate([p[v][i] for p in parts]) for i in range(3)) for v in variants
    }


def sample_pcd(
    dataset: MetaDataset,
    variant: str,
    tau2_hat: float,
    B: int = DEFAULT_B,
    seed: int = 0,
    workers: int = 1,
    block_size: int = BLOCK_SIZE,
) -> PredictiveSamples:
    """Monte Carlo draws from a predictive confidence distribution.

    Per draw:

    * ``PCD-fixed``: mu from Edgington's CD at ``tau2_hat``, new effect ~ N(mu, tau2_hat).
    * ``PCD-simplified``: tau2 from its Q-based CD, mu from the CD at ``tau2_hat``,
      new effect ~ N(mu, tau2).
    * ``PCD-full``: tau2 from its Q-based CD, mu from the CD at that tau2,
      new effect ~ N(mu, tau2).

    Draws are generated in blocks with independent streams keyed by
    ``(seed, block index)``, so results do not depend on ``workers``.
    """
    return sample_pcd_all(dataset, tau2_hat, B, seed, (variant,), workers, block_size)[canonical_variant(variant)]


def sample_pcd_all(
    dataset: MetaDataset,
    tau2_hat: float,
    B: int = DEFAULT_B,
    seed: int = 0,
    variants=VARIANTS,
    workers: int = 1,
    block_size: int = BLOCK_SIZE,
) -> dict[str, PredictiveSamples]:
    """Several PCD variants from one seed, sharing the underlying random numbers.

    Each entry is bit-identical to the corresponding :func:`sample_pcd` call;
    shared pieces (tau2 draws, plug-in mu draws) are computed once.
    """
    variants = tuple(canonical_variant(v) for v in variants)
    if B < 2:
        raise ValueError("B must be >= 2")
    if tau2_hat < 0:
        raise ValueError("tau2_hat must be >= 0")
    parts = _run_blocks(dataset, variants, tau2_hat, B, seed, workers, block_size)
    return {
        v: PredictiveSamples(parts[v][2], v, seed, float(tau2_hat) if v == "PCD-fixed" else "sampled")
        for v in variants
    }


def sample_marginal_mu(dataset: MetaDataset, B: int = DEFAULT_B, seed: int = 0, workers: int = 1) -> np.ndarray:
    """Draws of the average effect from Edgington's CD integrated over the tau2 CD.

    These are the intermediate mu draws of the ``PCD-full`` sampler.
    """
    return _run_blocks(dataset, ("PCD-full",), 0.0, B, seed, workers, BLOCK_SIZE)["PCD-full"][1]


def skipka_predictive(dataset: MetaDataset, tau2_hat: float) -> ParametricPredictive:
    """Normal predictive: N(mu_IVW, tau2_hat + se(mu_IVW)^2)."""
    if tau2_hat < 0:
        raise ValueError("tau2_hat must be >= 0")
    mu, se = ivw_mean(dataset, tau2_hat)
    return ParametricPredictive("normal", mu, math.sqrt(tau2_hat + se * se))


def hts_predictive(dataset: MetaDataset, tau2_hat: float) -> ParametricPredictive:
    """Location-scale t predictive with k - 2 degrees of freedom."""
    if dataset.k <= 2:
        raise DataError("HTS predictive distribution needs k >= 3 (df = k - 2)")
    if tau2_hat < 0:
        raise ValueError("tau2_hat must be >= 0")
    mu, se = ivw_mean(dataset, tau2_hat)
    return ParametricPredictive("t", mu, math.sqrt(tau2_hat + se * se), dataset.k - 2)


def wang_ensemble(dataset: MetaDataset, tau2_hat: float) -> PredictiveSamples:
    """Shrunken ensemble estimates mu_IVW + sqrt(tau2 / (tau2 + s_i^2)) (theta_i - mu_IVW)."""
    if tau2_hat < 0:
        raise ValueError("tau2_hat must be >= 0")
    mu, _ = ivw_mean(dataset, tau2_hat)
    shrink = np.sqrt(tau2_hat / (tau2_hat + dataset.variances))
    return PredictiveSamples(mu + shrink * (dataset.effects - mu), "Wang", None, float(tau2_hat))


def _draws(samples):
    return samples.draws if isinstance(samples, PredictiveSamples) else np.asarray(samples, dtype=float)


def equi_tailed_interval(samples, level: float = 0.95) -> PredictionInterval:
    """Empirical (1 -+ level)/2 quantiles with linear interpolation (type 7)."""
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    lo, hi = np.quantile(_draws(samples), [0.5 - level / 2, 0.5 + level / 2])
    return PredictionInterval(float(lo), float(hi), level, "equi-tailed")


def hcdp_interval(samples, level: float = 0.95) -> PredictionInterval:
    """Shortest window of ceil(level * B) sorted draws; ties go to the leftmost window."""
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    x = np.sort(_draws(samples))
    m = max(1, math.ceil(level * x.size))
    widths = x[m - 1 :] - x[: x.size - m + 1]
    j = int(np.argmin(widths))
    return PredictionInterval(float(x[j]), float(x[j + m - 1]), level, "HCDP")


def confidence_probability(samples, delta: float, direction: str = ">=") -> float:
    """Monte Carlo confidence that a new effect is >= (or <=, >, <) ``delta``."""
    x = _draws(samples)
    ops = {">=": np.greater_equal, "<=": np.less_equal, ">": np.greater, "<": np.less}
    try:
        op = ops[direction]
    except KeyError:
        raise ValueError(f"direction must be one of {list(ops)}") from None
    return float(np.mean(op(x, delta)))


def parametric_interval(p: ParametricPredictive, level: float = 0.95) -> PredictionInterval:
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    lo, hi = p.ppf([0.5 - level / 2, 0.5 + level / 2])
    return PredictionInterval(float(lo), float(hi), level, "equi-tailed")


def parametric_confidence(p: ParametricPredictive, delta: float, direction: str = ">=") -> float:
    c = float(p.cdf(delta))
    return 1.0 - c if direction in (">=", ">") else c


def write_samples(samples: PredictiveSamples, path: Union[str, Path], fmt: str = "csv") -> Path:
    """Write draws one per row (CSV) or as raw little-endian float64 ("bin"),
    plus a JSON sidecar at ``<path>.json``."""
    path = Path(path)
    if fmt == "csv":
        with path.open("w", encoding="utf-8") as fh:
            fh.write("draw\n")
            fh.writelines(f"{x!r}\n" for x in samples.draws.tolist())
    elif fmt == "bin":
        samples.draws.astype("<f8").tofile(path)
    else:
        raise ValueError("fmt must be 'csv' or 'bin'")
    sidecar = Path(str(path) + ".json")
    sidecar.write_text(json.dumps({**samples.sidecar(), "format": fmt}, indent=2))
    return sidecar


def read_samples(path: Union[str, Path]) -> PredictiveSamples:
    """Read draws written by :func:`write_samples` (or any one-column CSV/float64 file)."""
    path = Path(path)
    sidecar = Path(str(path) + ".json")
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    fmt = meta.get("format") or ("bin" if path.suffix in (".bin", ".f64") else "csv")
    if fmt == "bin":
        draws = np.fromfile(path, dtype="<f8")
    else:
        draws = read_column(path)
    return PredictiveSamples(draws, meta.get("variant", "external"), meta.get("seed"), meta.get("tau2"))


def read_column(path: Union[str, Path]) -> np.ndarray:
    """First column of a CSV file with a header row, as floats."""
    vals = []
    with Path(path).open(encoding="utf-8") as fh:
        next(fh, None)
        for lineno, line in enumerate(fh, start=2):
            cell = line.split(",")[0].strip()
            if not cell:
                continue
            try:
                vals.append(float(cell))
            except ValueError:
                raise DataError(f"{path}: line {lineno}: not a number: {cell!r}") from None
    return np.asarray(vals, dtype=float)
