"""Study and dataset types, effect-size ingestion and CSV reading."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.special import ndtri

from .exceptions import DataError

SCALES = ("log-OR", "SMD", "generic")


@dataclass(frozen=True)
class Study:
    """One study's effect estimate and squared standard error.

    ``counts`` holds the optional 2x2 table as
    ``(events_treated, total_treated, events_control, total_control)``.
    """

    effect: float
    variance: float
    label: str = ""
    counts: Optional[tuple[int, int, int, int]] = None

    def __post_init__(self):
        if not math.isfinite(self.effect):
            raise DataError(f"study {self.label!r}: effect must be finite")
        if not (math.isfinite(self.variance) and self.variance > 0):
            raise DataError(f"study {self.label!r}: variance must be finite and > 0")

    @property
    def se(self) -> float:
        return math.sqrt(self.variance)


@dataclass(frozen=True)
class EffectDistributionParams:
    mean: float
    tau2: float

    def __post_init__(self):
        if not self.tau2 >= 0:
            raise DataError("tau2 must be >= 0")


@dataclass(frozen=True)
class MetaDataset:
    """Validated, immutable collection of k >= 2 studies.

    Use :func:`validate_dataset` or :meth:`from_arrays` to build one.
    The ``effects`` and ``variances`` arrays are read-only views.
    """

    studies: tuple[Study, ...]
    scale: str = "generic"
    effects: np.ndarray = field(init=False, repr=False, compare=False)
    variances: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.studies) < 2:
            raise DataError(f"k < 2: a meta-analysis needs at least two studies, got {len(self.studies)}")
        if self.scale not in SCALES:
            raise DataError(f"unknown scale {self.scale!r}; expected one of {SCALES}")
        eff = np.array([s.effect for s in self.studies], dtype=float)
        var = np.array([s.variance for s in self.studies], dtype=float)
        if not (np.all(np.isfinite(eff)) and np.all(np.isfinite(var)) and np.all(var > 0)):
            raise DataError("all effects must be finite and all variances finite and positive")
        eff.flags.writeable = False
        var.flags.writeable = False
        object.__setattr__(self, "effects", eff)
        object.__setattr__(self, "variances", var)

    @property
    def k(self) -> int:
        return len(self.studies)

    @property
    def labels(self) -> list[str]:
        return [s.label for s in self.studies]

    def __len__(self):
        return self.k

    @classmethod
    def from_arrays(cls, effects, variances, labels=None, scale="generic") -> "MetaDataset":
        effects = np.asarray(effects, dtype=float).ravel()
        variances = np.asarray(variances, dtype=float).ravel()
        if effects.shape != variances.shape:
            raise DataError("effects and variances must have the same length")
        if labels is None:
            labels = [f"study{i + 1}" for i in range(effects.size)]
        studies = tuple(Study(float(e), float(v), str(lab)) for e, v, lab in zip(effects, variances, labels))
        return cls(studies, scale)

    def shifted(self, offset: float) -> "MetaDataset":
        """Copy with every effect moved by ``offset`` (variances unchanged)."""
        return MetaDataset.from_arrays(self.effects + offset, self.variances, self.labels, self.scale)

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "studies": [
                {"label": s.label, "effect": s.effect, "variance": s.variance} for s in self.studies
            ],
        }


def validate_dataset(studies: Iterable[Study] | MetaDataset, scale: str = "generic") -> MetaDataset:
    """Check a collection of studies and freeze it into a :class:`MetaDataset`.

    Input order is preserved. Passing an existing dataset returns an equal one.
    """
    if isinstance(studies, MetaDataset):
        return MetaDataset(studies.studies, studies.scale)
    studies = tuple(studies)
    for s in studies:
        if not isinstance(s, Study):
            raise DataError(f"expected Study, got {type(s).__name__}")
    return MetaDataset(studies, scale)


def log_or_from_counts(
    a: int,
    n1: int,
    c: int,
    n2: int,
    label: str = "",
    continuity: bool = False,
    correction: float = 0.5,
) -> Study:
    """Log odds ratio and its variance from a 2x2 table.

    Parameters
    ----------
    a, n1 : events and total in the treated arm
    c, n2 : events and total in the control arm
    continuity : if True, add ``correction`` to all four cells when any cell is zero.
        A zero cell with ``continuity=False`` raises :class:`DataError`.
    """
    for name, val in (("a", a), ("n1", n1), ("c", c), ("n2", n2)):
        if val < 0 or int(val) != val:
            raise DataError(f"{label or 'study'}: count {name}={val} must be a non-negative integer")
    b, d = n1 - a, n2 - c
    if b < 0 or d < 0:
        raise DataError(f"{label or 'study'}: events exceed arm totals")
    cells = [float(a), float(b), float(c), float(d)]
    if min(cells) == 0:
        if not continuity:
            raise DataError(f"{label or 'study'}: zero cell in 2x2 table and continuity correction disabled")
        cells = [x + correction for x in cells]
    fa, fb, fc, fd = cells
    effect = math.log(fa * fd / (fb * fc))
    variance = 1 / fa + 1 / fb + 1 / fc + 1 / fd
    return Study(effect, variance, label, (int(a), int(n1), int(c), int(n2)))


def study_from_ratio_ci(ratio: float, lower: float, upper: float, level: float = 0.95, label: str = "") -> Study:
    """Log-scale study from a reported ratio and its symmetric-on-log-scale CI."""
    if min(ratio, lower, upper) <= 0 or not lower < upper:
        raise DataError(f"{label or 'study'}: need 0 < lower < upper and ratio > 0")
    z = ndtri(0.5 + level / 2)
    se = (math.log(upper) - math.log(lower)) / (2 * z)
    return Study(math.log(ratio), se * se, label)


_EFFECT_COLS = ("label", "effect", "se")
_COUNT_COLS = ("label", "events1", "total1", "events2", "total2")


def read_csv(path: str | Path, scale: Optional[str] = None, continuity: bool = False) -> MetaDataset:
    """Read a dataset from CSV.

    Two schemas are accepted (header row required):
    ``label,effect,se`` or ``label,events1,total1,events2,total2``.
    The count schema yields log odds ratios. Errors carry the line number.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        return parse_csv_lines(fh, scale=scale, continuity=continuity, source=str(path))


def parse_csv_lines(lines: Iterable[str], scale=None, continuity=False, source="<input>") -> MetaDataset:
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError(f"{source}: empty file, header row required") from None
    cols = tuple(h.strip().lower() for h in header)
    if set(_EFFECT_COLS) <= set(cols):
        kind = "effect"
        idx = [cols.index(c) for c in _EFFECT_COLS]
    elif set(_COUNT_COLS) <= set(cols):
        kind = "counts"
        idx = [cols.index(c) for c in _COUNT_COLS]
    else:
        raise DataError(
            f"{source}: line 1: unrecognised header {header!r}; expected "
            f"{','.join(_EFFECT_COLS)} or {','.join(_COUNT_COLS)}"
        )
    studies = []
    for row in reader:
        line = reader.line_num
        if not row or all(not cell.strip() for cell in row):
            continue
        try:
            vals = [row[i].strip() for i in idx]
        except IndexError:
            raise DataError(f"{source}: line {line}: expected {len(header)} fields, got {len(row)}") from None
        try:
            if kind == "effect":
                effect, se = float(vals[1]), float(vals[2])
                if not se > 0:
                    raise DataError("se must be > 0")
                studies.append(Study(effect, se * se, vals[0]))
            else:
                a, n1, c, n2 = (_parse_int(v) for v in vals[1:])
                studies.append(log_or_from_counts(a, n1, c, n2, vals[0], continuity=continuity))
        except (ValueError, DataError) as exc:
            raise DataError(f"{source}: line {line}: {exc}") from None
    if scale is None:
        scale = "log-OR" if kind == "counts" else "generic"
    return validate_dataset(studies, scale)


def _parse_int(text: str) -> int:
    val = float(text)
    if val != int(val):
        raise ValueError(f"count {text!r} is not an integer")
    return int(val)


def write_csv(dataset: MetaDataset, path: str | Path) -> None:
    """Write ``label,effect,se`` rows."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(_EFFECT_COLS)
        for s in dataset.studies:
            w.writerow([s.label, repr(s.effect), repr(s.se)])


def from_counts(rows: Sequence[tuple], continuity: bool = False) -> MetaDataset:
    """Dataset of log odds ratios from ``(label, a, n1, c, n2)`` rows."""
    studies = [log_or_from_counts(a, n1, c, n2, label, continuity=continuity) for label, a, n1, c, n2 in rows]
    return validate_dataset(studies, "log-OR")
