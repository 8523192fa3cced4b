"""Error metrics, empirical CDFs and requirement feasibility reports."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from importlib import resources
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

BASELINE_MODE = "instantaneous"


def rmse(predicted, actual) -> float:
    """Root mean squared error between two equal-length vectors."""
    p = np.asarray(predicted, dtype=float).ravel()
    a = np.asarray(actual, dtype=float).ravel()
    if p.size == 0 or a.size == 0:
        raise ValueError("rmse of empty vectors")
    if p.shape != a.shape:
        raise ValueError(f"length mismatch: {p.size} vs {a.size}")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(a))):
        raise ValueError("rmse inputs must be finite")
    d = p - a
    return math.sqrt(math.fsum((d * d).tolist()) / d.size)


@dataclass(frozen=True)
class EcdfCurve:
    values: np.ndarray     # sorted samples
    fractions: np.ndarray  # i / n for the i-th sorted sample

    def __len__(self):
        return len(self.values)


def ecdf(values) -> EcdfCurve:
    xs = np.sort(np.asarray(values, dtype=float).ravel())
    if xs.size == 0:
        raise ValueError("ecdf of empty sample")
    if not np.all(np.isfinite(xs)):
        raise ValueError("ecdf input must be finite")
    return EcdfCurve(xs, np.arange(1, xs.size + 1) / xs.size)


def ecdf_at(curve: EcdfCurve, x, strict: bool = False):
    """Fraction of samples ``<= x`` (or ``< x`` with ``strict``)."""
    side = "left" if strict else "right"
    out = np.searchsorted(curve.values, x, side=side) / len(curve.values)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class TodRequirement:
    source_label: str
    ul_rate_min: float
    dl_rate_min: Optional[float] = None
    latency_ms: Optional[float] = None
    reliability_pct: Optional[float] = None

    def __post_init__(self):
        if not self.ul_rate_min > 0:
            raise ValueError(f"{self.source_label}: ul_rate_min must be > 0")


def load_catalog(path=None) -> List[TodRequirement]:
    """Requirement catalog from ``path``, or the bundled default."""
    if path is None:
        text = resources.files("remrate.data").joinpath("tod_requirements.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    doc = json.loads(text)
    return [TodRequirement(**r) for r in doc["requirements"]]


@dataclass
class FeasibilityRow:
    source_label: str
    ul_rate_min: float
    infeasible_fraction: float


@dataclass
class FeasibilityReport:
    n_samples: int
    strict: bool
    rows: List[FeasibilityRow]
    band_low: float
    band_high: float
    uncertain_fraction: float

    def to_dict(self) -> dict:
        return asdict(self)


def feasibility_report(measured_rates, requirements: Sequence[TodRequirement],
                       strict: bool = True) -> FeasibilityReport:
    """Share of samples that miss each uplink requirement.

    A sample misses a requirement when its rate is below ``ul_rate_min``
    (``strict``) or at most ``ul_rate_min`` (``strict=False``). The uncertain
    fraction counts samples that meet the loosest requirement but miss the
    strictest one.
    """
    if not requirements:
        raise ValueError("empty requirement catalog")
    curve = ecdf(measured_rates)
    rows = [FeasibilityRow(r.source_label, float(r.ul_rate_min),
                           ecdf_at(curve, r.ul_rate_min, strict=strict))
            for r in requirements]
    lo = min(r.ul_rate_min for r in requirements)
    hi = max(r.ul_rate_min for r in requirements)
    band = ecdf_at(curve, hi, strict=strict) - ecdf_at(curve, lo, strict=strict)
    return FeasibilityReport(len(curve), strict, rows, float(lo), float(hi), float(band))


@dataclass
class ComparisonRow:
    mode: str
    mean_rmse: float
    std_rmse: float
    gain: float


def compare_pipelines(reports: Mapping[str, object],
                      baseline: str = BASELINE_MODE) -> List[ComparisonRow]:
    """Relative RMSE gain of every mode over ``baseline``.

    ``reports`` maps a mode label to anything with ``mean_rmse`` and
    ``std_rmse`` attributes (e.g. a ``CvReport``). Negative gains are kept.
    """
    if baseline not in reports:
        raise KeyError(f"baseline report {baseline!r} missing")
    base = reports[baseline].mean_rmse
    rows = []
    for mode, rep in reports.items():
        gain = 0.0 if mode == baseline else 1.0 - rep.mean_rmse / base
        rows.append(ComparisonRow(mode, rep.mean_rmse, rep.std_rmse, gain))
    return rows


def write_ecdf_csv(curve: EcdfCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "fraction"])
        for x, f in zip(curve.values.tolist(), curve.fractions.tolist()):
            w.writerow([repr(x), repr(f)])


def write_comparison_csv(rows: Sequence[ComparisonRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "mean_rmse", "std", "gain"])
        for r in rows:
            w.writerow([r.mode, repr(r.mean_rmse), repr(r.std_rmse), repr(r.gain)])
