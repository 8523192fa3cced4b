"""Feature assembly for the three prediction modes and the CV harness.

Modes:

* ``instantaneous`` - the record's own radio features, imputed with the
  training mean where missing, followed by one missing flag per feature.
* ``rem`` - REM lookups at the record's position, followed by one miss flag
  per layer.
* ``combined`` - the instantaneous block followed by the REM block.

Seed derivations (all via ``numpy.random.SeedSequence``):

* fold shuffle for repetition ``r``: ``Philox(SeedSequence([seed, r]))``
* forest of repetition ``r``, fold ``f``: first uint64 word of
  ``SeedSequence([seed, r, f])``
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .evaluation import rmse
from .forest import Forest, ForestParams, train
from .ingest import (GeoOrigin, MeasurementRecord, feature_names_of, project,
                     project_records, scenario_origin)
from .rem import DEFAULT_MAX_RING, Rem, build_rem_arrays, lookup_many

CV_FORMAT_VERSION = 1


class PipelineMode(str, Enum):
    INSTANTANEOUS = "instantaneous"
    REM = "rem"
    COMBINED = "combined"

    @property
    def uses_rem(self) -> bool:
        return self is not PipelineMode.INSTANTANEOUS

    @property
    def uses_instantaneous(self) -> bool:
        return self is not PipelineMode.REM


class MissingRemError(ValueError):
    pass


@dataclass(frozen=True)
class CvConfig:
    k: int = 10
    repetitions: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")


@dataclass(frozen=True)
class HoldoutConfig:
    """Single seeded train/validation split."""

    validation_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")


def instantaneous_schema(features: Sequence[str]) -> List[str]:
    return list(features) + [f"{f}_missing" for f in features]


def rem_schema(layers: Sequence[str]) -> List[str]:
    return [f"rem_{f}" for f in layers] + [f"rem_{f}_miss" for f in layers]


def mode_schema(mode: PipelineMode, features: Sequence[str],
                layers: Sequence[str]) -> List[str]:
    mode = PipelineMode(mode)
    out = []
    if mode.uses_instantaneous:
        out += instantaneous_schema(features)
    if mode.uses_rem:
        out += rem_schema(layers)
    return out


def derive_seed(*words: int) -> int:
    return int(np.random.SeedSequence([int(w) for w in words]).generate_state(1, np.uint64)[0])


class Dataset:
    """Records flattened into arrays: features (NaN = missing), labels, and
    planar positions relative to ``origin``."""

    def __init__(self, records: Sequence[MeasurementRecord],
                 features: Optional[Sequence[str]] = None,
                 origin: Optional[GeoOrigin] = None, scenario_id: str = ""):
        if not records:
            raise ValueError("no records")
        self.records = list(records)
        self.features = list(features) if features is not None else feature_names_of(records)
        self.origin = origin if origin is not None else scenario_origin(records)
        self.scenario_id = scenario_id
        nan = float("nan")
        self.values = np.array([[nan if r.features.get(f) is None else r.features[f]
                                 for f in self.features] for r in self.records],
                               dtype=float).reshape(len(self.records), len(self.features))
        self.y = np.array([r.target_rate for r in self.records], dtype=float)
        self.x, self.yy = project_records(self.records, self.origin)

    def __len__(self):
        return len(self.records)

    def impute_means(self, idx: np.ndarray) -> np.ndarray:
        """Per-feature mean over the present values of rows ``idx`` (0 if none)."""
        sub = self.values[idx]
        present = ~np.isnan(sub)
        counts = present.sum(axis=0)
        sums = np.where(present, sub, 0.0).sum(axis=0)
        return np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)

    def instantaneous_block(self, idx: np.ndarray, means: np.ndarray) -> np.ndarray:
        sub = self.values[idx]
        missing = np.isnan(sub)
        filled = np.where(missing, means[None, :], sub)
        return np.hstack([filled, missing.astype(float)])

    def build_rem(self, idx: np.ndarray, layer_plan: Mapping[str, float]) -> Rem:
        return build_rem_arrays(self.x[idx], self.yy[idx], self.values[idx], layer_plan,
                                self.features, self.origin, self.scenario_id)

    def rem_block(self, idx: np.ndarray, rem: Rem, max_ring: int = DEFAULT_MAX_RING) -> np.ndarray:
        vals, flags = lookup_many(rem, self.x[idx], self.yy[idx], max_ring)
        return np.hstack([vals, flags])

    def matrix(self, idx: np.ndarray, mode: PipelineMode, means: Optional[np.ndarray],
               rem: Optional[Rem], max_ring: int = DEFAULT_MAX_RING) -> np.ndarray:
        mode = PipelineMode(mode)
        blocks = []
        if mode.uses_instantaneous:
            blocks.append(self.instantaneous_block(idx, means))
        if mode.uses_rem:
            if rem is None:
                raise MissingRemError(f"mode {mode.value!r} needs a REM")
            blocks.append(self.rem_block(idx, rem, max_ring))
        return np.hstack(blocks)


def assemble_features(record: MeasurementRecord, mode: PipelineMode, rem: Optional[Rem],
                      features: Sequence[str], impute_means: Optional[Mapping[str, float]] = None,
                      max_ring: int = DEFAULT_MAX_RING) -> np.ndarray:
    """Feature vector of one record for ``mode``.

    ``impute_means`` supplies the training means used for missing
    instantaneous values; features absent from it are imputed with 0.
    """
    mode = PipelineMode(mode)
    parts: List[float] = []
    if mode.uses_instantaneous:
        means = impute_means or {}
        vals, flags = [], []
        for f in features:
            v = record.features.get(f)
            vals.append(means.get(f, 0.0) if v is None else v)
            flags.append(1.0 if v is None else 0.0)
        parts += vals + flags
    if mode.uses_rem:
        if rem is None:
            raise MissingRemError(f"mode {mode.value!r} needs a REM")
        p = project(record.latitude, record.longitude, rem.origin.latitude, rem.origin.longitude)
        v, fl = lookup_many(rem, np.array([p.x]), np.array([p.y]), max_ring)
        parts += v[0].tolist() + fl[0].tolist()
    return np.array(parts, dtype=float)


def kfold_split(n: int, k: int, repetition_index: int, seed: int) -> List[np.ndarray]:
    """Seeded shuffle of ``range(n)`` cut into ``k`` folds of near-equal size."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > n:
        raise ValueError(f"k={k} exceeds dataset size {n}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(repetition_index)])))
    perm = rng.permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def holdout_split(n: int, cfg: HoldoutConfig) -> Tuple[np.ndarray, np.ndarray]:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(cfg.seed), 0])))
    perm = rng.permutation(n)
    n_val = min(max(1, int(round(n * cfg.validation_fraction))), n - 1)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


@dataclass
class CvRun:
    repetition: int
    fold: int
    rmse: float
    n_test: int


@dataclass
class CvReport:
    mode: str
    runs: List[CvRun]
    k: int
    repetitions: int
    seed: int
    layer_plan: Optional[Dict[str, float]] = None
    rem_scope: str = "fold"
    features: List[str] = field(default_factory=list)

    @property
    def rmses(self) -> np.ndarray:
        return np.array([r.rmse for r in self.runs])

    @property
    def mean_rmse(self) -> float:
        return math.fsum(r.rmse for r in self.runs) / len(self.runs)

    @property
    def std_rmse(self) -> float:
        """Sample standard deviation over all runs."""
        if len(self.runs) < 2:
            return 0.0
        return float(np.std(self.rmses, ddof=1))

    def repetition_means(self) -> np.ndarray:
        reps = sorted({r.repetition for r in self.runs})
        return np.array([np.mean([r.rmse for r in self.runs if r.repetition == rep])
                         for rep in reps])

    def repetition_std(self) -> float:
        m = self.repetition_means()
        return float(np.std(m, ddof=1)) if len(m) > 1 else 0.0

    def to_dict(self) -> dict:
        return {"format_version": CV_FORMAT_VERSION, "mode": self.mode, "k": self.k,
                "repetitions": self.repetitions, "seed": self.seed,
                "layer_plan": self.layer_plan, "rem_scope": self.rem_scope,
                "features": self.features,
                "runs": [asdict(r) for r in self.runs],
                "mean_rmse": self.mean_rmse, "std_rmse": self.std_rmse}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "CvReport":
        if doc.get("format_version") != CV_FORMAT_VERSION:
            raise ValueError(f"unsupported CvReport format_version {doc.get('format_version')!r}")
        return cls(mode=doc["mode"], runs=[CvRun(**r) for r in doc["runs"]], k=doc["k"],
                   repetitions=doc["repetitions"], seed=doc["seed"],
                   layer_plan=doc.get("layer_plan"), rem_scope=doc.get("rem_scope", "fold"),
                   features=list(doc.get("features", [])))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["repetition", "fold", "rmse", "n_test"])
            for r in self.runs:
                w.writerow([r.repetition, r.fold, repr(r.rmse), r.n_test])


FoldHook = Callable[[int, int, np.ndarray, np.ndarray, Optional[Rem]], None]


def fit_and_score(data: Dataset, train_idx: np.ndarray, test_idx: np.ndarray,
                  mode: PipelineMode, layer_plan: Optional[Mapping[str, float]],
                  params: ForestParams, rem: Optional[Rem] = None,
                  max_ring: int = DEFAULT_MAX_RING, threads: int = 1) -> Tuple[float, Optional[Rem]]:
    """Train on ``train_idx`` and return (test RMSE, REM used).

    When ``rem`` is None and the mode needs one, it is built from the
    training rows only.
    """
    mode = PipelineMode(mode)
    if mode.uses_rem and rem is None:
        if not layer_plan:
            raise MissingRemError(f"mode {mode.value!r} needs a layer plan")
        rem = data.build_rem(train_idx, layer_plan)
    means = data.impute_means(train_idx) if mode.uses_instantaneous else None
    X_train = data.matrix(train_idx, mode, means, rem, max_ring)
    X_test = data.matrix(test_idx, mode, means, rem, max_ring)
    forest = train(X_train, data.y[train_idx], params, threads=threads)
    pred = forest.predict(X_test)
    return rmse(pred, data.y[test_idx]), rem


def run_cv(records: Union[Sequence[MeasurementRecord], Dataset], mode: PipelineMode,
           layer_plan: Optional[Mapping[str, float]], forest_params: ForestParams,
           cv: CvConfig, *, features: Optional[Sequence[str]] = None,
           rem_scope: str = "fold", max_ring: int = DEFAULT_MAX_RING, threads: int = 1,
           fold_hook: Optional[FoldHook] = None) -> CvReport:
    """Repeated k-fold cross-validation of one pipeline.

    With ``rem_scope="fold"`` the REM and the imputation means come from the
    training folds only. ``rem_scope="global"`` builds the REM once over all
    records, which leaks test labels' positions into the map and is only
    offered for comparison.
    """
    mode = PipelineMode(mode)
    data = records if isinstance(records, Dataset) else Dataset(records, features)
    n = len(data)
    if n < cv.k:
        raise ValueError(f"{n} records are fewer than k={cv.k}")
    if mode.uses_rem and not layer_plan:
        raise MissingRemError(f"mode {mode.value!r} needs a layer plan")
    if rem_scope not in ("fold", "global"):
        raise ValueError(f"rem_scope must be 'fold' or 'global', got {rem_scope!r}")
    global_rem = None
    if mode.uses_rem and rem_scope == "global":
        global_rem = data.build_rem(np.arange(n), layer_plan)
    runs = []
    for r in range(cv.repetitions):
        folds = kfold_split(n, cv.k, r, cv.seed)
        for f, test_idx in enumerate(folds):
            train_idx = np.sort(np.concatenate([folds[g] for g in range(cv.k) if g != f]))
            params = replace(forest_params, seed=derive_seed(cv.seed, r, f))
            err, rem = fit_and_score(data, train_idx, test_idx, mode, layer_plan, params,
                                     rem=global_rem, max_ring=max_ring, threads=threads)
            if fold_hook is not None:
                fold_hook(r, f, train_idx, test_idx, rem)
            runs.append(CvRun(r, f, err, int(len(test_idx))))
    return CvReport(mode.value, runs, cv.k, cv.repetitions, cv.seed,
                    dict(layer_plan) if layer_plan else None, rem_scope, list(data.features))


def run_holdout(records: Union[Sequence[MeasurementRecord], Dataset], mode: PipelineMode,
                layer_plan: Optional[Mapping[str, float]], forest_params: ForestParams,
                holdout: HoldoutConfig, *, features: Optional[Sequence[str]] = None,
                max_ring: int = DEFAULT_MAX_RING, threads: int = 1) -> float:
    data = records if isinstance(records, Dataset) else Dataset(records, features)
    train_idx, val_idx = holdout_split(len(data), holdout)
    params = replace(forest_params, seed=derive_seed(holdout.seed, 0, 0))
    err, _ = fit_and_score(data, train_idx, val_idx, mode, layer_plan, params,
                           max_ring=max_ring, threads=threads)
    return err


def validation_rmse(data: Dataset, mode: PipelineMode, layer_plan: Optional[Mapping[str, float]],
                    forest_params: ForestParams, protocol: Union[CvConfig, HoldoutConfig],
                    threads: int = 1) -> float:
    """Mean validation RMSE of a pipeline under ``protocol``."""
    if isinstance(protocol, HoldoutConfig):
        return run_holdout(data, mode, layer_plan, forest_params, protocol, threads=threads)
    return run_cv(data, mode, layer_plan, forest_params, protocol, threads=threads).mean_rmse


def train_pipeline(records: Union[Sequence[MeasurementRecord], Dataset], mode: PipelineMode,
                   layer_plan: Optional[Mapping[str, float]], forest_params: ForestParams,
                   *, features: Optional[Sequence[str]] = None,
                   threads: int = 1) -> Tuple[Forest, Optional[Rem], Dict[str, float]]:
    """Fit one pipeline on all records; returns (forest, rem, impute means)."""
    mode = PipelineMode(mode)
    data = records if isinstance(records, Dataset) else Dataset(records, features)
    idx = np.arange(len(data))
    rem = None
    if mode.uses_rem:
        if not layer_plan:
            raise MissingRemError(f"mode {mode.value!r} needs a layer plan")
        rem = data.build_rem(idx, layer_plan)
    means = data.impute_means(idx)
    X = data.matrix(idx, mode, means, rem)
    schema = mode_schema(mode, data.features, rem.feature_names if rem else [])
    forest = train(X, data.y, forest_params, feature_schema=schema, threads=threads)
    return forest, rem, dict(zip(data.features, means.tolist()))


def save_cv_report(report: CvReport, json_path, csv_path=None, extra: Optional[dict] = None) -> None:
    doc = report.to_dict()
    if extra:
        doc.update(extra)
    with open(json_path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if csv_path is not None:
        report.write_csv(csv_path)


def load_cv_report(path) -> CvReport:
    with open(path) as fh:
        return CvReport.from_dict(json.load(fh))
