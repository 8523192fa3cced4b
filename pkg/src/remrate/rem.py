"""Multi-layer Radio Environmental Maps.

A :class:`Rem` holds one sparse grid per feature. Every layer shares the same
planar origin but may use its own cell width. Cells store the arithmetic mean
and the number of samples that fell into them.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .ingest import (GeoOrigin, MeasurementRecord, PlanarPoint, project, project_records,
                     scenario_origin)

REM_FORMAT_VERSION = 1
DEFAULT_MAX_RING = 2


class RemError(Exception):
    pass


class EmptyLayerError(RemError):
    def __init__(self, feature_name: str):
        super().__init__(f"no record carries feature {feature_name!r}")
        self.feature_name = feature_name


class RemFormatError(RemError):
    pass


@dataclass(frozen=True)
class GridSpec:
    origin: PlanarPoint
    cell_width: float

    def __post_init__(self):
        if not (math.isfinite(self.cell_width) and self.cell_width > 0):
            raise ValueError(f"cell_width must be finite and > 0, got {self.cell_width}")


@dataclass(frozen=True)
class CellStats:
    mean: float
    count: int


@dataclass
class RemLayer:
    feature_name: str
    spec: GridSpec
    cells: Dict[Tuple[int, int], CellStats]
    global_mean: float

    @property
    def cell_width(self) -> float:
        return self.spec.cell_width

    def total_count(self) -> int:
        return sum(c.count for c in self.cells.values())


@dataclass
class Rem:
    scenario_id: str
    origin: GeoOrigin
    layers: List[RemLayer] = field(default_factory=list)

    def __post_init__(self):
        names = [l.feature_name for l in self.layers]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate layer names: {names}")
        origins = {l.spec.origin for l in self.layers}
        if len(origins) > 1:
            raise ValueError("layers do not share a grid origin")

    @property
    def feature_names(self) -> List[str]:
        return [l.feature_name for l in self.layers]

    def layer(self, name: str) -> RemLayer:
        for l in self.layers:
            if l.feature_name == name:
                return l
        raise KeyError(name)

    def plan(self) -> Dict[str, float]:
        return {l.feature_name: l.cell_width for l in self.layers}


@dataclass
class LookupResult:
    values: Dict[str, float]
    miss_flags: Dict[str, int]


def cell_index(point: PlanarPoint, spec: GridSpec) -> Tuple[int, int]:
    """Half-open, floor-based cell of ``point``."""
    i = math.floor((point.x - spec.origin.x) / spec.cell_width)
    j = math.floor((point.y - spec.origin.y) / spec.cell_width)
    return int(i), int(j)


def _cell_indices(x: np.ndarray, y: np.ndarray, spec: GridSpec):
    i = np.floor((x - spec.origin.x) / spec.cell_width).astype(np.int64)
    j = np.floor((y - spec.origin.y) / spec.cell_width).astype(np.int64)
    return i, j


def _layer_from_points(feature_name: str, spec: GridSpec, x: np.ndarray,
                       y: np.ndarray, values: np.ndarray) -> RemLayer:
    if len(values) == 0:
        raise EmptyLayerError(feature_name)
    ii, jj = _cell_indices(x, y, spec)
    buckets: Dict[Tuple[int, int], List[float]] = {}
    for i, j, v in zip(ii.tolist(), jj.tolist(), values.tolist()):
        buckets.setdefault((i, j), []).append(v)
    # fsum is exactly rounded, which keeps the means independent of record order
    cells = {key: CellStats(math.fsum(vs) / len(vs), len(vs)) for key, vs in buckets.items()}
    global_mean = math.fsum(values.tolist()) / len(values)
    return RemLayer(feature_name, spec, cells, global_mean)


def build_layer(records: Sequence[MeasurementRecord], feature_name: str, spec: GridSpec,
                origin: Optional[GeoOrigin] = None) -> RemLayer:
    """Aggregate one feature over ``records`` into a sparse grid.

    Records whose value for ``feature_name`` is missing are skipped. The
    geodetic ``origin`` defaults to the records' (min lat, min lon).
    """
    if origin is None:
        origin = scenario_origin(records)
    present = [r for r in records if r.features.get(feature_name) is not None]
    if not present:
        raise EmptyLayerError(feature_name)
    x, y = project_records(present, origin)
    values = np.array([r.features[feature_name] for r in present], dtype=float)
    return _layer_from_points(feature_name, spec, x, y, values)


def build_rem(records: Sequence[MeasurementRecord], layer_plan: Mapping[str, float],
              origin: GeoOrigin, scenario_id: str = "") -> Rem:
    """Build one layer per ``layer_plan`` entry (feature name -> cell width)."""
    if not layer_plan:
        raise ValueError("layer_plan is empty")
    x, y = project_records(records, origin)
    grid_origin = PlanarPoint(0.0, 0.0)
    layers = []
    for name, width in layer_plan.items():
        spec = GridSpec(grid_origin, float(width))
        vals = [r.features.get(name) for r in records]
        mask = np.array([v is not None for v in vals], dtype=bool)
        if not mask.any():
            raise EmptyLayerError(name)
        v = np.array([0.0 if a is None else a for a in vals], dtype=float)[mask]
        layers.append(_layer_from_points(name, spec, x[mask], y[mask], v))
    return Rem(scenario_id, origin, layers)


def _lookup_layer(layer: RemLayer, i: int, j: int, max_ring: int) -> Tuple[float, int]:
    hit = layer.cells.get((i, j))
    if hit is not None:
        return hit.mean, 0
    cells = layer.cells
    for r in range(1, max_ring + 1):
        found = []
        for di in range(-r, r + 1):
            if abs(di) == r:
                djs = range(-r, r + 1)
            else:
                djs = (-r, r)
            for dj in djs:
                c = cells.get((i + di, j + dj))
                if c is not None:
                    found.append(c)
        if found:
            total = sum(c.count for c in found)
            return math.fsum(c.mean * c.count for c in found) / total, 1
    return layer.global_mean, 1


def lookup(rem: Rem, point: PlanarPoint, max_ring: int = DEFAULT_MAX_RING) -> LookupResult:
    """Feature vector of the REM at ``point``.

    An empty cell falls back to the count-weighted mean of the nearest
    populated square ring within ``max_ring``, then to the layer's global
    mean. Either fallback sets that layer's miss flag.
    """
    if not rem.layers:
        raise ValueError("rem has no layers")
    values, flags = {}, {}
    for layer in rem.layers:
        i, j = cell_index(point, layer.spec)
        values[layer.feature_name], flags[layer.feature_name] = _lookup_layer(
            layer, i, j, max_ring)
    return LookupResult(values, flags)


def lookup_many(rem: Rem, x: np.ndarray, y: np.ndarray,
                max_ring: int = DEFAULT_MAX_RING) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`lookup` over planar points.

    Returns ``(values, miss_flags)``, both shaped ``(len(x), n_layers)`` with
    columns in layer order.
    """
    n, L = len(x), len(rem.layers)
    values = np.empty((n, L), dtype=float)
    flags = np.zeros((n, L), dtype=float)
    for col, layer in enumerate(rem.layers):
        ii, jj = _cell_indices(np.asarray(x, float), np.asarray(y, float), layer.spec)
        for row, (i, j) in enumerate(zip(ii.tolist(), jj.tolist())):
            values[row, col], flags[row, col] = _lookup_layer(layer, i, j, max_ring)
    return values, flags


def lookup_geo(rem: Rem, latitude: float, longitude: float,
               max_ring: int = DEFAULT_MAX_RING) -> LookupResult:
    p = project(latitude, longitude, rem.origin.latitude, rem.origin.longitude)
    return lookup(rem, p, max_ring)


def miss_fraction(rem: Rem, x: np.ndarray, y: np.ndarray) -> float:
    """Share of (point, layer) lookups whose containing cell is empty."""
    _, flags = lookup_many(rem, x, y, max_ring=0)
    return float(flags.mean())


def rem_to_dict(rem: Rem) -> dict:
    layers = []
    for l in rem.layers:
        cells = [[i, j, c.mean, c.count] for (i, j), c in sorted(l.cells.items())]
        layers.append({"feature_name": l.feature_name, "cell_width": l.cell_width,
                       "global_mean": l.global_mean, "cells": cells})
    return {"format_version": REM_FORMAT_VERSION, "scenario_id": rem.scenario_id,
            "origin": {"latitude": rem.origin.latitude, "longitude": rem.origin.longitude},
            "layers": layers}


def rem_from_dict(doc: Mapping) -> Rem:
    if doc.get("format_version") != REM_FORMAT_VERSION:
        raise RemFormatError(f"unsupported REM format_version {doc.get('format_version')!r}")
    try:
        origin = GeoOrigin(float(doc["origin"]["latitude"]), float(doc["origin"]["longitude"]))
        layers = []
        for ld in doc["layers"]:
            spec = GridSpec(PlanarPoint(0.0, 0.0), float(ld["cell_width"]))
            cells = {(int(i), int(j)): CellStats(float(m), int(c)) for i, j, m, c in ld["cells"]}
            layers.append(RemLayer(ld["feature_name"], spec, cells, float(ld["global_mean"])))
        return Rem(doc.get("scenario_id", ""), origin, layers)
    except (KeyError, TypeError, ValueError) as exc:
        raise RemFormatError(f"malformed REM document: {exc}") from exc


def save_rem(rem: Rem, path) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(rem_to_dict(rem), fh)
        fh.write("\n")
    os.replace(tmp, path)


def load_rem(path) -> Rem:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise RemFormatError(f"{path}: corrupt REM file ({exc})") from exc
    return rem_from_dict(doc)


def build_rem_arrays(x: np.ndarray, y: np.ndarray, values: np.ndarray,
                     layer_plan: Mapping[str, float], columns: Sequence[str],
                     origin: GeoOrigin, scenario_id: str = "") -> Rem:
    """:func:`build_rem` over pre-projected points.

    ``values`` is ``(n, len(columns))`` with NaN marking a missing value.
    """
    if not layer_plan:
        raise ValueError("layer_plan is empty")
    col_of = {c: k for k, c in enumerate(columns)}
    grid_origin = PlanarPoint(0.0, 0.0)
    layers = []
    for name, width in layer_plan.items():
        if name not in col_of:
            raise EmptyLayerError(name)
        v = values[:, col_of[name]]
        mask = ~np.isnan(v)
        if not mask.any():
            raise EmptyLayerError(name)
        layers.append(_layer_from_points(name, GridSpec(grid_origin, float(width)),
                                         x[mask], y[mask], v[mask]))
    return Rem(scenario_id, origin, layers)
