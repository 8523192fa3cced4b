"""Drive-test trace ingestion.

Parses CSV traces into :class:`MeasurementRecord` objects, projects geodetic
coordinates onto a local metric plane and groups records by scenario.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

EARTH_RADIUS_M = 6_371_000.0
BUNDLE_FORMAT_VERSION = 1

MANDATORY_FIELDS = ("timestamp", "latitude", "longitude", "target_rate")
OPTIONAL_FIELDS = ("scenario_id", "direction", "transport")


class IngestError(Exception):
    """Base class for trace ingestion failures."""


class MissingColumnError(IngestError):
    pass


class NoValidRowsError(IngestError):
    pass


class BundleFormatError(IngestError):
    pass


class Direction(str, Enum):
    UL = "UL"
    DL = "DL"


class Transport(str, Enum):
    UDP = "UDP"
    TCP = "TCP"


@dataclass(frozen=True)
class MeasurementRecord:
    """One geotagged drive-test sample.

    ``features`` maps a feature name to a float, or to ``None`` when the value
    was not measured. Missing values are never encoded as sentinels.
    """

    timestamp: float
    latitude: float
    longitude: float
    features: Mapping[str, Optional[float]]
    target_rate: float
    scenario_id: str = ""
    direction: Direction = Direction.UL
    transport: Transport = Transport.UDP

    def __post_init__(self):
        problem = validate_record(self)
        if problem:
            raise ValueError(problem)

    def feature(self, name: str) -> Optional[float]:
        return self.features.get(name)


def validate_record(rec: MeasurementRecord) -> Optional[str]:
    """Return a description of the first violated invariant, or None."""
    if not math.isfinite(rec.timestamp):
        return "timestamp not finite"
    if not (-90.0 <= rec.latitude <= 90.0):
        return f"latitude {rec.latitude} outside [-90, 90]"
    if not (-180.0 <= rec.longitude <= 180.0):
        return f"longitude {rec.longitude} outside [-180, 180]"
    if not math.isfinite(rec.target_rate) or rec.target_rate < 0:
        return f"target_rate {rec.target_rate} not a finite nonnegative value"
    for name, value in rec.features.items():
        if value is not None and not math.isfinite(value):
            return f"feature {name!r} not finite"
    return None


@dataclass(frozen=True)
class PlanarPoint:
    x: float
    y: float


@dataclass(frozen=True)
class GeoOrigin:
    latitude: float
    longitude: float


@dataclass
class ColumnMapping:
    """Canonical name -> source column, plus an optional unit per column.

    ``features`` maps feature names to source columns separately from the
    fixed record fields.
    """

    fields: Dict[str, str]
    features: Dict[str, str] = field(default_factory=dict)
    units: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        missing = [f for f in MANDATORY_FIELDS if f not in self.fields]
        if missing:
            raise MissingColumnError(f"mapping lacks mandatory fields: {missing}")

    @classmethod
    def canonical(cls, feature_names: Iterable[str]) -> "ColumnMapping":
        """Identity mapping used by :func:`write_trace`."""
        names = list(MANDATORY_FIELDS) + list(OPTIONAL_FIELDS)
        return cls(fields={n: n for n in names},
                   features={f: f for f in feature_names})

    @classmethod
    def from_json(cls, path) -> "ColumnMapping":
        with open(path) as fh:
            doc = json.load(fh)
        return cls(fields=dict(doc.get("fields", {})),
                   features=dict(doc.get("features", {})),
                   units=dict(doc.get("units", {})))

    def to_json(self, path) -> None:
        doc = {"fields": self.fields, "features": self.features, "units": self.units}
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")


@dataclass
class ParseResult:
    records: List[MeasurementRecord]
    rejected: int


def _parse_float(text: str) -> Optional[float]:
    text = text.strip()
    if text == "" or text.lower() in ("nan", "na", "null", "none"):
        return None
    return float(text)


def parse_trace(path, mapping: ColumnMapping) -> ParseResult:
    """Read a CSV trace into records.

    Lines starting with ``#`` are treated as comments.
    Rows that fail to parse or break a record invariant are skipped and
    counted in ``ParseResult.rejected``.

    Raises:
        FileNotFoundError: ``path`` does not exist.
        MissingColumnError: a mapped column is absent from the header.
        NoValidRowsError: the file holds no acceptable row.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"trace not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        header = reader.fieldnames or []
        wanted = [mapping.fields[f] for f in MANDATORY_FIELDS]
        wanted += list(mapping.features.values())
        absent = [c for c in wanted if c not in header]
        if absent:
            raise MissingColumnError(f"columns absent from {path.name}: {absent}")
        records: List[MeasurementRecord] = []
        rejected = 0
        for row in reader:
            try:
                records.append(_row_to_record(row, mapping))
            except (ValueError, TypeError, KeyError):
                rejected += 1
    if not records:
        raise NoValidRowsError(f"{path}: no valid rows ({rejected} rejected)")
    return ParseResult(records, rejected)


def _row_to_record(row: Mapping[str, str], mapping: ColumnMapping) -> MeasurementRecord:
    cols = mapping.fields
    vals = {f: _parse_float(row[cols[f]]) for f in MANDATORY_FIELDS}
    if any(v is None for v in vals.values()):
        raise ValueError("mandatory field empty")
    feats = {name: _parse_float(row[col]) for name, col in mapping.features.items()}
    extra = {}
    if "scenario_id" in cols and cols["scenario_id"] in row:
        extra["scenario_id"] = row[cols["scenario_id"]] or ""
    if "direction" in cols and row.get(cols["direction"]):
        extra["direction"] = Direction(row[cols["direction"]].strip().upper())
    if "transport" in cols and row.get(cols["transport"]):
        extra["transport"] = Transport(row[cols["transport"]].strip().upper())
    return MeasurementRecord(timestamp=vals["timestamp"], latitude=vals["latitude"],
                             longitude=vals["longitude"], features=feats,
                             target_rate=vals["target_rate"], **extra)


def feature_names_of(records: Sequence[MeasurementRecord]) -> List[str]:
    """Sorted union of feature names over ``records``."""
    names = set()
    for r in records:
        names.update(r.features)
    return sorted(names)


def _fmt(v: Optional[float]) -> str:
    return "" if v is None else repr(float(v))


def write_trace(records: Sequence[MeasurementRecord], path,
                feature_names: Optional[Sequence[str]] = None) -> ColumnMapping:
    """Write records in the canonical CSV layout and return its mapping.

    Floats are written with ``repr`` so :func:`parse_trace` reads them back
    bit-exactly.
    """
    if feature_names is None:
        feature_names = feature_names_of(records)
    mapping = ColumnMapping.canonical(feature_names)
    header = list(MANDATORY_FIELDS) + list(OPTIONAL_FIELDS) + list(feature_names)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in records:
            w.writerow([_fmt(r.timestamp), _fmt(r.latitude), _fmt(r.longitude),
                        _fmt(r.target_rate), r.scenario_id, r.direction.value,
                        r.transport.value]
                       + [_fmt(r.features.get(f)) for f in feature_names])
    return mapping


def project(latitude: float, longitude: float, origin_lat: float,
            origin_lon: float) -> PlanarPoint:
    """Local equirectangular projection to meters east/north of the origin."""
    k = math.pi / 180.0
    x = EARTH_RADIUS_M * (longitude - origin_lon) * k * math.cos(origin_lat * k)
    y = EARTH_RADIUS_M * (latitude - origin_lat) * k
    return PlanarPoint(x, y)


def unproject(point: PlanarPoint, origin_lat: float, origin_lon: float) -> Tuple[float, float]:
    """Inverse of :func:`project`; returns ``(latitude, longitude)``."""
    k = math.pi / 180.0
    lat = origin_lat + point.y / (EARTH_RADIUS_M * k)
    lon = origin_lon + point.x / (EARTH_RADIUS_M * k * math.cos(origin_lat * k))
    return lat, lon


@dataclass
class Scenario:
    scenario_id: str
    origin: GeoOrigin
    records: List[MeasurementRecord]
    metadata: Dict[str, object] = field(default_factory=dict)


def scenario_origin(records: Sequence[MeasurementRecord]) -> GeoOrigin:
    return GeoOrigin(min(r.latitude for r in records), min(r.longitude for r in records))


def split_scenarios(records: Sequence[MeasurementRecord]) -> Dict[str, Scenario]:
    """Group records by ``scenario_id``, keeping input order within groups."""
    if not records:
        raise ValueError("no records to split")
    groups: Dict[str, List[MeasurementRecord]] = {}
    for r in records:
        groups.setdefault(r.scenario_id, []).append(r)
    return {sid: Scenario(sid, scenario_origin(recs), recs) for sid, recs in groups.items()}


def project_records(records: Sequence[MeasurementRecord], origin: GeoOrigin):
    """Planar coordinates of ``records`` as two numpy arrays ``(x, y)``."""
    lat = np.array([r.latitude for r in records], dtype=float)
    lon = np.array([r.longitude for r in records], dtype=float)
    k = math.pi / 180.0
    x = EARTH_RADIUS_M * (lon - origin.longitude) * k * math.cos(origin.latitude * k)
    y = EARTH_RADIUS_M * (lat - origin.latitude) * k
    return x, y


def record_to_dict(r: MeasurementRecord) -> dict:
    return {"timestamp": r.timestamp, "latitude": r.latitude, "longitude": r.longitude,
            "features": dict(sorted(r.features.items())), "target_rate": r.target_rate,
            "scenario_id": r.scenario_id, "direction": r.direction.value,
            "transport": r.transport.value}


def record_from_dict(d: Mapping) -> MeasurementRecord:
    return MeasurementRecord(timestamp=float(d["timestamp"]), latitude=float(d["latitude"]),
                             longitude=float(d["longitude"]),
                             features={k: (None if v is None else float(v))
                                       for k, v in d["features"].items()},
                             target_rate=float(d["target_rate"]),
                             scenario_id=d.get("scenario_id", ""),
                             direction=Direction(d.get("direction", "UL")),
                             transport=Transport(d.get("transport", "UDP")))


def scenario_to_dict(scenario: Scenario) -> dict:
    return {
        "format_version": BUNDLE_FORMAT_VERSION,
        "scenario_id": scenario.scenario_id,
        "origin": {"latitude": scenario.origin.latitude,
                   "longitude": scenario.origin.longitude},
        "metadata": scenario.metadata,
        "records": [record_to_dict(r) for r in scenario.records],
    }


def save_bundle(scenario: Scenario, path) -> None:
    doc = scenario_to_dict(scenario)
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def load_bundle(path) -> Scenario:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise BundleFormatError(f"{path}: corrupt bundle ({exc})") from exc
    if doc.get("format_version") != BUNDLE_FORMAT_VERSION:
        raise BundleFormatError(f"{path}: unsupported format_version {doc.get('format_version')!r}")
    try:
        origin = GeoOrigin(float(doc["origin"]["latitude"]), float(doc["origin"]["longitude"]))
        records = [record_from_dict(d) for d in doc["records"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise BundleFormatError(f"{path}: malformed bundle ({exc})") from exc
    return Scenario(doc.get("scenario_id", ""), origin, records, doc.get("metadata", {}))
