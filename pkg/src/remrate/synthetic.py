"""Synthetic drive-test traces over a known radio field.

The field is built from log-distance path loss plus a spatially correlated
shadowing surface per base station. Rates follow a Shannon-style mapping
scaled by a time-varying load share. Because the noise-free field is known,
the generated data has a computable error floor against which prediction
pipelines can be compared.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .evaluation import rmse
from .ingest import MeasurementRecord, PlanarPoint, unproject

FEATURES = ("rsrp", "rsrq", "sinr")


@dataclass
class ShadowingConfig:
    resolution_m: float = 25.0
    sigma_db: float = 8.0
    smoothing_cells: int = 2


@dataclass
class TraceConfig:
    n_records: int = 2000
    n_waypoints: int = 40
    speed_mps: float = 10.0
    interval_s: float = 1.0


@dataclass
class SynthConfig:
    area_width_m: float = 1000.0
    area_height_m: float = 1000.0
    n_base_stations: int = 4
    path_loss_exponent: float = 3.0
    pl0_db: float = 30.0
    tx_power_dbm: float = 15.0
    noise_floor_dbm: float = -120.0
    shadowing: ShadowingConfig = field(default_factory=ShadowingConfig)
    snapshot_noise_sigma_db: float = 0.0
    rate_noise_sigma: float = 0.0
    bandwidth_mhz: float = 20.0
    # (start time in s, load share in (0, 1]) pairs; the last level holds forever
    load_profile: List[Tuple[float, float]] = field(default_factory=lambda: [(0.0, 1.0)])
    trace: TraceConfig = field(default_factory=TraceConfig)
    origin_lat: float = 51.5
    origin_lon: float = 7.4
    start_time: float = 1_600_000_000.0
    scenario_id: str = "synthetic"
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.shadowing, dict):
            self.shadowing = ShadowingConfig(**self.shadowing)
        if isinstance(self.trace, dict):
            self.trace = TraceConfig(**self.trace)
        self.load_profile = [(float(t), float(v)) for t, v in self.load_profile]
        self.validate()

    def validate(self) -> None:
        if self.n_base_stations < 1:
            raise ValueError("need at least one base station")
        if not (self.area_width_m > 0 and self.area_height_m > 0):
            raise ValueError("area must have positive extent")
        if self.path_loss_exponent <= 0:
            raise ValueError("path_loss_exponent must be > 0")
        for name in ("snapshot_noise_sigma_db", "rate_noise_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.shadowing.sigma_db < 0 or self.shadowing.resolution_m <= 0:
            raise ValueError("invalid shadowing settings")
        if not self.load_profile or any(not 0 < v <= 1 for _, v in self.load_profile):
            raise ValueError("load_profile levels must lie in (0, 1]")
        if self.trace.n_records < 1 or self.trace.n_waypoints < 2:
            raise ValueError("trace needs >= 1 record and >= 2 waypoints")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["load_profile"] = [list(p) for p in self.load_profile]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "SynthConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _db_to_mw(db):
    return 10.0 ** (np.asarray(db) / 10.0)


def _mw_to_db(mw):
    return 10.0 * np.log10(mw)


@dataclass
class GroundTruth:
    """Noise-free radio field of one synthetic scenario."""

    config: SynthConfig
    bs_xy: np.ndarray                 # (n_bs, 2) planar positions in m
    shadow_grids: np.ndarray          # (n_bs, ny, nx) shadowing in dB
    grid_origin: Tuple[float, float]  # planar position of grid node (0, 0)

    def load(self, t) -> np.ndarray:
        """Load share at seconds since trace start."""
        starts = np.array([s for s, _ in self.config.load_profile])
        levels = np.array([v for _, v in self.config.load_profile])
        k = np.searchsorted(starts, np.asarray(t, float), side="right") - 1
        return levels[np.clip(k, 0, len(levels) - 1)]

    def _shadow(self, x, y) -> np.ndarray:
        res = self.config.shadowing.resolution_m
        cols = (np.asarray(x, float) - self.grid_origin[0]) / res
        rows = (np.asarray(y, float) - self.grid_origin[1]) / res
        out = np.empty((len(self.shadow_grids), cols.size))
        for b, grid in enumerate(self.shadow_grids):
            out[b] = ndimage.map_coordinates(grid, [rows.ravel(), cols.ravel()],
                                             order=1, mode="nearest")
        return out

    def received_power(self, x, y) -> np.ndarray:
        """Received power from every base station, dBm, shape (n_bs, n)."""
        x = np.atleast_1d(np.asarray(x, float))
        y = np.atleast_1d(np.asarray(y, float))
        c = self.config
        d = np.hypot(x[None, :] - self.bs_xy[:, :1], y[None, :] - self.bs_xy[:, 1:])
        pl = c.pl0_db + 10.0 * c.path_loss_exponent * np.log10(np.maximum(d, 1.0))
        return c.tx_power_dbm - pl + self._shadow(x, y)

    def evaluate(self, x, y, t=0.0) -> Dict[str, np.ndarray]:
        """True rsrp (dBm), sinr (dB), rsrq (dB), load and expected rate (Mbit/s)."""
        rx = self.received_power(x, y)
        n = rx.shape[1]
        serving = np.argmax(rx, axis=0)
        s_db = rx[serving, np.arange(n)]
        lin = _db_to_mw(rx)
        s = lin[serving, np.arange(n)]
        interf = lin.sum(axis=0) - s
        noise = float(_db_to_mw(self.config.noise_floor_dbm))
        sinr = s / (interf + noise)
        load = np.broadcast_to(self.load(t), (n,)).astype(float)
        # RSRQ sees the serving cell's own traffic: reference symbols fill 2 of
        # 12 subcarriers, data the other 10 in proportion to utilisation.
        occupancy = (2.0 + 10.0 * (1.0 - load)) / 12.0
        rsrq = s / (12.0 * (s * occupancy + interf + noise))
        rate = load * self.config.bandwidth_mhz * np.log2(1.0 + sinr)
        return {"rsrp": s_db, "sinr": _mw_to_db(sinr), "rsrq": _mw_to_db(rsrq),
                "load": load, "expected_rate": rate, "serving": serving}

    def expected_rate(self, x, y, t=0.0) -> np.ndarray:
        return self.evaluate(x, y, t)["expected_rate"]

    def to_dict(self) -> dict:
        return {"config": self.config.to_dict(), "bs_xy": self.bs_xy.tolist(),
                "grid_origin": list(self.grid_origin),
                "shadow_grids": self.shadow_grids.tolist()}


def _shadow_fields(cfg: SynthConfig, rng: np.random.Generator):
    sh = cfg.shadowing
    margin = sh.resolution_m * (sh.smoothing_cells + 2)
    x0, y0 = -margin, -margin
    nx = int(np.ceil((cfg.area_width_m + 2 * margin) / sh.resolution_m)) + 1
    ny = int(np.ceil((cfg.area_height_m + 2 * margin) / sh.resolution_m)) + 1
    grids = rng.standard_normal((cfg.n_base_stations, ny, nx))
    if sh.smoothing_cells > 0:
        size = 2 * sh.smoothing_cells + 1
        grids = np.stack([ndimage.uniform_filter(g, size=size, mode="reflect") for g in grids])
        # averaging shrinks the variance; restore the configured sigma
        grids /= grids.std(axis=(1, 2), keepdims=True)
    return grids * sh.sigma_db, (x0, y0)


def _waypoint_path(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Positions of a cyclic tour through random waypoints at fixed spacing."""
    tr = cfg.trace
    wp = rng.uniform([0, 0], [cfg.area_width_m, cfg.area_height_m], size=(tr.n_waypoints, 2))
    loop = np.vstack([wp, wp[:1]])
    seg = np.diff(loop, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    tour = cum[-1]
    s = (np.arange(tr.n_records) * tr.speed_mps * tr.interval_s) % tour
    k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    frac = (s - cum[k]) / np.where(seg_len[k] > 0, seg_len[k], 1.0)
    return loop[k] + seg[k] * frac[:, None]


def build_truth(cfg: SynthConfig) -> Tuple[GroundTruth, np.random.Generator]:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(cfg.seed), 17])))
    bs = rng.uniform([0, 0], [cfg.area_width_m, cfg.area_height_m], size=(cfg.n_base_stations, 2))
    grids, origin = _shadow_fields(cfg, rng)
    if cfg.shadowing.sigma_db == 0:
        grids = np.zeros_like(grids)
    return GroundTruth(cfg, bs, grids, origin), rng


@dataclass
class SyntheticTrace:
    records: List[MeasurementRecord]
    truth: GroundTruth
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray            # seconds since trace start
    true_values: Dict[str, np.ndarray]

    def sidecar(self) -> dict:
        """JSON-ready description of the truth behind the records."""
        per_record = {k: v.tolist() for k, v in self.true_values.items()}
        return {"format_version": 1, "truth": self.truth.to_dict(),
                "records": {"x": self.x.tolist(), "y": self.y.tolist(),
                            "t": self.t.tolist(), **per_record}}


def generate(config: SynthConfig) -> SyntheticTrace:
    """Draw a seeded trace and the field it was sampled from."""
    config.validate()
    truth, rng = build_truth(config)
    xy = _waypoint_path(config, rng)
    n = len(xy)
    t = np.arange(n) * config.trace.interval_s
    tv = truth.evaluate(xy[:, 0], xy[:, 1], t)
    noise = rng.standard_normal((len(FEATURES), n)) * config.snapshot_noise_sigma_db
    sig = config.rate_noise_sigma
    # mean-one lognormal, so the expected rate is the conditional mean of the label
    mult = np.exp(sig * rng.standard_normal(n) - 0.5 * sig * sig)
    labels = tv["expected_rate"] * mult
    records = []
    for i in range(n):
        lat, lon = unproject(PlanarPoint(float(xy[i, 0]), float(xy[i, 1])),
                             config.origin_lat, config.origin_lon)
        feats = {f: float(tv[f][i] + noise[k, i]) for k, f in enumerate(FEATURES)}
        records.append(MeasurementRecord(timestamp=float(config.start_time + t[i]),
                                         latitude=lat, longitude=lon, features=feats,
                                         target_rate=float(labels[i]),
                                         scenario_id=config.scenario_id))
    true_values = {k: np.asarray(v, float) for k, v in tv.items()}
    return SyntheticTrace(records, truth, xy[:, 0].copy(), xy[:, 1].copy(), t, true_values)


def oracle_rmse_floor(config: SynthConfig, n_samples: int = 20000) -> float:
    """RMSE of the true expected rate against freshly drawn labels.

    The trace positions and times of ``config`` are kept and the label noise
    is redrawn until at least ``n_samples`` labels exist, so the floor refers
    to the same rate population a pipeline is evaluated on.
    """
    tr = generate(config)
    truth = tr.true_values["expected_rate"]
    reps = max(1, -(-int(n_samples) // truth.size))
    sig = config.rate_noise_sigma
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(config.seed), 29])))
    labels = truth * np.exp(sig * rng.standard_normal((reps, truth.size)) - 0.5 * sig * sig)
    return rmse(np.broadcast_to(truth, labels.shape), labels)


def stepped_load_profile(duration_s: float, segment_s: float, low: float, high: float,
                         seed: int = 0) -> List[Tuple[float, float]]:
    """Piecewise-constant load drawn uniformly from [low, high] per segment."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 23])))
    starts = np.arange(0.0, duration_s, segment_s)
    return [(float(s), float(v)) for s, v in zip(starts, rng.uniform(low, high, len(starts)))]


# --- designed scenarios ----------------------------------------------------
# Shared field: 1 km square, three sites, 8 dB shadowing correlated over ~100 m.

def _designed_field(seed: int, **overrides) -> SynthConfig:
    base = dict(n_base_stations=3, rate_noise_sigma=0.1,
                shadowing=ShadowingConfig(resolution_m=100.0, sigma_db=8.0, smoothing_cells=2),
                seed=seed)
    base.update(overrides)
    return SynthConfig(**base)


def noisy_snapshot_scenario(seed: int = 1, n_records: int = 2000) -> SynthConfig:
    """Dense slow tour, static load, 6 dB snapshot noise: map averaging pays off."""
    return _designed_field(seed, snapshot_noise_sigma_db=6.0, load_profile=[(0.0, 0.7)],
                           scenario_id="noisy_snapshot",
                           trace=TraceConfig(n_records=n_records, n_waypoints=10, speed_mps=2.0))


def varying_load_scenario(seed: int = 1, n_records: int = 2000) -> SynthConfig:
    """Same tour, exact snapshots, load stepping between 35% and 100% every 30 s."""
    profile = stepped_load_profile(float(n_records), 30.0, 0.35, 1.0, seed=seed)
    return _designed_field(seed, snapshot_noise_sigma_db=0.0, load_profile=profile,
                           scenario_id="varying_load",
                           trace=TraceConfig(n_records=n_records, n_waypoints=10, speed_mps=2.0))


def sparse_scenario(seed: int = 1, n_records: int = 2000) -> SynthConfig:
    """Fast tour through many waypoints: roughly one record per 10 m of path."""
    return _designed_field(seed, snapshot_noise_sigma_db=6.0, load_profile=[(0.0, 0.7)],
                           scenario_id="sparse",
                           trace=TraceConfig(n_records=n_records, n_waypoints=30, speed_mps=10.0))
