import numpy as np
import pytest

from remrate.ingest import MeasurementRecord
from remrate.synthetic import ShadowingConfig, SynthConfig, TraceConfig, generate


def make_record(lat=51.5, lon=7.4, rate=10.0, scenario="s", t=0.0, **features):
    return MeasurementRecord(timestamp=t, latitude=lat, longitude=lon, features=features,
                             target_rate=rate, scenario_id=scenario)


@pytest.fixture
def record_factory():
    return make_record


@pytest.fixture(scope="session")
def small_trace():
    cfg = SynthConfig(area_width_m=500, area_height_m=500, n_base_stations=2,
                      shadowing=ShadowingConfig(resolution_m=50, sigma_db=6, smoothing_cells=1),
                      snapshot_noise_sigma_db=3, rate_noise_sigma=0.1,
                      trace=TraceConfig(n_records=300, n_waypoints=6, speed_mps=5), seed=11)
    return generate(cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
