"""Radio Environmental Maps and uplink data-rate prediction for tele-operated driving."""

__version__ = "0.1.0"

from .ingest import (ColumnMapping, GeoOrigin, MeasurementRecord, PlanarPoint, parse_trace,
                     project, split_scenarios, unproject, write_trace)
from .rem import GridSpec, Rem, RemLayer, build_layer, build_rem, cell_index, load_rem, lookup, save_rem
from .forest import Forest, ForestParams, load_model, predict, save_model, train
from .pipelines import CvConfig, CvReport, HoldoutConfig, PipelineMode, assemble_features, kfold_split, run_cv
from .irem import IremConfig, IremResult, optimize
from .evaluation import TodRequirement, compare_pipelines, ecdf, ecdf_at, feasibility_report, load_catalog, rmse
from .synthetic import (SynthConfig, generate, noisy_snapshot_scenario, oracle_rmse_floor,
                        sparse_scenario, varying_load_scenario)
