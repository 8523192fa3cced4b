"""Random search over per-layer REM cell widths (IREM).

Each iteration proposes a layer plan (feature -> cell width) and scores it by
the validation RMSE of a REM-based pipeline. Plans already scored are served
from a cache; a cache hit still counts as an iteration.

Proposal order:

1. With ``include_uniform_seeds`` the first iterations are the uniform plans
   (every layer at the same width), in candidate order.
2. If the whole search space fits in the iteration budget, the plans not yet
   proposed follow in a seeded random order, so the space is enumerated.
3. Remaining iterations draw every layer's width independently and uniformly
   from ``Philox(SeedSequence([seed, iteration]))``.
"""
from __future__ import annotations

import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .forest import ForestParams
from .ingest import MeasurementRecord
from .pipelines import CvConfig, Dataset, HoldoutConfig, PipelineMode, validation_rmse

DEFAULT_WIDTHS = (10.0, 20.0, 50.0, 75.0, 100.0, 200.0, 400.0)
PLAN_FORMAT_VERSION = 1


@dataclass
class IremConfig:
    candidate_widths: Sequence[float] = DEFAULT_WIDTHS
    iterations: int = 2000
    seed: int = 0
    objective_mode: PipelineMode = PipelineMode.REM
    include_uniform_seeds: bool = True

    def __post_init__(self):
        self.candidate_widths = tuple(float(w) for w in self.candidate_widths)
        self.objective_mode = PipelineMode(self.objective_mode)
        w = self.candidate_widths
        if not w:
            raise ValueError("candidate_widths is empty")
        if any(not (math.isfinite(x) and x > 0) for x in w):
            raise ValueError("candidate widths must be finite and > 0")
        if any(b <= a for a, b in zip(w, w[1:])):
            raise ValueError("candidate widths must be strictly increasing")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.objective_mode.uses_rem:
            raise ValueError("objective_mode must use a REM")


@dataclass
class TraceEntry:
    iteration: int
    plan: Dict[str, float]
    rmse: float
    cached: bool


@dataclass
class IremResult:
    best_plan: Dict[str, float]
    best_rmse: float
    best_iteration: int
    trace: List[TraceEntry]
    evaluated_unique: int
    feature_names: List[str] = field(default_factory=list)

    def best_so_far(self) -> np.ndarray:
        return np.minimum.accumulate([e.rmse for e in self.trace])

    def uniform_rmses(self) -> Dict[float, float]:
        """Objective of every uniform plan found in the trace."""
        out = {}
        for e in self.trace:
            widths = set(e.plan.values())
            if len(widths) == 1:
                out.setdefault(widths.pop(), e.rmse)
        return out

    def to_dict(self) -> dict:
        return {"format_version": PLAN_FORMAT_VERSION, "best_plan": self.best_plan,
                "best_rmse": self.best_rmse, "best_iteration": self.best_iteration,
                "evaluated_unique": self.evaluated_unique,
                "feature_names": self.feature_names,
                "trace": [{"iteration": e.iteration, "plan": e.plan, "rmse": e.rmse,
                           "cached": e.cached} for e in self.trace]}


def _plan_rng(seed: int, iteration: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(iteration)])))


def propose_plans(feature_names: Sequence[str], config: IremConfig) -> List[Tuple[int, ...]]:
    """Width-index tuples for every iteration, in order."""
    W, d = len(config.candidate_widths), len(feature_names)
    out: List[Tuple[int, ...]] = []
    if config.include_uniform_seeds:
        out += [(w,) * d for w in range(W)]
    space = W ** d if d * math.log(W) < 64 * math.log(2) else None
    if space is not None and space <= config.iterations:
        seen = set(out)
        rest = [p for p in itertools.product(range(W), repeat=d) if p not in seen]
        # word 2**32 lies outside the iteration range, so this stream is separate
        order = _plan_rng(config.seed, 2 ** 32).permutation(len(rest))
        out += [rest[k] for k in order]
    it = len(out)
    while len(out) < config.iterations:
        out.append(tuple(int(v) for v in _plan_rng(config.seed, it).integers(0, W, d)))
        it += 1
    return out[: config.iterations]


Objective = Callable[[Dict[str, float]], float]


def search(objective: Objective, feature_names: Sequence[str], config: IremConfig,
           threads: int = 1) -> IremResult:
    """Run the random search against an arbitrary plan objective."""
    feature_names = list(feature_names)
    if not feature_names:
        raise ValueError("feature_names is empty")
    widths = config.candidate_widths
    proposals = propose_plans(feature_names, config)
    unique: List[Tuple[int, ...]] = list(dict.fromkeys(proposals))

    def to_plan(key):
        return {f: widths[k] for f, k in zip(feature_names, key)}

    if threads > 1 and len(unique) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scores = list(pool.map(lambda key: objective(to_plan(key)), unique))
    else:
        scores = [objective(to_plan(key)) for key in unique]
    cache = dict(zip(unique, scores))

    trace, seen = [], set()
    best_i = 0
    for i, key in enumerate(proposals):
        trace.append(TraceEntry(i, to_plan(key), float(cache[key]), key in seen))
        seen.add(key)
        if trace[i].rmse < trace[best_i].rmse:
            best_i = i
    return IremResult(dict(trace[best_i].plan), trace[best_i].rmse, best_i, trace,
                      len(unique), feature_names)


def optimize(train_records: Union[Sequence[MeasurementRecord], Dataset],
             validation_protocol: Union[CvConfig, HoldoutConfig, None],
             feature_names: Sequence[str], forest_params: ForestParams,
             config: IremConfig, threads: int = 1) -> IremResult:
    """Search per-layer widths minimising validation RMSE of ``config.objective_mode``.

    ``validation_protocol`` defaults to an 80/20 holdout seeded from
    ``config.seed``. Forest seeds depend only on the protocol, so every plan is
    scored against identical splits and identical forest randomness.
    """
    if validation_protocol is None:
        validation_protocol = HoldoutConfig(0.2, config.seed)
    data = train_records if isinstance(train_records, Dataset) else Dataset(train_records)
    mode = config.objective_mode

    def objective(plan):
        return validation_rmse(data, mode, plan, forest_params, validation_protocol)

    return search(objective, feature_names, config, threads=threads)


def save_result(result: IremResult, path) -> None:
    with open(path, "w") as fh:
        json.dump(result.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_plan(plan: Mapping[str, float], path) -> None:
    with open(path, "w") as fh:
        json.dump({"format_version": PLAN_FORMAT_VERSION, "layer_plan": dict(plan)}, fh,
                  indent=2, sort_keys=True)
        fh.write("\n")


def load_plan(path) -> Dict[str, float]:
    """Layer plan from a plan file, an IREM result, or a bare mapping."""
    with open(path) as fh:
        doc = json.load(fh)
    if "layer_plan" in doc:
        doc = doc["layer_plan"]
    elif "best_plan" in doc:
        doc = doc["best_plan"]
    return {str(k): float(v) for k, v in doc.items()}
