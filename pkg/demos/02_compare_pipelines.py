"""Instantaneous vs map-based vs combined prediction on two designed scenarios.

Scenario "noisy_snapshot" corrupts every live measurement with 6 dB noise;
"varying_load" keeps measurements exact but changes cell load every 30 s.

Run: python3 demos/02_compare_pipelines.py
"""
# %%
from remrate.evaluation import compare_pipelines
from remrate.forest import ForestParams
from remrate.pipelines import CvConfig, Dataset, run_cv
from remrate.synthetic import generate, noisy_snapshot_scenario, oracle_rmse_floor, varying_load_scenario

forest = ForestParams(n_trees=30)
cv = CvConfig(k=5, repetitions=2, seed=1)

# %%
for make in (noisy_snapshot_scenario, varying_load_scenario):
    cfg = make(seed=1)
    data = Dataset(generate(cfg).records)
    plan = {f: 50.0 for f in data.features}
    reports = {m: run_cv(data, m, None if m == "instantaneous" else plan, forest, cv)
               for m in ("instantaneous", "rem", "combined")}
    print(f"\n{cfg.scenario_id}  (noise floor {oracle_rmse_floor(cfg):.2f} Mbit/s)")
    for row in compare_pipelines(reports):
        print(f"  {row.mode:<14} rmse {row.mean_rmse:6.2f} ± {row.std_rmse:4.2f}  gain {row.gain:+.1%}")
