"""How often would a drive meet tele-operation uplink requirements?

Run: python3 demos/04_feasibility.py
"""
# %%
import numpy as np

from remrate.evaluation import ecdf, ecdf_at, feasibility_report, load_catalog
from remrate.synthetic import generate, noisy_snapshot_scenario

rates = np.array([r.target_rate for r in generate(noisy_snapshot_scenario(seed=2)).records])
curve = ecdf(rates)
print(f"median rate {np.median(rates):.1f} Mbit/s, 10th percentile {np.percentile(rates, 10):.1f}")
for x in (10, 30, 50):
    print(f"P(rate <= {x}) = {ecdf_at(curve, x):.2f}")

# %%
report = feasibility_report(rates, load_catalog())
for row in sorted(report.rows, key=lambda r: r.ul_rate_min):
    print(f"{row.ul_rate_min:5.0f} Mbit/s  {row.infeasible_fraction:6.1%} infeasible  {row.source_label}")
print(f"\n{report.uncertain_fraction:.1%} of samples fall between the loosest "
      f"({report.band_low:g}) and strictest ({report.band_high:g}) requirement")
