"""Build radio maps from a synthetic drive and watch the width trade-off.

Run: python3 demos/01_radio_map.py
"""
# %%
import numpy as np

from remrate.pipelines import Dataset
from remrate.rem import lookup_many, miss_fraction
from remrate.synthetic import generate, sparse_scenario

trace = generate(sparse_scenario(seed=1))
data = Dataset(trace.records)
print(f"{len(data)} records, features {data.features}")
print(f"sites at {np.round(trace.truth.bs_xy).tolist()}")

# %% Every second record builds the map, the rest probe it.
build, probe = np.arange(0, len(data), 2), np.arange(1, len(data), 2)
true_rsrp = trace.true_values["rsrp"][probe]

print(f"{'width':>6} {'cells':>6} {'miss':>6} {'rsrp err dB':>12}")
for width in (400, 200, 100, 50, 20, 10):
    rem = data.build_rem(build, {f: float(width) for f in data.features})
    values, _ = lookup_many(rem, data.x[probe], data.yy[probe])
    err = np.sqrt(np.mean((values[:, 0] - true_rsrp) ** 2))
    print(f"{width:>6} {len(rem.layer('rsrp').cells):>6} "
          f"{miss_fraction(rem, data.x[probe], data.yy[probe]):>6.3f} {err:>12.2f}")

# %%
# Wide cells blur the shadowing; narrow cells average too few noisy samples
# and miss more often. The sweet spot sits in between.
