"""Per-feature cell widths found by random search, against fixed widths.

Run: python3 demos/03_irem_search.py
"""
# %%
from remrate.forest import ForestParams
from remrate.irem import DEFAULT_WIDTHS, IremConfig, optimize
from remrate.pipelines import CvConfig, Dataset
from remrate.synthetic import generate, sparse_scenario

data = Dataset(generate(sparse_scenario(seed=1)).records)
forest = ForestParams(n_trees=30)
protocol = CvConfig(k=2, repetitions=1, seed=3)

result = optimize(data, protocol, data.features, forest,
                  IremConfig(DEFAULT_WIDTHS, iterations=60, seed=3))

# %% The first seven iterations are the uniform plans.
for width, score in sorted(result.uniform_rmses().items()):
    print(f"all layers at {width:5.0f} m -> {score:.3f}")
print(f"\nbest plan {result.best_plan} -> {result.best_rmse:.3f} "
      f"(iteration {result.best_iteration}, {result.evaluated_unique} distinct plans)")

# %%
best = result.best_so_far()
for i in (0, 6, 15, 30, len(best) - 1):
    print(f"best after {i + 1:3d} iterations: {best[i]:.3f}")
