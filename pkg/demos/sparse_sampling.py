# %% [markdown]
# # How many pairwise judgments does a ranking need?
#
# A candidate set of 100 documents has 4950 pairs. Judging them all is
# expensive, so we fit Elos from a sparse subset and compare against the fit
# on the dense matrix. Run with `python3 demos/sparse_sampling.py`.

# %%
from zelo import ModelKind, StudyConfig, convergence_study, graph_stats, sample_cycle_union

# %% [markdown]
# ## Cycle-union graphs
#
# Four random Hamiltonian cycles give every document exactly 8 comparisons.
# The graph stays connected and its diameter is small, so every document is
# only a few hops from every other.

# %%
g = sample_cycle_union(100, 8, seed=0)
print(graph_stats(g))

# %% [markdown]
# ## Cycles versus random pairs
#
# Same hidden Elos, same dense judgments, two ways of choosing which pairs to
# keep. Random pairs leave documents isolated at small budgets; those trials
# count as failures.

# %%
cfg = StudyConfig(n=100, strategies=("cycles", "random"), budgets=(200, 400, 800),
                  trials=10, model=ModelKind.THURSTONE, seed=0, workers=4)
rows, _ = convergence_study(cfg)
print(f"{'strategy':8s} {'budget':>6s} {'failed':>6s} {'mse':>8s}")
for r in rows:
    print(f"{r['strategy']:8s} {r['budget']:6d} {r['failures']:6d} {r['mse_mean']:8.4f}")

# %% [markdown]
# Cycle graphs never fail, and at equal budget they sit a little closer to the
# dense fit. The gap narrows as the budget grows and both converge.

# %%
at = {(r["strategy"], r["budget"]): r["mse_mean"] for r in rows}
print(f"random/cycles MSE ratio at 400: {at['random', 400] / at['cycles', 400]:.2f}")
