# %% [markdown]
# # From pairwise votes to pointwise scores
#
# Three noisy synthetic judges compare documents for one query. Their votes
# are fitted into Elos, which become SFT targets for a pointwise reranker.
# Run with `python3 demos/annotate_and_fit.py`.

# %%
import numpy as np
from scipy.stats import spearmanr

from zelo import CandidateSet, Document, ModelKind, Query, compute_zelo
from zelo.core import PreferenceRecord
from zelo.ensemble import SyntheticJudge, ensemble_score
from zelo.graphs import sample_cycle_union
from zelo.pipeline import emit_sft

rng = np.random.default_rng(0)
n = 40
hidden = rng.normal(size=n)
query = Query("q", "what causes tides")
docs = [Document(f"d{i}", f"passage {i}") for i in range(n)]
judges = [SyntheticJudge(hidden, noise_scale=1.0, seed=s, indifference=0.3) for s in range(3)]

# %% [markdown]
# Each edge of an 8-regular cycle-union graph gets one ensemble score: every
# judge votes once with the presentation order randomised, and the mean vote
# maps to a win probability.

# %%
graph = sample_cycle_union(n, 8, rng)
records = []
for i, j in graph.edge_list():
    score = ensemble_score(judges, query, docs, i, j, rng)
    records.append(PreferenceRecord(query.id, i, j, score.unit))
print(f"{len(records)} ensemble judgments out of {n * (n - 1) // 2} pairs")

# %%
fit = compute_zelo(records, n, ModelKind.THURSTONE)
print(f"converged={fit.converged} after {fit.iterations} iterations")
print(f"rank correlation with hidden Elos: {spearmanr(fit.elos, hidden)[0]:.3f}")

# %% [markdown]
# Logistic squashing keeps the targets in (0, 1) and preserves the order.

# %%
cs = CandidateSet(query.id, [d.id for d in docs])
for rec in emit_sft(cs, fit.elos)[:5]:
    print(rec.to_json())
