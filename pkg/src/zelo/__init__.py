"""Pairwise preference judgments to pointwise relevance scores via Elo fitting."""

__version__ = "0.1.0"

from .core import (CandidateSet, Document, ModelKind, PreferenceRecord, Query,  # noqa: E402
                   SparsePreferenceMatrix, build_preference_matrix, implied_dense_matrix)
from .ensemble import (EnsembleScore, JudgeError, JudgeSpec, ReplayJudge,  # noqa: E402
                       SyntheticJudge, debiased_judgment, ensemble_score, make_judge,
                       map_to_unit, sample_until_sem)
from .evaluation import (RankedList, StudyConfig, convergence_study, elo_mse,  # noqa: E402
                         excess_cross_entropy, ndcg_at_k, pref_cross_entropy, recall_at_k)
from .graphs import (ComparisonGraph, bollobas_bound, graph_stats, sample_bipartite,  # noqa: E402
                     sample_cycle_union, sample_entropy_greedy, sample_graph,
                     sample_random_pairs)
from .io import FORMAT_VERSION  # noqa: E402
from .pipeline import (PairwiseExportRecord, RunConfig, SftRecord, annotate_query,  # noqa: E402
                       emit_sft, mine_failures, run_dataset)
from .solver import (DisconnectedGraphError, FitOptions, FitReport, compute_zelo,  # noqa: E402
                     fit_elos, nll_gradient, nll_loss, predict_pref)
