"""Retrieval metrics and sparse-vs-dense Elo convergence studies."""

from __future__ import annotations

import csv
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import ModelKind, PreferenceRecord, SparsePreferenceMatrix, center
from .ensemble import SyntheticJudge
from .graphs import max_pairs, sample_graph
from .solver import DisconnectedGraphError, FitOptions, fit_elos

STUDY_COLUMNS = ["strategy", "budget", "trial_count", "failures",
                 "mse_mean", "mse_std", "xent_mean", "xent_std"]


@dataclass(frozen=True)
class RankedList:
    query_id: str
    doc_ids: tuple[str, ...]
    relevance: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "doc_ids", tuple(self.doc_ids))
        if len(set(self.doc_ids)) != len(self.doc_ids):
            raise ValueError(f"duplicate doc_ids in ranking for {self.query_id!r}")
        if any(v < 0 for v in self.relevance.values()):
            raise ValueError("relevance gains must be nonnegative")

    def gain(self, doc_id: str) -> float:
        return float(self.relevance.get(doc_id, 0.0))

    @property
    def degenerate(self) -> bool:
        """No document has positive relevance, so NDCG is undefined (reported as 0)."""
        return not any(v > 0 for v in self.relevance.values())


def _dcg(gains: Sequence[float], k: int) -> float:
    g = np.asarray(gains[:k], dtype=float)
    if g.size == 0:
        return 0.0
    return float(np.sum((2.0 ** g - 1.0) / np.log2(np.arange(2, g.size + 2))))


def ndcg_at_k(rl: RankedList, k: int = 10) -> float:
    """NDCG with exponential gain ``2^rel - 1`` and ``log2(pos + 1)`` discount.

    The ideal ordering is taken over every judged document in ``relevance``,
    listed or not. Returns 0.0 when nothing is relevant.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    ideal = _dcg(sorted(rl.relevance.values(), reverse=True), k)
    if ideal == 0.0:
        return 0.0
    return _dcg([rl.gain(d) for d in rl.doc_ids], k) / ideal


def recall_at_k(rl: RankedList, k: int, relevant_threshold: float = 1.0) -> float:
    """Share of relevant documents (gain >= threshold) retrieved in the top k."""
    relevant = {d for d, g in rl.relevance.items() if g >= relevant_threshold}
    if not relevant:
        return 0.0
    return len(relevant.intersection(rl.doc_ids[:k])) / len(relevant)


def evaluate_rankings(ranked: Sequence[RankedList], k: int = 10,
                      relevant_threshold: float = 1.0) -> dict:
    """Per-query metrics plus means with and without degenerate queries."""
    rows = []
    for rl in ranked:
        rel = {d for d, g in rl.relevance.items() if g >= relevant_threshold}
        rows.append({
            "query_id": rl.query_id,
            "ndcg": ndcg_at_k(rl, k),
            "recall": recall_at_k(rl, k, relevant_threshold),
            "degenerate": rl.degenerate,
            "recall_degenerate": not rel,
        })

    def mean(key, skip):
        vals = [r[key] for r in rows if not (skip and r[skip])]
        return float(np.mean(vals)) if vals else None

    return {
        "k": k,
        "queries": len(rows),
        "degenerate_queries": sum(r["degenerate"] for r in rows),
        f"ndcg@{k}": mean("ndcg", None),
        f"ndcg@{k}_excluding_degenerate": mean("ndcg", "degenerate"),
        f"recall@{k}": mean("recall", None),
        f"recall@{k}_excluding_degenerate": mean("recall", "recall_degenerate"),
        "per_query": rows,
    }


def elo_mse(a, b) -> float:
    """Mean squared difference after centring both vectors."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch {a.shape} vs {b.shape}")
    return float(np.mean((center(a) - center(b)) ** 2))


def _pair_logs(elos, model: ModelKind):
    e = np.asarray(elos, dtype=float)
    diff = e[:, None] - e[None, :]
    off = ~np.eye(e.size, dtype=bool)
    return model.log_link(diff[off]), model.log_link(-diff[off])


def pref_cross_entropy(a, b, model: ModelKind) -> float:
    """Mean BCE over ordered pairs i != j, targets implied by ``a``, predictions by ``b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch {a.shape} vs {b.shape}")
    if a.size < 2:
        raise ValueError("need at least two items")
    la, la_neg = _pair_logs(a, model)
    lb, lb_neg = _pair_logs(b, model)
    p = np.exp(la)
    return float(np.mean(-(p * lb + (1.0 - p) * lb_neg)))


def pref_entropy(a, model: ModelKind) -> float:
    return pref_cross_entropy(a, a, model)


def excess_cross_entropy(a, b, model: ModelKind) -> float:
    """Cross entropy minus the entropy of ``a``: the mean KL divergence, >= 0."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch {a.shape} vs {b.shape}")
    la, la_neg = _pair_logs(a, model)
    lb, lb_neg = _pair_logs(b, model)
    p = np.exp(la)
    kl = p * (la - lb) + (1.0 - p) * (la_neg - lb_neg)
    return float(np.mean(kl))


@dataclass(frozen=True)
class StudyConfig:
    """Sparse-sampling study setup.

    Each trial draws hidden Elos ``~ N(0, elo_scale^2)``, judges every pair with
    ``votes`` synthetic judges of the given noise scale, fits the dense "actual"
    Elos, and then refits on each strategy's sparse subset of the same judgments.
    ``disconnected`` chooses between counting disconnected sparse graphs as
    failures (``"fail"``) and fitting each component separately (``"fit"``).
    """

    n: int = 100
    strategies: tuple[str, ...] = ("cycles", "random")
    budgets: tuple[int, ...] = (100, 200, 400, 800, 1600)
    trials: int = 50
    elo_scale: float = 0.5
    noise_scale: float = 1.0
    votes: int = 9
    model: ModelKind = ModelKind.THURSTONE
    seed: int = 0
    disconnected: str = "fail"
    fit: FitOptions = FitOptions()
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "strategies", tuple(self.strategies))
        object.__setattr__(self, "budgets", tuple(int(b) for b in self.budgets))
        object.__setattr__(self, "model", ModelKind.parse(self.model))
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if any(b < 1 or b > max_pairs(self.n) for b in self.budgets):
            raise ValueError(f"budgets must lie in 1..{max_pairs(self.n)} for n={self.n}")
        if self.disconnected not in ("fail", "fit"):
            raise ValueError("disconnected must be 'fail' or 'fit'")
        unknown = set(self.strategies) - {"cycles", "random", "bipartite", "greedy"}
        if unknown:
            raise ValueError(f"unknown strategies {sorted(unknown)}")

    @classmethod
    def from_dict(cls, d: Mapping) -> "StudyConfig":
        d = dict(d)
        if "fit" in d:
            d["fit"] = FitOptions.from_dict(d["fit"])
        return cls(**d)


@dataclass
class CellResult:
    strategy: str
    budget: int
    trial: int
    mse: float | None
    xent: float | None
    edges: int
    failed: bool


def _strategy_code(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def _run_trial(cfg: StudyConfig, trial: int) -> list[CellResult]:
    n = cfg.n
    trial_rng = np.random.default_rng([cfg.seed, trial])
    hidden = cfg.elo_scale * trial_rng.standard_normal(n)
    judge = SyntheticJudge(hidden, cfg.noise_scale, seed=cfg.seed)
    unit = judge.unit_matrix(cfg.votes, trial_rng)

    iu, ju = np.triu_indices(n, 1)
    dense = SparsePreferenceMatrix(
        n, np.concatenate([iu, ju]), np.concatenate([ju, iu]),
        np.concatenate([unit[iu, ju], unit[ju, iu]]), np.ones(2 * iu.size),
    )
    actual = fit_elos(dense, cfg.model, cfg.fit).elos

    out = []
    for strategy in cfg.strategies:
        for budget in cfg.budgets:
            seed = np.random.default_rng([cfg.seed, trial, _strategy_code(strategy), budget])
            graph, _ = sample_graph(strategy, n, budget, seed=seed,
                                    oracle=lambda i, j: unit[i, j], model=cfg.model)
            sparse = dense.restrict(graph.edges)
            try:
                est = fit_elos(sparse, cfg.model, cfg.fit,
                               allow_disconnected=cfg.disconnected == "fit").elos
            except DisconnectedGraphError:
                out.append(CellResult(strategy, budget, trial, None, None, len(graph), True))
                continue
            out.append(CellResult(
                strategy, budget, trial,
                elo_mse(actual, est),
                excess_cross_entropy(actual, est, cfg.model),
                len(graph), False,
            ))
    return out


def _summary(values: list[float]) -> tuple[float, float]:
    if not values:
        return math.nan, math.nan
    arr = np.asarray(values)
    return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0


def convergence_study(cfg: StudyConfig) -> tuple[list[dict], list[CellResult]]:
    """Run every (strategy, budget, trial) cell; returns (summary rows, raw cells).

    Trials share nothing but the config, so they run in parallel and the
    reduction is keyed by cell, independent of completion order.
    """
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            per_trial = list(pool.map(lambda t: _run_trial(cfg, t), range(cfg.trials)))
    else:
        per_trial = [_run_trial(cfg, t) for t in range(cfg.trials)]
    cells = [c for trial in per_trial for c in trial]

    rows = []
    for strategy in cfg.strategies:
        for budget in cfg.budgets:
            group = [c for c in cells if c.strategy == strategy and c.budget == budget]
            ok = [c for c in group if not c.failed]
            mse_mean, mse_std = _summary([c.mse for c in ok])
            xent_mean, xent_std = _summary([c.xent for c in ok])
            rows.append({
                "strategy": strategy, "budget": budget, "trial_count": len(group),
                "failures": len(group) - len(ok),
                "mse_mean": mse_mean, "mse_std": mse_std,
                "xent_mean": xent_mean, "xent_std": xent_std,
            })
    return rows, cells


def write_study_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=STUDY_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(float(v)) if isinstance(v, float) else v)
                             for k, v in row.items() if k in STUDY_COLUMNS})


def study_curve(rows: list[dict], strategy: str, key: str = "mse_mean") -> list[tuple[int, float]]:
    return [(r["budget"], r[key]) for r in rows if r["strategy"] == strategy]
