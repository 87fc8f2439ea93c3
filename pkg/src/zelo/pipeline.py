"""End-to-end runs: pair selection, judgment, Elo fitting, dataset emission, failure mining."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.special import expit

from . import __version__
from .core import CandidateSet, Document, ModelKind, PreferenceRecord, Query
from .ensemble import EnsembleError, JudgeSpec, ensemble_score, make_judge
from .graphs import ComparisonGraph, max_pairs, sample_graph
from .io import (FORMAT_VERSION, dumps, elos_to_json, load_candidates, load_documents,
                 load_queries, preference_to_json, write_json, write_jsonl)
from .solver import FitOptions, FitReport, compute_zelo

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 5


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SftRecord:
    query_id: str
    doc_id: str
    elo: float
    target: float
    rank: int

    def to_json(self) -> dict[str, Any]:
        return {"query_id": self.query_id, "doc_id": self.doc_id, "elo": self.elo,
                "target": self.target, "rank": self.rank}


@dataclass(frozen=True)
class PairwiseExportRecord:
    query_id: str
    i: int
    j: int
    p: float
    source: str = "random-pair"

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p={self.p} outside [0, 1]")
        if self.source not in ("random-pair", "failure-mined"):
            raise ValueError(f"unknown source {self.source!r}")

    def to_json(self) -> dict[str, Any]:
        return {"query_id": self.query_id, "i": self.i, "j": self.j, "p": self.p,
                "source": self.source}


@dataclass(frozen=True)
class MinedPair:
    """Pair request produced by failure mining: human top document vs the one ranked just above it."""

    query_id: str
    human_doc_id: str
    other_doc_id: str
    human_index: int
    other_index: int
    human_rank: int

    def to_json(self) -> dict[str, Any]:
        return {"query_id": self.query_id, "doc_human": self.human_doc_id,
                "doc_other": self.other_doc_id, "i": self.human_index,
                "j": self.other_index, "r_human": self.human_rank}


@dataclass(frozen=True)
class RunConfig:
    queries: str
    documents: str
    candidates: str
    judges: tuple[JudgeSpec, ...]
    output_dir: str = "zelo-out"
    strategy: str = "cycles"
    k: int | None = 8
    budget: int | None = None
    l: int | None = None
    model: ModelKind = ModelKind.THURSTONE
    fit: FitOptions = FitOptions()
    squash: str = "logistic"
    seed: int = 0
    max_candidates: int = 100
    workers: int = 1
    thresholds: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "model", ModelKind.parse(self.model))
        object.__setattr__(self, "judges", tuple(
            j if isinstance(j, JudgeSpec) else JudgeSpec.from_dict(j) for j in self.judges))
        if not self.judges:
            raise ConfigError("config needs at least one judge")
        if self.strategy not in ("cycles", "random", "bipartite", "greedy"):
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.strategy == "cycles":
            if self.k is None and self.budget is None:
                raise ConfigError("cycles strategy needs k or budget")
            if self.k is not None and (self.k % 2 or self.k < 2):
                raise ConfigError(f"cycles strategy needs an even k >= 2, got {self.k}")
        if self.strategy in ("random", "greedy") and self.budget is None:
            raise ConfigError(f"{self.strategy} strategy needs a budget")
        if self.strategy == "bipartite" and self.l is None and self.budget is None:
            raise ConfigError("bipartite strategy needs l or budget")
        if self.squash not in ("logistic", "minmax"):
            raise ConfigError(f"squash must be 'logistic' or 'minmax', got {self.squash!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], base_dir=None) -> "RunConfig":
        d = dict(d)
        graph = d.pop("graph", None) or {}
        for key in ("strategy", "k", "budget", "l"):
            if key in graph:
                d.setdefault(key, graph[key])
        if "fit" in d and not isinstance(d["fit"], FitOptions):
            d["fit"] = FitOptions.from_dict(d["fit"])
        if base_dir is not None:
            for key in ("queries", "documents", "candidates", "output_dir"):
                if key in d and not os.path.isabs(d[key]):
                    d[key] = os.path.join(base_dir, d[key])
            d["judges"] = [_resolve_judge(j, base_dir) for j in d.get("judges", [])]
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_file(cls, path, overrides: Mapping[str, Any] | None = None) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            d = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
        for key, value in (overrides or {}).items():
            if value is not None:
                d[key] = value
        return cls.from_dict(d, base_dir=str(path.parent))

    def to_dict(self) -> dict[str, Any]:
        return {
            "queries": self.queries, "documents": self.documents,
            "candidates": self.candidates, "judges": [j.to_dict() for j in self.judges],
            "output_dir": self.output_dir, "strategy": self.strategy, "k": self.k,
            "budget": self.budget, "l": self.l, "model": self.model.value,
            "fit": self.fit.to_dict(), "squash": self.squash, "seed": self.seed,
            "max_candidates": self.max_candidates, "thresholds": dict(self.thresholds),
        }

    def check_files(self) -> None:
        for key in ("queries", "documents", "candidates"):
            path = getattr(self, key)
            if not os.path.isfile(path):
                raise ConfigError(f"{key} file not found: {path}")
        for spec in self.judges:
            for key in ("path", "hidden_elos"):
                path = spec.params.get(key)
                if isinstance(path, str) and not os.path.isfile(path):
                    raise ConfigError(f"{spec.kind} judge file not found: {path}")


def _resolve_judge(spec, base_dir):
    spec = dict(spec.to_dict() if isinstance(spec, JudgeSpec) else spec)
    for key in ("path", "hidden_elos"):
        value = spec.get(key)
        if isinstance(value, str) and not os.path.isabs(value):
            spec[key] = os.path.join(base_dir, value)
    return spec


@dataclass
class Dataset:
    queries: dict[str, Query]
    documents: dict[str, Document]
    candidates: list[CandidateSet]

    @classmethod
    def load(cls, cfg: RunConfig) -> "Dataset":
        cfg.check_files()
        return cls(load_queries(cfg.queries), load_documents(cfg.documents),
                   load_candidates(cfg.candidates, cfg.max_candidates))

    def docs_for(self, cs: CandidateSet) -> list[Document]:
        missing = [d for d in cs.doc_ids if d not in self.documents]
        if missing:
            raise KeyError(f"query {cs.query_id!r} references unknown documents {missing[:5]}")
        return [self.documents[d] for d in cs.doc_ids]

    def query(self, cs: CandidateSet) -> Query:
        if cs.query_id not in self.queries:
            raise KeyError(f"unknown query id {cs.query_id!r}")
        return self.queries[cs.query_id]


def query_seeds(seed: int, query_id: str) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent (graph, judging) generators for one query, stable across runs."""
    ss = np.random.SeedSequence([seed, zlib.crc32(query_id.encode("utf-8"))])
    graph_ss, judge_ss = ss.spawn(2)
    return np.random.default_rng(graph_ss), np.random.default_rng(judge_ss)


@dataclass
class Annotation:
    records: list[PreferenceRecord]
    graph: ComparisonGraph
    ensemble_judgments: int
    judge_calls: int
    warnings: list[str]


def annotate_query(cs: CandidateSet, cfg: RunConfig, dataset: Dataset, judges) -> Annotation:
    """Judge every edge of the query's comparison graph once with the ensemble."""
    n = cs.k
    if n < 2:
        raise ValueError("need at least two candidates")
    query = dataset.query(cs)
    docs = dataset.docs_for(cs)
    graph_rng, judge_rng = query_seeds(cfg.seed, cs.query_id)
    warnings: list[str] = []
    calls = 0

    def judge_pair(i: int, j: int) -> float:
        nonlocal calls
        score = ensemble_score(judges, query, docs, i, j, judge_rng)
        calls += score.samples + len(score.warnings)
        warnings.extend(score.warnings)
        return score.unit

    budget = None if cfg.budget is None else min(cfg.budget, max_pairs(n))
    k = cfg.k
    if cfg.strategy == "cycles" and k is not None and k >= n - 1:
        # small candidate sets: kn/2 would reach every pair anyway
        budget, k = max_pairs(n), None
    l = None if cfg.l is None else min(cfg.l, n - 1)
    graph, records = sample_graph(cfg.strategy, n, budget, k=k, l=l, seed=graph_rng,
                                  oracle=judge_pair, model=cfg.model, query_id=cs.query_id)
    if records is None:
        records = [PreferenceRecord(cs.query_id, i, j, judge_pair(i, j))
                   for i, j in graph.edge_list()]
    return Annotation(records, graph, len(records), calls, warnings)


def emit_sft(cs: CandidateSet, elos, squash: str = "logistic") -> list[SftRecord]:
    """Pointwise training targets from fitted Elos.

    ``logistic`` maps each Elo through the sigmoid; ``minmax`` maps the query's
    Elo range affinely onto [0, 1] (all 0.5 when every Elo is equal). Ranks are
    1-based under descending Elo, ties broken by candidate order.
    """
    e = np.asarray(elos, dtype=float)
    if e.size != cs.k:
        raise ValueError(f"{e.size} Elos for {cs.k} candidates")
    if squash == "logistic":
        targets = expit(e)
    elif squash == "minmax":
        lo, hi = e.min(), e.max()
        targets = np.full(e.size, 0.5) if hi == lo else (e - lo) / (hi - lo)
    else:
        raise ValueError(f"unknown squash {squash!r}")
    order = np.argsort(-e, kind="stable")
    rank = np.empty(e.size, dtype=np.int64)
    rank[order] = np.arange(1, e.size + 1)
    return [SftRecord(cs.query_id, d, float(e[i]), float(targets[i]), int(rank[i]))
            for i, d in enumerate(cs.doc_ids)]


def rank_by_score(cs: CandidateSet, scores) -> list[int]:
    """Candidate indices by descending score, ties in candidate order."""
    s = np.asarray(scores, dtype=float)
    if s.size != cs.k:
        raise ValueError(f"{s.size} scores for {cs.k} candidates")
    return np.argsort(-s, kind="stable").tolist()


def mine_failures(cs: CandidateSet, pointwise_scores, human_top: str, threshold: int):
    """Pair request when the human top document ranks worse than ``threshold``.

    Returns a :class:`MinedPair` pairing the human top document with the
    document ranked immediately above it, or None.
    """
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    human_idx = cs.index(human_top)
    order = rank_by_score(cs, pointwise_scores)
    r_human = order.index(human_idx) + 1
    if r_human <= threshold:
        return None
    other = order[r_human - 2]
    return MinedPair(cs.query_id, human_top, cs.doc_ids[other], human_idx, other, r_human)


def threshold_for(dataset_name: str | None, thresholds: Mapping[str, Any]) -> int:
    """Per-dataset rank threshold; ``thresholds`` may be flat or ``{"default", "datasets"}``."""
    table = thresholds.get("datasets", thresholds)
    if dataset_name is not None and dataset_name in table:
        return int(table[dataset_name])
    return int(thresholds.get("default", DEFAULT_THRESHOLD))


def judge_mined_pairs(mined: Sequence[MinedPair], dataset: Dataset, judges, seed: int = 0):
    """Ensemble-judge mined pairs; ``p`` is the probability the human top document wins."""
    by_query = {cs.query_id: cs for cs in dataset.candidates}
    out = []
    for pair in mined:
        cs = by_query[pair.query_id]
        _, judge_rng = query_seeds(seed, f"mined:{pair.query_id}")
        score = ensemble_score(judges, dataset.query(cs), dataset.docs_for(cs),
                               pair.human_index, pair.other_index, judge_rng)
        out.append(PairwiseExportRecord(pair.query_id, pair.human_index, pair.other_index,
                                        score.unit, "failure-mined"))
    return out


@dataclass
class QueryResult:
    query_id: str
    sft: list[SftRecord] = field(default_factory=list)
    pairs: list[PairwiseExportRecord] = field(default_factory=list)
    records: list[PreferenceRecord] = field(default_factory=list)
    report: FitReport | None = None
    entry: dict[str, Any] = field(default_factory=dict)


def process_query(cs: CandidateSet, cfg: RunConfig, dataset: Dataset, judges) -> QueryResult:
    res = QueryResult(cs.query_id)
    entry = {"query_id": cs.query_id, "k": cs.k, "error": None}
    try:
        ann = annotate_query(cs, cfg, dataset, judges)
        entry.update(edges=len(ann.graph), ensemble_judgments=ann.ensemble_judgments,
                     judge_calls=ann.judge_calls, judge_warnings=len(ann.warnings))
        report = compute_zelo(ann.records, cs.k, cfg.model, cfg.fit)
        entry.update(converged=report.converged, iterations=report.iterations,
                     final_grad_norm=report.final_grad_norm)
        res.records = ann.records
        res.report = report
        res.sft = emit_sft(cs, report.elos, cfg.squash)
        res.pairs = [PairwiseExportRecord(r.query_id, r.i, r.j, r.p, "random-pair")
                     for r in ann.records]
        log.info("event=query_done query_id=%s edges=%d converged=%s iterations=%d",
                 cs.query_id, len(ann.graph), report.converged, report.iterations)
    except (EnsembleError, ValueError, KeyError, ArithmeticError) as exc:
        entry["error"] = f"{type(exc).__name__}: {exc}"
        log.error("event=query_failed query_id=%s error=%s", cs.query_id, entry["error"])
    res.entry = entry
    return res


def run_dataset(cfg: RunConfig, dataset: Dataset | None = None, judges=None) -> dict[str, Any]:
    """Annotate, fit and export every candidate set; returns the manifest.

    Writes ``sft.jsonl``, ``pairs.jsonl``, ``preferences.jsonl``, ``elos.jsonl``
    and ``manifest.json`` into ``cfg.output_dir``. Per-query failures are
    recorded in the manifest; only configuration problems abort the run.
    """
    start = time.perf_counter()
    dataset = dataset or Dataset.load(cfg)
    if judges is None:
        judges = [make_judge(spec) for spec in cfg.judges]
    log.info("event=run_start queries=%d strategy=%s model=%s",
             len(dataset.candidates), cfg.strategy, cfg.model.value)

    def work(cs):
        return process_query(cs, cfg, dataset, judges)

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(work, dataset.candidates))
    else:
        results = [work(cs) for cs in dataset.candidates]

    out = Path(cfg.output_dir)
    ok = [r for r in results if r.report is not None]
    write_jsonl(out / "sft.jsonl", (s.to_json() for r in ok for s in r.sft))
    write_jsonl(out / "pairs.jsonl", (p.to_json() for r in ok for p in r.pairs))
    write_jsonl(out / "preferences.jsonl",
                (preference_to_json(x) for r in ok for x in r.records))
    write_jsonl(out / "elos.jsonl", (elos_to_json(r.query_id, r.report, cfg.model) for r in ok))

    entries = [r.entry for r in results]
    digest = hashlib.sha256()
    for name in ("sft.jsonl", "pairs.jsonl", "preferences.jsonl", "elos.jsonl"):
        digest.update((out / name).read_bytes())
    digest.update(dumps(entries).encode("utf-8"))
    manifest = {
        "format_version": FORMAT_VERSION,
        "toolkit_version": __version__,
        "config": cfg.to_dict(),
        "queries": entries,
        "totals": {
            "queries": len(results),
            "failed": sum(1 for e in entries if e["error"]),
            "converged": sum(1 for e in entries if e.get("converged")),
            "ensemble_judgments": sum(e.get("ensemble_judgments", 0) for e in entries),
            "judge_calls": sum(e.get("judge_calls", 0) for e in entries),
            "sft_records": sum(len(r.sft) for r in ok),
            "pair_records": sum(len(r.pairs) for r in ok),
        },
        "content_hash": digest.hexdigest(),
        # excluded from content_hash
        "timing": {"wall_seconds": round(time.perf_counter() - start, 3)},
    }
    write_json(out / "manifest.json", manifest)
    log.info("event=run_done queries=%d failed=%d", len(results), manifest["totals"]["failed"])
    return manifest
