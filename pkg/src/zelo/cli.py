"""Command-line entry point: ``zelo <command> [flags]``.

Exit status is 0 on success, 1 on domain errors (one ``error: <kind>: <msg>``
line on stderr) and 2 on usage errors. Logs go to stderr as key=value lines;
stdout carries data only.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections import defaultdict
from pathlib import Path

from . import __version__
from .core import CandidateSet, ModelKind, build_preference_matrix
from .ensemble import EnsembleError, JudgeError, make_judge
from .evaluation import (RankedList, StudyConfig, convergence_study, evaluate_rankings,
                         write_study_csv)
from .graphs import graph_stats, sample_graph
from .io import (FORMAT_VERSION, dumps, elos_to_json, load_candidates, load_preferences,
                 preference_to_json, read_jsonl, write_json, write_jsonl)
from .pipeline import (ConfigError, Dataset, RunConfig, annotate_query, judge_mined_pairs,
                       mine_failures, run_dataset, threshold_for)
from .solver import FitOptions, fit_elos

log = logging.getLogger("zelo")

DOMAIN_ERRORS = (ValueError, KeyError, OSError, JudgeError, EnsembleError, ArithmeticError)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _int_list(text: str) -> list[int]:
    try:
        return [_positive_int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated positive integers, got {text}")


def _model(text: str) -> ModelKind:
    try:
        return ModelKind.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zelo",
        description="Turn pairwise relevance judgments into pointwise Elo scores.")
    parser.add_argument("--version", action="version",
                        version=f"zelo {__version__} (format {FORMAT_VERSION})")
    parser.add_argument("--log-level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        help="stderr log verbosity (default INFO)")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--seed", type=int, default=None, help="RNG seed (default: config or 0)")
        p.add_argument("--workers", type=_positive_int, default=None,
                       help="max parallel work units (default: available cores)")
        return p

    p = command("sample-graph", "Sample a comparison graph and print its statistics.")
    p.add_argument("--strategy", default="cycles", choices=["cycles", "random", "bipartite"])
    p.add_argument("--n", type=_positive_int, required=True, help="number of candidates")
    p.add_argument("--k", type=int, help="regularity for cycles (even)")
    p.add_argument("--l", type=int, help="left side size for bipartite")
    p.add_argument("--budget", type=_positive_int, help="edge budget")
    p.add_argument("--out", help="write the graph JSON here (default stdout)")

    p = command("fit", "Fit Elos from a preference JSONL file.")
    p.add_argument("--matrix", required=True,
                   help='JSONL of {"query_id","i","j","p"[,"weight"]} records')
    p.add_argument("--model", type=_model, default=ModelKind.THURSTONE,
                   help="thurstone (default) or bradley_terry")
    p.add_argument("--out", required=True, help="output JSONL of per-query Elos")
    p.add_argument("--n", type=_positive_int,
                   help="candidate count (default: from --candidates or max index + 1)")
    p.add_argument("--candidates", help="candidates JSONL giving k per query")
    p.add_argument("--max-iters", type=_positive_int)
    p.add_argument("--grad-tol", type=float)
    p.add_argument("--precondition", choices=["curvature", "bound", "none"])
    p.add_argument("--allow-disconnected", action="store_true",
                   help="centre each component separately instead of failing")

    def config_flags(p):
        p.add_argument("--config", required=True, help="run configuration JSON")
        p.add_argument("--strategy", choices=["cycles", "random", "bipartite", "greedy"])
        p.add_argument("--k", type=int, help="cycle-union regularity")
        p.add_argument("--budget", type=_positive_int, help="edge budget per query")
        p.add_argument("--model", type=_model)
        p.add_argument("--output-dir", help="override the configured output directory")

    p = command("annotate", "Judge comparison-graph edges for every query.")
    config_flags(p)
    p.add_argument("--out", help="preferences JSONL (default <output-dir>/preferences.jsonl)")

    p = command("run", "Annotate, fit and emit SFT and pairwise datasets.")
    config_flags(p)
    p.add_argument("--squash", choices=["logistic", "minmax"])

    p = command("mine", "Mine pairs where a pointwise model ranks the human top document too low.")
    p.add_argument("--scores", required=True,
                   help='JSONL of {"query_id","doc_id","score"} (sft.jsonl "target" also accepted)')
    p.add_argument("--human", required=True,
                   help='JSONL of {"query_id","doc_id"[,"dataset"]} human top documents')
    p.add_argument("--threshold-map",
                   help='JSON {"default": t, "datasets": {name: t}} (default t=5)')
    p.add_argument("--candidates", help="candidates JSONL fixing candidate order")
    p.add_argument("--config", help="run configuration; when given, mined pairs are judged")
    p.add_argument("--out", required=True, help="output JSONL")

    p = command("study", "Run a sparse-vs-dense Elo convergence study.")
    p.add_argument("--config", help="study configuration JSON")
    p.add_argument("--trials", type=_positive_int)
    p.add_argument("--n", type=_positive_int)
    p.add_argument("--budgets", type=_int_list, help="comma-separated edge budgets, e.g. 50,100,200")
    p.add_argument("--out", required=True, help="output CSV")

    p = command("eval", "NDCG@k and recall@k of ranked lists against graded qrels.")
    p.add_argument("--ranked", required=True, help='JSONL of {"query_id","doc_ids"}')
    p.add_argument("--qrels", required=True,
                   help='JSONL of {"query_id","doc_id","relevance"}')
    p.add_argument("--k", type=_positive_int, default=10)
    p.add_argument("--relevant-threshold", type=float, default=1.0)
    p.add_argument("--out", help="write the report JSON here (default stdout)")
    return parser


def _workers(args) -> int:
    return args.workers or os.cpu_count() or 1


def _emit(obj, out) -> None:
    if out:
        write_json(out, obj)
    else:
        sys.stdout.write(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def cmd_sample_graph(args) -> None:
    seed = 0 if args.seed is None else args.seed
    if args.strategy == "cycles" and args.k is None and args.budget is None:
        args.k = 8
    graph, _ = sample_graph(args.strategy, args.n, args.budget, k=args.k, l=args.l, seed=seed)
    obj = graph.to_json()
    obj["stats"] = graph_stats(graph).to_json()
    log.info("event=graph_sampled strategy=%s n=%d edges=%d", args.strategy, args.n, len(graph))
    _emit(obj, args.out)


def cmd_fit(args) -> None:
    by_query = load_preferences(args.matrix)
    sizes = {}
    if args.candidates:
        sizes = {cs.query_id: cs.k for cs in load_candidates(args.candidates)}
    changes = {key: getattr(args, key) for key in ("max_iters", "grad_tol", "precondition")
               if getattr(args, key) is not None}
    if args.seed is not None:
        changes["seed"] = args.seed
    opts = FitOptions(**{**FitOptions().to_dict(), **changes})
    rows = []
    for qid in sorted(by_query):
        records = by_query[qid]
        n = args.n or sizes.get(qid) or 1 + max(max(r.i, r.j) for r in records)
        report = fit_elos(build_preference_matrix(records, n), args.model, opts,
                          allow_disconnected=args.allow_disconnected)
        log.info("event=fit query_id=%s n=%d converged=%s iterations=%d",
                 qid, n, report.converged, report.iterations)
        rows.append(elos_to_json(qid, report, args.model))
    write_jsonl(args.out, rows)


def _run_config(args) -> RunConfig:
    overrides = {
        "strategy": args.strategy, "k": args.k, "budget": args.budget, "seed": args.seed,
        "model": args.model.value if args.model else None, "output_dir": args.output_dir,
        "workers": _workers(args), "squash": getattr(args, "squash", None),
    }
    if args.output_dir:
        # flags are relative to the working directory, not the config file
        overrides["output_dir"] = os.path.abspath(args.output_dir)
    return RunConfig.from_file(args.config, overrides)


def cmd_annotate(args) -> None:
    cfg = _run_config(args)
    dataset = Dataset.load(cfg)
    judges = [make_judge(spec) for spec in cfg.judges]
    rows = []
    for cs in dataset.candidates:
        ann = annotate_query(cs, cfg, dataset, judges)
        log.info("event=annotated query_id=%s edges=%d judge_calls=%d",
                 cs.query_id, len(ann.graph), ann.judge_calls)
        rows.extend(preference_to_json(r) for r in ann.records)
    write_jsonl(args.out or Path(cfg.output_dir) / "preferences.jsonl", rows)


def cmd_run(args) -> None:
    manifest = run_dataset(_run_config(args))
    sys.stdout.write(dumps({"content_hash": manifest["content_hash"], **manifest["totals"]}) + "\n")


def _load_scores(path):
    scores: dict[str, dict[str, float]] = defaultdict(dict)
    for row in read_jsonl(path):
        value = row.get("score", row.get("target"))
        if value is None or "query_id" not in row or "doc_id" not in row:
            raise ValueError(f"{path}: rows need query_id, doc_id and score")
        scores[row["query_id"]][row["doc_id"]] = float(value)
    return scores


def cmd_mine(args) -> None:
    scores = _load_scores(args.scores)
    thresholds = {}
    if args.threshold_map:
        with open(args.threshold_map, encoding="utf-8") as fh:
            thresholds = json.load(fh)
    cfg = dataset = None
    if args.config:
        cfg = RunConfig.from_file(args.config, {"seed": args.seed})
        dataset = Dataset.load(cfg)
        thresholds = thresholds or dict(cfg.thresholds)
    if args.candidates:
        cands = {cs.query_id: cs for cs in load_candidates(args.candidates)}
    elif dataset is not None:
        cands = {cs.query_id: cs for cs in dataset.candidates}
    else:
        cands = {q: CandidateSet(q, tuple(s)) for q, s in scores.items()}

    mined = []
    for row in read_jsonl(args.human):
        qid = row["query_id"]
        if qid not in cands or qid not in scores:
            raise KeyError(f"no candidates or scores for query {qid!r}")
        cs = cands[qid]
        missing = [d for d in cs.doc_ids if d not in scores[qid]]
        if missing:
            raise KeyError(f"query {qid!r} has no score for {missing[:3]}")
        t = threshold_for(row.get("dataset"), thresholds)
        pair = mine_failures(cs, [scores[qid][d] for d in cs.doc_ids], row["doc_id"], t)
        if pair is not None:
            mined.append(pair)
    log.info("event=mined pairs=%d", len(mined))
    if cfg is not None:
        judges = [make_judge(spec) for spec in cfg.judges]
        records = judge_mined_pairs(mined, dataset, judges, cfg.seed)
        write_jsonl(args.out, (r.to_json() for r in records))
    else:
        write_jsonl(args.out, (m.to_json() for m in mined))


def cmd_study(args) -> None:
    d = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            d = json.load(fh)
    for key in ("trials", "n", "budgets", "seed"):
        if getattr(args, key) is not None:
            d[key] = getattr(args, key)
    d["workers"] = _workers(args)
    cfg = StudyConfig.from_dict(d)
    log.info("event=study_start n=%d trials=%d strategies=%s",
             cfg.n, cfg.trials, ",".join(cfg.strategies))
    rows, _ = convergence_study(cfg)
    write_study_csv(args.out, rows)


def cmd_eval(args) -> None:
    qrels: dict[str, dict[str, float]] = defaultdict(dict)
    for row in read_jsonl(args.qrels):
        qrels[row["query_id"]][row["doc_id"]] = float(row["relevance"])
    ranked = [RankedList(row["query_id"], tuple(row["doc_ids"]), qrels.get(row["query_id"], {}))
              for row in read_jsonl(args.ranked)]
    _emit(evaluate_rankings(ranked, args.k, args.relevant_threshold), args.out)


COMMANDS = {
    "sample-graph": cmd_sample_graph, "fit": cmd_fit, "annotate": cmd_annotate,
    "run": cmd_run, "mine": cmd_mine, "study": cmd_study, "eval": cmd_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, stream=sys.stderr, force=True,
                        format="level=%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 1
    except DOMAIN_ERRORS as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        if isinstance(exc, OSError) and exc.filename:
            msg = f"{exc.strerror}: {exc.filename}"
        print(f"error: {type(exc).__name__}: {msg}".replace("\n", " "), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
