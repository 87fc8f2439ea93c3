"""Flat-file formats: JSONL readers/writers for every record type."""

from __future__ import annotations

import json
import os
import tempfile
from collections import defaultdict
from pathlib import Path
from typing import Any, Iterable, Iterator

from .core import CandidateSet, Document, PreferenceRecord, Query

FORMAT_VERSION = "1"


def read_jsonl(path) -> Iterator[dict[str, Any]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None


def dumps(obj) -> str:
    # stable key order and float repr keep outputs byte-identical across runs
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, allow_nan=False)


def write_jsonl(path, rows: Iterable[dict[str, Any]]) -> int:
    """Atomically write rows as JSONL; returns the row count."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(dumps(row))
                fh.write("\n")
                count += 1
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return count


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2, allow_nan=False)
        fh.write("\n")
    os.replace(tmp, path)


def _require(row: dict, keys: tuple[str, ...], path) -> None:
    missing = [k for k in keys if k not in row]
    if missing:
        raise ValueError(f"{path}: record missing field(s) {missing}: {row!r}")


def load_queries(path) -> dict[str, Query]:
    out: dict[str, Query] = {}
    for row in read_jsonl(path):
        _require(row, ("id", "text"), path)
        if row["id"] in out:
            raise ValueError(f"{path}: duplicate query id {row['id']!r}")
        out[row["id"]] = Query(row["id"], row["text"])
    return out


def load_documents(path) -> dict[str, Document]:
    out: dict[str, Document] = {}
    for row in read_jsonl(path):
        _require(row, ("id", "text"), path)
        if row["id"] in out:
            raise ValueError(f"{path}: duplicate document id {row['id']!r}")
        out[row["id"]] = Document(row["id"], row["text"])
    return out


def load_candidates(path, max_k: int = 100) -> list[CandidateSet]:
    out = []
    for row in read_jsonl(path):
        _require(row, ("query_id", "doc_ids"), path)
        out.append(CandidateSet(row["query_id"], tuple(row["doc_ids"]), max_k=max_k))
    return out


def load_preferences(path) -> dict[str, list[PreferenceRecord]]:
    """Preference records grouped by query id, in file order."""
    out: dict[str, list[PreferenceRecord]] = defaultdict(list)
    for row in read_jsonl(path):
        _require(row, ("query_id", "i", "j", "p"), path)
        out[row["query_id"]].append(
            PreferenceRecord(
                row["query_id"], int(row["i"]), int(row["j"]), float(row["p"]),
                float(row.get("weight", 1.0)),
            )
        )
    return dict(out)


def preference_to_json(rec: PreferenceRecord) -> dict[str, Any]:
    return {"query_id": rec.query_id, "i": rec.i, "j": rec.j, "p": rec.p, "weight": rec.weight}


def elos_to_json(query_id: str, report, model) -> dict[str, Any]:
    return {
        "query_id": query_id,
        "elos": [float(x) for x in report.elos],
        "model": model.value,
        "converged": bool(report.converged),
        "iterations": int(report.iterations),
    }
