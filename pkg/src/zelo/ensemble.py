"""Pairwise judgment acquisition.

Judges score a (query, document A, document B) triple on [-1, 1], where a
negative score prefers A. A judge is any callable::

    judge(query, docs, a, b) -> float

with ``docs`` the candidate documents and ``a``/``b`` the candidate indices
shown as A and B. Verdicts are clamped to {-1, 0, 1}, averaged over an
ensemble and mapped to a win probability for the first document with
``(1 - mean) / 2``.
"""

from __future__ import annotations

import logging
import math
import os
import re
import threading
import time
import zlib
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from scipy.special import ndtr

from .core import Document, Query
from .io import read_jsonl

log = logging.getLogger(__name__)

PAIRWISE_PROMPT = (
    "You are a relevance scoring system. Given a query and two documents (A and B), "
    "your job is to decide which document is more relevant to the given query. You should "
    "think carefully, considering the pros and cons between each document. For your first "
    "few sentences, consider the pros and cons of Document A. Then, spend some time thinking "
    "about Document B. Then, at the end, compare, and make a decision as to which one is more "
    "relevant. Do NOT make a decision in the beginning of your thoughts, stay open-minded until "
    "the last 1-2 sentences of your thoughts.\n\n"
    "The score should range from -1.0 to 1.0, where negative means document A is more relevant, "
    "and positive means Document B is more relevant. You can pick any number from -1.0 to 1.0."
)

USER_TEMPLATE = "Query: {query}\n\nDocument A:\n{doc_a}\n\nDocument B:\n{doc_b}"

_NUMBER = re.compile(r"[-+]?(?:\d+\.\d*|\.\d+|\d+)")


class JudgeError(RuntimeError):
    """A judge could not produce a score (transport failure, missing or malformed output)."""


class EnsembleError(RuntimeError):
    pass


Judge = Callable[[Query, Sequence[Document], int, int], float]


@dataclass(frozen=True)
class JudgeVerdict:
    raw: float  # canonical orientation: negative prefers d_i
    clamped: int
    judge_id: str
    swapped: bool


@dataclass(frozen=True)
class EnsembleScore:
    mean_raw: float
    unit: float
    samples: int
    sem: float
    verdicts: tuple[JudgeVerdict, ...] = field(default=(), repr=False)
    warnings: tuple[str, ...] = ()


def map_to_unit(mean_raw: float) -> float:
    """Ensemble score on [-1, 1] (negative prefers d_i) to P(d_i preferred)."""
    return (1.0 - mean_raw) / 2.0


def clamp_verdict(raw: float) -> int:
    """Round to the nearest of {-1, 0, 1}; |raw| == 0.5 goes to 0."""
    if not -1.0 <= raw <= 1.0 or math.isnan(raw):
        raise ValueError(f"judge score {raw} outside [-1, 1]")
    if raw > 0.5:
        return 1
    if raw < -0.5:
        return -1
    return 0


def _sem(values: Sequence[float]) -> float:
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1) / math.sqrt(len(values)))


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _judge_name(judge, default: str) -> str:
    return getattr(judge, "judge_id", None) or default


def debiased_judgment(judge: Judge, query: Query, docs: Sequence[Document], i: int, j: int,
                      seed=None, judge_id: str | None = None,
                      swap: bool | None = None) -> JudgeVerdict:
    """Ask ``judge`` about (d_i, d_j), presenting them in flipped order half the time.

    A flipped presentation's score is negated back into (d_i, d_j) orientation
    before clamping. ``swap`` forces one presentation order instead of a coin flip.
    """
    if i == j or docs[i].id == docs[j].id:
        raise ValueError(f"cannot judge a document against itself ({docs[i].id!r})")
    swapped = bool(_rng(seed).random() < 0.5) if swap is None else bool(swap)
    if swapped:
        raw = -float(judge(query, docs, j, i))
    else:
        raw = float(judge(query, docs, i, j))
    return JudgeVerdict(raw, clamp_verdict(raw), judge_id or _judge_name(judge, "judge"), swapped)


def ensemble_score(judges: Sequence[Judge], query: Query, docs: Sequence[Document],
                   i: int, j: int, seed=None) -> EnsembleScore:
    """One debiased verdict per judge, averaged.

    Judges that fail are skipped with a warning as long as at least half of
    the ensemble (rounded up) answered.
    """
    if not judges:
        raise ValueError("ensemble needs at least one judge")
    rng = _rng(seed)
    verdicts, warnings = [], []
    for idx, judge in enumerate(judges):
        name = _judge_name(judge, f"judge-{idx}")
        try:
            verdicts.append(debiased_judgment(judge, query, docs, i, j, rng, name))
        except JudgeError as exc:
            msg = f"{name} failed on {query.id}:({i},{j}): {exc}"
            log.warning("event=judge_failed query_id=%s judge=%s error=%s", query.id, name, exc)
            warnings.append(msg)
    need = math.ceil(len(judges) / 2)
    if len(verdicts) < need:
        raise EnsembleError(
            f"only {len(verdicts)}/{len(judges)} judges answered for {query.id}:({i},{j}); "
            + "; ".join(warnings)
        )
    clamped = [v.clamped for v in verdicts]
    mean = float(np.mean(clamped))
    return EnsembleScore(mean, map_to_unit(mean), len(clamped), _sem(clamped),
                         tuple(verdicts), tuple(warnings))


def sample_until_sem(pool: Sequence[Judge], query: Query, docs: Sequence[Document],
                     i: int, j: int, seed=None, sem_target: float = 0.1,
                     min_samples: int = 3, max_samples: int = 1000) -> EnsembleScore:
    """Draw judges from ``pool`` with replacement until the SEM of the clamped
    verdicts is at most ``sem_target`` (or ``max_samples`` is reached)."""
    if not max_samples >= min_samples >= 2:
        raise ValueError("need max_samples >= min_samples >= 2")
    if not pool:
        raise EnsembleError("judge pool is empty")
    rng = _rng(seed)
    verdicts: list[JudgeVerdict] = []
    values: list[int] = []
    sem = 0.0
    while len(values) < max_samples:
        idx = int(rng.integers(len(pool)))
        judge = pool[idx]
        v = debiased_judgment(judge, query, docs, i, j, rng, _judge_name(judge, f"judge-{idx}"))
        verdicts.append(v)
        values.append(v.clamped)
        sem = _sem(values)
        if len(values) >= min_samples and sem <= sem_target:
            break
    mean = float(np.mean(values))
    return EnsembleScore(mean, map_to_unit(mean), len(values), sem, tuple(verdicts))


class ReplayJudge:
    """Replays recorded raw scores from JSONL ``{"query_id", "i", "j", "raw"}``.

    ``raw`` is in (d_i, d_j) orientation; asking for (j, i) returns ``-raw``.
    """

    def __init__(self, scores: Mapping[tuple[str, int, int], float], judge_id: str = "replay"):
        self.scores = dict(scores)
        self.judge_id = judge_id

    @classmethod
    def from_jsonl(cls, path, judge_id: str | None = None) -> "ReplayJudge":
        scores = {}
        for row in read_jsonl(path):
            scores[(row["query_id"], int(row["i"]), int(row["j"]))] = float(row["raw"])
        return cls(scores, judge_id or f"replay:{os.path.basename(str(path))}")

    def __call__(self, query, docs, a, b):
        key = (query.id, a, b)
        if key in self.scores:
            return self.scores[key]
        key = (query.id, b, a)
        if key in self.scores:
            return -self.scores[key]
        raise JudgeError(f"no recorded score for {query.id}:({a},{b})")


class SyntheticJudge:
    """Noisy judge driven by hidden Elos, for tests and simulation studies.

    For the pair (a, b) it answers -1 (prefers A) with probability
    ``(1 + erf((e_a - e_b) / noise_scale)) / 2`` and +1 otherwise, or 0 when
    the latent comparison falls inside the indifference band. Draws are keyed
    on (seed, query, unordered pair, repeat count), so answers do not depend
    on call interleaving and flipping the presentation order exactly negates
    the score.
    """

    def __init__(self, hidden_elos, noise_scale: float = 1.0, seed: int = 0,
                 indifference: float = 0.0, judge_id: str | None = None):
        if noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")
        if isinstance(hidden_elos, Mapping):
            self.hidden = {k: np.asarray(v, dtype=float) for k, v in hidden_elos.items()}
        elif callable(hidden_elos):
            self.hidden = hidden_elos
        else:
            self.hidden = np.asarray(hidden_elos, dtype=float)
        self.noise_scale = float(noise_scale)
        self.seed = int(seed)
        self.indifference = float(indifference)
        self.judge_id = judge_id or f"synthetic:{seed}"
        self._counts: dict[tuple, int] = defaultdict(int)
        self._lock = threading.Lock()

    def elos_for(self, query_id: str) -> np.ndarray:
        if isinstance(self.hidden, np.ndarray):
            return self.hidden
        if isinstance(self.hidden, dict):
            return self.hidden[query_id]
        return np.asarray(self.hidden(query_id), dtype=float)

    def _scale(self) -> float:
        return max(self.noise_scale, 1e-12)

    def prob_first(self, query_id: str, a: int, b: int) -> float:
        """P(verdict == -1) when (a, b) is presented, ignoring the indifference band."""
        e = self.elos_for(query_id)
        return float(ndtr(math.sqrt(2.0) * (e[a] - e[b]) / self._scale()))

    def __call__(self, query, docs, a, b):
        lo, hi = min(a, b), max(a, b)
        key = (query.id, lo, hi)
        with self._lock:
            count = self._counts[key]
            self._counts[key] = count + 1
        rng = np.random.default_rng(
            [self.seed, zlib.crc32(query.id.encode("utf-8")), lo, hi, count]
        )
        e = self.elos_for(query.id)
        # latent > 0 <=> lo preferred; P = Phi(sqrt2 * gap / s) = (1 + erf(gap / s)) / 2
        latent = math.sqrt(2.0) * (e[lo] - e[hi]) / self._scale() + rng.standard_normal()
        if abs(latent) < self.indifference:
            raw = 0.0
        else:
            raw = -1.0 if latent > 0 else 1.0
        return raw if a == lo else -raw

    def unit_matrix(self, votes: int, rng, query_id: str = "") -> np.ndarray:
        """Dense ensemble probabilities from ``votes`` independent draws per pair.

        Vectorised equivalent of ``ensemble_score`` over every pair with
        ``votes`` synthetic judges, used by simulation studies.
        """
        e = self.elos_for(query_id)
        n = e.size
        rng = _rng(rng)
        iu, ju = np.triu_indices(n, 1)
        drift = math.sqrt(2.0) * (e[iu] - e[ju]) / self._scale()
        latent = drift[:, None] + rng.standard_normal((iu.size, votes))
        raw = np.where(latent > 0, -1.0, 1.0)
        raw[np.abs(latent) < self.indifference] = 0.0
        unit = (1.0 - raw.mean(axis=1)) / 2.0
        out = np.full((n, n), 0.5)
        out[iu, ju] = unit
        out[ju, iu] = 1.0 - unit
        return out


def synthetic_judge(hidden_elos, noise_scale: float = 1.0, seed: int = 0,
                    indifference: float = 0.0) -> SyntheticJudge:
    return SyntheticJudge(hidden_elos, noise_scale, seed, indifference)


def parse_score(text: str) -> float:
    """Last signed decimal in ``text``; must lie in [-1, 1]."""
    found = _NUMBER.findall(text or "")
    if not found:
        raise JudgeError(f"no score in judge output: {text[-200:]!r}")
    value = float(found[-1])
    if not -1.0 <= value <= 1.0:
        raise JudgeError(f"judge score {value} outside [-1, 1]")
    return value


class HttpJudge:
    """Chat-completion judge over HTTP (OpenAI-compatible request/response shape)."""

    def __init__(self, url: str, model: str, *, prompt: str = PAIRWISE_PROMPT,
                 user_template: str = USER_TEMPLATE, token_env: str | None = None,
                 temperature: float = 0.0, timeout: float = 60.0, max_retries: int = 3,
                 backoff: float = 1.0, judge_id: str | None = None, session=None):
        import requests

        if max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        self.url = url
        self.model = model
        self.prompt = prompt
        self.user_template = user_template
        self.token_env = token_env
        self.temperature = temperature
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        self.judge_id = judge_id or f"http:{model}"
        self.session = session or requests.Session()
        self.calls = 0

    def _payload(self, query, doc_a, doc_b) -> dict[str, Any]:
        return {
            "model": self.model,
            "temperature": self.temperature,
            "messages": [
                {"role": "system", "content": self.prompt},
                {"role": "user", "content": self.user_template.format(
                    query=query.text, doc_a=doc_a.text, doc_b=doc_b.text)},
            ],
        }

    def __call__(self, query, docs, a, b):
        import requests

        headers = {"Content-Type": "application/json"}
        if self.token_env:
            token = os.environ.get(self.token_env)
            if token:
                headers["Authorization"] = f"Bearer {token}"
        payload = self._payload(query, docs[a], docs[b])
        last_error = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            self.calls += 1
            try:
                resp = self.session.post(self.url, json=payload, headers=headers,
                                         timeout=self.timeout)
            except requests.RequestException as exc:
                last_error = f"transport error: {exc}"
                continue
            if resp.status_code >= 500 or resp.status_code == 429:
                last_error = f"HTTP {resp.status_code}"
                continue
            if resp.status_code >= 400:
                raise JudgeError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                content = resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError):
                raise JudgeError(f"malformed response body: {resp.text[:200]}") from None
            return parse_score(content)
        raise JudgeError(f"{self.judge_id}: gave up after {self.max_retries + 1} attempts "
                         f"({last_error})")


@dataclass(frozen=True)
class JudgeSpec:
    """Serializable judge configuration: ``kind`` plus kind-specific params."""

    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("replay", "synthetic", "http"):
            raise ValueError(f"unknown judge kind {self.kind!r}")
        if self.kind == "replay" and "path" not in self.params:
            raise ValueError("replay judge needs 'path'")
        if self.kind == "http":
            for key in ("url", "model"):
                if key not in self.params:
                    raise ValueError(f"http judge needs {key!r}")
            if int(self.params.get("max_retries", 3)) < 0:
                raise ValueError("http judge max_retries must be >= 0")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "JudgeSpec":
        d = dict(d)
        kind = d.pop("kind")
        return cls(kind, d)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, **self.params}


def make_judge(spec: JudgeSpec, base_dir=None, hidden_elos=None) -> Judge:
    """Instantiate a judge.

    Synthetic judges take hidden Elos from ``params["hidden_elos"]`` (a JSONL
    path of ``{"query_id", "elos"}`` rows), from ``hidden_elos`` (a mapping or
    callable keyed by query id), or otherwise draw them per query from a
    standard normal seeded by the query id.
    """
    p = dict(spec.params)
    judge_id = p.pop("id", None)

    def resolve(path):
        return os.path.join(base_dir, path) if base_dir and not os.path.isabs(path) else path

    if spec.kind == "replay":
        return ReplayJudge.from_jsonl(resolve(p["path"]), judge_id)
    if spec.kind == "synthetic":
        seed = int(p.get("seed", 0))
        source = p.get("hidden_elos")
        if isinstance(source, str):
            hidden = {row["query_id"]: row["elos"] for row in read_jsonl(resolve(source))}
        elif hidden_elos is not None:
            hidden = hidden_elos
        else:
            hidden = HiddenEloGenerator(int(p.get("elo_seed", 0)), float(p.get("elo_scale", 1.0)))
        return SyntheticJudge(hidden, float(p.get("noise_scale", 1.0)), seed,
                              float(p.get("indifference", 0.0)), judge_id)
    return HttpJudge(
        p["url"], p["model"],
        prompt=p.get("prompt", PAIRWISE_PROMPT),
        user_template=p.get("user_template", USER_TEMPLATE),
        token_env=p.get("token_env"),
        temperature=float(p.get("temperature", 0.0)),
        timeout=float(p.get("timeout", 60.0)),
        max_retries=int(p.get("max_retries", 3)),
        backoff=float(p.get("backoff", 1.0)),
        judge_id=judge_id,
    )


class HiddenEloGenerator:
    """Per-query hidden Elos drawn from N(0, scale^2), keyed by query id.

    Each query gets ``size`` draws; a candidate set only touches the leading entries.
    """

    def __init__(self, seed: int = 0, scale: float = 1.0, size: int = 1000):
        self.seed = seed
        self.scale = scale
        self.size = size
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def __call__(self, query_id: str) -> np.ndarray:
        with self._lock:
            if query_id not in self._cache:
                rng = np.random.default_rng([self.seed, zlib.crc32(query_id.encode("utf-8"))])
                self._cache[query_id] = self.scale * rng.standard_normal(self.size)
            return self._cache[query_id]
