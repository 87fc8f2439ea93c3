"""Domain types, link functions and the sparse preference matrix."""

from __future__ import annotations

import enum
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np
import numpy.typing as npt
from scipy.special import expit, log_expit, log_ndtr, ndtr

FloatArray = npt.NDArray[np.float64]

DEFAULT_MAX_CANDIDATES = 100
SQRT2 = math.sqrt(2.0)


class ModelKind(enum.Enum):
    BRADLEY_TERRY = "bradley_terry"
    THURSTONE = "thurstone"

    @classmethod
    def parse(cls, value: "str | ModelKind") -> "ModelKind":
        if isinstance(value, ModelKind):
            return value
        key = value.strip().lower().replace("-", "_")
        aliases = {
            "bt": cls.BRADLEY_TERRY,
            "bradley_terry": cls.BRADLEY_TERRY,
            "bradleyterry": cls.BRADLEY_TERRY,
            "thurstone": cls.THURSTONE,
        }
        if key not in aliases:
            raise ValueError(f"unknown model kind {value!r}")
        return aliases[key]

    def link(self, diff):
        """Probability that the first item wins given its Elo lead ``diff``."""
        if self is ModelKind.BRADLEY_TERRY:
            return expit(diff)
        # (1 + erf(diff)) / 2 on the raw Elo difference, no 1/sqrt(2) rescaling;
        # evaluated as Phi(sqrt(2) diff) to keep precision in the lower tail
        return ndtr(SQRT2 * np.asarray(diff, dtype=float))

    def log_link(self, diff):
        """log of :meth:`link`, accurate far into both tails."""
        if self is ModelKind.BRADLEY_TERRY:
            return log_expit(diff)
        # (1 + erf(x)) / 2 == Phi(sqrt(2) x)
        return log_ndtr(SQRT2 * np.asarray(diff, dtype=float))

    def dlog_link(self, diff):
        """Derivative of :meth:`log_link` with respect to ``diff``."""
        diff = np.asarray(diff, dtype=float)
        if self is ModelKind.BRADLEY_TERRY:
            return expit(-diff)
        z = SQRT2 * diff
        # phi(z) / Phi(z) in log space so the lower tail does not underflow
        return SQRT2 * np.exp(-0.5 * z * z - 0.5 * math.log(2 * math.pi) - log_ndtr(z))

    def log_link_terms(self, diff):
        """``(log p, d log p, -d^2 log p)`` at ``diff``, sharing one tail evaluation."""
        diff = np.asarray(diff, dtype=float)
        if self is ModelKind.BRADLEY_TERRY:
            s_neg = expit(-diff)
            return log_expit(diff), s_neg, s_neg * (1.0 - s_neg)
        z = SQRT2 * diff
        logp = log_ndtr(z)
        mills = np.exp(-0.5 * z * z - 0.5 * math.log(2 * math.pi) - logp)
        # -d^2/dz^2 log Phi(z) = mills * (z + mills); chain rule adds a factor 2
        return logp, SQRT2 * mills, 2.0 * mills * (z + mills)

    @property
    def curvature_bound(self) -> float:
        """Upper bound on the second derivative of a single pair's NLL in the Elo gap."""
        # logistic: sigma * (1 - sigma) <= 1/4; probit: -log Phi(z)'' < 1, times sqrt(2)^2
        return 0.25 if self is ModelKind.BRADLEY_TERRY else 2.0


@dataclass(frozen=True)
class Document:
    id: str
    text: str

    def __post_init__(self):
        if not self.id:
            raise ValueError("document id must be nonempty")


@dataclass(frozen=True)
class Query:
    id: str
    text: str

    def __post_init__(self):
        if not self.id:
            raise ValueError("query id must be nonempty")


@dataclass(frozen=True)
class CandidateSet:
    """A query's top-k candidate documents, in initial-retrieval order."""

    query_id: str
    doc_ids: tuple[str, ...]
    max_k: int = DEFAULT_MAX_CANDIDATES

    def __post_init__(self):
        object.__setattr__(self, "doc_ids", tuple(self.doc_ids))
        if len(set(self.doc_ids)) != len(self.doc_ids):
            raise ValueError(f"duplicate doc_ids in candidate set for query {self.query_id!r}")
        if not 2 <= self.k <= self.max_k:
            raise ValueError(
                f"candidate set for {self.query_id!r} has k={self.k}, expected 2..{self.max_k}"
            )

    @property
    def k(self) -> int:
        return len(self.doc_ids)

    def index(self, doc_id: str) -> int:
        try:
            return self.doc_ids.index(doc_id)
        except ValueError:
            raise KeyError(f"{doc_id!r} is not a candidate for query {self.query_id!r}") from None


@dataclass(frozen=True)
class PreferenceRecord:
    """One judgment: probability ``p`` that candidate ``i`` beats candidate ``j``."""

    query_id: str
    i: int
    j: int
    p: float
    weight: float = 1.0

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError(f"self-comparison ({self.i}, {self.j})")
        if self.i < 0 or self.j < 0:
            raise ValueError(f"negative candidate index in ({self.i}, {self.j})")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"preference probability {self.p} outside [0, 1]")
        if not self.weight >= 1:
            raise ValueError(f"weight must be >= 1, got {self.weight}")


class SparsePreferenceMatrix:
    """Antisymmetric sparse matrix of pairwise win probabilities.

    Stored as parallel COO arrays holding both orientations of every judged
    pair; a pair that was never judged is simply absent. The mirror entry is
    materialised as ``1 - w`` so ``w_ij + w_ji == 1`` holds exactly.
    """

    __slots__ = ("n", "rows", "cols", "probs", "weights")

    def __init__(self, n: int, rows, cols, probs, weights):
        self.n = int(n)
        self.rows = np.asarray(rows, dtype=np.int64)
        self.cols = np.asarray(cols, dtype=np.int64)
        self.probs = np.asarray(probs, dtype=np.float64)
        self.weights = np.asarray(weights, dtype=np.float64)
        for arr in (self.rows, self.cols, self.probs, self.weights):
            arr.setflags(write=False)

    @classmethod
    def from_pairs(cls, n: int, pairs: dict[tuple[int, int], tuple[float, float]]):
        """Build from ``{(i, j): (w_ij, weight)}`` with ``i < j``."""
        keys = sorted(pairs)
        rows, cols, probs, weights = [], [], [], []
        for i, j in keys:
            w, m = pairs[(i, j)]
            rows += [i, j]
            cols += [j, i]
            probs += [w, 1.0 - w]
            weights += [m, m]
        return cls(n, rows, cols, probs, weights)

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self) -> Iterator[tuple[int, int, float, float]]:
        for r, c, w, m in zip(self.rows, self.cols, self.probs, self.weights):
            yield int(r), int(c), float(w), float(m)

    def __contains__(self, key) -> bool:
        i, j = key
        return bool(np.any((self.rows == i) & (self.cols == j)))

    def get(self, i: int, j: int):
        """``(w_ij, weight)`` or None when the pair was not judged."""
        hit = np.flatnonzero((self.rows == i) & (self.cols == j))
        if hit.size == 0:
            return None
        return float(self.probs[hit[0]]), float(self.weights[hit[0]])

    def edges(self) -> list[tuple[int, int]]:
        """Judged unordered pairs as sorted ``(i, j)`` tuples, ``i < j``."""
        mask = self.rows < self.cols
        return sorted(zip(self.rows[mask].tolist(), self.cols[mask].tolist()))

    def restrict(self, edges: Iterable[tuple[int, int]]) -> "SparsePreferenceMatrix":
        """Sub-matrix keeping only the given unordered pairs."""
        keep = {(min(a, b), max(a, b)) for a, b in edges}
        lo = np.minimum(self.rows, self.cols)
        hi = np.maximum(self.rows, self.cols)
        mask = np.fromiter(
            ((int(a), int(b)) in keep for a, b in zip(lo, hi)), dtype=bool, count=len(lo)
        )
        return SparsePreferenceMatrix(
            self.n, self.rows[mask], self.cols[mask], self.probs[mask], self.weights[mask]
        )

    def __repr__(self) -> str:
        return f"SparsePreferenceMatrix(n={self.n}, pairs={len(self) // 2})"


def build_preference_matrix(records: Sequence[PreferenceRecord], n: int) -> SparsePreferenceMatrix:
    """Merge judgments for one query into an antisymmetric sparse matrix.

    Repeated observations of a pair are pooled with a weight-weighted mean of
    ``p``; a record given as ``(j, i)`` contributes ``1 - p`` to pair ``(i, j)``.
    The merge uses exact summation, so the result does not depend on record order.
    """
    grouped: dict[tuple[int, int], list[tuple[float, float]]] = defaultdict(list)
    for rec in records:
        i, j = rec.i, rec.j
        if i == j:
            raise ValueError(f"self-comparison ({i}, {j})")
        if not (0 <= i < n and 0 <= j < n):
            raise IndexError(f"pair ({i}, {j}) out of range for n={n}")
        if i < j:
            grouped[(i, j)].append((rec.p, rec.weight))
        else:
            grouped[(j, i)].append((1.0 - rec.p, rec.weight))

    merged = {}
    for key, obs in grouped.items():
        total = math.fsum(m for _, m in obs)
        w = math.fsum(p * m for p, m in obs) / total
        merged[key] = (min(max(w, 0.0), 1.0), total)
    return SparsePreferenceMatrix.from_pairs(n, merged)


def implied_dense_matrix(elos, model: ModelKind) -> FloatArray:
    """Dense win-probability matrix implied by an Elo vector under ``model``."""
    e = np.asarray(elos, dtype=float)
    n = e.size
    upper = model.link(e[:, None] - e[None, :])
    iu = np.triu_indices(n, 1)
    out = np.full((n, n), 0.5)
    out[iu] = upper[iu]
    out.T[iu] = 1.0 - upper[iu]
    return out


def center(elos) -> FloatArray:
    """Shift an Elo vector to zero mean."""
    e = np.asarray(elos, dtype=float)
    return e - e.mean() if e.size else e.copy()
