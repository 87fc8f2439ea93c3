"""Comparison graphs: which candidate pairs get judged.

The graph's regularity parameter is called ``k`` here, as in "k-regular".
It is unrelated to the top-k size of a candidate set, which is the vertex
count ``n`` from this module's point of view.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .core import ModelKind, PreferenceRecord, build_preference_matrix


@dataclass(frozen=True)
class ComparisonGraph:
    n: int
    edges: frozenset[tuple[int, int]]

    def __post_init__(self):
        norm = set()
        for a, b in self.edges:
            a, b = int(a), int(b)
            if a == b:
                raise ValueError(f"self-loop on vertex {a}")
            if not (0 <= a < self.n and 0 <= b < self.n):
                raise IndexError(f"edge ({a}, {b}) out of range for n={self.n}")
            norm.add((min(a, b), max(a, b)))
        object.__setattr__(self, "edges", frozenset(norm))

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]]) -> "ComparisonGraph":
        return cls(n, frozenset(edges))

    @classmethod
    def complete(cls, n: int) -> "ComparisonGraph":
        return cls(n, frozenset((i, j) for i in range(n) for j in range(i + 1, n)))

    def edge_list(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=np.int64)
        for a, b in self.edges:
            deg[a] += 1
            deg[b] += 1
        return deg

    def adjacency(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.n)]
        for a, b in sorted(self.edges):
            adj[a].append(b)
            adj[b].append(a)
        return adj

    def to_json(self) -> dict:
        return {"n": self.n, "edges": [list(e) for e in self.edge_list()]}

    @classmethod
    def from_json(cls, obj: dict) -> "ComparisonGraph":
        return cls.from_edges(int(obj["n"]), (tuple(e) for e in obj["edges"]))

    def __len__(self) -> int:
        return len(self.edges)


@dataclass(frozen=True)
class GraphStats:
    connected: bool
    min_degree: int
    max_degree: int
    diameter: int | None
    edge_count: int

    def to_json(self) -> dict:
        return {
            "connected": self.connected,
            "min_degree": self.min_degree,
            "max_degree": self.max_degree,
            "diameter": self.diameter,
            "edge_count": self.edge_count,
        }


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def max_pairs(n: int) -> int:
    return n * (n - 1) // 2


def sample_random_pairs(n: int, budget: int, seed=None) -> ComparisonGraph:
    """``budget`` distinct pairs drawn uniformly without replacement."""
    total = max_pairs(n)
    if budget < 0 or budget > total:
        raise ValueError(f"budget {budget} outside 0..{total} for n={n}")
    rng = _rng(seed)
    iu, ju = np.triu_indices(n, 1)
    pick = rng.choice(total, size=budget, replace=False)
    return ComparisonGraph.from_edges(n, zip(iu[pick].tolist(), ju[pick].tolist()))


def sample_bipartite(n: int, l: int) -> ComparisonGraph:
    """Complete bipartite graph between the first ``l`` vertices and the rest."""
    if not 1 <= l < n:
        raise ValueError(f"need 1 <= l < n, got l={l}, n={n}")
    return ComparisonGraph.from_edges(n, ((a, b) for a in range(l) for b in range(l, n)))


def _repair_cycle(perm: np.ndarray, used: np.ndarray, rng, max_moves: int) -> np.ndarray:
    """Remove edges already in ``used`` from the cycle ``perm`` by 2-opt reversals.

    Reversing ``perm[i+1..j]`` swaps edges (p_i, p_i+1), (p_j, p_j+1) for
    (p_i, p_j), (p_i+1, p_j+1); a move is taken only when both new edges are
    fresh, so the collision count never increases.
    """
    n = perm.size
    for _ in range(max_moves):
        nxt = np.roll(perm, -1)
        hits = np.flatnonzero(used[np.minimum(perm, nxt) * n + np.maximum(perm, nxt)])
        if hits.size == 0:
            break
        t = int(rng.choice(hits))
        s = int(rng.integers(n))
        i, j = min(t, s), max(t, s)
        if j - i < 2 or (i == 0 and j == n - 1):
            continue
        a, b, c, d = perm[i], perm[i + 1], perm[j], perm[(j + 1) % n]
        if used[min(a, c) * n + max(a, c)] or used[min(b, d) * n + max(b, d)]:
            continue
        perm[i + 1:j + 1] = perm[i + 1:j + 1][::-1].copy()
    return perm


def sample_cycle_union(n: int, k: int, seed=None, *, max_moves: int = 10000) -> ComparisonGraph:
    """Union of ``k/2`` random Hamiltonian cycles on ``n`` vertices.

    Each new cycle is a uniform random permutation whose edges already used by
    earlier cycles are swapped out by local 2-opt moves, so the result is
    normally exactly k-regular with ``k*n/2`` edges. If a collision cannot be
    removed (only plausible when k is close to n) the shared edge is kept once.
    """
    if k % 2:
        raise ValueError(f"k must be even, got {k}")
    if not 2 <= k < n:
        raise ValueError(f"need 2 <= k < n, got k={k}, n={n}")
    rng = _rng(seed)
    used = np.zeros(n * n, dtype=bool)
    for _ in range(k // 2):
        perm = _repair_cycle(rng.permutation(n), used, rng, max_moves)
        nxt = np.roll(perm, -1)
        used[np.minimum(perm, nxt) * n + np.maximum(perm, nxt)] = True
    codes = np.flatnonzero(used)
    return ComparisonGraph.from_edges(n, zip((codes // n).tolist(), (codes % n).tolist()))


def hamiltonian_cycle_edges(n: int, seed=None) -> list[tuple[int, int]]:
    """Edges of one random Hamiltonian cycle, in traversal order."""
    if n < 2:
        return []
    perm = _rng(seed).permutation(n).tolist()
    if n == 2:
        return [(min(perm), max(perm))]
    out = []
    for t in range(n):
        a, b = perm[t], perm[(t + 1) % n]
        out.append((min(a, b), max(a, b)))
    return out


def sample_entropy_greedy(
    n: int,
    budget: int,
    oracle: Callable[[int, int], float],
    model: ModelKind = ModelKind.THURSTONE,
    seed=None,
    query_id: str = "",
    fit_options=None,
) -> tuple[ComparisonGraph, list[PreferenceRecord]]:
    """Adaptively judge the pair with the smallest current Elo gap.

    A random Hamiltonian cycle is judged first so the graph is connected
    before any Elo estimate is used. After that each step refits the Elos
    (warm-started) and queries ``oracle(i, j)`` on the un-judged pair with the
    smallest ``|e_i - e_j|``; ties go to the lexicographically smallest pair.
    """
    from .solver import FitOptions, fit_elos

    total = max_pairs(n)
    if budget < 0 or budget > total:
        raise ValueError(f"budget {budget} outside 0..{total} for n={n}")
    if fit_options is None:
        fit_options = FitOptions(max_iters=200, grad_tol=1e-6)

    rng = _rng(seed)
    judged = np.zeros((n, n), dtype=bool)
    np.fill_diagonal(judged, True)
    records: list[PreferenceRecord] = []

    def judge(i, j):
        records.append(PreferenceRecord(query_id, i, j, float(oracle(i, j))))
        judged[i, j] = judged[j, i] = True

    for i, j in hamiltonian_cycle_edges(n, rng):
        if len(records) >= budget:
            break
        if not judged[i, j]:
            judge(i, j)

    elos = np.zeros(n)
    upper = np.triu(np.ones((n, n), dtype=bool), 1)
    while len(records) < budget:
        W = build_preference_matrix(records, n)
        elos = fit_elos(W, model, fit_options, init_elos=elos).elos
        gap = np.abs(elos[:, None] - elos[None, :])
        gap[~upper | judged] = np.inf
        flat = int(np.argmin(gap))  # row-major: first minimum is the smallest (i, j)
        judge(*divmod(flat, n))

    return ComparisonGraph.from_edges(n, ((r.i, r.j) for r in records)), records


def _bfs(adj: list[list[int]], src: int) -> list[int]:
    dist = [-1] * len(adj)
    dist[src] = 0
    queue = deque([src])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def connected_components(g: ComparisonGraph) -> list[list[int]]:
    adj = g.adjacency()
    seen = [False] * g.n
    comps = []
    for s in range(g.n):
        if seen[s]:
            continue
        comp = [v for v, d in enumerate(_bfs(adj, s)) if d >= 0]
        for v in comp:
            seen[v] = True
        comps.append(comp)
    return comps


def graph_stats(g: ComparisonGraph) -> GraphStats:
    """Connectivity, degree range and diameter (BFS from every vertex)."""
    deg = g.degrees()
    adj = g.adjacency()
    diameter = 0
    connected = True
    for s in range(g.n):
        dist = _bfs(adj, s)
        if min(dist) < 0:
            connected = False
            break
        diameter = max(diameter, max(dist))
    return GraphStats(
        connected=connected,
        min_degree=int(deg.min()) if g.n else 0,
        max_degree=int(deg.max()) if g.n else 0,
        diameter=diameter if connected else None,
        edge_count=len(g.edges),
    )


def bollobas_bound(n: int, k: int) -> float:
    """Asymptotic high-probability diameter bound for a random k-regular graph."""
    if k <= 2:
        raise ValueError(f"bound needs k >= 3, got {k}")
    if n <= k:
        raise ValueError(f"bound needs n > k, got n={n}, k={k}")
    base = math.log(k - 1)
    return (math.log(n) + math.log(math.log(n)) + math.log(2.5 * k * (k - 1))) / base


def sample_graph(strategy: str, n: int, budget: int | None = None, *, k: int | None = None,
                 l: int | None = None, seed=None, oracle=None, model=ModelKind.THURSTONE,
                 query_id: str = ""):
    """Dispatch on a strategy name; returns ``(graph, records_or_None)``.

    Strategies take either their native parameter (``k`` for cycles, ``l``
    for bipartite) or an edge ``budget`` that is translated into one. A budget
    covering every pair yields the complete graph for all strategies.
    """
    if budget is not None and budget >= max_pairs(n) and strategy != "greedy":
        return ComparisonGraph.complete(n), None
    if strategy == "random":
        if budget is None:
            raise ValueError("random strategy needs a budget")
        return sample_random_pairs(n, budget, seed), None
    if strategy == "bipartite":
        if l is None:
            if budget is None:
                raise ValueError("bipartite strategy needs l or a budget")
            l = bipartite_side_for_budget(n, budget)
        return sample_bipartite(n, l), None
    if strategy == "cycles":
        if k is None:
            if budget is None:
                raise ValueError("cycles strategy needs k or a budget")
            k = cycle_degree_for_budget(n, budget)
        if k >= n - 1:
            return ComparisonGraph.complete(n), None
        return sample_cycle_union(n, k, seed), None
    if strategy == "greedy":
        if budget is None or oracle is None:
            raise ValueError("greedy strategy needs a budget and an oracle")
        return sample_entropy_greedy(n, budget, oracle, model, seed, query_id=query_id)
    raise ValueError(f"unknown strategy {strategy!r}")


def cycle_degree_for_budget(n: int, budget: int) -> int:
    """Largest even k with k*n/2 <= budget (at least 2)."""
    return max(2, 2 * (budget // n))


def bipartite_side_for_budget(n: int, budget: int) -> int:
    """Largest l <= n/2 with l*(n-l) <= budget (at least 1)."""
    best = 1
    for l in range(1, n // 2 + 1):
        if l * (n - l) <= budget:
            best = l
    return best
