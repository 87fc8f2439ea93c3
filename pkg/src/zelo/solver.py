"""Maximum-likelihood Elo fitting under Bradley-Terry or Thurstone links.

The loss is the weighted negative log likelihood over every stored
(ordered) entry of the preference matrix::

    L(e) = sum_(i,j) weight_ij * w_ij * -log link(e_i - e_j)

Since both orientations of a pair are stored with ``w_ji = 1 - w_ij`` this is
the binary cross entropy of each judged pair. Observed probabilities are
clamped to ``[eps, 1 - eps]`` so unanimous judgments still give finite Elos.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import FloatArray, ModelKind, SparsePreferenceMatrix, build_preference_matrix
from .core import PreferenceRecord, center

__all__ = [
    "DisconnectedGraphError",
    "FitOptions",
    "FitReport",
    "ModelKind",
    "NonFiniteError",
    "compute_zelo",
    "fit_elos",
    "nll_gradient",
    "nll_loss",
    "predict_pref",
]


class DisconnectedGraphError(ValueError):
    def __init__(self, components: list[list[int]]):
        self.components = components
        sizes = sorted((len(c) for c in components), reverse=True)
        super().__init__(
            f"comparison graph has {len(components)} components (sizes {sizes}); "
            "Elo differences across components are undetermined"
        )


class NonFiniteError(ArithmeticError):
    pass


@dataclass(frozen=True)
class FitOptions:
    max_iters: int = 2000
    grad_tol: float = 1e-7
    lr_exponent: float = 0.125
    prob_clamp_eps: float = 1e-6
    init: str = "zeros"  # or "random"
    seed: int = 0
    # per-vertex step scaling: "curvature", "bound" or "none"; see fit_elos
    precondition: str = "curvature"

    def __post_init__(self):
        if not 0 < self.lr_exponent <= 1:
            raise ValueError("lr_exponent must lie in (0, 1] so the step sizes sum to infinity")
        if not 0 < self.prob_clamp_eps < 0.5:
            raise ValueError("prob_clamp_eps must lie in (0, 0.5)")
        if self.init not in ("zeros", "random"):
            raise ValueError(f"init must be 'zeros' or 'random', got {self.init!r}")
        if self.precondition not in ("curvature", "bound", "none"):
            raise ValueError(f"unknown precondition {self.precondition!r}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")

    @classmethod
    def from_dict(cls, d: dict | None) -> "FitOptions":
        return cls(**(d or {}))

    def to_dict(self) -> dict:
        return {
            "max_iters": self.max_iters, "grad_tol": self.grad_tol,
            "lr_exponent": self.lr_exponent, "prob_clamp_eps": self.prob_clamp_eps,
            "init": self.init, "seed": self.seed, "precondition": self.precondition,
        }


@dataclass
class FitReport:
    elos: FloatArray
    iterations: int
    final_loss: float
    final_grad_norm: float
    converged: bool
    losses: list[float] = field(default_factory=list, repr=False)
    step_sizes: list[float] = field(default_factory=list, repr=False)


def _check(W: SparsePreferenceMatrix, elos) -> np.ndarray:
    e = np.asarray(elos, dtype=float)
    if e.shape != (W.n,):
        raise ValueError(f"elo vector has shape {e.shape}, matrix has n={W.n}")
    return e


def _clamped(W: SparsePreferenceMatrix, eps: float) -> np.ndarray:
    return np.clip(W.probs, eps, 1.0 - eps)


def nll_loss(W: SparsePreferenceMatrix, elos, model: ModelKind, eps: float = 1e-6) -> float:
    e = _check(W, elos)
    if len(W) == 0:
        return 0.0
    diff = e[W.rows] - e[W.cols]
    return float(-np.sum(W.weights * _clamped(W, eps) * model.log_link(diff)))


def nll_gradient(W: SparsePreferenceMatrix, elos, model: ModelKind, eps: float = 1e-6) -> FloatArray:
    e = _check(W, elos)
    grad = np.zeros(W.n)
    if len(W) == 0:
        return grad
    diff = e[W.rows] - e[W.cols]
    coef = W.weights * _clamped(W, eps) * model.dlog_link(diff)
    np.subtract.at(grad, W.rows, coef)
    np.add.at(grad, W.cols, coef)
    return grad


def _components(W: SparsePreferenceMatrix) -> list[list[int]]:
    parent = list(range(W.n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in zip(W.rows.tolist(), W.cols.tolist()):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    groups: dict[int, list[int]] = {}
    for v in range(W.n):
        groups.setdefault(find(v), []).append(v)
    return list(groups.values())


def _evaluate(W: SparsePreferenceMatrix, e: np.ndarray, model: ModelKind, eps: float):
    """Loss, gradient and Hessian diagonal in one pass over the entries."""
    n = W.n
    if len(W) == 0:
        return 0.0, np.zeros(n), np.zeros(n)
    coef = W.weights * _clamped(W, eps)
    logp, dlogp, curv = model.log_link_terms(e[W.rows] - e[W.cols])
    loss = float(-np.sum(coef * logp))
    g = coef * dlogp
    grad = np.bincount(W.cols, weights=g, minlength=n) - np.bincount(W.rows, weights=g, minlength=n)
    h = coef * curv
    hdiag = np.bincount(W.rows, weights=h, minlength=n) + np.bincount(W.cols, weights=h, minlength=n)
    return loss, grad, hdiag


def fit_elos(
    W: SparsePreferenceMatrix,
    model: ModelKind = ModelKind.THURSTONE,
    opts: FitOptions | None = None,
    *,
    init_elos=None,
    allow_disconnected: bool = False,
) -> FitReport:
    """Fit zero-mean Elos by gradient descent with step size ``t ** -lr_exponent``.

    The raw gradient is badly scaled: its Hessian grows with vertex degree, so
    plain descent with ``eta_t`` near 1 diverges on dense matrices. Each
    vertex's gradient component is therefore divided by a curvature scale:

    * ``"curvature"`` (default): the current Hessian diagonal. Because the
      Hessian is a weighted graph Laplacian, the scaled step never overshoots
      the local quadratic model for ``eta_t <= 1``; if the loss still rises
      the step is halved until it does not.
    * ``"bound"``: ``c * D_i`` with ``D_i`` the vertex's total judgment weight
      and ``c`` the link's global curvature bound. Descent is guaranteed
      without line search, but vertices with near-unanimous judgments move slowly.
    * ``"none"``: the raw gradient.

    The Elo vector is re-centred after every step. With ``allow_disconnected``
    each connected component is centred separately instead of raising.
    """
    opts = opts or FitOptions()
    n = W.n
    comps = _components(W)
    if len(comps) > 1 and not allow_disconnected:
        raise DisconnectedGraphError(comps)

    if init_elos is not None:
        e = _check(W, init_elos).copy()
    elif opts.init == "random":
        e = np.random.default_rng(opts.seed).normal(size=n)
    else:
        e = np.zeros(n)

    if len(comps) > 1:
        labels = np.empty(n, dtype=np.int64)
        for c, members in enumerate(comps):
            labels[members] = c
        counts = np.bincount(labels)

        def project(x):
            return x - (np.bincount(labels, weights=x) / counts)[labels]
    else:
        project = center

    eps = opts.prob_clamp_eps
    degree = np.bincount(W.rows, weights=W.weights, minlength=n)
    bound = model.curvature_bound * degree
    active = degree > 0

    def scale_for(hdiag):
        if opts.precondition == "none":
            return np.ones(n)
        denom = bound if opts.precondition == "bound" else np.maximum(hdiag, 1e-9 * bound)
        return np.divide(1.0, denom, out=np.zeros(n), where=active)

    e = project(e)
    loss, grad, hdiag = _evaluate(W, e, model, eps)
    losses, steps = [], []
    converged = False
    t = 0
    while True:
        if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
            raise NonFiniteError(f"non-finite loss or gradient at iteration {t}")
        losses.append(loss)
        gnorm = float(np.max(np.abs(grad))) if n else 0.0
        if gnorm <= opts.grad_tol:
            converged = True
            break
        if t >= opts.max_iters:
            break
        t += 1
        eta = t ** -opts.lr_exponent
        direction = scale_for(hdiag) * grad
        for _ in range(60):
            cand = project(e - eta * direction)
            c_loss, c_grad, c_hdiag = _evaluate(W, cand, model, eps)
            # only the local-curvature scaling can overshoot
            if opts.precondition != "curvature" or c_loss <= loss or not np.isfinite(c_loss):
                break
            eta *= 0.5
        steps.append(eta)
        e, loss, grad, hdiag = cand, c_loss, c_grad, c_hdiag

    return FitReport(
        elos=e,
        iterations=t,
        final_loss=loss,
        final_grad_norm=gnorm,
        converged=converged,
        losses=losses,
        step_sizes=steps,
    )


def predict_pref(elos, i: int, j: int, model: ModelKind) -> float:
    """Model probability that candidate ``i`` beats ``j``."""
    e = np.asarray(elos, dtype=float)
    n = e.size
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"pair ({i}, {j}) out of range for n={n}")
    if i == j:
        return 0.5
    if i < j:
        return float(model.link(e[i] - e[j]))
    # evaluate in canonical orientation so p_ij + p_ji == 1 exactly
    return 1.0 - float(model.link(e[j] - e[i]))


def compute_zelo(records: list[PreferenceRecord], n: int,
                 model: ModelKind = ModelKind.THURSTONE,
                 opts: FitOptions | None = None) -> FitReport:
    """Merge one query's judgments and fit its Elos."""
    return fit_elos(build_preference_matrix(records, n), model, opts)


def with_options(opts: FitOptions | None, **changes) -> FitOptions:
    return replace(opts or FitOptions(), **changes)
