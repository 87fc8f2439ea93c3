import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit
from scipy.stats import spearmanr

from zelo.core import ModelKind, PreferenceRecord, SparsePreferenceMatrix, build_preference_matrix
from zelo.ensemble import SyntheticJudge
from zelo.graphs import sample_cycle_union
from zelo.solver import (DisconnectedGraphError, FitOptions, compute_zelo, fit_elos,
                         nll_gradient, nll_loss, predict_pref, with_options)

MODELS = list(ModelKind)


def dense_matrix(elos, model):
    n = len(elos)
    recs = [PreferenceRecord("q", i, j, float(model.link(elos[i] - elos[j])))
            for i in range(n) for j in range(i + 1, n)]
    return build_preference_matrix(recs, n)


def random_sparse(rng, n, model, k=4):
    g = sample_cycle_union(n, k, rng)
    e = rng.normal(size=n)
    recs = [PreferenceRecord("q", i, j, float(np.clip(model.link(e[i] - e[j])
                                                        + 0.1 * rng.normal(), 0.05, 0.95)))
            for i, j in g.edge_list()]
    return build_preference_matrix(recs, n)


def test_two_items_bradley_terry_closed_form():
    W = build_preference_matrix([PreferenceRecord("q", 0, 1, float(expit(1.0)))], 2)
    rep = fit_elos(W, ModelKind.BRADLEY_TERRY)
    assert rep.converged
    np.testing.assert_allclose(rep.elos, [0.5, -0.5], atol=1e-6)


def test_even_split_gives_zero_elos():
    W = build_preference_matrix([PreferenceRecord("q", 0, 1, 0.5),
                                 PreferenceRecord("q", 1, 2, 0.5)], 3)
    np.testing.assert_allclose(fit_elos(W).elos, 0.0, atol=1e-12)


@pytest.mark.parametrize("model", MODELS)
def test_dense_recovery(model):
    e = np.random.default_rng(0).uniform(-2, 2, 10)
    rep = fit_elos(dense_matrix(e, model), model)
    assert rep.converged
    assert np.mean((rep.elos - (e - e.mean())) ** 2) < 1e-8


@pytest.mark.parametrize("model", MODELS)
@pytest.mark.parametrize("precondition", ["curvature", "bound"])
def test_preconditioners_reach_the_same_optimum(model, precondition):
    e = np.random.default_rng(1).normal(size=8)
    W = dense_matrix(e, model)
    rep = fit_elos(W, model, FitOptions(precondition=precondition, max_iters=5000))
    assert rep.converged
    np.testing.assert_allclose(rep.elos, e - e.mean(), atol=1e-6)


def test_raw_gradient_descent_still_works_on_small_instances():
    e = np.array([0.4, 0.0, -0.4])
    W = dense_matrix(e, ModelKind.BRADLEY_TERRY)
    rep = fit_elos(W, ModelKind.BRADLEY_TERRY, FitOptions(precondition="none", max_iters=20000))
    np.testing.assert_allclose(rep.elos, e, atol=1e-5)


@pytest.mark.parametrize("model", MODELS)
def test_loss_is_monotone(model):
    rng = np.random.default_rng(2)
    for _ in range(5):
        W = random_sparse(rng, 30, model)
        rep = fit_elos(W, model)
        assert all(b <= a + 1e-12 for a, b in zip(rep.losses, rep.losses[1:]))


def test_empty_records_are_disconnected():
    with pytest.raises(DisconnectedGraphError):
        compute_zelo([], 3)


def test_disconnected_graph_raises_with_components():
    W = build_preference_matrix([PreferenceRecord("q", 0, 1, 0.7),
                                 PreferenceRecord("q", 2, 3, 0.6)], 4)
    with pytest.raises(DisconnectedGraphError) as info:
        fit_elos(W)
    assert sorted(map(sorted, info.value.components)) == [[0, 1], [2, 3]]


def test_allow_disconnected_centres_each_component():
    W = build_preference_matrix([PreferenceRecord("q", 0, 1, 0.7),
                                 PreferenceRecord("q", 2, 3, 0.6), PreferenceRecord("q", 3, 4, 0.6)], 6)
    e = fit_elos(W, allow_disconnected=True).elos
    assert abs(e[0] + e[1]) < 1e-12 and abs(e[2:5].sum()) < 1e-12 and e[5] == 0.0
    assert e[0] > e[1] and e[2] > e[3] > e[4]


def test_unanimous_judgments_stay_finite():
    recs = [PreferenceRecord("q", 0, j, 1.0) for j in range(1, 5)]
    recs += [PreferenceRecord("q", j, j + 1, 0.5) for j in range(1, 4)]
    rep = compute_zelo(recs, 5, ModelKind.THURSTONE)
    assert np.all(np.isfinite(rep.elos))
    assert np.argmax(rep.elos) == 0 and np.sum(rep.elos == rep.elos.max()) == 1


def test_dominant_document_has_unique_max():
    n = 8
    recs = [PreferenceRecord("q", 0, j, 1 - 1e-6) for j in range(1, n)]
    recs += [PreferenceRecord("q", i, j, 0.5) for i in range(1, n) for j in range(i + 1, n)]
    e = compute_zelo(recs, n, ModelKind.BRADLEY_TERRY).elos
    assert np.argmax(e) == 0 and np.all(e[1:] < e[0] - 1)


def test_recovers_hidden_order_from_synthetic_judge():
    rhos = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        hidden = rng.normal(size=50)
        unit = SyntheticJudge(hidden, noise_scale=0.5, seed=seed).unit_matrix(3, rng)
        recs = [PreferenceRecord("q", i, j, float(unit[i, j]))
                for i in range(50) for j in range(i + 1, 50)]
        rhos.append(spearmanr(compute_zelo(recs, 50).elos, hidden)[0])
    assert np.mean(rhos) > 0.95


def test_non_finite_input_raises():
    W = SparsePreferenceMatrix(2, [0, 1], [1, 0], [np.nan, np.nan], [1.0, 1.0])
    with pytest.raises(ArithmeticError):
        fit_elos(W)


def test_predict_pref_complementary_and_bounds():
    e = np.array([1.0, -0.3, 0.2])
    for model in MODELS:
        assert predict_pref(e, 0, 1, model) + predict_pref(e, 1, 0, model) == 1.0
        assert predict_pref(e, 2, 2, model) == 0.5
    with pytest.raises(IndexError):
        predict_pref(e, 0, 3, ModelKind.THURSTONE)


def test_fit_options_validation_and_round_trip():
    opts = FitOptions(max_iters=10, init="random", seed=3)
    assert FitOptions.from_dict(opts.to_dict()) == opts
    assert with_options(opts, max_iters=11).max_iters == 11
    for bad in ({"lr_exponent": 0}, {"prob_clamp_eps": 0.7}, {"init": "ones"},
                {"precondition": "adam"}, {"max_iters": 0}):
        with pytest.raises(ValueError):
            FitOptions(**bad)


def test_max_iters_reports_non_convergence():
    e = np.random.default_rng(3).normal(size=10)
    rep = fit_elos(dense_matrix(e, ModelKind.THURSTONE), opts=FitOptions(max_iters=2))
    assert not rep.converged and rep.iterations == 2


@pytest.mark.parametrize("model", MODELS)
def test_gradient_matches_finite_differences(model):
    rng = np.random.default_rng(4)
    h = 1e-5
    for _ in range(20):
        W = random_sparse(rng, 12, model)
        e = rng.normal(size=12)
        g = nll_gradient(W, e, model)
        fd = np.array([(nll_loss(W, e + h * u, model) - nll_loss(W, e - h * u, model)) / (2 * h)
                       for u in np.eye(12)])
        assert np.linalg.norm(g - fd) <= 1e-5 * max(np.linalg.norm(fd), 1e-8)


connected_instance = st.tuples(st.integers(3, 15), st.integers(0, 2**32 - 1),
                               st.sampled_from(MODELS))


@settings(max_examples=60, deadline=None)
@given(connected_instance, st.floats(-5, 5))
def test_fit_is_centred_and_translation_free(inst, shift):
    n, seed, model = inst
    W = random_sparse(np.random.default_rng(seed), n, model, k=2)
    a = fit_elos(W, model).elos
    b = fit_elos(W, model, init_elos=np.full(n, shift)).elos
    assert abs(a.mean()) < 1e-9
    np.testing.assert_allclose(a, b, atol=1e-5)


@settings(max_examples=60, deadline=None)
@given(connected_instance)
def test_gradient_sums_to_zero_and_loss_nonnegative(inst):
    n, seed, model = inst
    rng = np.random.default_rng(seed)
    W = random_sparse(rng, n, model, k=2)
    e = rng.normal(size=n)
    assert abs(nll_gradient(W, e, model).sum()) < 1e-9
    assert nll_loss(W, e, model) >= 0


@settings(max_examples=40, deadline=None)
@given(connected_instance)
def test_relabelling_candidates_permutes_elos(inst):
    n, seed, model = inst
    rng = np.random.default_rng(seed)
    W = random_sparse(rng, n, model, k=2)
    perm = rng.permutation(n)
    inv = np.argsort(perm)
    W2 = SparsePreferenceMatrix(n, inv[W.rows], inv[W.cols], W.probs, W.weights)
    np.testing.assert_allclose(fit_elos(W2, model).elos[inv], fit_elos(W, model).elos, atol=1e-5)
