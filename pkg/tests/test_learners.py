import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from envtransfer.data import aggregate
from envtransfer.errors import DataError, DegenerateError, SingleClassError
from envtransfer.learners import (
    RegressionTree,
    TransferModel,
    fit_linear,
    fit_linear_transfer,
    fit_logistic_irls,
    fit_stepwise_interactions,
    fit_tree_importance,
    fit_validity_classifier,
    predict_transfer,
)
from envtransfer.learners.logistic import RIDGE
from envtransfer.synth import all_configs

from conftest import dataset_from_means, pair_from_means


def agg(configs, y, valid=None):
    return aggregate(dataset_from_means(configs, y, valid=valid))


# -- linear transfer ----------------------------------------------------------


def test_transfer_identity_and_exact_line():
    C = all_configs(3)
    y = np.arange(1.0, 9.0)
    m = fit_linear_transfer(pair_from_means(C, y, y))
    assert (m.alpha, m.beta, m.residual_sd) == pytest.approx((1.0, 0.0, 0.0), abs=1e-12)
    m = fit_linear_transfer(pair_from_means(C, y, 2 * y + 3))
    assert (m.alpha, m.beta) == pytest.approx((2.0, 3.0), abs=1e-12)
    assert m.n_fit == 8


def test_transfer_noisy_line(rng):
    x = rng.uniform(10, 100, 500)
    y = 2 * x + 3 + rng.normal(0, 0.1, 500)
    m = fit_linear(x, y)
    assert abs(m.alpha - 2) < 0.05 and abs(m.beta - 3) < 0.5
    resid = y - (m.alpha * x + m.beta)
    assert m.residual_sd == pytest.approx(np.sqrt(resid @ resid / 498), rel=1e-9)


def test_transfer_holdout_rmse(rng):
    x = rng.uniform(10, 100, 400)
    y = 2 * x + 3 + rng.normal(0, 0.5, 400)
    m = fit_linear(x[:300], y[:300])
    pred = predict_transfer(m, x[300:])
    rmse = np.sqrt(np.mean((pred - y[300:]) ** 2))
    assert rmse < 3 * m.residual_sd


def test_transfer_degenerate_source():
    with pytest.raises(DegenerateError, match="degenerate source"):
        fit_linear([5.0, 5.0, 5.0], [1.0, 2.0, 3.0])


def test_transfer_uses_only_common_valid():
    C = all_configs(3)
    y = np.arange(1.0, 9.0)
    yt = 2 * y + 3
    yt[0] = np.nan
    ys = y.copy()
    ys[1] = np.nan
    m = fit_linear_transfer(pair_from_means(C, ys, yt))
    assert m.n_fit == 6
    assert (m.alpha, m.beta) == pytest.approx((2.0, 3.0))


def test_predict_and_json_round_trip():
    m = TransferModel(2.0, 3.0, 0.0, 2)
    assert predict_transfer(m, [1.0, 2.0]).tolist() == [5.0, 7.0]
    assert predict_transfer(TransferModel(1.0, 0.0, 0.0, 2), [4.0, 5.0]).tolist() == [4.0, 5.0]
    raw = json.loads(m.to_json())
    assert set(raw) == {"alpha", "beta", "residual_sd", "n_fit"}
    assert TransferModel.from_json(m.to_json()) == m


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.floats(-50, 50).filter(lambda a: abs(a) > 1e-3),
       st.floats(-1e3, 1e3))
def test_affine_recovery(seed, a, b):
    y = np.random.default_rng(seed).uniform(1, 100, 20)
    m = fit_linear(y, a * y + b)
    assert m.alpha == pytest.approx(a, abs=1e-9)
    assert m.beta == pytest.approx(b, abs=1e-9 * max(1.0, abs(b), abs(a) * 100))


# -- stepwise interactions ----------------------------------------------------


def _orthogonality(model, ds):
    ok = ds.valid_only()
    A = np.column_stack([np.ones(ok.n_configs), model.design(ok.configs)])
    r = ok.mean_perf - model.predict(ok.configs)
    return np.abs(A.T @ r).max() / np.linalg.norm(ok.mean_perf)


def test_stepwise_planted_interaction_noise_free():
    C = all_configs(4)
    y = 10 + 2 * C[:, 0] + 3 * C[:, 1] + 4 * C[:, 0] * C[:, 1]
    m = fit_stepwise_interactions(agg(C, y))
    assert m.selected_pairs == {(0, 1)}
    assert m.pair_coefficients[(0, 1)] == pytest.approx(4.0, abs=1e-6)
    assert _orthogonality(m, agg(C, y)) < 1e-6


def test_stepwise_constant_response():
    C = all_configs(4)
    m = fit_stepwise_interactions(agg(C, np.full(16, 7.5)))
    assert m.terms == () and m.intercept == pytest.approx(7.5)


def test_stepwise_no_false_pairs_over_seeds():
    C = all_configs(6)
    base = 10 + 2 * C[:, 0] + 3 * C[:, 1]
    false_runs = 0
    for seed in range(20):
        y = base + np.random.default_rng(seed).normal(0, 0.01, C.shape[0])
        m = fit_stepwise_interactions(agg(C, y))
        false_runs += bool(m.selected_pairs)
        assert _orthogonality(m, agg(C, y)) < 1e-6
    assert false_runs == 0


def test_stepwise_insufficient_rows():
    C = all_configs(3)
    with pytest.raises(DataError):
        fit_stepwise_interactions(agg(C, np.arange(1.0, 9.0)))


def test_stepwise_skips_rank_deficient_candidates():
    # only configs with c0 == c1: column c0 duplicates c1 and c0*c1
    C = all_configs(5)
    C = C[C[:, 0] == C[:, 1]]
    y = 5 + 2 * C[:, 0] + C[:, 2] + 3 * C[:, 3] * C[:, 4]
    m = fit_stepwise_interactions(agg(C, y))
    assert m.skipped > 0
    assert np.allclose(m.predict(C), y, atol=1e-8)


def _subset_ols(C, y, terms):
    X = np.column_stack([np.ones(len(y))] + [np.prod(C[:, list(t)], axis=1) for t in terms])
    return np.linalg.lstsq(X, y, rcond=None)[0]


def _planted(d, seed, kmax):
    rng = np.random.default_rng(seed)
    C = all_configs(d)
    cands = [(i,) for i in range(d)] + list(itertools.combinations(range(d), 2))
    k = int(rng.integers(1, kmax + 1))
    planted = sorted((cands[i] for i in rng.choice(len(cands), k, replace=False)),
                     key=lambda t: (len(t), t))
    coefs = rng.uniform(1, 5, k) * rng.choice([-1, 1], k)
    y = 50 + sum(w * np.prod(C[:, list(t)], axis=1) for t, w in zip(planted, coefs))
    return C, y, planted


def _check_subset_ols(C, y, planted, adjust):
    m = fit_stepwise_interactions(agg(C, y), adjust=adjust)
    assert [t.options for t in m.terms] == planted
    oracle = _subset_ols(C, y, planted)
    assert m.intercept == pytest.approx(oracle[0], abs=1e-6)
    assert [t.coef for t in m.terms] == pytest.approx(list(oracle[1:]), abs=1e-6)
    assert _orthogonality(m, agg(C, y)) < 1e-6


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31))
def test_stepwise_equals_subset_ols_unadjusted(seed):
    # conventional 0.05 / 0.10 thresholds
    _check_subset_ols(*_planted(5, seed, 2), adjust="none")


@settings(max_examples=60, deadline=None)
@given(st.sampled_from([4, 5]), st.integers(0, 2**31))
def test_stepwise_equals_subset_ols_default(d, seed):
    _check_subset_ols(*_planted(d, seed, 1), adjust="bonferroni")


@pytest.mark.xfail(strict=True, reason="greedy forward entry stalls: no single planted "
                   "term is significant on its own in 16 rows")
@pytest.mark.parametrize("adjust", ["none", "bonferroni"])
@pytest.mark.parametrize("planted, coefs", [
    ([(2,), (0, 1), (0, 2), (0, 3)], [-3.65, 1.23, 4.89, -2.76]),
    ([(3,), (1, 3)], [-3.0435, 4.0163]),
])
def test_stepwise_tiny_design_counterexamples(adjust, planted, coefs):
    C = all_configs(4)
    y = 50 + sum(w * np.prod(C[:, list(t)], axis=1) for t, w in zip(planted, coefs))
    _check_subset_ols(C, y, planted, adjust)


# -- regression tree ----------------------------------------------------------


def test_tree_single_option():
    C = all_configs(5)
    imp = fit_tree_importance(agg(C, 10 + 5.0 * C[:, 3]))
    assert imp.weights[3] >= 0.99
    assert sum(imp.weights) == pytest.approx(1.0, abs=1e-9)


def test_tree_constant_response():
    C = all_configs(5)
    assert list(fit_tree_importance(agg(C, np.full(32, 3.0))).weights) == [0.0] * 5


def test_tree_ranks_larger_effect_first():
    C = all_configs(5)
    for seed in range(10):
        y = 20 + 8 * C[:, 1] + 2 * C[:, 2] + np.random.default_rng(seed).normal(0, 0.1, 32)
        w = fit_tree_importance(agg(C, y)).weights
        assert w[1] > w[2]


def test_tree_needs_ten_rows():
    C = all_configs(3)
    with pytest.raises(DataError):
        fit_tree_importance(agg(C, np.arange(1.0, 9.0)))


def test_tree_tie_break_lowest_index():
    # options 0 and 1 are identical columns: the split must use option 0
    C = all_configs(5)
    C = C[C[:, 0] == C[:, 1]]
    y = 1 + 4.0 * C[:, 0]
    tree = RegressionTree().fit(C, y)
    w = tree.importance().weights
    assert w[0] == pytest.approx(1.0) and w[1] == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_tree_never_worse_than_mean(seed):
    rng = np.random.default_rng(seed)
    C = all_configs(6)
    y = rng.normal(0, 1, 64) + 3 * C[:, rng.integers(6)]
    tree = RegressionTree().fit(C, y)
    sse = float(((tree.predict(C) - y) ** 2).sum())
    assert sse <= float(((y - y.mean()) ** 2).sum()) + 1e-9
    w = tree.importance().weights
    assert all(v >= 0 for v in w)
    assert sum(w) == pytest.approx(1.0, abs=1e-9) or sum(w) == 0


# -- logistic validity classifier --------------------------------------------


def _gradient(coef, intercept, X, y, lam=RIDGE):
    A = np.column_stack([np.ones(len(y)), X])
    w = np.r_[intercept, coef]
    p = 1 / (1 + np.exp(-(A @ w)))
    return np.abs(A.T @ (p - y) + lam * w).max()


def test_logistic_separable_rule():
    C = all_configs(4)
    y = np.where(C[:, 1] == 1, np.nan, 10.0)
    clf = fit_validity_classifier(agg(C, y))
    assert clf.coefficients[1] > 5
    assert clf.train_accuracy == 1.0
    assert clf.converged
    X = C.astype(float)
    assert _gradient(clf.coefficients, clf.intercept, X, (C[:, 1] == 1).astype(float)) < 1e-6


def test_logistic_single_class():
    C = all_configs(4)
    with pytest.raises(SingleClassError):
        fit_validity_classifier(agg(C, np.full(16, 2.0)))


def test_logistic_random_labels_accuracy():
    rng = np.random.default_rng(11)
    X = rng.integers(0, 2, size=(200, 6)).astype(float)
    y = (rng.random(200) < 0.5).astype(float)
    coef, intercept, _, converged = fit_logistic_irls(X, y)
    accuracy = np.mean(((X @ coef + intercept) >= 0) == (y == 1))
    assert accuracy < 0.75
    assert converged
    assert _gradient(coef, intercept, X, y) < 1e-6


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_logistic_gradient_vanishes(seed):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 2, size=(120, 5)).astype(float)
    logits = X @ rng.normal(0, 2, 5) - 1
    y = (rng.random(120) < 1 / (1 + np.exp(-logits))).astype(float)
    if y.min() == y.max():
        y[0] = 1 - y[0]
    coef, intercept, _, converged = fit_logistic_irls(X, y)
    assert converged
    assert np.all(np.isfinite(coef))
    assert _gradient(coef, intercept, X, y) < 1e-6
