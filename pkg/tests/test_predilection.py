import math

import numpy as np
import pytest
from scipy.special import expit

from sweetspot.errors import DegenerateFitError, ValidationError
from sweetspot.predilection import (
    LINEAR,
    LOGISTIC,
    PredilectionModel,
    fit_glm,
    load_model,
    make_fold_plan,
    prevalidated_control_scores,
    save_model,
    score_treated,
)


def logistic_data(rng, n=5000, beta=(0.8, -0.5, 0.3, 0.0, 1.0), intercept=-0.4):
    X = rng.normal(size=(n, len(beta)))
    y = (rng.random(n) < expit(intercept + X @ np.asarray(beta))).astype(float)
    return X, y, np.asarray(beta), intercept


def test_no_signal_gives_logit_of_mean():
    X = np.zeros((8, 3))
    y = np.array([1, 0, 1, 0, 1, 0, 1, 1], dtype=float)
    m = fit_glm(X, y)
    assert m.intercept == pytest.approx(math.log(5 / 3), abs=1e-8)
    assert np.allclose(m.coefficients, 0.0)


def test_recovers_known_coefficients(rng):
    X, y, beta, b0 = logistic_data(rng)
    m = fit_glm(X, y, ridge_penalty=1e-6)
    assert m.converged
    assert np.max(np.abs(m.coefficients - beta)) < 0.1
    assert abs(m.intercept - b0) < 0.1


def test_penalized_score_equations(rng):
    X, y, _, _ = logistic_data(rng)
    lam = 1e-6
    for ridge in (lam, 5.0):
        m = fit_glm(X, y, ridge_penalty=ridge)
        r = y - expit(m.intercept + X @ m.coefficients)
        assert abs(r.sum()) < 1e-6
        assert np.max(np.abs(X.T @ r - ridge * m.coefficients)) < 1e-6


def test_linear_link_matches_lstsq(rng):
    X = rng.normal(size=(300, 4))
    y = 1.5 + X @ [1.0, 0.0, -2.0, 0.5] + rng.normal(size=300)
    m = fit_glm(X, y, LINEAR, ridge_penalty=0.0)
    coef, *_ = np.linalg.lstsq(np.column_stack([np.ones(300), X]), y, rcond=None)
    assert m.intercept == pytest.approx(coef[0], abs=1e-9)
    assert np.allclose(m.coefficients, coef[1:], atol=1e-9)


def test_large_ridge_shrinks_to_mean(rng):
    X, y, _, _ = logistic_data(rng, n=1000)
    m = fit_glm(X, y, ridge_penalty=1e6)
    assert np.max(np.abs(m.coefficients)) < 1e-3
    assert m.intercept == pytest.approx(math.log(y.mean() / (1 - y.mean())), abs=1e-3)
    lin = fit_glm(X, y, LINEAR, ridge_penalty=1e6)
    assert np.max(np.abs(lin.coefficients)) < 1e-3
    assert lin.intercept == pytest.approx(y.mean(), abs=1e-3)


def test_objective_never_decreases(rng):
    X, y, _, _ = logistic_data(rng, n=400)
    X[:, 0] *= 8  # push the first Newton step far out
    m = fit_glm(X, y)
    assert np.all(np.diff(m.objective_trace) >= -1e-9)


def test_separable_data_still_converges():
    X = np.array([[-2.0], [-1.0], [1.0], [2.0]])
    y = np.array([0.0, 0.0, 1.0, 1.0])
    m = fit_glm(X, y, ridge_penalty=1e-2)
    assert m.converged and np.isfinite(m.coefficients).all()


def test_degenerate_outcomes():
    X = np.random.default_rng(0).normal(size=(10, 2))
    with pytest.raises(DegenerateFitError):
        fit_glm(X, np.zeros(10), ridge_penalty=0.0)
    m = fit_glm(X, np.zeros(10), intercept_only_fallback=True)
    assert np.all(m.coefficients == 0)
    assert m.intercept == pytest.approx(math.log(1 / 19))


def test_non_finite_covariate():
    X = np.ones((4, 1))
    X[2, 0] = np.nan
    with pytest.raises(ValidationError):
        fit_glm(X, np.array([0, 1, 0, 1.0]))


def test_odds_ratio_score():
    m = PredilectionModel(LOGISTIC, math.log(0.080), np.array([math.log(4.765), 0.0]), 0.0,
                          covariate_names=("coma", "age"))
    assert m.linear_predictor(np.array([[1.0, 0.0]]))[0] == pytest.approx(math.log(0.080) + math.log(4.765),
                                                                          abs=1e-12)
    assert m.odds_ratios()["coma"] == pytest.approx(4.765)


def test_contiguous_plan_holds_out_leading_pair():
    plan = make_fold_plan(10, 5, shuffle=False)
    assert list(plan.sizes()) == [2] * 5
    assert list(plan.members(0)) == [0, 1]
    train = np.flatnonzero(plan.assignment != 0)
    assert list(train) == list(range(2, 10))


def test_fold_sizes_and_determinism():
    plan = make_fold_plan(9, 3, seed=4)
    assert sorted(plan.sizes()) == [3, 3, 3]
    assert np.array_equal(plan.assignment, make_fold_plan(9, 3, seed=4).assignment)
    assert not np.array_equal(make_fold_plan(100, 10, seed=1).assignment,
                              make_fold_plan(100, 10, seed=2).assignment)
    with pytest.raises(ValidationError):
        make_fold_plan(3, 5)


def test_stratified_plan_balances_outcomes():
    y = np.r_[np.ones(20), np.zeros(80)]
    plan = make_fold_plan(100, 10, seed=0, strata=y)
    assert all(y[plan.members(f)].sum() == 2 for f in range(10))


def test_prevalidation_against_refit_oracle(rng):
    X, y, _, _ = logistic_data(rng, n=200)
    ids = [f"c{k}" for k in range(200)]
    plan = make_fold_plan(200, 5, seed=3)
    scores, _ = prevalidated_control_scores(ids, X, y, plan)
    for f in range(5):
        held = plan.assignment == f
        oracle = fit_glm(X[~held], y[~held])
        for r in np.flatnonzero(held):
            s = scores[r]
            assert s.fold == f and ids[r] not in s.training_ids
            assert len(s.training_ids) == (~held).sum()
            assert s.score == pytest.approx(float(oracle.intercept + X[r] @ oracle.coefficients), abs=1e-12)


def test_first_fold_trains_on_the_rest(rng):
    X, y, _, _ = logistic_data(rng, n=10)
    y[:2] = [0, 1]
    ids = list(range(1, 11))
    scores, _ = prevalidated_control_scores(ids, X, y, make_fold_plan(10, 5, shuffle=False), ridge_penalty=1.0)
    assert scores[0].training_ids == frozenset(range(3, 11))
    assert scores[1].training_ids == frozenset(range(3, 11))


def test_identical_covariates_equal_scores():
    X = np.ones((20, 2))
    y = np.tile([0.0, 1.0], 10)
    # stratified folds give every training set the same outcome mix
    scores, _ = prevalidated_control_scores(range(20), X, y, make_fold_plan(20, 5, seed=0, strata=y))
    assert len({round(s.score, 12) for s in scores}) == 1


def test_treated_twin_of_control_gets_full_model_score(rng):
    X, y, _, _ = logistic_data(rng, n=300)
    model, treated = score_treated(X, y, ["t"], X[7:8])
    assert treated[0].score == pytest.approx(float(model.intercept + X[7] @ model.coefficients), abs=1e-12)
    assert treated[0].provenance == "full"


def test_model_json_round_trip(tmp_path, rng):
    X, y, _, _ = logistic_data(rng, n=300)
    m = fit_glm(X, y, covariate_names=tuple(f"x{k}" for k in range(5)))
    save_model(m, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json", m.covariate_names)
    assert np.array_equal(back.linear_predictor(X), m.linear_predictor(X))
