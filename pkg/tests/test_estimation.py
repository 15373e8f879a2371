import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone

from gausslan import (ContractError, DegenerateDataError, GaussianArrayMLE, LikelihoodWorkspace,
                      MildAR1OLS, NewtonOptions, ParameterError, make_model, ols_mild_ar1,
                      sample_paths, solve_mle, standardize)


def _white(seed=0, n=50):
    return np.random.default_rng(seed).normal(0, 1.7, n)


@pytest.mark.parametrize("init", [0.1, 1.0, 7.0])
def test_white_noise_closed_form_mle(init):
    x = _white()
    res = solve_mle(LikelihoodWorkspace(make_model("white_noise"), data=x), [init])
    assert res.converged
    assert res.theta_hat[0] == pytest.approx(np.sum(x**2) / x.size, rel=1e-12)
    assert res.score_norm_exit <= 1e-8


@pytest.mark.parametrize("model_id,theta,params", [
    ("white_noise", [2.0], {}), ("ar1_mild", [1.0, 1.0], {"alpha": 0.15})])
def test_newton_curvature_invariance(model_id, theta, params):
    model = make_model(model_id, **params)
    x = sample_paths(model, theta, 256, 1, seed=6).paths[0]
    ws = LikelihoodWorkspace(model, data=x)
    start = np.array(theta) * 1.05
    a = solve_mle(ws, start, NewtonOptions(curvature="hessian"))
    b = solve_mle(ws, start, NewtonOptions(curvature="fisher"))
    assert a.converged and b.converged
    assert np.allclose(a.theta_hat, b.theta_hat, rtol=0, atol=1e-8)


@given(st.floats(0.05, 20.0))
def test_white_noise_data_scaling(s):
    x = _white(3)
    ws = LikelihoodWorkspace(make_model("white_noise"), data=x)
    scaled = LikelihoodWorkspace(make_model("white_noise"), data=s * x)
    a = solve_mle(ws, [1.0]).theta_hat[0]
    b = solve_mle(scaled, [1.0]).theta_hat[0]
    assert b == pytest.approx(s**2 * a, rel=1e-12)


@pytest.mark.parametrize("s", [0.2, 3.0])
def test_ar1_data_scaling(s):
    model = make_model("ar1_mild", alpha=0.15)
    x = sample_paths(model, [1.0, 1.0], 256, 1, seed=7).paths[0]
    a = solve_mle(LikelihoodWorkspace(model, data=x), [1.0, 1.0])
    b = solve_mle(LikelihoodWorkspace(model, data=s * x), [1.0, s**2])
    assert a.converged and b.converged
    assert b.theta_hat[0] == pytest.approx(a.theta_hat[0], abs=1e-6)
    assert b.theta_hat[1] == pytest.approx(s**2 * a.theta_hat[1], rel=1e-6)


def test_result_record_and_invariants():
    model = make_model("ar1_mild", alpha=0.15)
    theta0 = np.array([1.0, 1.0])
    x = sample_paths(model, theta0, 256, 1, seed=8).paths[0]
    res = solve_mle(LikelihoodWorkspace(model, data=x), theta0, theta0=theta0)
    assert res.converged and res.score_norm_exit <= 1e-8
    rec = json.loads(json.dumps(res.to_record()))
    assert set(rec) >= {"theta_hat", "score_norm_exit", "iterations", "standardized_error",
                        "converged", "seed"}
    cov = res.asymptotic_cov
    assert np.allclose(cov, cov.T)
    np.linalg.cholesky(cov)
    R = model.rate_matrix(theta0, 256)
    assert np.allclose(res.standardized_error, np.linalg.solve(R, res.theta_hat - theta0))


def test_initial_value_outside_space():
    ws = LikelihoodWorkspace(make_model("white_noise"), data=_white())
    with pytest.raises(ParameterError):
        solve_mle(ws, [-1.0])


def test_boundary_collisions_are_reported_not_raised():
    model = make_model("mixed_fbm")
    theta = np.array([0.1, 1.0, 0.2, 1.0])
    outcomes = []
    for seed in range(4):
        x = sample_paths(model, theta, 64, 1, seed=seed).paths[0]
        res = solve_mle(LikelihoodWorkspace(model, data=x), theta, NewtonOptions(max_iter=30))
        outcomes.append(res)
        assert res.converged == (res.score_norm_exit <= 1e-8)
        if not res.converged:
            assert res.message
        assert model.contains(res.theta_hat)
    assert len(outcomes) == 4


# -- standardization -------------------------------------------------------------------

@given(st.lists(st.floats(-2, 2), min_size=4, max_size=4), st.integers(64, 4096))
def test_standardize_round_trip(a, n):
    model = make_model("mixed_fbm")
    theta0 = np.array([0.1, 1.0, 0.2, 1.0])
    R = model.rate_matrix(theta0, n)
    a = np.array(a)
    assert np.allclose(standardize(theta0 + R @ a, theta0, R), a, atol=1e-9)
    assert np.all(standardize(theta0, theta0, R) == 0)


def test_standardize_mixed_fbm_cross_term():
    model = make_model("mixed_fbm")
    s1, n = 1.7, 1024
    theta0 = np.array([0.1, s1, 0.2, 1.0])
    R = model.rate_matrix(theta0, n)
    d = 1e-3
    z = standardize(theta0 + [d, 0, 0, 0], theta0, R)
    root, logd = math.sqrt(1 / n), math.log(n)
    assert z[0] == pytest.approx(d / root)
    assert z[1] == pytest.approx(-2 * s1 * logd * d / root)


def test_standardize_diagonal_and_singular():
    R = np.diag([0.5, 0.25])
    assert np.allclose(standardize([2.0, 3.0], [1.0, 1.0], R), [2.0, 8.0])
    with pytest.raises(ContractError):
        standardize([1.0, 1.0], [0.0, 0.0], np.diag([1.0, 0.0]))


# -- least squares ---------------------------------------------------------------------

def test_ols_degenerate():
    with pytest.raises(DegenerateDataError):
        ols_mild_ar1(np.zeros(10), 0.3)
    with pytest.raises(DegenerateDataError):
        ols_mild_ar1([1.0], 0.3)


def test_ols_formula():
    x = np.array([1.0, 0.5, -0.2, 0.3])
    phi = (0.5 + -0.1 + -0.06) / (1 + 0.25 + 0.04)
    assert ols_mild_ar1(x, 0.2) == pytest.approx((1 - phi) / 0.2)


def test_ols_distribution():
    model = make_model("ar1_mild", alpha=0.15)
    n, reps = 1024, 200
    x = sample_paths(model, [1.0, 1.0], n, reps, seed=10).paths
    a = model.stage(n).a
    z = math.sqrt(n * a) * (ols_mild_ar1(x, a) - 1.0)
    assert abs(z.mean()) <= 4 * z.std(ddof=1) / math.sqrt(reps) + 0.2
    assert z.var(ddof=1) == pytest.approx(2.0, rel=0.3)


# -- estimator objects -------------------------------------------------------------------

def test_sklearn_estimators():
    model = make_model("ar1_mild", alpha=0.15)
    X = sample_paths(model, [1.0, 1.0], 128, 4, seed=11).paths
    est = GaussianArrayMLE(model="ar1_mild", model_params={"alpha": 0.15})
    assert clone(est).get_params() == est.get_params()
    est.fit(X)
    assert est.converged_ and est.theta_.shape == (2,)
    assert est.score_samples(X).shape == (4,)
    assert est.score(X) == pytest.approx(np.mean(est.score_samples(X)))
    ols = MildAR1OLS(alpha=0.15).fit(X)
    assert ols.c_ > 0
    assert ols.predict(X).shape == X.shape
    with pytest.raises(ValueError):
        GaussianArrayMLE(model="mixed_fbm").fit(X)
    wn = GaussianArrayMLE(model="white_noise").fit(X)
    assert wn.theta_[0] == pytest.approx(np.mean(X**2), rel=1e-12)
