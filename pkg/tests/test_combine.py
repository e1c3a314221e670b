import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import minimize

from retcast.combine import (CombineError, EnsembleWeights, dmspe_weights, ensemble_predict, eq17_objective,
                             equal_weights, optimize_weights, prediction_correlation, project_affine,
                             project_simplex, solve_weights)

vec = arrays(float, st.integers(1, 12), elements=st.floats(-1e3, 1e3))


@given(vec)
def test_simplex_projection_feasible_and_optimal(v):
    p = project_simplex(v)
    assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-9
    rng = np.random.default_rng(0)
    for _ in range(10):
        q = rng.dirichlet(np.ones(len(v)))
        # variational inequality characterizing the Euclidean projection
        assert (v - p) @ (q - p) <= 1e-7 * (1 + np.abs(v).max())


@given(vec)
def test_affine_projection(v):
    p = project_affine(v)
    assert abs(p.sum() - 1) < 1e-9
    assert np.allclose(p - v, (p - v)[0])


def test_dmspe_direct_summation():
    rng = np.random.default_rng(0)
    e = rng.random((4, 30))
    theta = 0.9
    phi = np.zeros(4)
    for m in range(4):
        for t in range(30):
            phi[m] += theta ** (30 - (t + 1)) * e[m, t]
    w_ref = (1 / phi) / np.sum(1 / phi)
    assert np.allclose(dmspe_weights(e, theta).weights, w_ref, atol=1e-12, rtol=0)
    assert np.allclose(dmspe_weights(e, 1.0).weights, (1 / e.sum(1)) / np.sum(1 / e.sum(1)), atol=1e-12)


def test_dmspe_perfect_model_takes_all():
    e = np.array([[0.0, 0.0], [1.0, 2.0], [0.0, 0.0]])
    assert np.allclose(dmspe_weights(e).weights, [0.5, 0, 0.5])
    with pytest.raises(CombineError):
        dmspe_weights(e, 1.5)


def two_model_closed_form(p1, p2, r):
    e1, e2 = r - p1, r - p2
    d = e1 - e2
    return float(np.clip(-(e2 @ d) / (d @ d), 0, 1))


@given(st.integers(0, 10_000))
def test_two_model_lambda_zero_closed_form(seed):
    rng = np.random.default_rng(seed)
    r = rng.normal(size=50)
    P = np.vstack([r + rng.normal(size=50) * rng.uniform(0.2, 2), rng.normal(size=50) * rng.uniform(0.2, 2)])
    w = solve_weights(P, r, 0.0)
    assert abs(w[0] - two_model_closed_form(P[0], P[1], r)) < 1e-8


@given(st.integers(0, 10_000), st.sampled_from([0.0, 0.01, 1.0, 10.0]))
def test_solver_matches_generic_qp(seed, lam):
    rng = np.random.default_rng(seed)
    r = rng.normal(size=80)
    base = 0.4 * r + rng.normal(size=80)
    P = np.vstack([base + 0.3 * rng.normal(size=80) for _ in range(5)])
    w = solve_weights(P, r, lam)
    rho = prediction_correlation(P)
    f = lambda v: eq17_objective(v, P, r, lam, rho)
    ref = minimize(f, np.full(5, 0.2), method="SLSQP", bounds=[(0, 1)] * 5,
                   constraints=[{"type": "eq", "fun": lambda v: v.sum() - 1}],
                   options={"ftol": 1e-14, "maxiter": 500})
    assert np.all(w >= 0) and abs(w.sum() - 1) < 1e-12
    assert f(w) <= ref.fun + 1e-8 * (1 + abs(ref.fun))


def test_affine_weights_closed_form():
    rng = np.random.default_rng(1)
    r = rng.normal(size=60)
    u = rng.normal(size=60)
    P = np.vstack([r + u, r + 2 * u + 0.1 * rng.normal(size=60)])
    w = solve_weights(P, r, 0.0, nonneg=False)
    E = (r - P).T
    A = E.T @ E
    ones = np.ones(2)
    ref = np.linalg.solve(A, ones) / (ones @ np.linalg.solve(A, ones))
    assert np.allclose(w, ref, atol=1e-10)
    assert w.min() < 0


@given(st.integers(0, 1000))
def test_all_methods_on_simplex(seed):
    rng = np.random.default_rng(seed)
    r = rng.normal(size=40)
    P = np.vstack([r * rng.uniform(0, 1) + rng.normal(size=40) for _ in range(4)])
    for ew in (equal_weights(4), dmspe_weights((r - P) ** 2, 0.9), optimize_weights(P, r, lam=0.0),
               optimize_weights(P, r, lam=None, folds=4)):
        assert np.all(ew.weights >= 0) and abs(ew.weights.sum() - 1) < 1e-9


def test_cv_selects_from_grid_and_labels_method():
    rng = np.random.default_rng(2)
    r = rng.normal(size=100)
    P = np.vstack([r + rng.normal(size=100), r + rng.normal(size=100)])
    ew = optimize_weights(P, r)
    assert ew.method == "wp" and ew.lam in ew.cv_mse
    assert ew.cv_mse[ew.lam] == min(ew.cv_mse.values())
    assert optimize_weights(P, r, lam=0.0).method == "op"


def test_independent_model_weight_grows_with_penalty():
    rng = np.random.default_rng(3)
    n = 400
    r = rng.normal(size=n)
    common = 0.6 * r + rng.normal(size=n)
    P = np.vstack([common + 0.05 * rng.normal(size=n), common + 0.05 * rng.normal(size=n),
                   0.3 * r + rng.normal(size=n)])
    ws = [solve_weights(P, r, lam)[2] for lam in (0.0, 10.0, 100.0, 1000.0)]
    assert all(b > a for a, b in zip(ws, ws[1:]))


def test_constant_series_warns():
    P = np.vstack([np.ones(10), np.arange(10.0)])
    with pytest.warns(UserWarning, match="constant prediction"):
        rho = prediction_correlation(P)
    assert rho[0, 1] == 0 and rho[1, 1] == 1


def test_weight_validation_and_prediction():
    with pytest.raises(CombineError):
        EnsembleWeights(np.array([0.5, 0.6]), "x")
    with pytest.raises(CombineError):
        ensemble_predict(np.array([1.0]), np.zeros((2, 3)))
    assert np.allclose(ensemble_predict(equal_weights(2), np.array([[1.0, 2], [3, 4]])), [2, 3])
    with pytest.raises(CombineError, match="validation days"):
        optimize_weights(np.zeros((2, 5)), np.zeros(5))
