import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from retcast.dataset import DataError
from retcast.simgen import DgpConfig, feature_names, gen_seasonality, simulate_dgp, write_truth


def test_shapes_and_names():
    panel, truth = simulate_dgp(DgpConfig(model=1, T=300, P_C=5, seed=1))
    assert panel.features.shape == (300, 2 + 2 + 5 + 5)
    assert panel.feature_names[:4] == ("p", "s", "x1", "x2")
    assert panel.feature_names[-1] == "x1*C5"
    assert truth.signal.shape == (299,)
    assert truth.active == ("p", "s", "C1", "C2", "x1*C3")


def test_same_seed_same_panel():
    a, _ = simulate_dgp(DgpConfig(T=200, P_C=4, seed=9))
    b, _ = simulate_dgp(DgpConfig(T=200, P_C=4, seed=9))
    c, _ = simulate_dgp(DgpConfig(T=200, P_C=4, seed=10))
    assert np.array_equal(a.prices, b.prices) and np.array_equal(a.features, b.features)
    assert not np.array_equal(a.prices, c.prices)


def test_seasonality_formula():
    s = gen_seasonality(14, 0.0, 1.0, 0.0)
    t = np.arange(1, 15)
    assert np.allclose(s, np.abs(np.sin(np.pi * t / 7)))
    assert np.isclose(s[6], 0, atol=1e-12)


@pytest.mark.parametrize("model", [1, 2])
def test_price_recursion_matches_signal(model):
    panel, truth = simulate_dgp(DgpConfig(model=model, T=400, P_C=6, seed=3))
    X = panel.features
    th = truth.theta
    p, s, x1 = X[:-1, 0], X[:-1, 1], X[:-1, 2]
    C = X[:-1, 4:10]
    if model == 1:
        f = th[0] * p + th[1] * s + th[2] * C[:, 0] + th[3] * C[:, 1] + th[4] * C[:, 2] * x1
    else:
        f = th[0] * p + th[1] * s + th[2] * C[:, 0] ** 2 + th[3] * C[:, 0] * C[:, 1] + th[4] * np.sign(C[:, 2] * x1)
    assert np.allclose(f, truth.signal, rtol=0, atol=1e-12)


def test_characteristics_block_standardized():
    panel, _ = simulate_dgp(DgpConfig(T=300, P_C=4, seed=2))
    C = panel.features[:, 4:8]
    for m in panel.months():
        blk = C[panel.month_id == m]
        assert np.allclose(blk.mean(0), 0, atol=1e-12)
        assert np.allclose(blk.std(0, ddof=1), 1)


def test_return_variance_near_calibration():
    # calibrated noise is ~3.57% daily; percent variance should sit in the low teens
    v = [np.var(100 * simulate_dgp(DgpConfig(T=3000, P_C=3, seed=k))[0].returns) for k in range(3)]
    assert 11 < np.mean(v) < 17


def test_student_t_noise_unit_scaled():
    panel, _ = simulate_dgp(DgpConfig(T=3000, P_C=3, seed=4, eps_dof=5.0))
    assert 11 < np.var(100 * panel.returns) < 18


def test_invalid_configs():
    with pytest.raises(DataError):
        simulate_dgp(DgpConfig(model=3))
    with pytest.raises(DataError):
        simulate_dgp(DgpConfig(T=10))
    with pytest.raises(DataError):
        simulate_dgp(DgpConfig(eps_dof=2.0))


def test_explosion_detected():
    with pytest.raises(DataError, match="price explosion"):
        simulate_dgp(DgpConfig(T=400, P_C=3, theta1=(0.5, 0, 0, 0, 0)))


def test_truth_json(tmp_path):
    _, truth = simulate_dgp(DgpConfig(T=100, P_C=3))
    d = json.loads(write_truth(truth, tmp_path / "t.json").read_text())
    assert d["active"] == list(truth.active)
    assert len(d["signal"]) == 99


@given(st.integers(3, 12), st.integers(1, 4))
def test_feature_name_count(pc, px):
    names = feature_names(pc, px)
    assert len(names) == 2 + px + 2 * pc
    assert len(set(names)) == len(names)
