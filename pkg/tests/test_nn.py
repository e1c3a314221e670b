import numpy as np
import pytest

from retcast.models import Design, ModelError
from retcast.models.nn import Net, fit_mlp, loss_and_grads


def flat(ps):
    return np.concatenate([p.ravel() for p in ps])


def numeric_grad(net, X, y, l1):
    out = []
    for p in net.params():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + 1e-6
            up, _ = loss_and_grads(net, X, y, l1)
            p[i] = old - 1e-6
            dn, _ = loss_and_grads(net, X, y, l1)
            p[i] = old
            g[i] = (up - dn) / 2e-6
        out.append(g)
    return flat(out)


@pytest.mark.parametrize("batch_norm", [False, True])
def test_backprop_matches_central_differences(batch_norm):
    rng = np.random.default_rng(0)
    net = Net.init(rng, 3, (4, 3), batch_norm)
    for b in net.b:
        b += 0.1 * rng.normal(size=b.shape)
    X, y = rng.normal(size=(7, 3)), rng.normal(size=7)
    l1 = 1e-3
    _, grads = loss_and_grads(net, X, y, l1)
    a, n = flat(grads), numeric_grad(net, X, y, l1)
    assert np.linalg.norm(a - n) / max(np.linalg.norm(n), 1e-12) < 1e-4


def test_loss_does_not_touch_running_stats():
    rng = np.random.default_rng(1)
    net = Net.init(rng, 2, (3,), True)
    before = [m.copy() for m in net.run_mean]
    loss_and_grads(net, rng.normal(size=(5, 2)), rng.normal(size=5))
    assert all(np.array_equal(a, b) for a, b in zip(before, net.run_mean))


def mlp_data(n=300, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 4))
    y = np.sin(2 * X[:, 0]) + X[:, 1] * X[:, 2] + 0.1 * rng.normal(size=n)
    return Design(X[:200], y[:200]), Design(X[200:], y[200:])


def test_mlp_learns_nonlinear_signal():
    tr, va = mlp_data()
    fit = fit_mlp(tr, va, 2, widths=(16, 8), lr=0.01, l1=0.0, n_seeds=3, max_epochs=200, patience=20)
    pred = fit.predict(va.X)
    assert np.mean((pred - va.y) ** 2) < 0.6 * np.var(va.y)
    assert fit.complexity == 2 and len(fit.members) == 3


def test_mlp_deterministic_and_best_epoch_snapshot():
    tr, va = mlp_data(seed=1)
    a = fit_mlp(tr, va, 1, widths=(8,), n_seeds=2, max_epochs=30, seed=3)
    b = fit_mlp(tr, va, 1, widths=(8,), n_seeds=2, max_epochs=30, seed=3)
    assert np.array_equal(a.predict(va.X), b.predict(va.X))
    for curve, best in zip(a.val_curves, a.best_epochs):
        assert curve[best - 1] == min(curve)


def test_early_stopping_patience():
    tr, va = mlp_data(seed=2)
    fit = fit_mlp(tr, va, 1, widths=(8,), n_seeds=1, lr=0.1, max_epochs=500, patience=3)
    ep, best = fit.epochs_run[0], fit.best_epochs[0]
    assert ep == 500 or ep - best == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergent_learning_rate_recovers_or_drops():
    tr, va = mlp_data(seed=3)
    bad = Design(tr.X, tr.y * 1e200)
    with pytest.raises(ModelError, match="diverged"):
        fit_mlp(bad, Design(va.X, va.y * 1e200), 1, widths=(4,), n_seeds=1, lr=1e3, max_epochs=5,
                batch_norm=False)


def test_invalid_architectures():
    tr, va = mlp_data()
    with pytest.raises(ModelError):
        fit_mlp(tr, va, 3, widths=(8, 4))
    with pytest.raises(ModelError):
        fit_mlp(tr, va, 2, widths=(4, 8))
