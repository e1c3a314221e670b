"""ReLU feed-forward networks with batch norm, L1 weight penalty, Adam and early stopping."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .base import Design, FittedModel, ModelError, Scaler

log = logging.getLogger(__name__)

DESK_WIDTHS = (64, 32, 16, 8, 4)
PAPER_WIDTHS = (1024, 512, 256, 128, 64)
L1_GRID = (1e-5, 1e-4, 1e-3)
LR_GRID = (0.001, 0.01, 0.1)
BN_EPS = 1e-3
BN_MOMENTUM = 0.9


@dataclass
class Net:
    """Parameters of one network; hidden layers optionally batch-normalized."""

    W: list
    b: list
    gamma: list
    beta: list
    run_mean: list
    run_var: list
    batch_norm: bool

    @classmethod
    def init(cls, rng, n_in, widths, batch_norm=True):
        sizes = [n_in] + list(widths) + [1]
        W, b = [], []
        for a, c in zip(sizes[:-1], sizes[1:]):
            lim = math.sqrt(6.0 / (a + c))
            W.append(rng.uniform(-lim, lim, (a, c)))
            b.append(np.zeros(c))
        hid = list(widths)
        return cls(W, b, [np.ones(w) for w in hid], [np.zeros(w) for w in hid],
                   [np.zeros(w) for w in hid], [np.ones(w) for w in hid], batch_norm)

    def params(self):
        ps = self.W + self.b
        if self.batch_norm:
            ps = ps + self.gamma + self.beta
        return ps

    def copy(self):
        cp = lambda xs: [x.copy() for x in xs]
        return Net(cp(self.W), cp(self.b), cp(self.gamma), cp(self.beta), cp(self.run_mean),
                   cp(self.run_var), self.batch_norm)

    def forward(self, X, train=False, dropout=0.0, rng=None):
        a = X
        cache = []
        n_hidden = len(self.W) - 1
        for d in range(n_hidden):
            z = a @ self.W[d] + self.b[d]
            entry = {"a_in": a}
            if self.batch_norm:
                if train:
                    mu = z.mean(0)
                    var = z.var(0)
                    m = BN_MOMENTUM
                    self.run_mean[d] = m * self.run_mean[d] + (1 - m) * mu
                    self.run_var[d] = m * self.run_var[d] + (1 - m) * var
                else:
                    mu, var = self.run_mean[d], self.run_var[d]
                inv = 1.0 / np.sqrt(var + BN_EPS)
                xhat = (z - mu) * inv
                entry.update(xhat=xhat, inv=inv)
                z = xhat * self.gamma[d] + self.beta[d]
            entry["pre"] = z
            a = np.maximum(z, 0.0)
            if train and dropout > 0:
                keep = (rng.random(a.shape) >= dropout) / (1 - dropout)
                entry["drop"] = keep
                a = a * keep
            cache.append(entry)
        out = a @ self.W[-1] + self.b[-1]
        cache.append({"a_in": a})
        return out[:, 0], cache

    def predict(self, X):
        return self.forward(X, train=False)[0]


def loss_and_grads(net: Net, X, y, l1=0.0, dropout=0.0, rng=None, update_stats=False):
    """Batch MSE plus ``l1 * sum|W|``; gradients ordered as ``net.params()``."""
    saved = (net.run_mean, net.run_var)
    if not update_stats:
        net.run_mean = [m.copy() for m in net.run_mean]
        net.run_var = [v.copy() for v in net.run_var]
    yhat, cache = net.forward(X, train=True, dropout=dropout, rng=rng)
    if not update_stats:
        net.run_mean, net.run_var = saved
    n = len(y)
    resid = yhat - y
    loss = float(np.mean(resid ** 2)) + l1 * sum(float(np.abs(W).sum()) for W in net.W)
    nl = len(net.W)
    gW = [None] * nl
    gb = [None] * nl
    gg = [None] * (nl - 1)
    gbe = [None] * (nl - 1)
    delta = (2.0 / n) * resid[:, None]
    for d in range(nl - 1, -1, -1):
        a_in = cache[d]["a_in"] if d < nl - 1 else cache[-1]["a_in"]
        gW[d] = a_in.T @ delta + l1 * np.sign(net.W[d])
        gb[d] = delta.sum(0)
        if d == 0:
            break
        da = delta @ net.W[d].T
        e = cache[d - 1]
        if "drop" in e:
            da = da * e["drop"]
        dz = da * (e["pre"] > 0)
        if net.batch_norm:
            gg[d - 1] = (dz * e["xhat"]).sum(0)
            gbe[d - 1] = dz.sum(0)
            dxhat = dz * net.gamma[d - 1]
            m = dz.shape[0]
            dz = (e["inv"] / m) * (m * dxhat - dxhat.sum(0) - e["xhat"] * (dxhat * e["xhat"]).sum(0))
        delta = dz
    grads = gW + gb
    if net.batch_norm:
        grads = grads + gg + gbe
    return loss, grads


class Adam:
    def __init__(self, params, lr, b1=0.9, b2=0.999, eps=1e-7):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass(frozen=True, eq=False)
class MlpFit(FittedModel):
    members: tuple = ()
    scaler: Scaler = None
    widths: tuple = ()
    epochs_run: tuple = ()
    best_epochs: tuple = ()
    val_curves: tuple = ()
    seeds: tuple = ()
    n_features: int = 0

    def predict(self, X):
        X = self._check_width(X, self.n_features)
        Z = self.scaler.transform(X)
        return np.mean([m.predict(Z) for m in self.members], axis=0)

    @property
    def complexity(self):
        return len(self.widths)


def _train_member(net, Xt, yt, Xv, yv, lr, l1, max_epochs, patience, batch, rng, dropout):
    opt = Adam(net.params(), lr)
    best = math.inf
    best_net = net.copy()
    best_ep = 0
    curve = []
    n = len(yt)
    ep = 0
    for ep in range(1, max_epochs + 1):
        perm = rng.permutation(n)
        for s in range(0, n, batch):
            idx = perm[s:s + batch]
            if len(idx) < 2 and net.batch_norm:
                continue
            loss, grads = loss_and_grads(net, Xt[idx], yt[idx], l1, dropout, rng, update_stats=True)
            if not np.isfinite(loss):
                return None
            opt.step(net.params(), grads)
        vl = float(np.mean((net.predict(Xv) - yv) ** 2))
        if not np.isfinite(vl):
            return None
        curve.append(vl)
        if vl < best:
            best, best_ep, best_net = vl, ep, net.copy()
        elif ep - best_ep >= patience:
            break
    return best_net, ep, best_ep, tuple(curve)


def fit_mlp(train: Design, val: Design, depth: int, widths=DESK_WIDTHS, l1: float = 1e-4,
            lr: float = 0.01, max_epochs: int = 100, patience: int = 5, batch: int | None = None,
            n_seeds: int = 10, seed: int = 0, batch_norm: bool = True, dropout: float = 0.0,
            member_seeds=None) -> MlpFit:
    """Seed-ensembled MLP with ``depth`` hidden layers; returns best-validation snapshots."""
    if not 1 <= depth <= len(widths):
        raise ModelError(f"depth must be in 1..{len(widths)}")
    w = tuple(int(x) for x in widths[:depth])
    if any(a <= b for a, b in zip(w[:-1], w[1:])):
        raise ModelError("hidden widths must be strictly decreasing")
    if val.n == 0:
        raise ModelError("validation set is empty")
    scaler = Scaler.fit(train.X)
    Xt, Xv = scaler.transform(train.X), scaler.transform(val.X)
    batch = batch or math.ceil(train.n / 50)
    if member_seeds is None:
        member_seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n_seeds)]
    members, eps, bests, curves, used = [], [], [], [], []
    for ms in member_seeds:
        res = None
        for attempt_lr in (lr, lr / 10):
            rng = np.random.default_rng(ms)
            net = Net.init(rng, Xt.shape[1], w, batch_norm)
            res = _train_member(net, Xt, train.y, Xv, val.y, attempt_lr, l1, max_epochs, patience,
                                batch, rng, dropout)
            if res is not None:
                break
            log.warning("member %d diverged at lr=%g", ms, attempt_lr)
        if res is None:
            log.warning("member %d dropped after divergence", ms)
            continue
        net, ep, best_ep, curve = res
        members.append(net)
        eps.append(ep)
        bests.append(best_ep)
        curves.append(curve)
        used.append(ms)
    if not members:
        raise ModelError("all ensemble members diverged")
    hp = {"depth": depth, "l1": l1, "lr": lr, "batch": batch, "batch_norm": batch_norm,
          "dropout": dropout}
    return MlpFit(f"nn{depth}", hp, members=tuple(members), scaler=scaler, widths=w,
                  epochs_run=tuple(eps), best_epochs=tuple(bests), val_curves=tuple(curves),
                  seeds=tuple(used), n_features=train.X.shape[1])


def predict_mlp(fit: MlpFit, X) -> np.ndarray:
    return fit.predict(X)
