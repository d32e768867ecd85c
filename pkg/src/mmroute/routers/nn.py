"""Small numpy networks with hand-written backprop, and the routers built on them.

Everything runs in float64 so analytic gradients can be checked against
central finite differences.
"""

from __future__ import annotations

import math

import numpy as np

from .base import Prediction, Router, nan_col_means


class TrainingDivergence(FloatingPointError):
    pass


class Dense:
    """Stack of affine layers with ReLU between them (none after the last)."""

    def __init__(self, sizes, rng: np.random.Generator):
        self.sizes = [int(s) for s in sizes]
        self.params = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            self.params.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
            self.params.append(rng.uniform(-bound, bound, fan_out))

    def forward(self, X):
        acts = [X]
        h = X
        n_layers = len(self.params) // 2
        for layer in range(n_layers):
            W, b = self.params[2 * layer], self.params[2 * layer + 1]
            h = h @ W + b
            if layer < n_layers - 1:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return h, acts

    def backward(self, acts, dout):
        """Gradients for every parameter given dL/d(output)."""
        grads = [None] * len(self.params)
        g = dout
        n_layers = len(self.params) // 2
        for layer in reversed(range(n_layers)):
            grads[2 * layer] = acts[layer].T @ g
            grads[2 * layer + 1] = g.sum(axis=0)
            if layer > 0:
                g = (g @ self.params[2 * layer].T) * (acts[layer] > 0)
        return grads


def masked_mse(pred, Y, M):
    """Mean squared error over observed entries and its gradient w.r.t. pred."""
    n_obs = M.sum()
    if n_obs == 0:
        return 0.0, np.zeros_like(pred)
    diff = np.where(M, pred - np.where(M, Y, 0.0), 0.0)
    return float((diff ** 2).sum() / n_obs), 2.0 * diff / n_obs


class RegressionNet:
    """Dense net mapping features straight to K outputs."""

    def __init__(self, d, hidden, K, rng):
        self.body = Dense([d, *hidden, K], rng)

    @property
    def params(self):
        return self.body.params

    def predict(self, X):
        return self.body.forward(X)[0]

    def loss_grad(self, X, Y, M):
        out, acts = self.body.forward(X)
        loss, dout = masked_mse(out, Y, M)
        return loss, self.body.backward(acts, dout)


class FactorNet:
    """Feature net to an r-dim latent, scored against per-model vectors.

    ``pred[i, j] = latent_i . w_j + b_j``.
    """

    def __init__(self, d, hidden, rank, K, rng):
        self.body = Dense([d, hidden, rank], rng)
        bound = 1.0 / math.sqrt(rank)
        self.W = rng.uniform(-bound, bound, (K, rank))
        self.b = np.zeros(K)

    @property
    def params(self):
        return self.body.params + [self.W, self.b]

    def predict(self, X):
        lat = self.body.forward(X)[0]
        return lat @ self.W.T + self.b

    def loss_grad(self, X, Y, M):
        lat, acts = self.body.forward(X)
        pred = lat @ self.W.T + self.b
        loss, dout = masked_mse(pred, Y, M)
        gW = dout.T @ lat
        gb = dout.sum(axis=0)
        grads = self.body.backward(acts, dout @ self.W)
        return loss, grads + [gW, gb]


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train(net, X, Y, *, epochs, batch_size, lr, rng, frozen=()):
    """Mini-batch Adam on observed-entry MSE; returns per-epoch mean losses.

    ``frozen`` lists output columns whose model parameters stay fixed (the
    FactorNet head rows for models with no observed entries get zero
    gradients anyway; freezing makes it explicit).
    """
    M = ~np.isnan(Y)
    n = len(X)
    opt = Adam(net.params, lr=lr)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for s in range(0, n, batch_size):
            idx = order[s:s + batch_size]
            loss, grads = net.loss_grad(X[idx], Y[idx], M[idx])
            if not math.isfinite(loss):
                raise TrainingDivergence(
                    f"loss became {loss} at epoch {epoch}, batch starting {s}; "
                    f"max |param| = {max(float(np.abs(p).max()) for p in net.params):.3g}")
            for j in frozen:
                grads[-2][j] = 0.0
                grads[-1][j] = 0.0
            opt.step(grads)
            total += loss * len(idx)
            seen += len(idx)
        history.append(total / seen)
    return history


def flat_params(net) -> np.ndarray:
    return np.concatenate([p.ravel() for p in net.params])


def set_flat_params(net, flat) -> None:
    off = 0
    for p in net.params:
        p[...] = flat[off:off + p.size].reshape(p.shape)
        off += p.size


class MLPRouter(Router):
    """Two independent Linear-ReLU-Linear-ReLU-Linear regressors."""
    kind = "mlp"

    def _build(self, d, K, rng):
        return RegressionNet(d, self.config.hidden_dims, K, rng)

    def fit(self, X, table, rows, X_val=None, val_rows=None):
        X, U, C = self._check_table(X, table, rows)
        cfg = self.config
        if len(cfg.hidden_dims) != 2:
            raise ValueError("mlp: hidden_dims must list exactly two widths")
        if cfg.epochs < 1:
            raise ValueError("mlp: epochs must be >= 1")
        rng = np.random.default_rng(cfg.seed)
        self.nets = {}
        self.history = {}
        for target, Y in (("utility", U), ("cost", C)):
            net = self._build(X.shape[1], table.K, rng)
            _init_output_bias(net, Y)
            self.history[target] = train(net, X, Y, epochs=cfg.epochs, batch_size=cfg.batch_size,
                                         lr=cfg.learn_rate, rng=rng, frozen=self._frozen(Y))
            self.nets[target] = net
        return self

    def _frozen(self, Y):
        return ()

    def predict(self, X, rows=None) -> Prediction:
        X = self._check_dim(X)
        return Prediction(self.nets["utility"].predict(X), self.nets["cost"].predict(X))

    def state(self):
        out = {}
        for target, net in self.nets.items():
            for i, p in enumerate(net.params):
                out[f"{target}.{i}"] = p
        return out

    def load_state(self, meta, arrays):
        self._K, self._dim = meta["K"], meta["dim"]
        rng = np.random.default_rng(0)
        self.nets = {}
        for target in ("utility", "cost"):
            net = self._build(self._dim, self._K, rng)
            for i, p in enumerate(net.params):
                p[...] = arrays[f"{target}.{i}"]
            self.nets[target] = net


class MLPMFRouter(MLPRouter):
    """Latent-factor router: feature net -> r-dim latent dotted with
    per-model vectors plus bias, one network per target."""
    kind = "mlp_mf"

    def _build(self, d, K, rng):
        return FactorNet(d, self.config.mf_hidden, self.config.rank, K, rng)

    def fit(self, X, table, rows, X_val=None, val_rows=None):
        if self.config.rank < 1:
            raise ValueError("mlp_mf: rank must be >= 1")
        X, U, C = self._check_table(X, table, rows)
        if not (~np.isnan(U)).any():
            raise ValueError("mlp_mf: no observed entries")
        cfg = self.config
        if cfg.epochs < 1:
            raise ValueError("mlp_mf: epochs must be >= 1")
        rng = np.random.default_rng(cfg.seed)
        self.nets, self.history = {}, {}
        for target, Y in (("utility", U), ("cost", C)):
            net = self._build(X.shape[1], table.K, rng)
            _init_output_bias(net, Y)
            frozen = self._frozen(Y)
            if frozen:
                self.diagnostics.append(
                    f"{target}: models {list(frozen)} have no observed entries; head frozen at init")
            self.history[target] = train(net, X, Y, epochs=cfg.epochs, batch_size=cfg.batch_size,
                                         lr=cfg.learn_rate, rng=rng, frozen=frozen)
            self.nets[target] = net
        return self

    def _frozen(self, Y):
        return tuple(int(j) for j in np.flatnonzero(np.isnan(Y).all(axis=0)))


def _init_output_bias(net, Y):
    # start from column means; unobserved columns stay at their init value
    b = net.params[-1]
    means = nan_col_means(Y)
    ok = ~np.isnan(means)
    b[ok] = means[ok]
