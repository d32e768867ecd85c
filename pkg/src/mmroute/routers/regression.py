"""Linear and low-rank regression routers."""

from __future__ import annotations

import warnings

import numpy as np

from .base import Prediction, Router

CONDITIONING_RIDGE = 1e-8


def ridge_fit(X: np.ndarray, Y: np.ndarray, penalty: float):
    """Multi-output ridge regression with an unpenalized intercept.

    NaN targets are dropped per output column.  Columns with no observed
    target predict zero.  Returns ``(coef d x m, intercept m)``.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if len(X) < 1:
        raise ValueError("ridge regression needs at least one sample")
    d, m = X.shape[1], Y.shape[1]
    coef = np.zeros((d, m))
    icpt = np.zeros(m)
    obs = ~np.isnan(Y)
    # group columns by observation pattern so full tables need one solve
    patterns: dict[bytes, list[int]] = {}
    for j in range(m):
        patterns.setdefault(obs[:, j].tobytes(), []).append(j)
    for cols in patterns.values():
        rows = obs[:, cols[0]]
        if not rows.any():
            continue
        Xs, Ys = X[rows], Y[np.ix_(rows, cols)]
        xm, ym = Xs.mean(axis=0), Ys.mean(axis=0)
        Xc, Yc = Xs - xm, Ys - ym
        if penalty > 0:
            A = Xc.T @ Xc + penalty * np.eye(d)
            B = np.linalg.solve(A, Xc.T @ Yc)
        else:
            B = np.linalg.lstsq(Xc, Yc, rcond=None)[0]
        coef[:, cols] = B
        icpt[cols] = ym - xm @ B
    return coef, icpt


class LinearRouter(Router):
    """Two independent least-squares maps: features -> utilities, -> costs."""
    kind = "linear"

    def fit(self, X, table, rows, X_val=None, val_rows=None):
        X, U, C = self._check_table(X, table, rows)
        self.Wu, self.bu = ridge_fit(X, U, CONDITIONING_RIDGE)
        self.Wc, self.bc = ridge_fit(X, C, CONDITIONING_RIDGE)
        return self

    def predict(self, X, rows=None) -> Prediction:
        X = self._check_dim(X)
        return Prediction(X @ self.Wu + self.bu, X @ self.Wc + self.bc)

    def state(self):
        return {"Wu": self.Wu, "bu": self.bu, "Wc": self.Wc, "bc": self.bc}

    def load_state(self, meta, arrays):
        self._K, self._dim = meta["K"], meta["dim"]
        for k in ("Wu", "bu", "Wc", "bc"):
            setattr(self, k, arrays[k])


def truncated_svd_basis(X: np.ndarray, rank: int):
    """Top right singular vectors of the (uncentered) feature matrix.

    Returns ``(V d x r, singular values, numerical rank)``.  ``r`` is
    capped at the numerical rank.
    """
    _, s, vt = np.linalg.svd(np.asarray(X, dtype=np.float64), full_matrices=False)
    tol = s.max(initial=0.0) * max(X.shape) * np.finfo(np.float64).eps
    numrank = int((s > tol).sum())
    return vt[: min(rank, numrank)].T, s, numrank


class LinearMFRouter(Router):
    """Shared rank-r SVD projection followed by two ridge regressions."""
    kind = "linear_mf"

    def fit(self, X, table, rows, X_val=None, val_rows=None):
        X, U, C = self._check_table(X, table, rows)
        r = self.config.rank
        if r < 1:
            raise ValueError("linear_mf: rank must be >= 1")
        if r > min(X.shape):
            raise ValueError(f"linear_mf: rank {r} exceeds min(n_train, d) = {min(X.shape)}")
        self.V, _, numrank = truncated_svd_basis(X, r)
        if numrank < r:
            msg = f"linear_mf: rank reduced from {r} to numerical rank {numrank}"
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
            self.diagnostics.append(msg)
        Z = X @ self.V
        mu = self.config.ridge_penalty
        self.Wu, self.bu = ridge_fit(Z, U, mu)
        self.Wc, self.bc = ridge_fit(Z, C, mu)
        return self

    def project(self, X) -> np.ndarray:
        return self._check_dim(X) @ self.V

    def predict(self, X, rows=None) -> Prediction:
        Z = self.project(X)
        return Prediction(Z @ self.Wu + self.bu, Z @ self.Wc + self.bc)

    def state(self):
        return {"V": self.V, "Wu": self.Wu, "bu": self.bu, "Wc": self.Wc, "bc": self.bc}

    def load_state(self, meta, arrays):
        self._K, self._dim = meta["K"], meta["dim"]
        for k in ("V", "Wu", "bu", "Wc", "bc"):
            setattr(self, k, arrays[k])
