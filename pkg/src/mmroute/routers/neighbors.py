"""Non-parametric routers: cluster dispatch and nearest-neighbor averaging."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .base import Prediction, Router, nan_col_means

MAX_ITER = 300
SHIFT_TOL = 1e-6


def _sq_dists(X, C):
    d = (X * X).sum(1)[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans_pp(X: np.ndarray, n_clusters: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: each new centre sampled proportional to D(x)^2."""
    n = len(X)
    centers = [X[rng.integers(n)]]
    closest = _sq_dists(X, centers[0][None, :])[:, 0]
    for _ in range(1, n_clusters):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)  # every point already sits on a centre
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(X[idx])
        closest = np.minimum(closest, _sq_dists(X, X[idx][None, :])[:, 0])
    return np.array(centers)


@dataclass
class KMeansResult:
    centers: np.ndarray
    labels: np.ndarray
    inertia: float
    n_iter: int
    dropped: int = 0


def lloyd(X: np.ndarray, centers: np.ndarray, max_iter: int = MAX_ITER,
          tol: float = SHIFT_TOL) -> KMeansResult:
    """Lloyd iterations until the largest centre move is below ``tol``.

    An empty cluster is re-seeded once at the point farthest from its
    assigned centre; if it empties again it is dropped with a warning.
    """
    centers = centers.copy()
    reseeded: set[int] = set()
    dropped = 0
    it = 0
    for it in range(1, max_iter + 1):
        d = _sq_dists(X, centers)
        labels = d.argmin(axis=1)
        counts = np.bincount(labels, minlength=len(centers))
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            keep = np.ones(len(centers), bool)
            far = d[np.arange(len(X)), labels]
            for h in empty:
                if h in reseeded:
                    keep[h] = False
                    continue
                reseeded.add(int(h))
                j = int(far.argmax())
                centers[h] = X[j]
                far[j] = -1.0
            if not keep.all():
                dropped += int((~keep).sum())
                warnings.warn(f"k-means dropped {int((~keep).sum())} empty cluster(s)",
                              RuntimeWarning, stacklevel=2)
                centers = centers[keep]
                reseeded = {int(np.cumsum(keep)[h]) - 1 for h in reseeded if keep[h]}
            continue
        new = np.zeros_like(centers)
        np.add.at(new, labels, X)
        new /= counts[:, None]
        shift = np.sqrt(((new - centers) ** 2).sum(1)).max()
        centers = new
        if shift < tol:
            break
    d = _sq_dists(X, centers)
    labels = d.argmin(axis=1)
    inertia = float(d[np.arange(len(X)), labels].sum())
    return KMeansResult(centers, labels, inertia, it, dropped)


def kmeans(X: np.ndarray, n_clusters: int, seed: int = 0, n_init: int = 1) -> KMeansResult:
    X = np.asarray(X, dtype=np.float64)
    if not 1 <= n_clusters <= len(X):
        raise ValueError(f"need 1 <= clusters <= {len(X)}, got {n_clusters}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        res = lloyd(X, kmeans_pp(X, n_clusters, rng))
        if best is None or res.inertia < best.inertia:
            best = res
    return best


class KMeansRouter(Router):
    """Routes by nearest training-cluster centroid.

    Each cluster stores the NaN-safe mean utility and cost of every model
    over its members.  ``calibration="val"`` computes those means over the
    validation rows assigned to each cluster instead, which is the
    cluster-then-assign-on-validation protocol; clusters with no
    validation members fall back to their training means.
    """
    kind = "kmeans"

    def fit(self, X, table, rows, X_val=None, val_rows=None):
        X, U, C = self._check_table(X, table, rows)
        cfg = self.config
        if cfg.clusters > len(X):
            raise ValueError(f"kmeans: clusters={cfg.clusters} exceeds {len(X)} training rows")
        res = kmeans(X, cfg.clusters, cfg.seed, cfg.n_init)
        if res.dropped:
            self.diagnostics.append(f"dropped {res.dropped} empty cluster(s)")
        self.centers = res.centers
        self.u_cluster, self.c_cluster = self._cluster_means(res.labels, U, C)
        if cfg.calibration == "val":
            if X_val is None or val_rows is None or len(val_rows) == 0:
                raise ValueError("kmeans: calibration='val' needs validation features and rows")
            val_rows = np.asarray(val_rows, dtype=int)
            labels = self.assign(X_val)
            uv, cv = self._cluster_means(labels, table.utilities[val_rows],
                                         table.costs[val_rows], fallback=False)
            hit = ~np.isnan(uv)
            self.u_cluster = np.where(hit, uv, self.u_cluster)
            self.c_cluster = np.where(~np.isnan(cv), cv, self.c_cluster)
        elif cfg.calibration != "train":
            raise ValueError(f"unknown calibration {cfg.calibration!r}")
        return self

    def _cluster_means(self, labels, U, C, fallback=True):
        H = len(self.centers)
        u_glob, c_glob = nan_col_means(U), nan_col_means(C)
        u_out = np.full((H, U.shape[1]), np.nan)
        c_out = np.full((H, U.shape[1]), np.nan)
        for h in range(H):
            m = labels == h
            if m.any():
                u_out[h] = nan_col_means(U[m])
                c_out[h] = nan_col_means(C[m])
        if fallback:
            miss = np.isnan(u_out)
            if miss.any():
                self.diagnostics.append(f"{int(miss.sum())} cluster/model means fell back to global")
            u_out = np.where(miss, u_glob[None, :], u_out)
            c_out = np.where(np.isnan(c_out), c_glob[None, :], c_out)
            u_out = np.nan_to_num(u_out, nan=0.0)
            c_out = np.nan_to_num(c_out, nan=0.0)
        return u_out, c_out

    def assign(self, X) -> np.ndarray:
        return _sq_dists(self._check_dim(X), self.centers).argmin(axis=1)

    def predict(self, X, rows=None) -> Prediction:
        h = self.assign(X)
        return Prediction(self.u_cluster[h], self.c_cluster[h])

    def state(self):
        return {"centers": self.centers, "u_cluster": self.u_cluster, "c_cluster": self.c_cluster}

    def load_state(self, meta, arrays):
        self._K, self._dim = meta["K"], meta["dim"]
        self.centers = arrays["centers"]
        self.u_cluster, self.c_cluster = arrays["u_cluster"], arrays["c_cluster"]


class KNNRouter(Router):
    """Averages the outcomes of the k most cosine-similar training instances.

    Missing neighbor outcomes are excluded from each mean; if all k are
    missing for a model, that model falls back to its training column mean.
    """
    kind = "knn"
    chunk = 1024

    def fit(self, X, table, rows, X_val=None, val_rows=None):
        X, U, C = self._check_table(X, table, rows)
        if not 1 <= self.config.neighbors <= len(X):
            raise ValueError(f"knn: k={self.config.neighbors} must be in [1, {len(X)}]")
        r = np.linalg.norm(X, axis=1, keepdims=True)
        self.X = np.divide(X, r, out=np.zeros_like(X), where=r > 0)
        self.U, self.C = U, C
        self.u_mean = np.nan_to_num(nan_col_means(U), nan=0.0)
        self.c_mean = np.nan_to_num(nan_col_means(C), nan=0.0)
        return self

    def neighbors(self, X) -> np.ndarray:
        X = self._check_dim(X)
        r = np.linalg.norm(X, axis=1, keepdims=True)
        Q = np.divide(X, r, out=np.zeros_like(X), where=r > 0)
        k = self.config.neighbors
        out = np.empty((len(Q), k), dtype=int)
        for s in range(0, len(Q), self.chunk):
            dist = 1.0 - Q[s:s + self.chunk] @ self.X.T
            # stable sort: equal distances resolve to the earlier training row
            out[s:s + self.chunk] = np.argsort(dist, axis=1, kind="stable")[:, :k]
        return out

    def predict(self, X, rows=None) -> Prediction:
        nb = self.neighbors(X)
        u, c = self.U[nb], self.C[nb]  # n x k x K
        u_hat = _nanmean_axis1(u)
        c_hat = _nanmean_axis1(c)
        miss_u, miss_c = np.isnan(u_hat), np.isnan(c_hat)
        if miss_u.any():
            self.diagnostics.append(f"{int(miss_u.sum())} knn utility estimates used the column mean")
        u_hat = np.where(miss_u, self.u_mean[None, :], u_hat)
        c_hat = np.where(miss_c, self.c_mean[None, :], c_hat)
        return Prediction(u_hat, c_hat)

    def state(self):
        return {"X": self.X, "U": self.U, "C": self.C}

    def load_state(self, meta, arrays):
        self._K, self._dim = meta["K"], meta["dim"]
        self.X, self.U, self.C = arrays["X"], arrays["U"], arrays["C"]
        self.u_mean = np.nan_to_num(nan_col_means(self.U), nan=0.0)
        self.c_mean = np.nan_to_num(nan_col_means(self.C), nan=0.0)


def _nanmean_axis1(a):
    ok = ~np.isnan(a)
    cnt = ok.sum(axis=1)
    tot = np.where(ok, a, 0.0).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(cnt > 0, tot / np.maximum(cnt, 1), np.nan)
