"""Selection rule, predictions and the router base class."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import ClassVar

import numpy as np

from ..outcome_store import OutcomeTable

ROUTER_KINDS = ("random", "oracle", "kmeans", "knn", "linear", "mlp", "linear_mf", "mlp_mf")
# default featurization per router family
DEFAULT_FEATURES = {
    "random": "equal", "oracle": "equal",
    "kmeans": "adaptive", "knn": "adaptive", "linear_mf": "adaptive", "mlp_mf": "adaptive",
    "linear": "equal", "mlp": "equal",
}
TIE_RTOL = 1e-12


def select(u_hat, c_hat, lam: float, eligible=None) -> int:
    """Index maximizing ``u_hat - lam * c_hat``.

    Equivalent to minimizing ``1 - u_hat + lam * c_hat``.  Scores within a
    relative 1e-12 of the best count as tied; ties go to the lower
    predicted cost, then the lower index.
    """
    u_hat = np.asarray(u_hat, dtype=np.float64)
    if u_hat.size == 0:
        raise ValueError("cannot select from an empty model set")
    row_elig = None if eligible is None else np.asarray(eligible, dtype=bool)[None, :]
    return int(select_rows(u_hat[None, :], np.asarray(c_hat, dtype=np.float64)[None, :],
                           lam, row_elig)[0])


def select_rows(u_hat: np.ndarray, c_hat: np.ndarray, lam: float, eligible=None) -> np.ndarray:
    """Vectorized :func:`select` over the rows of n x K prediction matrices."""
    if lam < 0 or not np.isfinite(lam):
        raise ValueError(f"lambda must be finite and nonnegative, got {lam}")
    u_hat = np.asarray(u_hat, dtype=np.float64)
    c_hat = np.asarray(c_hat, dtype=np.float64)
    if u_hat.shape != c_hat.shape or u_hat.ndim != 2 or u_hat.shape[1] == 0:
        raise ValueError("u_hat and c_hat must be matching nonempty n x K matrices")
    score = u_hat - lam * c_hat
    if eligible is not None:
        eligible = np.broadcast_to(np.asarray(eligible, dtype=bool), score.shape)
        if not eligible.any(axis=1).all():
            bad = int(np.flatnonzero(~eligible.any(axis=1))[0])
            raise ValueError(f"row {bad} has no eligible model")
        score = np.where(eligible, score, -np.inf)
    best = score.max(axis=1, keepdims=True)
    tol = TIE_RTOL * np.maximum(1.0, np.abs(best))
    tied = score >= best - tol
    cost = np.where(tied, c_hat, np.inf)
    cheapest = tied & (cost == cost.min(axis=1, keepdims=True))
    return cheapest.argmax(axis=1)


def point_mass(choice: np.ndarray, K: int) -> np.ndarray:
    pol = np.zeros((len(choice), K))
    pol[np.arange(len(choice)), choice] = 1.0
    return pol


def nan_col_means(values: np.ndarray) -> np.ndarray:
    """Column means ignoring NaN; all-NaN columns give NaN without warnings."""
    ok = ~np.isnan(values)
    cnt = ok.sum(axis=0)
    tot = np.where(ok, values, 0.0).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(cnt > 0, tot / np.maximum(cnt, 1), np.nan)


@dataclass(frozen=True, eq=False)
class Prediction:
    u_hat: np.ndarray
    c_hat: np.ndarray

    def __post_init__(self):
        if not (np.all(np.isfinite(self.u_hat)) and np.all(np.isfinite(self.c_hat))):
            raise FloatingPointError("router emitted non-finite predictions")


@dataclass
class RouterConfig:
    kind: str = "kmeans"
    clusters: int = 20
    neighbors: int = 10
    rank: int = 32
    ridge_penalty: float = 1.0
    hidden_dims: tuple = (128, 128)
    mf_hidden: int = 128
    learn_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0
    n_init: int = 1
    calibration: str = "train"
    cost_aware: bool = True
    feature: str | None = None

    def __post_init__(self):
        if self.kind not in ROUTER_KINDS:
            raise ValueError(f"unknown router kind {self.kind!r}")
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)

    @property
    def feature_mode(self) -> str:
        return self.feature or DEFAULT_FEATURES[self.kind]

    @property
    def name(self) -> str:
        return self.kind if self.feature is None else f"{self.kind}[{self.feature}]"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RouterConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass(eq=False)
class Router:
    """Common router surface.

    ``fit`` sees training features plus the outcome table rows they belong
    to; ``predict`` maps features to per-model (u_hat, c_hat).  ``policy``
    turns predictions into per-instance distributions at a cost weight.
    """
    config: RouterConfig
    diagnostics: list = field(default_factory=list)

    kind: ClassVar[str] = ""
    lambda_free: ClassVar[bool] = False
    analysis_only: ClassVar[bool] = False

    @property
    def K(self) -> int:
        return self._K

    def fit(self, X: np.ndarray, table: OutcomeTable, rows, X_val=None, val_rows=None) -> "Router":
        raise NotImplementedError

    def predict(self, X: np.ndarray, rows=None) -> Prediction:
        raise NotImplementedError

    def policy(self, X: np.ndarray, lam: float, rows=None, eligible=None) -> np.ndarray:
        pred = self.predict(X, rows)
        return point_mass(select_rows(pred.u_hat, pred.c_hat, lam, eligible), pred.u_hat.shape[1])

    # serialization hooks
    def state(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def load_state(self, meta: dict, arrays: dict[str, np.ndarray]) -> None:
        raise NotImplementedError

    def meta(self) -> dict:
        return {"K": self._K, "dim": getattr(self, "_dim", None)}

    def _check_table(self, X, table, rows):
        rows = np.asarray(rows, dtype=int)
        if rows.size < 1:
            raise ValueError(f"{self.kind}: no training rows")
        X = np.asarray(X, dtype=np.float64)
        if X.shape[0] != rows.size:
            raise ValueError(f"{self.kind}: {X.shape[0]} feature rows for {rows.size} table rows")
        self._K = table.K
        self._dim = X.shape[1]
        return X, table.utilities[rows], table.costs[rows]

    def _check_dim(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self._dim:
            raise ValueError(f"{self.kind}: feature dim {X.shape[-1]} != trained dim {self._dim}")
        return X
