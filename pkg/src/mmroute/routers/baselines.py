"""Reference policies: uniform random and the ground-truth oracle."""

from __future__ import annotations

import numpy as np

from ..outcome_store import OutcomeTable
from .base import Prediction, Router, point_mass, select_rows


class OracleAccessError(PermissionError):
    """An oracle was requested where ground-truth outcomes are off limits."""


class RandomRouter(Router):
    """Uniform choice over the eligible models of each instance.

    The policy is returned as its exact distribution, so expected
    performance needs no sampling.  It ignores the cost weight.
    """
    kind = "random"
    lambda_free = True

    def fit(self, X, table: OutcomeTable, rows, X_val=None, val_rows=None):
        self._K = table.K
        self._dim = None if X is None else np.asarray(X).shape[1]
        return self

    def predict(self, X, rows=None) -> Prediction:
        n = len(X)
        return Prediction(np.zeros((n, self._K)), np.zeros((n, self._K)))

    def policy(self, X, lam, rows=None, eligible=None):
        n = len(X)
        elig = np.ones((n, self._K), bool) if eligible is None else np.asarray(eligible, bool)
        if not elig.any(axis=1).all():
            raise ValueError("instance with no eligible model")
        return elig / elig.sum(axis=1, keepdims=True)

    def state(self):
        return {}

    def load_state(self, meta, arrays):
        self._K, self._dim = meta["K"], meta["dim"]


class OracleRouter(Router):
    """Selects with the true outcomes of the rows being evaluated.

    Analysis-only: it reads the evaluation split's utilities, which a
    deployable router never sees.  Construction requires
    ``allow_ground_truth=True``.  The cost-unaware form takes the best
    utility on each row regardless of the cost weight.
    """
    kind = "oracle"
    analysis_only = True

    def __init__(self, config, diagnostics=None, *, allow_ground_truth: bool = False):
        if not allow_ground_truth:
            raise OracleAccessError(
                "the oracle router reads ground-truth outcomes of the evaluation split; "
                "pass allow_ground_truth=True (CLI: --allow-oracle) for analysis runs")
        super().__init__(config, diagnostics or [])
        self.table: OutcomeTable | None = None

    @property
    def lambda_free(self):
        return not self.config.cost_aware

    def fit(self, X, table: OutcomeTable, rows=None, X_val=None, val_rows=None):
        self.table = table
        self._K = table.K
        self._dim = None if X is None else np.asarray(X).shape[1]
        return self

    def predict(self, X, rows=None) -> Prediction:
        if rows is None:
            raise ValueError("oracle predictions need the table rows being evaluated")
        rows = np.asarray(rows, dtype=int)
        u = self.table.utilities[rows]
        c = self.table.costs[rows]
        # missing outcomes are made unattractive; eligibility masks them anyway
        return Prediction(np.nan_to_num(u, nan=-1.0), np.nan_to_num(c, nan=0.0))

    def policy(self, X, lam, rows=None, eligible=None):
        pred = self.predict(X, rows)
        lam = lam if self.config.cost_aware else 0.0
        if eligible is None:
            eligible = self.table.observed[np.asarray(rows, dtype=int)]
        return point_mass(select_rows(pred.u_hat, pred.c_hat, lam, eligible), self._K)

    def state(self):
        return {}

    def load_state(self, meta, arrays):
        raise OracleAccessError("oracle routers are rebuilt from the outcome table, not loaded")
