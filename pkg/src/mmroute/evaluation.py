"""Operating points, Pareto envelopes and the frontier metrics.

A router is swept over cost weights; each weight gives one (mean cost,
mean performance) operating point.  The upper envelope of those points is
the performance-cost curve p(c), interpolated linearly between envelope
points and held constant beyond both ends.  From p(c) come the normalized
area (nAUC), the peak score and the quality-neutral cost (QNC).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .outcome_store import OutcomeTable, SingleModelReference, best_single_model
from .routers.base import point_mass, select_rows

UNDEFINED = "--"


def default_lambda_grid() -> np.ndarray:
    """0 followed by 33 log-spaced weights in [1e-3, 1e3]."""
    return np.concatenate([[0.0], np.logspace(-3, 3, 33)])


@dataclass(frozen=True)
class OperatingPoint:
    lam: float
    mean_cost: float
    mean_perf: float
    n_instances: int

    def __post_init__(self):
        if not (math.isfinite(self.mean_cost) and math.isfinite(self.mean_perf)):
            raise ValueError("operating point must be finite")


@dataclass(frozen=True)
class Frontier:
    costs: tuple[float, ...]
    perfs: tuple[float, ...]

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.costs, self.perfs))

    def __len__(self):
        return len(self.costs)


def evaluate_policy(policy: np.ndarray, table: OutcomeTable, rows) -> tuple[float, float]:
    """Mean expected utility and cost of a per-instance distribution over models."""
    rows = np.asarray(rows, dtype=int)
    policy = np.asarray(policy, dtype=np.float64)
    if policy.shape != (rows.size, table.K):
        raise ValueError(f"policy shape {policy.shape} != ({rows.size}, {table.K})")
    U, C = table.utilities[rows], table.costs[rows]
    bad = (policy > 0) & ~table.observed[rows]
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise ValueError(f"policy puts mass on missing outcome "
                         f"({table.instances[rows[i]].instance_id}, {table.models[j].model_id})")
    U = np.where(policy > 0, U, 0.0)
    C = np.where(policy > 0, C, 0.0)
    return float((policy * U).sum(axis=1).mean()), float((policy * C).sum(axis=1).mean())


def sweep_lambda(router, X, table: OutcomeTable, rows, grid: Sequence[float] | None = None
                 ) -> list[OperatingPoint]:
    """One operating point per cost weight (a single point for
    weight-independent policies such as uniform random)."""
    grid = default_lambda_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    if grid.size == 0 or np.any(grid < 0) or np.any(np.diff(grid) < 0):
        raise ValueError("lambda grid must be nonempty, nonnegative and sorted")
    rows = np.asarray(rows, dtype=int)
    eligible = table.observed[rows]
    if router.lambda_free:
        grid = grid[:1]
    # learned routers predict once; reference policies compute their own choice
    pred = None if router.analysis_only or router.lambda_free else router.predict(X, rows)
    points = []
    for lam in grid:
        if pred is None:
            pol = router.policy(X, float(lam), rows=rows, eligible=eligible)
        else:
            pol = point_mass(select_rows(pred.u_hat, pred.c_hat, float(lam), eligible), table.K)
        perf, cost = evaluate_policy(pol, table, rows)
        points.append(OperatingPoint(float(lam), cost, perf, int(rows.size)))
    return points


def _as_pairs(points) -> list[tuple[float, float]]:
    out = []
    for p in points:
        if isinstance(p, OperatingPoint):
            out.append((p.mean_cost, p.mean_perf))
        else:
            c, v = p
            out.append((float(c), float(v)))
    return out


def pareto_envelope(points) -> Frontier:
    """Non-dominated subset sorted by cost (perf then strictly increases)."""
    pairs = _as_pairs(points)
    if not pairs:
        raise ValueError("pareto_envelope needs at least one point")
    pairs.sort(key=lambda cp: (cp[0], -cp[1]))
    costs, perfs = [], []
    for c, v in pairs:
        if not perfs or v > perfs[-1]:
            if costs and c == costs[-1]:
                continue
            costs.append(c)
            perfs.append(v)
    return Frontier(tuple(costs), tuple(perfs))


def curve_value(frontier: Frontier, c: float) -> float:
    """p(c): linear between envelope points, constant outside them."""
    if len(frontier) == 0:
        raise ValueError("empty frontier")
    if not math.isfinite(c):
        raise ValueError("cost must be finite")
    xs, ys = frontier.costs, frontier.perfs
    if c <= xs[0]:
        return ys[0]
    if c >= xs[-1]:
        return ys[-1]
    k = int(np.searchsorted(xs, c, side="right"))  # xs[k-1] <= c < xs[k]
    x0, x1, y0, y1 = xs[k - 1], xs[k], ys[k - 1], ys[k]
    return y0 + (y1 - y0) * (c - x0) / (x1 - x0)


def nauc(frontier: Frontier, c_min: float, c_max: float, single_point: bool = False):
    """Mean of p(c) over [c_min, c_max], integrated exactly.

    Returns None (reported as ``--``) for a one-point frontier unless
    ``single_point`` asks for the constant-extension value.
    """
    if not c_max > c_min:
        raise ValueError(f"nAUC needs c_max > c_min, got [{c_min}, {c_max}]")
    if len(frontier) == 1 and not single_point:
        return None
    knots = [c_min] + [c for c in frontier.costs if c_min < c < c_max] + [c_max]
    vals = [curve_value(frontier, c) for c in knots]
    area = sum(0.5 * (vals[i] + vals[i + 1]) * (knots[i + 1] - knots[i])
               for i in range(len(knots) - 1))
    return area / (c_max - c_min)


def peak_score(points) -> float:
    pairs = _as_pairs(points)
    if not pairs:
        raise ValueError("peak_score needs at least one point")
    return max(v for _, v in pairs)


def qnc(frontier: Frontier, p_best: float, c_best: float, c_min: float, c_max: float) -> float:
    """Smallest cost in [c_min, c_max] where p(c) >= p_best, over c_best.

    ``math.inf`` when the curve never reaches ``p_best`` on that range.
    """
    if not c_best > 0:
        raise ValueError("QNC needs c_best > 0")
    if curve_value(frontier, c_min) >= p_best:
        return c_min / c_best
    xs, ys = frontier.costs, frontier.perfs
    for k in range(1, len(xs)):
        x0, x1, y0, y1 = xs[k - 1], xs[k], ys[k - 1], ys[k]
        if y1 >= p_best > y0 and x1 > c_min:
            c = x1 if y1 == p_best else x0 + (p_best - y0) * (x1 - x0) / (y1 - y0)
            c = max(c, c_min)
            return c / c_best if c <= c_max else math.inf
    return math.inf


# ---------------------------------------------------------------------------
# reports


@dataclass
class DatasetMetrics:
    nauc: float | None
    peak_score: float
    qnc: float
    nauc_ratio: float | None = None


@dataclass
class MetricsReport:
    router: str
    per_dataset: dict[str, DatasetMetrics]
    per_scenario: dict[str, DatasetMetrics]
    overall: DatasetMetrics
    analysis_only: bool = False
    nauc_excluded: list[str] = field(default_factory=list)

    def rows(self) -> list[tuple[str, DatasetMetrics]]:
        out = sorted(self.per_dataset.items())
        out += [(f"scenario:{k}", v) for k, v in sorted(self.per_scenario.items())]
        out.append(("all", self.overall))
        return out


def dataset_metrics(points: Sequence[OperatingPoint], ref: SingleModelReference,
                    single_point: bool = False) -> DatasetMetrics:
    front = pareto_envelope(points)
    if ref.c_max > ref.c_min:
        area = nauc(front, ref.c_min, ref.c_max, single_point)
    else:
        area = None
    ratio = None if area is None or ref.p_best == 0 else area / ref.p_best
    return DatasetMetrics(area, peak_score(points),
                          qnc(front, ref.p_best, ref.c_best, ref.c_min, ref.c_max), ratio)


def _mean(values: list, *, skip_none: bool):
    vals = [v for v in values if v is not None] if skip_none else values
    if not vals:
        return None
    if any(v == math.inf for v in vals):
        return math.inf
    return float(np.mean(vals))


def aggregate(router: str, per_dataset: Mapping[str, DatasetMetrics],
              scenario_of: Mapping[str, str], analysis_only: bool = False) -> MetricsReport:
    """Macro means: datasets within each scenario, then scenarios overall.

    Undefined nAUC values are dropped from the mean (and listed in
    ``nauc_excluded``); an infinite QNC makes every mean containing it
    infinite.
    """
    if not per_dataset:
        raise ValueError("aggregate needs at least one dataset")
    groups: dict[str, list[str]] = {}
    for ds in sorted(per_dataset):
        groups.setdefault(scenario_of[ds], []).append(ds)

    def combine(items: Iterable[DatasetMetrics]) -> DatasetMetrics:
        items = list(items)
        return DatasetMetrics(
            nauc=_mean([m.nauc for m in items], skip_none=True),
            peak_score=_mean([m.peak_score for m in items], skip_none=False),
            qnc=_mean([m.qnc for m in items], skip_none=False),
            nauc_ratio=_mean([m.nauc_ratio for m in items], skip_none=True))

    per_scenario = {sc: combine(per_dataset[d] for d in ds) for sc, ds in groups.items()}
    overall = combine(per_scenario.values())
    excluded = [d for d in sorted(per_dataset) if per_dataset[d].nauc is None]
    return MetricsReport(router, dict(per_dataset), per_scenario, overall, analysis_only, excluded)


def evaluate_router(router, X, table: OutcomeTable, rows, grid=None, single_point=False):
    """Sweep, envelope and metrics on one evaluation slice."""
    points = sweep_lambda(router, X, table, rows, grid)
    ref = best_single_model(table, rows)
    return points, dataset_metrics(points, ref, single_point)


# ---------------------------------------------------------------------------
# delimited exports


def fmt_value(x) -> str:
    if x is None:
        return UNDEFINED
    if x == math.inf:
        return "inf"
    return f"{x:.10g}"


def parse_value(s: str):
    s = s.strip()
    if s == UNDEFINED:
        return None
    return math.inf if s == "inf" else float(s)


FRONTIER_HEADER = ["router", "dataset", "lambda", "mean_cost", "mean_perf"]
METRICS_HEADER = ["router", "scope", "nauc", "peak_score", "qnc"]


def write_frontier_csv(path, rows: Iterable[tuple[str, str, OperatingPoint]]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FRONTIER_HEADER)
        for router, ds, p in rows:
            w.writerow([router, ds, fmt_value(p.lam), fmt_value(p.mean_cost), fmt_value(p.mean_perf)])


def read_frontier_csv(path) -> list[tuple[str, str, OperatingPoint]]:
    out = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            out.append((rec["router"], rec["dataset"],
                        OperatingPoint(float(rec["lambda"]), float(rec["mean_cost"]),
                                       float(rec["mean_perf"]), 0)))
    return out


def write_metrics_csv(path, reports: Iterable[MetricsReport], with_ratio: bool = False) -> None:
    header = METRICS_HEADER + (["nauc_ratio"] if with_ratio else [])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for rep in reports:
            for scope, m in rep.rows():
                rec = [rep.router, scope, fmt_value(m.nauc), fmt_value(m.peak_score), fmt_value(m.qnc)]
                if with_ratio:
                    rec.append(fmt_value(m.nauc_ratio))
                w.writerow(rec)


def read_metrics_csv(path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return [{k: (v if k in ("router", "scope") else parse_value(v)) for k, v in rec.items()}
                for rec in csv.DictReader(fh)]
