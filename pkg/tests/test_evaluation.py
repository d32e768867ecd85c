import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from helpers import tiny_table
from oracles import brute_curve, brute_envelope, grid_nauc, mc_random_perf
from mmroute.evaluation import (DatasetMetrics, Frontier, OperatingPoint, aggregate, curve_value,
                                dataset_metrics, default_lambda_grid, evaluate_policy, fmt_value,
                                nauc, pareto_envelope, parse_value, peak_score, qnc,
                                read_frontier_csv, read_metrics_csv, sweep_lambda,
                                write_frontier_csv, write_metrics_csv)
from mmroute.outcome_store import best_single_model
from mmroute.routers import RandomRouter, RouterConfig
from mmroute.routers.base import point_mass

pairs = st.tuples(st.floats(0, 1), st.floats(0, 1))
point_sets = st.lists(pairs, min_size=1, max_size=40)


def F(*pts):
    return pareto_envelope(list(pts))


# ---- envelope


def test_envelope_drops_dominated():
    assert F((0.1, 0.6), (0.2, 0.5), (0.3, 0.7)).points == [(0.1, 0.6), (0.3, 0.7)]


def test_envelope_single_point():
    assert F((0.4, 0.2)).points == [(0.4, 0.2)]


def test_envelope_collapses_equal_costs():
    assert F((0.1, 0.5), (0.1, 0.7), (0.2, 0.7)).points == [(0.1, 0.7)]


def test_envelope_empty_raises():
    with pytest.raises(ValueError):
        pareto_envelope([])


def test_envelope_thousand_points_match_brute_force():
    rng = np.random.default_rng(0)
    pts = [tuple(x) for x in rng.random((1000, 2))]
    assert pareto_envelope(pts).points == brute_envelope(pts)


@given(point_sets)
def test_envelope_matches_brute_force(pts):
    assert pareto_envelope(pts).points == brute_envelope(pts)


@given(point_sets)
def test_envelope_idempotent(pts):
    env = pareto_envelope(pts)
    assert pareto_envelope(env.points) == env


@given(point_sets)
def test_envelope_strictly_increasing(pts):
    env = pareto_envelope(pts)
    assert all(a < b for a, b in zip(env.costs, env.costs[1:]))
    assert all(a < b for a, b in zip(env.perfs, env.perfs[1:]))


# ---- curve value


def test_curve_interpolates():
    assert curve_value(F((0, 0), (1, 1)), 0.5) == 0.5
    assert curve_value(F((0.1, 0.6), (0.3, 0.7)), 0.2) == pytest.approx(0.65)


def test_curve_extends_constant():
    f = F((0.1, 0.6), (0.3, 0.7))
    assert curve_value(f, 0.0) == 0.6
    assert curve_value(f, 5.0) == 0.7


def test_curve_rejects_nonfinite():
    with pytest.raises(ValueError):
        curve_value(F((0, 0)), math.nan)


@given(point_sets, st.floats(-0.5, 1.5), st.floats(-0.5, 1.5))
def test_curve_monotone(pts, a, b):
    f = pareto_envelope(pts)
    lo, hi = min(a, b), max(a, b)
    assert curve_value(f, lo) <= curve_value(f, hi)


@given(point_sets, st.floats(-0.5, 1.5))
def test_curve_matches_definition(pts, c):
    f = pareto_envelope(pts)
    assert curve_value(f, c) == pytest.approx(brute_curve(f.points, c), abs=1e-12)


# ---- nAUC


def test_nauc_constant_curve():
    f = F((0.3, 0.5), (0.8, 0.5))
    assert nauc(f, 0.0, 1.0, single_point=True) == pytest.approx(0.5, abs=1e-15)
    assert nauc(f, 0.2, 0.9, single_point=True) == pytest.approx(0.5, abs=1e-15)


def test_nauc_triangle():
    assert nauc(F((0, 0), (1, 1)), 0.0, 1.0) == 0.5


def test_nauc_single_point_convention():
    f = F((0.4, 0.6))
    assert nauc(f, 0.0, 1.0) is None
    assert nauc(f, 0.0, 1.0, single_point=True) == 0.6


def test_nauc_requires_positive_range():
    with pytest.raises(ValueError):
        nauc(F((0, 0), (1, 1)), 0.5, 0.5)


@settings(max_examples=60, deadline=None)
@given(point_sets, st.floats(0, 1), st.floats(0, 1))
def test_nauc_in_unit_interval(pts, a, b):
    assume(abs(a - b) > 1e-6)
    f = pareto_envelope(pts)
    v = nauc(f, min(a, b), max(a, b), single_point=True)
    assert -1e-12 <= v <= 1 + 1e-12


@settings(max_examples=60, deadline=None)
@given(point_sets, st.floats(0, 0.45), st.floats(0.55, 1))
def test_nauc_matches_dense_integration(pts, lo, hi):
    f = pareto_envelope(pts)
    assert nauc(f, lo, hi, single_point=True) == pytest.approx(
        grid_nauc(f.points, lo, hi, n=2000), abs=1e-9)


@given(point_sets, st.integers(0, 39), st.floats(0, 0.5), st.floats(1e-6, 0.5))
def test_dominated_point_changes_nothing(pts, k, dc, dp):
    env = pareto_envelope(pts)
    c0, p0 = pts[k % len(pts)]
    bigger = pts + [(c0 + dc, p0 - dp)]
    ref_args = (0.9, 0.5, 0.0, 1.0)
    assert pareto_envelope(bigger) == env
    assert peak_score(bigger) == peak_score(pts)
    assert nauc(pareto_envelope(bigger), 0, 1, True) == nauc(env, 0, 1, True)
    assert qnc(pareto_envelope(bigger), *ref_args) == qnc(env, *ref_args)


# ---- peak score


def test_peak_score():
    assert peak_score([(0.1, 0.6), (0.3, 0.7)]) == 0.7
    assert peak_score([(0.2, 0.4)]) == 0.4
    assert peak_score([OperatingPoint(0.0, 0.2, 0.3, 5)]) == 0.3


# ---- QNC


def test_qnc_exact_at_best_model():
    assert qnc(F((0.1, 0.5), (0.4, 0.8)), 0.8, 0.4, 0.1, 1.0) == 1.0


def test_qnc_linear_crossing():
    assert qnc(F((0.1, 0.6), (0.3, 0.9)), 0.75, 0.4, 0.1, 1.0) == pytest.approx(0.5)


def test_qnc_unreached_is_inf():
    assert qnc(F((0.1, 0.5), (0.3, 0.7)), 0.9, 0.5, 0.1, 1.0) == math.inf


def test_qnc_reached_at_range_start():
    assert qnc(F((0.05, 0.95)), 0.9, 0.5, 0.1, 1.0) == pytest.approx(0.2)


def test_qnc_crossing_beyond_range_is_inf():
    assert qnc(F((0.1, 0.5), (2.0, 0.95)), 0.9, 0.5, 0.1, 1.0) == math.inf


@given(point_sets, st.integers(0, 39))
def test_qnc_at_most_one_with_best_point(pts, k):
    c_best, p_best = pts[k % len(pts)]
    assume(c_best > 0)
    f = pareto_envelope(pts)
    assert qnc(f, p_best, c_best, 0.0, max(c for c, _ in pts)) <= 1.0 + 1e-12


# ---- policies and sweeps


def test_point_mass_policy_indexes_table():
    t = tiny_table([[0.2, 1.0], [0.5, 0.0]], [[0.1, 0.9], [0.3, 0.4]])
    perf, cost = evaluate_policy(point_mass(np.array([1, 0]), 2), t, [0, 1])
    assert (perf, cost) == pytest.approx((0.75, 0.6))


def test_uniform_policy_symmetry():
    t = tiny_table([[1.0, 0.0]] * 5, [[0.5, 0.5]] * 5)
    perf, _ = evaluate_policy(np.full((5, 2), 0.5), t, range(5))
    assert perf == 0.5


def test_random_policy_matches_monte_carlo():
    rng = np.random.default_rng(1)
    U = rng.random((40, 3))
    t = tiny_table(U, np.ones_like(U))
    perf, _ = evaluate_policy(np.full((40, 3), 1 / 3), t, range(40))
    est, se = mc_random_perf(U, 100_000, rng)
    assert abs(perf - est) <= 3 * se


def test_policy_mass_on_missing_cell_raises():
    t = tiny_table([[0.5, np.nan]], [[0.1, np.nan]])
    with pytest.raises(ValueError, match="missing"):
        evaluate_policy(np.array([[0.5, 0.5]]), t, [0])


def test_policy_shape_checked():
    t = tiny_table([[0.5, 0.5]], [[0.1, 0.1]])
    with pytest.raises(ValueError):
        evaluate_policy(np.ones((1, 3)), t, [0])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 30), st.integers(1, 5), st.integers(0, 10_000))
def test_point_mass_equals_direct_indexing(n, K, seed):
    rng = np.random.default_rng(seed)
    U, C = rng.random((n, K)), rng.random((n, K))
    choice = rng.integers(0, K, n)
    perf, cost = evaluate_policy(point_mass(choice, K), tiny_table(U, C), range(n))
    assert perf == pytest.approx(U[np.arange(n), choice].mean(), abs=1e-12)
    assert cost == pytest.approx(C[np.arange(n), choice].mean(), abs=1e-12)


def test_default_grid():
    g = default_lambda_grid()
    assert g.size == 34 and g[0] == 0
    assert g[1] == pytest.approx(1e-3) and g[-1] == pytest.approx(1e3)
    np.testing.assert_allclose(np.diff(np.log10(g[1:])), 6 / 32)


class FixedRouter:
    """Router stub that always predicts the same (u, c) for every row."""
    lambda_free = False
    analysis_only = False

    def __init__(self, u, c):
        self.u, self.c = np.asarray(u), np.asarray(c)

    def predict(self, X, rows=None):
        from mmroute.routers.base import Prediction
        n = len(rows)
        return Prediction(np.tile(self.u, (n, 1)), np.tile(self.c, (n, 1)))


def test_sweep_zero_grid_is_pure_utility_point():
    t = tiny_table([[0.9, 0.5]] * 3, [[1.0, 0.1]] * 3)
    pts = sweep_lambda(FixedRouter([0.9, 0.5], [1.0, 0.1]), None, t, range(3), [0.0])
    assert len(pts) == 1 and (pts[0].mean_perf, pts[0].mean_cost) == (0.9, 1.0)


def test_sweep_large_lambda_lowers_cost():
    t = tiny_table([[0.9, 0.5]] * 3, [[1.0, 0.1]] * 3)
    pts = sweep_lambda(FixedRouter([0.9, 0.5], [1.0, 0.1]), None, t, range(3), [0.0, 1e6])
    assert pts[1].mean_cost <= pts[0].mean_cost


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20), st.integers(2, 5), st.integers(0, 10_000))
def test_sweep_cost_monotone_in_lambda(n, K, seed):
    rng = np.random.default_rng(seed)
    U, C = rng.random((n, K)), rng.random((n, K))
    t = tiny_table(U, C)

    class PerRow(FixedRouter):
        def predict(self, X, rows=None):
            from mmroute.routers.base import Prediction
            return Prediction(rng2.random((n, K)), rng2.random((n, K)))
    rng2 = np.random.default_rng(seed + 1)
    r = PerRow(None, None)
    pred = r.predict(None, range(n))
    r.predict = lambda X, rows=None: pred
    pts = sweep_lambda(r, None, t, range(n))
    costs = [p.mean_cost for p in pts]
    # held-fixed predictions: predicted cost of selections is non-increasing
    from mmroute.routers.base import select_rows
    pc = [pred.c_hat[np.arange(n), select_rows(pred.u_hat, pred.c_hat, p.lam)].mean() for p in pts]
    assert all(b <= a + 1e-12 for a, b in zip(pc, pc[1:]))
    assert len(costs) == 34


def test_sweep_rejects_bad_grid():
    t = tiny_table([[0.5]], [[0.1]])
    with pytest.raises(ValueError):
        sweep_lambda(FixedRouter([0.5], [0.1]), None, t, [0], [1.0, 0.5])
    with pytest.raises(ValueError):
        sweep_lambda(FixedRouter([0.5], [0.1]), None, t, [0], [-1.0])


def test_random_router_single_point_and_undefined_nauc():
    t = tiny_table([[1.0, 0.0, 0.5]] * 4, [[0.2, 0.4, 0.9]] * 4)
    r = RandomRouter(RouterConfig("random")).fit(np.zeros((4, 2)), t, range(4))
    pts = sweep_lambda(r, np.zeros((4, 2)), t, range(4))
    assert len(pts) == 1
    m = dataset_metrics(pts, best_single_model(t))
    assert m.nauc is None and fmt_value(m.nauc) == "--"
    assert m.peak_score == pytest.approx(0.5)


# ---- aggregation


def M(nauc_=0.5, ps=0.5, q=1.0):
    return DatasetMetrics(nauc_, ps, q)


def test_aggregate_single_dataset():
    rep = aggregate("r", {"a": M(0.3, 0.4, 0.5)}, {"a": "s"})
    assert rep.overall == M(0.3, 0.4, 0.5)


def test_aggregate_macro_means():
    per = {"a": M(ps=0.9), "b": M(ps=0.7), "c": M(ps=0.6)}
    rep = aggregate("r", per, {"a": "x", "b": "x", "c": "y"})
    assert rep.per_scenario["x"].peak_score == pytest.approx(0.8)
    assert rep.overall.peak_score == pytest.approx(0.7)


def test_aggregate_inf_propagates():
    per = {"a": M(q=0.5), "b": M(q=math.inf), "c": M(q=0.9)}
    rep = aggregate("r", per, {"a": "x", "b": "x", "c": "y"})
    assert rep.per_scenario["x"].qnc == math.inf
    assert rep.per_scenario["y"].qnc == 0.9
    assert rep.overall.qnc == math.inf


def test_aggregate_excludes_undefined_nauc():
    rep = aggregate("r", {"a": M(nauc_=None), "b": M(nauc_=0.6)}, {"a": "x", "b": "x"})
    assert rep.overall.nauc == 0.6
    assert rep.nauc_excluded == ["a"]


def test_dataset_metrics_ratio():
    t = tiny_table([[0.8, 0.4]] * 2, [[1.0, 0.2]] * 2)
    pts = [OperatingPoint(0, 1.0, 0.8, 2), OperatingPoint(1, 0.2, 0.4, 2)]
    m = dataset_metrics(pts, best_single_model(t))
    assert m.nauc == pytest.approx(0.6)
    assert m.nauc_ratio == pytest.approx(0.75)
    assert m.qnc == 1.0


# ---- files


def test_value_formatting():
    assert fmt_value(None) == "--" and fmt_value(math.inf) == "inf"
    for v in (None, math.inf, 0.1234567890123):
        back = parse_value(fmt_value(v))
        assert back == v or back == pytest.approx(v, rel=1e-9)


def test_frontier_and_metrics_csv(tmp_path):
    pts = [OperatingPoint(0.0, 0.5, 0.7, 3), OperatingPoint(1.0, 0.25, 0.5, 3)]
    write_frontier_csv(tmp_path / "f.csv", [("knn", "d", p) for p in pts])
    back = read_frontier_csv(tmp_path / "f.csv")
    assert [(r, d, p.lam, p.mean_cost, p.mean_perf) for r, d, p in back] == \
        [("knn", "d", 0.0, 0.5, 0.7), ("knn", "d", 1.0, 0.25, 0.5)]
    rep = aggregate("knn", {"d": M(None, 0.7, math.inf)}, {"d": "s"})
    write_metrics_csv(tmp_path / "m.csv", [rep])
    rows = read_metrics_csv(tmp_path / "m.csv")
    assert [r["scope"] for r in rows] == ["d", "scenario:s", "all"]
    assert rows[-1]["nauc"] is None and rows[-1]["qnc"] == math.inf


def test_operating_point_must_be_finite():
    with pytest.raises(ValueError):
        OperatingPoint(0.0, math.nan, 0.5, 1)


def test_frontier_length():
    assert len(Frontier((0.1, 0.2), (0.3, 0.4))) == 2
