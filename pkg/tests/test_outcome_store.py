import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import tiny_table
from mmroute.outcome_store import (ModelMeta, SplitSpec, ValidationError, best_single_model,
                                   instance_raw_cost, load_outcomes, load_pool, make_splits,
                                   normalize_costs, token_cost, write_outcomes, write_pool)

HEADER = "instance_id,dataset,scenario,m_text,m_img,model_id,utility,cost\n"


def _pool(tmp_path, k=2):
    pool = [ModelMeta(f"m{j}", f"Model {j}", "open_weight", 1.0 + j) for j in range(k)]
    write_pool(tmp_path / "pool.csv", pool)
    return load_pool(tmp_path / "pool.csv")


def _write(tmp_path, rows, name="out.csv"):
    p = tmp_path / name
    p.write_text(HEADER + "".join(r + "\n" for r in rows))
    return p


def test_two_by_two_table(tmp_path):
    pool = _pool(tmp_path)
    p = _write(tmp_path, ["a,ds,ocr,1,1,m0,1,0.5", "a,ds,ocr,1,1,m1,0,1.0",
                          "b,ds,ocr,1,1,m0,0,0.5", "b,ds,ocr,1,1,m1,1,1.0"])
    t = load_outcomes(p, pool)
    assert (t.n, t.K) == (2, 2)
    assert t.observed.all()
    assert t.utilities.tolist() == [[1, 0], [0, 1]]


def test_out_of_range_utility_names_cell(tmp_path):
    pool = _pool(tmp_path)
    p = _write(tmp_path, ["a,ds,ocr,1,1,m0,1.3,0.5"])
    with pytest.raises(ValidationError) as exc:
        load_outcomes(p, pool)
    assert exc.value.line == 2
    assert "a" in str(exc.value) and "m0" in str(exc.value)


@pytest.mark.parametrize("row", [
    "a,ds,ocr,1,1,m0,0.5,-0.1",   # negative cost
    "a,ds,ocr,1,1,m9,0.5,0.1",    # unknown model
    "a,ds,ocr,0,0,m0,0.5,0.1",    # no modality
    "a,ds,ocr,1,1,m0,abc,0.1",    # not a number
    "a,ds,ocr,1,1,m0,0.5",        # short row
])
def test_malformed_rows_rejected(tmp_path, row):
    pool = _pool(tmp_path)
    with pytest.raises(ValidationError, match="line 2"):
        load_outcomes(_write(tmp_path, [row]), pool)


def test_duplicate_pair_rejected(tmp_path):
    pool = _pool(tmp_path)
    p = _write(tmp_path, ["a,ds,ocr,1,1,m0,0.5,0.1", "a,ds,ocr,1,1,m0,0.6,0.1"])
    with pytest.raises(ValidationError, match="line 3: duplicate"):
        load_outcomes(p, pool)


def test_missing_cells_are_nan(tmp_path):
    pool = _pool(tmp_path)
    t = load_outcomes(_write(tmp_path, ["a,ds,ocr,1,0,m0,0.5,0.1", "b,ds,ocr,1,1,m1,1,0.2"]), pool)
    assert t.observed.tolist() == [[True, False], [False, True]]
    assert math.isnan(t.utilities[0, 1])


def test_arrays_are_read_only():
    t = tiny_table([[0.5]], [[0.1]])
    with pytest.raises(ValueError):
        t.utilities[0, 0] = 1.0


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4), st.integers(0, 10_000), st.floats(0, 0.5))
def test_write_load_round_trip(tmp_path_factory, n, k, seed, missing):
    tmp = tmp_path_factory.mktemp("rt")
    rng = np.random.default_rng(seed)
    U = rng.random((n, k))
    C = rng.random((n, k)) * 3
    hole = rng.random((n, k)) < missing
    hole[:, 0] = False  # an instance with no rows cannot appear in the file
    U[hole] = np.nan
    C[hole] = np.nan
    t = tiny_table(U, C)
    write_pool(tmp / "pool.csv", t.models)
    write_outcomes(tmp / "o.csv", t)
    back = load_outcomes(tmp / "o.csv", load_pool(tmp / "pool.csv"))
    np.testing.assert_array_equal(back.utilities, t.utilities)
    np.testing.assert_array_equal(back.costs, t.costs)
    assert back.instance_ids == t.instance_ids
    write_outcomes(tmp / "o2.csv", back)
    assert (tmp / "o.csv").read_bytes() == (tmp / "o2.csv").read_bytes()


@settings(max_examples=60, deadline=None)
@given(st.floats(-2, 3, allow_nan=False), st.floats(-2, 3, allow_nan=False))
def test_validation_rejects_exactly_invalid_cells(tmp_path_factory, u, c):
    tmp = tmp_path_factory.mktemp("val")
    pool = _pool(tmp, 1)
    p = _write(tmp, [f"a,ds,ocr,1,1,m0,{u!r},{c!r}"])
    valid = 0 <= u <= 1 and c >= 0
    if valid:
        assert load_outcomes(p, pool).utilities[0, 0] == u
    else:
        with pytest.raises(ValidationError):
            load_outcomes(p, pool)


def test_rows_are_ordered_by_instance_id(tmp_path):
    pool = _pool(tmp_path, 1)
    t = load_outcomes(_write(tmp_path, ["b,ds,ocr,1,1,m0,1,0.1", "a,ds,ocr,1,1,m0,0,0.1"]), pool)
    assert t.instance_ids == ["a", "b"]


def test_normalization_on_load_uses_most_expensive_model(tmp_path):
    pool = _pool(tmp_path)
    p = _write(tmp_path, ["a,ds,ocr,1,1,m0,1,1", "a,ds,ocr,1,1,m1,1,4",
                          "b,ds,ocr,1,1,m0,1,3", "b,ds,ocr,1,1,m1,1,4"])
    t = load_outcomes(p, pool, normalize=True)
    np.testing.assert_allclose(t.costs, [[0.25, 1.0], [0.75, 1.0]])


def test_pool_round_trip(tmp_path):
    pool = [ModelMeta("g", "GPT", "commercial", 10.0, 128000, frozenset({"text", "image"})),
            ModelMeta("q", "Qwen", "open_weight", 0.03, None, frozenset({"text"}))]
    write_pool(tmp_path / "p.csv", pool)
    assert load_pool(tmp_path / "p.csv") == pool


# ---- costs


def test_normalize_reference_prices():
    np.testing.assert_allclose(normalize_costs([10.0, 15.0, 0.03]), [10 / 15, 1.0, 0.002])


def test_normalize_single_and_zero():
    assert normalize_costs([5.0]).tolist() == [1.0]
    assert normalize_costs([0.0, 4.0]).tolist() == [0.0, 1.0]


def test_normalize_all_zero_raises():
    with pytest.raises(ValueError):
        normalize_costs([0.0, 0.0])


@given(st.lists(st.floats(0, 1e6, allow_nan=False), min_size=1, max_size=12)
       .filter(lambda xs: max(xs) > 0))
def test_normalize_idempotent(xs):
    once = normalize_costs(xs)
    assert once.max() == 1.0
    np.testing.assert_array_equal(normalize_costs(once), once)


@pytest.mark.parametrize("tokens,price,want", [(1_000_000, 10.0, 10.0), (0, 15.0, 0.0),
                                               (500_000, 0.03, 0.015)])
def test_token_cost(tokens, price, want):
    assert token_cost(tokens, price) == pytest.approx(want, abs=1e-15)


def test_token_cost_rejects_negative():
    with pytest.raises(ValueError):
        token_cost(-1, 1.0)


def test_instance_cost_only_output_unless_priced():
    m = ModelMeta("x", price_per_million_output_tokens=2.0)
    assert instance_raw_cost(m, 1_000_000, input_tokens=5_000_000) == 2.0
    m2 = ModelMeta("y", price_per_million_output_tokens=2.0, price_per_million_input_tokens=1.0)
    assert instance_raw_cost(m2, 1_000_000, input_tokens=1_000_000) == 3.0


# ---- splits


def _table(n, datasets=None):
    return tiny_table(np.ones((n, 2)) * 0.5, np.ones((n, 2)), datasets=datasets)


def test_split_sizes():
    s = make_splits(_table(100), 0.2, 0.25, seed=0)
    assert len(s.train) + len(s.val) == 20
    assert len(s.test) == 80
    assert len(s.val) == 5


def test_split_empty_val():
    s = make_splits(_table(100), 0.2, 0.0, seed=0)
    assert s.val == () and len(s.train) == 20


def test_split_is_deterministic_and_seed_sensitive():
    t = _table(200)
    assert make_splits(t, seed=3) == make_splits(t, seed=3)
    assert make_splits(t, seed=3).train != make_splits(t, seed=4).train


def test_split_stratified_by_dataset():
    ds = ["a"] * 30 + ["b"] * 70
    t = _table(100, ds)
    s = make_splits(t, 0.2, 0.0, seed=1)
    assert sum(ds[i] == "a" for i in s.train) == 6
    assert sum(ds[i] == "b" for i in s.train) == 14


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 300), st.floats(0.05, 0.95), st.floats(0, 0.9), st.integers(0, 99))
def test_split_partitions_rows(n, tf, vf, seed):
    s = make_splits(_table(n), tf, vf, seed)
    all_rows = sorted(s.train + s.val + s.test)
    assert all_rows == list(range(n))
    assert len(s.train) + len(s.val) == round(n * tf)


def test_split_json_round_trip():
    t = _table(50)
    s = make_splits(t, seed=2)
    assert SplitSpec.from_json(s.to_json(), t) == s


def test_split_json_rejects_unknown_instance():
    t = _table(5)
    text = make_splits(t, seed=0).to_json().replace("i00000", "zzz")
    with pytest.raises(ValidationError):
        SplitSpec.from_json(text, t)


# ---- best single model


def test_best_single_two_models():
    t = tiny_table([[0.9, 0.8]] * 4, [[1.0, 0.1]] * 4)
    r = best_single_model(t)
    assert (r.p_best, r.c_best, r.c_min, r.c_max) == (0.9, 1.0, 0.1, 1.0)


def test_best_single_one_model():
    r = best_single_model(tiny_table([[0.4]], [[0.3]]))
    assert r.model_id == "m0" and r.c_min == r.c_max == 0.3


def test_best_single_tie_goes_to_cheaper():
    r = best_single_model(tiny_table([[0.5, 0.5]], [[0.2, 0.9]]))
    assert r.model_id == "m0" and r.c_best == 0.2
    r = best_single_model(tiny_table([[0.5, 0.5]], [[0.9, 0.2]]))
    assert r.model_id == "m1"


def test_best_single_skips_partially_observed():
    t = tiny_table([[0.9, 0.5], [np.nan, 0.5]], [[1.0, 0.1], [np.nan, 0.1]])
    assert best_single_model(t).model_id == "m1"


def test_csv_header_is_exact(tmp_path):
    t = tiny_table([[0.5]], [[0.1]])
    write_outcomes(tmp_path / "o.csv", t)
    with (tmp_path / "o.csv").open() as fh:
        assert next(csv.reader(fh)) == HEADER.strip().split(",")
