import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from idgeom.analysis import binned_std, correlate, median_importance_ranks, metric_matrix, ols_fit
from idgeom.core import RngSpec
from idgeom.errors import DegenerateInput, InvalidArgument
from idgeom.report import Report

vectors = st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=30)


@pytest.mark.parametrize("method", ["pearson", "spearman"])
def test_correlate_examples(method):
    xs = [0.3, 1.5, -2.0, 4.0]
    assert correlate(xs, xs, method) == 1.0
    assert correlate([1, 2, 3], [3, 2, 1], method) == -1.0
    with pytest.raises(DegenerateInput):
        correlate([1, 1, 1], [1, 2, 3], method)
    with pytest.raises(InvalidArgument):
        correlate([1, 2], [1, 2], method)


def test_spearman_monotone_and_ties():
    assert correlate([1, 2, 3], [1, 4, 9], "spearman") == 1.0
    # average ranks: [1.5, 1.5, 3] vs [1, 2, 3]
    assert math.isclose(correlate([1, 1, 2], [1, 2, 3], "spearman"), math.sqrt(3) / 2, rel_tol=1e-12)
    with pytest.raises(InvalidArgument):
        correlate([1, 2, 3], [1, 2, 3], "kendall")


@given(st.lists(st.tuples(st.floats(-100, 100), st.floats(-100, 100)), min_size=3, max_size=25),
       st.floats(0.1, 10), st.floats(-50, 50))
def test_correlate_symmetry_and_affine_invariance(pairs, a, b):
    x = np.array([p[0] for p in pairs])
    y = np.array([p[1] for p in pairs])
    if np.ptp(x) < 1e-3 or np.ptp(y) < 1e-3:
        return
    r = correlate(x, y)
    assert -1 <= r <= 1
    assert math.isclose(r, correlate(y, x), abs_tol=1e-12)
    assert math.isclose(r, correlate(a * x + b, y), abs_tol=1e-9)
    xg = np.round(x, 3)  # a grid on which the map below stays strictly monotone in floats
    if np.ptp(xg) > 0:
        assert correlate(xg, y, "spearman") == correlate(np.exp(xg / 50), y, "spearman")


def test_binned_std_examples():
    bins = binned_std([5.0, 5.0, 5.0, 5.0], [1, 3, 25, 27], 20)
    assert [b.std for b in bins] == [0, 0]
    bins = binned_std([1.0, 2.0], [10, 25], 20)
    assert [(b.lo, b.hi, b.count, b.std) for b in bins] == [(0, 20, 1, None), (20, 40, 1, None)]
    (b,) = binned_std([1.0, 3.0], [0, 1], 20)
    assert math.isclose(b.std, math.sqrt(2), rel_tol=1e-15)
    with pytest.raises(InvalidArgument):
        binned_std([1.0], [1, 2], 5)
    with pytest.raises(InvalidArgument):
        binned_std([1.0], [1], 0)


def test_ols_exact_recovery(rng):
    X = rng.standard_normal((100, 3))
    y = X @ [1.5, -2.0, 0.5] + 3.0
    fit = ols_fit(X, y, rng=RngSpec(1))
    assert abs(fit.test_pearson - 1.0) <= 1e-9
    assert not fit.rank_deficient
    np.testing.assert_allclose(fit.predict(X), y, atol=1e-9)
    assert fit.importance_rank.tolist() == [2, 1, 3]
    assert len(fit.train_index) == 80 and len(fit.test_index) == 20
    assert set(fit.train_index).isdisjoint(fit.test_index)


def test_ols_null_model_across_seeds():
    # null simulation: features independent of the target
    rs = []
    for seed in range(200):
        g = np.random.default_rng(seed)
        fit = ols_fit(g.standard_normal((200, 2)), g.standard_normal(200), rng=RngSpec(seed))
        rs.append(abs(fit.test_pearson))
    rs = np.array(rs)
    assert np.median(rs) < 0.3
    assert np.mean(rs < 0.3) >= 0.9
    g = np.random.default_rng(0)
    assert abs(ols_fit(g.standard_normal((200, 2)), g.standard_normal(200)).test_pearson) < 0.3


def test_ols_rank_deficiency(rng):
    fit = ols_fit(rng.standard_normal((10, 12)), rng.standard_normal(10))
    assert fit.rank_deficient
    X = rng.standard_normal((50, 2))
    assert ols_fit(np.column_stack([X, X[:, 0]]), rng.standard_normal(50)).rank_deficient
    with pytest.raises(InvalidArgument):
        ols_fit(X, np.zeros(49))
    with pytest.raises(InvalidArgument):
        ols_fit(X, np.zeros(50), split=1.0)


def test_ols_split_is_seeded(rng):
    X, y = rng.standard_normal((60, 2)), rng.standard_normal(60)
    a, b = ols_fit(X, y, rng=RngSpec(4)), ols_fit(X, y, rng=RngSpec(4))
    assert a.test_index.tolist() == b.test_index.tolist()
    assert a.test_index.tolist() != ols_fit(X, y, rng=RngSpec(5)).test_index.tolist()


def test_importance_ranks_invariant_to_rescaling(rng):
    X = rng.standard_normal((120, 4))
    y = X @ [0.2, 3.0, -1.0, 0.7] + 0.1 * rng.standard_normal(120)
    scaled = X * [1000.0, 0.001, 5.0, 1e-6]
    fits = [ols_fit(X, y, rng=RngSpec(s)) for s in range(5)]
    fits_scaled = [ols_fit(scaled, y, rng=RngSpec(s)) for s in range(5)]
    np.testing.assert_array_equal(median_importance_ranks(fits), median_importance_ranks(fits_scaled))
    assert median_importance_ranks(fits).tolist() == [4, 1, 2, 3]


def _report(cols):
    r = Report()
    n = len(next(iter(cols.values())))
    for i in range(n):
        r.add_row(f"r{i}", {k: v[i] for k, v in cols.items()})
    return r


def test_metric_matrix_examples():
    v = [1.0, 3.0, 2.0, 5.0]
    names, m = metric_matrix(_report({"a": v, "b": list(v), "c": [-x for x in v]}))
    assert names == ["a", "b", "c"]
    assert m[0, 1] == 1.0 and m[0, 2] == -1.0
    np.testing.assert_array_equal(m, m.T)
    assert np.all(np.diag(m) == 1)


def test_metric_matrix_gating_and_pairwise_deletion():
    r = _report({
        "x": [1.0, 2.0, 3.0, 4.0, 5.0],
        "y": [2.0, 4.0, 7.0, 8.0, 100.0],
        "y_valid": [True, True, True, True, False],
        "short": [False, False, False, False, False],
        "z": [1.0, None, 3.0, 2.0, 5.0],
    })
    names, m = metric_matrix(r)
    assert names == ["x", "y", "z"]
    assert math.isclose(m[0, 1], correlate([1, 2, 3, 4], [2, 4, 7, 8]), rel_tol=1e-12)
    _, m_all = metric_matrix(r, include_invalid=True)
    assert m_all[0, 1] != m[0, 1]
    r.rows["r0"]["short"] = r.rows["r1"]["short"] = True
    with pytest.raises(DegenerateInput):
        metric_matrix(r)  # y keeps only two rows once short rows go
    assert metric_matrix(r, include_short=True)[1].shape == (3, 3)


def test_metric_matrix_errors_and_constant_columns():
    with pytest.raises(DegenerateInput):
        metric_matrix(_report({"a": [1.0, 2.0, 3.0]}))
    names, m = metric_matrix(_report({"a": [1.0, 2.0, 3.0], "k": [1.0, 1.0, 1.0]}))
    assert math.isnan(m[0, 1])
