import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.sparse.csgraph import minimum_spanning_tree
from scipy.spatial.distance import cdist, pdist, squareform

from idgeom.core import RngSpec, fit_line, thread_limit
from idgeom.errors import DegenerateInput, InvalidArgument
from idgeom.estimators import (
    EstimatorConfig,
    IdEstimate,
    PhdConfig,
    TwoNnRatios,
    canonical_order,
    default_phd_sizes,
    estimate,
    estimate_all,
    golden_section_min,
    mle_estimate,
    mle_local,
    phd_estimate,
    tle_estimate,
    tle_local,
    twonn_estimate,
    twonn_from_ratios,
    values,
)
from idgeom.synth import sample_manifold

from conftest import random_orthogonal

FAST_PHD = PhdConfig(restarts=5)


def cube(d, n, D=None, seed=0):
    return sample_manifold("cube", d, D or max(d, 2), n, rng=RngSpec(seed))


# -- PHD ---------------------------------------------------------------------

def test_phd_segment_example(rng):
    x = rng.random(512)
    est = phd_estimate(x, PhdConfig(sizes=(32, 64, 128, 256), restarts=20), window=None)
    assert 0.85 <= est.value <= 1.15
    assert len(est.samples) == 20


def test_phd_matches_brute_force_mst_oracle(rng):
    # recompute every subsample's MST with scipy and refit the log-log line
    x = rng.random((300, 3))
    cfg = PhdConfig(sizes=(40, 80, 160, 300), restarts=6, rng=RngSpec(4))
    est = phd_estimate(x, cfg, window=None)
    xs = x[canonical_order(x)]
    med = []
    for j, size in enumerate(cfg.sizes):
        lengths = []
        for r in range(cfg.restarts):
            idx = cfg.rng.generator(j, r).choice(len(xs), size=size, replace=False)
            lengths.append(minimum_spanning_tree(squareform(pdist(xs[idx]))).sum())
        med.append(np.median(lengths))
    s = fit_line(np.log(cfg.sizes), np.log(med)).slope
    assert math.isclose(est.diagnostics["slope"], s, rel_tol=1e-10)
    assert math.isclose(est.value, 1 / (1 - s), rel_tol=1e-10)


def test_phd_unit_square():
    x = np.random.default_rng(7).random((4096, 2))
    assert 1.7 <= phd_estimate(x, window=None).value <= 2.3


def test_phd_degenerate_and_bad_configs():
    with pytest.raises(DegenerateInput):
        phd_estimate(np.ones((64, 3)))
    x = np.random.default_rng(0).random((50, 2))
    with pytest.raises(InvalidArgument):
        phd_estimate(x, PhdConfig(sizes=(10, 20)))
    with pytest.raises(InvalidArgument):
        phd_estimate(x, PhdConfig(sizes=(10, 20, 60)))
    with pytest.raises(InvalidArgument):
        phd_estimate(x, PhdConfig(aggregate="mode"))
    with pytest.raises(InvalidArgument):
        phd_estimate(x, PhdConfig(restarts=0))
    with pytest.raises(InvalidArgument):
        phd_estimate(np.zeros((5, 1)))


def test_default_phd_schedule():
    sizes = default_phd_sizes(2000)
    assert len(sizes) == 8 and sizes[0] == 125 and sizes[-1] == 2000
    assert list(sizes) == sorted(set(sizes))


def test_phd_slope_guard_marks_invalid(rng):
    # a very high-dimensional cloud at small n pushes the slope towards 1
    x = rng.standard_normal((64, 400))
    est = phd_estimate(x, PhdConfig(sizes=(8, 16, 32, 64), restarts=3), window=None)
    assert est.valid == (0 < est.diagnostics["slope"] < 0.95)


def test_phd_mean_aggregate_runs(rng):
    est = phd_estimate(rng.random((200, 2)), PhdConfig(aggregate="mean", restarts=3), window=None)
    assert 1.4 < est.value < 2.6


# -- TwoNN -------------------------------------------------------------------

def test_twonn_constant_ratio_oracle():
    est = twonn_from_ratios(TwoNnRatios(np.full(500, math.e)), 0.1, window=None)
    assert est.diagnostics["pareto_mle"] == 1.0
    assert abs(est.value - 1.0) <= 0.05


def test_twonn_ties_at_cut_are_kept():
    mu = np.array([1.5] * 5 + [2.0] * 5)
    est = twonn_from_ratios(TwoNnRatios(mu), 0.3, window=None)
    assert est.diagnostics["kept"] == 10
    est = twonn_from_ratios(TwoNnRatios(np.arange(2.0, 12.0)), 0.3, window=None)
    assert est.diagnostics["kept"] == 7


@given(st.lists(st.floats(1.0001, 50.0), min_size=5, max_size=200), st.sampled_from([0.0, 0.1, 0.3]))
def test_twonn_matches_censored_closed_form(mu, frac):
    # minimiser of the censored objective in closed form
    mu = np.sort(np.asarray(mu))
    kept = len(mu) - int(frac * len(mu))
    if kept < 3:
        return
    kept = int(np.searchsorted(mu, mu[kept - 1], side="right"))
    logs = np.log(mu)
    closed = kept / (logs[:kept].sum() + (len(mu) - kept) * logs[kept - 1])
    est = twonn_from_ratios(TwoNnRatios(mu), frac, window=None)
    if 0.02 < closed < 60:
        assert math.isclose(est.value, closed, rel_tol=1e-12)


def test_twonn_unit_square_and_regression_oracle():
    x = np.random.default_rng(3).random((2000, 2))
    est = twonn_estimate(x, 0.1, window=None)
    assert 1.8 <= est.value <= 2.2
    d = np.sort(cdist(x, x), axis=1)[:, 1:3]
    mu = np.sort(d[:, 1] / d[:, 0])
    n = len(mu)
    keep = int(0.9 * n)
    f = np.arange(1, keep + 1) / n
    xs, ys = np.log(mu[:keep]), -np.log(1 - f)
    slope = (xs @ ys) / (xs @ xs)
    assert abs(est.value - slope) < 0.15
    assert math.isclose(est.diagnostics["regression"], slope, rel_tol=1e-9)


def test_twonn_duplicates_and_small_inputs():
    x = np.random.default_rng(1).random((50, 2))
    with pytest.raises(DegenerateInput):
        twonn_estimate(np.vstack([x, x]))
    with pytest.raises(InvalidArgument):
        twonn_estimate(x[:2])
    with pytest.raises(InvalidArgument):
        twonn_from_ratios(TwoNnRatios(np.full(10, 2.0)), 1.0)
    partial = twonn_estimate(np.vstack([x, x[:5]]), window=None)
    assert partial.diagnostics["excluded"] == 10


def test_golden_section_finds_minimum():
    assert abs(golden_section_min(lambda t: (t - 3.3) ** 2, 0, 10) - 3.3) < 1e-8


# -- MLE ---------------------------------------------------------------------

def test_mle_local_formula():
    assert mle_local(np.array([[1.0, math.e]]))[0] == 1.0


def test_mle_matches_brute_force():
    c = sample_manifold("cube", 4, 16, 2000, rng=RngSpec(2))
    est = mle_estimate(c, 20, window=None)
    assert 3.4 <= est.value <= 4.6
    d = np.sort(cdist(c.data, c.data), axis=1)[:, 1:21]
    m = (20 - 1) / np.log(d[:, -1:] / d[:, :-1]).sum(axis=1)
    assert math.isclose(est.value, m.mean(), rel_tol=1e-10)
    assert math.isclose(est.diagnostics["inverse_average"], 1 / (1 / m).mean(), rel_tol=1e-10)


def test_mle_bad_k_and_duplicates():
    x = np.random.default_rng(0).random((30, 2))
    with pytest.raises(InvalidArgument):
        mle_estimate(x, 30)
    with pytest.raises(InvalidArgument):
        mle_estimate(x, 2)
    with pytest.raises(DegenerateInput):
        mle_estimate(np.vstack([x, x]), 5)
    est = mle_estimate(np.vstack([x, x[:1]]), 5, window=None)
    assert est.diagnostics["excluded"] == 2


# -- TLE ---------------------------------------------------------------------

def tle_reference(nn, dists):
    """Loop-free transcription of the reference TLE for one query (no drops)."""
    r = dists[-1]
    k = len(dists)
    V = squareform(pdist(nn))
    Di = np.tile(dists[:, None], (1, k))
    Dj = Di.T
    Z2 = 2 * Di**2 + 2 * Dj**2 - V**2
    with np.errstate(divide="ignore", invalid="ignore"):
        S = r * (np.sqrt((Di**2 + V**2 - Dj**2) ** 2 + 4 * V**2 * (r**2 - Di**2))
                 - (Di**2 + V**2 - Dj**2)) / (2 * (r**2 - Di**2))
        T = r * (np.sqrt((Di**2 + Z2 - Dj**2) ** 2 + 4 * Z2 * (r**2 - Di**2))
                 - (Di**2 + Z2 - Dj**2)) / (2 * (r**2 - Di**2))
        rim = dists == r
        S[rim, :] = r * V[rim, :] ** 2 / (r**2 + V[rim, :] ** 2 - Dj[rim, :] ** 2)
        T[rim, :] = r * Z2[rim, :] / (r**2 + Z2[rim, :] - Dj[rim, :] ** 2)
    np.fill_diagonal(S, r)
    np.fill_diagonal(T, r)
    total = np.log(S / r).sum() + np.log(T / r).sum() + 2 * np.log(dists / r).sum()
    return -2 * k * k / total


def test_tle_matches_reference_per_point(rng):
    x = rng.standard_normal((150, 5))
    k = 10
    d = cdist(x, x)
    np.fill_diagonal(d, np.inf)
    idx = np.argsort(d, axis=1)[:, :k]
    dist = np.take_along_axis(d, idx, 1)
    ours = tle_local(x, idx, dist)
    ref = [tle_reference(x[idx[i]], dist[i]) for i in range(len(x))]
    np.testing.assert_allclose(ours, ref, rtol=1e-9)


def test_tle_ground_truth():
    seg = sample_manifold("segment", 1, 4, 2000, rng=RngSpec(1))
    assert 0.8 <= tle_estimate(seg, 20, window=None).value <= 1.2
    c = sample_manifold("cube", 4, 16, 2000, rng=RngSpec(1))
    assert 3.2 <= tle_estimate(c, 20, window=None).value <= 4.8


def test_tle_duplicates():
    x = np.random.default_rng(0).random((40, 2))
    with pytest.raises(DegenerateInput):
        tle_estimate(np.vstack([x, x]), 5)
    est = tle_estimate(np.vstack([x, x[:1]]), 5, window=None)
    assert est.diagnostics["excluded"] >= 2
    with pytest.raises(InvalidArgument):
        tle_estimate(x, 40)


# -- bundle, window, invariances ---------------------------------------------

def test_estimate_all_ground_truth():
    cfg = EstimatorConfig(phd=FAST_PHD, window=None)
    sq = sample_manifold("cube", 2, 5, 1500, rng=RngSpec(11))
    for m, e in estimate_all(sq, cfg).items():
        assert 1.6 <= e.value <= 2.4, m
    seg = sample_manifold("segment", 1, 5, 1500, rng=RngSpec(11))
    for m, e in estimate_all(seg, cfg).items():
        assert 0.8 <= e.value <= 1.2, m


def test_estimate_all_degenerate_never_raises():
    out = estimate_all(np.ones((100, 3)))
    assert set(out) == {"phd", "twonn", "mle", "tle"}
    assert all(not e.valid and math.isnan(e.value) and "error" in e.diagnostics
               for e in out.values())
    with pytest.raises(InvalidArgument):
        estimate_all(np.ones((10, 2)), EstimatorConfig(methods=("pca",)))


def test_validity_window():
    seg = sample_manifold("segment", 1, 3, 600, rng=RngSpec(0))
    est = twonn_estimate(seg)  # value near 1, outside [2, 18]
    assert not est.valid and est.value > 0
    assert twonn_estimate(seg, window=(0.5, 2.0)).valid
    assert twonn_estimate(seg, window=None).valid
    vals = values({"twonn": est}, valid_only=True)
    assert math.isnan(vals["twonn"])
    assert values({"twonn": est})["twonn"] == est.value


def test_dispatch():
    x = np.random.default_rng(0).random((100, 2))
    assert estimate(x, "mle", k=10).method == "mle"
    with pytest.raises(InvalidArgument):
        estimate(x, "pca")


def test_failed_estimate_record():
    e = IdEstimate.failed("mle", DegenerateInput("boom"))
    assert not e.valid and math.isnan(e.value) and "boom" in e.diagnostics["error"]


ALL = EstimatorConfig(phd=FAST_PHD, window=None)


@pytest.fixture(scope="module")
def base_cloud():
    return sample_manifold("cube", 3, 8, 600, rng=RngSpec(21))


@pytest.fixture(scope="module")
def base_estimates(base_cloud):
    return values(estimate_all(base_cloud, ALL))


@pytest.mark.parametrize("alpha", [0.5, 4.0, 1e-3, 7.3, 250.0])
def test_scale_invariance(base_cloud, base_estimates, alpha):
    scaled = values(estimate_all(base_cloud.with_data(alpha * base_cloud.data), ALL))
    for m in scaled:
        assert math.isclose(scaled[m], base_estimates[m], rel_tol=1e-9), m
    if math.log2(alpha).is_integer():
        # power-of-two scaling is exact, so every distance ratio is unchanged
        for m in ("twonn", "mle", "tle"):
            assert scaled[m] == base_estimates[m], m


def test_isometry_invariance(base_cloud, base_estimates):
    gen = np.random.default_rng(99)
    q = random_orthogonal(8, gen)
    moved = base_cloud.data @ q.T + gen.standard_normal(8) * 10
    out = values(estimate_all(moved, ALL))
    for m in out:
        assert math.isclose(out[m], base_estimates[m], rel_tol=1e-6), m


def test_permutation_bit_identity(base_cloud, base_estimates):
    perm = np.random.default_rng(5).permutation(base_cloud.n)
    assert values(estimate_all(base_cloud.data[perm], ALL)) == base_estimates


def test_thread_determinism(base_cloud, base_estimates):
    for t in (1, 4, 16):
        with thread_limit(t):
            assert values(estimate_all(base_cloud, ALL)) == base_estimates
        assert values(estimate_all(base_cloud, ALL, threads=t)) == base_estimates
