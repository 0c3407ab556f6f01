"""Intrinsic-dimension estimators: PHDim, TwoNN, MLE and TLE.

Every estimator maps a :class:`~idgeom.core.PointCloud` to an
:class:`IdEstimate`. Values outside the plausibility window are still
reported, but with ``valid=False``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .core import (
    DENSE_MST_LIMIT,
    RngSpec,
    _boruvka_blocked,
    _prim_dense,
    as_cloud,
    fit_line,
    knn,
    pairwise_distances,
    parallel_map,
    total_length,
)
from .errors import DegenerateFit, DegenerateInput, IdGeomError, InvalidArgument

METHODS = ("phd", "twonn", "mle", "tle")

# Plausible ID range for text-embedding clouds.
DEFAULT_WINDOW = (2.0, 18.0)


@dataclass
class IdEstimate:
    """Result of one estimator run.

    ``samples`` holds per-restart values for stochastic methods (PHDim) and is
    empty otherwise. ``diagnostics`` is method specific.
    """

    method: str
    value: float
    valid: bool
    samples: tuple[float, ...] = ()
    diagnostics: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def failed(cls, method: str, error: Exception) -> "IdEstimate":
        return cls(method, math.nan, False, (), {"error": f"{type(error).__name__}: {error}"})


def _in_window(value: float, window) -> bool:
    if not (math.isfinite(value) and value > 0):
        return False
    if window is None:
        return True
    lo, hi = window
    return lo <= value <= hi


def _fmean(values: np.ndarray) -> float:
    # exactly rounded sum, so the mean does not depend on point order
    return math.fsum(values.tolist()) / len(values)


# ----------------------------------------------------------------------------
# PHDim
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class PhdConfig:
    """Subsampling schedule for :func:`phd_estimate`.

    ``sizes=None`` means 8 geometrically spaced sizes from n/16 to n.
    """

    sizes: tuple[int, ...] | None = None
    restarts: int = 15
    aggregate: str = "median"
    rng: RngSpec = RngSpec()
    slope_guard: float = 0.95


def default_phd_sizes(n: int, count: int = 8, min_size: int = 8) -> tuple[int, ...]:
    lo = max(n / 16, min_size)
    if n < lo:
        raise InvalidArgument(f"PHD needs at least {min_size} points, got {n}")
    sizes = np.unique(np.round(np.geomspace(lo, n, count)).astype(int))
    return tuple(int(s) for s in sizes)


def canonical_order(x: np.ndarray) -> np.ndarray:
    """Point order that depends only on the point set, not on row order.

    Points are ranked by distance to the centroid (isometry invariant), ties by
    coordinates. The centroid uses exactly rounded sums.
    """
    centroid = np.array([math.fsum(col) for col in x.T.tolist()]) / x.shape[0]
    radius = np.sqrt(((x - centroid) ** 2).sum(axis=1))
    return np.lexsort(tuple(x.T[::-1]) + (radius,))


def phd_estimate(cloud, cfg: PhdConfig | None = None, *, window=DEFAULT_WINDOW,
                 threads: int | None = None) -> IdEstimate:
    """Persistent-homology dimension from the growth of MST length with sample size.

    For each size ``m`` the MST length of ``restarts`` uniform subsamples is
    aggregated; the slope ``s`` of log L against log m gives ``1 / (1 - s)``.
    """
    cfg = cfg or PhdConfig()
    x = as_cloud(cloud).data
    n = x.shape[0]
    sizes = tuple(sorted(set(cfg.sizes))) if cfg.sizes is not None else default_phd_sizes(n)
    if len(sizes) < 3:
        raise InvalidArgument(f"PHD needs at least 3 distinct subsample sizes, got {sizes}")
    if sizes[-1] > n:
        raise InvalidArgument(f"largest subsample size {sizes[-1]} exceeds n={n}")
    if sizes[-1] < 8 or sizes[0] < 2:
        raise InvalidArgument(f"subsample sizes must be >= 2 with maximum >= 8, got {sizes}")
    if cfg.restarts < 1:
        raise InvalidArgument("restarts must be positive")
    if cfg.aggregate not in ("mean", "median"):
        raise InvalidArgument(f"aggregate must be 'mean' or 'median', got {cfg.aggregate!r}")

    x = x[canonical_order(x)]
    dist = pairwise_distances(x, threads=1) if n <= DENSE_MST_LIMIT else None

    def run(task: tuple[int, int]) -> float:
        j, r = task
        idx = cfg.rng.generator(j, r).choice(n, size=sizes[j], replace=False)
        if dist is not None:
            edges = _prim_dense(dist[np.ix_(idx, idx)])
        else:
            edges = _boruvka_blocked(x[idx], threads=1)
        return total_length(edges)

    tasks = [(j, r) for j in range(len(sizes)) for r in range(cfg.restarts)]
    lengths = np.array(parallel_map(run, tasks, threads)).reshape(len(sizes), cfg.restarts)

    if not np.any(lengths > 0):
        raise DegenerateInput("all subsampled MST lengths are zero (duplicate-collapsed cloud)")
    agg = np.median(lengths, axis=1) if cfg.aggregate == "median" else lengths.mean(axis=1)
    usable = agg > 0
    if usable.sum() < 3:
        raise InvalidArgument(f"only {int(usable.sum())} subsample sizes have nonzero MST length")
    log_n = np.log(np.asarray(sizes, dtype=float))
    fit = fit_line(log_n[usable], np.log(agg[usable]))
    s = fit.slope
    value = 1.0 / (1.0 - s) if s < 1 else math.inf

    samples = []
    for r in range(cfg.restarts):
        ok = lengths[:, r] > 0
        try:
            sr = fit_line(log_n[ok], np.log(lengths[ok, r])).slope
        except DegenerateFit:
            continue
        samples.append(1.0 / (1.0 - sr) if sr < 1 else math.inf)

    valid = 0 < s < cfg.slope_guard and _in_window(value, window)
    return IdEstimate(
        "phd", value, valid, tuple(samples),
        {"slope": s, "intercept": fit.intercept, "residual": fit.residual,
         "sizes": list(sizes), "lengths": agg.tolist(), "restarts": cfg.restarts},
    )


# ----------------------------------------------------------------------------
# TwoNN
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class TwoNnRatios:
    """Second- to first-neighbour distance ratios, sorted ascending.

    ``excluded`` counts points dropped because their nearest neighbour sits at
    distance zero.
    """

    mu: np.ndarray
    excluded: int = 0


def twonn_ratios(cloud, threads: int | None = None) -> TwoNnRatios:
    nb = knn(cloud, 2, threads)
    r1, r2 = nb.distances[:, 0], nb.distances[:, 1]
    ok = r1 > 0
    return TwoNnRatios(np.sort(r2[ok] / r1[ok]), int((~ok).sum()))


def golden_section_min(f, lo: float, hi: float, tol: float = 1e-10) -> float:
    """Minimise a unimodal function on [lo, hi]."""
    inv_phi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol * max(1.0, abs(a) + abs(b)):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return (a + b) / 2


TWONN_BOUNDS = (0.01, 64.0)


def twonn_from_ratios(ratios: TwoNnRatios, discard_fraction: float = 0.1, *,
                      window=DEFAULT_WINDOW) -> IdEstimate:
    """Fit the Pareto law ``P(mu <= t) = 1 - t**-d`` to observed ratios.

    The largest ``discard_fraction`` of ratios are treated as censored: they
    contribute only the model tail mass beyond the largest kept ratio. The
    divergence between the empirical distribution and the model is minimised
    over d by golden-section search.
    """
    if not 0 <= discard_fraction < 1:
        raise InvalidArgument(f"discard_fraction must lie in [0, 1), got {discard_fraction}")
    mu = np.sort(np.asarray(ratios.mu, dtype=np.float64))
    total = mu.size
    nominal = total - int(discard_fraction * total)
    if nominal < 3:
        raise DegenerateInput(f"only {nominal} usable neighbour ratios")
    # values tied with the cut are all kept, so the discarded set is well defined
    kept = int(np.searchsorted(mu, mu[nominal - 1], side="right"))
    n_drop = total - kept
    log_mu = np.log(mu)
    sum_kept = math.fsum(log_mu[:kept].tolist())
    log_cut = float(log_mu[kept - 1])
    tail_sum = sum_kept + n_drop * log_cut

    def divergence(d: float) -> float:
        # cross-entropy of the empirical measure against the model; differs from
        # the KL divergence only by the (d-independent) empirical entropy
        body = -(kept * math.log(d) - (d + 1) * sum_kept)
        tail = n_drop * d * log_cut
        return (body + tail) / total

    lo, hi = TWONN_BOUNDS
    value = golden_section_min(divergence, lo, hi)
    # the search only resolves a smooth minimum to ~sqrt(eps); finish with
    # Newton steps on the gradient -kept/d + tail_sum
    for _ in range(8):
        step = (tail_sum - kept / value) * value * value / kept
        nxt = min(max(value - step, lo), hi)
        if nxt == value:
            break
        value = nxt

    # uncensored Pareto MLE over all usable ratios, kept as a cross-check
    sum_all = math.fsum(log_mu.tolist())
    pareto = total / sum_all if sum_all > 0 else math.inf

    # linear fit of -log(1 - F) against log mu through the origin
    n_fit = min(kept, total - 1)  # F = 1 at the largest ratio
    y = -np.log1p(-np.arange(1, n_fit + 1) / total)
    xk = log_mu[:n_fit]
    denom = float(np.dot(xk, xk))
    regression = float(np.dot(xk, y) / denom) if denom > 0 else math.inf

    return IdEstimate(
        "twonn", value, _in_window(value, window), (),
        {"pareto_mle": pareto, "regression": regression, "n_ratios": total,
         "kept": kept, "discard_fraction": discard_fraction, "excluded": ratios.excluded},
    )


def twonn_estimate(cloud, discard_fraction: float = 0.1, *, window=DEFAULT_WINDOW,
                   threads: int | None = None) -> IdEstimate:
    cloud = as_cloud(cloud)
    if cloud.n < 3:
        raise InvalidArgument(f"TwoNN needs n >= 3, got {cloud.n}")
    return twonn_from_ratios(twonn_ratios(cloud, threads), discard_fraction, window=window)


# ----------------------------------------------------------------------------
# MLE (Levina-Bickel) and TLE
# ----------------------------------------------------------------------------


def _check_k(k: int, n: int) -> None:
    if k >= n:
        raise InvalidArgument(f"k={k} must be smaller than n={n}")
    if k < 3:
        raise InvalidArgument(f"k must be >= 3, got {k}")


def mle_inverse_local(dists: np.ndarray) -> np.ndarray:
    """Per-point ``1/m(x) = mean_j log(T_k / T_j)`` over ``j < k``.

    ``dists`` holds ascending neighbour distances, one row per point; rows with
    a zero distance must be removed beforehand.
    """
    dists = np.atleast_2d(np.asarray(dists, dtype=np.float64))
    k = dists.shape[1]
    return np.log(dists[:, -1:] / dists[:, :-1]).sum(axis=1) / (k - 1)


def mle_local(dists: np.ndarray) -> np.ndarray:
    """Per-point Levina-Bickel dimension ``m(x)``."""
    with np.errstate(divide="ignore"):
        return 1.0 / mle_inverse_local(dists)


def _inverse_average(inv: np.ndarray) -> float:
    mean_inv = _fmean(inv)
    return 1.0 / mean_inv if mean_inv > 0 else math.inf


def mle_estimate(cloud, k: int = 20, *, window=DEFAULT_WINDOW,
                 threads: int | None = None) -> IdEstimate:
    """Levina-Bickel MLE: the mean of the per-point dimensions ``m(x)``.

    The inverse of the mean inverse (MacKay-Ghahramani) is reported in the
    diagnostics as ``inverse_average``.
    """
    cloud = as_cloud(cloud)
    _check_k(k, cloud.n)
    d = knn(cloud, k, threads).distances
    ok = d[:, 0] > 0
    if not ok.any():
        raise DegenerateInput("every point has a zero-distance neighbour")
    inv = mle_inverse_local(d[ok])
    with np.errstate(divide="ignore"):
        value = _fmean(1.0 / inv)
    return IdEstimate("mle", value, _in_window(value, window), (),
                      {"k": k, "excluded": int((~ok).sum()),
                       "inverse_average": _inverse_average(inv)})


def tle_local(x: np.ndarray, nb_idx: np.ndarray, nb_dist: np.ndarray) -> np.ndarray:
    """Tight-locality estimates for a batch of query points.

    For a query with neighbour distances ``u_1 <= ... <= u_k = r`` and pairwise
    neighbour distances ``v_ij``, each ordered pair contributes two distance
    measurements ``s_ij`` and ``t_ij`` derived from the triangle (q, v_i, v_j)
    and its reflection; together with the ``u_i`` they are plugged into the
    maximum-likelihood form ``-count / sum(log(measurement / r))``.
    Queries with a zero query-neighbour distance must be removed beforehand;
    queries with two coincident neighbours yield NaN.
    """
    b, k = nb_dist.shape
    pts = x[nb_idx]  # (b, k, D)
    v2 = ((pts[:, :, None, :] - pts[:, None, :, :]) ** 2).sum(axis=-1)
    r = nb_dist[:, -1][:, None, None]
    r2 = r**2
    ui2 = (nb_dist**2)[:, :, None]
    uj2 = (nb_dist**2)[:, None, :]
    z2 = 2 * ui2 + 2 * uj2 - v2
    gap = r2 - ui2  # zero when u_i is tied with the k-th distance
    on_rim = np.broadcast_to(gap <= 0, v2.shape)

    def measure(w2: np.ndarray) -> np.ndarray:
        a = ui2 + w2 - uj2
        with np.errstate(divide="ignore", invalid="ignore"):
            inner = r * (np.sqrt(a**2 + 4 * w2 * gap) - a) / (2 * gap)
            rim = r * w2 / (r2 + w2 - uj2)
        return np.where(on_rim, rim, inner)

    s = measure(v2)
    t = measure(z2)
    off = ~np.eye(k, dtype=bool)[None]
    rr = np.broadcast_to(r, s.shape)
    good_s = off & np.isfinite(s) & (s > 0)
    good_t = off & np.isfinite(t) & (t > 0)
    log_s = np.log(np.where(good_s, s, rr) / rr).sum(axis=(1, 2))
    log_t = np.log(np.where(good_t, t, rr) / rr).sum(axis=(1, 2))
    log_u = np.log(nb_dist / nb_dist[:, -1:]).sum(axis=1)
    count = good_s.sum(axis=(1, 2)) + good_t.sum(axis=(1, 2)) + 2 * k
    total = log_s + log_t + 2 * log_u
    with np.errstate(divide="ignore"):
        local = -count / total
    coincident = ((v2 == 0) & off).any(axis=(1, 2))
    local[coincident] = np.nan
    return local


def tle_estimate(cloud, k: int = 20, *, window=DEFAULT_WINDOW,
                 threads: int | None = None) -> IdEstimate:
    """Tight local estimator (Amsaleg et al.), averaged over query points like the MLE."""
    cloud = as_cloud(cloud)
    _check_k(k, cloud.n)
    x = cloud.data
    nb = knn(cloud, k, threads)
    ok = nb.distances[:, 0] > 0
    rows = np.flatnonzero(ok)
    batch = max(1, (1 << 21) // (k * k * x.shape[1]))
    chunks = [rows[i:i + batch] for i in range(0, rows.size, batch)]

    parts = parallel_map(lambda c: tle_local(x, nb.indices[c], nb.distances[c]), chunks, threads)
    local = np.concatenate(parts) if parts else np.empty(0)
    dup = np.isnan(local)
    local = local[~dup]
    excluded = int((~ok).sum() + dup.sum())
    if local.size == 0:
        raise DegenerateInput("every neighbourhood contains a zero distance")
    value = _fmean(local)
    return IdEstimate("tle", value, _in_window(value, window), (),
                      {"k": k, "excluded": excluded, "inverse_average": _inverse_average(1.0 / local)})


# ----------------------------------------------------------------------------
# Bundle
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class EstimatorConfig:
    methods: tuple[str, ...] = METHODS
    phd: PhdConfig = PhdConfig()
    twonn_discard: float = 0.1
    mle_k: int = 20
    tle_k: int = 20
    window: tuple[float, float] | None = DEFAULT_WINDOW


def estimate_all(cloud, config: EstimatorConfig | None = None,
                 threads: int | None = None) -> dict[str, IdEstimate]:
    """Run the configured estimators; failures become invalid entries."""
    config = config or EstimatorConfig()
    unknown = set(config.methods) - set(METHODS)
    if unknown:
        raise InvalidArgument(f"unknown estimator(s): {sorted(unknown)}")
    runners = {
        "phd": lambda c: phd_estimate(c, config.phd, window=config.window, threads=threads),
        "twonn": lambda c: twonn_estimate(c, config.twonn_discard, window=config.window,
                                          threads=threads),
        "mle": lambda c: mle_estimate(c, config.mle_k, window=config.window, threads=threads),
        "tle": lambda c: tle_estimate(c, config.tle_k, window=config.window, threads=threads),
    }
    out = {}
    for method in config.methods:
        try:
            out[method] = runners[method](cloud)
        except IdGeomError as exc:
            out[method] = IdEstimate.failed(method, exc)
    return out


def values(estimates: dict[str, IdEstimate], *, valid_only: bool = False) -> dict[str, float]:
    return {m: (e.value if (e.valid or not valid_only) else math.nan) for m, e in estimates.items()}


def estimate(cloud, method: str, **kwargs) -> IdEstimate:
    """Dispatch by method name."""
    fns = {"phd": phd_estimate, "twonn": twonn_estimate, "mle": mle_estimate, "tle": tle_estimate}
    try:
        fn = fns[method]
    except KeyError:
        raise InvalidArgument(f"unknown estimator {method!r}; choose from {METHODS}")
    return fn(cloud, **kwargs)


__all__: Sequence[str] = (
    "DEFAULT_WINDOW", "METHODS", "EstimatorConfig", "IdEstimate", "PhdConfig", "TwoNnRatios",
    "canonical_order", "default_phd_sizes", "estimate", "estimate_all", "golden_section_min",
    "mle_estimate", "mle_inverse_local", "mle_local", "phd_estimate", "tle_estimate",
    "tle_local", "twonn_estimate", "twonn_from_ratios", "twonn_ratios", "values",
)
