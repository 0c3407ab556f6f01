"""Geometric and numeric primitives shared by the estimators.

Distances are always Euclidean and accumulated in float64. Every routine that
splits work across threads partitions it into row blocks whose results do not
depend on the block layout, so outputs are identical at any thread count.
"""

from __future__ import annotations

import contextlib
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, NamedTuple, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DegenerateFit, InvalidArgument, InvalidInput

THREADS_ENV = "IDGEOM_THREADS"

# Prim over a dense matrix up to this size, blocked Boruvka above.
DENSE_MST_LIMIT = 4096

# Target number of float64 entries per distance block (~8 MB).
_BLOCK_ENTRIES = 1 << 20

_thread_override: int | None = None


def get_threads() -> int:
    """Return the worker count used when a function is called with ``threads=None``."""
    if _thread_override is not None:
        return _thread_override
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            value = int(env)
        except ValueError:
            raise InvalidArgument(f"{THREADS_ENV} must be a positive integer, got {env!r}")
        if value < 1:
            raise InvalidArgument(f"{THREADS_ENV} must be a positive integer, got {env!r}")
        return value
    return os.cpu_count() or 1


@contextlib.contextmanager
def thread_limit(n: int) -> Iterator[None]:
    """Temporarily fix the default worker count."""
    global _thread_override
    if n < 1:
        raise InvalidArgument("thread count must be >= 1")
    previous = _thread_override
    _thread_override = n
    try:
        yield
    finally:
        _thread_override = previous


def parallel_map(fn: Callable, items: Sequence, threads: int | None = None) -> list:
    """Map ``fn`` over ``items`` in a thread pool, preserving input order."""
    threads = get_threads() if threads is None else threads
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class RngSpec:
    """Seed plus substream index for the counter-based (Philox) generator.

    ``generator(i, j, ...)`` derives an independent stream keyed by the extra
    indices, so a parallel restart ``i`` always draws the same numbers no matter
    which worker runs it.
    """

    seed: int = 0
    stream: int = 0

    def __post_init__(self):
        for name in ("seed", "stream"):
            value = getattr(self, name)
            if not 0 <= value < 2**64:
                raise InvalidArgument(f"{name} must be a 64-bit unsigned integer, got {value}")

    def generator(self, *keys: int) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream, *keys))
        return np.random.Generator(np.random.Philox(seq))

    def child(self, stream: int) -> "RngSpec":
        return RngSpec(self.seed, stream)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """An ``n x D`` matrix of row points.

    Attributes:
        data: float64 array of shape (n, D), read-only.
        label: optional source identifier (document id, file record, ...).
        meta: free-form provenance, e.g. ``{"kind": "cube", "d": 4}`` for synthetic clouds.
    """

    data: np.ndarray
    label: str | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        if arr.ndim != 2:
            raise InvalidInput(f"point cloud must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidInput(f"point cloud must have n >= 1 and D >= 1, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidInput("point cloud contains NaN or Inf")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def D(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray) -> "PointCloud":
        return PointCloud(data, label=self.label, meta=dict(self.meta))


def as_cloud(x) -> PointCloud:
    """Coerce arrays (1-D arrays are read as one coordinate per point) to a PointCloud."""
    if isinstance(x, PointCloud):
        return x
    return PointCloud(x)


def _row_blocks(n_rows: int, n_cols: int) -> list[slice]:
    step = max(1, _BLOCK_ENTRIES // max(n_cols, 1))
    return [slice(i, min(i + step, n_rows)) for i in range(0, n_rows, step)]


def pairwise_distances(cloud, threads: int | None = None) -> np.ndarray:
    """Dense Euclidean distance matrix, computed in parallel row blocks.

    Each entry is evaluated directly as ``sqrt(sum((x_i - x_j)**2))`` so the
    matrix is exactly symmetric with an exact zero diagonal, and the value of an
    entry does not depend on how rows were grouped into blocks.
    """
    x = as_cloud(cloud).data
    n = x.shape[0]
    out = np.empty((n, n), dtype=np.float64)

    def fill(block: slice) -> None:
        out[block] = cdist(x[block], x)

    parallel_map(fill, _row_blocks(n, n), threads)
    return out


class Neighbors(NamedTuple):
    """k nearest neighbours of every point, self excluded.

    ``indices`` and ``distances`` have shape (n, k); rows are sorted by
    ascending distance with ties broken by the smaller index. ``duplicates`` is
    True when some point has a neighbour at distance exactly zero.
    """

    indices: np.ndarray
    distances: np.ndarray
    duplicates: bool


def knn(cloud, k: int, threads: int | None = None) -> Neighbors:
    """Exact k-nearest-neighbour search over dense distance blocks."""
    x = as_cloud(cloud).data
    n = x.shape[0]
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise InvalidArgument(f"k must be a positive integer, got {k!r}")
    if k >= n:
        raise InvalidArgument(f"k={k} must be smaller than the number of points n={n}")
    indices = np.empty((n, k), dtype=np.intp)
    distances = np.empty((n, k), dtype=np.float64)

    def fill(block: slice) -> None:
        d = cdist(x[block], x)
        rows = np.arange(block.stop - block.start)
        d[rows, rows + block.start] = np.inf
        # stable sort keeps equal distances in index order
        order = np.argsort(d, axis=1, kind="stable")[:, :k]
        indices[block] = order
        distances[block] = np.take_along_axis(d, order, axis=1)

    parallel_map(fill, _row_blocks(n, n), threads)
    return Neighbors(indices, distances, bool(np.any(distances[:, 0] == 0.0)))


def _prim_dense(dist: np.ndarray) -> np.ndarray:
    """MST edge weights from a dense distance matrix (Prim, O(n^2))."""
    n = dist.shape[0]
    if n < 2:
        return np.empty(0)
    remaining = np.arange(1, n)
    best = dist[0, 1:].copy()
    edges = np.empty(n - 1)
    for t in range(n - 1):
        pos = int(np.argmin(best))
        edges[t] = best[pos]
        j = remaining[pos]
        last = remaining.size - 1
        remaining[pos] = remaining[last]
        best[pos] = best[last]
        remaining = remaining[:last]
        best = best[:last]
        np.minimum(best, dist[j, remaining], out=best)
    return edges


def _boruvka_blocked(x: np.ndarray, threads: int | None = None) -> np.ndarray:
    """MST edge weights via Boruvka rounds over blocked distance rows.

    Edges are ordered by (weight, min endpoint, max endpoint), a strict total
    order, which keeps the rounds cycle-free under ties.
    """
    n = x.shape[0]
    parent = np.arange(n)

    def find(i: int) -> int:
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    edges: list[float] = []
    comp = np.arange(n)
    blocks = _row_blocks(n, n)
    while len(edges) < n - 1:
        best_w = np.empty(n)
        best_j = np.empty(n, dtype=np.intp)

        def scan(block: slice) -> None:
            d = cdist(x[block], x)
            d[comp[block][:, None] == comp[None, :]] = np.inf
            j = np.argmin(d, axis=1)
            best_j[block] = j
            best_w[block] = d[np.arange(d.shape[0]), j]

        parallel_map(scan, blocks, threads)
        i = np.arange(n)
        lo = np.minimum(i, best_j)
        hi = np.maximum(i, best_j)
        order = np.lexsort((hi, lo, best_w, comp))
        first = np.ones(n, dtype=bool)
        first[1:] = comp[order][1:] != comp[order][:-1]
        for idx in order[first]:
            a, b = find(int(idx)), find(int(best_j[idx]))
            if a != b:
                parent[a] = b
                edges.append(float(best_w[idx]))
        comp = np.array([find(v) for v in range(n)])
    return np.asarray(edges)


def mst_edge_lengths(cloud, method: str = "auto", threads: int | None = None) -> np.ndarray:
    """Edge lengths of a Euclidean minimum spanning tree (unordered)."""
    x = as_cloud(cloud).data
    n = x.shape[0]
    if method == "auto":
        method = "prim" if n <= DENSE_MST_LIMIT else "boruvka"
    if method == "prim":
        return _prim_dense(pairwise_distances(x, threads))
    if method == "boruvka":
        return _boruvka_blocked(x, threads)
    raise InvalidArgument(f"unknown MST method {method!r}")


def total_length(edges: np.ndarray) -> float:
    # fsum is exactly rounded, hence independent of edge order
    return math.fsum(edges.tolist())


def mst_total_length(cloud, method: str = "auto", threads: int | None = None) -> float:
    """Total length of the Euclidean minimum spanning tree; 0 for a single point."""
    return total_length(mst_edge_lengths(cloud, method, threads))


class LineFit(NamedTuple):
    slope: float
    intercept: float
    residual: float  # sum of squared residuals


def fit_line(xs: Sequence[float], ys: Sequence[float]) -> LineFit:
    """Ordinary least-squares line ``y = slope * x + intercept``."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidArgument("xs and ys must be 1-D sequences of equal length")
    if x.size < 2 or np.all(x == x[0]):
        raise DegenerateFit("need at least two distinct x values")
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    slope = float(np.dot(dx, y - ym) / np.dot(dx, dx))
    intercept = float(ym - slope * xm)
    resid = y - (slope * x + intercept)
    return LineFit(slope, intercept, float(np.dot(resid, resid)))
