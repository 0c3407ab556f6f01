"""Synthetic manifolds of known intrinsic dimension.

Samples are drawn in native coordinates, mapped into R^D by a seeded random
isometry (orthonormal columns from the QR of a Gaussian matrix) and optionally
blurred with isotropic Gaussian noise.
"""

from __future__ import annotations

import numpy as np

from .core import PointCloud, RngSpec
from .errors import InvalidArgument

KINDS = ("segment", "cube", "sphere", "gaussian", "swiss_roll")

# substreams of the caller's RngSpec
_SAMPLE, _EMBED, _NOISE = 0, 1, 2


def native_dim(kind: str, d: int) -> int:
    """Number of coordinates the manifold needs before embedding."""
    if kind == "sphere":
        return d + 1
    if kind == "swiss_roll":
        return 3
    return d


def native_sample(kind: str, d: int, n: int, gen: np.random.Generator) -> np.ndarray:
    if kind == "segment":
        return gen.random((n, 1))
    if kind == "cube":
        return gen.random((n, d))
    if kind == "gaussian":
        return gen.standard_normal((n, d))
    if kind == "sphere":
        g = gen.standard_normal((n, d + 1))
        return g / np.linalg.norm(g, axis=1, keepdims=True)
    if kind == "swiss_roll":
        t = 1.5 * np.pi * (1 + 2 * gen.random(n))
        h = 21.0 * gen.random(n)
        return np.column_stack([t * np.cos(t), h, t * np.sin(t)])
    raise InvalidArgument(f"unknown manifold kind {kind!r}; choose from {KINDS}")


def random_isometry(k: int, D: int, gen: np.random.Generator) -> np.ndarray:
    """A D x k matrix with orthonormal columns."""
    q, r = np.linalg.qr(gen.standard_normal((D, k)))
    # sign fix makes the factorisation unique
    return q * np.sign(np.diag(r))


def sample_manifold(kind: str, d: int, D: int, n: int, noise: float = 0.0,
                    rng: RngSpec = RngSpec()) -> PointCloud:
    """Sample ``n`` points from a ``d``-dimensional manifold embedded in ``R^D``.

    Args:
        kind: one of ``segment``, ``cube``, ``sphere``, ``gaussian``, ``swiss_roll``.
        d: intrinsic dimension (must be 1 for segment, 2 for swiss_roll).
        D: ambient dimension, at least the native coordinate count.
        n: number of points.
        noise: standard deviation of isotropic ambient noise.
        rng: seed and substream.
    """
    if kind not in KINDS:
        raise InvalidArgument(f"unknown manifold kind {kind!r}; choose from {KINDS}")
    if kind == "segment" and d != 1:
        raise InvalidArgument("a segment has d = 1")
    if kind == "swiss_roll" and d != 2:
        raise InvalidArgument("the swiss roll has d = 2")
    if d < 1 or n < 1:
        raise InvalidArgument("d and n must be positive")
    if noise < 0:
        raise InvalidArgument("noise must be >= 0")
    k = native_dim(kind, d)
    if D < k:
        raise InvalidArgument(f"{kind} with d={d} needs ambient D >= {k}, got {D}")
    base = native_sample(kind, d, n, rng.generator(_SAMPLE))
    data = base @ random_isometry(k, D, rng.generator(_EMBED)).T
    if noise > 0:
        data = data + noise * rng.generator(_NOISE).standard_normal((n, D))
    meta = {"kind": kind, "d": d, "D": D, "n": n, "noise": noise,
            "seed": rng.seed, "stream": rng.stream}
    return PointCloud(data, label=f"{kind}-d{d}-D{D}-n{n}", meta=meta)
