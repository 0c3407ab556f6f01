"""Anisotropy and linear-dimensionality diagnostics of an embedding matrix.

MEV and EV-k describe variance captured by leading principal components, so
they are taken from the column-centred matrix by default. The Schatten-2 norm
and the effective rank are taken from the raw stacked matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import as_cloud
from .errors import DegenerateInput, InvalidArgument


@dataclass(frozen=True)
class SingularSpectrum:
    """Singular values in nonincreasing order, ``r = min(n, D)`` of them."""

    sigma: np.ndarray
    centered: bool = False

    def __post_init__(self):
        s = np.sort(np.asarray(self.sigma, dtype=np.float64).ravel())[::-1]
        if s.size == 0:
            raise InvalidArgument("empty spectrum")
        if not np.all(np.isfinite(s)) or s[-1] < 0:
            raise InvalidArgument("singular values must be finite and nonnegative")
        s.setflags(write=False)
        object.__setattr__(self, "sigma", s)

    @property
    def rank(self) -> int:
        return self.sigma.size


def singular_spectrum(cloud, centered: bool = False) -> SingularSpectrum:
    x = as_cloud(cloud).data
    if centered:
        x = x - x.mean(axis=0)
    return SingularSpectrum(np.linalg.svd(x, compute_uv=False), centered)


def _energy(spectrum: SingularSpectrum) -> np.ndarray:
    sq = spectrum.sigma**2
    if not sq.sum() > 0:
        raise DegenerateInput("all-zero spectrum")
    return sq


def ev_k_sweep(spectrum: SingularSpectrum, k_max: int | None = None) -> np.ndarray:
    """Cumulative explained variance for k = 1..k_max."""
    k_max = spectrum.rank if k_max is None else k_max
    if not 1 <= k_max <= spectrum.rank:
        raise InvalidArgument(f"k_max must lie in [1, {spectrum.rank}], got {k_max}")
    sq = _energy(spectrum)
    # rounding can overshoot 1 before the end; clipping keeps the curve monotone
    curve = np.minimum(np.cumsum(sq) / sq.sum(), 1.0)
    curve[-1] = 1.0
    return curve[:k_max]


def effective_rank(spectrum: SingularSpectrum) -> float:
    s = spectrum.sigma
    total = s.sum()
    if not total > 0:
        raise DegenerateInput("all-zero spectrum")
    p = s / total
    p = p[p > 0]  # 0 ln 0 := 0, including values that underflow
    return float(math.exp(-np.sum(p * np.log(p))))


def spectral_metrics(spectrum: SingularSpectrum, ks: Sequence[int] = (20,)) -> dict:
    """MEV, EV-k for each requested k, Schatten-2 norm and effective rank.

    ``ev`` for k beyond the spectrum length is 1.
    """
    sq = _energy(spectrum)
    curve = ev_k_sweep(spectrum)
    ev = {}
    for k in ks:
        if k < 1:
            raise InvalidArgument(f"k must be positive, got {k}")
        ev[int(k)] = float(curve[min(k, spectrum.rank) - 1])
    return {
        "mev": float(sq[0] / sq.sum()),
        "ev": ev,
        "schatten2": float(math.sqrt(sq.sum())),
        "effective_rank": effective_rank(spectrum),
    }


def resultant_length(cloud, return_excluded: bool = False):
    """Norm of the mean unit direction; zero-norm rows are skipped."""
    x = as_cloud(cloud).data
    norms = np.linalg.norm(x, axis=1)
    keep = norms > 0
    if not keep.any():
        raise DegenerateInput("all rows have zero norm")
    r = float(np.linalg.norm((x[keep] / norms[keep, None]).mean(axis=0)))
    r = min(r, 1.0)
    if return_excluded:
        return r, int((~keep).sum())
    return r


def anisotropy(cloud, ks: Sequence[int] = (1, 20, 60), centered: bool | None = None,
               k_max: int | None = None) -> dict:
    """Full anisotropy record for one cloud.

    With ``centered=None`` MEV/EV-k use the centred spectrum and Schatten-2 /
    effective rank the raw one; ``True``/``False`` forces one spectrum for all.
    """
    cloud = as_cloud(cloud)
    ev_spec = singular_spectrum(cloud, centered=True if centered is None else centered)
    raw_spec = singular_spectrum(cloud, centered=False if centered is None else centered)
    ev_part = spectral_metrics(ev_spec, ks)
    raw_part = spectral_metrics(raw_spec, ks)
    r, zero_rows = resultant_length(cloud, return_excluded=True)
    sweep = ev_k_sweep(ev_spec, min(k_max or ev_spec.rank, ev_spec.rank))
    return {
        "mev": ev_part["mev"],
        "ev": ev_part["ev"],
        "schatten2": raw_part["schatten2"],
        "effective_rank": raw_part["effective_rank"],
        "resultant_length": r,
        "zero_norm_rows": zero_rows,
        "ev_curve": sweep.tolist(),
    }
