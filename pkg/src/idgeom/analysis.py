"""Correlation, binned dispersion and least-squares helpers for metric tables."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .core import RngSpec
from .errors import DegenerateInput, InvalidArgument
from .report import Report

CORRELATIONS = ("pearson", "spearman")


def correlate(xs: Sequence[float], ys: Sequence[float], method: str = "pearson") -> float:
    """Pearson product-moment or Spearman rank (average ranks on ties) correlation."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidArgument("xs and ys must be 1-D and of equal length")
    if x.size < 3:
        raise InvalidArgument("need at least 3 paired observations")
    if method == "spearman":
        x, y = rankdata(x), rankdata(y)
    elif method != "pearson":
        raise InvalidArgument(f"method must be one of {CORRELATIONS}")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(np.dot(dx, dx)), float(np.dot(dy, dy))
    if sxx == 0 or syy == 0:
        raise DegenerateInput("zero variance")
    r = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


@dataclass(frozen=True)
class Bin:
    lo: float
    hi: float
    count: int
    std: float | None


def binned_std(values: Sequence[float], keys: Sequence[float], bin_width: float) -> list[Bin]:
    """Sample std of ``values`` in consecutive key bins ``[k*w, (k+1)*w)``."""
    v = np.asarray(values, dtype=np.float64)
    kv = np.asarray(keys, dtype=np.float64)
    if v.shape != kv.shape:
        raise InvalidArgument("values and keys must have equal length")
    if not bin_width > 0:
        raise InvalidArgument("bin_width must be positive")
    idx = np.floor(kv / bin_width).astype(np.int64)
    bins = []
    for b in np.unique(idx):
        members = v[idx == b]
        std = float(np.std(members, ddof=1)) if members.size >= 2 else None
        bins.append(Bin(float(b * bin_width), float((b + 1) * bin_width), int(members.size), std))
    return bins


@dataclass
class OlsResult:
    """Least-squares fit evaluated on a seeded train / test split.

    ``coef`` are on the standardised scale when standardisation is on;
    ``importance_rank`` ranks features by ``|coef|`` (1 = most important).
    """

    intercept: float
    coef: np.ndarray
    train_pearson: float
    train_spearman: float
    test_pearson: float
    test_spearman: float
    rank_deficient: bool
    standardized: bool
    importance_rank: np.ndarray
    train_index: np.ndarray
    test_index: np.ndarray
    feature_mean: np.ndarray
    feature_scale: np.ndarray

    def predict(self, X) -> np.ndarray:
        X = (np.asarray(X, dtype=np.float64) - self.feature_mean) / self.feature_scale
        return X @ self.coef + self.intercept


def _safe_corr(a, b, method) -> float:
    try:
        return correlate(a, b, method)
    except (DegenerateInput, InvalidArgument):
        return math.nan


def ols_fit(X, y, split: float = 0.8, rng: RngSpec = RngSpec(),
            standardize: bool = True) -> OlsResult:
    """Ordinary least squares with intercept, scored by correlation on held-out rows.

    A rank-deficient design (including ``p >= n_train``) sets ``rank_deficient``
    and the minimum-norm solution is used.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim == 1:
        X = X[:, None]
    n, p = X.shape
    if y.shape[0] != n:
        raise InvalidArgument("X and y have different row counts")
    if not 0 < split < 1:
        raise InvalidArgument("split must lie in (0, 1)")
    perm = rng.generator().permutation(n)
    n_train = int(round(split * n))
    if n_train < 2 or n - n_train < 1:
        raise InvalidArgument(f"split leaves too few rows (n={n})")
    tr, te = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    Xtr = X[tr]
    mu = Xtr.mean(axis=0) if standardize else np.zeros(p)
    sd = Xtr.std(axis=0) if standardize else np.ones(p)
    sd = np.where(sd > 0, sd, 1.0)
    Z = (X - mu) / sd
    A = np.column_stack([np.ones(n_train), Z[tr]])
    sol, _, rank, _ = np.linalg.lstsq(A, y[tr], rcond=None)
    deficient = bool(rank < p + 1)
    pred = np.column_stack([np.ones(n), Z]) @ sol
    coef = sol[1:]
    order = np.argsort(-np.abs(coef), kind="stable")
    ranks = np.empty(p, dtype=np.int64)
    ranks[order] = np.arange(1, p + 1)
    return OlsResult(
        float(sol[0]), coef,
        _safe_corr(pred[tr], y[tr], "pearson"), _safe_corr(pred[tr], y[tr], "spearman"),
        _safe_corr(pred[te], y[te], "pearson"), _safe_corr(pred[te], y[te], "spearman"),
        deficient, standardize, ranks, tr, te, mu, sd,
    )


def median_importance_ranks(fits: Sequence[OlsResult]) -> np.ndarray:
    """Median over fits of each feature's importance rank."""
    return np.median(np.vstack([f.importance_rank for f in fits]), axis=0)


def metric_matrix(report: Report, method: str = "pearson", columns: Sequence[str] | None = None,
                  include_invalid: bool = False, include_short: bool = False,
                  min_rows: int = 3) -> tuple[list[str], np.ndarray]:
    """Pairwise correlation matrix over metric columns with pairwise deletion.

    Rows flagged short and estimates flagged invalid are excluded unless asked
    for. A pair involving a constant column gets NaN. Returns the column names
    and the symmetric matrix.
    """
    gated = report.gated(include_invalid=include_invalid, include_short=include_short)
    names = list(columns) if columns is not None else gated.metrics
    if len(names) < 2:
        raise DegenerateInput("need at least two metric columns")

    def numeric(c: str) -> np.ndarray:
        vals = gated.column(c)
        return np.array([v if isinstance(v, (int, float)) and not isinstance(v, bool)
                         and math.isfinite(v) else np.nan for v in vals], dtype=np.float64)

    cols = [numeric(c) for c in names]
    m = np.eye(len(names))
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            ok = ~np.isnan(cols[i]) & ~np.isnan(cols[j])
            if ok.sum() < min_rows:
                raise DegenerateInput(f"columns {names[i]!r} and {names[j]!r} share only "
                                      f"{int(ok.sum())} complete rows")
            try:
                m[i, j] = m[j, i] = correlate(cols[i][ok], cols[j][ok], method)
            except DegenerateInput:  # a constant column on the shared rows
                m[i, j] = m[j, i] = np.nan
    return names, m
