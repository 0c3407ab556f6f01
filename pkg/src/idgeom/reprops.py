"""Representation-space operations on ingested matrices.

Prediction entropy of hidden states under an unembedding, the scale sweep that
moves entropy while leaving geometry fixed, and sparse-autoencoder encode /
decode / steering arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .core import PointCloud, RngSpec, as_cloud
from .errors import InvalidArgument, InvalidInput
from .estimators import EstimatorConfig, IdEstimate, estimate_all


def _finite(name: str, arr: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} contains NaN or Inf")
    return arr


@dataclass(frozen=True, eq=False)
class Unembedding:
    """Vocabulary matrix ``U`` (V x m) and optional logit bias ``b`` (length V)."""

    U: np.ndarray
    b: np.ndarray | None = None

    def __post_init__(self):
        U = _finite("U", np.asarray(self.U, dtype=np.float64))
        if U.ndim != 2 or U.shape[0] < 2:
            raise InvalidArgument(f"U must be V x m with V >= 2, got shape {U.shape}")
        b = np.zeros(U.shape[0]) if self.b is None else np.asarray(self.b, dtype=np.float64).ravel()
        if b.shape != (U.shape[0],):
            raise InvalidArgument(f"bias must have length {U.shape[0]}, got {b.shape}")
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "b", _finite("b", b))

    @property
    def vocab_size(self) -> int:
        return self.U.shape[0]


def _entropies(H: np.ndarray, un: Unembedding) -> np.ndarray:
    logits = H @ un.U.T + un.b
    logits = logits - logits.max(axis=1, keepdims=True)
    log_z = logsumexp(logits, axis=1, keepdims=True)
    p = np.exp(logits - log_z)
    # H = log Z - E_p[logit]; exact ln V for equal logits
    ent = log_z[:, 0] - (p * logits).sum(axis=1)
    return np.clip(ent, 0.0, math.log(un.vocab_size))


def prediction_entropy(h, un: Unembedding) -> float:
    """Entropy in nats of ``softmax(U h + b)``."""
    h = _finite("h", np.asarray(h, dtype=np.float64).ravel())
    if h.shape[0] != un.U.shape[1]:
        raise InvalidArgument(f"h has length {h.shape[0]}, unembedding expects {un.U.shape[1]}")
    return float(_entropies(h[None, :], un)[0])


def mean_entropy(cloud, un: Unembedding) -> float:
    x = as_cloud(cloud).data
    if x.shape[1] != un.U.shape[1]:
        raise InvalidArgument(f"hidden size {x.shape[1]} does not match unembedding {un.U.shape[1]}")
    return float(_entropies(x, un).mean())


@dataclass
class SweepRow:
    alpha: float
    mean_entropy: float
    estimates: dict[str, IdEstimate]


def entropy_scale_sweep(hidden, un: Unembedding, alphas: Sequence[float],
                        config: EstimatorConfig | None = None,
                        threads: int | None = None) -> list[SweepRow]:
    """Mean prediction entropy and ID estimates of ``alpha * hidden`` for each alpha.

    Scaling hidden states is an inverse-temperature change for the softmax,
    so entropy slides between ``ln V`` and 0 while distance ratios, and with
    them every ID estimate, stay put.
    """
    cloud = as_cloud(hidden)
    alphas = [float(a) for a in alphas]
    if any(a <= 0 for a in alphas):
        raise InvalidArgument("alphas must be positive")
    if alphas != sorted(alphas):
        raise InvalidArgument("alphas must be sorted ascending")
    rows = []
    for a in alphas:
        scaled = cloud.with_data(a * cloud.data)
        rows.append(SweepRow(a, mean_entropy(scaled, un), estimate_all(scaled, config, threads)))
    return rows


def sign_flip_construction(n: int = 500, m: int = 32, vocab: int = 1000,
                           rng: RngSpec = RngSpec()) -> tuple[PointCloud, Unembedding]:
    """Hidden states and vocabulary where negating the states collapses entropy.

    The vocabulary is a tight cluster of nonnegative token vectors plus one
    all-negative token; hidden states have positive coordinates. For ``h``
    the cluster logits are nearly equal (entropy near ``ln V``); for ``-h`` the
    lone negative token dominates (entropy near 0).
    """
    if vocab < 2:
        raise InvalidArgument("vocab must be >= 2")
    gen = rng.generator(0)
    cluster = 1.0 + 0.01 * gen.random((vocab - 1, m))
    U = np.vstack([-np.ones((1, m)), cluster])
    H = 0.5 + gen.random((n, m))
    return PointCloud(H, label="sign-flip-positive"), Unembedding(U)


# ----------------------------------------------------------------------------
# Sparse autoencoders
# ----------------------------------------------------------------------------

ACTIVATIONS = ("relu", "jump_relu")


@dataclass(frozen=True, eq=False)
class SaeWeights:
    """Encoder ``W_enc`` (F x m), ``b_enc`` (F), decoder ``W_dec`` (m x F), ``b_dec`` (m).

    ``threshold`` (length F, nonnegative) is required for the jump-ReLU activation.
    """

    W_enc: np.ndarray
    b_enc: np.ndarray
    W_dec: np.ndarray
    b_dec: np.ndarray
    activation: str = "relu"
    threshold: np.ndarray | None = None

    def __post_init__(self):
        arrays = {}
        for name in ("W_enc", "b_enc", "W_dec", "b_dec"):
            arrays[name] = _finite(name, np.asarray(getattr(self, name), dtype=np.float64))
        W_enc, W_dec = arrays["W_enc"], arrays["W_dec"]
        b_enc, b_dec = arrays["b_enc"].ravel(), arrays["b_dec"].ravel()
        if W_enc.ndim != 2 or W_dec.ndim != 2:
            raise InvalidArgument("encoder and decoder must be matrices")
        F, m = W_enc.shape
        if W_dec.shape != (m, F):
            raise InvalidArgument(f"W_dec must be {m} x {F}, got {W_dec.shape}")
        if b_enc.shape != (F,) or b_dec.shape != (m,):
            raise InvalidArgument(f"biases must have lengths {F} and {m}")
        if np.any(np.all(W_dec == 0, axis=0)):
            raise InvalidArgument("decoder has an all-zero feature column")
        if self.activation not in ACTIVATIONS:
            raise InvalidArgument(f"activation must be one of {ACTIVATIONS}")
        threshold = None
        if self.activation == "jump_relu":
            if self.threshold is None:
                raise InvalidArgument("jump_relu needs a per-feature threshold")
            threshold = _finite("threshold", np.asarray(self.threshold, dtype=np.float64).ravel())
            if threshold.shape != (F,) or np.any(threshold < 0):
                raise InvalidArgument(f"threshold must be {F} nonnegative values")
        for name, value in (("W_enc", W_enc), ("b_enc", b_enc), ("W_dec", W_dec),
                            ("b_dec", b_dec), ("threshold", threshold)):
            object.__setattr__(self, name, value)

    @property
    def n_features(self) -> int:
        return self.W_enc.shape[0]

    @property
    def hidden_size(self) -> int:
        return self.W_enc.shape[1]


def sae_encode(x, w: SaeWeights) -> np.ndarray:
    """Feature codes for one vector (1-D input) or a batch of row vectors."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != w.hidden_size:
        raise InvalidArgument(f"input has size {x.shape[-1]}, SAE expects {w.hidden_size}")
    pre = x @ w.W_enc.T + w.b_enc
    if w.activation == "relu":
        return np.maximum(pre, 0.0)
    return np.where(pre > w.threshold, pre, 0.0)


def sae_decode(f, w: SaeWeights) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.shape[-1] != w.n_features:
        raise InvalidArgument(f"code has size {f.shape[-1]}, SAE has {w.n_features} features")
    return f @ w.W_dec.T + w.b_dec


def sae_forward(x, w: SaeWeights) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(code, reconstruction)``."""
    f = sae_encode(x, w)
    return f, sae_decode(f, w)


AGGREGATIONS = ("sum", "mean", "max")


def aggregate_feature(token_codes, feature: int, mode: str = "sum") -> float:
    """Collapse one feature's tokenwise activations to a sequence-level value."""
    codes = np.asarray(token_codes, dtype=np.float64)
    if codes.ndim != 2 or codes.shape[0] == 0:
        raise InvalidArgument("token_codes must be a nonempty sequence of code vectors")
    if not 0 <= feature < codes.shape[1]:
        raise InvalidArgument(f"feature index {feature} out of range")
    col = codes[:, feature]
    if mode == "sum":
        return float(col.sum())
    if mode == "mean":
        return float(col.mean())
    if mode == "max":
        return float(col.max())
    raise InvalidArgument(f"mode must be one of {AGGREGATIONS}")


@dataclass(frozen=True)
class SteeringSpec:
    feature: int
    strength: float  # lambda
    scale: float  # A_i, reference activation scale

    def __post_init__(self):
        if not self.scale > 0:
            raise InvalidArgument("reference scale A_i must be positive")


def steer(x, w: SaeWeights, spec: SteeringSpec) -> np.ndarray:
    """``x + lambda * A_i * d_i`` with ``d_i`` the i-th decoder column."""
    if not 0 <= spec.feature < w.n_features:
        raise InvalidArgument(f"feature index {spec.feature} out of range [0, {w.n_features})")
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != w.hidden_size:
        raise InvalidArgument(f"input has size {x.shape[-1]}, SAE expects {w.hidden_size}")
    return x + spec.strength * spec.scale * w.W_dec[:, spec.feature]
