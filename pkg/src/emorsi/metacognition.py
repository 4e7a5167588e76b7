"""Metacognitive map from predictions to (confidence, error, novelty) and the
success-memory recursion."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .emotion import S_CAP, MetaVector

DIST_FLOOR = 1e-9


def floor_normalize(p, floor: float = DIST_FLOOR) -> np.ndarray:
    """Floor every entry at ``floor`` and renormalise (last axis)."""
    p = np.maximum(np.asarray(p, dtype=float), floor)
    return p / p.sum(axis=-1, keepdims=True)


def entropy(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return -np.sum(p * np.log(p), axis=-1)


def kl_divergence(p, q) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return np.sum(p * (np.log(p) - np.log(q)), axis=-1)


@dataclass(frozen=True)
class PredictionRecord:
    predictive_dist: np.ndarray
    true_label: int
    prior_dist: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.predictive_dist, dtype=float)
        q = np.asarray(self.prior_dist, dtype=float)
        if p.ndim != 1 or p.shape != q.shape:
            raise ValueError(f"distribution shapes differ: {p.shape} vs {q.shape}")
        if p.size < 2:
            raise ValueError("label space needs at least two classes")
        if not 0 <= int(self.true_label) < p.size:
            raise ValueError(f"label {self.true_label} outside 0..{p.size - 1}")
        for name, d in (("predictive", p), ("prior", q)):
            if np.any(d < 0) or abs(d.sum() - 1.0) > 1e-9:
                raise ValueError(f"{name} distribution is not a probability vector")
        object.__setattr__(self, "predictive_dist", floor_normalize(p))
        object.__setattr__(self, "prior_dist", floor_normalize(q))


def confidence(p, variant: str = "entropy") -> np.ndarray:
    """Confidence in [0, 1] from a (floored) predictive distribution.

    ``entropy``: 1 - H(p)/log|Y|.  ``margin``: top-1 minus top-2 probability.
    """
    p = np.asarray(p, dtype=float)
    k = p.shape[-1]
    if variant == "entropy":
        c = 1.0 - entropy(p) / math.log(k)
    elif variant == "margin":
        top = np.sort(p, axis=-1)
        c = top[..., -1] - top[..., -2]
    else:
        raise ValueError(f"unknown confidence variant {variant!r}")
    return np.clip(c, 0.0, 1.0)


def _components(p, labels, prior, variant):
    c = confidence(p, variant)
    e = 1.0 - np.take_along_axis(p, np.asarray(labels)[..., None], axis=-1)[..., 0]
    n = -np.expm1(-kl_divergence(p, prior))
    return c, e, n


def lambda_map(rec: PredictionRecord, prev_v: MetaVector, variant: str = "entropy") -> MetaVector:
    """Single-record metacognitive update; success memory is carried over."""
    c, e, n = _components(rec.predictive_dist, rec.true_label, rec.prior_dist, variant)
    return MetaVector.clamped(c, e, n, prev_v.s)


def lambda_map_batch(pred, labels, prior, prev_v: MetaVector, variant: str = "entropy") -> MetaVector:
    """Average of :func:`lambda_map` over rows of ``pred``/``prior``.

    Vectorised equivalent of building one :class:`PredictionRecord` per row.
    """
    p = floor_normalize(pred)
    q = floor_normalize(prior)
    if p.shape != q.shape:
        raise ValueError(f"distribution shapes differ: {p.shape} vs {q.shape}")
    c, e, n = _components(p, labels, q, variant)
    return MetaVector.clamped(np.mean(c), np.mean(e), np.mean(n), prev_v.s)


def continuous_error(y_hat, y, scale: float) -> float:
    """|y_hat - y| / scale clamped to [0, 1], for real-valued targets."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    err = float(np.mean(np.abs(np.asarray(y_hat, float) - np.asarray(y, float)))) / scale
    return min(max(err, 0.0), 1.0)


def success_update(s: float, r_ext: float, lambda_decay: float, s_cap: float = S_CAP) -> float:
    if not 0.0 <= lambda_decay < 1.0:
        raise ValueError(f"lambda_decay must be in [0, 1), got {lambda_decay}")
    return min(max(lambda_decay * s + r_ext, 0.0), s_cap)
