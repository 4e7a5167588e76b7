"""Emotion potential, its analytic gradient, the scalar drive and adaptive clipping.

The potential is the double exponential ``f(v) = exp(exp(w . v)) - 1`` over the
metacognitive vector ``v = (c, e, n, S)``. Everything here is a pure function of
value types; the only stateful piece is :class:`ClipState`, owned by one run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

S_CAP = 10.0
MAD_FLOOR = 0.01
PROVISIONAL_KMAX = 10.0

# exp(x) overflows float64 just above this.
_EXP_LIMIT = 709.0


class PotentialOverflow(ArithmeticError):
    """Raised when a linear-domain value would overflow float64."""


@dataclass(frozen=True)
class EmotionWeights:
    w_c: float = 1.2
    w_e: float = -0.8
    w_n: float = 0.6
    w_s: float = 0.4

    def __post_init__(self):
        problems = []
        if not self.w_c > 0:
            problems.append(f"w_c must be > 0 (got {self.w_c})")
        if not self.w_n > 0:
            problems.append(f"w_n must be > 0 (got {self.w_n})")
        if not self.w_e < 0:
            problems.append(f"w_e must be < 0 (got {self.w_e})")
        l1 = abs(self.w_c) + abs(self.w_e) + abs(self.w_n) + abs(self.w_s)
        if l1 > 3.0 + 1e-12:
            problems.append(f"||w||_1 must be <= 3 (got {l1:.6g})")
        if problems:
            raise ValueError("emotion weights outside stability region: " + "; ".join(problems))

    def as_array(self) -> np.ndarray:
        return np.array([self.w_c, self.w_e, self.w_n, self.w_s], dtype=float)


@dataclass(frozen=True)
class MetaVector:
    """Metacognitive state: confidence, predicted error, novelty, success memory."""

    c: float = 0.5
    e: float = 1.0
    n: float = 0.0
    s: float = 0.0

    @classmethod
    def clamped(cls, c, e, n, s, s_cap: float = S_CAP) -> "MetaVector":
        return cls(
            c=min(max(float(c), 0.0), 1.0),
            e=min(max(float(e), 0.0), 1.0),
            n=min(max(float(n), 0.0), 1.0),
            s=min(max(float(s), 0.0), s_cap),
        )

    @classmethod
    def from_array(cls, a, s_cap: float = S_CAP) -> "MetaVector":
        return cls.clamped(*np.asarray(a, dtype=float)[:4], s_cap=s_cap)

    def as_array(self) -> np.ndarray:
        return np.array([self.c, self.e, self.n, self.s], dtype=float)

    def norm(self) -> float:
        return float(np.linalg.norm(self.as_array()))


def _u(v, w) -> float:
    va = v.as_array() if isinstance(v, MetaVector) else np.asarray(v, dtype=float)
    wa = w.as_array() if isinstance(w, EmotionWeights) else np.asarray(w, dtype=float)
    return float(va @ wa)


def potential_from_u(u: float) -> float:
    eu = math.exp(u) if u < _EXP_LIMIT else math.inf
    if eu > _EXP_LIMIT:
        raise PotentialOverflow(f"f overflows for u={u:.6g}; use log_potential")
    return math.expm1(eu)


def potential(v: MetaVector, w: EmotionWeights, log_domain: bool = False) -> float:
    """Return ``f(v)``, or ``log(1 + f(v))`` when ``log_domain`` is set.

    The linear value is formed from the log-safe quantity ``exp(u)`` so that the
    overflow point is explicit instead of silently returning ``inf``.
    """
    u = _u(v, w)
    if log_domain:
        return math.exp(u)
    return potential_from_u(u)


def log_potential(v: MetaVector, w: EmotionWeights) -> float:
    """``log(f(v) + 1) == exp(w . v)``; finite for any realistic ``u``."""
    return math.exp(_u(v, w))


def gradient(v: MetaVector, w: EmotionWeights) -> np.ndarray:
    """Unclipped analytic gradient ``exp(u + e^u) * w``."""
    u = _u(v, w)
    wa = w.as_array() if isinstance(w, EmotionWeights) else np.asarray(w, dtype=float)
    if u > _EXP_LIMIT:
        raise PotentialOverflow(f"gradient overflows for u={u:.6g}")
    log_scale = u + math.exp(u)
    if log_scale > _EXP_LIMIT:
        raise PotentialOverflow(f"gradient overflows for u={u:.6g}; use log_gradient_scale")
    return math.exp(log_scale) * wa


def log_gradient_scale(v: MetaVector, w: EmotionWeights) -> float:
    """log of the positive factor multiplying ``w`` in the gradient."""
    u = _u(v, w)
    return u + math.exp(min(u, _EXP_LIMIT))


def clip(g, k_max: float) -> np.ndarray:
    """Rescale ``g`` onto the ball of radius ``k_max`` if it lies outside."""
    g = np.asarray(g, dtype=float)
    if isinstance(k_max, ClipState):
        k_max = k_max.k_max
    norm = float(np.linalg.norm(g))
    if norm <= k_max:
        return g.copy()
    out = g * (k_max / norm)
    # Guard against the last ulp pushing the norm above the threshold.
    while float(np.linalg.norm(out)) > k_max:
        out = out * (1.0 - 1e-15)
    return out


def clipped_gradient(v: MetaVector, w: EmotionWeights, k_max: float) -> tuple[np.ndarray, float]:
    """Clipped gradient plus the pre-clip norm, usable for any ``u``.

    For large ``u`` the linear gradient overflows, but its direction is just
    ``w``, so the clipped value is recovered from the log-scale.
    """
    wa = w.as_array()
    w_norm = float(np.linalg.norm(wa))
    log_scale = log_gradient_scale(v, w)
    if w_norm == 0.0:
        return np.zeros(4), 0.0
    log_norm = log_scale + math.log(w_norm)
    pre_norm = math.exp(log_norm) if log_norm < _EXP_LIMIT else math.inf
    if pre_norm <= k_max:
        return math.exp(log_scale) * wa, pre_norm
    out = wa * (k_max / w_norm)
    while float(np.linalg.norm(out)) > k_max:
        out = out * (1.0 - 1e-15)
    return out, pre_norm


def scalar_drive(grad_clipped, delta_v) -> float:
    """Directional derivative of f along the realised metacognitive step."""
    return float(np.dot(np.asarray(grad_clipped, dtype=float), np.asarray(delta_v, dtype=float)))


def median_mad(values) -> tuple[float, float]:
    x = np.asarray(values, dtype=float)
    med = float(np.median(x))
    return med, float(np.median(np.abs(x - med)))


def calibrate_kmax(warmup_norms, mad_floor: float = MAD_FLOOR) -> float:
    """Robust clip threshold: median + 3 * max(MAD, mad_floor)."""
    if len(warmup_norms) == 0:
        raise ValueError("cannot calibrate k_max from an empty warm-up window")
    med, mad = median_mad(warmup_norms)
    return med + 3.0 * max(mad, mad_floor)


@dataclass
class ClipState:
    """Warm-up collector that freezes ``k_max`` once ``warmup_len`` norms are seen."""

    k_max: float = PROVISIONAL_KMAX
    warmup_norms: list = field(default_factory=list)
    warmup_len: int = 16
    mad_floor: float = MAD_FLOOR
    calibrated: bool = False

    def observe(self, norm: float) -> bool:
        """Record a pre-clip norm; returns True on the step calibration happens."""
        if self.calibrated:
            return False
        if math.isfinite(norm):
            self.warmup_norms.append(float(norm))
        if len(self.warmup_norms) >= self.warmup_len:
            self.k_max = calibrate_kmax(self.warmup_norms, self.mad_floor)
            self.calibrated = True
            return True
        return False
