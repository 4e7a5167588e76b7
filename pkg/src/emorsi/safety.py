"""Safety state: clip threshold, regulatory toll vector, safe mixing radius,
buffer-weight caps, the invariant-region audit, and the Monte-Carlo tail checks
that back the clip and toll envelopes."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .emotion import calibrate_kmax

log = logging.getLogger(__name__)

L0_EXT = 0.02


class SafetyError(ValueError):
    pass


@dataclass
class TollVector:
    m: np.ndarray
    eta_max: float = 0.01
    thresholds: np.ndarray = field(default_factory=lambda: np.ones(4))

    @classmethod
    def seeded(cls, thresholds, eta_max: float = 0.01) -> "TollVector":
        thresholds = np.asarray(thresholds, dtype=float)
        return cls(m=0.05 * thresholds, eta_max=eta_max, thresholds=thresholds)

    @property
    def d(self) -> int:
        return int(self.m.size)

    def l1(self) -> float:
        return float(np.abs(self.m).sum())


def toll_update(t: TollVector, eta) -> TollVector:
    eta = np.asarray(eta, dtype=float)
    if eta.shape != t.m.shape:
        raise SafetyError(f"increment shape {eta.shape} != toll shape {t.m.shape}")
    if np.any(eta < 0) or np.any(eta > t.eta_max):
        raise SafetyError(f"toll increment outside [0, {t.eta_max}]: {eta}")
    return replace(t, m=t.m + eta)


def safe_alpha(gamma_est: float, k_max: float) -> float:
    if not (gamma_est > 0 and k_max > 0):
        raise SafetyError("safe_alpha needs positive gamma and k_max")
    return gamma_est / (2.0 * k_max)


def buffer_caps(gamma_est: float, k_max: float):
    cap = gamma_est * k_max / 4.0
    return cap, cap


@dataclass
class SafetyState:
    k_max: float
    alpha: float
    alpha_star: float
    gamma_est: float
    l0_ext: float = L0_EXT
    xi_caps: tuple = (math.inf, math.inf)
    in_region: bool = True


def make_safety_state(gamma_est: float, k_max: float, weights) -> tuple:
    """Derive the safe radius and caps, clamp buffer weights that exceed their cap.

    Returns ``(state, weights, warnings, errors)``; an ``alpha`` at or beyond the
    safe radius is an error, an oversized buffer weight is clamped with a warning.
    """
    warnings, errors = [], []
    if gamma_est > 0 and k_max > 0:
        a_star = safe_alpha(gamma_est, k_max)
        cap_dg, cap_bl = buffer_caps(gamma_est, k_max)
    else:
        a_star, cap_dg, cap_bl = 0.0, 0.0, 0.0
    if not weights.alpha < a_star:
        errors.append(f"alpha={weights.alpha:.6g} is not below the safe radius {a_star:.6g}")
    new = weights
    if weights.xi_dg > cap_dg:
        warnings.append(f"xi_dg={weights.xi_dg:.6g} clamped to cap {cap_dg:.6g}")
        new = replace(new, xi_dg=cap_dg)
    if weights.xi_bl > cap_bl:
        warnings.append(f"xi_bl={weights.xi_bl:.6g} clamped to cap {cap_bl:.6g}")
        new = replace(new, xi_bl=cap_bl)
    for w in warnings:
        log.warning(w)
    state = SafetyState(k_max=k_max, alpha=weights.alpha, alpha_star=a_star,
                        gamma_est=gamma_est, xi_caps=(cap_dg, cap_bl))
    return state, new, warnings, errors


def toll_envelope(T: int, d: int, eta_max: float) -> float:
    """3 * sqrt(d * eta_max^2 * log(T) / 2); zero for T <= 1."""
    return 3.0 * math.sqrt(d * eta_max**2 * max(math.log(max(T, 1)), 0.0) / 2.0)


@dataclass
class InvariantReport:
    step: int
    clip_ok: bool
    toll_ok: bool
    alpha_ok: bool
    caps_ok: bool
    max_post_norm: float
    toll_excess: float

    @property
    def in_region(self) -> bool:
        return self.clip_ok and self.toll_ok and self.alpha_ok and self.caps_ok

    def failed(self) -> list:
        names = ("clip_ok", "toll_ok", "alpha_ok", "caps_ok")
        return [n for n in names if not getattr(self, n)]


def audit(post_norms, s: SafetyState, toll: TollVector, m0_l1: float, T: int,
          xi_dg: float, xi_bl: float, step: int = 0) -> InvariantReport:
    post = np.asarray(post_norms, dtype=float)
    max_post = float(post.max()) if post.size else 0.0
    envelope = toll_envelope(T, toll.d, toll.eta_max)
    excess = toll.l1() - (m0_l1 + envelope)
    return InvariantReport(
        step=step,
        clip_ok=bool(max_post <= s.k_max),
        toll_ok=bool(excess <= 1e-12),
        alpha_ok=bool(s.alpha < s.alpha_star),
        caps_ok=bool(xi_dg <= s.xi_caps[0] and xi_bl <= s.xi_caps[1]),
        max_post_norm=max_post,
        toll_excess=excess,
    )


# ---- Monte-Carlo envelopes -------------------------------------------------

def toll_concentration_mc(rng, trials=1000, T=10_000, d=4, eta_max=0.01, eps=(0.5, 1.0)):
    """Exceedance frequency of ||m_T - E m_T||_1 > eps for i.i.d. uniform increments.

    The centred sum of T uniforms is accumulated in chunks to bound memory.
    Returns ``{eps: (freq, stderr, bound_no_T, bound_with_T)}``.
    """
    dev = np.zeros((trials, d))
    chunk = 500
    done = 0
    while done < T:
        k = min(chunk, T - done)
        dev += (rng.random((trials, k, d)) - 0.5).sum(axis=1) * eta_max
        done += k
    l1 = np.abs(dev).sum(axis=1)
    out = {}
    for e in eps:
        freq = float(np.mean(l1 > e))
        se = math.sqrt(max(freq * (1 - freq), 1e-12) / trials)
        out[e] = (freq, se, math.exp(-2 * e * e / (d * eta_max**2)), math.exp(-2 * e * e / (T * d * eta_max**2)))
    return out


def gradient_tail_mc(rng, sigma=1.0, dim=1, warmup=64, n=100_000, deltas=(0.1, 0.5, 1.0), c=0.1):
    """Calibrate k_max on a warm-up draw of sub-Gaussian gradient norms, then
    measure P(norm > k_max (1 + delta)) on fresh draws against
    exp(-c delta^2 k_max^2 / sigma^2)."""
    warm = np.linalg.norm(sigma * rng.standard_normal((warmup, dim)), axis=1)
    k_max = calibrate_kmax(list(warm))
    fresh = np.linalg.norm(sigma * rng.standard_normal((n, dim)), axis=1)
    out = {}
    for dlt in deltas:
        freq = float(np.mean(fresh > k_max * (1 + dlt)))
        se = math.sqrt(max(freq * (1 - freq), 1e-12) / n)
        out[dlt] = (freq, se, math.exp(-c * dlt**2 * k_max**2 / sigma**2))
    return k_max, out


def double_exp_tail_mc(rng, sigma=1.0, n=100_000, zs=(math.e, math.e**2, math.e**4)):
    """Z = exp(exp(xi)), xi ~ N(0, sigma^2); compares P(Z > z) with
    exp(-(log log z)^2 / (2 sigma^2)). Works in log space: Z > z iff
    exp(xi) > log z."""
    xi = sigma * rng.standard_normal(n)
    log_z_samples = np.exp(xi)
    out = {}
    for z in zs:
        freq = float(np.mean(log_z_samples > math.log(z)))
        se = math.sqrt(max(freq * (1 - freq), 1e-12) / n)
        out[z] = (freq, se, math.exp(-0.5 * math.log(math.log(z)) ** 2 / sigma**2))
    return out
