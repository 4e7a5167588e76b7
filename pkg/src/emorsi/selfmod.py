"""RSI trigger, phase-shift regime, the self-modification operator and the
capability metric it is judged by."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .env import RULES, Predictor, accuracy

PHASE_COOLDOWN = 50
TOL_GAIN = 0.02


@dataclass(frozen=True)
class TriggerDecision:
    epsilon_t: float
    i_pred: float
    gamma: float
    gamma_alg: float
    fired: bool
    phase_shift: bool


@dataclass(frozen=True)
class ModState:
    step_scale: float = 2.0
    lipschitz_cap: float = 1.0
    update_rule_id: int = 0
    cooldown: int = 0
    n_rules: int = len(RULES)

    def __post_init__(self):
        if not self.step_scale > 0 or not self.lipschitz_cap > 0:
            raise ValueError("step_scale and lipschitz_cap must be positive")

    def tick(self) -> "ModState":
        return replace(self, cooldown=max(self.cooldown - 1, 0)) if self.cooldown else self


def phase_shift_threshold(gamma: float, epsilon_t: float) -> float:
    return gamma / (1.0 + max(epsilon_t, 0.0)) ** 2


def rsi_trigger(epsilon_t: float, i_pred: float, gamma: float, cooldown: int = 0) -> TriggerDecision:
    """Fire iff the drive is strictly positive and the information lower bound
    strictly exceeds ``gamma``. A phase shift additionally needs
    ``i_pred > gamma_alg`` and an expired cooldown."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    fired = bool(epsilon_t > 0.0 and i_pred > gamma)
    g_alg = phase_shift_threshold(gamma, epsilon_t)
    phase = bool(fired and i_pred > g_alg and cooldown == 0)
    return TriggerDecision(float(epsilon_t), float(i_pred), float(gamma), g_alg, fired, phase)


def clip_norm(x, cap: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n = float(np.linalg.norm(x))
    if n <= cap:
        return x
    out = x * (cap / n)
    while float(np.linalg.norm(out)) > cap:
        out = out * (1.0 - 1e-15)
    return out


def apply_modification(h, epsilon_t: float, direction, mod: ModState, phase_shift: bool = False):
    """Capped ascent step ``h + clip(eta * eps * d, L * eta * eps)`` with ``d``
    normalised to unit length.

    Returns ``(h_new, mod_new, step_norm)``. A non-positive drive or a
    non-finite direction leaves everything unchanged (``step_norm == 0``).
    """
    h = np.asarray(h, dtype=float)
    if not epsilon_t > 0:
        return h.copy(), mod, 0.0
    d = np.asarray(direction, dtype=float)
    dn = float(np.linalg.norm(d))
    if not math.isfinite(dn) or not np.all(np.isfinite(d)):
        return h.copy(), mod, 0.0
    unit = d / dn if dn > 0 else d
    eta = mod.step_scale
    step = clip_norm(eta * epsilon_t * unit, mod.lipschitz_cap * eta * epsilon_t)
    h_new = h + step
    if phase_shift:
        mod = replace(mod, update_rule_id=(mod.update_rule_id + 1) % mod.n_rules, cooldown=PHASE_COOLDOWN)
    return h_new, mod, float(np.linalg.norm(step))


@dataclass(frozen=True)
class CapabilityProbe:
    obs: np.ndarray
    labels: np.ndarray
    beta_cap: float = 0.0


def capability(model: Predictor, probe: CapabilityProbe) -> float:
    """Fraction of probe samples classified correctly by argmax."""
    return accuracy(model, probe.obs, probe.labels)


def ability_gain_check(c_before: float, c_after: float, epsilon_t: float, gamma_lb: float,
                       tol_gain: float = TOL_GAIN) -> bool:
    return (c_after - c_before) >= gamma_lb * epsilon_t - tol_gain


def estimate_beta(model: Predictor, probe: CapabilityProbe, rng, n: int = 100, radius: float = 0.05) -> float:
    """Empirical Lipschitz constant of capability w.r.t. the representation:
    max over random directions of |C(h + r u) - C(h)| / r."""
    base = capability(model, probe)
    theta = model.rep_vector()
    trial = model.copy()
    best = 0.0
    for _ in range(n):
        u = rng.standard_normal(theta.size)
        u /= np.linalg.norm(u)
        trial.set_rep_vector(theta + radius * u)
        best = max(best, abs(capability(trial, probe) - base) / radius)
    return best
