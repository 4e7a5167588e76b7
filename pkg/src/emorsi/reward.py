"""Per-step reward composition.

All "f <- f + bonus" adjustments are additive items on the reward sample; the
potential itself (and hence its gradient) is never altered.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

CHANNELS = (
    "transmission_success",
    "misunderstanding_repair",
    "self_error_recognition",
    "structure_discovery",
    "co_creation",
)


class RewardBoundsError(ValueError):
    pass


@dataclass
class ChannelWeights:
    xi_spike: tuple = (0.2, 0.2, 0.2, 0.2, 0.2)
    xi_penalty: float = 0.5
    xi_dg: float = 0.1
    xi_bl: float = 0.3
    xi_md: float = 0.7
    xi_mce: float = 1.0
    alpha: float = 0.1
    p_b: float = 0.05
    lambda_dg: float = 0.8

    def __post_init__(self):
        self.xi_spike = tuple(float(x) for x in self.xi_spike)
        if len(self.xi_spike) != len(CHANNELS):
            raise ValueError(f"need {len(CHANNELS)} spike weights, got {len(self.xi_spike)}")
        if not self.xi_penalty > 0:
            raise ValueError("xi_penalty must be positive")
        if not 0.0 <= self.lambda_dg < 1.0:
            raise ValueError("lambda_dg must lie in [0, 1)")
        if not 0.0 <= self.p_b <= 1.0:
            raise ValueError("p_b must be a probability")


@dataclass
class RewardBreakdown:
    base_f: float = 0.0
    spikes: float = 0.0
    penalty: float = 0.0
    dg_bonus: float = 0.0
    baseline_bonus: float = 0.0
    md_bonus: float = 0.0
    mce_bonus: float = 0.0
    external_mixed: float = 0.0
    total: float = 0.0

    @staticmethod
    def item_names():
        return [f.name for f in fields(RewardBreakdown) if f.name != "total"]

    def items(self):
        return [getattr(self, n) for n in self.item_names()]


@dataclass
class EligibilityTrace:
    z: float = 0.0
    z_prev: float = 0.0


def event_spikes(flags, misinformation: bool, w: ChannelWeights):
    """Weighted sum over the five pleasure channels and the misinformation penalty."""
    flags = [bool(f) for f in flags]
    if len(flags) != len(CHANNELS):
        raise ValueError(f"expected {len(CHANNELS)} channel flags")
    spikes = 0.0
    for xi, on in zip(w.xi_spike, flags):
        if on:
            spikes += xi
    penalty = -w.xi_penalty if misinformation else 0.0
    return spikes, penalty


def dg_update(trace: EligibilityTrace, f_now: float, w: ChannelWeights):
    z_new = w.lambda_dg * trace.z + f_now
    bonus = w.xi_dg * (z_new - trace.z)
    return EligibilityTrace(z=z_new, z_prev=trace.z), bonus


def baseline_bonus(rng_draw: float, w: ChannelWeights) -> float:
    return w.xi_bl if rng_draw < w.p_b else 0.0


def md_mce_bonus(md: float, mce_value: float, w: ChannelWeights):
    return w.xi_md * math.tanh(md), w.xi_mce * math.tanh(mce_value)


def compose(
    base_f: float,
    r_ext: float,
    w: ChannelWeights,
    r_max: float = math.inf,
    spikes: float = 0.0,
    penalty: float = 0.0,
    dg_bonus: float = 0.0,
    baseline: float = 0.0,
    md_bonus: float = 0.0,
    mce_bonus: float = 0.0,
) -> RewardBreakdown:
    if not abs(r_ext) <= r_max:
        raise RewardBoundsError(f"|r_ext|={abs(r_ext):.6g} exceeds r_max={r_max:.6g}")
    rb = RewardBreakdown(
        base_f=base_f,
        spikes=spikes,
        penalty=penalty,
        dg_bonus=dg_bonus,
        baseline_bonus=baseline,
        md_bonus=md_bonus,
        mce_bonus=mce_bonus,
        external_mixed=w.alpha * r_ext,
    )
    # Left-to-right sum in item order; the trace audit reproduces it bit-exactly.
    total = 0.0
    for x in rb.items():
        total += x
    rb.total = total
    return rb


def itemized_total(items) -> float:
    total = 0.0
    for x in items:
        total += float(x)
    return total


def reward_array(rows) -> np.ndarray:
    return np.array([r.total for r in rows], dtype=float)
