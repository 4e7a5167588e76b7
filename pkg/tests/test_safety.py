import logging
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from emorsi.reward import ChannelWeights
from emorsi.safety import (
    SafetyError,
    SafetyState,
    TollVector,
    audit,
    buffer_caps,
    double_exp_tail_mc,
    make_safety_state,
    safe_alpha,
    toll_concentration_mc,
    toll_envelope,
    toll_update,
)


def test_toll_seeded_at_five_percent():
    t = TollVector.seeded([1.0, 2.0, 0.0, 4.0])
    np.testing.assert_allclose(t.m, [0.05, 0.1, 0.0, 0.2])


def test_toll_update_examples():
    t = TollVector(np.array([0.1, 0.2]), eta_max=0.1, thresholds=np.ones(2))
    np.testing.assert_allclose(toll_update(t, [0.05, 0.0]).m, [0.15, 0.2])
    np.testing.assert_array_equal(toll_update(t, [0.0, 0.0]).m, t.m)
    with pytest.raises(SafetyError):
        toll_update(t, [0.11, 0.0])
    with pytest.raises(SafetyError):
        toll_update(t, [-0.01, 0.0])
    with pytest.raises(SafetyError):
        toll_update(t, [0.0, 0.0, 0.0])


@given(arrays(float, (20, 4), elements=st.floats(0.0, 0.01)))
def test_toll_stays_nonnegative_and_adds_exactly(incs):
    t = TollVector.seeded(np.ones(4), eta_max=0.01)
    m0 = t.m.copy()
    for row in incs:
        t = toll_update(t, row)
        assert np.all(t.m >= 0)
    np.testing.assert_allclose(t.m, m0 + incs.sum(axis=0), rtol=1e-12)


def test_safe_alpha_examples():
    assert safe_alpha(0.4, 2.0) == pytest.approx(0.1)
    assert safe_alpha(1.0, 0.5) == pytest.approx(1.0)
    with pytest.raises(SafetyError):
        safe_alpha(0.0, 1.0)


def test_alpha_at_safe_radius_fails_validation():
    # gamma=0.4, k_max=2 gives alpha* = 0.1 exactly
    _, _, _, errors = make_safety_state(0.4, 2.0, ChannelWeights(alpha=0.1))
    assert errors and "safe radius" in errors[0]
    _, _, _, errors = make_safety_state(0.4, 2.0, ChannelWeights(alpha=0.0999))
    assert not errors


def test_buffer_caps_examples():
    assert buffer_caps(0.4, 2.0) == pytest.approx((0.2, 0.2))
    assert buffer_caps(1e-12, 2.0)[0] == pytest.approx(0.0, abs=1e-11)


def test_oversized_baseline_weight_clamped_with_warning(caplog):
    with caplog.at_level(logging.WARNING, logger="emorsi.safety"):
        state, w, warnings, errors = make_safety_state(0.4, 2.0, ChannelWeights(alpha=0.05, xi_bl=0.3, xi_dg=0.1))
    assert w.xi_bl == pytest.approx(0.2) and w.xi_dg == 0.1
    assert len(warnings) == 1 and "xi_bl" in warnings[0]
    assert "clamped" in caplog.text
    assert state.xi_caps == pytest.approx((0.2, 0.2))
    assert state.l0_ext == 0.02


def _state():
    return SafetyState(k_max=2.0, alpha=0.05, alpha_star=0.1, gamma_est=0.4, xi_caps=(0.2, 0.2))


def test_audit_fresh_state_in_region():
    t = TollVector.seeded(np.ones(4))
    rep = audit([], _state(), t, t.l1(), T=1, xi_dg=0.1, xi_bl=0.2)
    assert rep.in_region and rep.failed() == []


def test_audit_flags_clip_violation_only():
    t = TollVector.seeded(np.ones(4))
    rep = audit([1.0, 2.0000001, 0.5], _state(), t, t.l1(), T=100, xi_dg=0.1, xi_bl=0.2)
    assert not rep.in_region and rep.failed() == ["clip_ok"]


def test_audit_toll_within_envelope():
    t = TollVector.seeded(np.ones(4), eta_max=0.01)
    m0 = t.l1()
    T = 100
    env = toll_envelope(T, 4, 0.01)
    assert env == pytest.approx(3 * math.sqrt(4 * 1e-4 * math.log(T) / 2))
    # deterministic increments summing to just under the envelope
    per = env / 4 * 0.999
    for _ in range(int(per // 0.01)):
        t = toll_update(t, [0.01] * 4)
    t = toll_update(t, [per % 0.01] * 4)
    rep = audit([], _state(), t, m0, T, 0.1, 0.2)
    assert rep.toll_ok and rep.toll_excess < 0
    t = toll_update(t, [0.01] * 4)
    assert audit([], _state(), t, m0, T, 0.1, 0.2).failed() == ["toll_ok"]


def test_audit_flags_alpha_and_caps_separately():
    t = TollVector.seeded(np.ones(4))
    bad_alpha = SafetyState(2.0, 0.1, 0.1, 0.4, xi_caps=(0.2, 0.2))
    assert audit([], bad_alpha, t, t.l1(), 10, 0.1, 0.2).failed() == ["alpha_ok"]
    assert audit([], _state(), t, t.l1(), 10, 0.1, 0.3).failed() == ["caps_ok"]


def test_toll_mc_helpers_report_both_bounds():
    res = toll_concentration_mc(np.random.default_rng(0), trials=200, T=500, d=4, eta_max=0.01, eps=(0.1,))
    freq, se, b, bt = res[0.1]
    assert 0 <= freq <= 1 and se >= 0
    assert b == pytest.approx(math.exp(-2 * 0.01 / (4 * 1e-4)))
    assert bt == pytest.approx(math.exp(-2 * 0.01 / (500 * 4 * 1e-4)))


def test_double_exp_tail_at_e_is_a_half():
    # Z > e iff xi > 0, so the frequency is one half and the envelope is exp(0) = 1
    res = double_exp_tail_mc(np.random.default_rng(1), n=20_000, zs=(math.e,))
    freq, se, bound = res[math.e]
    assert abs(freq - 0.5) < 4 * se and bound == pytest.approx(1.0)
