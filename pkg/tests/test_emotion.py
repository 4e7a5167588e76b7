import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emorsi.emotion import (
    ClipState,
    EmotionWeights,
    MetaVector,
    PotentialOverflow,
    calibrate_kmax,
    clip,
    clipped_gradient,
    gradient,
    log_potential,
    potential,
    scalar_drive,
)

W3 = EmotionWeights(1.2, -0.8, 0.6, 0.0)
V0 = MetaVector(0.5, 1.0, 0.0, 0.0)
unit = st.floats(0.0, 1.0, allow_nan=False)


def v_with_u(u):
    # w = (1, -0.5, 0.5, 0.5): u = c - 0.5 e + 0.5 n + 0.5 s
    return MetaVector(0.0, 0.0, 0.0, 2.0 * u), EmotionWeights(1.0, -0.5, 0.5, 0.5)


def test_potential_at_boot_state():
    # u = 0.6 - 0.8 = -0.2
    assert potential(V0, W3) == pytest.approx(math.exp(math.exp(-0.2)) - 1, rel=1e-12)
    # direct evaluation gives 1.267620 (a commonly quoted 1.267570 is a rounding slip)
    assert potential(V0, W3) == pytest.approx(1.267620, abs=1e-6)


def test_potential_identity_at_zero():
    v = MetaVector(0.0, 0.0, 0.0, 0.0)
    assert potential(v, EmotionWeights()) == pytest.approx(math.e - 1, rel=1e-15)


def test_potential_overflow_and_log_domain():
    v, w = v_with_u(10.0)
    with pytest.raises(PotentialOverflow):
        potential(v, w)
    assert potential(v, w, log_domain=True) == pytest.approx(math.exp(10.0), rel=1e-12)
    assert log_potential(v, w) == pytest.approx(22026.4658, abs=1e-4)


@pytest.mark.parametrize("u", [0.0, -0.2, 3.0])
def test_log_potential_is_exp_u(u):
    v, w = v_with_u(u)
    assert log_potential(v, w) == pytest.approx(math.exp(u), rel=1e-12)


def test_gradient_at_boot_state():
    scale = math.exp(-0.2 + math.exp(-0.2))
    assert scale == pytest.approx(1.856570, abs=1e-6)
    g = gradient(V0, W3)
    np.testing.assert_allclose(g, scale * np.array([1.2, -0.8, 0.6, 0.0]), rtol=1e-12)
    np.testing.assert_allclose(g, [2.227884, -1.485256, 1.113942, 0.0], atol=1e-6)
    assert np.linalg.norm(g) == pytest.approx(scale * math.sqrt(2.44), rel=1e-12)
    assert np.linalg.norm(g) == pytest.approx(2.900055, abs=1e-6)


def test_gradient_zero_weights_and_unit_scale():
    zero = np.zeros(4)
    v = MetaVector(0.3, 0.2, 0.1, 1.0)
    np.testing.assert_array_equal(gradient(v, zero), zero)
    u0 = MetaVector(0.0, 0.0, 0.0, 0.0)
    w = EmotionWeights()
    np.testing.assert_allclose(gradient(u0, w), math.e * w.as_array(), rtol=1e-15)


def _fd_grad(v, w, h=1e-5):
    out = np.zeros(4)
    base = v.as_array()
    for i in range(4):
        up, dn = base.copy(), base.copy()
        up[i] += h
        dn[i] -= h
        # evaluate off the clamped box via the raw vectors
        fu = math.expm1(math.exp(float(up @ w.as_array())))
        fd = math.expm1(math.exp(float(dn @ w.as_array())))
        out[i] = (fu - fd) / (2 * h)
    return out


def random_weights(rng):
    while True:
        a = np.array([rng.uniform(0.05, 1.0), -rng.uniform(0.05, 1.0), rng.uniform(0.05, 1.0), rng.uniform(-0.5, 0.5)])
        if np.abs(a).sum() <= 3.0:
            return EmotionWeights(*a)


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        v = MetaVector(*rng.uniform(0, 1, 3), rng.uniform(0, 1.5))
        w = random_weights(rng)
        g = gradient(v, w)
        fd = _fd_grad(v, w)
        worst = max(worst, float(np.linalg.norm(g - fd) / np.linalg.norm(g)))
    assert worst < 1e-6


def test_clip_examples():
    np.testing.assert_array_equal(clip([3.0, 4.0], 10.0), [3.0, 4.0])
    np.testing.assert_allclose(clip([3.0, 4.0], 1.0), [0.6, 0.8], rtol=1e-14)
    np.testing.assert_array_equal(clip([0.0, 0.0], 1.0), [0.0, 0.0])


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=8), st.floats(1e-6, 1e3))
def test_clip_never_exceeds_threshold(g, k):
    assert np.linalg.norm(clip(g, k)) <= k


@given(unit, unit, unit, st.floats(0.0, 10.0), st.floats(1e-3, 50.0))
def test_clipped_gradient_matches_clip_of_gradient(c, e, n, s, k):
    v = MetaVector(c, e, n, s)
    w = EmotionWeights()
    g, pre = clipped_gradient(v, w, k)
    assert np.linalg.norm(g) <= k
    try:
        raw = gradient(v, w)
    except PotentialOverflow:
        return
    assert pre == pytest.approx(np.linalg.norm(raw), rel=1e-12)
    np.testing.assert_allclose(g, clip(raw, k), rtol=1e-12, atol=1e-300)


def test_scalar_drive_examples():
    assert scalar_drive([1, 0, 0, 0], [0.1, 0, 0, 0]) == pytest.approx(0.1)
    assert scalar_drive([1, 2, 3, 4], np.zeros(4)) == 0.0
    assert scalar_drive([2, -1, 1, 0], [0.1, 0.2, -0.1, 0]) == pytest.approx(-0.1, abs=1e-15)


def test_calibrate_kmax_examples():
    assert calibrate_kmax([1, 2, 3, 4, 100]) == 6.0
    assert calibrate_kmax([5, 5, 5, 5]) == pytest.approx(5.03, abs=1e-12)
    assert calibrate_kmax([0]) == pytest.approx(0.03, abs=1e-15)
    with pytest.raises(ValueError):
        calibrate_kmax([])


def test_calibrate_kmax_even_length_median():
    # median of {1, 2, 3, 10} is 2.5; deviations {1.5, 0.5, 0.5, 7.5} -> MAD 1.0
    assert calibrate_kmax([10, 1, 3, 2]) == pytest.approx(5.5)


def test_clip_state_freezes_after_warmup():
    cs = ClipState(warmup_len=4)
    assert cs.k_max == 10.0
    fired = [cs.observe(x) for x in (5, 5, 5, 5, 99)]
    assert fired == [False, False, False, True, False]
    assert cs.k_max == pytest.approx(5.03)
    assert cs.k_max >= cs.mad_floor


@given(st.floats(-5, 3), st.floats(-5, 3))
def test_potential_monotone_in_u(u1, u2):
    if u1 == u2:
        return
    lo, hi = sorted((u1, u2))
    (v1, w), (v2, _) = v_with_u(lo), v_with_u(hi)
    assert potential(v1, w) < potential(v2, w) or math.exp(lo) == math.exp(hi)


@given(unit, unit, unit, st.floats(0.0, 10.0))
def test_log_safe_consistency(c, e, n, s):
    v = MetaVector(c, e, n, s)
    w = EmotionWeights()
    f = potential(v, w)
    assert math.expm1(log_potential(v, w)) == pytest.approx(f, rel=1e-12)


@pytest.mark.parametrize("w", [(0.0, -0.8, 0.6, 0.4), (1.2, 0.1, 0.6, 0.4), (1.2, -0.8, -0.1, 0.4), (1.5, -1.0, 0.6, 0.4)])
def test_weights_outside_stability_region_rejected(w):
    with pytest.raises(ValueError):
        EmotionWeights(*w)


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5), st.floats(-50, 50))
def test_metavector_clamped_box(c, e, n, s):
    v = MetaVector.clamped(c, e, n, s)
    assert 0 <= v.c <= 1 and 0 <= v.e <= 1 and 0 <= v.n <= 1 and 0 <= v.s <= 10.0
