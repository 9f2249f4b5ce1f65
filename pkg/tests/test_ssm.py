"""Frozen recurrence: transition pair, discretization, state stepping."""

import math

import numpy as np
import pytest

from fieldstream import autodiff as ad
from fieldstream.autodiff import rng as rngmod
from fieldstream.ssm import (HippoSystem, ScalarSSM, StreamState,
                             discretize_bilinear, hippo_legs, median_step)


def test_hippo_entries_match_formula():
    order = 8
    a, b = hippo_legs(order)
    for l in range(order):
        for k in range(order):
            if l > k:
                want = -math.sqrt((2 * l + 1) * (2 * k + 1))
            elif l == k:
                want = -(l + 1)
            else:
                want = 0.0
            assert a[l, k] == want, (l, k)
        assert b[l] == math.sqrt(2 * l + 1)


def test_hippo_order_two_closed_form():
    a, b = hippo_legs(2)
    np.testing.assert_array_equal(a, [[-1.0, 0.0], [-math.sqrt(3.0), -2.0]])
    np.testing.assert_array_equal(b, [1.0, math.sqrt(3.0)])


def test_hippo_rejects_nonpositive_order():
    with pytest.raises(ValueError):
        hippo_legs(0)


def test_bilinear_scalar_exact_thirds():
    abar, bbar = discretize_bilinear(np.array([[-1.0]]), np.array([1.0]), 1.0)
    # (1 + 1/2)^-1 (1 - 1/2) and (1 + 1/2)^-1: exact in binary arithmetic
    assert abar[0, 0] == 0.5 / 1.5
    assert bbar[0] == 1.0 / 1.5


def test_bilinear_order_two_matches_hand_inverse():
    a, b = hippo_legs(2)
    dt = 0.37
    abar, bbar = discretize_bilinear(a, b, dt)
    # resolvent is lower triangular [[r00, 0], [r10, r11]]; invert by hand
    r = np.eye(2) - 0.5 * dt * a
    inv = np.array([
        [1.0 / r[0, 0], 0.0],
        [-r[1, 0] / (r[0, 0] * r[1, 1]), 1.0 / r[1, 1]],
    ])
    np.testing.assert_allclose(abar, inv @ (np.eye(2) + 0.5 * dt * a), rtol=1e-14)
    np.testing.assert_allclose(bbar, inv @ (dt * b), rtol=1e-14)


def test_bilinear_dense_fallback_matches_solve():
    gen = rngmod.stream(0, "dense")
    a = gen.normal(size=(4, 4))  # not triangular
    b = gen.normal(size=4)
    dt = 0.21
    abar, bbar = discretize_bilinear(a, b, dt)
    r = np.eye(4) - 0.5 * dt * a
    np.testing.assert_allclose(abar, np.linalg.solve(r, np.eye(4) + 0.5 * dt * a),
                               rtol=1e-12)
    np.testing.assert_allclose(bbar, np.linalg.solve(r, dt * b), rtol=1e-12)


def test_bilinear_validation():
    a, b = hippo_legs(2)
    for bad_dt in (0.0, -1.0, math.nan, math.inf):
        with pytest.raises(ValueError):
            discretize_bilinear(a, b, bad_dt)
    with pytest.raises(ValueError, match="expected"):
        discretize_bilinear(a, np.ones(5), 0.1)
    # a positive diagonal entry can null the resolvent diagonal
    with pytest.raises(np.linalg.LinAlgError):
        discretize_bilinear(np.array([[2.0]]), np.array([1.0]), 1.0)


def test_small_step_stays_near_identity():
    # row sums of A grow with the order, so this bound is an order<=3 property
    for order in (1, 2, 3):
        a, b = hippo_legs(order)
        abar, _ = discretize_bilinear(a, b, 1e-9)
        assert np.max(np.abs(abar - np.eye(order)).sum(axis=1)) < 1e-8


def test_state_step_matches_matrix_power_oracle():
    order, channels, frames = 5, 3, 6
    system = HippoSystem(order)
    gen = rngmod.stream(0, "impulse")
    summaries = gen.normal(size=(frames, channels))
    dt = 1.0

    x = ad.constant(np.zeros((order, channels)))
    for m in range(frames):
        x = system.step(x, ad.constant(summaries[m]), dt)

    abar, bbar = discretize_bilinear(*hippo_legs(order), dt)
    want = np.zeros((order, channels))
    for m in range(frames):
        power = np.linalg.matrix_power(abar, frames - 1 - m)
        want += power @ np.outer(bbar, summaries[m])
    np.testing.assert_allclose(x.data, want, rtol=1e-10, atol=1e-12)


def test_scalar_ssm_impulse_response():
    order = 4
    system = HippoSystem(order)
    c = rngmod.stream(0, "readout").normal(size=order)
    probe = ScalarSSM(system, c, d=0.25)
    abar, bbar = system.discretize(0.8)

    x = np.zeros(order)
    outputs = []
    for m in range(5):
        s = 1.0 if m == 0 else 0.0  # unit impulse at the first frame
        x, y = probe.step(x, s, 0.8)
        outputs.append(y)

    assert outputs[0] == pytest.approx(float(c @ bbar) + 0.25)
    for k in range(1, 5):
        want = float(c @ (np.linalg.matrix_power(abar, k) @ bbar))
        assert outputs[k] == pytest.approx(want, rel=1e-12)


def test_step_gradients_flow_to_summary():
    system = HippoSystem(3)
    store = ad.ParameterStore()
    z = store.add("z", rngmod.stream(0, "zgrad").normal(size=4))

    def fn():
        x = system.step(ad.constant(np.zeros((3, 4))), z, 0.7)
        x = system.step(x, z, 0.7)
        return ad.sum_(ad.mul(x, x))

    assert ad.finite_diff_check(fn, store) < 1e-6


def test_step_shape_validation():
    system = HippoSystem(3)
    with pytest.raises(ad.ShapeError):
        system.step(ad.constant(np.zeros((4, 2))), ad.constant(np.zeros(2)), 1.0)
    with pytest.raises(ad.ShapeError):
        system.step(ad.constant(np.zeros((3, 2))), ad.constant(np.zeros(5)), 1.0)


def test_discretization_cache_identity():
    system = HippoSystem(4)
    a1 = system.discretize(1.0 / 3.0)
    a2 = system.discretize(0.3333333333333)  # equal to 12 significant digits
    assert a1[0] is a2[0] and a1[1] is a2[1]
    a3 = system.discretize(0.334)
    assert a3[0] is not a1[0]


def test_median_step():
    assert median_step([0.0, 1.0, 2.0, 3.0]) == 1.0
    assert median_step([0.0, 1.0, 3.0, 4.0, 6.0]) == 1.5
    assert median_step([5.0]) == 1.0
    assert median_step([]) == 1.0
    with pytest.raises(ValueError, match="increasing"):
        median_step([0.0, 2.0, 1.0])


def test_stream_state_clock():
    state = StreamState(x=ad.constant(np.zeros((2, 2))), dt_ref=2.0)
    assert state.next_dt(10.0) == 1.0  # first step is one by construction
    advanced = state.advanced(state.x, 10.0)
    assert advanced.frame == 1 and advanced.last_t == 10.0
    assert advanced.next_dt(13.0) == 1.5
    with pytest.raises(ValueError, match="increasing"):
        advanced.next_dt(10.0)


def test_equal_spacing_normalizes_to_exactly_one():
    # integer timestamps make both the diffs and the median exact, so the
    # normalized step is the exact quotient 1.0 every frame
    ts = np.array([0.0, 3.0, 6.0, 9.0, 12.0])
    ref = median_step(ts)
    state = StreamState(x=ad.constant(np.zeros((1, 1))), dt_ref=ref)
    for t in ts:
        assert state.next_dt(float(t)) == 1.0
        state = state.advanced(state.x, float(t))
