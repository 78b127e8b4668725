import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from splinepolicy import metrics
from splinepolicy.metrics import acc_p95, reduction_pct, smoothness_report, zcr_velocity

trajectories = arrays(np.float64, st.tuples(st.integers(3, 40), st.integers(1, 3)),
                      elements=st.floats(-100, 100))


def brute_force_zcr(x, dt):
    v = [(x[t + 1] - x[t]) / dt for t in range(len(x) - 1)]
    flips = sum(1 for t in range(len(v) - 1) if v[t] * v[t + 1] < 0)
    return flips / (len(x) - 2)


def nearest_rank_p95(values):
    s = np.sort(values)
    return s[math.ceil(0.95 * len(s)) - 1]


def test_monotone_has_no_crossings():
    x = np.cumsum(np.random.default_rng(0).uniform(0.1, 1, 40))[:, None]
    assert zcr_velocity(x)[0] == 0


def test_alternating_saw_crosses_every_step():
    x = ((-1.0) ** np.arange(40))[:, None]
    assert zcr_velocity(x)[0] == 1.0


def test_sine_matches_direct_count():
    t = np.arange(40) / 30
    x = np.sin(2 * np.pi * t)
    assert zcr_velocity(x[:, None], 1 / 30)[0] == pytest.approx(brute_force_zcr(x, 1 / 30))
    assert zcr_velocity(x[:, None], 1 / 30)[0] == pytest.approx(2 / 38)


def test_exact_zero_velocity_breaks_crossing():
    x = np.array([0.0, 1.0, 1.0, 0.0])[:, None]
    assert zcr_velocity(x)[0] == 0


def test_ramp_has_zero_acceleration():
    assert acc_p95(np.linspace(0, 3, 40)[:, None])[0] == pytest.approx(0, abs=1e-9)


def test_quadratic_has_constant_acceleration():
    t = np.arange(40, dtype=float)
    assert acc_p95((t**2)[:, None], dt=1.0)[0] == pytest.approx(2.0)


def test_acc_p95_matches_sort_oracle(rng):
    for _ in range(20):
        x = rng.normal(size=(int(rng.integers(3, 80)), 3))
        acc = np.abs(x[2:] - 2 * x[1:-1] + x[:-2]) / (1 / 30) ** 2
        expect = [nearest_rank_p95(acc[:, d]) for d in range(3)]
        np.testing.assert_allclose(acc_p95(x), expect, rtol=1e-12)


@pytest.mark.parametrize("fn", [zcr_velocity, acc_p95])
def test_short_trajectory_rejected(fn):
    with pytest.raises(ValueError):
        fn(np.zeros((2, 1)))


@given(trajectories)
def test_zcr_matches_brute_force(x):
    expect = [brute_force_zcr(x[:, d], 1 / 30) for d in range(x.shape[1])]
    np.testing.assert_allclose(zcr_velocity(x), expect)


@given(trajectories, st.floats(1e-3, 1e3))
def test_zcr_scale_invariant(x, k):
    # rounding can turn a tiny velocity into an exact zero; otherwise the rate is unchanged
    v = np.diff(x, axis=0)
    if np.all(np.sign(np.diff(x * k, axis=0)) == np.sign(v)):
        np.testing.assert_array_equal(zcr_velocity(x * k), zcr_velocity(x))


@given(trajectories, st.floats(-50, 50))
def test_shift_invariance(x, c):
    # velocity signs must survive the shift for ZCR to be comparable bit-for-bit
    if np.all(np.sign(np.diff(x + c, axis=0)) == np.sign(np.diff(x, axis=0))):
        np.testing.assert_array_equal(zcr_velocity(x + c), zcr_velocity(x))
    # shifting by up to 50 perturbs each sample by an ulp of ~150, amplified by 4 / dt^2
    np.testing.assert_allclose(acc_p95(x + c), acc_p95(x), rtol=1e-9, atol=1e-8)


@given(trajectories)
def test_report_ranges(x):
    r = metrics.report(x)
    assert np.all((0 <= r.zcr_per_dim) & (r.zcr_per_dim <= 1))
    assert np.all(r.acc_p95_per_dim >= 0)


def test_identical_inputs_give_zero_reduction(rng):
    x = rng.normal(size=(40, 3))
    d = smoothness_report(x, x).to_dict()
    assert d["zcr_reduction_pct"] == 0 and d["acc_p95_reduction_pct"] == 0
    assert d["raw"]["acc_units"] == "action-units/s^2"


def test_shape_mismatch(rng):
    with pytest.raises(ValueError):
        smoothness_report(rng.normal(size=(40, 3)), rng.normal(size=(39, 3)))


def test_reduction_pct():
    assert reduction_pct(4.0, 1.0) == 75.0
    assert reduction_pct(0.0, 1.0) == 0.0
    np.testing.assert_allclose(reduction_pct(np.array([2.0, 0.0]), np.array([1.0, 0.0])), [50, 0])
