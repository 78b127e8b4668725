import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.interpolate import BSpline

from splinepolicy.bspline import (
    ActionChunk,
    BSplineCurve,
    KnotVector,
    basis,
    curve_from_points,
    derivative,
    design_matrix,
    evaluate,
    fit_batch,
    fit_least_squares,
    make_clamped_knots,
    reconstruct,
    residual,
    sample_params,
)
from splinepolicy.errors import IllConditionedError, SplineDomainError


def random_curve(rng, n_ctrl=8, degree=3, dim=3, scale=1.0):
    return BSplineCurve(make_clamped_knots(n_ctrl, degree), scale * rng.normal(size=(n_ctrl, dim)))


# ---------------------------------------------------------------- knots

def test_knots_without_interior():
    assert make_clamped_knots(4, 3).knots.tolist() == [0, 0, 0, 0, 1, 1, 1, 1]


def test_knots_single_interior():
    assert make_clamped_knots(5, 3).knots.tolist() == [0, 0, 0, 0, 0.5, 1, 1, 1, 1]


def test_knots_on_tick_domain_match_reference():
    kv = make_clamped_knots(8, 3, (0.0, 39.0))
    assert len(kv) == 8 + 3 + 1
    np.testing.assert_allclose(kv.knots[4:8], [7.8, 15.6, 23.4, 31.2], atol=1e-12)
    # scipy builds the same clamped spline space
    ref = BSpline(kv.knots, np.eye(8), 3)
    u = np.linspace(0, 39, 57)[:-1]
    np.testing.assert_allclose(design_matrix(u, kv), ref(u), atol=1e-14)


@pytest.mark.parametrize("n_ctrl,degree", [(3, 3), (0, 0), (1, 2)])
def test_knots_reject_too_few_points(n_ctrl, degree):
    with pytest.raises(ValueError):
        make_clamped_knots(n_ctrl, degree)


def test_knots_reject_degenerate_domain():
    with pytest.raises(ValueError):
        make_clamped_knots(6, 3, (1.0, 1.0))


@pytest.mark.parametrize("knots", [
    [0, 0, 0, 0.5, 1, 1, 1, 1],          # not clamped at the start
    [0, 0, 0, 0, 0.2, 1, 1, 1, 1, 1],     # non-uniform interior
    [0, 0, 0, 0, 0.6, 0.4, 1, 1, 1, 1],   # decreasing
])
def test_knot_vector_validation(knots):
    with pytest.raises(ValueError):
        KnotVector(np.array(knots, float), 3)


@given(st.integers(1, 12), st.integers(0, 4))
def test_knot_vector_invariants(extra, degree):
    n = degree + extra
    kv = make_clamped_knots(n, degree)
    k = kv.knots
    assert len(k) == n + degree + 1
    assert np.all(np.diff(k) >= 0)
    assert np.all(k[: degree + 1] == 0) and np.all(k[-degree - 1 :] == 1)
    assert kv.domain == (0.0, 1.0)


def test_curve_rejects_wrong_row_count(rng):
    with pytest.raises(ValueError):
        BSplineCurve(make_clamped_knots(8, 3), rng.normal(size=(7, 2)))


def test_curve_domain_from_knots():
    kv = make_clamped_knots(6, 2, (2.0, 5.0))
    assert BSplineCurve(kv, np.zeros((6, 1))).domain == (2.0, 5.0)


# ---------------------------------------------------------------- basis

def test_degree_zero_is_indicator():
    kv = make_clamped_knots(4, 0)  # breaks at 0, .25, .5, .75, 1
    assert basis(1, 0, 0.3, kv) == 1.0
    assert basis(1, 0, 0.6, kv) == 0.0
    assert basis(2, 0, 0.6, kv) == 1.0


def test_first_basis_is_one_at_start():
    kv = make_clamped_knots(8, 3)
    assert basis(0, 3, 0.0, kv) == 1.0


def test_last_basis_is_one_at_end():
    kv = make_clamped_knots(8, 3)
    assert basis(7, 3, 1.0, kv) == 1.0
    assert basis(6, 3, 1.0, kv) == 0.0


def test_basis_domain_error():
    kv = make_clamped_knots(8, 3)
    with pytest.raises(SplineDomainError):
        basis(0, 3, 1.5, kv)
    with pytest.raises(SplineDomainError):
        evaluate(random_curve(np.random.default_rng(0)), -0.1)


def test_partition_of_unity(rng):
    for n, p in [(8, 3), (5, 2), (12, 4), (4, 3)]:
        B = design_matrix(rng.uniform(0, 1, 1000), make_clamped_knots(n, p))
        assert np.max(np.abs(B.sum(axis=1) - 1)) < 1e-12


def test_design_matrix_matches_recursion(rng):
    kv = make_clamped_knots(8, 3)
    u = np.concatenate([rng.uniform(0, 1, 40), kv.knots[3:9]])
    B = design_matrix(u, kv)
    oracle = np.array([[basis(i, 3, x, kv) for i in range(8)] for x in u])
    np.testing.assert_allclose(B, oracle, atol=1e-14)


def test_design_matrix_matches_scipy(rng):
    for n, p in [(8, 3), (10, 2), (6, 5)]:
        kv = make_clamped_knots(n, p)
        u = rng.uniform(0, 1, 200)
        ref = BSpline.design_matrix(u, kv.knots, p).toarray()
        np.testing.assert_allclose(design_matrix(u, kv), ref, atol=1e-14)


def test_local_support(rng):
    kv = make_clamped_knots(9, 3)
    u = rng.uniform(0, 1, 500)
    B = design_matrix(u, kv)
    t = kv.knots
    for i in range(9):
        outside = (u < t[i]) | (u > t[i + 4])
        assert np.all(B[outside, i] == 0)


# ---------------------------------------------------------------- evaluation

def test_constant_control_points_give_constant_curve(rng):
    v = rng.normal(size=3)
    curve = BSplineCurve(make_clamped_knots(8, 3), np.tile(v, (8, 1)))
    np.testing.assert_allclose(evaluate(curve, rng.uniform(0, 1, 50)), np.tile(v, (50, 1)),
                               atol=1e-14)


def test_endpoint_interpolation(rng):
    curve = random_curve(rng)
    np.testing.assert_array_equal(evaluate(curve, 0.0), curve.control_points[0])
    np.testing.assert_array_equal(evaluate(curve, 1.0), curve.control_points[-1])


def test_evaluate_matches_brute_force_sum(rng):
    curve = random_curve(rng, dim=2)
    for u in rng.uniform(0, 1, 20):
        direct = sum(basis(i, 3, u, curve.knots) * curve.control_points[i] for i in range(8))
        np.testing.assert_allclose(curve(u), direct, atol=1e-13)


def test_scalar_and_vector_shapes(rng):
    curve = random_curve(rng)
    assert curve(0.3).shape == (3,)
    assert curve([0.3, 0.4]).shape == (2, 3)


# ---------------------------------------------------------------- derivatives

def test_derivative_of_constant_is_zero():
    curve = BSplineCurve(make_clamped_knots(8, 3), np.full((8, 2), 4.2))
    d = derivative(curve)
    assert d.degree == 2
    np.testing.assert_allclose(evaluate(d, np.linspace(0, 1, 33)), 0, atol=1e-12)


def test_derivative_order_limits(rng):
    curve = random_curve(rng)
    with pytest.raises(ValueError):
        derivative(curve, 4)
    with pytest.raises(ValueError):
        derivative(curve, 0)


def test_derivative_matches_central_difference(rng):
    # unit-scale curve with a single interior knot keeps the truncation error tiny
    h = 1e-4
    for _ in range(20):
        curve = random_curve(rng, n_ctrl=5, scale=0.5)
        d1 = derivative(curve)
        u = rng.uniform(h, 1 - h, 30)
        fd = (curve(u + h) - curve(u - h)) / (2 * h)
        assert np.max(np.abs(d1(u) - fd)) < 1e-6


def test_derivative_matches_scipy(rng):
    curve = random_curve(rng)
    ref = BSpline(curve.knots.knots, curve.control_points, 3)
    u = rng.uniform(0, 1, 100)
    for order in (1, 2, 3):
        np.testing.assert_allclose(derivative(curve, order)(u), ref(u, nu=order),
                                   rtol=1e-10, atol=1e-9)


def test_eight_point_fd_within_truncation_bound(rng):
    # central-difference error is at most h^2/6 * max|f'''|
    h = 1e-4
    curve = random_curve(rng)
    d3 = derivative(curve, 3)
    bound = h**2 / 6 * np.max(np.abs(d3.control_points)) + 1e-8
    u = rng.uniform(h, 1 - h, 200)
    fd = (curve(u + h) - curve(u - h)) / (2 * h)
    assert np.max(np.abs(derivative(curve)(u) - fd)) <= bound


def test_second_derivative_continuous_at_knots(rng):
    curve = random_curve(rng, n_ctrl=10)
    d2 = derivative(curve, 2)
    interior = curve.knots.knots[4:10]
    left = evaluate(d2, interior, side="left")
    right = evaluate(d2, interior, side="right")
    assert np.max(np.abs(left - right)) < 1e-9


def test_third_derivative_jumps_at_knots(rng):
    # sanity check that side="left" really takes the other span
    curve = random_curve(rng)
    d3 = derivative(curve, 3)
    k = curve.knots.knots[4:8]
    assert np.max(np.abs(evaluate(d3, k, side="left") - evaluate(d3, k, side="right"))) > 1e-6


# ---------------------------------------------------------------- fitting

def normal_equations(a, n_ctrl=8, degree=3):
    B = design_matrix(sample_params(len(a)), make_clamped_knots(n_ctrl, degree))
    return np.linalg.solve(B.T @ B, B.T @ a)


def test_fit_constant_sequence():
    v = np.array([0.3, -1.0, 2.5])
    fit = fit_least_squares(np.tile(v, (40, 1)), 8, 3)
    np.testing.assert_allclose(fit.curve.control_points, np.tile(v, (8, 1)), atol=1e-12)
    assert fit.residual < 1e-24


@pytest.mark.parametrize("degree", [1, 2, 3])
def test_fit_linear_ramp_exact(degree):
    a = np.linspace(-1, 2, 40)[:, None] * np.array([1.0, -0.5])
    assert fit_least_squares(a, 6, degree).residual < 1e-24


def test_fit_matches_normal_equations(rng):
    a = rng.normal(size=(40, 1))
    fit = fit_least_squares(a, 8, 3)
    np.testing.assert_allclose(fit.curve.control_points, normal_equations(a), atol=1e-8)


def test_fit_rejects_short_chunk(rng):
    with pytest.raises(IllConditionedError):
        fit_least_squares(rng.normal(size=(7, 2)), 8, 3)


def test_fit_interpolates_when_square(rng):
    a = rng.normal(size=(8, 2))
    fit = fit_least_squares(a, 8, 3)
    assert fit.residual < 1e-20


def test_fit_is_optimal_under_perturbation(rng):
    a = rng.normal(size=(40, 3))
    fit = fit_least_squares(a, 8, 3)
    for i in range(8):
        for d in range(3):
            for eps in (1e-3, -1e-3):
                c = np.array(fit.curve.control_points)
                c[i, d] += eps
                assert residual(fit.curve.with_control_points(c), a) >= fit.residual


def test_fit_batch_matches_single(rng):
    chunks = rng.normal(size=(5, 40, 3))
    batch = fit_batch(chunks, 8, 3)
    for b in range(5):
        np.testing.assert_allclose(batch[b], fit_least_squares(chunks[b]).curve.control_points,
                                   atol=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_fit_reconstruct_round_trip(seed):
    rng = np.random.default_rng(seed)
    curve = random_curve(rng)
    chunk = reconstruct(curve, 40)
    refit = fit_least_squares(chunk)
    np.testing.assert_allclose(refit.curve.control_points, curve.control_points, atol=1e-8)
    np.testing.assert_allclose(reconstruct(refit.curve, 40).actions, chunk.actions, atol=1e-8)


def test_reconstruct_two_samples(rng):
    curve = random_curve(rng)
    out = reconstruct(curve, 2).actions
    np.testing.assert_array_equal(out, [curve(0.0), curve(1.0)])
    with pytest.raises(ValueError):
        reconstruct(curve, 1)


def test_reconstruct_residual_matches_fit(rng):
    a = rng.normal(size=(40, 3))
    fit = fit_least_squares(a, 8, 3)
    direct = float(np.sum((a - reconstruct(fit.curve, 40).actions) ** 2))
    assert direct == pytest.approx(fit.residual, rel=1e-12)


def test_sample_params_exact_endpoints():
    u = sample_params(40, (0.0, 1.0))
    assert u[0] == 0.0 and u[-1] == 1.0
    np.testing.assert_allclose(np.diff(u), 1 / 39)


def test_curve_json_round_trip(rng):
    curve = random_curve(rng)
    d = json.loads(curve.to_json())
    assert set(d) == {"degree", "knots", "control_points", "domain"}
    back = BSplineCurve.from_json(curve.to_json())
    np.testing.assert_array_equal(back.control_points, curve.control_points)
    assert back.knots == curve.knots


def test_action_chunk_validation():
    with pytest.raises(ValueError):
        ActionChunk(np.array([[0.0, np.nan]]))
    with pytest.raises(ValueError):
        ActionChunk(np.zeros((3, 2)), dt=0.0)


def test_curve_from_points_uses_unit_domain(rng):
    c = curve_from_points(rng.normal(size=(8, 2)))
    assert c.domain == (0.0, 1.0) and c.degree == 3
