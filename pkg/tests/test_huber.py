import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from burgers_tgv.grid import DifferenceOperators, build_grid
from burgers_tgv.huber import (
    RegWeights, huber_constants, huber_grad, huber_hess_diag, huber_value, projected_hessian,
    tgv_exact, tgv_smoothed,
)

GAMMAS = [1.0, 10.0, 1e2, 1e4]


def test_constants_reject_small_gamma():
    with pytest.raises(ValueError):
        huber_constants(0.5)
    k = huber_constants(10.0)
    assert k.l1 == pytest.approx(0.095) and k.l2 == pytest.approx(0.105)


@pytest.mark.parametrize("gamma", GAMMAS)
def test_pieces_join_with_matching_value_slope_and_curvature(gamma):
    k = huber_constants(gamma)
    eps = 1e-9 * max(k.l1, 1e-3)
    for edge in (k.l1, k.l2):
        lo, hi = edge - eps, edge + eps
        assert huber_value(lo, gamma) == pytest.approx(huber_value(hi, gamma), abs=1e-8)
        assert huber_grad(lo, gamma) == pytest.approx(huber_grad(hi, gamma), abs=1e-6)
        assert huber_hess_diag(np.array([lo]), gamma)[0] == pytest.approx(
            huber_hess_diag(np.array([hi]), gamma)[0], abs=1e-4 * gamma)


@pytest.mark.parametrize("gamma", [1.0, 10.0, 1e2])
def test_value_is_integral_of_derivative(gamma):
    for t in [-3.0, -0.4, 0.01, 0.099, 0.5, 2.0]:
        ref = quad(lambda s: float(huber_grad(s, gamma)), 0.0, t, points=None, limit=200)[0]
        assert huber_value(t, gamma) == pytest.approx(ref, abs=1e-9)


@pytest.mark.parametrize("gamma", [10.0, 1e2])
def test_second_derivative_matches_finite_differences(gamma):
    t = np.linspace(-0.3, 0.3, 601)
    k = huber_constants(gamma)
    t = t[(np.abs(np.abs(t) - k.l1) > 1e-4) & (np.abs(np.abs(t) - k.l2) > 1e-4)]
    eps = 1e-7
    fd = (huber_grad(t + eps, gamma) - huber_grad(t - eps, gamma)) / (2 * eps)
    assert np.allclose(huber_hess_diag(t, gamma), fd, atol=1e-5 * gamma ** 2)


def test_hessian_vanishes_on_linear_part():
    assert np.all(huber_hess_diag(np.array([-1.0, 0.5, 3.0]), 1e2) == 0.0)
    assert np.all(huber_hess_diag(np.array([0.0, 1e-4]), 1e2) == 1e2)


@settings(max_examples=60, deadline=None)
@given(t=st.floats(-50, 50), gamma=st.sampled_from(GAMMAS))
def test_value_below_abs_and_gradient_bounded(t, gamma):
    v = huber_value(t, gamma)
    assert 0.0 <= v <= abs(t) + 1e-12
    assert abs(huber_grad(t, gamma)) <= 1.0
    assert huber_value(-t, gamma) == v


@pytest.mark.parametrize("gamma", [1e2, 1e3, 1e4])
def test_uniform_gap_to_abs(gamma):
    t = np.linspace(-2, 2, 400001)
    assert np.max(np.abs(t) - huber_value(t, gamma)) <= 1.1 / gamma


@settings(max_examples=60, deadline=None)
@given(arg=st.floats(-5, 5), q=st.floats(-3, 3), gamma=st.sampled_from(GAMMAS),
       clip=st.sampled_from(["unit", "gamma"]))
def test_projected_curvature_nonnegative(arg, q, gamma, clip):
    assert projected_hessian(np.array([arg]), np.array([q]), gamma, clip)[0] >= 0.0


def test_projected_curvature_cases():
    g = 1e2
    k = huber_constants(g)
    assert projected_hessian(np.array([2.0]), np.array([1.0]), g)[0] == 0.0
    assert projected_hessian(np.array([2.0]), np.array([-3.0]), g)[0] == pytest.approx(1.0)
    assert projected_hessian(np.array([2.0]), np.array([1.0]), g, "gamma")[0] == pytest.approx(
        (1 - 1 / g) / 2)
    assert projected_hessian(np.array([0.5 * k.l1]), np.array([0.3]), g)[0] == g
    t = 0.5 * (k.l1 + k.l2)
    # consistent dual in the blend region reproduces the true curvature
    assert projected_hessian(np.array([t]), huber_grad(np.array([t]), g), g)[0] == pytest.approx(
        huber_hess_diag(np.array([t]), g)[0] + (1 - 0.5 * g * (1 - g * t + 1 / (2 * g)) ** 2)
        * (1 - huber_grad(t, g)) / t)
    with pytest.raises(ValueError):
        projected_hessian(np.array([1.0]), np.array([1.0]), g, "other")


def test_weights_validation():
    assert RegWeights(1.0, 1.0, 0.0).degenerate
    for bad in [(0.0, 1.0), (1.0, -1.0)]:
        with pytest.raises(ValueError):
            RegWeights(*bad)
    with pytest.raises(ValueError):
        RegWeights(1.0, 1.0, -1e-3)


def test_tgv_smoothed_approaches_exact():
    grid = build_grid(30, 5)
    ops = DifferenceOperators(grid)
    u = np.sin(grid.x)
    w = 0.5 * ops.D(u)
    wt = RegWeights(2.0, 0.3)
    exact = tgv_exact(u, w, wt, ops)
    gaps = [exact - tgv_smoothed(u, w, wt, g, ops) for g in (1e2, 1e3, 1e4)]
    assert all(x >= 0 for x in gaps)
    assert gaps[0] > gaps[1] > gaps[2]
