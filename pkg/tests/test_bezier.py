import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hddpc.bezier import (
    BezierCurve,
    bernstein_derivative_row,
    bernstein_matrix,
    bernstein_row,
    bez,
    dbez,
    ddbez,
    fit,
)
from hddpc.errors import OutOfDomain, RankDeficientBasis

coeffs = st.lists(st.floats(-5, 5), min_size=2, max_size=8)


def test_constant_curve():
    c = BezierCurve([3.0, 3.0, 3.0], duration=1.7)
    for t in np.linspace(0, 1.7, 7):
        assert bez(t, c)[0] == pytest.approx(3.0)
        assert dbez(t, c)[0] == pytest.approx(0.0, abs=1e-12)


def test_linear_curve():
    c = BezierCurve([0.0, 1.0], duration=2.0)
    assert bez(1.0, c)[0] == pytest.approx(0.5)
    for t in (0.0, 0.3, 2.0):
        assert dbez(t, c)[0] == pytest.approx(0.5)


def test_endpoints_exact():
    alpha = np.array([[0.1, -0.2], [0.7, 0.3], [0.123456789, 0.987654321]])
    c = BezierCurve(alpha, duration=0.9)
    np.testing.assert_array_equal(bez(0.0, c), alpha[0])
    np.testing.assert_array_equal(bez(0.9, c), alpha[-1])


def test_duration_scaling_halves_rate():
    alpha = [0.0, 0.4, -0.1, 0.3]
    a, b = BezierCurve(alpha, 1.0), BezierCurve(alpha, 2.0)
    for tau in (0.1, 0.5, 0.8):
        assert dbez(2 * tau, b)[0] == pytest.approx(dbez(tau, a)[0] / 2)


def test_out_of_domain():
    c = BezierCurve([0.0, 1.0], duration=1.0)
    with pytest.raises(OutOfDomain):
        bez(1.01, c)
    with pytest.raises(OutOfDomain):
        dbez(-0.1, c)


def test_fit_line_exact():
    samples = [(t, 2.0 * t - 1.0) for t in np.linspace(0, 1, 6)]
    alpha, res = fit(samples, 1)
    np.testing.assert_allclose(alpha[:, 0], [-1.0, 1.0], atol=1e-12)
    assert res == pytest.approx(0.0, abs=1e-12)


def test_fit_cubic_round_trip():
    alpha = np.array([[0.2, -0.1], [0.5, 0.4], [-0.3, 0.0], [0.1, 0.25]])
    curve = BezierCurve(alpha)
    samples = [(t, bez(t, curve)) for t in np.linspace(0, 1, 10)]
    fitted, res = fit(samples, 3)
    np.testing.assert_allclose(fitted, alpha, atol=1e-9)
    assert res < 1e-9


def test_fit_underdetermined():
    with pytest.raises(RankDeficientBasis):
        fit([(0.0, 1.0), (1.0, 2.0)], 3)


def test_basis_rows_against_power_form():
    # Degree-2 Bernstein basis written out by hand.
    for tau in (0.0, 0.25, 0.6, 1.0):
        expected = [(1 - tau) ** 2, 2 * tau * (1 - tau), tau**2]
        np.testing.assert_allclose(bernstein_row(tau, 2), expected, atol=1e-15)
        np.testing.assert_allclose(
            bernstein_derivative_row(tau, 2), [-2 * (1 - tau), 2 - 4 * tau, 2 * tau], atol=1e-15
        )


def test_second_derivative_of_parabola():
    # x(tau) = tau^2 has control points (0, 0, 1).
    c = BezierCurve([0.0, 0.0, 1.0], duration=0.5)
    assert ddbez(0.2, c)[0] == pytest.approx(2.0 / 0.25)


@settings(max_examples=60, deadline=None)
@given(coeffs, st.floats(0, 1))
def test_convex_hull(alpha, tau):
    c = BezierCurve(alpha)
    v = bez(tau, c)[0]
    assert min(alpha) - 1e-9 <= v <= max(alpha) + 1e-9


@settings(max_examples=60, deadline=None)
@given(coeffs, st.floats(0.01, 0.99), st.floats(0.2, 3.0))
def test_derivative_matches_central_difference(alpha, tau, T):
    c = BezierCurve(alpha, T)
    t, h = tau * T, 1e-6
    fd = (bez(t + h, c)[0] - bez(t - h, c)[0]) / (2 * h)
    assert dbez(t, c)[0] == pytest.approx(fd, rel=1e-6, abs=1e-6)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(-3, 3), min_size=4, max_size=4),
    st.lists(st.floats(-3, 3), min_size=4, max_size=4),
    st.floats(-2, 2),
    st.floats(-2, 2),
    st.floats(0, 1),
)
def test_linear_in_coefficients(a1, a2, a, b, tau):
    lhs = bez(tau, BezierCurve(a * np.array(a1) + b * np.array(a2)))[0]
    rhs = a * bez(tau, BezierCurve(a1))[0] + b * bez(tau, BezierCurve(a2))[0]
    assert lhs == pytest.approx(rhs, abs=1e-9)


def test_basis_matrix_agrees_with_de_casteljau():
    rng = np.random.default_rng(0)
    alpha = rng.standard_normal((6, 2))
    taus = np.linspace(0, 1, 11)
    B = bernstein_matrix(taus, 5)
    c = BezierCurve(alpha)
    np.testing.assert_allclose(B @ alpha, [bez(t, c) for t in taus], atol=1e-13)
