import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fespulse.exppoly import ExpPoly

finite = st.floats(min_value=-3.0, max_value=3.0, allow_nan=False)
rates = st.floats(min_value=-0.4, max_value=0.4, allow_nan=False)


@st.composite
def exppolys(draw, max_pieces=3, max_terms=2, max_degree=3):
    n_pieces = draw(st.integers(1, max_pieces))
    widths = [draw(st.floats(min_value=0.5, max_value=8.0)) for _ in range(n_pieces)]
    breakpoints = [0.0]
    for w in widths:
        breakpoints.append(breakpoints[-1] + w)
    pieces = []
    for _ in range(n_pieces):
        terms = []
        for _ in range(draw(st.integers(1, max_terms))):
            deg = draw(st.integers(0, max_degree))
            coeffs = tuple(draw(finite) for _ in range(deg + 1))
            terms.append((coeffs, draw(rates)))
        pieces.append(tuple(terms))
    return ExpPoly(tuple(breakpoints), tuple(pieces))


def sample_points(ep, n=7):
    lo, hi = ep.domain
    # interior points, away from breakpoints where pieces may jump
    pts = np.linspace(lo, hi, n + 2)[1:-1]
    return [t for t in pts if min(abs(t - b) for b in ep.breakpoints) > 1e-6]


def test_validation():
    with pytest.raises(ValueError):
        ExpPoly((0.0,), ())
    with pytest.raises(ValueError):
        ExpPoly((0.0, 0.0), ((((1.0,), 0.0),),))
    with pytest.raises(ValueError):
        ExpPoly((0.0, 1.0, 2.0), ((((1.0,), 0.0),),))  # one missing piece


def test_constant_and_piecewise_builders():
    ep = ExpPoly.constant((0.0, 2.0, 5.0), 3.5)
    assert ep.value(1.0) == 3.5 and ep.value(4.0) == 3.5
    pw = ExpPoly.piecewise_poly((0.0, 1.0, 2.0), [(1.0, 1.0), (0.0, 2.0)])
    assert pw.value(0.5) == pytest.approx(1.5)
    assert pw.value(1.25) == pytest.approx(0.5)  # local coordinates per piece


def test_piece_boundaries_are_right_continuous():
    pw = ExpPoly.piecewise_poly((0.0, 1.0, 2.0), [(1.0,), (5.0,)])
    assert pw.value(1.0) == 5.0
    assert pw.value(2.0) == 5.0  # trailing endpoint uses the last piece
    with pytest.raises(ValueError):
        pw.value(2.5)


@given(a=exppolys(), b=exppolys())
@settings(max_examples=40, deadline=None)
def test_addition_matches_pointwise(a, b):
    b = ExpPoly(
        tuple(np.linspace(a.domain[0], a.domain[1], len(b.breakpoints))), b.pieces
    )
    s = a + b
    assert isinstance(s, ExpPoly)
    for t in sample_points(s):
        assert s.value(t) == pytest.approx(a.value(t) + b.value(t), rel=1e-9, abs=1e-9)


@given(a=exppolys(max_terms=2, max_degree=2), b=exppolys(max_terms=2, max_degree=2))
@settings(max_examples=40, deadline=None)
def test_product_matches_pointwise(a, b):
    b = ExpPoly(
        tuple(np.linspace(a.domain[0], a.domain[1], len(b.breakpoints))), b.pieces
    )
    m = a * b
    assert isinstance(m, ExpPoly)
    for t in sample_points(m):
        assert m.value(t) == pytest.approx(a.value(t) * b.value(t), rel=1e-9, abs=1e-9)


@given(ep=exppolys())
@settings(max_examples=40, deadline=None)
def test_derivative_matches_finite_differences(ep):
    d = ep.derivative()
    assert isinstance(d, ExpPoly)
    h = 1e-6
    for t in sample_points(ep):
        fd = (ep.value(t + h) - ep.value(t - h)) / (2.0 * h)
        scale = max(1.0, abs(fd))
        assert abs(d.value(t) - fd) < 5e-5 * scale


@given(ep=exppolys())
@settings(max_examples=40, deadline=None)
def test_antiderivative_is_inverse_of_derivative(ep):
    anti = ep.antiderivative()
    assert isinstance(anti, ExpPoly)
    assert anti.value(ep.domain[0]) == pytest.approx(0.0, abs=1e-12)
    back = anti.derivative()
    for t in sample_points(ep):
        assert back.value(t) == pytest.approx(ep.value(t), rel=1e-9, abs=1e-9)
    # Continuity of the running integral across breakpoints.
    for b in ep.breakpoints[1:-1]:
        assert anti.value(b - 1e-9) == pytest.approx(anti.value(b + 1e-9), abs=1e-6)


def test_antiderivative_matches_quadrature():
    from scipy.integrate import quad

    ep = ExpPoly(
        (0.0, 5.0, 10.0),
        ((((1.0, 2.0), -0.1),), (((3.0,), 0.0), ((0.5, 0.1), 0.2))),
    )
    anti = ep.antiderivative()
    for t in (3.0, 7.5, 10.0):
        num = quad(ep.value, 0.0, t, points=[5.0], limit=200)[0]
        assert anti.value(t) == pytest.approx(num, rel=1e-12, abs=1e-12)


def test_near_zero_rate_treated_as_polynomial():
    tiny = ExpPoly((0.0, 4.0), ((((2.0, 1.0), 1e-16),),))
    anti = tiny.antiderivative()
    # int_0^x (2 + u) du = 2x + x^2/2, no 1/rate blow-up
    assert anti.value(2.0) == pytest.approx(6.0, rel=1e-12)


def test_definite_integral():
    ep = ExpPoly.piecewise_poly((0.0, 1.0, 3.0), [(1.0,), (2.0,)])
    assert ep.definite_integral() == pytest.approx(5.0, rel=1e-14)
