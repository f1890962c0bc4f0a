import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from frlevy import BetaVector, GridFunction, GridSpec, MixedExponent, frac_integral_minus, frac_integral_plus, mixed_norm
from frlevy.fracops import (
    TRUNCATED_TAIL,
    boundedness_ratio,
    check_integration_by_parts,
    frac_integral_minus_at,
    frac_integral_plus_at,
    hermite_functions,
    hermite_kernel_bound,
    hermite_kernel_integral,
    integration_by_parts_residual,
)

G15 = math.gamma(1.5)


def unit_box(lo=-2.0, hi=2.0, cells=64):
    grid = GridSpec((lo,), (hi,), (cells,))
    return GridFunction.indicator(grid, (0.0,), (1.0,))


def bump(grid, center, width=0.6):
    def f(x):
        r = (x - center) / width
        return np.where(np.abs(r) < 1, np.exp(-1.0 / np.clip(1 - r**2, 1e-300, None)), 0.0)

    return GridFunction.from_callable(grid, f, average=4)


def test_beta_vector_range():
    assert BetaVector((0.1, 0.4)).gamma_factors == pytest.approx((math.gamma(0.1), math.gamma(0.4)))
    for bad in (0.0, 0.5, 0.7, -0.1):
        with pytest.raises(ValueError):
            BetaVector((bad,))


def test_zero_function_maps_to_zero():
    f = GridFunction(GridSpec((0.0,), (1.0,), (16,)), np.zeros(16))
    assert not frac_integral_minus(f, 0.3).values.any()
    assert not frac_integral_plus(f, 0.3).values.any()


def test_minus_box_indicator_closed_form():
    f = unit_box()
    got = frac_integral_minus_at(f, 0.5, [[0.5], [-1.0]])
    assert got[0] == pytest.approx(0.5**0.5 / G15, abs=1e-8)
    assert got[0] == pytest.approx(0.79788, abs=5e-6)
    # closed form ((1-x)^b - (-x)^b)/Gamma(b+1) at x=-1
    assert got[1] == pytest.approx((2**0.5 - 1.0) / G15, abs=1e-8)


def test_plus_box_indicator_closed_form():
    f = unit_box()
    got = frac_integral_plus_at(f, 0.5, [[0.5], [1.7]])
    assert got[0] == pytest.approx(0.5**0.5 / G15, abs=1e-8)
    assert got[1] == pytest.approx((1.7**0.5 - 0.7**0.5) / G15, abs=1e-8)


@pytest.mark.parametrize("beta", [0.1, 0.3, 0.45])
def test_cell_averages_match_antiderivative(beta):
    # averages of I_- 1_[0,1] over each cell: integrate the closed form with quad
    f = unit_box(cells=32)
    out = frac_integral_minus(f, beta).values
    edges = f.grid.edges(0)
    pw = lambda y: max(y, 0.0) ** beta  # noqa: E731
    closed = lambda x: (pw(1 - x) - pw(-x)) / math.gamma(beta + 1)  # noqa: E731
    for i in (3, 15, 16, 20, 31):
        ref = integrate.quad(closed, edges[i], edges[i + 1], points=[0.0, 1.0], epsabs=1e-13)[0] / f.grid.widths[0]
        assert out[i] == pytest.approx(ref, abs=1e-10)


def test_reflection():
    grid = GridSpec((-2.0,), (2.0,), (40,))
    f = bump(grid, 0.4)
    f_neg = GridFunction(grid, f.values[::-1])
    plus = frac_integral_plus(f, 0.3).values
    minus = frac_integral_minus(f_neg, 0.3).values[::-1]
    assert np.max(np.abs(plus - minus)) <= 1e-12


def test_truncated_tail_flag():
    grid = GridSpec((0.0,), (1.0,), (8,))
    assert TRUNCATED_TAIL in frac_integral_minus(GridFunction(grid, np.ones(8)), 0.3).flags
    assert TRUNCATED_TAIL not in frac_integral_minus(unit_box(), 0.3).flags


def test_orders_out_of_range():
    with pytest.raises(ValueError):
        frac_integral_minus(unit_box(), 1.2)
    with pytest.raises(ValueError):
        frac_integral_minus(unit_box(), (0.2, 0.3))


@settings(max_examples=30, deadline=None)
@given(
    st.lists(st.floats(-3, 3), min_size=12, max_size=12),
    st.lists(st.floats(-3, 3), min_size=12, max_size=12),
    st.floats(-2, 2),
    st.floats(-2, 2),
    st.floats(0.05, 0.49),
)
def test_linearity(u, v, a, b, beta):
    grid = GridSpec((0.0,), (3.0,), (12,))
    f, g = GridFunction(grid, u), GridFunction(grid, v)
    for op in (frac_integral_minus, frac_integral_plus):
        lhs = op(f * a + g * b, beta).values
        rhs = a * op(f, beta).values + b * op(g, beta).values
        assert np.max(np.abs(lhs - rhs)) <= 1e-12 * (1 + np.max(np.abs(rhs)))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 5), min_size=10, max_size=10), st.floats(0.05, 0.49))
def test_positivity(u, beta):
    f = GridFunction(GridSpec((0.0, 0.0), (1.0, 2.0), (2, 5)), np.reshape(u, (2, 5)))
    for op in (frac_integral_minus, frac_integral_plus):
        assert np.all(op(f, (beta, 0.2)).values >= -1e-15)


def test_semigroup():
    grid = GridSpec((-3.0,), (3.0,), (1024,))
    f = bump(grid, 0.0, 1.5)
    twice = frac_integral_minus(frac_integral_minus(f, 0.2), 0.25).values
    once = frac_integral_minus(f, 0.45).values
    assert np.max(np.abs(twice - once)) <= 1e-3


def test_mixed_norm_examples():
    grid = GridSpec((0.0, 0.0), (1.0, 1.0), (8, 8))
    assert mixed_norm(GridFunction(grid, np.zeros((8, 8))), (2, 3)) == 0.0
    assert mixed_norm(GridFunction(grid, np.ones((8, 8))), MixedExponent((1.5, 7))) == pytest.approx(1.0, abs=1e-14)
    wide = GridSpec((0.0, 0.0), (2.0, 2.0), (16, 16))
    f = GridFunction.indicator(wide, (0.0, 0.0), (1.0, 1.0)) * 2.0
    assert mixed_norm(f, (2, 4)) == pytest.approx(2.0, abs=1e-12)


def test_mixed_norm_against_nested_quad():
    grid = GridSpec((0.0, 0.0), (1.0, 2.0), (10, 20))
    rng = np.random.default_rng(0)
    vals = rng.uniform(-1, 1, (10, 20))
    f = GridFunction(grid, vals)
    p1, p2 = 1.5, 3.0

    def piecewise(x, y):
        return vals[min(int(x * 10), 9), min(int(y * 10), 19)]

    def inner(y):
        ex = np.linspace(0, 1, 11)
        return sum(integrate.quad(lambda x: abs(piecewise(x, y)) ** p1, a, b)[0] for a, b in zip(ex[:-1], ex[1:]))

    ey = np.linspace(0, 2, 21)
    outer = sum(integrate.quad(lambda y: inner(y) ** (p2 / p1), a, b)[0] for a, b in zip(ey[:-1], ey[1:]))
    assert mixed_norm(f, (p1, p2)) == pytest.approx(outer ** (1 / p2), rel=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-4, 4), min_size=24, max_size=24), st.floats(1.1, 6.0))
def test_mixed_norm_equal_exponents_is_lp(u, p):
    grid = GridSpec((0.0, 0.0), (1.0, 3.0), (4, 6))
    f = GridFunction(grid, np.reshape(u, (4, 6)))
    lp = (np.sum(np.abs(f.values) ** p) * grid.cell_volume) ** (1 / p)
    assert mixed_norm(f, (p, p)) == pytest.approx(lp, rel=1e-12, abs=1e-300)


def test_integration_by_parts_self_pairing():
    grid = GridSpec((0.0,), (4.0,), (128,))
    f = bump(grid, 1.5)
    assert check_integration_by_parts(f, f, 0.3) <= 1e-12


def test_discrete_operators_are_exact_adjoints():
    # the cell schemes for I_+ and I_- are transposes, so the discrete residual is roundoff
    for cells in (64, 512):
        grid = GridSpec((0.0,), (4.0,), (cells,))
        assert check_integration_by_parts(bump(grid, 1.3, 0.8), bump(grid, 2.6, 0.9), 0.3) <= 1e-12


def _bump_fn(center, width):
    def f(x):
        r = (x - center) / width
        return np.where(np.abs(r) < 1, np.exp(-1.0 / np.clip(1 - r**2, 1e-300, None)), 0.0)

    return f


def test_integration_by_parts_pointwise_route_offset_bumps():
    residuals = [
        integration_by_parts_residual(_bump_fn(1.3, 0.8), _bump_fn(2.6, 0.9), GridSpec((0.0,), (4.0,), (n,)), 0.3)
        for n in (32, 64, 128, 256)
    ]
    assert residuals[-1] <= 1e-6
    assert all(b < a for a, b in zip(residuals, residuals[1:]))


def test_integration_by_parts_residual_order():
    f = lambda x: np.exp(-x**2) * np.cos(2 * x)  # noqa: E731
    g = lambda x: 1.0 / (1.0 + x**2) - 0.2  # noqa: E731
    res = [integration_by_parts_residual(f, g, GridSpec((-2.0,), (2.0,), (n,)), 0.3) for n in (64, 128, 256, 512)]
    assert res[-1] <= 1e-6
    # each doubling shrinks the residual by at least 2^beta
    assert all(a / b >= 2**0.3 for a, b in zip(res, res[1:]))


def test_hermite_normalization():
    u = np.linspace(-16, 16, 8001)
    xi = hermite_functions(64, u)
    norms = integrate.simpson(xi**2, x=u)
    assert np.max(np.abs(norms - 1.0)) <= 1e-10
    assert abs(integrate.simpson(xi[3] * xi[5], x=u)) <= 1e-10


@pytest.mark.parametrize("n", [1, 4, 9])
def test_hermite_kernel_integral_against_algebraic_weight(n):
    beta, t = 0.4, 1.0
    lower = t - (math.sqrt(2 * n + 1) + 15.0)
    ref = integrate.quad(lambda u: hermite_functions(n, u)[n], lower, t, weight="alg", wvar=(0.0, beta - 1.0),
                         limit=200)[0]
    assert hermite_kernel_integral(n, beta, t) == pytest.approx(ref, abs=2e-4)


def test_hermite_bound_ratio_has_no_growth():
    ns = np.array([4, 8, 16, 32, 64])
    ratios = np.array([abs(hermite_kernel_bound(int(n), 0.4, 1.0)[1]) for n in ns])
    assert np.all(np.isfinite(ratios))
    slope = np.polyfit(np.log(ns), np.log(ratios), 1)[0]
    assert slope <= 0.05


def test_boundedness_ratio_stable_under_refinement():
    ratios = []
    for cells in (128, 256, 512):
        grid = GridSpec((-3.0,), (3.0,), (cells,))
        ratios.append(boundedness_ratio(bump(grid, 0.0, 1.0), 0.3))
    assert max(ratios) / min(ratios) - 1 <= 1e-2
