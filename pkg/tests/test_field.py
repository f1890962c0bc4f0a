import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special

from frlevy import DiscreteU, GridSpec, LevyModel, covariance_oracle, field_kernel, noise_kernel, s_transform, s_transform_field, sample_field
from frlevy.field import (
    check_tail,
    field_from_noise,
    kernel_1d,
    kernel_product_1d,
    required_past,
    s_transform_field_by_parts,
    tail_fraction,
)
from frlevy.harness import mc_values, variance_stderr
from frlevy.levy import sample_noise_grid

UNIT = LevyModel.finite_activity(2.0, [1.0])


def fbm_cov(t, s, beta):
    # closed form of <k_t, k_s> over the whole line
    H = beta + 0.5
    V = 1.0 / (special.gamma(2 * beta + 2) * math.cos(math.pi * beta))
    return 0.5 * V * (abs(t) ** (2 * H) + abs(s) ** (2 * H) - abs(t - s) ** (2 * H))


def test_kernel_point_value():
    expected = 0.5**0.25 / special.gamma(1.25)
    assert kernel_1d(np.array([0.5]), 1.0, 0.25)[0] == pytest.approx(expected, abs=1e-14)
    assert expected == pytest.approx(0.92749, abs=3e-4)


def test_kernel_far_past_is_accurate():
    s = np.array([-1e3, -1e6, -1e9])
    exact = [float((mpf_pow(1 - x) - mpf_pow(-x)) / special.gamma(1.3)) for x in s]
    assert kernel_1d(s, 1.0, 0.3) == pytest.approx(exact, rel=1e-10)


def mpf_pow(x):
    import mpmath

    mpmath.mp.dps = 40
    return mpmath.mpf(x) ** mpmath.mpf("0.3")


def test_kernel_vanishes_beyond_t_and_at_zero_t():
    assert not kernel_1d(np.array([1.0, 1.5, 3.0]), 1.0, 0.3).any()
    grid = GridSpec((-5.0, -5.0), (2.0, 2.0), (14, 14))
    fk = field_kernel((0.3, 0.2), (0.0, 1.0), grid, T_past=5.0, tail_tol=None)
    assert not fk.kernel.values.any()


def test_field_kernel_cell_averages():
    grid = GridSpec((-6.0,), (2.0,), (32,))
    fk = field_kernel((0.3,), (1.0,), grid, tail_tol=None)
    e = grid.edges(0)
    for i in (0, 20, 23, 24, 25, 31):
        ref = integrate.quad(lambda s: kernel_1d(np.array([s]), 1.0, 0.3)[0], e[i], e[i + 1], points=[0.0, 1.0])[0]
        assert fk.kernel.values[i] == pytest.approx(ref / grid.widths[0], abs=1e-10)


def test_field_kernel_factorizes():
    grid = GridSpec((-4.0, -3.0), (2.0, 2.0), (12, 10))
    fk = field_kernel((0.2, 0.35), (1.0, 0.5), grid, tail_tol=None).kernel.values
    k1 = field_kernel((0.2,), (1.0,), GridSpec((-4.0,), (2.0,), (12,)), T_past=4.0, tail_tol=None).kernel.values
    k2 = field_kernel((0.35,), (0.5,), GridSpec((-3.0,), (2.0,), (10,)), T_past=3.0, tail_tol=None).kernel.values
    assert np.max(np.abs(fk - np.outer(k1, k2))) <= 1e-12


def test_tail_check_reports_needed_past():
    grid = GridSpec((-10.0,), (1.0,), (22,))
    with pytest.raises(ValueError, match="need T_past >= "):
        field_kernel((0.3,), (1.0,), grid)
    need = required_past((0.3,), (1.0,), 1e-2)
    assert tail_fraction((0.3,), (1.0,), need) <= 1e-2
    assert tail_fraction((0.3,), (1.0,), need / 2**0.25) > 1e-2
    assert check_tail((0.3,), (1.0,), need, 1e-2) <= 1e-2


@pytest.mark.parametrize("beta", [0.05, 0.25, 0.45])
@pytest.mark.parametrize("t,s", [(1.0, 1.0), (2.0, 0.5), (0.3, 1.7)])
def test_kernel_products_match_fbm_closed_form(beta, t, s):
    assert kernel_product_1d(t, s, beta) == pytest.approx(fbm_cov(t, s, beta), rel=1e-9)


def test_covariance_oracle_properties():
    assert covariance_oracle(UNIT, (0.3, 0.2), (0.0, 1.0), (1.0, 1.0)) == 0.0
    a = covariance_oracle(UNIT, (0.3,), (2.0,), (0.7,))
    assert a == covariance_oracle(UNIT, (0.3,), (0.7,), (2.0,))
    ratio = covariance_oracle(UNIT, (0.3,), (2.0,), (2.0,)) / covariance_oracle(UNIT, (0.3,), (1.0,), (1.0,))
    assert ratio == pytest.approx(2 ** (2 * 0.8), abs=1e-6)


def test_truncated_oracle_matches_direct_quadrature():
    past = 20.0
    f = lambda u: kernel_1d(np.array([u]), 1.0, 0.3)[0] ** 2  # noqa: E731
    direct = integrate.quad(f, -past, 1.0, points=[0.0], limit=200, epsabs=1e-13)[0]
    assert covariance_oracle(UNIT, (0.3,), (1.0,), (1.0,), T_past=past) == pytest.approx(2 * direct, rel=1e-8)


def test_noise_kernel_example():
    U = DiscreteU(GridSpec((0.0,), (1.0,), (2,)), np.array([2.0]), np.array([1.0]))
    nk = noise_kernel((0.5,), (1.0,), U)
    # 2 * int_0^0.5 (1-u)^(-1/2) du / Gamma(1/2)
    expected = 2 * integrate.quad(lambda u: (1 - u) ** -0.5, 0, 0.5)[0] / math.gamma(0.5)
    assert nk.values[0, 0] == pytest.approx(expected, abs=1e-12)
    assert nk.values[0, 0] == pytest.approx(0.66103, abs=1e-4)


def test_noise_kernel_zero_beyond_t_and_linear_in_mark():
    U = DiscreteU(GridSpec((0.0,), (2.0,), (8,)), np.array([1.0, -3.0]), np.array([1.0, 0.5]))
    nk = noise_kernel((0.3,), (1.0,), U).values
    assert not nk[4:].any()
    assert np.allclose(nk[:, 1], -3.0 * nk[:, 0], rtol=0, atol=1e-15)


def test_noise_kernel_s_transform_equals_fractional_integral():
    grid = GridSpec((0.0,), (1.0,), (128,))
    U = DiscreteU(grid, np.array([1.0, -0.5]), np.array([0.8, 0.4]))
    xi = U.test_function(lambda x, y: np.cos(3 * x[:, 0]) * (1 + 0.2 * y))
    got = s_transform(noise_kernel((0.3,), (1.0,), U).as_chaos(), xi)
    # int y I_+ xi(., y)(t) nu(dy) with xi piecewise constant, integrated exactly
    e = grid.edges(0)
    ref = 0.0
    for j, (y, w) in enumerate(zip(U.mark_values, U.mark_weights)):
        vals = U.reshape(xi)[:, j]
        ref += w * y * np.sum(vals * ((1 - e[:-1]) ** 0.3 - (1 - e[1:]) ** 0.3)) / math.gamma(1.3)
    assert got == pytest.approx(ref, abs=1e-12)


def test_s_transform_field_examples():
    grid = GridSpec((-2.0,), (2.0,), (16,))
    U = DiscreteU(grid, np.array([1.0, -1.0]), np.array([1.0, 1.0]))
    assert s_transform_field((0.3,), (1.0,), np.zeros(U.size), U) == 0.0
    xi = np.repeat(np.sin(grid.centers(0)), 2)
    assert abs(s_transform_field((0.3,), (1.0,), xi, U)) <= 1e-15


def test_s_transform_field_by_parts_route():
    # h = 0.01 puts t = 1 on a cell edge
    grid = GridSpec((-3.0,), (2.12,), (512,))
    U = DiscreteU(grid, np.array([1.0, -0.5]), np.array([2.0, 1.0]))
    xi = U.test_function(lambda x, y: np.exp(-x[:, 0] ** 2) * (1 + y))
    a = s_transform_field((0.3,), (1.0,), xi, U)
    b = s_transform_field_by_parts((0.3,), (1.0,), xi, U)
    assert a == pytest.approx(b, abs=1e-6)


def test_derivative_relation():
    # forward differences of S(X_t) in t approach S(<C_1, lambda_t>)
    beta, t = 0.3, 1.0
    grid = GridSpec((-2.0,), (2.0,), (1024,))
    U = DiscreteU(grid, np.array([1.0]), np.array([1.0]))
    xi = U.test_function(lambda x, y: np.exp(-x[:, 0] ** 2))
    target = s_transform(noise_kernel((beta,), (t,), U).as_chaos(), xi)
    steps = [1 / 16, 1 / 32, 1 / 64, 1 / 128]
    errs = [
        abs((s_transform_field((beta,), (t + h,), xi, U) - s_transform_field((beta,), (t,), xi, U)) / h - target)
        for h in steps
    ]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert errs[-1] < errs[0]
    assert np.mean(orders) >= beta


def test_sample_field_degenerate_cases():
    grid = GridSpec((-5.0, -5.0), (2.0, 2.0), (7, 7))
    real = sample_field(UNIT, (0.3, 0.2), [[0.0, 1.0], [1.0, 0.0], [1.0, 1.0]], grid, 4)
    assert real.values[0] == 0.0 and real.values[1] == 0.0
    assert real.values[2] != 0.0
    quiet = sample_field(LevyModel.finite_activity(0.0, [1.0]), (0.3, 0.2), [[1.0, 1.0]], grid, 4)
    assert quiet.values[0] == 0.0


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**40), st.floats(0.05, 0.45))
def test_field_is_deterministic_per_seed(seed, beta):
    grid = GridSpec((-5.0,), (2.0,), (7,))
    a = sample_field(UNIT, (beta,), [[0.5], [1.5]], grid, seed).values
    b = sample_field(UNIT, (beta,), [[0.5], [1.5]], grid, seed).values
    assert np.array_equal(a, b)


def test_jump_route_matches_cell_aggregated_route_for_fine_grids():
    # kernel integrated against cell increments converges to the exact jump sum
    grid = GridSpec((-20.0,), (1.0,), (4096,))
    noise = sample_noise_grid(UNIT, grid, 9)
    exact = field_from_noise(noise, (0.3,), [[1.0]])[0]
    fk = field_kernel((0.3,), (1.0,), grid, tail_tol=None)
    assert fk.integrate_noise(noise) == pytest.approx(exact, abs=5e-2)


def _increment_variances(model, beta, pairs, grid, replicas, seed):
    pts = sorted({p for pair in pairs for p in pair})
    idx = {p: i for i, p in enumerate(pts)}
    X = np.array([field_from_noise(sample_noise_grid(model, grid, s), beta, [list(p) for p in pts])
                  for s in (seed * 100_003 + i for i in range(replicas))])
    return [X[:, idx[b]] - X[:, idx[a]] for a, b in pairs]


def test_increment_stationarity():
    past, beta, h = 30.0, (0.3,), 0.5
    grid = GridSpec((-past,), (2.0,), (64,))
    pairs = [((t,), (t + h,)) for t in (0.0, 0.5, 1.0)]
    incs = _increment_variances(UNIT, beta, pairs, grid, 4000, 1)
    oracles = []
    for (a, b), d in zip(pairs, incs):
        oracle = (covariance_oracle(UNIT, beta, b, b, T_past=past) - 2 * covariance_oracle(UNIT, beta, a, b, T_past=past)
                  + covariance_oracle(UNIT, beta, a, a, T_past=past))
        # the truncated oracle barely depends on the offset
        assert oracle == pytest.approx(oracles[0] if oracles else oracle, rel=1e-2)
        oracles.append(oracle)
        var, se = variance_stderr(d, mean=0.0)
        assert abs(var - oracle) <= 3 * se


def test_anisotropy_ratio_d2():
    beta, past, h = (0.1, 0.4), 12.0, 0.5
    grid = GridSpec((-past, -past), (2.0, 2.0), (8, 8))
    base = (1.0, 1.0)
    pairs = [(base, (1.0 + h, 1.0)), (base, (1.0, 1.0 + h))]
    d1, d2 = _increment_variances(UNIT, beta, pairs, grid, 3000, 2)

    def inc_var(a, b):
        c = lambda p, q: covariance_oracle(UNIT, beta, p, q, T_past=past)  # noqa: E731
        return c(b, b) - 2 * c(a, b) + c(a, a)

    oracle = inc_var(*pairs[0]) / inc_var(*pairs[1])
    assert abs(oracle - 1.0) > 0.1
    a2, b2 = d1**2, d2**2
    ratio = a2.mean() / b2.mean()
    # delta method for a ratio of means
    cov = np.cov(a2, b2)
    se = ratio * math.sqrt(cov[0, 0] / a2.mean() ** 2 + cov[1, 1] / b2.mean() ** 2
                           - 2 * cov[0, 1] / (a2.mean() * b2.mean())) / math.sqrt(len(a2))
    assert abs(ratio - oracle) <= 3 * se
