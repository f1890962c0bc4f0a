import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from frlevy import ChaosProcess, ChaosVector, DiscreteU, GridSpec, LevyModel, s_transform, skorohod_delta, wick_exp, wick_product
from frlevy.chaos import (
    ChaosTruncationError,
    evaluate_pathwise,
    exponential_vector,
    pairing,
    skorohod_s_transform_rhs,
    symmetrize,
    wick_exp_truncation_bound,
    wick_process,
)
from frlevy.harness import mc_values, variance_stderr
from frlevy.levy import sample_noise_grid


def space(cells=3, marks=(1.0, -0.5), weights=(0.7, 1.3), max_order=4, width=1.0):
    return DiscreteU(GridSpec((0.0,), (width * cells,), (cells,)), np.array(marks), np.array(weights), max_order)


def random_vector(U, order, rng):
    K = U.size
    return ChaosVector(U, tuple(symmetrize(rng.normal(size=(K,) * n)) for n in range(order + 1)))


def test_pairing_examples():
    U = space()
    one = ChaosVector.scalar(U, 1.0)
    assert pairing(one, one) == 1.0
    k = 4
    e = np.zeros(U.size)
    e[k] = 1.0
    F = ChaosVector.first_order(U, e)
    assert pairing(F, F) == pytest.approx(U.pi[k], abs=1e-15)
    G = ChaosVector.pure(U, 2, np.multiply.outer(e, e))
    assert pairing(F, G) == 0.0


def test_orthogonality_of_pure_orders():
    U = space(cells=2)
    rng = np.random.default_rng(0)
    phi, psi = rng.normal(size=(U.size,) * 2), rng.normal(size=(U.size,) * 2)
    P, Q = ChaosVector.pure(U, 2, phi), ChaosVector.pure(U, 2, psi)
    direct = 2.0 * np.einsum("ij,ij,i,j->", symmetrize(phi), symmetrize(psi), U.pi, U.pi)
    assert pairing(P, Q) == pytest.approx(direct, rel=1e-13)
    assert pairing(P, ChaosVector.pure(U, 1, rng.normal(size=U.size))) == 0.0


def test_s_transform_examples():
    U = DiscreteU(GridSpec((0.0,), (2.0,), (2,)), np.array([1.0]), np.array([1.0]))
    assert s_transform(ChaosVector.scalar(U, 3.5), np.array([0.3, -9.0])) == 3.5
    F = ChaosVector.first_order(U, np.array([1.0, 2.0]))
    assert s_transform(F, np.array([0.5, 0.25])) == pytest.approx(1.0, abs=1e-15)


def test_s_transform_equals_pairing_with_exponential_vector():
    U = space()
    rng = np.random.default_rng(1)
    for _ in range(5):
        F = random_vector(U, 3, rng)
        xi = rng.normal(size=U.size)
        assert s_transform(F, xi) == pytest.approx(pairing(F, exponential_vector(U, xi, 3)), abs=1e-12)


def test_wick_product_examples():
    U = space()
    assert wick_product(ChaosVector.scalar(U, 2.0), ChaosVector.scalar(U, 3.0)).allclose(ChaosVector.scalar(U, 6.0), 0)
    f = np.arange(U.size, dtype=float)
    F = ChaosVector.first_order(U, f)
    W = wick_product(F, F)
    assert W.order == 2
    assert not W.coeffs[0].any() and not W.coeffs[1].any()
    assert np.array_equal(W.coeffs[2], np.multiply.outer(f, f))


def test_wick_homomorphism_random():
    rng = np.random.default_rng(2)
    U = space()
    for _ in range(10):
        F, G = random_vector(U, 2, rng), random_vector(U, 2, rng)
        FG = wick_product(F, G)
        for _ in range(10):
            xi = rng.normal(scale=0.6, size=U.size)
            assert abs(s_transform(FG, xi) - s_transform(F, xi) * s_transform(G, xi)) <= 1e-10


def test_wick_algebra_laws():
    rng = np.random.default_rng(3)
    U = space(cells=2, max_order=6)
    for _ in range(5):
        F, G, H = (random_vector(U, 2, rng) for _ in range(3))
        assert wick_product(F, G).allclose(wick_product(G, F), 1e-12)
        assert wick_product(wick_product(F, G), H).allclose(wick_product(F, wick_product(G, H)), 1e-10)
        a, b = rng.normal(size=2)
        lhs = wick_product(F * a + G * b, H)
        assert lhs.allclose(wick_product(F, H) * a + wick_product(G, H) * b, 1e-10)


def test_truncation_overflow_is_reported():
    U = space(max_order=3)
    rng = np.random.default_rng(4)
    with pytest.raises(ChaosTruncationError):
        wick_product(random_vector(U, 2, rng), random_vector(U, 2, rng))
    with pytest.raises(ChaosTruncationError):
        wick_exp(random_vector(U, 1, rng), 4)


def test_wick_exp_examples():
    U = space(max_order=6)
    assert wick_exp(ChaosVector.scalar(U, 0.0), 5).allclose(ChaosVector.scalar(U, 1.0), 0)
    e10 = float(wick_exp(ChaosVector.scalar(U, 1.0), 10).coeffs[0])
    assert abs(e10 - 2.7182818) <= 3e-8
    assert abs(e10 - math.e) <= wick_exp_truncation_bound(1.0, 10)


def test_wick_exp_first_order_probe():
    U = space(max_order=6)
    rng = np.random.default_rng(5)
    f = rng.normal(size=U.size)
    eta = rng.normal(size=U.size)
    F = ChaosVector.first_order(U, f)
    F = F * (0.1 / s_transform(F, eta))
    assert s_transform(F, eta) == pytest.approx(0.1, abs=1e-15)
    assert abs(s_transform(wick_exp(F, 6), eta) - math.exp(0.1)) <= 1e-9


def test_skorohod_examples():
    U = space()
    h = np.linspace(-1, 1, U.size)
    assert skorohod_delta(ChaosProcess.deterministic(U, h)).allclose(ChaosVector.first_order(U, h), 0)
    zero = skorohod_delta(ChaosProcess.deterministic(U, np.zeros(U.size)))
    assert zero.allclose(ChaosVector.scalar(U, 0.0), 0)


def test_skorohod_identity_order_one():
    rng = np.random.default_rng(6)
    U = DiscreteU(GridSpec((0.0,), (1.0,), (4,)), np.array([1.0]), np.array([2.0]), 3)
    K = U.size
    proc = ChaosProcess(U, (rng.normal(size=K), rng.normal(size=(K, K))))
    for _ in range(5):
        xi = rng.normal(size=K)
        # right-hand side summed directly from the per-atom vectors
        rhs = sum(s_transform(proc.at(x), xi) * xi[x] * U.pi[x] for x in range(K))
        assert abs(s_transform(skorohod_delta(proc), xi) - rhs) <= 1e-12
        assert rhs == pytest.approx(skorohod_s_transform_rhs(proc, xi), abs=1e-14)


def test_skorohod_is_linear():
    rng = np.random.default_rng(7)
    U = space()
    K = U.size
    P = ChaosProcess(U, (rng.normal(size=K), rng.normal(size=(K, K))))
    Q = ChaosProcess(U, (rng.normal(size=K), rng.normal(size=(K, K))))
    R = ChaosProcess(U, tuple(2 * p - 3 * q for p, q in zip(P.coeffs, Q.coeffs)))
    assert skorohod_delta(R).allclose(skorohod_delta(P) * 2 - skorohod_delta(Q) * 3, 1e-12)


def test_wick_commutes_with_skorohod():
    rng = np.random.default_rng(8)
    U = space(cells=2, max_order=4)
    K = U.size
    Y = random_vector(U, 1, rng)
    F = ChaosProcess(U, (rng.normal(size=K), rng.normal(size=(K, K))))
    lhs = wick_product(Y, skorohod_delta(F))
    rhs = skorohod_delta(wick_process(Y, F))
    assert lhs.allclose(rhs, 1e-10)


def test_s_transform_recovers_coefficients_by_polarization():
    rng = np.random.default_rng(9)
    U = space(cells=2)
    K, pi = U.size, U.pi
    F = random_vector(U, 2, rng)
    S = lambda xi: s_transform(F, xi)  # noqa: E731
    e = np.eye(K)
    F0 = S(np.zeros(K))
    F1 = np.empty(K)
    F2 = np.empty((K, K))
    for i in range(K):
        p, m = S(e[i]), S(-e[i])
        F1[i] = (p - m) / (2 * pi[i])
        F2[i, i] = ((p + m) / 2 - F0) / pi[i] ** 2
    for i in range(K):
        for j in range(i + 1, K):
            mixed = S(e[i] + e[j]) - F0 - F1[i] * pi[i] - F1[j] * pi[j] - F2[i, i] * pi[i] ** 2 - F2[j, j] * pi[j] ** 2
            F2[i, j] = F2[j, i] = mixed / (2 * pi[i] * pi[j])
    assert F.allclose(ChaosVector(U, (np.asarray(F0), F1, F2)), 1e-10)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_wick_product_is_symmetric(order, seed):
    rng = np.random.default_rng(seed)
    U = space(cells=2, max_order=6)
    W = wick_product(random_vector(U, order, rng), random_vector(U, order, rng))
    assert W.is_symmetric(1e-12)


def test_discrete_u_tempered_stable_moments():
    model = LevyModel.tempered_stable(0.8, 1.5, 2.0, 1.0, 0.05)
    U = DiscreteU.from_model(model, GridSpec((0.0,), (1.0,), (2,)))
    assert U.second_moment == pytest.approx(model.second_moment(), rel=1e-10)
    assert U.mark_weights.sum() == pytest.approx(model.intensity, rel=1e-10)
    assert np.all(U.mark_values != 0)
    assert np.all(np.abs(U.mark_values) >= 0.05)


def test_pathwise_requires_low_order():
    U = space()
    noise = sample_noise_grid(LevyModel.finite_activity(1.0, [1.0, -0.5], [0.5, 0.5]), U.base_grid, 0)
    with pytest.raises(NotImplementedError):
        evaluate_pathwise(ChaosVector.pure(U, 2, np.ones((U.size,) * 2)), noise)


def test_first_chaos_variance_matches_pairing():
    model = LevyModel.finite_activity(2.0, [1.0, -0.5], [0.25, 0.75])
    grid = GridSpec((0.0,), (1.0,), (3,))
    U = DiscreteU.from_model(model, grid)
    f = np.array([1.0, -2.0, 0.5, 0.3, 0.0, 1.5])
    F = ChaosVector.first_order(U, f)
    vals = mc_values(lambda s: evaluate_pathwise(F, sample_noise_grid(model, grid, s)), 8000, 13)
    var, se = variance_stderr(vals, mean=0.0)
    assert abs(var - pairing(F, F)) <= 3 * se
