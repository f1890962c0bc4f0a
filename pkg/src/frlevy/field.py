"""Fractional Lévy fields as moving averages of compensated Poisson noise.

The field at ``t`` is ``X_t = int k_t(s) dL(s)`` with the product kernel
``k_t(s) = prod_k [(t_k - s_k)_+^b_k - (-s_k)_+^b_k] / Gamma(b_k + 1)``. Noise
living on a finite box truncates the integral at ``-T_past`` along every axis.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special

from .chaos import ChaosVector, DiscreteU
from .fracops import BetaVector, operator_orders, pos_pow
from .grid import GridFunction, GridSpec
from .levy import LevyModel, NoiseRealization, sample_noise_grid
from .quadrature import graded_rule, past_breakpoints, semi_infinite_rule

DEFAULT_TAIL_TOL = 1e-4


def _vec(x, dim: int | None = None, name: str = "t") -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if dim is not None and x.shape != (dim,):
        raise ValueError(f"{name} has {x.size} components, expected {dim}")
    return x


# -- one-dimensional kernel pieces --------------------------------------------------


def kernel_1d(s, t: float, beta: float) -> np.ndarray:
    """``[(t - s)_+^b - (-s)_+^b] / Gamma(b + 1)``, cancellation-free for ``s << 0``."""
    s = np.asarray(s, dtype=float)
    out = (pos_pow(t - s, beta) - pos_pow(-s, beta)) / special.gamma(beta + 1.0)
    far = (s < 0) & (-s > 4.0 * abs(t))
    if np.any(far):
        u = -s[far]
        out[far] = u**beta * np.expm1(beta * np.log1p(t / u)) / special.gamma(beta + 1.0)
    return out


def kernel_box_integral_1d(lo, hi, t: float, beta: float) -> np.ndarray:
    """``int_lo^hi kernel_1d(s) ds`` in closed form."""
    P = lambda x: pos_pow(x, beta + 1.0)  # noqa: E731
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    # grouped so that t = 0 cancels exactly
    return ((P(t - lo) - P(-lo)) - (P(t - hi) - P(-hi))) / special.gamma(beta + 2.0)


def kernel_product_1d(t: float, s: float, beta: float, past: float = np.inf, n: int = 48) -> float:
    """``int_{-past}^inf k_t k_s du`` by graded quadrature; power tails by substitution."""
    if t == 0.0 or s == 0.0:
        return 0.0
    scale = max(abs(t), abs(s))
    anchor = min(t, s, 0.0)
    cut = anchor - 8.0 * scale
    lower = max(cut, -past)
    pts = np.array([lower, anchor - 2.0 * scale, anchor - 0.5 * scale, 0.0, t, s])
    x, w = graded_rule(pts[pts >= lower], n=n)
    integrand = lambda u: kernel_1d(u, t, beta) * kernel_1d(u, s, beta)  # noqa: E731
    total = float(np.dot(w, integrand(x)))
    if np.isinf(past):
        # integrand ~ c |u|^(2b-2): cover enough e-folds, then add the power-law remainder
        decades = min(600.0, 40.0 / (1.0 - 2.0 * beta))
        u, wu = semi_infinite_rule(cut + scale, scale, decades=decades)
        total += float(np.dot(wu, integrand(u)))
        far = scale * np.exp(decades) - cut - scale
        c = beta**2 * t * s / special.gamma(beta + 1.0) ** 2
        total += c * far ** (2.0 * beta - 1.0) / (1.0 - 2.0 * beta)
    elif -past < cut:
        x, w = graded_rule(past_breakpoints(-past, cut, 8.0 * scale), n=n)
        total += float(np.dot(w, integrand(x)))
    return total


def tail_fraction_1d(t: float, beta: float, past: float) -> float:
    """Share of ``||k_t||^2`` carried by ``s < -past``."""
    if t == 0.0:
        return 0.0
    full = kernel_product_1d(t, t, beta)
    kept = kernel_product_1d(t, t, beta, past=past)
    return max(0.0, 1.0 - kept / full)


def tail_fraction(beta, t, past: float) -> float:
    """Share of ``||k_t||^2`` lost when every axis is cut at ``-past``."""
    beta = operator_orders(beta)
    t = _vec(t, len(beta))
    keep = 1.0
    for b, tk in zip(beta, t):
        keep *= 1.0 - tail_fraction_1d(float(tk), b, past)
    return 1.0 - keep


def required_past(beta, t, tail_tol: float) -> float:
    """Smallest ``T_past`` (to a factor of 2^(1/4)) meeting ``tail_tol``."""
    past = max(1.0, float(np.max(np.abs(t))))
    while tail_fraction(beta, t, past) > tail_tol:
        past *= 2.0**0.25
        if past > 1e15:
            break
    return past


def check_tail(beta, t, past: float, tail_tol: float | None) -> float:
    frac = tail_fraction(beta, t, past)
    if tail_tol is not None and frac > tail_tol:
        need = required_past(beta, t, tail_tol)
        raise ValueError(
            f"T_past={past:g} too small: tail fraction {frac:.3g} exceeds {tail_tol:g}; need T_past >= {need:.3g}"
        )
    return frac


# -- kernels on grids -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FieldKernel:
    """Cell averages of ``k_t`` on the part of ``source_grid`` above ``-T_past``."""

    beta: tuple[float, ...]
    t: np.ndarray
    kernel: GridFunction
    past: float
    tail_fraction: float

    def integrate_noise(self, noise: NoiseRealization) -> float:
        """``sum_cells k_bar * increments``: the field from cell-aggregated noise."""
        if noise.grid != self.kernel.grid:
            raise ValueError("noise and kernel use different grids")
        return float(np.sum(self.kernel.values * noise.increments))


def _axis_integrals(edges: np.ndarray, t: float, beta: float, past: float) -> np.ndarray:
    lo = np.maximum(edges[:-1], -past)
    hi = np.maximum(edges[1:], -past)
    return kernel_box_integral_1d(lo, hi, t, beta)


def field_kernel(beta, t, source_grid: GridSpec, T_past: float | None = None, tail_tol: float = DEFAULT_TAIL_TOL) -> FieldKernel:
    """Kernel ``k_t`` as exact cell averages on ``source_grid``.

    ``T_past`` defaults to the depth of the grid below the origin. The kernel
    is zeroed below ``-T_past``; if that drops more than ``tail_tol`` of
    ``||k_t||^2`` a ``ValueError`` reports the ``T_past`` needed.
    """
    beta = BetaVector.of(beta).beta
    d = source_grid.dim
    if len(beta) != d:
        raise ValueError(f"beta has {len(beta)} components, grid has dimension {d}")
    t = _vec(t, d)
    past = -min(source_grid.lower) if T_past is None else float(T_past)
    if past <= 0:
        raise ValueError("T_past must be > 0")
    frac = check_tail(beta, t, past, tail_tol)
    vals = np.ones(source_grid.shape)
    for k in range(d):
        ints = _axis_integrals(source_grid.edges(k), float(t[k]), beta[k], past) / source_grid.widths[k]
        shape = [1] * d
        shape[k] = source_grid.cells[k]
        vals = vals * ints.reshape(shape)
    return FieldKernel(beta, t, GridFunction(source_grid, vals), past, frac)


@dataclass(frozen=True, eq=False)
class NoiseKernel:
    """``lambda_t(u, y) = y prod_k (t_k - u_k)_+^(b_k - 1) / Gamma(b_k)`` integrated over cells.

    ``values[cell, mark]`` is the integral over the cell times the mark value.
    """

    beta: tuple[float, ...]
    t: np.ndarray
    space: DiscreteU
    values: np.ndarray

    def as_chaos(self) -> ChaosVector:
        """First-chaos vector with cell averages of ``lambda_t`` as coefficients."""
        return ChaosVector.first_order(self.space, self.values.ravel() / self.space.base_grid.cell_volume)


def noise_kernel(beta, t, U: DiscreteU) -> NoiseKernel:
    grid = U.base_grid
    beta = operator_orders(beta, grid.dim)
    t = _vec(t, grid.dim)
    vals = np.ones(grid.shape)
    for k in range(grid.dim):
        e = grid.edges(k)
        ints = (pos_pow(t[k] - e[:-1], beta[k]) - pos_pow(t[k] - e[1:], beta[k])) / special.gamma(beta[k] + 1.0)
        shape = [1] * grid.dim
        shape[k] = grid.cells[k]
        vals = vals * ints.reshape(shape)
    values = vals.reshape(-1, 1) * U.mark_values[None, :]
    return NoiseKernel(beta, t, U, values)


# -- sampling ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FieldRealization:
    points: np.ndarray
    values: np.ndarray
    seed: int | None = None
    meta: dict = field(default_factory=dict)


def kernel_at(beta: Sequence[float], points: np.ndarray, sources: np.ndarray) -> np.ndarray:
    """``k_t(s)`` for every evaluation point ``t`` (rows) and source ``s`` (columns)."""
    out = np.ones((len(points), len(sources)))
    for k, b in enumerate(beta):
        for i, tk in enumerate(points[:, k]):
            out[i] *= kernel_1d(sources[:, k], float(tk), b)
    return out


def field_from_noise(noise: NoiseRealization, beta, eval_points) -> np.ndarray:
    """``X_t`` at each row of ``eval_points`` from the jumps of one noise path.

    Jumps contribute ``y_j k_t(s_j)``; the compensator is subtracted with the
    exact box integral of ``k_t`` over the noise grid.
    """
    grid = noise.grid
    beta = BetaVector.of(beta).beta
    if len(beta) != grid.dim:
        raise ValueError(f"beta has {len(beta)} components, noise grid has dimension {grid.dim}")
    pts = np.atleast_2d(np.asarray(eval_points, dtype=float))
    if pts.shape[1] != grid.dim:
        raise ValueError(f"evaluation points have dimension {pts.shape[1]}, expected {grid.dim}")
    jumps = kernel_at(beta, pts, noise.locations) @ noise.marks if noise.n_jumps else np.zeros(len(pts))
    comp = np.ones(len(pts))
    for k, b in enumerate(beta):
        comp *= np.array([kernel_box_integral_1d(grid.lower[k], grid.upper[k], tk, b) for tk in pts[:, k]])
    return jumps - noise.drift * comp


def sample_field(model: LevyModel, beta, eval_points, source_grid: GridSpec, seed: int) -> FieldRealization:
    """One realization of the field at ``eval_points`` driven by noise on ``source_grid``."""
    noise = sample_noise_grid(model, source_grid, seed)
    values = field_from_noise(noise, beta, eval_points)
    pts = np.atleast_2d(np.asarray(eval_points, dtype=float))
    return FieldRealization(pts, values, seed, {"n_jumps": noise.n_jumps, "T_past": -min(source_grid.lower)})


def covariance_oracle(
    model: LevyModel, beta, t, s, T_past: float | None = None, tail_tol: float | None = None
) -> float:
    """``Cov(X_t, X_s) = m2 prod_k int k_{t_k} k_{s_k}`` by graded quadrature.

    With ``T_past`` the integrals stop at ``-T_past``, matching a sampler on a
    truncated box; ``tail_tol`` then bounds the dropped share for both points.
    """
    beta = BetaVector.of(beta).beta
    t, s = _vec(t, len(beta)), _vec(s, len(beta), "s")
    past = np.inf if T_past is None else float(T_past)
    if T_past is not None:
        check_tail(beta, t, past, tail_tol)
        check_tail(beta, s, past, tail_tol)
    m2 = model.second_moment()
    prod = 1.0
    for b, tk, sk in zip(beta, t, s):
        prod *= kernel_product_1d(float(tk), float(sk), b, past)
    return m2 * prod


def s_transform_field(beta, t, xi: np.ndarray, U: DiscreteU) -> float:
    """``S(X_t)(xi) = sum_atoms y k_bar_t(cell) xi pi`` for atom values ``xi``."""
    grid = U.base_grid
    beta = operator_orders(beta, grid.dim)
    t = _vec(t, grid.dim)
    kbar = np.ones(grid.shape)
    for k in range(grid.dim):
        ints = kernel_box_integral_1d(grid.edges(k)[:-1], grid.edges(k)[1:], float(t[k]), beta[k]) / grid.widths[k]
        shape = [1] * grid.dim
        shape[k] = grid.cells[k]
        kbar = kbar * ints.reshape(shape)
    atoms = np.repeat(kbar.ravel(), U.n_marks) * U.marks
    return float(np.sum(atoms * np.asarray(xi, dtype=float).ravel() * U.pi))


def s_transform_field_by_parts(beta, t, xi: np.ndarray, U: DiscreteU) -> float:
    """The same S-transform routed through ``int 1_[0,t] I_+^beta (y xi)``.

    ``I_+^beta`` acts on each mark slice of ``xi`` and the result is integrated
    over the box ``[0, t]`` by exact cell-overlap fractions. Agrees with
    :func:`s_transform_field` when ``t`` lies on grid edges.
    """
    from .fracops import frac_integral_plus

    grid = U.base_grid
    beta = operator_orders(beta, grid.dim)
    t = _vec(t, grid.dim)
    xi = U.reshape(np.asarray(xi, dtype=float))
    lower = np.minimum(t, 0.0)
    upper = np.maximum(t, 0.0)
    sign = float(np.prod(np.where(t < 0, -1.0, 1.0)))
    box = GridFunction.indicator(grid, lower, upper).values
    total = 0.0
    for j in range(U.n_marks):
        g = GridFunction(grid, xi[..., j])
        ip = frac_integral_plus(g, beta).values
        total += U.mark_weights[j] * U.mark_values[j] * float(np.sum(box * ip)) * grid.cell_volume
    return sign * total


__all__ = [
    "DEFAULT_TAIL_TOL",
    "FieldKernel",
    "FieldRealization",
    "NoiseKernel",
    "covariance_oracle",
    "field_from_noise",
    "field_kernel",
    "kernel_1d",
    "kernel_box_integral_1d",
    "kernel_product_1d",
    "noise_kernel",
    "required_past",
    "s_transform_field",
    "s_transform_field_by_parts",
    "sample_field",
    "tail_fraction",
]
