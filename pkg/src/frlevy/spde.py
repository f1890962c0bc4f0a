"""Poisson, linear heat and quasi-linear heat equations driven by fractional Lévy noise.

Space is discretized by the standard (2d+1)-point Dirichlet Laplacian on the
interior nodes of a box; the operator is diagonalized by the type-I sine
transform. The fractional noise is never sampled pointwise: its average over
each node's control volume (and, for heat, each time step) is integrated
exactly from the jump list through antiderivatives of the power kernels.
Heat problems are advanced with the exponential integrator, which is exact
for forcing constant on each time step.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import fft, special, stats

from .fracops import BetaVector, point_matrix, pos_pow
from .grid import GridFunction, GridSpec
from .levy import LevyModel, NoiseRealization, sample_noise_grid
from .quadrature import graded_rule, past_breakpoints

MIN_CELLS = 8
_CHUNK = 2_000_000


class StabilityError(ValueError):
    """Time step outside the stability region of the selected scheme."""


class PicardDivergenceError(RuntimeError):
    """Picard iteration hit ``max_iter``; ``differences`` holds the sup-norm sequence."""

    def __init__(self, message: str, differences: Sequence[float]):
        super().__init__(message)
        self.differences = tuple(differences)


# -- domain -------------------------------------------------------------------------


@dataclass(frozen=True)
class DomainSpec:
    """Box ``[lower, upper]`` with ``cells`` per axis, horizon ``t_end`` split into ``time_steps``.

    ``past`` is how far the driving noise reaches below the domain along every
    axis (time included), truncating the fractional memory.
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    cells: tuple[int, ...]
    t_end: float = 1.0
    time_steps: int = 100
    past: float = 10.0
    scheme: str = "exponential"

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        cells = tuple(int(v) for v in np.atleast_1d(self.cells))
        if not len(lower) == len(upper) == len(cells) or not lower:
            raise ValueError("lower, upper and cells must have the same length >= 1")
        if any(a >= b for a, b in zip(lower, upper)):
            raise ValueError("domain needs lower < upper on every axis")
        if any(n < MIN_CELLS for n in cells):
            raise ValueError(f"resolution must be >= {MIN_CELLS} cells per axis, got {cells}")
        if self.t_end < 0 or self.time_steps < 1:
            raise ValueError("t_end must be >= 0 and time_steps >= 1")
        if self.past < 0:
            raise ValueError("past must be >= 0")
        if self.scheme not in ("exponential", "explicit"):
            raise ValueError(f"unknown heat scheme {self.scheme!r}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "cells", cells)
        if self.scheme == "explicit" and self.t_end > 0:
            bound = float(np.min(self.h)) ** 2 / self.dim
            if self.dt > bound * (1 + 1e-12):
                raise StabilityError(f"time step dt={self.dt:g} exceeds the explicit stability bound {bound:g}")

    @classmethod
    def box(cls, lower: float, upper: float, cells: int, dim: int = 1, **kw) -> "DomainSpec":
        return cls((lower,) * dim, (upper,) * dim, (cells,) * dim, **kw)

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def lengths(self) -> np.ndarray:
        return np.asarray(self.upper) - np.asarray(self.lower)

    @property
    def h(self) -> np.ndarray:
        return self.lengths / np.asarray(self.cells)

    @property
    def dt(self) -> float:
        return self.t_end / self.time_steps

    @property
    def interior_shape(self) -> tuple[int, ...]:
        return tuple(n - 1 for n in self.cells)

    def nodes(self, axis: int) -> np.ndarray:
        """All nodes along ``axis``, boundary included."""
        return np.linspace(self.lower[axis], self.upper[axis], self.cells[axis] + 1)

    def interior_nodes(self, axis: int) -> np.ndarray:
        return self.nodes(axis)[1:-1]

    def volume_edges(self, axis: int) -> np.ndarray:
        """Edges of the control volumes ``[x_i - h/2, x_i + h/2]`` of the interior nodes."""
        h = self.h[axis]
        return self.lower[axis] + h * (np.arange(self.cells[axis]) + 0.5)

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.time_steps + 1)

    def noise_grid(self, with_time: bool) -> GridSpec:
        """Box carrying all jumps that can influence the solution."""
        lo = [a - self.past for a in self.lower]
        hi = list(self.upper)
        if with_time:
            lo = [-self.past] + lo
            hi = [max(self.t_end, 1e-12)] + hi
        cells = [max(1, int(math.ceil(b - a))) for a, b in zip(lo, hi)]
        return GridSpec(tuple(lo), tuple(hi), tuple(cells))

    def node_index(self, x: Sequence[float]) -> tuple[int, ...]:
        """Multi-index (boundary included) of the node at ``x``; raises if ``x`` is not a node."""
        idx = []
        for k, xk in enumerate(np.atleast_1d(x)):
            r = (xk - self.lower[k]) / self.h[k]
            i = int(round(r))
            if abs(r - i) > 1e-9 or not 0 <= i <= self.cells[k]:
                raise ValueError(f"point {tuple(np.atleast_1d(x))} is not a grid node")
            idx.append(i)
        return tuple(idx)


# -- spectral tools -------------------------------------------------------------------


def _axes(domain: DomainSpec, lead: int = 0) -> tuple[int, ...]:
    return tuple(range(lead, lead + domain.dim))


def _sine(values: np.ndarray, domain: DomainSpec, lead: int = 0) -> np.ndarray:
    # orthonormal DST-I is its own inverse
    return fft.dstn(values, type=1, norm="ortho", axes=_axes(domain, lead))


def laplacian_eigenvalues(domain: DomainSpec) -> np.ndarray:
    """Eigenvalues of ``-L_h`` on the interior grid, broadcast to its shape."""
    total = np.zeros(domain.interior_shape)
    for k, n in enumerate(domain.cells):
        m = np.arange(1, n)
        mu = (4.0 / domain.h[k] ** 2) * np.sin(m * np.pi / (2 * n)) ** 2
        shape = [1] * domain.dim
        shape[k] = n - 1
        total = total + mu.reshape(shape)
    return total


def apply_laplacian(domain: DomainSpec, U: np.ndarray) -> np.ndarray:
    """``L_h U`` by the explicit stencil with zero Dirichlet data; ``U`` on interior nodes."""
    out = np.zeros_like(U)
    for k in range(domain.dim):
        padded = np.pad(U, [(1, 1) if j == k else (0, 0) for j in range(U.ndim)])
        n = U.shape[k]
        up = np.take(padded, np.arange(2, n + 2), axis=k)
        down = np.take(padded, np.arange(0, n), axis=k)
        out += (up - 2.0 * U + down) / domain.h[k] ** 2
    return out


def _pad_boundary(values: np.ndarray, domain: DomainSpec, lead: int = 0) -> np.ndarray:
    return np.pad(values, [(0, 0)] * lead + [(1, 1)] * domain.dim)


# -- exact forcing assembly ----------------------------------------------------------


def _axis_mass(edges: np.ndarray, lo: float, hi: float, beta: float) -> np.ndarray:
    """``int_lo^hi`` of the per-cell kernel ``[(b-u)_+^beta - (a-u)_+^beta] / Gamma(beta+1)`` over ``u``."""
    P = lambda x: pos_pow(x, beta + 1.0)  # noqa: E731
    a, b = edges[:-1], edges[1:]
    return (P(b - lo) - P(b - hi) - P(a - lo) + P(a - hi)) / special.gamma(beta + 2.0)


def _product_sum(factors: list[np.ndarray], marks: np.ndarray) -> np.ndarray:
    """``sum_j marks_j * outer_k factors[k][:, j]`` evaluated in jump chunks."""
    shape = tuple(f.shape[0] for f in factors)
    out = np.zeros(shape)
    J = len(marks)
    if J == 0:
        return out
    size = int(np.prod(shape))
    step = max(1, _CHUNK // max(size, 1))
    letters = "abcdefgh"[: len(factors)]
    spec = ",".join(f"{c}j" for c in letters) + ",j->" + letters
    for s in range(0, J, step):
        sl = slice(s, s + step)
        out += np.einsum(spec, *[f[:, sl] for f in factors], marks[sl], optimize=True)
    return out


def _outer(vectors: list[np.ndarray]) -> np.ndarray:
    out = np.asarray(1.0)
    for v in vectors:
        out = np.multiply.outer(out, v)
    return out


def assemble_forcing(noise: NoiseRealization, orders: Sequence[float], edges: Sequence[np.ndarray]) -> np.ndarray:
    """Cell averages of the fractional noise ``<C_1, lambda>`` over the product cells given by ``edges``.

    Axis ``k`` of the noise is paired with ``edges[k]`` and order ``orders[k]``;
    jumps contribute exactly, the compensator uses the noise grid box.
    """
    grid = noise.grid
    if grid.dim != len(orders) or len(edges) != len(orders):
        raise ValueError(f"noise has dimension {grid.dim}, expected {len(orders)}")
    widths = [np.diff(e) for e in edges]
    factors = [
        point_matrix(noise.locations[:, k], np.asarray(edges[k]), orders[k], "-").T / widths[k][:, None]
        for k in range(grid.dim)
    ]
    F = _product_sum(factors, noise.marks)
    if noise.drift != 0.0:
        comp = [_axis_mass(np.asarray(edges[k]), grid.lower[k], grid.upper[k], orders[k]) / widths[k] for k in range(grid.dim)]
        F = F - noise.drift * _outer(comp)
    return F


def _check_noise_box(noise: NoiseRealization, domain: DomainSpec, with_time: bool) -> None:
    need = list(domain.upper)
    if with_time:
        need = [domain.t_end] + need
    if noise.grid.dim != len(need):
        raise ValueError(f"noise has dimension {noise.grid.dim}, expected {len(need)}")
    for k, (top, req) in enumerate(zip(noise.grid.upper, need)):
        if top < req - 1e-12:
            raise ValueError(f"noise grid stops at {top:g} on axis {k}, below the domain edge {req:g}")


def _deterministic_forcing(forcing, points: list[np.ndarray], t: float | None = None) -> np.ndarray:
    mesh = np.meshgrid(*points, indexing="ij")
    if callable(forcing):
        vals = forcing(*mesh) if t is None else forcing(t, *mesh)
    else:
        vals = float(forcing)
    return np.asarray(vals, dtype=float) * np.ones(mesh[0].shape)


# -- solution container ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SolutionField:
    """Node values including the boundary; heat solutions carry a leading time axis."""

    axes: tuple
    values: np.ndarray
    times: np.ndarray | None = None
    mean: np.ndarray | None = None
    variance: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def at(self, x: Sequence[float], t: float | None = None) -> float:
        idx = []
        for k, xk in enumerate(np.atleast_1d(x)):
            j = int(np.argmin(np.abs(self.axes[k] - xk)))
            if abs(self.axes[k][j] - xk) > 1e-9 * max(1.0, abs(xk)):
                raise ValueError(f"{xk} is not a node on axis {k}")
            idx.append(j)
        if self.times is None:
            return float(self.values[tuple(idx)])
        n = int(np.argmin(np.abs(self.times - (self.times[-1] if t is None else t))))
        return float(self.values[(n,) + tuple(idx)])


# -- Poisson -------------------------------------------------------------------------


def solve_poisson(
    noise: NoiseRealization | None, beta, domain: DomainSpec, forcing: Callable | float | None = None
) -> SolutionField:
    """Discrete solution of ``Laplace U = -(noise + forcing)`` with ``U = 0`` on the boundary.

    The noise enters through its exact control-volume averages; ``forcing``
    (a callable of the coordinates, or a constant) is sampled at the nodes.
    """
    beta = BetaVector.of(beta).beta
    if len(beta) != domain.dim:
        raise ValueError(f"beta has {len(beta)} components, domain has dimension {domain.dim}")
    F = np.zeros(domain.interior_shape)
    if noise is not None:
        _check_noise_box(noise, domain, with_time=False)
        F = F + assemble_forcing(noise, beta, [domain.volume_edges(k) for k in range(domain.dim)])
    if forcing is not None:
        F = F + _deterministic_forcing(forcing, [domain.interior_nodes(k) for k in range(domain.dim)])
    lam = laplacian_eigenvalues(domain)
    if np.any(lam <= 0):
        raise ArithmeticError("singular Dirichlet Laplacian")
    U = _sine(_sine(F, domain) / lam, domain)
    residual = float(np.max(np.abs(apply_laplacian(domain, U) + F))) if U.size else 0.0
    axes = tuple(domain.nodes(k) for k in range(domain.dim))
    meta = {"beta": beta, "residual": residual, "seed": getattr(noise, "seed", None)}
    return SolutionField(axes, _pad_boundary(U, domain), meta=meta)


# -- heat ------------------------------------------------------------------------------


def _heat_forcing(noise, beta0: float, beta: Sequence[float], domain: DomainSpec, forcing) -> np.ndarray:
    shape = (domain.time_steps,) + domain.interior_shape
    F = np.zeros(shape)
    if noise is not None:
        _check_noise_box(noise, domain, with_time=True)
        edges = [domain.times()] + [domain.volume_edges(k) for k in range(domain.dim)]
        F = F + assemble_forcing(noise, (beta0,) + tuple(beta), edges)
    if forcing is not None:
        t = domain.times()
        mids = 0.5 * (t[1:] + t[:-1])
        nodes = [domain.interior_nodes(k) for k in range(domain.dim)]
        F = F + np.stack([_deterministic_forcing(forcing, nodes, float(s)) for s in mids])
    return F


def _propagate(F: np.ndarray, domain: DomainSpec, initial: np.ndarray | None = None) -> np.ndarray:
    """March ``dU/dt = (1/2) L_h U + F^n`` over the steps; returns interior values at every time."""
    N = domain.time_steps
    dt = domain.dt
    out = np.zeros((N + 1,) + domain.interior_shape)
    if domain.scheme == "explicit":
        U = np.zeros(domain.interior_shape) if initial is None else np.array(initial, dtype=float)
        out[0] = U
        for n in range(N):
            U = U + dt * (0.5 * apply_laplacian(domain, U) + F[n])
            out[n + 1] = U
        return out
    lam = 0.5 * laplacian_eigenvalues(domain)
    E = np.exp(-dt * lam)
    Phi = -np.expm1(-dt * lam) / lam
    Fh = _sine(F, domain, lead=1)
    u = np.zeros(domain.interior_shape) if initial is None else _sine(np.asarray(initial, dtype=float), domain)
    out[0] = u
    for n in range(N):
        u = E * u + Phi * Fh[n]
        out[n + 1] = u
    return _sine(out, domain, lead=1)


def solve_heat(
    noise: NoiseRealization | None,
    beta0: float,
    beta,
    domain: DomainSpec,
    forcing: Callable | float | None = None,
) -> SolutionField:
    """Mild solution of ``dU/dt = (1/2) Laplace U + noise (+ forcing)``, ``U(0) = 0``, Dirichlet box.

    ``noise`` lives on ``[time] x [space]`` (time is axis 0). ``forcing`` is a
    callable ``f(t, *x)`` or a constant, taken at step midpoints.
    """
    beta = BetaVector.of(beta).beta
    BetaVector((beta0,))
    if len(beta) != domain.dim:
        raise ValueError(f"beta has {len(beta)} components, domain has dimension {domain.dim}")
    axes = tuple(domain.nodes(k) for k in range(domain.dim))
    times = domain.times()
    meta = {"beta0": beta0, "beta": beta, "seed": getattr(noise, "seed", None), "scheme": domain.scheme}
    if domain.t_end == 0:
        return SolutionField(axes, np.zeros((1,) + tuple(n + 1 for n in domain.cells)), times[:1], meta=meta)
    F = _heat_forcing(noise, beta0, beta, domain, forcing)
    U = _propagate(F, domain)
    U[0] = 0.0
    return SolutionField(axes, _pad_boundary(U, domain, lead=1), times, meta=meta)


def heat_l2_condition(beta0: float, beta, d: int) -> bool:
    """``2 beta0 + sum(beta) + 1 > d / 2``: finite second moment of the heat solution."""
    beta = np.atleast_1d(BetaVector.of(beta).beta)
    return bool(2.0 * beta0 + float(np.sum(beta)) + 1.0 > d / 2.0)


def picard_condition(beta, d: int) -> bool:
    """Every ``beta_i > 1/2 - 1/d``."""
    beta = np.atleast_1d(BetaVector.of(beta).beta)
    if d < 1:
        raise ValueError("dimension must be >= 1")
    return bool(np.all(beta > 0.5 - 1.0 / d))


# -- Green operators ------------------------------------------------------------------


def _sinh_ratio(a, b, c):
    """``sinh(a) sinh(b) / sinh(c)`` for ``0 <= a, b`` and ``a + b <= c``, overflow-free."""
    return np.exp(a + b - c) * -np.expm1(-2 * a) * -np.expm1(-2 * b) / (-2.0 * np.expm1(-2 * c))


def _resolvent_1d(x, y, kappa, L):
    """Green function of ``-d^2/dx^2 + kappa^2`` on ``(0, L)`` with Dirichlet ends."""
    lo, hi = np.minimum(x, y), np.maximum(x, y)
    kappa = np.asarray(kappa, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = _sinh_ratio(kappa * lo, kappa * (L - hi), kappa * L) / kappa
    return np.where(kappa == 0, lo * (L - hi) / L, val)


@dataclass(frozen=True, eq=False)
class GreenOperator:
    """Green function of ``-Laplace`` or of the heat semigroup ``exp(t Laplace / 2)`` on a box.

    ``__call__`` evaluates the continuum sine-series representation with the
    given ``cutoff`` (modes per axis); ``discrete`` gives the kernel of the
    finite-difference operator at grid nodes.
    """

    kind: str
    domain: DomainSpec
    cutoff: int = 128
    tol: float = 1e-8

    def _local(self, x) -> np.ndarray:
        return np.atleast_1d(np.asarray(x, dtype=float)) - np.asarray(self.domain.lower)

    def __call__(self, x, y, t: float | None = None) -> float:
        if self.kind == "heat_semigroup":
            return self._heat(x, y, t)
        return self._laplace(x, y)

    def _laplace(self, x, y) -> float:
        d = self.domain.dim
        L = self.domain.lengths
        xl, yl = self._local(x), self._local(y)
        if np.any(xl <= 0) or np.any(yl <= 0) or np.any(xl >= L) or np.any(yl >= L):
            return 0.0
        if d == 1:
            return float(_resolvent_1d(xl[0], yl[0], 0.0, L[0]))
        # closed form along the axis of largest separation, sine modes along the rest
        axis = int(np.argmax(np.abs(xl - yl)))
        sep = abs(xl[axis] - yl[axis])
        if sep == 0.0:
            raise ValueError("Green function is singular at x = y for d >= 2")
        others = [k for k in range(d) if k != axis]
        M = self.cutoff
        total, shell = self._laplace_sum(xl, yl, axis, others, M)
        err = shell * M
        if err > self.tol:
            suggest = M
            while suggest < 2**20:
                suggest *= 2
                _, s = self._laplace_sum(xl, yl, axis, others, suggest, shell_only=True)
                if s * suggest <= self.tol:
                    break
            raise ValueError(f"cutoff {M} too small for tolerance {self.tol:g} (estimated error {err:.2g}); try cutoff={suggest}")
        return total

    def _laplace_sum(self, xl, yl, axis, others, M, shell_only=False):
        L = self.domain.lengths
        m = np.arange(1, M + 1)
        grids = np.meshgrid(*([m] * len(others)), indexing="ij")
        kappa2 = np.zeros(grids[0].shape)
        weight = np.ones(grids[0].shape)
        for g, k in zip(grids, others):
            kappa2 = kappa2 + (g * np.pi / L[k]) ** 2
            weight = weight * (2.0 / L[k]) * np.sin(g * np.pi * xl[k] / L[k]) * np.sin(g * np.pi * yl[k] / L[k])
        terms = weight * _resolvent_1d(xl[axis], yl[axis], np.sqrt(kappa2), L[axis])
        on_shell = np.zeros(terms.shape, dtype=bool)
        for g in grids:
            on_shell |= g == M
        shell = float(np.sum(np.abs(terms[on_shell])))
        if shell_only:
            return None, shell
        return float(np.sum(terms)), shell

    def _heat(self, x, y, t) -> float:
        if t is None or t <= 0:
            raise ValueError("heat Green function needs t > 0")
        L = self.domain.lengths
        xl, yl = self._local(x), self._local(y)
        M = self.cutoff
        m = np.arange(1, M + 1)
        out = 1.0
        for k in range(self.domain.dim):
            if not 0 < xl[k] < L[k] or not 0 < yl[k] < L[k]:
                return 0.0
            decay = np.exp(-0.5 * (m * np.pi / L[k]) ** 2 * t)
            tail = (2.0 / L[k]) * decay[-1] / max(1e-300, -np.expm1(-(M + 0.5) * (np.pi / L[k]) ** 2 * t))
            if tail > self.tol:
                suggest = int(np.ceil(L[k] / np.pi * np.sqrt(-2.0 * np.log(self.tol * L[k] / 2.0) / t))) + 1
                raise ValueError(f"cutoff {M} too small for tolerance {self.tol:g} at t={t:g}; try cutoff={suggest}")
            out *= float(np.sum((2.0 / L[k]) * np.sin(m * np.pi * xl[k] / L[k]) * np.sin(m * np.pi * yl[k] / L[k]) * decay))
        return out

    def discrete(self, x, y, t: float | None = None) -> float:
        """Kernel of ``(-L_h)^-1`` (or ``exp(t L_h / 2)``) between two nodes, per unit volume."""
        dom = self.domain
        ix, iy = dom.node_index(x), dom.node_index(y)
        if any(i in (0, n) for i, n in zip(ix + iy, dom.cells + dom.cells)):
            return 0.0
        e = np.zeros(dom.interior_shape)
        e[tuple(i - 1 for i in iy)] = 1.0
        lam = laplacian_eigenvalues(dom)
        if self.kind == "heat_semigroup":
            if t is None or t < 0:
                raise ValueError("heat Green function needs t >= 0")
            mult = np.exp(-0.5 * t * lam)
        else:
            mult = 1.0 / lam
        col = _sine(_sine(e, dom) * mult, dom)
        return float(col[tuple(i - 1 for i in ix)] / np.prod(dom.h))


def green_dirichlet(domain: DomainSpec, cutoff: int = 128, tol: float = 1e-8) -> GreenOperator:
    return GreenOperator("dirichlet_laplacian", domain, cutoff, tol)


def green_heat(domain: DomainSpec, cutoff: int = 128, tol: float = 1e-8) -> GreenOperator:
    return GreenOperator("heat_semigroup", domain, cutoff, tol)


# -- variance oracles -------------------------------------------------------------------


def _past_rule(lower: float, anchors: Sequence[float], top: float, scale: float, n: int = 32):
    inner = [a for a in anchors if lower < a < top]
    pts = np.concatenate([past_breakpoints(lower, min([top] + inner), scale), inner, [top]])
    return graded_rule(pts, n=n)


def poisson_variance_oracle(model: LevyModel, beta: float, x: float, past: float, lower: float = 0.0, upper: float = 1.0) -> float:
    """``Var U(x)`` for the one-dimensional Poisson problem on ``(lower, upper)``.

    Uses ``U(x) = <C_1, y int G(x, z) (z - u)_+^(beta-1) / Gamma(beta) dz>`` with the
    exact piecewise-linear Green function and closed-form inner integrals;
    the outer ``u``-integral runs over ``[lower - past, upper]``.
    """
    L = upper - lower
    xs = x - lower
    BetaVector((beta,))

    def piece(a, b, alpha, gamma, u):
        # int_a^b (alpha + gamma z) (z - u)_+^(beta-1) dz / Gamma(beta)
        wa, wb = pos_pow(a - u, 1.0), pos_pow(b - u, 1.0)
        lin = alpha + gamma * u
        val = lin * (pos_pow(wb, beta) - pos_pow(wa, beta)) / beta
        val = val + gamma * (pos_pow(wb, beta + 1) - pos_pow(wa, beta + 1)) / (beta + 1)
        return val / special.gamma(beta)

    def H(u):
        # G(x, z) = z (L - x) / L for z < x and x (L - z) / L for z > x
        return piece(0.0, xs, 0.0, (L - xs) / L, u) + piece(xs, L, xs, -xs / L, u)

    nodes, weights = _past_rule(-past, [0.0, xs], L, L / 4.0)
    return model.second_moment() * float(np.dot(weights, H(nodes) ** 2))


def heat_variance_oracle(
    model: LevyModel,
    beta0: float,
    beta1: float,
    t: float,
    x: float,
    past: float,
    lower: float = 0.0,
    upper: float = 1.0,
    modes: int = 64,
    resolution: int = 4000,
) -> float:
    """``Var U(t, x)`` for the one-dimensional heat problem via sine modes of the semigroup.

    ``U(t, x) = <C_1, y sum_m phi_m(x) A_m(r) B_m(u)>`` with
    ``A_m(r) = I_-^beta0 [exp(-mu_m (t - .)) 1_[0,t]](r)`` and
    ``B_m(u) = I_-^beta1 [phi_m 1_D](u)``; both are evaluated pointwise through
    exact power-kernel integration of finely resolved cell averages.
    """
    BetaVector((beta0, beta1))
    L = upper - lower
    xs = x - lower
    m = np.arange(1, modes + 1)
    mu = 0.5 * (m * np.pi / L) ** 2
    phi_x = np.sqrt(2.0 / L) * np.sin(m * np.pi * xs / L)

    # time factor: source cells graded toward s = t where exp(-mu (t - s)) is steep
    s_edges = np.sort(t - t * np.linspace(0.0, 1.0, resolution + 1) ** 3)
    a, b = s_edges[:-1], s_edges[1:]
    cell_avg_time = (np.exp(-mu[None, :] * (t - b)[:, None]) - np.exp(-mu[None, :] * (t - a)[:, None])) / (
        mu[None, :] * (b - a)[:, None]
    )
    r_nodes, r_w = _graded_span(-past, t, 0.0, pieces=32)
    A = point_matrix(r_nodes, s_edges, beta0, "-") @ cell_avg_time  # (Q, M)

    y_edges = np.linspace(0.0, L, resolution + 1)
    c, d = y_edges[:-1], y_edges[1:]
    k = m * np.pi / L
    cell_avg_space = np.sqrt(2.0 / L) * (np.cos(np.outer(c, k)) - np.cos(np.outer(d, k))) / (k[None, :] * (d - c)[:, None])
    u_nodes, u_w = _graded_span(-past, L, 0.0, pieces=max(32, modes // 2))
    B = point_matrix(u_nodes, y_edges, beta1, "-") @ cell_avg_space

    GA = (A * r_w[:, None]).T @ A
    GB = (B * u_w[:, None]).T @ B
    coef = phi_x[:, None] * phi_x[None, :]
    return model.second_moment() * float(np.sum(coef * GA * GB))


def _graded_span(lower: float, top: float, first: float, pieces: int = 32, n: int = 32):
    """Graded rule on ``[lower, top]``: geometric below ``first``, ``pieces`` uniform splits above it."""
    inner = np.linspace(first, top, pieces + 1)
    step = max((top - first) / pieces, 1e-3)
    pts = np.unique(np.concatenate([past_breakpoints(lower, first, step), inner]))
    return graded_rule(pts, n=n)


# -- exact variance of the discrete schemes ----------------------------------------------


def _gram(edges: np.ndarray, order: float, lower: float, n: int = 24) -> np.ndarray:
    """``int_lower^inf a_i(u) a_j(u) du`` for the averaged power kernels ``a_i`` of the cells in ``edges``."""
    top = edges[-1]
    width = float(np.min(np.diff(edges)))
    pts = np.unique(np.concatenate([past_breakpoints(lower, edges[0], width), edges]))
    pts = pts[pts >= lower]
    nodes, w = graded_rule(pts, n=n)
    a = point_matrix(nodes, edges, order, "-") / np.diff(edges)[None, :]
    return (a * w[:, None]).T @ a


def _mode_product(W: np.ndarray, grams: Sequence[np.ndarray]) -> np.ndarray:
    out = W
    for k, G in enumerate(grams):
        out = np.moveaxis(np.tensordot(G, out, axes=([1], [k])), 0, k)
    return out


def discrete_heat_variance(model: LevyModel, beta0: float, beta, domain: DomainSpec, x: Sequence[float]) -> float:
    """Exact ``Var U_h(t_end, x)`` of :func:`solve_heat` (exponential scheme) at node ``x``.

    The discrete solution is a linear functional of the cell-averaged noise, so
    its variance is ``m2 <W, (Gram_t (x) Gram_1 (x) ...) W>`` with the weights
    ``W`` of the scheme and exact Gram matrices of the averaged kernels.
    """
    beta = BetaVector.of(beta).beta
    BetaVector((beta0,))
    if domain.scheme != "exponential":
        raise ValueError("exact variance is available for the exponential scheme only")
    idx = tuple(i - 1 for i in domain.node_index(x))
    lam = 0.5 * laplacian_eigenvalues(domain)
    dt, N = domain.dt, domain.time_steps
    e = np.zeros(domain.interior_shape)
    e[idx] = 1.0
    eh = _sine(e, domain)
    Phi = -np.expm1(-dt * lam) / lam
    steps = np.arange(N)[::-1]  # steps remaining after cell n
    W = np.stack([_sine(eh * Phi * np.exp(-dt * lam * s), domain) for s in steps])
    grams = [_gram(domain.times(), beta0, -domain.past)]
    grams += [_gram(domain.volume_edges(k), beta[k], domain.lower[k] - domain.past) for k in range(domain.dim)]
    return model.second_moment() * float(np.sum(W * _mode_product(W, grams)))


def discrete_poisson_variance(model: LevyModel, beta, domain: DomainSpec, x: Sequence[float]) -> float:
    """Exact ``Var U_h(x)`` of :func:`solve_poisson` at node ``x``."""
    beta = BetaVector.of(beta).beta
    idx = tuple(i - 1 for i in domain.node_index(x))
    e = np.zeros(domain.interior_shape)
    e[idx] = 1.0
    W = _sine(_sine(e, domain) / laplacian_eigenvalues(domain), domain)
    grams = [_gram(domain.volume_edges(k), beta[k], domain.lower[k] - domain.past) for k in range(domain.dim)]
    return model.second_moment() * float(np.sum(W * _mode_product(W, grams)))


def refinement_trend(values: Sequence[float], growth: float = 0.05, stable: float = 0.05) -> str:
    """``"growing"`` if every refinement raises the value by more than ``growth``,
    ``"stable"`` if the last relative change is below ``stable`` and not larger than the first,
    ``"mixed"`` otherwise."""
    v = np.asarray(values, dtype=float)
    if len(v) < 3:
        raise ValueError("need at least three refinement levels")
    rel = v[1:] / v[:-1] - 1.0
    if np.all(rel > growth):
        return "growing"
    if abs(rel[-1]) < stable and abs(rel[-1]) <= abs(rel[0]):
        return "stable"
    return "mixed"


# -- quasi-linear heat -----------------------------------------------------------------


@dataclass(frozen=True)
class Nonlinearity:
    """A map ``R -> R`` with declared Lipschitz constant ``L`` and linear-growth constant ``C``."""

    func: Callable[[np.ndarray], np.ndarray]
    lipschitz: float
    growth: float

    def __post_init__(self):
        if self.lipschitz < 0 or self.growth < 0:
            raise ValueError("Lipschitz and growth constants must be >= 0")

    def __call__(self, x):
        return self.func(x)


def lipschitz_check(f: Nonlinearity, probe_range: tuple[float, float], n_probes: int = 201) -> tuple[float, float, bool]:
    """Largest difference quotient and growth ratio over ``n_probes`` equispaced points."""
    if n_probes < 2:
        raise ValueError("need at least two probes")
    x = np.linspace(probe_range[0], probe_range[1], n_probes)
    fx = np.asarray(f(x), dtype=float) * np.ones_like(x)
    dx = x[:, None] - x[None, :]
    df = np.abs(fx[:, None] - fx[None, :])
    off = dx != 0
    L_obs = float(np.max(df[off] / np.abs(dx[off])))
    C_obs = float(np.max(np.abs(fx) / (1.0 + np.abs(x))))
    ok = L_obs <= f.lipschitz * (1 + 1e-12) + 1e-300 and C_obs <= f.growth * (1 + 1e-12) + 1e-300
    return L_obs, C_obs, bool(ok)


def escape_bound(domain: DomainSpec, center: Sequence[float] | None = None, t: float | None = None) -> float:
    """Bound on the heat-kernel mass started at ``center`` that reaches the box boundary by ``t``.

    Per axis and side ``P(sup |B| >= a) <= 2 Phi_bar(a / sqrt(t))`` (reflection principle).
    """
    t = domain.t_end if t is None else t
    if t <= 0:
        return 0.0
    c = 0.5 * (np.asarray(domain.lower) + np.asarray(domain.upper)) if center is None else np.asarray(center, dtype=float)
    dist = np.concatenate([c - np.asarray(domain.lower), np.asarray(domain.upper) - c])
    return float(np.sum(2.0 * stats.norm.sf(dist / np.sqrt(t))))


def truncation_halfwidth(t: float, tol: float = 1e-6, d: int = 1) -> float:
    """Half-width ``a`` with ``escape_bound`` of the centered box ``[-a, a]^d`` at most ``tol``."""
    return float(np.sqrt(t) * stats.norm.isf(tol / (4.0 * d)))


@dataclass(frozen=True)
class PicardReport:
    differences: tuple[float, ...]
    converged: bool
    iterations: int
    t_end: float
    tol: float
    escape_bound: float
    lipschitz_observed: float
    growth_observed: float
    picard_condition: bool


def _initial_values(U0, domain: DomainSpec) -> np.ndarray:
    nodes = [domain.interior_nodes(k) for k in range(domain.dim)]
    if U0 is None:
        return np.zeros(domain.interior_shape)
    if isinstance(U0, GridFunction):
        pts = np.stack([m.ravel() for m in np.meshgrid(*nodes, indexing="ij")], axis=1)
        idx = U0.grid.cell_index(pts)
        vals = np.where(idx >= 0, U0.values.ravel()[np.maximum(idx, 0)], 0.0)
        return vals.reshape(domain.interior_shape)
    if callable(U0):
        return _deterministic_forcing(U0, nodes)
    vals = np.asarray(U0, dtype=float)
    if vals.shape != domain.interior_shape:
        raise ValueError(f"initial values have shape {vals.shape}, expected {domain.interior_shape}")
    return vals


def solve_quasilinear(
    f: Nonlinearity,
    U0,
    model: LevyModel,
    beta0: float,
    beta,
    domain: DomainSpec,
    tol: float = 1e-8,
    max_iter: int = 50,
    seed: int = 0,
    noise: NoiseRealization | None = None,
    strict: bool = False,
    probe_range: tuple[float, float] = (-10.0, 10.0),
) -> tuple[SolutionField, PicardReport]:
    """Picard iteration for ``U = S(t) U0 + int G f(U) + V`` on a box standing in for ``R^d``.

    ``V`` (the stochastic convolution) is computed once from ``noise`` (drawn
    from ``model`` with ``seed`` if not given). Each sweep applies ``f`` at the
    left end of every time step. Stops when the sup-norm change is at most
    ``tol``; raises :class:`PicardDivergenceError` after ``max_iter`` sweeps.
    With ``strict`` a violated ``picard_condition`` raises instead of warning.
    """
    beta = BetaVector.of(beta).beta
    BetaVector((beta0,))
    if len(beta) != domain.dim:
        raise ValueError(f"beta has {len(beta)} components, domain has dimension {domain.dim}")
    L_obs, C_obs, ok = lipschitz_check(f, probe_range)
    if not ok:
        raise ValueError(f"nonlinearity fails its declared bounds: observed L={L_obs:.4g}, C={C_obs:.4g}")
    cond = picard_condition(beta, domain.dim)
    if not cond:
        msg = "picard_condition violated: some beta_i <= 1/2 - 1/d"
        if strict:
            raise ValueError(msg)
        warnings.warn(msg, stacklevel=2)
    base_initial = _initial_values(U0, domain)
    if not np.all(np.isfinite(base_initial)):
        raise ValueError("initial condition must be bounded")
    axes = tuple(domain.nodes(k) for k in range(domain.dim))
    if domain.t_end == 0:
        report = PicardReport((), True, 0, 0.0, tol, 0.0, L_obs, C_obs, cond)
        values = _pad_boundary(base_initial[None], domain, lead=1)
        return SolutionField(axes, values, domain.times()[:1], meta={"beta0": beta0, "beta": beta, "iterations": 0}), report
    if noise is None:
        noise = sample_noise_grid(model, domain.noise_grid(with_time=True), seed)
    V = _propagate(_heat_forcing(noise, beta0, beta, domain, None), domain)
    free = _propagate(np.zeros((domain.time_steps,) + domain.interior_shape), domain, initial=base_initial)
    base = V + free
    U = np.broadcast_to(base_initial, base.shape).copy()
    diffs: list[float] = []
    converged = False
    for _ in range(max_iter):
        G = np.asarray(f(U[:-1]), dtype=float) * np.ones_like(U[:-1])
        new = base + _propagate(G, domain)
        diffs.append(float(np.max(np.abs(new - U))))
        U = new
        if diffs[-1] <= tol:
            converged = True
            break
    if not converged:
        raise PicardDivergenceError(f"Picard iteration did not reach tol={tol:g} in {max_iter} iterations", diffs)
    report = PicardReport(
        tuple(diffs), True, len(diffs), domain.t_end, tol, escape_bound(domain), L_obs, C_obs, cond
    )
    meta = {"beta0": beta0, "beta": beta, "seed": noise.seed, "iterations": len(diffs)}
    return SolutionField(axes, _pad_boundary(U, domain, lead=1), domain.times(), meta=meta), report


__all__ = [
    "DomainSpec",
    "GreenOperator",
    "Nonlinearity",
    "PicardDivergenceError",
    "PicardReport",
    "SolutionField",
    "StabilityError",
    "apply_laplacian",
    "assemble_forcing",
    "discrete_heat_variance",
    "discrete_poisson_variance",
    "escape_bound",
    "green_dirichlet",
    "green_heat",
    "heat_l2_condition",
    "heat_variance_oracle",
    "laplacian_eigenvalues",
    "lipschitz_check",
    "picard_condition",
    "poisson_variance_oracle",
    "refinement_trend",
    "solve_heat",
    "solve_poisson",
    "solve_quasilinear",
    "truncation_halfwidth",
]
