"""Truncated Charlier chaos algebra on a discretized space-mark set.

The set ``U = R^d x R_0`` is replaced by ``K = cells x marks`` atoms carrying
weights ``pi_k = cell_volume * w_j``. A :class:`ChaosVector` holds dense
symmetric coefficient tensors ``F_0, ..., F_N`` with ``F_n`` of shape ``(K,)*n``.
All identities (orthogonality, S-transform homomorphism, Skorohod duality)
then hold exactly in floating point up to rounding.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate, optimize

from .grid import GridSpec
from .levy import LevyModel, NoiseRealization

DEFAULT_MAX_ORDER = 3
DEFAULT_MARKS_PER_SIGN = 16


class ChaosTruncationError(ValueError):
    """Raised when an operation would produce chaos orders above the configured maximum."""


@dataclass(frozen=True, eq=False)
class DiscreteU:
    """Product of a spatial grid and a finite mark discretization of ``nu_eps``."""

    base_grid: GridSpec
    mark_values: np.ndarray
    mark_weights: np.ndarray
    max_order: int = DEFAULT_MAX_ORDER
    mark_edges: np.ndarray | None = None

    def __post_init__(self):
        y = np.asarray(self.mark_values, dtype=float)
        w = np.asarray(self.mark_weights, dtype=float)
        if y.ndim != 1 or y.shape != w.shape or len(y) == 0:
            raise ValueError("mark values and weights must be matching non-empty vectors")
        if np.any(y == 0):
            raise ValueError("mark points must be non-zero")
        if np.any(w < 0):
            raise ValueError("mark weights must be non-negative")
        if self.max_order < 0:
            raise ValueError("max_order must be >= 0")
        object.__setattr__(self, "mark_values", y)
        object.__setattr__(self, "mark_weights", w)

    @classmethod
    def from_model(
        cls,
        model: LevyModel,
        base_grid: GridSpec,
        max_order: int = DEFAULT_MAX_ORDER,
        marks_per_sign: int = DEFAULT_MARKS_PER_SIGN,
    ) -> "DiscreteU":
        """Atoms of a finite-activity model, or a moment-matched quantile grid.

        For tempered stable measures each half-line is split into
        ``marks_per_sign`` intervals of equal ``nu_eps`` mass; the mark point of
        an interval is the root-mean-square mark, so both the mass and the
        second moment of every interval are reproduced exactly.
        """
        if model.kind == "finite":
            marks, masses = model.atoms
            keep = masses > 0
            if not keep.any():
                raise ValueError("model has no jump mass to discretize")
            return cls(base_grid, marks[keep], masses[keep], max_order)
        values, weights, edges = [], [], []
        alpha, lp, lm, scale = model.params
        for lam, sign in ((lp, 1.0), (lm, -1.0)):
            dens = model._side_density(lam)

            def mass(a, b):
                return integrate.quad(dens, a, b, epsabs=0.0, epsrel=1e-12, limit=200)[0]

            total = mass(model.epsilon, np.inf)
            qs = [model.epsilon]
            for i in range(1, marks_per_sign):
                target = total * i / marks_per_sign
                hi = qs[-1] * 2.0
                while mass(model.epsilon, hi) < target:
                    hi *= 2.0
                qs.append(optimize.brentq(lambda q: mass(model.epsilon, q) - target, qs[-1], hi, xtol=1e-14, rtol=1e-14))
            qs.append(np.inf)
            for a, b in zip(qs[:-1], qs[1:]):
                w = total / marks_per_sign
                m2 = model._side_second_moment(lam, a, b)
                values.append(sign * np.sqrt(m2 / w))
                weights.append(w)
                edges.append((sign * a, sign * b))
        return cls(base_grid, np.array(values), np.array(weights), max_order, np.array(edges))

    @property
    def n_marks(self) -> int:
        return len(self.mark_values)

    @property
    def size(self) -> int:
        return self.base_grid.n_cells * self.n_marks

    @property
    def pi(self) -> np.ndarray:
        """Atom weights, flattened as ``cell * n_marks + mark``."""
        return np.repeat(np.full(self.base_grid.n_cells, self.base_grid.cell_volume), self.n_marks) * np.tile(
            self.mark_weights, self.base_grid.n_cells
        )

    @property
    def marks(self) -> np.ndarray:
        """Mark value of each atom."""
        return np.tile(self.mark_values, self.base_grid.n_cells)

    @property
    def second_moment(self) -> float:
        return float(np.dot(self.mark_weights, self.mark_values**2))

    def reshape(self, values: np.ndarray) -> np.ndarray:
        """View an atom vector as ``grid shape + (n_marks,)``."""
        return np.asarray(values).reshape(self.base_grid.shape + (self.n_marks,))

    def test_function(self, func) -> np.ndarray:
        """Atom values of ``func(points, marks)`` at cell centers and mark points."""
        centers = np.stack([m.ravel() for m in self.base_grid.mesh()], axis=1)
        pts = np.repeat(centers, self.n_marks, axis=0)
        return np.asarray(func(pts, self.marks), dtype=float)

    def mark_index(self, marks: np.ndarray) -> np.ndarray:
        marks = np.asarray(marks, dtype=float)
        if self.mark_edges is None:
            idx = np.argmin(np.abs(marks[:, None] - self.mark_values[None, :]), axis=1)
            if len(marks) and not np.allclose(self.mark_values[idx], marks, rtol=0, atol=1e-12):
                raise ValueError("jump marks do not match the discrete mark atoms")
            return idx
        lo = np.minimum(self.mark_edges[:, 0], self.mark_edges[:, 1])
        hi = np.maximum(self.mark_edges[:, 0], self.mark_edges[:, 1])
        inside = (np.abs(marks[:, None]) >= np.abs(lo)[None, :]) & (np.abs(marks[:, None]) < np.abs(hi)[None, :])
        inside &= np.sign(marks[:, None]) == np.sign(self.mark_values[None, :])
        if len(marks) and not np.all(inside.any(axis=1)):
            raise ValueError("jump marks fall outside the mark discretization")
        return np.argmax(inside, axis=1)

    def atom_index(self, locations: np.ndarray, marks: np.ndarray) -> np.ndarray:
        cells = self.base_grid.cell_index(locations)
        if np.any(cells < 0):
            raise ValueError("jump locations fall outside the base grid")
        return cells * self.n_marks + self.mark_index(marks)


@dataclass(frozen=True, eq=False)
class ChaosVector:
    """Coefficients ``(F_0, ..., F_N)`` of ``sum_n <C_n, F_n>``."""

    space: DiscreteU
    coeffs: tuple

    def __post_init__(self):
        K = self.space.size
        coeffs = []
        for n, c in enumerate(self.coeffs):
            c = np.asarray(c, dtype=float)
            if c.shape != (K,) * n:
                raise ValueError(f"coefficient of order {n} has shape {c.shape}, expected {(K,) * n}")
            if not np.all(np.isfinite(c)):
                raise ValueError(f"coefficient of order {n} has non-finite entries")
            coeffs.append(c)
        if not coeffs:
            raise ValueError("a chaos vector needs at least the order-0 coefficient")
        object.__setattr__(self, "coeffs", tuple(coeffs))

    @classmethod
    def scalar(cls, space: DiscreteU, c: float) -> "ChaosVector":
        return cls(space, (np.asarray(float(c)),))

    @classmethod
    def first_order(cls, space: DiscreteU, f: np.ndarray, c0: float = 0.0) -> "ChaosVector":
        """``c0 + <C_1, f>``."""
        return cls(space, (np.asarray(float(c0)), np.asarray(f, dtype=float).ravel()))

    @classmethod
    def pure(cls, space: DiscreteU, n: int, tensor: np.ndarray) -> "ChaosVector":
        """``<C_n, tensor>`` (the tensor is symmetrized)."""
        K = space.size
        coeffs = [np.zeros((K,) * k) for k in range(n)] + [symmetrize(np.asarray(tensor, dtype=float))]
        return cls(space, tuple(coeffs))

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1

    def padded(self, order: int) -> "ChaosVector":
        K = self.space.size
        extra = tuple(np.zeros((K,) * n) for n in range(self.order + 1, order + 1))
        return ChaosVector(self.space, self.coeffs + extra)

    def is_symmetric(self, atol: float = 1e-12) -> bool:
        return all(np.allclose(c, symmetrize(c), rtol=0, atol=atol) for c in self.coeffs)

    def _combine(self, other: "ChaosVector", a: float, b: float) -> "ChaosVector":
        _same_space(self, other)
        n = max(self.order, other.order)
        x, y = self.padded(n), other.padded(n)
        return ChaosVector(self.space, tuple(a * p + b * q for p, q in zip(x.coeffs, y.coeffs)))

    def __add__(self, other: "ChaosVector") -> "ChaosVector":
        return self._combine(other, 1.0, 1.0)

    def __sub__(self, other: "ChaosVector") -> "ChaosVector":
        return self._combine(other, 1.0, -1.0)

    def __mul__(self, scalar: float) -> "ChaosVector":
        return ChaosVector(self.space, tuple(float(scalar) * c for c in self.coeffs))

    __rmul__ = __mul__

    def allclose(self, other: "ChaosVector", atol: float) -> bool:
        _same_space(self, other)
        n = max(self.order, other.order)
        x, y = self.padded(n), other.padded(n)
        return all(np.allclose(p, q, rtol=0, atol=atol) for p, q in zip(x.coeffs, y.coeffs))


def _same_space(a: ChaosVector, b: ChaosVector) -> None:
    if a.space is not b.space:
        if a.space.size != b.space.size or not np.array_equal(a.space.pi, b.space.pi):
            raise ValueError("chaos vectors use different discretizations")


def symmetrize(tensor: np.ndarray) -> np.ndarray:
    """Average of a tensor over all permutations of its axes."""
    n = tensor.ndim
    if n <= 1:
        return np.array(tensor, dtype=float)
    perms = list(itertools.permutations(range(n)))
    out = np.zeros_like(tensor, dtype=float)
    for p in perms:
        out += np.transpose(tensor, p)
    return out / len(perms)


def _contract(tensor: np.ndarray, vec: np.ndarray) -> float:
    out = tensor
    for _ in range(tensor.ndim):
        out = np.tensordot(out, vec, axes=([0], [0]))
    return float(out)


def pairing(F: ChaosVector, f: ChaosVector) -> float:
    """``<<F, f>> = sum_n n! <F_n, f_n>_pi``."""
    _same_space(F, f)
    pi = F.space.pi
    total = 0.0
    for n in range(min(F.order, f.order) + 1):
        total += math.factorial(n) * _contract(F.coeffs[n] * f.coeffs[n], pi)
    return total


def s_transform(F: ChaosVector, xi: np.ndarray) -> float:
    """``S(F)(xi) = sum_n <F_n, xi^{(x) n}>_pi``."""
    v = np.asarray(xi, dtype=float).ravel() * F.space.pi
    if v.shape != (F.space.size,):
        raise ValueError(f"test function has {v.size} entries, expected {F.space.size}")
    return float(sum(_contract(c, v) for c in F.coeffs))


def exponential_vector(space: DiscreteU, xi: np.ndarray, order: int) -> ChaosVector:
    """Chaos coefficients ``xi^{(x) n} / n!`` of the normalized exponential, up to ``order``."""
    xi = np.asarray(xi, dtype=float).ravel()
    coeffs = [np.asarray(1.0)]
    t = np.asarray(1.0)
    for n in range(1, order + 1):
        t = np.multiply.outer(t, xi)
        coeffs.append(t / math.factorial(n))
    return ChaosVector(space, tuple(coeffs))


def _check_order(order: int, space: DiscreteU, max_order: int | None, what: str) -> int:
    cap = space.max_order if max_order is None else max_order
    if order > cap:
        raise ChaosTruncationError(f"{what} needs chaos order {order}, above the configured maximum {cap}")
    return cap


def wick_product(F: ChaosVector, G: ChaosVector, max_order: int | None = None) -> ChaosVector:
    """``(F <> G)_n = sum_{k+l=n} sym(F_k (x) G_l)``, kept to full order ``N_F + N_G``."""
    _same_space(F, G)
    n_out = F.order + G.order
    _check_order(n_out, F.space, max_order, "Wick product")
    K = F.space.size
    coeffs = [np.zeros((K,) * n) for n in range(n_out + 1)]
    for k, a in enumerate(F.coeffs):
        for l, b in enumerate(G.coeffs):
            if not (a.any() and b.any()):
                continue
            coeffs[k + l] = coeffs[k + l] + symmetrize(np.multiply.outer(a, b))
    return ChaosVector(F.space, tuple(coeffs))


def wick_exp(F: ChaosVector, max_order: int) -> ChaosVector:
    """``sum_{n <= max_order} F^{<>n} / n!``.

    For order-0 ``F`` the result is the scalar partial exponential series; in
    general the result has chaos order ``max_order * F.order``.
    """
    if max_order < 0:
        raise ValueError("max_order must be >= 0")
    _check_order(max_order * F.order, F.space, None, "Wick exponential")
    power = ChaosVector.scalar(F.space, 1.0)
    total = power
    for n in range(1, max_order + 1):
        power = wick_product(power, F, max_order=F.space.max_order)
        total = total + power * (1.0 / math.factorial(n))
    return total


def wick_exp_truncation_bound(s_value: float, max_order: int) -> float:
    """Lagrange remainder bound ``e^max(s, 0) |s|^(m+1) / (m+1)!`` of the truncated exponential series."""
    return math.exp(max(s_value, 0.0)) * abs(s_value) ** (max_order + 1) / math.factorial(max_order + 1)


@dataclass(frozen=True, eq=False)
class ChaosProcess:
    """A chaos vector indexed by atoms: ``F(x) = sum_n <C_n, F_n(., x)>``.

    ``coeffs[n]`` has shape ``(K,)*n + (K,)`` with the last axis the index ``x``.
    """

    space: DiscreteU
    coeffs: tuple

    @classmethod
    def from_vectors(cls, vectors: Sequence[ChaosVector]) -> "ChaosProcess":
        if not vectors:
            raise ValueError("need one chaos vector per atom")
        space = vectors[0].space
        if len(vectors) != space.size:
            raise ValueError(f"expected {space.size} chaos vectors, got {len(vectors)}")
        order = max(v.order for v in vectors)
        padded = [v.padded(order) for v in vectors]
        coeffs = tuple(np.stack([v.coeffs[n] for v in padded], axis=-1) for n in range(order + 1))
        return cls(space, coeffs)

    @classmethod
    def deterministic(cls, space: DiscreteU, h: np.ndarray) -> "ChaosProcess":
        return cls(space, (np.asarray(h, dtype=float).ravel(),))

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1

    def at(self, x: int) -> ChaosVector:
        return ChaosVector(self.space, tuple(c[..., x] for c in self.coeffs))


def _as_process(F) -> ChaosProcess:
    if isinstance(F, ChaosProcess):
        return F
    return ChaosProcess.from_vectors(list(F))


def skorohod_delta(F, max_order: int | None = None) -> ChaosVector:
    """``delta(F) = sum_n <C_{n+1}, sym(F_n)>`` for an atom-indexed family ``F``.

    ``F`` is a :class:`ChaosProcess` or a sequence of one :class:`ChaosVector`
    per atom. The integration index becomes a new tensor slot, weighted by
    ``pi`` through the pairing.
    """
    F = _as_process(F)
    _check_order(F.order + 1, F.space, max_order, "Skorohod integral")
    coeffs = [np.asarray(0.0)] + [symmetrize(c) for c in F.coeffs]
    return ChaosVector(F.space, tuple(coeffs))


def skorohod_s_transform_rhs(F, xi: np.ndarray) -> float:
    """``sum_x S(F(x))(xi) xi(x) pi_x``, the dual side of the Skorohod identity."""
    F = _as_process(F)
    xi = np.asarray(xi, dtype=float).ravel()
    pi = F.space.pi
    return float(sum(s_transform(F.at(x), xi) * xi[x] * pi[x] for x in range(F.space.size)))


def wick_process(Y: ChaosVector, F) -> ChaosProcess:
    """Pointwise Wick product ``x -> Y <> F(x)``."""
    F = _as_process(F)
    return ChaosProcess.from_vectors([wick_product(Y, F.at(x), max_order=Y.space.max_order) for x in range(F.space.size)])


def evaluate_pathwise(F: ChaosVector, noise: NoiseRealization) -> float:
    """Value of ``F_0 + <C_1, F_1>`` on one noise path.

    ``<C_1, f> = sum_jumps f(atom of jump) - int f dpi``. Orders >= 2 have no
    pathwise evaluation here and must vanish.
    """
    for n in range(2, F.order + 1):
        if F.coeffs[n].any():
            raise NotImplementedError("pathwise evaluation is only available for chaos orders 0 and 1")
    value = float(F.coeffs[0])
    if F.order >= 1:
        f = F.coeffs[1]
        idx = F.space.atom_index(noise.locations, noise.marks) if noise.n_jumps else np.empty(0, dtype=int)
        value += float(f[idx].sum()) - float(np.dot(f, F.space.pi))
    return value
