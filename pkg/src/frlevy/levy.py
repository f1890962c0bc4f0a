"""Square-integrable pure-jump Lévy measures and compensated Poisson noise on grids.

Two families are supported, both restricted to marks ``|y| >= epsilon``:

* finite activity: ``rate * P(jump = mark)`` over a discrete jump law;
* truncated tempered stable with density
  ``scale * exp(-lambda_{+/-} |y|) |y|^(-1-alpha)`` on each half-line.

The truncated measure is treated as *the* measure everywhere, so the analytic
moments and exponents below are exact for the sampler.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import integrate, special

from .grid import GridSpec

MAX_EXPECTED_JUMPS = 5.0e7


def derive_seed(master_seed: int, index: int) -> int:
    """64-bit seed for replica ``index``, mixed from ``(master_seed, index)``.

    Uses ``numpy.random.SeedSequence([master_seed, index])`` and takes its first
    ``uint64`` state word; the mapping is fixed and platform independent.
    """
    if master_seed < 0 or index < 0:
        raise ValueError("seeds and replica indices must be non-negative")
    state = np.random.SeedSequence([int(master_seed), int(index)]).generate_state(1, dtype=np.uint64)
    return int(state[0])


@dataclass(frozen=True)
class LevyModel:
    """A pure-jump Lévy measure truncated below ``epsilon``.

    Use :meth:`finite_activity` or :meth:`tempered_stable` to construct.
    """

    kind: str
    params: tuple
    epsilon: float = 0.0

    def __post_init__(self):
        if self.epsilon < 0 or not np.isfinite(self.epsilon):
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.kind == "finite":
            rate, marks, probs = self.params
            if rate < 0:
                raise ValueError(f"rate must be >= 0, got {rate}")
            if len(marks) != len(probs) or len(marks) == 0:
                raise ValueError("jump law needs matching non-empty marks and probabilities")
            if any(m == 0 for m in marks):
                raise ValueError("jump marks must be non-zero")
            if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-12:
                raise ValueError("jump probabilities must be >= 0 and sum to 1")
        elif self.kind == "tempered_stable":
            alpha, lam_plus, lam_minus, scale = self.params
            if not 0 < alpha < 2:
                raise ValueError(f"alpha must lie in (0, 2), got {alpha}")
            if lam_plus <= 0 or lam_minus <= 0 or scale <= 0:
                raise ValueError("lambda_plus, lambda_minus and scale must be > 0")
            if self.epsilon <= 0:
                raise ValueError("tempered stable model needs epsilon > 0")
        else:
            raise ValueError(f"unknown Lévy model kind {self.kind!r}")

    @classmethod
    def finite_activity(
        cls, rate: float, marks: Sequence[float], probs: Sequence[float] | None = None, epsilon: float = 0.0
    ) -> "LevyModel":
        marks = tuple(float(m) for m in np.atleast_1d(marks))
        if probs is None:
            probs = (1.0 / len(marks),) * len(marks)
        probs = tuple(float(p) for p in np.atleast_1d(probs))
        return cls("finite", (float(rate), marks, probs), float(epsilon))

    @classmethod
    def tempered_stable(
        cls, alpha: float, lambda_plus: float, lambda_minus: float, scale: float, epsilon: float
    ) -> "LevyModel":
        return cls("tempered_stable", (float(alpha), float(lambda_plus), float(lambda_minus), float(scale)), float(epsilon))

    # -- finite-activity helpers -------------------------------------------------

    @cached_property
    def atoms(self) -> tuple[np.ndarray, np.ndarray]:
        """(marks, masses) of a finite-activity measure after truncation."""
        if self.kind != "finite":
            raise TypeError("atoms are only defined for finite-activity models")
        rate, marks, probs = self.params
        marks = np.asarray(marks)
        masses = rate * np.asarray(probs)
        keep = np.abs(marks) >= self.epsilon
        return marks[keep], masses[keep]

    # -- tempered-stable helpers -------------------------------------------------

    def _side_density(self, lam: float):
        alpha, _, _, scale = self.params
        return lambda y: scale * np.exp(-lam * y) * y ** (-1.0 - alpha)

    def _side_quad(self, lam: float, power: int) -> float:
        dens = self._side_density(lam)
        eps = self.epsilon
        val, err = integrate.quad(lambda y: y**power * dens(y), eps, np.inf, epsabs=0.0, epsrel=1e-13, limit=200)
        if not np.isfinite(val):
            raise ValueError("divergent Lévy measure integral")
        return val

    def _side_second_moment(self, lam: float, lo: float, hi: float = np.inf) -> float:
        """Closed form of ``scale * int_lo^hi y^(1-alpha) exp(-lam y) dy``."""
        alpha, _, _, scale = self.params
        s = 2.0 - alpha
        upper = 0.0 if np.isinf(hi) else special.gammaincc(s, lam * hi)
        return scale * lam ** (alpha - 2.0) * special.gamma(s) * (special.gammaincc(s, lam * lo) - upper)

    @cached_property
    def _side_masses(self) -> tuple[float, float]:
        if self.kind == "finite":
            marks, masses = self.atoms
            return float(masses[marks > 0].sum()), float(masses[marks < 0].sum())
        _, lp, lm, _ = self.params
        return self._side_quad(lp, 0), self._side_quad(lm, 0)

    # -- moments -------------------------------------------------------------------

    @cached_property
    def intensity(self) -> float:
        """Total mass ``nu_eps(R_0)``: expected jumps per unit volume."""
        return float(sum(self._side_masses))

    @cached_property
    def mean_jump(self) -> float:
        """``int y nu_eps(dy)``: compensator per unit volume."""
        if self.kind == "finite":
            marks, masses = self.atoms
            return float(np.dot(marks, masses))
        _, lp, lm, _ = self.params
        return self._side_quad(lp, 1) - self._side_quad(lm, 1)

    def second_moment(self) -> float:
        """``m2 = int y^2 nu_eps(dy)``."""
        if self.kind == "finite":
            marks, masses = self.atoms
            m2 = float(np.dot(marks**2, masses))
        else:
            _, lp, lm, _ = self.params
            m2 = self._side_second_moment(lp, self.epsilon) + self._side_second_moment(lm, self.epsilon)
        if not np.isfinite(m2):
            raise ValueError("divergent second moment")
        return float(m2)

    def levy_exponent(self, theta: float) -> complex:
        """``psi(theta) = int (exp(i theta y) - 1 - i theta y) nu_eps(dy)``."""
        theta = float(theta)
        if theta == 0.0:
            return 0j
        if self.kind == "finite":
            marks, masses = self.atoms
            return complex(np.sum(masses * (np.exp(1j * theta * marks) - 1.0 - 1j * theta * marks)))
        _, lp, lm, _ = self.params
        re = im = 0.0
        for lam, sign in ((lp, 1.0), (lm, -1.0)):
            dens = self._side_density(lam)
            re += integrate.quad(lambda y: (np.cos(theta * y) - 1.0) * dens(y), self.epsilon, np.inf,
                                 epsabs=0.0, epsrel=1e-12, limit=400)[0]
            im += sign * integrate.quad(lambda y: (np.sin(theta * y) - theta * y) * dens(y), self.epsilon, np.inf,
                                        epsabs=0.0, epsrel=1e-12, limit=400)[0]
        return complex(re, im)

    # -- sampling ------------------------------------------------------------------

    def sample_marks(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw ``n`` i.i.d. marks from the normalized truncated measure."""
        if n == 0:
            return np.empty(0)
        if self.kind == "finite":
            marks, masses = self.atoms
            return marks[rng.choice(len(marks), size=n, p=masses / masses.sum())]
        plus, minus = self._side_masses
        positive = rng.random(n) < plus / (plus + minus)
        out = np.empty(n)
        _, lp, lm, _ = self.params
        out[positive] = self._sample_side(rng, lp, int(positive.sum()))
        out[~positive] = -self._sample_side(rng, lm, int((~positive).sum()))
        return out

    def _sample_side(self, rng: np.random.Generator, lam: float, n: int) -> np.ndarray:
        # Pareto(epsilon, alpha) proposal thinned by exp(-lam (y - epsilon)).
        alpha = self.params[0]
        eps = self.epsilon
        out = np.empty(0)
        while len(out) < n:
            m = max(16, 2 * (n - len(out)))
            y = eps * rng.random(m) ** (-1.0 / alpha)
            keep = rng.random(m) < np.exp(-lam * (y - eps))
            out = np.concatenate([out, y[keep]])
        return out[:n]


def second_moment(model: LevyModel) -> float:
    return model.second_moment()


def levy_exponent(model: LevyModel, theta: float) -> complex:
    return model.levy_exponent(theta)


@dataclass(frozen=True, eq=False)
class NoiseRealization:
    """One path of the compensated Poisson random measure on a grid box.

    ``increments[cell] = sum of marks of jumps in the cell - drift * cell volume``.
    Linear combinations of realizations on the same grid are supported; the
    result keeps the jump list (with scaled marks) and the combined drift.
    """

    grid: GridSpec
    increments: np.ndarray
    locations: np.ndarray
    marks: np.ndarray
    drift: float
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_jumps(self) -> int:
        return len(self.marks)

    def region_sum(self, lower: Sequence[float], upper: Sequence[float]) -> float:
        """``X(S)`` for a box ``S`` that is a union of grid cells."""
        mask = np.ones(self.grid.shape, dtype=bool)
        for k in range(self.grid.dim):
            c = self.grid.centers(k)
            sel = (c > lower[k]) & (c < upper[k])
            shape = [1] * self.grid.dim
            shape[k] = len(c)
            mask &= sel.reshape(shape)
        return float(self.increments[mask].sum())

    def integrate(self, func) -> float:
        """Pathwise ``int f(s) dX(s) = sum_jumps f(s_j) y_j - drift * int_box f``.

        ``func`` maps an ``(n, d)`` array of points to values; the compensator
        integral uses the cell-center rule on the grid.
        """
        pts = self.locations
        jump_part = float(np.dot(np.asarray(func(pts), dtype=float), self.marks)) if len(pts) else 0.0
        centers = np.stack([m.ravel() for m in self.grid.mesh()], axis=1)
        comp = float(np.sum(func(centers))) * self.grid.cell_volume
        return jump_part - self.drift * comp

    def scaled(self, a: float) -> "NoiseRealization":
        return NoiseRealization(self.grid, a * self.increments, self.locations, a * self.marks, a * self.drift)

    def __add__(self, other: "NoiseRealization") -> "NoiseRealization":
        if self.grid != other.grid:
            raise ValueError("noise realizations live on different grids")
        return NoiseRealization(
            self.grid,
            self.increments + other.increments,
            np.concatenate([self.locations, other.locations]),
            np.concatenate([self.marks, other.marks]),
            self.drift + other.drift,
        )


def zero_noise(grid: GridSpec) -> NoiseRealization:
    return NoiseRealization(grid, np.zeros(grid.shape), np.empty((0, grid.dim)), np.empty(0), 0.0)


def sample_noise_grid(model: LevyModel, grid: GridSpec, seed: int) -> NoiseRealization:
    """Sample the compensated jump measure on ``grid`` deterministically from ``seed``.

    Jumps form a Poisson point process on box x marks with intensity
    ``Lebesgue x nu_eps``; locations are uniform and assigned to half-open cells.
    """
    expected = model.intensity * grid.volume
    if not np.isfinite(expected) or expected > MAX_EXPECTED_JUMPS:
        raise ValueError(f"intensity too large: {expected:.3g} expected jumps")
    rng = np.random.default_rng(seed)
    n = int(rng.poisson(expected)) if expected > 0 else 0
    lo = np.asarray(grid.lower)
    locations = lo + rng.random((n, grid.dim)) * (np.asarray(grid.upper) - lo)
    marks = model.sample_marks(rng, n)
    idx = grid.cell_index(locations)
    sums = np.bincount(idx, weights=marks, minlength=grid.n_cells).reshape(grid.shape)
    increments = sums - grid.cell_volume * model.mean_jump
    return NoiseRealization(grid, increments, locations, marks, model.mean_jump, seed)
