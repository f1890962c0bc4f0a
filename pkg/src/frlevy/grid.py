"""Rectangular cell lattices and piecewise-constant functions on them."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

MAX_CELLS = 50_000_000


@dataclass(frozen=True)
class GridSpec:
    """Cell-aligned box ``[lower, upper]`` split into ``cells`` equal cells per axis.

    Cells are half-open ``[low, high)`` when assigning points.
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    cells: tuple[int, ...]

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        cells = tuple(int(v) for v in np.atleast_1d(self.cells))
        if not (len(lower) == len(upper) == len(cells)) or len(lower) < 1:
            raise ValueError("lower, upper and cells must have the same length >= 1")
        if any(not np.isfinite(a) or not np.isfinite(b) or a >= b for a, b in zip(lower, upper)):
            raise ValueError(f"grid requires lower < upper componentwise, got {lower}, {upper}")
        if any(n < 1 for n in cells):
            raise ValueError(f"cells per axis must be >= 1, got {cells}")
        if int(np.prod(cells, dtype=np.float64)) > MAX_CELLS:
            raise ValueError(f"grid with {cells} cells is too large")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "cells", cells)

    @classmethod
    def uniform(cls, lower: float, upper: float, cells: int, dim: int = 1) -> "GridSpec":
        return cls((lower,) * dim, (upper,) * dim, (cells,) * dim)

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cells))

    @property
    def widths(self) -> np.ndarray:
        return (np.asarray(self.upper) - np.asarray(self.lower)) / np.asarray(self.cells)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.widths))

    @property
    def volume(self) -> float:
        return float(np.prod(np.asarray(self.upper) - np.asarray(self.lower)))

    def edges(self, axis: int) -> np.ndarray:
        return np.linspace(self.lower[axis], self.upper[axis], self.cells[axis] + 1)

    def centers(self, axis: int) -> np.ndarray:
        e = self.edges(axis)
        return 0.5 * (e[1:] + e[:-1])

    def mesh(self) -> list[np.ndarray]:
        """Cell-center coordinates broadcast to the grid shape, one array per axis."""
        return np.meshgrid(*(self.centers(k) for k in range(self.dim)), indexing="ij")

    def cell_index(self, points: np.ndarray) -> np.ndarray:
        """Flat cell index for each point (rows of ``points``); points outside get -1."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.dim:
            raise ValueError(f"points have dimension {pts.shape[1]}, grid has {self.dim}")
        lo = np.asarray(self.lower)
        idx = np.floor((pts - lo) / self.widths).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < np.asarray(self.cells)) & (pts >= lo), axis=1)
        inside &= np.all(pts < np.asarray(self.upper), axis=1)
        flat = np.full(len(pts), -1, dtype=np.int64)
        if inside.any():
            flat[inside] = np.ravel_multi_index(tuple(idx[inside].T), self.cells)
        return flat

    def contains(self, other: "GridSpec") -> bool:
        return all(a <= c and d <= b for a, b, c, d in zip(self.lower, self.upper, other.lower, other.upper))


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Cell-averaged values of a real function on a grid.

    ``flags`` carries diagnostics attached by operators (e.g. ``"truncated tail"``).
    """

    grid: GridSpec
    values: np.ndarray
    flags: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise ValueError(f"values shape {values.shape} does not match grid shape {self.grid.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid function values must be finite")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_callable(cls, grid: GridSpec, func, average: int = 1) -> "GridFunction":
        """Sample ``func(*coords)`` on the grid.

        With ``average > 1`` each cell value is the Gauss-Legendre mean over
        ``average`` points per axis, approximating the true cell average.
        """
        if average <= 1:
            return cls(grid, np.asarray(func(*grid.mesh()), dtype=float) * np.ones(grid.shape))
        nodes, weights = np.polynomial.legendre.leggauss(average)
        axes = []
        for k in range(grid.dim):
            e = grid.edges(k)
            h = grid.widths[k]
            pts = 0.5 * (e[:-1, None] + e[1:, None]) + 0.5 * h * nodes[None, :]
            axes.append(pts.ravel())
        vals = np.asarray(func(*np.meshgrid(*axes, indexing="ij")), dtype=float)
        vals = vals * np.ones([grid.cells[k] * average for k in range(grid.dim)])
        w = 0.5 * weights
        for k in range(grid.dim):
            shape = vals.shape
            vals = vals.reshape(shape[:k] + (grid.cells[k], average) + shape[k + 1:])
            vals = np.tensordot(vals, w, axes=([k + 1], [0]))
        return cls(grid, vals)

    @classmethod
    def indicator(cls, grid: GridSpec, lower: Sequence[float], upper: Sequence[float]) -> "GridFunction":
        """Exact cell averages of the indicator of the box ``[lower, upper]``."""
        vals = np.ones(grid.shape)
        for k in range(grid.dim):
            e = grid.edges(k)
            overlap = np.clip(np.minimum(e[1:], upper[k]) - np.maximum(e[:-1], lower[k]), 0.0, None)
            frac = overlap / grid.widths[k]
            shape = [1] * grid.dim
            shape[k] = grid.cells[k]
            vals = vals * frac.reshape(shape)
        return cls(grid, vals)

    def integral(self) -> float:
        return float(self.values.sum() * self.grid.cell_volume)

    def l2_norm(self) -> float:
        return float(np.sqrt((self.values**2).sum() * self.grid.cell_volume))

    def __add__(self, other: "GridFunction") -> "GridFunction":
        _check_same_grid(self, other)
        return GridFunction(self.grid, self.values + other.values)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        _check_same_grid(self, other)
        return GridFunction(self.grid, self.values - other.values)

    def __mul__(self, scalar: float) -> "GridFunction":
        return GridFunction(self.grid, self.values * float(scalar))

    __rmul__ = __mul__


def _check_same_grid(a: GridFunction, b: GridFunction) -> None:
    if a.grid != b.grid:
        raise ValueError("grid functions live on different grids")
