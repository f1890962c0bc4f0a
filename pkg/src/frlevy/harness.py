"""Monte-Carlo estimators and validation checks against closed-form identities.

Every replica draws its randomness from ``derive_seed(master_seed, index)``, so
a report is reproducible from its ``(replicas, master_seed)`` metadata.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .levy import LevyModel, derive_seed, sample_noise_grid
from .grid import GridFunction, GridSpec

SIGMAS = 3.0
ROUNDOFF_FLOOR = 1e-12


class InsufficientDataError(ValueError):
    pass


def mc_values(statistic: Callable[[int], float], replicas: int, master_seed: int) -> np.ndarray:
    """``statistic(seed)`` for ``replicas`` derived seeds; non-finite values raise naming the seed."""
    if replicas < 2:
        raise ValueError("need at least two replicas")
    out = np.empty(replicas)
    for i in range(replicas):
        seed = derive_seed(master_seed, i)
        v = float(statistic(seed))
        if not math.isfinite(v):
            raise ValueError(f"non-finite statistic {v} for replica {i} (seed {seed})")
        out[i] = v
    return out


def mean_stderr(values: np.ndarray) -> tuple[float, float]:
    values = np.asarray(values, dtype=float)
    if np.all(values == values[0]):
        return float(values[0]), 0.0
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(len(values)))


def variance_stderr(values: np.ndarray, mean: float | None = None) -> tuple[float, float]:
    """Sample variance and its standard error from the spread of squared deviations.

    With a known ``mean`` the deviations are taken from it (no degrees of
    freedom lost); otherwise from the sample mean with Bessel's correction.
    """
    x = np.asarray(values, dtype=float)
    n = len(x)
    if mean is None:
        dev2 = (x - x.mean()) ** 2
        var = float(dev2.sum() / (n - 1))
    else:
        dev2 = (x - mean) ** 2
        var = float(dev2.mean())
    se = float(dev2.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return var, se


def mc_estimate(statistic: Callable[[int], float], replicas: int, master_seed: int) -> tuple[float, float]:
    """Mean and standard error of ``statistic`` over independent derived seeds."""
    return mean_stderr(mc_values(statistic, replicas, master_seed))


@dataclass(frozen=True)
class ValidationReport:
    """Estimates against oracles with per-component bounds; ``passed`` iff all are within bound."""

    name: str
    anchor: str
    labels: tuple[str, ...]
    estimates: tuple[float, ...]
    oracles: tuple[float, ...]
    bounds: tuple[float, ...]
    replicas: int
    master_seed: int
    criterion: str = "3 sigma"
    detail: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(abs(e - o) <= b for e, o, b in zip(self.estimates, self.oracles, self.bounds))

    def rows(self) -> list[dict]:
        return [
            {
                "check": self.name,
                "component": lab,
                "estimate": e,
                "oracle": o,
                "bound": b,
                "pass": abs(e - o) <= b,
                "replicas": self.replicas,
                "master_seed": self.master_seed,
            }
            for lab, e, o, b in zip(self.labels, self.estimates, self.oracles, self.bounds)
        ]

    def summary(self) -> str:
        worst = max((abs(e - o) / b if b > 0 else (0.0 if e == o else np.inf))
                    for e, o, b in zip(self.estimates, self.oracles, self.bounds))
        return f"{'PASS' if self.passed else 'FAIL'} {self.name} ({self.criterion}; worst |err|/bound = {worst:.3g})"


def mc_report(name: str, anchor: str, labels, estimates, oracles, stderrs, replicas: int, seed: int, **detail) -> ValidationReport:
    # roundoff floor: components that are zero in exact arithmetic (e.g. sin(pi * integer))
    bounds = tuple(SIGMAS * float(s) + ROUNDOFF_FLOOR for s in stderrs)
    return ValidationReport(name, anchor, tuple(labels), tuple(map(float, estimates)), tuple(map(float, oracles)),
                            bounds, replicas, seed, "3 sigma", dict(detail))


# -- noise-level checks ------------------------------------------------------------


def noise_functional(model: LevyModel, f: GridFunction, seed: int) -> float:
    """``X(f) = sum_cells f * increments`` for piecewise-constant ``f`` on its own grid."""
    noise = sample_noise_grid(model, f.grid, seed)
    return float(np.sum(f.values * noise.increments))


def validate_isometry(model: LevyModel, f: GridFunction, replicas: int, seed: int) -> ValidationReport:
    """Sample variance of ``X(f)`` against ``m2 ||f||^2``."""
    vals = mc_values(lambda s: noise_functional(model, f, s), replicas, seed)
    var, se = variance_stderr(vals, mean=0.0)
    oracle = model.second_moment() * f.l2_norm() ** 2
    return mc_report("isometry", "isometry of the first chaos", ["variance"], [var], [oracle], [se], replicas, seed)


def empirical_char(samples: np.ndarray, theta: float) -> complex:
    """``mean exp(i theta X)`` over ``samples``."""
    z = np.exp(1j * theta * np.asarray(samples, dtype=float))
    return complex(z.mean())


def validate_char(
    model: LevyModel,
    region: tuple[Sequence[float], Sequence[float]],
    thetas: Sequence[float],
    replicas: int,
    seed: int,
) -> ValidationReport:
    """Empirical ``E exp(i theta X(S))`` against ``exp(Leb(S) psi(theta))``, real and imaginary parts."""
    lower, upper = (tuple(np.atleast_1d(v).astype(float)) for v in region)
    grid = GridSpec(lower, upper, (1,) * len(lower))
    samples = mc_values(lambda s: float(sample_noise_grid(model, grid, s).increments.sum()), replicas, seed)
    labels, est, orc, ses = [], [], [], []
    for th in thetas:
        z = np.exp(1j * th * samples)
        target = np.exp(grid.volume * model.levy_exponent(th))
        for part, vals, ref in (("re", z.real, target.real), ("im", z.imag, target.imag)):
            m, s = mean_stderr(vals)
            labels.append(f"{part}(theta={th:g})")
            est.append(m)
            orc.append(ref)
            ses.append(s)
    return mc_report("characteristic functional", "characteristic functional of the noise", labels, est, orc, ses,
                     replicas, seed)


# -- Picard decay ---------------------------------------------------------------------


@dataclass(frozen=True)
class PicardFit:
    A: float
    C: float
    superlinear: bool
    degenerate: bool
    mean_second_difference: float


def picard_decay_report(report, t_end: float | None = None, threshold: float = 0.02) -> PicardFit:
    """Fit ``log D_j = log A + j log(C T) - log j!`` to the difference sequence.

    ``superlinear`` means the second differences of ``log D_j`` average below
    ``-threshold``; a sequence with no variation is flagged ``degenerate``.
    """
    diffs = getattr(report, "differences", report)
    T = getattr(report, "t_end", None) if t_end is None else t_end
    if T is None or T <= 0:
        raise ValueError("a positive time horizon is needed for the fit")
    d = np.asarray(diffs, dtype=float)
    d = d[d > 0]
    if len(d) < 4:
        raise InsufficientDataError(f"need at least 4 positive differences, got {len(d)}")
    j = np.arange(1, len(d) + 1)
    y = np.log(d)
    degenerate = bool(np.ptp(y) <= 1e-12 * max(1.0, np.max(np.abs(y))))
    lg = np.array([math.lgamma(k + 1.0) for k in j])
    a, b = np.linalg.lstsq(np.stack([np.ones_like(y), j], axis=1), y + lg, rcond=None)[0]
    second = float(np.mean(np.diff(y, 2)))
    return PicardFit(float(np.exp(a)), float(np.exp(b) / T), (not degenerate) and second < -threshold, degenerate, second)


# -- default suite ----------------------------------------------------------------------

DEFAULT_REPLICAS = 10_000
DEFAULT_SEED = 20240607
CHAR_THETAS = (0.3, 0.7, 1.0, 2.0, math.pi)


def _unit_model() -> LevyModel:
    return LevyModel.finite_activity(2.0, [1.0])


def check_isometry(replicas: int, seed: int) -> ValidationReport:
    f = GridFunction.indicator(GridSpec((0.0,), (1.0,), (1,)), (0.0,), (1.0,))
    return validate_isometry(_unit_model(), f, replicas, seed)


def check_char(replicas: int, seed: int) -> ValidationReport:
    return validate_char(_unit_model(), ((0.0,), (1.0,)), CHAR_THETAS, replicas, seed)


def _random_instances(seed: int, trials: int, cells: int = 4):
    from .chaos import ChaosProcess, ChaosVector, DiscreteU, symmetrize

    rng = np.random.default_rng(seed)
    for _ in range(trials):
        n_cells = int(rng.integers(1, cells + 1))
        marks = rng.choice([-1.5, -0.5, 0.5, 1.0, 2.0], size=int(rng.integers(1, 3)), replace=False)
        space = DiscreteU(GridSpec((0.0,), (1.0,), (n_cells,)), marks, rng.uniform(0.2, 2.0, len(marks)), max_order=4)
        K = space.size

        def vec(order):
            return ChaosVector(space, tuple(symmetrize(rng.normal(size=(K,) * n)) for n in range(order + 1)))

        proc = ChaosProcess(space, tuple(rng.normal(size=(K,) * n + (K,)) for n in range(int(rng.integers(1, 3)))))
        xi = rng.normal(scale=0.7, size=K)
        yield space, vec(int(rng.integers(0, 3))), vec(int(rng.integers(0, 3))), proc, xi


def check_wick(seed: int, trials: int = 100) -> ValidationReport:
    from .chaos import s_transform, wick_product

    worst = 0.0
    for _, F, G, _, xi in _random_instances(seed, trials):
        err = abs(s_transform(wick_product(F, G), xi) - s_transform(F, xi) * s_transform(G, xi))
        worst = max(worst, err)
    return ValidationReport("wick homomorphism", "S-transform of Wick products", ("max error",), (worst,), (0.0,),
                            (1e-10,), trials, seed, "abs 1e-10")


def check_skorohod(seed: int, trials: int = 100) -> ValidationReport:
    from .chaos import s_transform, skorohod_delta, skorohod_s_transform_rhs

    worst = 0.0
    for _, _, _, proc, xi in _random_instances(seed + 1, trials):
        err = abs(s_transform(skorohod_delta(proc), xi) - skorohod_s_transform_rhs(proc, xi))
        worst = max(worst, err)
    return ValidationReport("skorohod identity", "S-transform of the Skorohod integral", ("max error",), (worst,),
                            (0.0,), (1e-12,), trials, seed, "abs 1e-12")


IBP_LEVELS = (64, 128, 256, 512)


def _ibp_pair():
    return (lambda x: np.exp(-x**2) * np.cos(2 * x)), (lambda x: 1.0 / (1.0 + x**2) - 0.2)


def check_integration_by_parts(cells: int = 512) -> ValidationReport:
    """Pointwise-route residual at ``cells`` plus its refinement trend and the discrete adjoint residual."""
    from .fracops import check_integration_by_parts as discrete_ibp
    from .fracops import integration_by_parts_residual

    f, g = _ibp_pair()
    levels = sorted(set(IBP_LEVELS) | {cells})
    grids = {n: GridSpec((-2.0,), (2.0,), (n,)) for n in levels}
    trend = [integration_by_parts_residual(f, g, grids[n], 0.3) for n in levels]
    decreasing = bool(all(b < a for a, b in zip(trend, trend[1:])))
    res = trend[levels.index(cells)]
    grid = grids[cells]
    adj = discrete_ibp(GridFunction.from_callable(grid, f, average=4), GridFunction.from_callable(grid, g, average=4), 0.3)
    return ValidationReport("integration by parts", "adjointness of the fractional integrals",
                            ("residual", "discrete adjoint residual", "decreasing under refinement"),
                            (res, adj, float(decreasing)), (0.0, 0.0, 1.0), (1e-6, 1e-12, 0.0), 0, 0, "abs 1e-6",
                            {"cells": cells, "levels": levels, "residuals": trend})


FIELD_BETA, FIELD_T, FIELD_PAST = 0.3, 1.0, 50.0


def check_field_covariance(replicas: int, seed: int) -> ValidationReport:
    from .field import covariance_oracle, field_from_noise

    model = _unit_model()
    grid = GridSpec((-FIELD_PAST,), (FIELD_T,), (64,))
    vals = mc_values(lambda s: float(field_from_noise(sample_noise_grid(model, grid, s), [FIELD_BETA], [[FIELD_T]])[0]),
                     replicas, seed)
    var, se = variance_stderr(vals, mean=0.0)
    oracle = covariance_oracle(model, [FIELD_BETA], [FIELD_T], [FIELD_T], T_past=FIELD_PAST, tail_tol=None)
    return mc_report("field covariance", "isometry-derived field covariance", ["Var X_1"], [var], [oracle], [se],
                     replicas, seed, T_past=FIELD_PAST)


ANISO_BETA, ANISO_PAST, ANISO_LAG = (0.1, 0.4), 12.0, 0.5


def check_anisotropy(replicas: int, seed: int) -> ValidationReport:
    """Ratio of increment variances along the two axes of a d=2 field, delta-method 3 sigma."""
    from .field import covariance_oracle, field_from_noise

    model = _unit_model()
    base = (1.0, 1.0)
    pts = [base, (1.0 + ANISO_LAG, 1.0), (1.0, 1.0 + ANISO_LAG)]
    grid = GridSpec((-ANISO_PAST,) * 2, (2.0, 2.0), (8, 8))
    X = np.empty((replicas, 3))
    for i in range(replicas):
        X[i] = field_from_noise(sample_noise_grid(model, grid, derive_seed(seed, i)), ANISO_BETA, pts)
    a2, b2 = (X[:, 1] - X[:, 0]) ** 2, (X[:, 2] - X[:, 0]) ** 2

    def inc_var(p):
        c = lambda u, v: covariance_oracle(model, ANISO_BETA, u, v, T_past=ANISO_PAST)  # noqa: E731
        return c(p, p) - 2 * c(base, p) + c(base, base)

    oracle = inc_var(pts[1]) / inc_var(pts[2])
    ma, mb = a2.mean(), b2.mean()
    ratio = ma / mb
    cov = np.cov(a2, b2)
    se = ratio * math.sqrt(max(0.0, cov[0, 0] / ma**2 + cov[1, 1] / mb**2 - 2 * cov[0, 1] / (ma * mb)) / replicas)
    return mc_report("anisotropy", "axis-dependent memory of the field", ["increment variance ratio"], [ratio],
                     [oracle], [se], replicas, seed, beta=list(ANISO_BETA), lag=ANISO_LAG)


def poisson_domain():
    from .spde import DomainSpec

    return DomainSpec.box(0.0, 1.0, 64, past=10.0)


def check_poisson_variance(replicas: int, seed: int) -> ValidationReport:
    from .spde import poisson_variance_oracle, solve_poisson

    model = _unit_model()
    dom = poisson_domain()
    grid = dom.noise_grid(with_time=False)
    residuals = []

    def stat(s):
        sol = solve_poisson(sample_noise_grid(model, grid, s), [0.3], dom)
        residuals.append(sol.meta["residual"])
        return sol.at([0.5])

    vals = mc_values(stat, replicas, seed)
    var, se = variance_stderr(vals, mean=0.0)
    oracle = poisson_variance_oracle(model, 0.3, 0.5, dom.past)
    rep = mc_report("poisson variance", "first-chaos representation of the Poisson solution", ["Var U(0.5)"],
                    [var], [oracle], [se], replicas, seed, max_residual=max(residuals))
    return rep


def heat_domain():
    from .spde import DomainSpec

    return DomainSpec.box(0.0, 1.0, 32, t_end=1.0, time_steps=100, past=5.0)


def check_heat_variance(replicas: int, seed: int) -> ValidationReport:
    from .spde import heat_variance_oracle, solve_heat

    model = _unit_model()
    dom = heat_domain()
    grid = dom.noise_grid(with_time=True)
    vals = mc_values(lambda s: solve_heat(sample_noise_grid(model, grid, s), 0.3, [0.3], dom).at([0.5], 1.0),
                     replicas, seed)
    var, se = variance_stderr(vals, mean=0.0)
    oracle = heat_variance_oracle(model, 0.3, 0.3, 1.0, 0.5, dom.past)
    return mc_report("heat variance", "first-chaos variance of the heat solution", ["Var U(1, 0.5)"], [var],
                     [oracle], [se], replicas, seed)


def picard_setup():
    from .spde import DomainSpec, Nonlinearity

    dom = DomainSpec.box(-4.0, 4.0, 64, t_end=0.5, time_steps=50, past=2.0)
    return Nonlinearity(np.sin, 1.0, 1.0), (lambda x: np.exp(-x**2)), dom


def check_picard(seed: int) -> ValidationReport:
    from .spde import solve_quasilinear

    f, U0, dom = picard_setup()
    _, rep = solve_quasilinear(f, U0, _unit_model(), 0.3, [0.3], dom, tol=1e-8, max_iter=15, seed=seed)
    fit = picard_decay_report(rep)
    d = np.asarray(rep.differences)
    decreasing = bool(np.all(np.diff(d[1:]) < 0))
    ok = float(fit.superlinear and decreasing and rep.converged)
    return ValidationReport("picard decay", "factorial decay of Picard differences", ("superlinear and decreasing",),
                            (ok,), (1.0,), (0.0,), 1, seed, "exact",
                            {"differences": list(rep.differences), "A": fit.A, "C": fit.C})


CONTRAST_LEVELS = (8, 16, 32)


def contrast_domain(cells: int, t_end: float = 0.1, past: float = 1.0, dim: int = 3):
    """Unit cube refined with ``dt ~ h^2``, for the finite/infinite variance contrast."""
    from .spde import DomainSpec

    steps = int(math.ceil(t_end * cells**2))
    return DomainSpec.box(0.0, 1.0, cells, dim=dim, t_end=t_end, time_steps=steps, past=past)


def heat_refinement_variances(beta: float, levels: Sequence[int] = CONTRAST_LEVELS, dim: int = 3) -> list[float]:
    """Exact discrete ``Var U_h(t_end, centre)`` with every order equal to ``beta``, per refinement level."""
    from .spde import discrete_heat_variance

    centre = (0.5,) * dim
    return [discrete_heat_variance(_unit_model(), beta, (beta,) * dim, contrast_domain(n, dim=dim), centre)
            for n in levels]


SUITE = ("isometry", "char", "wick", "skorohod", "ibp", "field", "poisson", "heat", "picard")


def run_validation_suite(master_seed: int = DEFAULT_SEED, replicas: int = DEFAULT_REPLICAS,
                         checks: Sequence[str] = SUITE) -> list[ValidationReport]:
    """Run the named checks; each Monte-Carlo check draws from its own derived master seed."""
    unknown = set(checks) - set(SUITE)
    if unknown:
        raise ValueError(f"unknown checks: {sorted(unknown)}")
    runners = {
        "isometry": lambda s: check_isometry(replicas, s),
        "char": lambda s: check_char(replicas, s),
        "wick": check_wick,
        "skorohod": check_skorohod,
        "ibp": lambda s: check_integration_by_parts(),
        "field": lambda s: check_field_covariance(replicas, s),
        "poisson": lambda s: check_poisson_variance(replicas, s),
        "heat": lambda s: check_heat_variance(replicas, s),
        "picard": check_picard,
    }
    out = []
    for name in SUITE:
        if name in checks:
            sub = derive_seed(master_seed, 1_000_000 + SUITE.index(name)) % (2**63)
            out.append(runners[name](sub))
    return out


__all__ = [
    "SUITE",
    "run_validation_suite",
    "contrast_domain",
    "check_anisotropy",
    "heat_refinement_variances",
    "InsufficientDataError",
    "PicardFit",
    "ValidationReport",
    "empirical_char",
    "mc_estimate",
    "mc_report",
    "mc_values",
    "mean_stderr",
    "noise_functional",
    "picard_decay_report",
    "validate_char",
    "validate_isometry",
    "variance_stderr",
]
