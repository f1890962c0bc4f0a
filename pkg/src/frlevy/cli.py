"""Command-line front end: ``frlevy <command> --config <path> [--seed N] [--replicas N] [--out DIR] [--plots]``.

Exit codes: 0 success, 1 validation failure or non-convergence, 2 parameter error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import warnings
from pathlib import Path
from typing import Sequence

import numpy as np

from . import harness
from .config import COMMANDS, ConfigError, RunConfig, parse_config
from .field import check_tail, field_from_noise
from .grid import GridSpec
from .levy import derive_seed, sample_noise_grid
from .spde import (
    DomainSpec,
    Nonlinearity,
    PicardDivergenceError,
    solve_heat,
    solve_poisson,
    solve_quasilinear,
)

SEED_ENV = "FRLEVY_SEED"
EXIT_OK, EXIT_FAIL, EXIT_PARAM = 0, 1, 2


class ParameterError(ValueError):
    pass


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def render_csv(header: str, columns: Sequence[str], rows) -> str:
    lines = [header, ",".join(columns)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def resolve_seed(cli_seed: int | None, cfg: RunConfig) -> int:
    """``--seed`` beats the config's ``seed``, which beats ``$FRLEVY_SEED``; default otherwise."""
    if cli_seed is not None:
        return cli_seed
    if cfg["seed"] is not None:
        return cfg["seed"]
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            seed = int(env)
        except ValueError:
            raise ParameterError(f"{SEED_ENV}={env!r} is not an integer") from None
        if seed < 0:
            raise ParameterError(f"{SEED_ENV} must be >= 0")
        return seed
    return harness.DEFAULT_SEED


# -- builders ----------------------------------------------------------------------------


def _per_axis(values, d: int):
    return tuple(values) * d if len(values) == 1 else tuple(values)


def build_domain(cfg: RunConfig) -> DomainSpec:
    d = cfg.dim
    try:
        return DomainSpec(
            _per_axis(cfg["domain.lower"], d),
            _per_axis(cfg["domain.upper"], d),
            _per_axis(cfg["domain.cells"], d),
            t_end=cfg["domain.t_end"],
            time_steps=cfg["domain.time_steps"],
            past=cfg["domain.past"],
            scheme=cfg["domain.scheme"],
        )
    except ValueError as exc:
        raise ParameterError(f"domain: {exc}") from None


def build_nonlinearity(cfg: RunConfig) -> Nonlinearity:
    kind = cfg["quasilinear.nonlinearity"]
    c = cfg["quasilinear.constant"]
    funcs = {
        "zero": lambda x: np.zeros_like(x),
        "constant": lambda x: np.full_like(x, c),
        "sin": np.sin,
        "tanh": np.tanh,
        "linear": lambda x: c * x,
    }
    return Nonlinearity(funcs[kind], cfg["quasilinear.lipschitz"], cfg["quasilinear.growth"])


def build_initial(cfg: RunConfig, domain: DomainSpec):
    kind = cfg["quasilinear.initial"]
    if kind == "zero":
        return None
    if kind == "gaussian":
        center = 0.5 * (np.asarray(domain.lower) + np.asarray(domain.upper))
        return lambda *x: np.exp(-sum((xk - c) ** 2 for xk, c in zip(x, center)))
    return lambda *x: np.prod(
        [np.sin(np.pi * (xk - lo) / L) for xk, lo, L in zip(x, domain.lower, domain.lengths)], axis=0
    )


# -- commands ------------------------------------------------------------------------------


def _ensemble(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mean = samples.mean(axis=0)
    var = samples.var(axis=0, ddof=1)
    return mean, var, np.sqrt(var / len(samples))


def _rows_with_stats(coords: list[np.ndarray], samples: np.ndarray) -> tuple[list[str], list]:
    if len(samples) == 1:
        return ["value"], [list(c) + [v] for c, v in zip(zip(*coords), samples[0].ravel())]
    mean, var, se = _ensemble(samples)
    rows = [list(c) + [m, v, s] for c, m, v, s in zip(zip(*coords), mean.ravel(), var.ravel(), se.ravel())]
    return ["value", "variance", "stderr"], rows


def cmd_simulate_field(cfg: RunConfig, seed: int, replicas: int) -> dict[str, tuple]:
    model = cfg.model()
    beta = cfg["fractional.beta"]
    pts = np.asarray(cfg["field.points"], dtype=float)
    past = cfg["field.past"]
    if np.any(pts < 0):
        raise ParameterError("field.points: coordinates must be >= 0")
    tol = cfg["field.tail_tol"] or None
    for p in pts:
        try:
            check_tail(beta, p, past, tol)
        except ValueError as exc:
            raise ParameterError(f"field.past: {exc}") from None
    d = len(beta)
    upper = tuple(max(1e-12, float(pts[:, k].max())) for k in range(d))
    grid = GridSpec((-past,) * d, upper, tuple(max(1, int(np.ceil(u + past))) for u in upper))
    samples = np.stack([field_from_noise(sample_noise_grid(model, grid, derive_seed(seed, i)), beta, pts)
                        for i in range(replicas)])
    coords = [pts[:, k] for k in range(d)]
    stat_cols, rows = _rows_with_stats(coords, samples)
    return {"field.csv": ([f"t{k + 1}" for k in range(d)] + stat_cols, rows)}


def _noise_or_none(cfg: RunConfig, domain: DomainSpec, with_time: bool, seed: int):
    if not cfg["forcing.noise"]:
        return None
    return sample_noise_grid(cfg.model(), domain.noise_grid(with_time), seed)


def cmd_solve_poisson(cfg: RunConfig, seed: int, replicas: int) -> dict[str, tuple]:
    domain = build_domain(cfg)
    beta = cfg["fractional.beta"]
    forcing = cfg["forcing.constant"] or None
    sols = [solve_poisson(_noise_or_none(cfg, domain, False, derive_seed(seed, i)), beta, domain, forcing)
            for i in range(replicas)]
    samples = np.stack([s.values for s in sols])
    mesh = np.meshgrid(*sols[0].axes, indexing="ij")
    stat_cols, rows = _rows_with_stats([m.ravel() for m in mesh], samples.reshape(replicas, -1))
    cols = [f"x{k + 1}" for k in range(domain.dim)] + stat_cols
    return {"poisson.csv": (cols, rows)}


def _time_rows(cfg: RunConfig, domain: DomainSpec, times, axes, samples: np.ndarray):
    stride = cfg["output.time_stride"]
    keep = np.unique(np.r_[np.arange(0, len(times), stride), len(times) - 1])
    mesh = np.meshgrid(times[keep], *axes, indexing="ij")
    sub = samples[:, keep]
    stat_cols, rows = _rows_with_stats([m.ravel() for m in mesh], sub.reshape(len(samples), -1))
    return ["t"] + [f"x{k + 1}" for k in range(domain.dim)] + stat_cols, rows


def cmd_solve_heat(cfg: RunConfig, seed: int, replicas: int) -> dict[str, tuple]:
    domain = build_domain(cfg)
    forcing = cfg["forcing.constant"] or None
    sols = [solve_heat(_noise_or_none(cfg, domain, True, derive_seed(seed, i)), cfg["fractional.beta0"],
                       cfg["fractional.beta"], domain, forcing) for i in range(replicas)]
    samples = np.stack([s.values for s in sols])
    return {"heat.csv": _time_rows(cfg, domain, sols[0].times, sols[0].axes, samples)}


def cmd_solve_quasilinear(cfg: RunConfig, seed: int, replicas: int) -> dict[str, tuple]:
    if replicas != 1:
        raise ParameterError("replicas: solve-quasilinear runs a single realization")
    domain = build_domain(cfg)
    f = build_nonlinearity(cfg)
    noise = _noise_or_none(cfg, domain, True, derive_seed(seed, 0))
    if noise is None:
        from .levy import zero_noise

        noise = zero_noise(domain.noise_grid(with_time=True))
    try:
        with warnings.catch_warnings():
            # a violated picard_condition was already reported at parse time
            warnings.simplefilter("ignore", UserWarning)
            sol, rep = _quasilinear(cfg, domain, f, noise)
    except ValueError as exc:
        raise ParameterError(f"quasilinear: {exc}") from None
    out = {"quasilinear.csv": _time_rows(cfg, domain, sol.times, sol.axes, sol.values[None])}
    out["picard.csv"] = (["iteration", "difference"], [[j + 1, d] for j, d in enumerate(rep.differences)])
    return out


def _quasilinear(cfg: RunConfig, domain: DomainSpec, f: Nonlinearity, noise):
    return solve_quasilinear(
        f, build_initial(cfg, domain), cfg.model(), cfg["fractional.beta0"], cfg["fractional.beta"], domain,
        tol=cfg["quasilinear.tol"], max_iter=cfg["quasilinear.max_iter"], noise=noise,
        strict=cfg["quasilinear.strict"],
    )


def cmd_validate(cfg: RunConfig, seed: int, replicas: int) -> tuple[dict[str, tuple], list]:
    checks = cfg["validate.checks"] or harness.SUITE
    try:
        reports = harness.run_validation_suite(seed, replicas, checks)
    except ValueError as exc:
        raise ParameterError(f"validate.checks: {exc}") from None
    cols = ["check", "component", "estimate", "oracle", "bound", "pass", "replicas", "master_seed"]
    rows = [[r[c] for c in cols] for rep in reports for r in rep.rows()]
    return {"validation.csv": (cols, rows)}, reports


# -- plots -----------------------------------------------------------------------------------


def write_plots(outputs: dict[str, tuple], out: Path) -> list[Path]:
    """Line plots of one-dimensional outputs as SVG; higher-dimensional tables are skipped."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        warnings.warn("matplotlib is not installed; skipping plots", stacklevel=2)
        return []
    matplotlib.rcParams["svg.hashsalt"] = "frlevy"
    written = []
    for name, (cols, rows) in outputs.items():
        if not rows:
            continue
        arr = np.array([[float(v) if not isinstance(v, str) else np.nan for v in r] for r in rows])
        fig, ax = plt.subplots(figsize=(6, 4))
        if name == "validation.csv":
            ratio = np.abs(arr[:, 2] - arr[:, 3]) / np.where(arr[:, 4] > 0, arr[:, 4], 1.0)
            ax.bar(range(len(ratio)), ratio)
            ax.axhline(1.0, color="k", lw=0.8)
            ax.set_ylabel("|estimate - oracle| / bound")
        elif cols[0] == "t" and len(cols) >= 3 and cols[2] == "value":
            for t in np.unique(arr[:, 0])[:: max(1, len(np.unique(arr[:, 0])) // 6)]:
                sel = arr[:, 0] == t
                ax.plot(arr[sel, 1], arr[sel, 2], label=f"t={t:.3g}")
            ax.legend(fontsize=7)
            ax.set_xlabel("x1")
        elif cols[1] in ("value", "difference"):
            ax.plot(arr[:, 0], arr[:, 1], marker="." if name == "picard.csv" else None)
            if name == "picard.csv":
                ax.set_yscale("log")
            ax.set_xlabel(cols[0])
        else:
            plt.close(fig)
            continue
        path = out / (Path(name).stem + ".svg")
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(path)
    return written


# -- entry point ------------------------------------------------------------------------------


HANDLERS = {
    "simulate-field": cmd_simulate_field,
    "solve-poisson": cmd_solve_poisson,
    "solve-heat": cmd_solve_heat,
    "solve-quasilinear": cmd_solve_quasilinear,
}


def run(cfg: RunConfig, seed: int, replicas: int | None, out: Path, plots: bool = False) -> int:
    """Execute a parsed configuration, writing every output only after the whole run succeeded."""
    for w in cfg.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if replicas is None:
        explicit = cfg.command != "validate" or "replicas" in cfg.explicit
        replicas = cfg["replicas"] if explicit else harness.DEFAULT_REPLICAS
    if replicas < 1 or (cfg.command == "validate" and replicas < 2):
        raise ParameterError("replicas: too few replicas")
    header = f"# config_sha256={cfg.text_sha256} master_seed={seed} command={cfg.command}"
    reports = None
    if cfg.command == "validate":
        outputs, reports = cmd_validate(cfg, seed, replicas)
    else:
        outputs = HANDLERS[cfg.command](cfg, seed, replicas)
    for name, (cols, rows) in outputs.items():
        write_atomic(out / name, render_csv(header, cols, rows))
    status = EXIT_OK
    if reports is not None:
        lines = [header.lstrip("# ")]
        for rep in reports:
            rec = {"check": rep.name, "anchor": rep.anchor, "criterion": rep.criterion, "passed": rep.passed,
                   "replicas": rep.replicas, "master_seed": rep.master_seed,
                   "components": [{k: v for k, v in r.items() if k in ("component", "estimate", "oracle", "bound", "pass")}
                                  for r in rep.rows()]}
            lines.append(json.dumps(rec, sort_keys=True))
            print(rep.summary())
        write_atomic(out / "validation.jsonl", "\n".join(lines) + "\n")
        if not all(r.passed for r in reports):
            status = EXIT_FAIL
    if plots:
        write_plots(outputs, out)
    return status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="frlevy", description="Fractional Lévy noise fields and SPDE solvers.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, type=Path, help="TOML run description")
    p.add_argument("--seed", type=int, default=None, help=f"master seed (overrides config and ${SEED_ENV})")
    p.add_argument("--replicas", type=int, default=None, help="Monte-Carlo replicas (overrides config)")
    p.add_argument("--out", type=Path, default=None, help="output directory (overrides config)")
    p.add_argument("--plots", action="store_true", help="also write SVG plots")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = args.config.read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_PARAM
    try:
        cfg = parse_config(text)
        if cfg.command != args.command:
            raise ParameterError(f"command: config says {cfg.command!r} but {args.command!r} was requested")
        if args.seed is not None and args.seed < 0:
            raise ParameterError("--seed must be >= 0")
        seed = resolve_seed(args.seed, cfg)
        out = args.out if args.out is not None else Path(cfg["out"])
        return run(cfg, seed, args.replicas, out, args.plots)
    except ConfigError as exc:
        for prob in exc.problems:
            print(f"error: {prob}", file=sys.stderr)
        return EXIT_PARAM
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARAM
    except PicardDivergenceError as exc:
        print(f"error: {exc}; differences: {', '.join(f'{d:.3g}' for d in exc.differences)}", file=sys.stderr)
        return EXIT_FAIL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARAM


if __name__ == "__main__":
    raise SystemExit(main())
