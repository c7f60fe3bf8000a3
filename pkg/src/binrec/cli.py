"""Command-line front end.

    binrec <command> --config <path> [--out <dir>] [--seed <int>]

Commands: synthesize, recover, sweep, compare, oracle-check. Configs are
plain ``key = value`` lines with ``#`` comments; any model parameter not
given is filled from the feature-width heuristics. Outputs are CSV traces
and tables (17 significant digits, byte-stable across reruns) and PGM
images for 2D fields.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import experiments, oracles, solver
from .blur import BlurOperator
from .experiments import (
    Barcode,
    Blob,
    Blocks,
    NoiseSpec,
    RasterImage,
    barcode_from_units,
    min_feature_width,
    rasterize,
    recovery_error,
    synthesize_data,
)
from .fem import FeFunction, NumericalError
from .mesh import build_interval_mesh, build_square_mesh, cells_for_target_h
from .phasefield import (
    DOUBLE_OBSTACLE,
    SMOOTH_DOUBLE_WELL,
    ModelParams,
    parameter_heuristics,
    potential_by_name,
)

__all__ = ["ConfigError", "RunConfig", "parse_config", "run", "oracle_check", "main"]


class ConfigError(ValueError):
    """A configuration file could not be parsed or validated."""


_FLOAT_KEYS = ("sigma", "epsilon", "h", "rho", "tol")
_KNOWN_KEYS = {
    "pattern",
    "cuts",
    "bar_units",
    "center",
    "radii",
    "blocks",
    "image",
    "alpha",
    "gamma",
    "potential",
    "sigma",
    "epsilon",
    "h",
    "rho",
    "tol",
    "max_iters",
    "stop_on",
    "seed",
    "n_realizations",
}


@dataclass
class RunConfig:
    """Validated configuration of one CLI invocation."""

    pattern: str = ""
    cuts: tuple[float, ...] | None = None
    bar_units: tuple[int, ...] | None = None
    center: tuple[float, float] = (0.5, 0.5)
    radii: tuple[float, float] = (0.25, 0.25)
    blocks: str | None = None
    image: str | None = None
    alphas: tuple[float, ...] = ()
    gammas: tuple[float, ...] = ()
    potential: str | None = None
    sigma: float | None = None
    epsilon: float | None = None
    h: float | None = None
    rho: float | None = None
    tol: float | None = None
    max_iters: int = 10000
    stop_on: str = "l2"
    seed: int = 0
    n_realizations: int = 1


def _fail(line_no: int, line: str, message: str) -> None:
    raise ConfigError(f"line {line_no}: {message} (in {line.strip()!r})")


def _floats(value: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in value.split(",") if tok.strip())


def _ints(value: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in value.split(",") if tok.strip())


def parse_config(text: str) -> RunConfig:
    """Parse ``key = value`` lines into a validated RunConfig."""
    config = RunConfig()
    seen: set[str] = set()
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            _fail(line_no, raw, "expected 'key = value'")
        key, _, value = (part.strip() for part in line.partition("="))
        if key not in _KNOWN_KEYS:
            _fail(line_no, raw, f"unknown key {key!r}")
        if key in seen:
            _fail(line_no, raw, f"duplicate key {key!r}")
        seen.add(key)
        try:
            _apply_key(config, key, value)
        except (ValueError, TypeError) as exc:
            if isinstance(exc, ConfigError):
                raise
            _fail(line_no, raw, str(exc))
    _validate(config)
    return config


def _apply_key(config: RunConfig, key: str, value: str) -> None:
    if key == "pattern":
        if value not in ("barcode", "blob", "blocks", "raster"):
            raise ValueError(f"unknown pattern {value!r}")
        config.pattern = value
    elif key == "cuts":
        config.cuts = _floats(value)
    elif key == "bar_units":
        config.bar_units = _ints(value)
    elif key in ("center", "radii"):
        pair = _floats(value)
        if len(pair) != 2:
            raise ValueError(f"{key} needs exactly two values")
        setattr(config, key, pair)
    elif key == "blocks":
        config.blocks = value
    elif key == "image":
        config.image = value
    elif key == "alpha":
        config.alphas = _floats(value)
    elif key == "gamma":
        config.gammas = _floats(value)
    elif key == "potential":
        potential_by_name(value)
        config.potential = value
    elif key in _FLOAT_KEYS:
        parsed = float(value)
        if parsed <= 0.0:
            raise ValueError(f"{key} must be positive, got {parsed}")
        setattr(config, key, parsed)
    elif key == "max_iters":
        config.max_iters = int(value)
        if config.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
    elif key == "stop_on":
        if value not in ("l2", "energy"):
            raise ValueError(f"stop_on must be 'l2' or 'energy', got {value!r}")
        config.stop_on = value
    elif key == "seed":
        config.seed = int(value)
    elif key == "n_realizations":
        config.n_realizations = int(value)
        if config.n_realizations < 1:
            raise ValueError("n_realizations must be at least 1")


def _validate(config: RunConfig) -> None:
    if not config.pattern:
        raise ConfigError("missing required key 'pattern'")
    if not config.alphas:
        raise ConfigError("missing required key 'alpha'")
    if not config.gammas:
        raise ConfigError("missing required key 'gamma'")
    if any(a <= 0.0 for a in config.alphas):
        raise ConfigError(f"alpha values must be positive, got {config.alphas}")
    if any(g < 0.0 for g in config.gammas):
        raise ConfigError(f"gamma values must be nonnegative, got {config.gammas}")
    if config.pattern == "barcode" and config.cuts is not None and config.bar_units:
        raise ConfigError("give either 'cuts' or 'bar_units', not both")
    if config.pattern == "blocks" and not config.blocks:
        raise ConfigError("pattern 'blocks' needs the 'blocks' key")
    if config.pattern == "raster" and not config.image:
        raise ConfigError("pattern 'raster' needs the 'image' key")


def build_pattern(config: RunConfig):
    if config.pattern == "barcode":
        if config.bar_units:
            return barcode_from_units(config.bar_units)
        return Barcode(config.cuts or ())
    if config.pattern == "blob":
        return Blob(center=config.center, radii=config.radii)
    if config.pattern == "blocks":
        rows = [row.strip() for row in config.blocks.split(";") if row.strip()]
        if len({len(row) for row in rows}) != 1:
            raise ConfigError("blocks rows must all have the same length")
        if any(ch not in "01" for row in rows for ch in row):
            raise ConfigError("blocks rows must contain only 0 and 1")
        cells = np.array([[ch == "1" for ch in row] for row in rows])
        return Blocks(cells)
    if config.pattern == "raster":
        return RasterImage.from_pgm(config.image)
    raise ConfigError(f"unknown pattern {config.pattern!r}")


def build_params(
    config: RunConfig, potential, alpha: float, gamma: float, omega: float
) -> ModelParams:
    """Heuristic defaults from the feature width, then explicit overrides."""
    params = parameter_heuristics(
        omega, potential, alpha=alpha, gamma=gamma, max_iters=config.max_iters
    )
    overrides = {
        key: getattr(config, key)
        for key in _FLOAT_KEYS
        if getattr(config, key) is not None
    }
    return replace(params, **overrides) if overrides else params


def _build_problem(config: RunConfig, alpha: float, gamma: float, potential):
    pattern = build_pattern(config)
    omega = min_feature_width(pattern)
    params = build_params(config, potential, alpha, gamma, omega)
    dim = experiments.pattern_dim(pattern)
    n_cells = cells_for_target_h(params.h, dim)
    mesh = build_interval_mesh(n_cells) if dim == 1 else build_square_mesh(n_cells)
    blur_op = BlurOperator(mesh, params.alpha)
    return pattern, params, mesh, blur_op


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def _write_csv(path: Path, header: str, rows) -> None:
    lines = [header]
    lines += [",".join(_fmt(cell) for cell in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def write_pgm(path: Path, u: FeFunction) -> None:
    """Write a 2D nodal field as an 8-bit PGM, -1 -> 0 and +1 -> 255.

    Values are clamped to [-1,1] and mapped linearly with round-half-up,
    so gray g recovers u = 2g/255 - 1 on the 256-level lattice.
    """
    mesh = u.mesh
    if mesh.dim != 2:
        raise ValueError("PGM output is for 2D meshes")
    side = int(round(math.sqrt(mesh.n_nodes)))
    grid = u.coeffs.reshape(side, side)  # row index iy, y increasing
    clamped = np.clip(grid, -1.0, 1.0)
    gray = np.floor((clamped + 1.0) * 0.5 * 255.0 + 0.5).astype(np.uint8)
    image = gray[::-1, :]  # image row 0 is the top of the square
    header = f"P5\n{side} {side}\n255\n".encode("ascii")
    path.write_bytes(header + image.tobytes())


def _write_fields(
    out: Path,
    mesh,
    u_true: FeFunction,
    y_d: FeFunction,
    u_rec: FeFunction | None,
    suffix: str = "",
) -> list[str]:
    written = []
    if mesh.dim == 1:
        x = mesh.nodes[:, 0]
        if u_rec is None:
            name = f"data{suffix}.csv"
            rows = zip(x, u_true.coeffs, y_d.coeffs)
            _write_csv(out / name, "x,u_true,y_d", rows)
        else:
            name = f"solution{suffix}.csv"
            rows = zip(x, u_true.coeffs, y_d.coeffs, u_rec.coeffs)
            _write_csv(out / name, "x,u_true,y_d,u_rec", rows)
        written.append(name)
    else:
        write_pgm(out / f"y_d{suffix}.pgm", y_d)
        written.append(f"y_d{suffix}.pgm")
        if u_rec is None:
            write_pgm(out / f"u_true{suffix}.pgm", u_true)
            written.append(f"u_true{suffix}.pgm")
        else:
            write_pgm(out / f"u_rec{suffix}.pgm", u_rec)
            written.append(f"u_rec{suffix}.pgm")
    return written


_SUMMARY_HEADER = "potential,E,iterations,converged,monotone"


def _recover_one(config, out: Path, potential, suffix: str = "") -> list:
    """Run one recovery, write energy/solution files, return the summary row."""
    alpha, gamma = config.alphas[0], config.gammas[0]
    pattern, params, mesh, blur_op = _build_problem(config, alpha, gamma, potential)
    u_true = rasterize(pattern, mesh)
    y_d = synthesize_data(u_true, blur_op, NoiseSpec(gamma, config.seed))

    trace_rows: list[tuple] = []

    def record(n, _u, energy, diff):
        trace_rows.append((n, energy, diff))

    try:
        result = solver.run_recovery(
            y_d, blur_op, params, potential, stop_on=config.stop_on, on_iterate=record
        )
    except NumericalError:
        _write_csv(out / f"energy{suffix}.csv.partial", "iter,energy,l2_diff", trace_rows)
        raise
    _write_csv(out / f"energy{suffix}.csv", "iter,energy,l2_diff", trace_rows)
    _write_fields(out, mesh, u_true, y_d, result.final_u, suffix)
    error = recovery_error(result.final_u, u_true)
    return [potential.name, error, result.iterations, result.converged, result.monotone]


def run(config: RunConfig, command: str, out_dir: str | Path) -> int:
    """Execute one command; returns the process exit status."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if command == "synthesize":
        alpha, gamma = config.alphas[0], config.gammas[0]
        potential = potential_by_name(config.potential or "obstacle")
        pattern, params, mesh, blur_op = _build_problem(config, alpha, gamma, potential)
        u_true = rasterize(pattern, mesh)
        y_d = synthesize_data(u_true, blur_op, NoiseSpec(gamma, config.seed))
        _write_fields(out, mesh, u_true, y_d, None)
        return 0

    if command == "recover":
        if config.potential is None:
            raise ConfigError("command 'recover' needs the 'potential' key")
        if len(config.alphas) != 1 or len(config.gammas) != 1:
            raise ConfigError("command 'recover' needs single alpha and gamma values")
        potential = potential_by_name(config.potential)
        try:
            row = _recover_one(config, out, potential)
        except NumericalError as exc:
            print(f"recovery failed: {exc}", file=sys.stderr)
            return 2
        _write_csv(out / "summary.csv", _SUMMARY_HEADER, [row])
        return 0

    if command == "compare":
        if len(config.alphas) != 1 or len(config.gammas) != 1:
            raise ConfigError("command 'compare' needs single alpha and gamma values")
        rows = []
        for potential in (SMOOTH_DOUBLE_WELL, DOUBLE_OBSTACLE):
            try:
                rows.append(_recover_one(config, out, potential, f"_{potential.name}"))
            except NumericalError as exc:
                print(f"{potential.name} recovery failed: {exc}", file=sys.stderr)
                return 2
        _write_csv(out / "summary.csv", _SUMMARY_HEADER, rows)
        return 0

    if command == "sweep":
        if config.potential is None:
            raise ConfigError("command 'sweep' needs the 'potential' key")
        potential = potential_by_name(config.potential)
        rows = []
        for alpha in config.alphas:
            for gamma in config.gammas:
                pattern, params, mesh, blur_op = _build_problem(
                    config, alpha, gamma, potential
                )
                outcome = experiments.averaged_error(
                    pattern,
                    blur_op,
                    params,
                    potential,
                    n_realizations=config.n_realizations,
                    base_seed=config.seed,
                    stop_on=config.stop_on,
                )
                rows.append(
                    (alpha, gamma, outcome.mean_error, len(outcome.runs),
                     len(outcome.failures))
                )
        _write_csv(
            out / "sweep.csv", "alpha,gamma,mean_error,runs_ok,runs_failed", rows
        )
        return 0

    raise ConfigError(f"unknown command {command!r}")


# --- oracle comparisons -----------------------------------------------------

_ORACLE_TOL = 1e-8


def oracle_check(perturb: float = 0.0, seed: int = 12345) -> tuple[str, bool]:
    """Compare the production solvers against the dense oracles.

    Runs the forward/adjoint chain, the double-well step, and the obstacle
    step (solution and quadratic-objective gap) on meshes of at most 9
    nodes. ``perturb`` injects an artificial deviation into the production
    results so tests can verify the check fails loudly. Returns the
    report text and an overall pass flag.
    """
    rng = np.random.default_rng(seed)
    rows: list[tuple[str, float, float]] = []

    def add(name: str, deviation: float, tol: float = _ORACLE_TOL) -> None:
        rows.append((name, deviation, tol))

    for mesh, label in (
        (build_interval_mesh(8), "1d-n8"),
        (build_square_mesh(2), "2d-n2"),
    ):
        params = ModelParams(
            alpha=0.05, gamma=0.0, sigma=0.02, epsilon=0.25, h=mesh.h, rho=1.0,
            tol=1e-6,
        )
        blur_op = BlurOperator(mesh, params.alpha)
        u_prev = rng.uniform(-1.0, 1.0, mesh.n_nodes)
        y_d_arr = rng.uniform(-1.0, 1.0, mesh.n_nodes)
        u_fn = FeFunction(mesh, u_prev)
        y_fn = FeFunction(mesh, y_d_arr)

        y, p = blur_op.adjoint_chain(u_fn, y_fn)
        y_ref, p_ref = oracles.dense_blur_chain(mesh, params.alpha, u_prev, y_d_arr)
        add(f"blur-state-{label}", float(np.max(np.abs(y.coeffs + perturb - y_ref))))
        add(f"blur-adjoint-{label}", float(np.max(np.abs(p.coeffs - p_ref))))

        u_dw = solver.dw_step(u_fn, y_fn, blur_op, params)
        u_dw_ref = oracles.dense_dw_step(mesh, params, u_prev, y_d_arr)
        add(f"dw-step-{label}", float(np.max(np.abs(u_dw.coeffs + perturb - u_dw_ref))))

        u_do = solver.do_step(u_fn, y_fn, blur_op, params)
        u_do_ref = oracles.projected_gradient_obstacle(
            mesh, params, u_prev, y_d_arr, n_iters=20_000, n_starts=5, seed=seed
        )
        add(f"do-step-{label}", float(np.max(np.abs(u_do.coeffs + perturb - u_do_ref))))
        gap = oracles.obstacle_objective(
            mesh, params, u_prev, y_d_arr, u_do.coeffs + perturb
        ) - oracles.obstacle_objective(mesh, params, u_prev, y_d_arr, u_do_ref)
        add(f"do-energy-gap-{label}", abs(gap))

    ok = all(dev <= tol for _, dev, tol in rows)
    width = max(len(name) for name, _, _ in rows)
    lines = [f"{'check'.ljust(width)}  deviation      tolerance  status"]
    for name, dev, tol in rows:
        status = "pass" if dev <= tol else "FAIL"
        lines.append(f"{name.ljust(width)}  {dev:.6e}  {tol:.1e}    {status}")
    lines.append("overall: " + ("pass" if ok else "FAIL"))
    return "\n".join(lines), ok


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="binrec",
        description="Recover binary functions from blurred, noisy data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("synthesize", "recover", "sweep", "compare"):
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, help="key = value config file")
        cmd.add_argument("--out", default=".", help="output directory")
        cmd.add_argument("--seed", type=int, default=None, help="override config seed")
    sub.add_parser("oracle-check")

    args = parser.parse_args(argv)
    if args.command == "oracle-check":
        report, ok = oracle_check()
        print(report)
        return 0 if ok else 1

    try:
        config = parse_config(Path(args.config).read_text())
        if args.seed is not None:
            config.seed = args.seed
        return run(config, args.command, args.out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
