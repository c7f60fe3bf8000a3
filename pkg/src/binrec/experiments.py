"""Ground-truth patterns, synthetic data, error metric and averaged sweeps.

Patterns are exact two-valued (+-1) functions on the unit interval/square;
data is their blurred image plus i.i.d. nodal Gaussian noise generated
deterministically from a seed. Recovery quality in 1D is measured by
   E = 0.25*|TV(P(u)) - TV(u_true)| + 0.5*||P(u) - u_true||_L1
where P is the sign projection (P(0) = +1).
"""

from __future__ import annotations

import concurrent.futures
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fem
from .blur import BlurOperator
from .fem import FeFunction
from .mesh import Mesh
from .phasefield import ModelParams, Potential
from .solver import run_recovery

__all__ = [
    "Barcode",
    "Blob",
    "Blocks",
    "RasterImage",
    "NoiseSpec",
    "barcode_from_units",
    "rasterize",
    "min_feature_width",
    "synthesize_data",
    "initial_guess",
    "project_binary",
    "tv_binary",
    "error_metric",
    "recovery_error",
    "averaged_error",
    "AveragedError",
    "read_pgm",
]


@dataclass(frozen=True)
class Barcode:
    """1D pattern: +1 on the first segment, flipping sign at every cut.

    Nodes lying exactly on a cut take the value of the segment to the
    right.
    """

    cuts: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        cuts = tuple(float(c) for c in self.cuts)
        if any(not 0.0 < c < 1.0 for c in cuts):
            raise ValueError(f"cuts must lie strictly inside (0,1), got {cuts}")
        if any(b <= a for a, b in zip(cuts, cuts[1:])):
            raise ValueError(f"cuts must be strictly increasing, got {cuts}")
        object.__setattr__(self, "cuts", cuts)

    def values_at(self, x: np.ndarray) -> np.ndarray:
        segment = np.searchsorted(np.asarray(self.cuts), x, side="right")
        return np.where(segment % 2 == 0, 1.0, -1.0)


@dataclass(frozen=True)
class Blob:
    """2D pattern: +1 inside an axis-aligned ellipse, -1 outside."""

    center: tuple[float, float] = (0.5, 0.5)
    radii: tuple[float, float] = (0.25, 0.25)

    def __post_init__(self) -> None:
        if min(self.radii) <= 0.0:
            raise ValueError(f"radii must be positive, got {self.radii}")

    def values_at(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        cx, cy = self.center
        rx, ry = self.radii
        inside = ((x - cx) / rx) ** 2 + ((y - cy) / ry) ** 2 <= 1.0
        return np.where(inside, 1.0, -1.0)


@dataclass(frozen=True)
class Blocks:
    """2D pattern from a boolean matrix of equal rectangular blocks.

    Row 0 of the matrix is the top of the square (image convention);
    True maps to +1. Nodes on a block boundary take the value above /
    to the right.
    """

    cells: np.ndarray

    def __post_init__(self) -> None:
        cells = np.asarray(self.cells, dtype=bool)
        if cells.ndim != 2 or cells.size == 0:
            raise ValueError("cells must be a nonempty 2D boolean matrix")
        cells.flags.writeable = False
        object.__setattr__(self, "cells", cells)

    def values_at(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        n_rows, n_cols = self.cells.shape
        col = np.minimum((x * n_cols).astype(int), n_cols - 1)
        row_up = np.minimum((y * n_rows).astype(int), n_rows - 1)
        row = n_rows - 1 - row_up
        return np.where(self.cells[row, col], 1.0, -1.0)


@dataclass(frozen=True)
class RasterImage:
    """2D pattern from a grayscale image thresholded at gray level 128."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        pixels = np.asarray(self.pixels)
        if pixels.ndim != 2 or pixels.size == 0:
            raise ValueError("pixels must be a nonempty 2D array")
        pixels.flags.writeable = False
        object.__setattr__(self, "pixels", pixels)

    @classmethod
    def from_pgm(cls, path: str | Path) -> "RasterImage":
        return cls(read_pgm(path))

    def values_at(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        height, width = self.pixels.shape
        col = np.minimum((x * width).astype(int), width - 1)
        row_up = np.minimum((y * height).astype(int), height - 1)
        row = height - 1 - row_up
        return np.where(self.pixels[row, col] >= 128, 1.0, -1.0)


BinaryPattern = Barcode | Blob | Blocks | RasterImage


def barcode_from_units(units) -> Barcode:
    """Barcode whose bar widths are the given positive integer unit counts."""
    units = [int(u) for u in units]
    if not units or any(u < 1 for u in units):
        raise ValueError(f"units must be positive integers, got {units}")
    total = sum(units)
    cum = np.cumsum(units[:-1])
    return Barcode(tuple(c / total for c in cum))


def pattern_dim(pattern: BinaryPattern) -> int:
    return 1 if isinstance(pattern, Barcode) else 2


def rasterize(pattern: BinaryPattern, mesh: Mesh) -> FeFunction:
    """Nodal +-1 samples of the pattern on the mesh."""
    if pattern_dim(pattern) != mesh.dim:
        raise ValueError(
            f"pattern is {pattern_dim(pattern)}D but mesh is {mesh.dim}D"
        )
    return FeFunction(mesh, pattern.values_at(*mesh.nodes.T))


def min_feature_width(pattern: BinaryPattern) -> float:
    """Width of the smallest bar/block; drives the parameter heuristics."""
    if isinstance(pattern, Barcode):
        edges = np.concatenate([[0.0], np.asarray(pattern.cuts), [1.0]])
        return float(np.min(np.diff(edges)))
    if isinstance(pattern, Blob):
        return 2.0 * min(pattern.radii)
    if isinstance(pattern, Blocks):
        n_rows, n_cols = pattern.cells.shape
        return min(1.0 / n_cols, 1.0 / n_rows)
    if isinstance(pattern, RasterImage):
        height, width = pattern.pixels.shape
        return min(1.0 / width, 1.0 / height)
    raise TypeError(f"unknown pattern type {type(pattern).__name__}")


@dataclass(frozen=True)
class NoiseSpec:
    """Zero-mean Gaussian nodal noise of the given variance, seeded."""

    gamma: float
    seed: int = 0

    def __post_init__(self) -> None:
        if self.gamma < 0.0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")


def synthesize_data(
    u_true: FeFunction, blur_op: BlurOperator, noise: NoiseSpec
) -> FeFunction:
    """Corrupted data: blur of the truth plus seeded i.i.d. nodal noise.

    gamma = 0 returns the blur output exactly (the RNG is never touched);
    the seed-to-stream mapping is numpy's default_rng (PCG64), fixed and
    platform-independent.
    """
    y = blur_op.apply(u_true)
    if noise.gamma == 0.0:
        return y
    rng = np.random.default_rng(noise.seed)
    zeta = rng.normal(0.0, math.sqrt(noise.gamma), size=y.coeffs.shape)
    return FeFunction(u_true.mesh, y.coeffs + zeta)


def initial_guess(y_d: FeFunction) -> FeFunction:
    """Scale-and-threshold start: rescale y_d to span [-1,1], then clamp.

    Constant data gives the zero function. The output is feasible for
    both potentials.
    """
    lo = float(np.min(y_d.coeffs))
    hi = float(np.max(y_d.coeffs))
    if hi == lo:
        return FeFunction(y_d.mesh, np.zeros(y_d.mesh.n_nodes))
    scaled = -1.0 + 2.0 * (y_d.coeffs - lo) / (hi - lo)
    return FeFunction(y_d.mesh, np.clip(scaled, -1.0, 1.0))


def project_binary(u: FeFunction) -> FeFunction:
    """Sign projection onto +-1 nodal values; 0 maps to +1."""
    return FeFunction(u.mesh, np.where(u.coeffs >= 0.0, 1.0, -1.0))


def _require_binary(u: FeFunction, what: str) -> None:
    if not np.all(np.abs(u.coeffs) == 1.0):
        raise ValueError(f"{what} must have nodal values exactly +-1")


def tv_binary(u: FeFunction) -> float:
    """Total variation of a +-1 nodal function on a 1D mesh: 2 per sign change."""
    if u.mesh.dim != 1:
        raise ValueError("tv_binary is defined for 1D meshes only")
    _require_binary(u, "input")
    c = u.coeffs
    return 2.0 * float(np.count_nonzero(c[1:] != c[:-1]))


def _l1_norm_p1(mesh: Mesh, d: np.ndarray) -> float:
    """Exact L1 norm of the piecewise-linear function with nodal values d."""
    lengths = mesh.element_measures()
    a = d[mesh.elements[:, 0]]
    b = d[mesh.elements[:, 1]]
    same_sign = a * b >= 0.0
    abs_sum = np.abs(a) + np.abs(b)
    crossing = np.divide(
        a * a + b * b, 2.0 * abs_sum, out=np.zeros_like(a), where=abs_sum > 0.0
    )
    per_element = np.where(same_sign, 0.5 * abs_sum, crossing) * lengths
    return float(np.sum(per_element))


def error_metric(u_rec: FeFunction, u_true: FeFunction) -> float:
    """Recovery error: bar-count mismatch plus location mismatch.

    E = 0.25*|TV(P(u_rec)) - TV(u_true)| + 0.5*||P(u_rec) - u_true||_L1.
    The integer part counts the difference in the number of bars; the
    fractional part measures misplaced discontinuities. 1D only.
    """
    if u_rec.mesh.dim != 1:
        raise NotImplementedError("the error metric is defined for 1D meshes only")
    if u_rec.mesh is not u_true.mesh:
        raise ValueError("u_rec and u_true live on different meshes")
    _require_binary(u_true, "u_true")
    proj = project_binary(u_rec)
    tv_term = 0.25 * abs(tv_binary(proj) - tv_binary(u_true))
    l1_term = 0.5 * _l1_norm_p1(u_rec.mesh, proj.coeffs - u_true.coeffs)
    return tv_term + l1_term


@dataclass(eq=False)
class RunOutcome:
    seed: int
    error: float
    iterations: int
    converged: bool
    monotone: bool


@dataclass(eq=False)
class AveragedError:
    """Mean recovery error over noise realizations, plus per-run records."""

    mean_error: float
    runs: list[RunOutcome] = field(default_factory=list)
    failures: list[tuple[int, str]] = field(default_factory=list)


def _worker_count(n_tasks: int) -> int:
    cap = os.environ.get("BINREC_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(n_tasks, limit))


def averaged_error(
    pattern: BinaryPattern,
    blur_op: BlurOperator,
    params: ModelParams,
    potential: Potential,
    n_realizations: int = 20,
    base_seed: int = 0,
    stop_on: str = "l2",
) -> AveragedError:
    """Mean error over seeds base_seed .. base_seed+n-1.

    Realizations run concurrently (capped by BINREC_THREADS); results are
    merged in seed order, so the outcome is independent of scheduling.
    Failed runs are recorded and excluded from the mean.
    """
    if n_realizations < 1:
        raise ValueError(f"n_realizations must be >= 1, got {n_realizations}")
    u_true = rasterize(pattern, blur_op.mesh)
    fem.mesh_operators(blur_op.mesh)  # build shared operators before fan-out
    seeds = [base_seed + k for k in range(n_realizations)]

    def one_run(seed: int) -> RunOutcome:
        y_d = synthesize_data(u_true, blur_op, NoiseSpec(params.gamma, seed))
        result = run_recovery(y_d, blur_op, params, potential, stop_on=stop_on)
        err = recovery_error(result.final_u, u_true)
        return RunOutcome(
            seed, err, result.iterations, result.converged, result.monotone
        )

    outcomes: dict[int, RunOutcome] = {}
    failures: dict[int, str] = {}
    workers = _worker_count(n_realizations)
    if workers == 1:
        for seed in seeds:
            try:
                outcomes[seed] = one_run(seed)
            except (fem.NumericalError, ValueError) as exc:
                failures[seed] = str(exc)
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(one_run, seed): seed for seed in seeds}
            for fut in concurrent.futures.as_completed(futures):
                seed = futures[fut]
                try:
                    outcomes[seed] = fut.result()
                except (fem.NumericalError, ValueError) as exc:
                    failures[seed] = str(exc)

    runs = [outcomes[s] for s in seeds if s in outcomes]
    errors = [run.error for run in runs]
    mean = float(np.mean(errors)) if errors else math.nan
    return AveragedError(
        mean_error=mean,
        runs=runs,
        failures=[(s, failures[s]) for s in seeds if s in failures],
    )


def recovery_error(u_rec: FeFunction, u_true: FeFunction) -> float:
    """Error of a recovery against the truth: E in 1D, L1 mismatch in 2D.

    There is no TV term in 2D, so the 2D value is just half the (lumped)
    L1 norm of the sign-projected mismatch.
    """
    if u_rec.mesh.dim == 1:
        return error_metric(u_rec, u_true)
    proj = project_binary(u_rec)
    ops = fem.mesh_operators(u_true.mesh)
    return 0.5 * float(ops.lumped @ np.abs(proj.coeffs - u_true.coeffs))


def read_pgm(path: str | Path) -> np.ndarray:
    """Read an 8-bit PGM image (binary P5 or ASCII P2) as (height, width)."""
    data = Path(path).read_bytes()

    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"truncated PGM header in {path}")
        tokens.append(data[start:pos])

    magic = tokens[0]
    if magic not in (b"P2", b"P5"):
        raise ValueError(f"not a PGM file (magic {magic!r}) in {path}")
    width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if width < 1 or height < 1:
        raise ValueError(f"bad PGM dimensions {width}x{height} in {path}")
    if not 0 < maxval < 256:
        raise ValueError(f"only 8-bit PGM supported, maxval {maxval} in {path}")

    if magic == b"P5":
        pos += 1  # single whitespace byte after the header
        raster = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    else:
        raster = np.array(data[pos:].split()[: width * height], dtype=np.uint8)
    if raster.size != width * height:
        raise ValueError(f"truncated PGM raster in {path}")
    return raster.reshape(height, width)
