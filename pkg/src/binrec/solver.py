"""Convex-splitting iterations for the binary recovery energies.

One outer iteration solves the forward/adjoint blur pair for the previous
iterate and then one convex step: a linear SPD solve for the smooth double
well (with the cubic term linearised and lumped), or a box-constrained
variational inequality solved by projected Gauss-Seidel for the double
obstacle. Iterations stop when the L2 distance between consecutive
iterates falls below the tolerance. Valid splitting parameters make the
energy trace nonincreasing.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numba
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from . import fem
from .blur import BlurOperator
from .fem import FeFunction, NumericalError
from .phasefield import (
    DOUBLE_OBSTACLE,
    SMOOTH_DOUBLE_WELL,
    ModelParams,
    Potential,
    _energy_from_state,
    sigma_eff,
)

__all__ = [
    "RecoveryResult",
    "dw_step",
    "do_step",
    "run_recovery",
    "gradient_flow_run",
    "stationarity_residual",
]

PGS_TOL = 1e-10
PGS_MAX_SWEEPS = 20_000
MONOTONE_RELTOL = 1e-12


@dataclass(eq=False)
class RecoveryResult:
    """Outcome of one recovery run.

    ``energies`` and ``diffs`` have one entry per iteration performed;
    ``monotone`` is true iff the energy trace (including the initial
    energy) never increased beyond 1e-12 relative per step.
    """

    final_u: FeFunction
    energies: list[float]
    diffs: list[float]
    iterations: int
    converged: bool
    monotone: bool
    initial_energy: float


def _check_rho(params: ModelParams, potential: Potential) -> float:
    """Validate rho > sigma_eff/epsilon; returns sigma_eff."""
    sig = sigma_eff(params.sigma, potential)
    bound = sig / params.epsilon
    if params.rho <= bound:
        raise ValueError(
            f"rho = {params.rho} must exceed sigma/(c*epsilon) = {bound:.6g} "
            f"for the {potential.name} step to be well posed"
        )
    return sig


@numba.njit(cache=True)
def _pgs_solve(indptr, indices, data, diag, x, b, tol, max_sweeps):  # pragma: no cover
    """In-place projected Gauss-Seidel sweeps over the box [-1,1].

    Natural ascending node order; stops when the max-norm change of one
    full sweep drops below tol. Returns the sweep count, or -1 if the cap
    was reached first.
    """
    n = x.shape[0]
    for sweep in range(max_sweeps):
        max_change = 0.0
        for i in range(n):
            acc = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                j = indices[k]
                if j != i:
                    acc += data[k] * x[j]
            xi = (b[i] - acc) / diag[i]
            if xi > 1.0:
                xi = 1.0
            elif xi < -1.0:
                xi = -1.0
            change = abs(xi - x[i])
            if change > max_change:
                max_change = change
            x[i] = xi
        if max_change < tol:
            return sweep + 1
    return -1


class _WellScheme:
    """Linearised smooth-double-well step: one SPD solve per iteration."""

    def __init__(self, ops: fem.MeshOperators, params: ModelParams):
        self.ops = ops
        self.params = params
        self.sig = _check_rho(params, SMOOTH_DOUBLE_WELL)
        reaction = self.sig / params.epsilon
        self.fixed = (
            params.rho * ops.mass
            + (self.sig * params.epsilon) * ops.stiffness
            - sp.diags(reaction * ops.lumped)
        ).tocsr()
        self.reaction = reaction

    def prepare(self, u0: np.ndarray) -> np.ndarray:
        return np.array(u0, dtype=np.float64)

    def step(self, u_prev: np.ndarray, p: np.ndarray) -> np.ndarray:
        matrix = self.fixed + sp.diags(self.reaction * self.ops.lumped * u_prev**2)
        rhs = self.params.rho * (self.ops.mass @ u_prev) - self.ops.mass @ p
        try:
            u = sla.splu(matrix.tocsc()).solve(rhs)
        except RuntimeError as exc:  # singular factorization
            raise NumericalError(f"well step solve failed: {exc}") from exc
        if not np.all(np.isfinite(u)):
            raise NumericalError("well step produced non-finite values")
        return u


class _ObstacleScheme:
    """Double-obstacle step: box-constrained VI solved by projected GS."""

    def __init__(self, ops: fem.MeshOperators, params: ModelParams):
        self.ops = ops
        self.params = params
        self.sig = _check_rho(params, DOUBLE_OBSTACLE)
        reaction = self.sig / params.epsilon
        matrix = (
            sp.diags((params.rho - reaction) * ops.lumped)
            + (self.sig * params.epsilon) * ops.stiffness
        ).tocsr()
        matrix.sort_indices()
        self.matrix = matrix
        self.diag = matrix.diagonal()

    def prepare(self, u0: np.ndarray) -> np.ndarray:
        # feasibility of the start: box-clamp
        return np.clip(u0, -1.0, 1.0)

    def step(self, u_prev: np.ndarray, p: np.ndarray) -> np.ndarray:
        b = self.params.rho * (self.ops.lumped * u_prev) - self.ops.mass @ p
        x = np.array(u_prev, dtype=np.float64)
        sweeps = _pgs_solve(
            self.matrix.indptr,
            self.matrix.indices,
            self.matrix.data,
            self.diag,
            x,
            b,
            PGS_TOL,
            PGS_MAX_SWEEPS,
        )
        if sweeps < 0:
            raise NumericalError(
                f"projected Gauss-Seidel did not converge in {PGS_MAX_SWEEPS} sweeps"
            )
        return x


def _make_scheme(ops, params, potential: Potential):
    if potential.constrained:
        return _ObstacleScheme(ops, params)
    return _WellScheme(ops, params)


def dw_step(
    u_prev: FeFunction,
    y_d: FeFunction,
    blur_op: BlurOperator,
    params: ModelParams,
) -> FeFunction:
    """One linearised smooth-double-well iteration from u_prev."""
    if not np.all(np.isfinite(u_prev.coeffs)):
        raise ValueError("u_prev contains non-finite values")
    ops = fem.mesh_operators(u_prev.mesh)
    scheme = _WellScheme(ops, params)
    _, p = blur_op.adjoint_chain(u_prev, y_d)
    return FeFunction(u_prev.mesh, scheme.step(u_prev.coeffs, p.coeffs))


def do_step(
    u_prev: FeFunction,
    y_d: FeFunction,
    blur_op: BlurOperator,
    params: ModelParams,
) -> FeFunction:
    """One double-obstacle iteration from a feasible u_prev."""
    if np.any(np.abs(u_prev.coeffs) > 1.0):
        raise ValueError("u_prev has nodal values outside [-1,1]")
    ops = fem.mesh_operators(u_prev.mesh)
    scheme = _ObstacleScheme(ops, params)
    _, p = blur_op.adjoint_chain(u_prev, y_d)
    return FeFunction(u_prev.mesh, scheme.step(u_prev.coeffs, p.coeffs))


def run_recovery(
    y_d: FeFunction,
    blur_op: BlurOperator,
    params: ModelParams,
    potential: Potential,
    u0: FeFunction | None = None,
    stop_on: str = "l2",
    on_iterate=None,
) -> RecoveryResult:
    """Iterate the splitting scheme until the stopping criterion fires.

    Stops when the L2 distance between consecutive iterates (or, with
    stop_on="energy", the energy change) drops below params.tol, or after
    params.max_iters iterations (converged=False, no exception).
    ``on_iterate(n, u, energy, diff)`` is called after every iteration.
    """
    if stop_on not in ("l2", "energy"):
        raise ValueError(f"stop_on must be 'l2' or 'energy', got {stop_on!r}")
    mesh = y_d.mesh
    if u0 is None:
        from .experiments import initial_guess

        u0 = initial_guess(y_d)
    elif u0.mesh is not mesh:
        raise ValueError("u0 lives on a different mesh than y_d")

    ops = fem.mesh_operators(mesh)
    scheme = _make_scheme(ops, params, potential)
    u = scheme.prepare(u0.coeffs)

    y = blur_op.solve_coeffs(u)
    energy = _energy_from_state(y, FeFunction(mesh, u), y_d, params, potential)
    initial_energy = energy

    energies: list[float] = []
    diffs: list[float] = []
    monotone = True
    converged = False
    iterations = 0

    for n in range(1, params.max_iters + 1):
        p = blur_op.solve_coeffs(y - y_d.coeffs)
        u_new = scheme.step(u, p)
        y_new = blur_op.solve_coeffs(u_new)
        fn = FeFunction(mesh, u_new)
        energy_new = _energy_from_state(y_new, fn, y_d, params, potential)
        diff = fem.l2_norm(ops.mass, u_new - u)

        if energy_new > energy + MONOTONE_RELTOL * abs(energy):
            if monotone:
                warnings.warn(
                    f"energy increased at iteration {n}: "
                    f"{energy:.12e} -> {energy_new:.12e}",
                    RuntimeWarning,
                    stacklevel=2,
                )
            monotone = False

        energies.append(energy_new)
        diffs.append(diff)
        iterations = n
        if on_iterate is not None:
            on_iterate(n, fn, energy_new, diff)

        stop_measure = diff if stop_on == "l2" else abs(energy_new - energy)
        u, y, energy = u_new, y_new, energy_new
        if stop_measure < params.tol:
            converged = True
            break

    return RecoveryResult(
        final_u=FeFunction(mesh, u),
        energies=energies,
        diffs=diffs,
        iterations=iterations,
        converged=converged,
        monotone=monotone,
        initial_energy=initial_energy,
    )


def gradient_flow_run(
    y_d: FeFunction,
    blur_op: BlurOperator,
    params: ModelParams,
    potential: Potential,
    u0: FeFunction | None,
    dt: float,
) -> RecoveryResult:
    """Implicit gradient-flow stepping; identical to run_recovery with rho=1/dt."""
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    return run_recovery(y_d, blur_op, replace(params, rho=1.0 / dt), potential, u0)


def stationarity_residual(
    u: FeFunction,
    y_d: FeFunction,
    blur_op: BlurOperator,
    params: ModelParams,
    potential: Potential,
) -> float:
    """Norm of the first-order-condition residual at u (0 at critical points).

    Uses the same lumped quadrature as the iteration. For the obstacle
    potential the residual is clipped where the constraint is active
    (only violations of the sign conditions count).
    """
    ops = fem.mesh_operators(u.mesh)
    sig = sigma_eff(params.sigma, potential)
    _, p = blur_op.adjoint_chain(u, y_d)
    grad = (
        ops.mass @ p.coeffs
        + sig * params.epsilon * (ops.stiffness @ u.coeffs)
    )
    if potential.constrained:
        if np.any(np.abs(u.coeffs) > 1.0):
            raise ValueError("u has nodal values outside [-1,1]")
        grad = grad - (sig / params.epsilon) * (ops.lumped * u.coeffs)
        at_upper = u.coeffs >= 1.0
        at_lower = u.coeffs <= -1.0
        grad = np.where(at_upper, np.maximum(grad, 0.0), grad)
        grad = np.where(at_lower, np.minimum(grad, 0.0), grad)
    else:
        grad = grad + (sig / params.epsilon) * (
            ops.lumped * (u.coeffs**3 - u.coeffs)
        )
    # lumped-mass norm of the Riesz representative of the residual
    return float(np.sqrt(np.sum(grad * grad / ops.lumped)))
