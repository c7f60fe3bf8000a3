"""Double-well and double-obstacle potentials and the associated energies.

The recovery energy is  0.5*||S u - y_d||^2  +  (sigma/c) * G_eps(u)  where
G_eps(u) = integral of (eps/2)|grad u|^2 + Psi(u)/eps and c is the energy of
the optimal single-interface profile of the chosen potential. Dividing by c
makes the regularisation weight asymptotically sigma times the perimeter of
the jump set for either potential.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import fem
from .blur import BlurOperator
from .fem import FeFunction

__all__ = [
    "Potential",
    "SmoothDoubleWell",
    "DoubleObstacle",
    "SMOOTH_DOUBLE_WELL",
    "DOUBLE_OBSTACLE",
    "potential_by_name",
    "ModelParams",
    "sigma_eff",
    "ginzburg_landau",
    "total_energy",
    "parameter_heuristics",
]


class Potential:
    """Common interface of the two phase-field potentials."""

    name: str
    # energy of the optimal profile across one unit interface; used to
    # normalize the regularisation weight
    gamma_constant: float
    # enforces |u| <= 1 as a hard constraint
    constrained: bool
    # empirically robust defaults for the splitting parameter and the
    # stopping tolerance
    default_rho: float
    default_tol: float

    def psi(self, s: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class SmoothDoubleWell(Potential):
    """Smooth quartic well 0.25*(1 - s^2)^2 with minima at +-1."""

    name = "well"
    gamma_constant = 2.0 * math.sqrt(2.0) / 3.0
    constrained = False
    default_rho = 0.833
    default_tol = 3e-4

    def psi(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        return 0.25 * (1.0 - s * s) ** 2


class DoubleObstacle(Potential):
    """Concave quadratic 0.5*(1 - s^2) on [-1,1], infinite outside."""

    name = "obstacle"
    gamma_constant = math.pi / 2.0
    constrained = True
    default_rho = 0.588
    default_tol = 3.5e-4

    def psi(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        out = 0.5 * (1.0 - s * s)
        return np.where(np.abs(s) <= 1.0, out, np.inf)


SMOOTH_DOUBLE_WELL = SmoothDoubleWell()
DOUBLE_OBSTACLE = DoubleObstacle()

_BY_NAME = {"well": SMOOTH_DOUBLE_WELL, "obstacle": DOUBLE_OBSTACLE}


def potential_by_name(name: str) -> Potential:
    try:
        return _BY_NAME[name]
    except KeyError:
        raise ValueError(
            f"unknown potential {name!r}; expected 'well' or 'obstacle'"
        ) from None


def sigma_eff(sigma: float, potential: Potential) -> float:
    """Regularisation weight normalized by the interface-profile energy."""
    if sigma <= 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return sigma / potential.gamma_constant


@dataclass(frozen=True)
class ModelParams:
    """All problem, model, approximation and iteration parameters.

    alpha: blurring strength; gamma: noise variance; sigma: regularisation
    weight; epsilon: interface-width scale; h: target grid width; rho:
    splitting parameter of the iterative scheme; tol: stopping tolerance.
    """

    alpha: float
    gamma: float
    sigma: float
    epsilon: float
    h: float
    rho: float
    tol: float
    max_iters: int = 10000

    def __post_init__(self) -> None:
        if self.alpha <= 0.0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.gamma < 0.0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")
        for name in ("sigma", "epsilon", "h", "rho", "tol"):
            value = getattr(self, name)
            if value <= 0.0:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be at least 1, got {self.max_iters}")


def ginzburg_landau(u: FeFunction, epsilon: float, potential: Potential) -> float:
    """Interface energy (eps/2)*u.K.u + (1/eps)*sum_i m_i Psi(u_i).

    The potential term uses lumped-mass quadrature, so for the obstacle
    potential the value is finite iff every nodal value lies in [-1,1];
    infeasible input returns math.inf rather than raising.
    """
    if epsilon <= 0.0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    ops = fem.mesh_operators(u.mesh)
    psi_vals = potential.psi(u.coeffs)
    if np.any(np.isinf(psi_vals)):
        return math.inf
    grad_part = 0.5 * epsilon * fem.inner(ops.stiffness, u.coeffs, u.coeffs)
    well_part = float(ops.lumped @ psi_vals) / epsilon
    return grad_part + well_part


def _energy_from_state(
    y: np.ndarray,
    u: FeFunction,
    y_d: FeFunction,
    params: ModelParams,
    potential: Potential,
) -> float:
    """Total energy given the precomputed blurred state y = S u."""
    gl = ginzburg_landau(u, params.epsilon, potential)
    if math.isinf(gl):
        return math.inf
    ops = fem.mesh_operators(u.mesh)
    misfit = fem.l2_norm(ops.mass, y - y_d.coeffs)
    return 0.5 * misfit**2 + sigma_eff(params.sigma, potential) * gl


def total_energy(
    u: FeFunction,
    y_d: FeFunction,
    blur_op: BlurOperator,
    params: ModelParams,
    potential: Potential,
) -> float:
    """Fidelity-plus-interface energy 0.5*||S u - y_d||^2 + sigma_eff*G_eps(u)."""
    if u.mesh is not y_d.mesh:
        raise ValueError("u and y_d live on different meshes")
    gl = ginzburg_landau(u, params.epsilon, potential)
    if math.isinf(gl):
        return math.inf
    y = blur_op.solve_coeffs(u.coeffs)
    ops = fem.mesh_operators(u.mesh)
    misfit = fem.l2_norm(ops.mass, y - y_d.coeffs)
    return 0.5 * misfit**2 + sigma_eff(params.sigma, potential) * gl


def parameter_heuristics(
    omega: float,
    potential: Potential,
    alpha: float,
    gamma: float = 0.0,
    max_iters: int = 10000,
) -> ModelParams:
    """Fill model/approximation/iteration parameters from the feature width.

    sigma = omega/80, epsilon = omega/(4*pi) (interface width a quarter of
    the smallest feature), h = omega/32 (8 grid cells per interface), and
    the per-potential rho/tol defaults. alpha and gamma describe the
    problem and are the caller's to provide.
    """
    if omega <= 0.0:
        raise ValueError(f"omega must be positive, got {omega}")
    return ModelParams(
        alpha=alpha,
        gamma=gamma,
        sigma=omega / 80.0,
        epsilon=omega / (4.0 * math.pi),
        h=omega / 32.0,
        rho=potential.default_rho,
        tol=potential.default_tol,
        max_iters=max_iters,
    )
