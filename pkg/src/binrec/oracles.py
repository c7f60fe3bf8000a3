"""Independent dense reference implementations for small-instance checks.

Everything here is rebuilt from first principles with dense numpy linear
algebra and plain loops: element matrices from textbook formulas, blur
chains via numpy.linalg.solve, and the obstacle step via long projected
gradient descent from many random feasible starts. Nothing is shared with
the sparse/iterative production path, so agreement between the two is
meaningful. Intended for meshes with at most a few dozen nodes.
"""

from __future__ import annotations

import numpy as np

from .mesh import Mesh
from .phasefield import DOUBLE_OBSTACLE, SMOOTH_DOUBLE_WELL, ModelParams, sigma_eff

__all__ = [
    "dense_mass",
    "dense_stiffness",
    "dense_blur_chain",
    "dense_dw_step",
    "obstacle_objective",
    "projected_gradient_obstacle",
]


def dense_mass(mesh: Mesh) -> np.ndarray:
    n = mesh.n_nodes
    m = np.zeros((n, n))
    for element, measure in zip(mesh.elements, mesh.element_measures()):
        k = len(element)
        for a in range(k):
            for b in range(k):
                factor = 2.0 if a == b else 1.0
                if mesh.dim == 1:
                    m[element[a], element[b]] += factor * measure / 6.0
                else:
                    m[element[a], element[b]] += factor * measure / 12.0
    return m


def dense_stiffness(mesh: Mesh) -> np.ndarray:
    n = mesh.n_nodes
    kmat = np.zeros((n, n))
    for element in mesh.elements:
        verts = mesh.nodes[element]
        if mesh.dim == 1:
            length = abs(verts[1, 0] - verts[0, 0])
            local = np.array([[1.0, -1.0], [-1.0, 1.0]]) / length
        else:
            ones = np.ones((3, 1))
            jac = np.hstack([ones, verts])  # rows (1, x_i, y_i)
            area = 0.5 * abs(np.linalg.det(jac))
            grads = np.linalg.inv(jac)[1:, :]  # columns are grad(lambda_i)
            local = area * grads.T @ grads
        for a in range(len(element)):
            for b in range(len(element)):
                kmat[element[a], element[b]] += local[a, b]
    return kmat


def dense_blur_chain(
    mesh: Mesh, alpha: float, u_prev: np.ndarray, y_d: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Forward and adjoint elliptic solves by dense direct solve."""
    m = dense_mass(mesh)
    a_blur = alpha * dense_stiffness(mesh) + m
    y = np.linalg.solve(a_blur, m @ u_prev)
    p = np.linalg.solve(a_blur, m @ (y - y_d))
    return y, p


def _lumped(mesh: Mesh) -> np.ndarray:
    return dense_mass(mesh).sum(axis=1)


def dense_dw_step(
    mesh: Mesh, params: ModelParams, u_prev: np.ndarray, y_d: np.ndarray
) -> np.ndarray:
    """Reference linearised double-well step by dense direct solve."""
    m = dense_mass(mesh)
    k = dense_stiffness(mesh)
    ml = _lumped(mesh)
    sig = sigma_eff(params.sigma, SMOOTH_DOUBLE_WELL)
    _, p = dense_blur_chain(mesh, params.alpha, u_prev, y_d)
    lhs = (
        params.rho * m
        + sig * params.epsilon * k
        + (sig / params.epsilon) * (np.diag(ml * u_prev**2) - np.diag(ml))
    )
    rhs = params.rho * (m @ u_prev) - m @ p
    return np.linalg.solve(lhs, rhs)


def _obstacle_system(
    mesh: Mesh, params: ModelParams, u_prev: np.ndarray, y_d: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    m = dense_mass(mesh)
    k = dense_stiffness(mesh)
    ml = _lumped(mesh)
    sig = sigma_eff(params.sigma, DOUBLE_OBSTACLE)
    _, p = dense_blur_chain(mesh, params.alpha, u_prev, y_d)
    a = np.diag((params.rho - sig / params.epsilon) * ml) + sig * params.epsilon * k
    b = params.rho * (ml * u_prev) - m @ p
    return a, b


def obstacle_objective(
    mesh: Mesh, params: ModelParams, u_prev: np.ndarray, y_d: np.ndarray, u: np.ndarray
) -> float:
    """Quadratic objective 0.5*u.A.u - b.u of one obstacle step."""
    a, b = _obstacle_system(mesh, params, u_prev, y_d)
    return float(0.5 * u @ (a @ u) - b @ u)


def projected_gradient_obstacle(
    mesh: Mesh,
    params: ModelParams,
    u_prev: np.ndarray,
    y_d: np.ndarray,
    n_iters: int = 100_000,
    n_starts: int = 20,
    seed: int = 0,
) -> np.ndarray:
    """Brute-force minimizer of the obstacle step over the box [-1,1]^n.

    Projected gradient descent with step 1/lambda_max(A) from ``n_starts``
    random feasible starts plus u_prev; returns the best iterate found.
    """
    a, b = _obstacle_system(mesh, params, u_prev, y_d)
    step = 1.0 / float(np.max(np.linalg.eigvalsh(a)))
    rng = np.random.default_rng(seed)
    starts = np.vstack(
        [np.clip(u_prev, -1.0, 1.0)]
        + [rng.uniform(-1.0, 1.0, size=len(b)) for _ in range(n_starts)]
    )

    x = starts
    for _ in range(n_iters):
        x = np.clip(x - step * (x @ a - b), -1.0, 1.0)
    values = 0.5 * np.einsum("ij,jk,ik->i", x, a, x) - x @ b
    return x[int(np.argmin(values))]
