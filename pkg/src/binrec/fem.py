"""P1 finite element operators on simplicial meshes.

Assembles consistent mass, stiffness and lumped mass matrices, computes
L2 projections and norms, and solves SPD sparse systems with a
Jacobi-preconditioned conjugate gradient method. All P1 x P1 products use
exact element formulas; analytic data is projected with degree-4+ Gauss
quadrature so quadrature error never enters the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp

from .mesh import Mesh

__all__ = [
    "FeFunction",
    "NumericalError",
    "assemble_mass",
    "assemble_stiffness",
    "assemble_lumped_mass",
    "mesh_operators",
    "interpolate",
    "l2_project",
    "inner",
    "l2_norm",
    "solve_spd",
]


class NumericalError(RuntimeError):
    """A linear or nonlinear solve failed to reach its tolerance."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


@dataclass(eq=False)
class FeFunction:
    """Piecewise-linear function given by its nodal values on a mesh."""

    mesh: Mesh
    coeffs: np.ndarray

    def __post_init__(self) -> None:
        self.coeffs = np.ascontiguousarray(self.coeffs, dtype=np.float64)
        if self.coeffs.shape != (self.mesh.n_nodes,):
            raise ValueError(
                f"coefficient vector has shape {self.coeffs.shape}, "
                f"mesh has {self.mesh.n_nodes} nodes"
            )
        self.coeffs.flags.writeable = False

    def with_coeffs(self, coeffs: np.ndarray) -> "FeFunction":
        """New function on the same mesh with the given nodal values."""
        return FeFunction(self.mesh, coeffs)


# Gauss-Legendre points/weights on [0,1], exact for degree 5
_GAUSS_1D = (
    np.array([0.5 * (1.0 - np.sqrt(0.6)), 0.5, 0.5 * (1.0 + np.sqrt(0.6))]),
    np.array([5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0]),
)

# 6-point degree-4 rule on the reference triangle, barycentric coordinates
_a1, _b1, _w1 = 0.445948490915965, 0.108103018168070, 0.223381589678011
_a2, _b2, _w2 = 0.091576213509771, 0.816847572980459, 0.109951743655322
_GAUSS_TRI = (
    np.array(
        [
            [_a1, _a1, _b1],
            [_a1, _b1, _a1],
            [_b1, _a1, _a1],
            [_a2, _a2, _b2],
            [_a2, _b2, _a2],
            [_b2, _a2, _a2],
        ]
    ),
    np.array([_w1, _w1, _w1, _w2, _w2, _w2]),
)


def _coo_to_csr(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    """Assemble per-element local matrices (n_el, k, k) into global CSR."""
    conn = mesh.elements
    k = conn.shape[1]
    rows = np.repeat(conn, k, axis=1).ravel()
    cols = np.tile(conn, (1, k)).ravel()
    vals = local.reshape(mesh.n_elements, k * k).ravel()
    n = mesh.n_nodes
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def assemble_mass(mesh: Mesh) -> sp.csr_matrix:
    """Consistent mass matrix M with u.M.v = integral of u*v, exact for P1."""
    measures = mesh.element_measures()
    if mesh.dim == 1:
        ref = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    else:
        ref = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    local = measures[:, None, None] * ref[None, :, :]
    return _coo_to_csr(mesh, local)


def assemble_stiffness(mesh: Mesh) -> sp.csr_matrix:
    """Stiffness matrix K (pure Neumann): u.K.v = integral of grad u . grad v.

    Element diagonals are built as minus the row's off-diagonal sum, so
    constants lie in the kernel of every element matrix bit-exactly.
    """
    n_el = mesh.n_elements
    verts = mesh.nodes[mesh.elements]
    if mesh.dim == 1:
        inv_l = 1.0 / np.abs(verts[:, 1, 0] - verts[:, 0, 0])
        local = np.empty((n_el, 2, 2))
        local[:, 0, 1] = local[:, 1, 0] = -inv_l
        local[:, 0, 0] = local[:, 1, 1] = inv_l
        return _coo_to_csr(mesh, local)

    # grad(lambda_i) = (b_i, c_i) / (2A) with b_i = y_j - y_k, c_i = x_k - x_j
    x, y = verts[..., 0], verts[..., 1]
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    area4 = 2.0 * (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - 2.0 * (
        x[:, 2] - x[:, 0]
    ) * (y[:, 1] - y[:, 0])
    local = np.empty((n_el, 3, 3))
    for i in range(3):
        for j in range(i + 1, 3):
            kij = (b[:, i] * b[:, j] + c[:, i] * c[:, j]) / area4
            local[:, i, j] = kij
            local[:, j, i] = kij
    local[:, 0, 0] = -(local[:, 0, 1] + local[:, 0, 2])
    local[:, 1, 1] = -(local[:, 1, 0] + local[:, 1, 2])
    local[:, 2, 2] = -(local[:, 2, 0] + local[:, 2, 1])
    return _coo_to_csr(mesh, local)


def assemble_lumped_mass(mesh: Mesh) -> sp.csr_matrix:
    """Diagonal lumped mass matrix: row sums of the consistent mass."""
    m = np.asarray(assemble_mass(mesh).sum(axis=1)).ravel()
    return sp.diags(m).tocsr()


@dataclass(eq=False)
class MeshOperators:
    """Assembled operators for one mesh, built once and shared."""

    mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    lumped: np.ndarray  # diagonal of the lumped mass matrix

    def __post_init__(self) -> None:
        self.lumped.flags.writeable = False


def mesh_operators(mesh: Mesh) -> MeshOperators:
    """Mass/stiffness/lumped-mass for a mesh, cached on the mesh object."""
    ops = mesh._ops
    if ops is None:
        mass = assemble_mass(mesh)
        lumped = np.asarray(mass.sum(axis=1)).ravel()
        ops = MeshOperators(mass=mass, stiffness=assemble_stiffness(mesh), lumped=lumped)
        mesh._ops = ops
    return ops


def _quad_points(mesh: Mesh):
    """Physical quadrature points and weights per element.

    Returns (points, weights, lambdas): points[q] has shape (n_el, dim),
    weights sum to 1 and are relative to the element measure, lambdas[q]
    are the barycentric coordinates of point q.
    """
    verts = mesh.nodes[mesh.elements]
    if mesh.dim == 1:
        t, w = _GAUSS_1D
        lambdas = np.column_stack([1.0 - t, t])
    else:
        lambdas, w = _GAUSS_TRI
    points = [np.einsum("k,nkd->nd", lam, verts) for lam in lambdas]
    return points, w, lambdas


def interpolate(mesh: Mesh, sampler) -> FeFunction:
    """Nodal interpolant of a pointwise function.

    ``sampler`` is called with coordinate arrays, one per dimension:
    ``sampler(x)`` in 1D, ``sampler(x, y)`` in 2D, vectorized.
    """
    vals = np.asarray(sampler(*mesh.nodes.T), dtype=np.float64)
    return FeFunction(mesh, np.broadcast_to(vals, (mesh.n_nodes,)).copy())


def l2_project(mesh: Mesh, sampler) -> FeFunction:
    """L2 projection of a pointwise function onto the P1 space.

    Solves M c = b with b_i = integral of phi_i * sampler, computed with
    element-wise Gauss quadrature (degree 5 in 1D, degree 4 in 2D).
    """
    measures = mesh.element_measures()
    points, weights, lambdas = _quad_points(mesh)
    b = np.zeros(mesh.n_nodes)
    for q, (pts, wq) in enumerate(zip(points, weights)):
        fvals = np.asarray(sampler(*pts.T), dtype=np.float64)
        fvals = np.broadcast_to(fvals, (mesh.n_elements,))
        contrib = measures * wq * fvals
        for k in range(mesh.elements.shape[1]):
            np.add.at(b, mesh.elements[:, k], lambdas[q][k] * contrib)
    ops = mesh_operators(mesh)
    coeffs = solve_spd(ops.mass, b)
    return FeFunction(mesh, coeffs)


def inner(matrix: sp.spmatrix, u: np.ndarray, v: np.ndarray) -> float:
    """Bilinear form u . A . v."""
    u = np.asarray(u)
    v = np.asarray(v)
    n = matrix.shape[0]
    if u.shape != (n,) or v.shape != (n,):
        raise ValueError(
            f"dimension mismatch: matrix is {matrix.shape}, "
            f"vectors are {u.shape} and {v.shape}"
        )
    return float(u @ (matrix @ v))


def l2_norm(mass: sp.spmatrix, u: np.ndarray) -> float:
    """L2 norm sqrt(u.M.u); clips the tiny negative values of exact zeros."""
    return float(np.sqrt(max(inner(mass, u, u), 0.0)))


@numba.njit(cache=True, nogil=True)
def _pcg_kernel(indptr, indices, data, inv_diag, b, x, tol, max_iter):  # pragma: no cover
    """Jacobi-preconditioned CG loop on CSR arrays, updating x in place.

    Returns (status, iterations, relative_residual) with status 0 on
    convergence, 1 on iteration-cap exhaustion, 2 on breakdown (the
    matrix is not SPD or values went non-finite).
    """
    n = b.shape[0]
    b_norm = 0.0
    for i in range(n):
        b_norm += b[i] * b[i]
    b_norm = np.sqrt(b_norm)

    r = np.empty(n)
    for i in range(n):
        acc = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            acc += data[k] * x[indices[k]]
        r[i] = b[i] - acc
    z = inv_diag * r
    p = z.copy()
    rz = 0.0
    res2 = 0.0
    for i in range(n):
        rz += r[i] * z[i]
        res2 += r[i] * r[i]
    res = np.sqrt(res2)

    threshold = tol * b_norm
    iterations = 0
    while res > threshold:
        if iterations >= max_iter:
            return 1, iterations, res / b_norm
        ap = np.empty(n)
        pap = 0.0
        for i in range(n):
            acc = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                acc += data[k] * p[indices[k]]
            ap[i] = acc
            pap += p[i] * acc
        if not np.isfinite(pap) or pap <= 0.0:
            return 2, iterations, res / b_norm
        alpha = rz / pap
        rz_new = 0.0
        res2 = 0.0
        for i in range(n):
            x[i] += alpha * p[i]
            r[i] -= alpha * ap[i]
            z[i] = inv_diag[i] * r[i]
            rz_new += r[i] * z[i]
            res2 += r[i] * r[i]
        beta = rz_new / rz
        for i in range(n):
            p[i] = z[i] + beta * p[i]
        rz = rz_new
        res = np.sqrt(res2)
        iterations += 1
    return 0, iterations, res / b_norm


def solve_spd(
    matrix: sp.spmatrix,
    rhs: np.ndarray,
    tol: float = 1e-10,
    max_iter: int | None = None,
    x0: np.ndarray | None = None,
) -> np.ndarray:
    """Solve an SPD sparse system by Jacobi-preconditioned CG.

    Terminates when the residual satisfies ||A x - b|| <= tol * ||b||;
    ``x0`` warm-starts the iteration. The caller guarantees A is SPD.

    Raises
    ------
    NumericalError
        If the iteration cap is exceeded or non-finite values appear;
        carries the final relative residual.
    """
    rhs = np.asarray(rhs, dtype=np.float64)
    n = rhs.shape[0]
    if matrix.shape != (n, n):
        raise ValueError(f"matrix {matrix.shape} does not match rhs of length {n}")
    if not np.all(np.isfinite(rhs)):
        raise NumericalError("right-hand side contains non-finite values")
    diag = matrix.diagonal()
    if np.any(diag <= 0.0) or not np.all(np.isfinite(diag)):
        raise NumericalError("matrix diagonal is not positive; system is not SPD")

    if float(np.linalg.norm(rhs)) == 0.0:
        return np.zeros(n)
    if max_iter is None:
        max_iter = 10 * n + 100

    csr = matrix if sp.issparse(matrix) and matrix.format == "csr" else sp.csr_matrix(matrix)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NumericalError("starting vector contains non-finite values")
    status, iterations, rel_res = _pcg_kernel(
        csr.indptr, csr.indices, csr.data, 1.0 / diag, rhs, x, tol, max_iter
    )
    if status == 0:
        return x
    if status == 1:
        raise NumericalError(
            f"CG did not converge in {iterations} iterations "
            f"(relative residual {rel_res:.3e})",
            residual=rel_res,
        )
    raise NumericalError(
        "CG breakdown; matrix may not be SPD", residual=rel_res
    )
