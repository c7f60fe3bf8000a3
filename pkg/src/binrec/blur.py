"""Discrete blurring operator: the Neumann elliptic solve y - a*Laplace(y) = u.

The operator maps a P1 function u to the P1 solution y of
(alpha*K + M) y = M u, is self-adjoint in the mass inner product, preserves
constants, and is a contraction in L2 with constant 1/(1 + alpha/C_p).
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from . import fem
from .fem import FeFunction, NumericalError
from .mesh import Mesh

__all__ = ["BlurOperator"]

DEFAULT_POINCARE_CONSTANT = 1.0 / math.pi


@dataclass(eq=False)
class BlurOperator:
    """Blurring by strength ``alpha`` on a fixed mesh.

    The system matrix alpha*K + M is assembled once at construction and
    shared by all solves; instances are immutable and safe for concurrent
    apply() calls.
    """

    mesh: Mesh
    alpha: float
    poincare_constant: float = DEFAULT_POINCARE_CONSTANT
    system: sp.csr_matrix = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.alpha <= 0.0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.poincare_constant <= 0.0:
            raise ValueError(
                f"poincare_constant must be positive, got {self.poincare_constant}"
            )
        ops = fem.mesh_operators(self.mesh)
        self.system = (self.alpha * ops.stiffness + ops.mass).tocsr()
        # the system is reused for every solve of a recovery run, so keep
        # its sparse LU factorization alongside
        self._solve = sla.factorized(self.system.tocsc())

    def stability_constant(self) -> float:
        """Contraction constant 1/(1 + alpha/C_p) of the L2 stability bound."""
        return 1.0 / (1.0 + self.alpha / self.poincare_constant)

    def solve_coeffs(self, load: np.ndarray) -> np.ndarray:
        """Solve (alpha*K + M) y = M*load for nodal values."""
        ops = fem.mesh_operators(self.mesh)
        y = self._solve(ops.mass @ load)
        if not np.all(np.isfinite(y)):
            raise NumericalError("blur solve produced non-finite values")
        return y

    def apply(self, u: FeFunction) -> FeFunction:
        """Blurred image y of u."""
        self._check_mesh(u)
        return FeFunction(self.mesh, self.solve_coeffs(u.coeffs))

    def adjoint_chain(
        self, u_prev: FeFunction, y_d: FeFunction
    ) -> tuple[FeFunction, FeFunction]:
        """State y = S u_prev and adjoint p solving (alpha*K + M) p = M (y - y_d).

        p is the discrete representation of S*(S u_prev - y_d).
        """
        self._check_mesh(u_prev)
        self._check_mesh(y_d)
        y = self.solve_coeffs(u_prev.coeffs)
        p = self.solve_coeffs(y - y_d.coeffs)
        return FeFunction(self.mesh, y), FeFunction(self.mesh, p)

    def _check_mesh(self, u: FeFunction) -> None:
        if u.mesh is not self.mesh:
            raise ValueError("function lives on a different mesh than the operator")
