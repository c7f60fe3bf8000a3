"""Uniform simplicial meshes of the unit interval and unit square.

1D meshes partition [0,1] into equal intervals; 2D meshes split a structured
(n+1)x(n+1) node grid of the unit square into right triangles along the
bottom-left to top-right diagonal of each cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["Mesh", "build_interval_mesh", "build_square_mesh", "cells_for_target_h"]


@dataclass(eq=False)
class Mesh:
    """Simplicial grid on [0,1]^dim.

    ``nodes`` has shape (n_nodes, dim); ``elements`` has shape
    (n_elements, dim+1) and indexes into ``nodes``. ``h`` is the maximal
    element diameter. Instances are immutable after construction (the
    arrays are marked read-only) and safe to share across threads.
    """

    dim: int
    nodes: np.ndarray
    elements: np.ndarray
    h: float
    # lazily populated cache of assembled operators, see fem.mesh_operators
    _ops: object = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.nodes = np.ascontiguousarray(self.nodes, dtype=np.float64)
        self.elements = np.ascontiguousarray(self.elements, dtype=np.int64)
        self.nodes.flags.writeable = False
        self.elements.flags.writeable = False

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    def element_measures(self) -> np.ndarray:
        """Lengths (1D) or areas (2D) of all elements, shape (n_elements,)."""
        verts = self.nodes[self.elements]
        if self.dim == 1:
            return np.abs(verts[:, 1, 0] - verts[:, 0, 0])
        e1 = verts[:, 1] - verts[:, 0]
        e2 = verts[:, 2] - verts[:, 0]
        return 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def build_interval_mesh(n_cells: int) -> Mesh:
    """Uniform mesh of [0,1] with ``n_cells`` intervals (n_cells+1 nodes)."""
    if n_cells < 1:
        raise ValueError(f"n_cells must be >= 1, got {n_cells}")
    x = np.linspace(0.0, 1.0, n_cells + 1)
    nodes = x[:, None]
    elements = np.column_stack([np.arange(n_cells), np.arange(1, n_cells + 1)])
    return Mesh(dim=1, nodes=nodes, elements=elements, h=1.0 / n_cells)


def build_square_mesh(n_cells_per_side: int) -> Mesh:
    """Structured triangulation of the unit square.

    Each of the n^2 grid cells is split into two triangles along the
    bottom-left to top-right diagonal. Node i of the grid point (ix, iy)
    is i = iy*(n+1) + ix, with x varying fastest.
    """
    n = n_cells_per_side
    if n < 1:
        raise ValueError(f"n_cells_per_side must be >= 1, got {n}")
    side = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(side, side)  # row index = iy
    nodes = np.column_stack([xx.ravel(), yy.ravel()])

    elements = np.empty((2 * n * n, 3), dtype=np.int64)
    k = 0
    for iy in range(n):
        for ix in range(n):
            v00 = iy * (n + 1) + ix
            v10 = v00 + 1
            v01 = v00 + (n + 1)
            v11 = v01 + 1
            # diagonal v00 -- v11; counterclockwise vertex order
            elements[k] = (v00, v10, v11)
            elements[k + 1] = (v00, v11, v01)
            k += 2
    return Mesh(dim=2, nodes=nodes, elements=elements, h=math.sqrt(2.0) / n)


def cells_for_target_h(h: float, dim: int) -> int:
    """Smallest cell count whose mesh is at least as fine as the target h.

    Conservative rounding: the built mesh is never coarser than requested.
    """
    if h <= 0.0:
        raise ValueError(f"target h must be positive, got {h}")
    if dim == 1:
        return max(1, math.ceil(1.0 / h))
    if dim == 2:
        return max(1, math.ceil(math.sqrt(2.0) / h))
    raise ValueError(f"dim must be 1 or 2, got {dim}")
