"""Recovery of binary (+-1 valued) functions from blurred, noisy data.

The model minimizes a least-squares fidelity term plus a phase-field
(Ginzburg-Landau) relaxation of perimeter regularisation, discretised
with P1 finite elements on the unit interval or unit square, and solved
by energy-decreasing convex-splitting iterations for either the smooth
double-well or the double-obstacle potential.
"""

from .blur import BlurOperator
from .fem import FeFunction, NumericalError
from .mesh import Mesh, build_interval_mesh, build_square_mesh
from .phasefield import (
    DOUBLE_OBSTACLE,
    SMOOTH_DOUBLE_WELL,
    ModelParams,
    ginzburg_landau,
    parameter_heuristics,
    potential_by_name,
    total_energy,
)
from .solver import (
    RecoveryResult,
    do_step,
    dw_step,
    gradient_flow_run,
    run_recovery,
    stationarity_residual,
)
from .experiments import (
    Barcode,
    Blob,
    Blocks,
    NoiseSpec,
    RasterImage,
    averaged_error,
    barcode_from_units,
    error_metric,
    initial_guess,
    min_feature_width,
    project_binary,
    rasterize,
    synthesize_data,
    tv_binary,
)

__version__ = "0.1.0"

__all__ = [
    "BlurOperator",
    "FeFunction",
    "NumericalError",
    "Mesh",
    "build_interval_mesh",
    "build_square_mesh",
    "DOUBLE_OBSTACLE",
    "SMOOTH_DOUBLE_WELL",
    "ModelParams",
    "ginzburg_landau",
    "parameter_heuristics",
    "potential_by_name",
    "total_energy",
    "RecoveryResult",
    "do_step",
    "dw_step",
    "gradient_flow_run",
    "run_recovery",
    "stationarity_residual",
    "Barcode",
    "Blob",
    "Blocks",
    "NoiseSpec",
    "RasterImage",
    "averaged_error",
    "barcode_from_units",
    "error_metric",
    "initial_guess",
    "min_feature_width",
    "project_binary",
    "rasterize",
    "synthesize_data",
    "tv_binary",
]
