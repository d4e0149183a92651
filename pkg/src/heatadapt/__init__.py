"""Adaptive Radau IIA time stepping for parabolic problems, with Laplace-domain model reduction."""

__version__ = "0.1.0"

from .errors import InvalidArgumentError, NumericalFailureError  # noqa: E402
from .fem2d import assemble_fem, project_H1, project_L2, unit_square_mesh  # noqa: E402
from .gelfand import DiscreteSystem, eigendecompose  # noqa: E402
from .laplace_mor import build_reduced_basis, build_snapshots, epsilon_M, mor_pipeline, reduce_system  # noqa: E402
from .petrov import assemble_pg, infsup_constant  # noqa: E402
from .radau import ModalSolution, adaptive_loop, estimate, solve_time, xnorm_error  # noqa: E402
from .sinc import SincGrid, sinc_interpolate, sinc_quadrature  # noqa: E402
from .time_mesh import TimeMesh, doerfler_mark, refine, trisect, uniform_mesh  # noqa: E402

__all__ = [
    "__version__",
    "InvalidArgumentError",
    "NumericalFailureError",
    "DiscreteSystem",
    "eigendecompose",
    "TimeMesh",
    "uniform_mesh",
    "refine",
    "trisect",
    "doerfler_mark",
    "solve_time",
    "estimate",
    "adaptive_loop",
    "ModalSolution",
    "xnorm_error",
    "assemble_pg",
    "infsup_constant",
    "unit_square_mesh",
    "assemble_fem",
    "project_L2",
    "project_H1",
    "SincGrid",
    "sinc_quadrature",
    "sinc_interpolate",
    "build_snapshots",
    "build_reduced_basis",
    "epsilon_M",
    "reduce_system",
    "mor_pipeline",
]
