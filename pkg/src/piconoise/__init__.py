"""Voxelwise noise-variance and g-factor estimation for MRI-style reconstructions.

Stochastic covariance probing (PICO) for linear and TV-regularized
reconstructions, a pseudo multiple replica baseline, closed-form SENSE
variance and dense oracles for small systems.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    FormatError,
    IoError,
    NumericError,
    PicoError,
)
from .estimators import (  # noqa: E402
    EstimatorRun,
    ProbeFamily,
    VarianceMap,
    analytical_sense,
    draw_probe,
    oracle_diag,
    pico_jacobian,
    pico_linear,
    pmr,
)
from .operators import EncodingOperator, NormalOperator, power_method_norm  # noqa: E402
from .solvers import ReconSpec, cg_solve, fista_jvp, fista_tv, reconstruct_linear  # noqa: E402

__all__ = [
    "ConfigError",
    "EncodingOperator",
    "EstimatorRun",
    "FormatError",
    "IoError",
    "NormalOperator",
    "NumericError",
    "PicoError",
    "ProbeFamily",
    "ReconSpec",
    "VarianceMap",
    "analytical_sense",
    "cg_solve",
    "draw_probe",
    "fista_jvp",
    "fista_tv",
    "oracle_diag",
    "pico_jacobian",
    "pico_linear",
    "pmr",
    "power_method_norm",
    "reconstruct_linear",
]
