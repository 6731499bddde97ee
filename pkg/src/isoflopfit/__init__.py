"""Fit compute-optimal scaling laws to IsoFLOP data.

Three estimators share one loss surface ``L = E + A N^-alpha + B D^-beta``:
Approach 2 (per-budget parabolas then power laws), direct five-parameter
fits, and variable projection over the two exponents (VPNLS).
"""

__version__ = "0.1.0"

from .approach2 import fit_approach2, run_approach2, vertex_shift_oracle
from .csvio import ingest_csv, write_points_csv
from .data import FitResult, IsoflopPoints
from .direct import DirectFitConfig, fit_direct
from .errors import (
    AllocationUndefinedError, ConfigError, DataError, DomainError, FitError,
    IsoflopError, NnlsConvergenceError, UnreachableLossError,
)
from .metrics import CostModel, bootstrap_ci, dcl, hessian_condition, residual_tests
from .model import AllocationLaw, LossSurface, allocation_law, get_surface, optimal_point
from .qc import QcConfig, run_qc
from .simulate import SweepConfig, build_experiment, run_method, run_sweep
from .vpnls import VpnlsConfig, fit_vpnls

__all__ = [
    "__version__", "LossSurface", "AllocationLaw", "get_surface", "allocation_law",
    "optimal_point", "IsoflopPoints", "FitResult", "fit_approach2", "run_approach2",
    "vertex_shift_oracle", "DirectFitConfig", "fit_direct", "VpnlsConfig", "fit_vpnls",
    "build_experiment", "run_method", "SweepConfig", "run_sweep", "QcConfig", "run_qc",
    "CostModel", "dcl", "bootstrap_ci", "residual_tests", "hessian_condition",
    "ingest_csv", "write_points_csv", "IsoflopError", "DomainError", "AllocationUndefinedError",
    "UnreachableLossError", "DataError", "FitError", "NnlsConvergenceError", "ConfigError",
]
