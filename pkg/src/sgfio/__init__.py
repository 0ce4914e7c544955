"""Numerical laboratory for the SG Fourier-integral-operator calculus."""

__version__ = "0.1.0"

from .symbols import SampleGrid, SgSymbol, check_elliptic, check_order, seminorm
from .phase import ExprPhase, GridPhase, certify_regular, j_seminorm
from .eikonal import solve_eikonal, verify_backward, verify_forward
from .multiproduct import PhaseChain, det_bound_check, multiproduct, solve_critical
from .quantize import (GridFunction, OperatorMatrix, apply_type1, apply_type2,
                       compose_chain, compose_extract_symbol, fourier,
                       inverse_fourier, invert_Iphi, op_matrix, sobolev_norm)
from .hyperbolic import (HyperbolicSystem, build_phases, picard_series,
                         reference_solve, solve_cauchy)

__all__ = [
    "__version__",
    "SampleGrid", "SgSymbol", "seminorm", "check_order", "check_elliptic",
    "ExprPhase", "GridPhase", "certify_regular", "j_seminorm",
    "solve_eikonal", "verify_forward", "verify_backward",
    "PhaseChain", "solve_critical", "multiproduct", "det_bound_check",
    "GridFunction", "OperatorMatrix", "fourier", "inverse_fourier",
    "apply_type1", "apply_type2", "op_matrix", "sobolev_norm",
    "invert_Iphi", "compose_extract_symbol", "compose_chain",
    "HyperbolicSystem", "build_phases", "picard_series", "solve_cauchy",
    "reference_solve",
]
