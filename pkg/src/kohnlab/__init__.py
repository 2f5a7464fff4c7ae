"""Kohn variational scattering workbench for a model radial problem."""
from .algebra import (
    CoefficientExtractionError,
    DetCoefficients,
    DomainError,
    SingularSystemError,
    extract_det_coefficients,
    kohn_system,
    theta_invariance_check,
)
from .kohn_complex import equivalence_check, solve_complex
from .kohn_real import DegenerateError, eta_via_determinants, optimize_tau, slope, solve_generalized
from .lmatrix import decompose, eta_via_L
from .model import AssemblyError, BasisSet, ElementTable, Potential, RadialProblem, assemble_elements
from .oracle import exact_phase_shift, square_well_phase_shift
from .scanner import ScanRow, ScanSpec, run_scan

__version__ = "0.1.0"

__all__ = [
    "AssemblyError", "BasisSet", "CoefficientExtractionError", "DegenerateError",
    "DetCoefficients", "DomainError", "ElementTable", "Potential", "RadialProblem",
    "ScanRow", "ScanSpec", "SingularSystemError", "assemble_elements", "decompose",
    "equivalence_check", "eta_via_L", "eta_via_determinants", "exact_phase_shift",
    "extract_det_coefficients", "kohn_system", "optimize_tau", "run_scan", "slope",
    "solve_complex", "solve_generalized", "square_well_phase_shift",
    "theta_invariance_check",
]
