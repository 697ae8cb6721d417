"""Robust mean-square stability certificates for open quadratic quantum systems."""

from .model import (
    DimensionMismatchError,
    DoubledConstants,
    LinearNominalSystem,
    PolynomialPerturbation,
    QuadraticPerturbation,
    StructuredP,
    Violation,
    assemble_doubled,
    doubled_J,
    doubled_Sigma,
    validate,
)
from .sbr_analysis import (
    NotHurwitzError,
    QmiInfeasibleError,
    StabilityCertificate,
    certify_polynomial,
    certify_quadratic,
    drift_matrix,
    hinf_norm,
    solve_bounded_real_qmi,
)

__version__ = "0.1.0"

__all__ = [
    "DimensionMismatchError",
    "DoubledConstants",
    "LinearNominalSystem",
    "NotHurwitzError",
    "PolynomialPerturbation",
    "QmiInfeasibleError",
    "QuadraticPerturbation",
    "StabilityCertificate",
    "StructuredP",
    "Violation",
    "assemble_doubled",
    "certify_polynomial",
    "certify_quadratic",
    "doubled_J",
    "doubled_Sigma",
    "drift_matrix",
    "hinf_norm",
    "solve_bounded_real_qmi",
    "validate",
]
