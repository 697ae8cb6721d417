"""System and perturbation descriptions in doubled-up form.

The state vector throughout is x = [a; a#] for n bosonic modes, so every
matrix here is built from n-by-n blocks arranged as [[A, B], [B#, A#]].
Matrices with that block layout commute with the mode/conjugate swap and
are the only ones that describe physical (self-adjoint preserving) data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

#: relative Frobenius tolerance for structural identities (Hermiticity,
#: symmetry, conjugation-block layout)
TOL_STRUCT = 1e-9

#: default degree cap for polynomial perturbations
DEFAULT_MAX_DEGREE = 8


class DimensionMismatchError(ValueError):
    """Raised when two fields of a description disagree in shape."""


def doubled_J(n: int) -> np.ndarray:
    """Commutation matrix diag(I_n, -I_n) for x = [a; a#]."""
    return np.diag(np.concatenate([np.ones(n), -np.ones(n)])).astype(complex)


def doubled_Sigma(n: int) -> np.ndarray:
    """Block swap [[0, I_n], [I_n, 0]] exchanging a and a#."""
    eye = np.eye(n)
    zero = np.zeros((n, n))
    return np.block([[zero, eye], [eye, zero]]).astype(complex)


def doubled_block(top_left: np.ndarray, top_right: np.ndarray) -> np.ndarray:
    """Assemble [[A, B], [A and B conjugated in the second row]]."""
    A = np.asarray(top_left, dtype=complex)
    B = np.asarray(top_right, dtype=complex)
    return np.block([[A, B], [B.conj(), A.conj()]])


def conjugation_defect(X: np.ndarray, Sigma: np.ndarray) -> float:
    """Relative Frobenius distance of X from Sigma X# Sigma."""
    X = np.asarray(X, dtype=complex)
    d = np.linalg.norm(X - Sigma @ X.conj() @ Sigma)
    return d / max(1.0, np.linalg.norm(X))


@dataclass(frozen=True)
class DoubledConstants:
    """The constant matrices J = diag(I, -I) and Sigma = [[0, I], [I, 0]]."""

    J: np.ndarray
    Sigma: np.ndarray

    @classmethod
    def for_modes(cls, n: int) -> "DoubledConstants":
        return cls(J=doubled_J(n), Sigma=doubled_Sigma(n))


def _freeze(obj, **arrays) -> None:
    for name, value in arrays.items():
        arr = np.array(value, dtype=complex)
        arr.setflags(write=False)
        object.__setattr__(obj, name, arr)


@dataclass(frozen=True)
class LinearNominalSystem:
    """Nominal quadratic Hamiltonian and linear coupling.

    H1 = (1/2) x^dag M x with M = [[M1, M2], [M2#, M1#]], and coupling
    vector L = [N1 N2] x.  M1 must be Hermitian and M2 symmetric for H1
    to be self-adjoint.
    """

    M1: np.ndarray
    M2: np.ndarray
    N1: np.ndarray
    N2: np.ndarray

    def __post_init__(self):
        _freeze(self, M1=self.M1, M2=self.M2, N1=self.N1, N2=self.N2)

    @property
    def n_modes(self) -> int:
        return self.M1.shape[0]

    @property
    def n_channels(self) -> int:
        return self.N1.shape[0]

    def doubled_M(self) -> np.ndarray:
        return doubled_block(self.M1, self.M2)

    def doubled_N(self) -> np.ndarray:
        return doubled_block(self.N1, self.N2)


@dataclass(frozen=True)
class QuadraticPerturbation:
    """Uncertain quadratic Hamiltonian acting through channels zeta = E x.

    The perturbation is H2 = (1/2) [zeta^dag zeta^T] Delta [zeta; zeta#]
    with Delta = [[Delta1, Delta2], [Delta2#, Delta1#]], Delta1 Hermitian,
    Delta2 symmetric and the operator-norm bound ||Delta|| <= 2/gamma.
    """

    E1: np.ndarray
    E2: np.ndarray
    Delta1: np.ndarray
    Delta2: np.ndarray
    gamma: float

    def __post_init__(self):
        _freeze(self, E1=self.E1, E2=self.E2, Delta1=self.Delta1, Delta2=self.Delta2)

    @property
    def n_channels(self) -> int:
        return self.E1.shape[0]

    def doubled_E(self) -> np.ndarray:
        return doubled_block(self.E1, self.E2)

    def doubled_Delta(self) -> np.ndarray:
        return doubled_block(self.Delta1, self.Delta2)


@dataclass(frozen=True)
class PolynomialPerturbation:
    """Uncertain scalar polynomial Hamiltonian in zeta = E1row a + E2row a#.

    H2 = sum over (k, l) of S_kl zeta^k (zeta*)^l.  Self-adjointness
    requires S_kl = conj(S_lk).  gamma, delta1, delta2 parametrize the
    sector bounds on the first and second formal derivatives.
    """

    E1row: np.ndarray
    E2row: np.ndarray
    coeffs: dict = field(default_factory=dict)
    gamma: float = 1.0
    delta1: float = 0.0
    delta2: float = 0.0
    max_degree: int = DEFAULT_MAX_DEGREE

    def __post_init__(self):
        _freeze(self, E1row=np.atleast_2d(self.E1row), E2row=np.atleast_2d(self.E2row))
        object.__setattr__(
            self,
            "coeffs",
            {(int(k), int(l)): complex(v) for (k, l), v in self.coeffs.items()},
        )

    def doubled_row(self) -> np.ndarray:
        """The 1-by-2n row [E1row, E2row] picking zeta out of x."""
        return np.hstack([self.E1row, self.E2row])

    def degree(self) -> int:
        if not self.coeffs:
            return 0
        return max(k + l for k, l in self.coeffs)


@dataclass(frozen=True)
class StructuredP:
    """Certificate matrix P = [[P1, P2], [P2#, P1#]], Hermitian positive definite."""

    P1: np.ndarray
    P2: np.ndarray

    def __post_init__(self):
        _freeze(self, P1=self.P1, P2=self.P2)

    @property
    def n_modes(self) -> int:
        return self.P1.shape[0]

    def full(self) -> np.ndarray:
        return doubled_block(self.P1, self.P2)

    @classmethod
    def from_full(cls, P: np.ndarray) -> "StructuredP":
        n = P.shape[0] // 2
        return cls(P1=P[:n, :n], P2=P[:n, n:])

    def smallest_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.full()).min())


def random_structured_positive(n_modes: int, rng: np.random.Generator) -> StructuredP:
    """Draw a random positive definite P with the doubled block structure.

    Used wherever an arbitrary certificate-shaped matrix is needed, e.g.
    exercising operator identities that must hold for every admissible P.
    """
    n = n_modes
    X = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    Y = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    P1 = X @ X.conj().T + 0.1 * np.eye(n)
    P2 = 0.5 * (Y + Y.T)
    full = doubled_block(P1, P2)
    low = float(np.linalg.eigvalsh(full).min())
    if low < 0.1:
        shift = 0.1 - low
        P1 = P1 + shift * np.eye(n)
    return StructuredP(P1=P1, P2=P2)


@dataclass(frozen=True)
class Violation:
    """One failed invariant: which field, what was expected, how badly."""

    field_name: str
    message: str
    residual: float

    def __str__(self):
        return f"{self.field_name}: {self.message} (residual {self.residual:.3e})"


Perturbation = Union[QuadraticPerturbation, PolynomialPerturbation]


def _check_square(violations_out, name, A, n):
    if A.shape != (n, n):
        raise DimensionMismatchError(f"{name} must be {n}x{n}, got {A.shape}")


def _hermitian_defect(A):
    return np.linalg.norm(A - A.conj().T) / max(1.0, np.linalg.norm(A))


def _symmetric_defect(A):
    return np.linalg.norm(A - A.T) / max(1.0, np.linalg.norm(A))


def validate(obj, tol: float = TOL_STRUCT) -> list:
    """Check the structural invariants of a description object.

    Returns a list of Violation records (empty when everything holds).
    Shape inconsistencies raise DimensionMismatchError instead, naming
    the offending field pair.
    """
    v: list = []
    if isinstance(obj, LinearNominalSystem):
        n = obj.M1.shape[0]
        _check_square(v, "M1", obj.M1, n)
        _check_square(v, "M2", obj.M2, n)
        if obj.N1.shape != obj.N2.shape:
            raise DimensionMismatchError(
                f"N1 and N2 must share a shape, got {obj.N1.shape} vs {obj.N2.shape}"
            )
        if obj.N1.ndim != 2 or obj.N1.shape[1] != n:
            raise DimensionMismatchError(
                f"N1 must have {n} columns to match M1, got shape {obj.N1.shape}"
            )
        d = _hermitian_defect(obj.M1)
        if d > tol:
            v.append(Violation("M1", "must be Hermitian", d))
        d = _symmetric_defect(obj.M2)
        if d > tol:
            v.append(Violation("M2", "must be symmetric", d))
    elif isinstance(obj, QuadraticPerturbation):
        mz = obj.E1.shape[0]
        if obj.E1.shape != obj.E2.shape:
            raise DimensionMismatchError(
                f"E1 and E2 must share a shape, got {obj.E1.shape} vs {obj.E2.shape}"
            )
        _check_square(v, "Delta1", obj.Delta1, mz)
        _check_square(v, "Delta2", obj.Delta2, mz)
        if obj.gamma <= 0:
            v.append(Violation("gamma", "must be positive", -float(obj.gamma)))
        d = _hermitian_defect(obj.Delta1)
        if d > tol:
            v.append(Violation("Delta1", "must be Hermitian", d))
        d = _symmetric_defect(obj.Delta2)
        if d > tol:
            v.append(Violation("Delta2", "must be symmetric", d))
        if obj.gamma > 0:
            norm = np.linalg.norm(obj.doubled_Delta(), 2)
            bound = 2.0 / obj.gamma
            if norm > bound * (1.0 + 1e-12) + 1e-14:
                v.append(
                    Violation(
                        "Delta1/Delta2",
                        f"operator norm {norm:.6g} exceeds 2/gamma = {bound:.6g}",
                        norm - bound,
                    )
                )
    elif isinstance(obj, PolynomialPerturbation):
        if obj.E1row.shape != obj.E2row.shape:
            raise DimensionMismatchError(
                f"E1row and E2row must share a shape, got {obj.E1row.shape} vs {obj.E2row.shape}"
            )
        if obj.E1row.shape[0] != 1:
            raise DimensionMismatchError(
                f"E1row must be a single row, got shape {obj.E1row.shape}"
            )
        if obj.gamma <= 0:
            v.append(Violation("gamma", "must be positive", -float(obj.gamma)))
        for name in ("delta1", "delta2"):
            val = getattr(obj, name)
            if val < 0:
                v.append(Violation(name, "must be nonnegative", -float(val)))
        for (k, l), val in obj.coeffs.items():
            if k < 0 or l < 0:
                raise DimensionMismatchError(f"coefficient index ({k}, {l}) is negative")
            if k + l > obj.max_degree:
                v.append(
                    Violation(
                        "coeffs",
                        f"term ({k}, {l}) exceeds degree cap {obj.max_degree}",
                        float(k + l - obj.max_degree),
                    )
                )
            mirror = obj.coeffs.get((l, k), 0.0)
            d = abs(np.conj(mirror) - val)
            if d > tol * max(1.0, abs(val)):
                v.append(
                    Violation(
                        "coeffs",
                        f"S[{k},{l}] must equal conj(S[{l},{k}]) for a self-adjoint H2",
                        d,
                    )
                )
    elif isinstance(obj, StructuredP):
        n = obj.P1.shape[0]
        _check_square(v, "P1", obj.P1, n)
        _check_square(v, "P2", obj.P2, n)
        d = _hermitian_defect(obj.P1)
        if d > tol:
            v.append(Violation("P1", "must be Hermitian", d))
        d = _symmetric_defect(obj.P2)
        if d > tol:
            v.append(Violation("P2", "must be symmetric", d))
        if not v:
            lam = obj.smallest_eigenvalue()
            if lam <= 0:
                v.append(Violation("P1/P2", "full matrix must be positive definite", -lam))
    else:
        raise TypeError(f"validate does not handle {type(obj).__name__}")
    return v


@dataclass(frozen=True)
class DoubledSystem:
    """Doubled-up matrices ready for analysis.

    E is present for quadratic perturbations (2 m_z by 2n), Etilde for
    polynomial ones (1 by 2n).
    """

    M: np.ndarray
    N: np.ndarray
    J: np.ndarray
    Sigma: np.ndarray
    E: np.ndarray | None = None
    Etilde: np.ndarray | None = None
    Delta: np.ndarray | None = None


def assemble_doubled(system: LinearNominalSystem, pert: Perturbation | None = None) -> DoubledSystem:
    """Build the doubled-up matrices (M, N, J, Sigma, E or Etilde).

    Validates the inputs first and refuses to assemble on any violation.
    """
    problems = validate(system)
    if pert is not None:
        problems = problems + validate(pert)
    if problems:
        raise ValueError(
            "invalid description: " + "; ".join(str(p) for p in problems)
        )
    n = system.n_modes
    kw = {}
    if isinstance(pert, QuadraticPerturbation):
        if pert.E1.shape[1] != n:
            raise DimensionMismatchError(
                f"E1 must have {n} columns to match the system, got {pert.E1.shape}"
            )
        kw["E"] = pert.doubled_E()
        kw["Delta"] = pert.doubled_Delta()
    elif isinstance(pert, PolynomialPerturbation):
        if pert.E1row.shape[1] != n:
            raise DimensionMismatchError(
                f"E1row must have {n} columns to match the system, got {pert.E1row.shape}"
            )
        kw["Etilde"] = pert.doubled_row()
    return DoubledSystem(
        M=system.doubled_M(),
        N=system.doubled_N(),
        J=doubled_J(n),
        Sigma=doubled_Sigma(n),
        **kw,
    )
