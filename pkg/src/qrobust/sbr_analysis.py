"""Strict-bounded-real analysis and mean-square stability certificates.

Everything here works on the doubled-up matrices produced by
qrobust.model.assemble_doubled.  The central objects are the drift
matrix F of the nominal dynamics, the H-infinity norm of the uncertainty
channel, and a structured positive-definite P certifying the quadratic
matrix inequality

    F^dag P + P F + 4 P J K J P + K / gamma^2 < 0,

where K = C^dag C is built from the channel rows C.  A valid P yields a
Lyapunov observable V = x^dag P x whose expectation decays as
c1 * exp(-c2 t) * <V(0)> + c3 uniformly over the perturbation class.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .model import (
    DoubledSystem,
    LinearNominalSystem,
    PolynomialPerturbation,
    QuadraticPerturbation,
    StructuredP,
    assemble_doubled,
    doubled_J,
)

TOL_HURWITZ = 1e-9
TOL_HINF = 1e-8
EPS_SCHEDULE = (1e-2, 1e-4, 1e-6)

VERDICT_STABLE = "RobustlyMeanSquareStable"
VERDICT_FAILED = "ConditionFailed"
REASON_NOT_HURWITZ = "NotHurwitz"
REASON_NORM = "NormTooLarge"
REASON_QMI = "QmiInfeasible"


class NotHurwitzError(ValueError):
    """The drift matrix has an eigenvalue with nonnegative real part."""


class QmiInfeasibleError(RuntimeError):
    """No structured positive-definite P satisfying the QMI was found."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


def drift_matrix(M: np.ndarray, N: np.ndarray, J: np.ndarray) -> np.ndarray:
    """Heisenberg-picture drift F = -i J M - (1/2) J N^dag Jc N.

    Jc is the channel-space counterpart of J; the two coincide only when
    the number of coupling channels equals the number of modes.
    """
    M = np.asarray(M, dtype=complex)
    N = np.asarray(N, dtype=complex)
    Jc = doubled_J(N.shape[0] // 2)
    return -1j * (J @ M) - 0.5 * (J @ N.conj().T @ Jc @ N)


def spectral_abscissa(A: np.ndarray) -> float:
    return float(np.max(np.linalg.eigvals(A).real))


def is_hurwitz(A: np.ndarray, tol: float = TOL_HURWITZ) -> bool:
    """True iff every eigenvalue has real part below -tol."""
    return spectral_abscissa(A) < -tol


def _sigma_max(A: np.ndarray, B: np.ndarray, C: np.ndarray, omega: float) -> float:
    n = A.shape[0]
    G = C @ np.linalg.solve(1j * omega * np.eye(n) - A, B)
    return float(np.linalg.svd(G, compute_uv=False)[0])


def _has_imaginary_eigenvalue(A, B, C, gamma: float) -> bool:
    """Eigenvalue test: sigma_max of the transfer function reaches gamma
    at some frequency iff the associated Hamiltonian-structured matrix
    has an eigenvalue on the imaginary axis (D = 0 case)."""
    H = np.block(
        [
            [A, (B @ B.conj().T) / gamma**2],
            [-(C.conj().T @ C), -A.conj().T],
        ]
    )
    w = np.linalg.eigvals(H)
    return bool(np.any(np.abs(w.real) <= 1e-8 * (1.0 + np.abs(w))))


def _bisect_hinf(A, B, C, tol: float) -> tuple[float, int]:
    A = np.asarray(A, dtype=complex)
    B = np.asarray(B, dtype=complex)
    C = np.asarray(C, dtype=complex)
    if not is_hurwitz(A, tol=0.0):
        raise NotHurwitzError(
            f"drift is not Hurwitz (spectral abscissa {spectral_abscissa(A):.3e}); "
            "the H-infinity norm is infinite"
        )
    if np.linalg.norm(B) == 0.0 or np.linalg.norm(C) == 0.0:
        return 0.0, 0
    # Certified lower bound: the largest achieved gain over seed
    # frequencies (0 and the resonances of A).  Complex systems are not
    # symmetric in omega, so both signs are probed.
    eigs = np.linalg.eigvals(A)
    seeds = {0.0}
    for lam in eigs:
        seeds.add(float(lam.imag))
        seeds.add(float(-lam.imag))
    lo = max(_sigma_max(A, B, C, w) for w in seeds)
    lo = max(lo, 1e-300)
    # Certified upper bound: double until the imaginary-axis test fails.
    hi = 2.0 * lo
    iters = 0
    while _has_imaginary_eigenvalue(A, B, C, hi):
        hi *= 2.0
        iters += 1
        if hi > 1e12 * lo:
            raise RuntimeError("H-infinity upper bound search failed to terminate")
    while (hi - lo) > tol * hi:
        mid = 0.5 * (lo + hi)
        if _has_imaginary_eigenvalue(A, B, C, mid):
            lo = mid
        else:
            hi = mid
        iters += 1
    return 0.5 * (lo + hi), iters


def hinf_norm(A, B, C, tol: float = TOL_HINF) -> float:
    """H-infinity norm of C (sI - A)^{-1} B for Hurwitz A.

    Bisection on gamma, certified at both bracket ends by the
    imaginary-axis eigenvalue test of the Hamiltonian-structured matrix;
    the returned value is within a relative tol of the supremum.
    """
    norm, _ = _bisect_hinf(A, B, C, tol)
    return norm


def frequency_grid_norm(
    A,
    B,
    C,
    n_points: int = 100_000,
    omega_min: float = 1e-3,
    omega_max: float = 1e4,
) -> float:
    """Brute-force maximum of sigma_max over a dense logarithmic grid.

    Deliberately shares no machinery with hinf_norm so it can serve as
    an independent cross-check.  The grid covers both signs of omega
    plus zero and the resonance frequencies of A.
    """
    A = np.asarray(A, dtype=complex)
    B = np.asarray(B, dtype=complex)
    C = np.asarray(C, dtype=complex)
    lam, S = np.linalg.eig(A)
    grid = np.logspace(np.log10(omega_min), np.log10(omega_max), n_points // 2)
    omega = np.concatenate([-grid[::-1], [0.0], grid, -lam.imag])
    if np.linalg.cond(S) < 1e8:
        CS = C @ S
        SB = np.linalg.solve(S, B)
        d = 1.0 / (1j * omega[:, None] - lam[None, :])
        G = np.einsum("wk,ik,kj->wij", d, CS, SB, optimize=True)
        sv = np.linalg.svd(G, compute_uv=False)
        return float(sv[:, 0].max())
    # Defective A: fall back to chunked direct solves.
    n = A.shape[0]
    best = 0.0
    eye = np.eye(n)
    for chunk in np.array_split(omega, max(1, len(omega) // 2000)):
        M = 1j * chunk[:, None, None] * eye - A
        G = C @ np.linalg.solve(M, np.broadcast_to(B, (len(chunk), *B.shape)))
        sv = np.linalg.svd(G, compute_uv=False)
        best = max(best, float(sv[:, 0].max()))
    return best


def _riccati_stabilizing(A, G, Q):
    """Stabilizing Hermitian solution of A^dag X + X A + X G X + Q = 0.

    Ordered Schur decomposition of the Hamiltonian-structured pencil;
    returns None when the stable invariant subspace does not have the
    right dimension or is ill conditioned.
    """
    m = A.shape[0]
    H = np.block([[A, G], [-Q, -A.conj().T]])
    try:
        _, Z, sdim = sla.schur(H, output="complex", sort="lhp")
    except sla.LinAlgError:
        return None
    if sdim != m:
        return None
    U, W = Z[:m, :m], Z[m:, :m]
    if np.linalg.cond(U) > 1e12:
        return None
    X = W @ np.linalg.inv(U)
    return 0.5 * (X + X.conj().T)


def qmi_residual(F, K, J, gamma: float, P: np.ndarray) -> np.ndarray:
    """Left-hand side F^dag P + P F + 4 P J K J P + K / gamma^2."""
    return (
        F.conj().T @ P
        + P @ F
        + 4.0 * (P @ J @ K @ J @ P)
        + K / gamma**2
    )


def solve_bounded_real_qmi(
    F,
    C_rows,
    J,
    Sigma,
    gamma: float,
    eps_schedule=EPS_SCHEDULE,
    verify_rows=None,
) -> tuple[StructuredP, dict]:
    """Find structured P > 0 with qmi_residual(F, K, J, gamma, P) < 0.

    K is built from verify_rows (default C_rows).  The equality version
    with constant term K_solve/gamma^2 + eps I is solved by the invariant
    subspace method for a decreasing schedule of eps; the solution is
    symmetrized onto the doubled-block subspace and the strict inequality
    re-verified.  Raises QmiInfeasibleError when every attempt fails.
    """
    F = np.asarray(F, dtype=complex)
    C_rows = np.atleast_2d(np.asarray(C_rows, dtype=complex))
    V_rows = C_rows if verify_rows is None else np.atleast_2d(np.asarray(verify_rows, dtype=complex))
    K_solve = C_rows.conj().T @ C_rows
    K_verify = V_rows.conj().T @ V_rows
    dim = F.shape[0]
    G = 4.0 * (J @ K_solve @ J)
    best = None
    for eps in eps_schedule:
        Q = K_solve / gamma**2 + eps * np.eye(dim)
        P = _riccati_stabilizing(F, G, Q)
        if P is None:
            continue
        P = 0.5 * (P + Sigma @ P.conj() @ Sigma)
        P = 0.5 * (P + P.conj().T)
        res_eigs = np.linalg.eigvalsh(qmi_residual(F, K_verify, J, gamma, P))
        p_eigs = np.linalg.eigvalsh(P)
        diag = {
            "eps": eps,
            "residual_eigenvalues": res_eigs,
            "p_eigenvalues": p_eigs,
        }
        if res_eigs.max() < 0.0 and p_eigs.min() > 0.0:
            return StructuredP.from_full(P), diag
        if best is None or res_eigs.max() < best["residual_eigenvalues"].max():
            best = diag
    if best is None:
        # No Riccati attempt produced a candidate (axis eigenvalues in the
        # pencil).  Evaluate the residual at the Lyapunov-only solution so
        # the caller still sees how badly the inequality is violated.
        try:
            P_lin = sla.solve_continuous_lyapunov(
                F.conj().T, -(K_solve / gamma**2 + eps_schedule[-1] * np.eye(dim))
            )
            P_lin = 0.5 * (P_lin + Sigma @ P_lin.conj() @ Sigma)
            P_lin = 0.5 * (P_lin + P_lin.conj().T)
            best = {
                "eps": None,
                "residual_eigenvalues": np.linalg.eigvalsh(
                    qmi_residual(F, K_verify, J, gamma, P_lin)
                ),
                "p_eigenvalues": np.linalg.eigvalsh(P_lin),
            }
        except (np.linalg.LinAlgError, ValueError):
            best = {"eps": None}
    raise QmiInfeasibleError(
        "no structured positive-definite solution found along the eps schedule",
        diagnostics=best,
    )


def double_commutator_constant(P, Etilde, J, Sigma) -> complex:
    """The constant mu = [zeta, [V, zeta]] for V = x^dag P x, zeta = Etilde x.

    Evaluates to the scalar 2 * Etilde J P J Sigma Etilde^T.  (Derived
    from [x_i, x_j] = (J Sigma)_{ij} and [x, x^dag P x] = 2 J P x; the
    truncated-number-basis oracle reproduces it to machine precision.)
    """
    P = np.asarray(P, dtype=complex)
    Et = np.atleast_2d(np.asarray(Etilde, dtype=complex))
    return complex(2.0 * (Et @ J @ P @ J @ Sigma @ Et.T)[0, 0])


@dataclass(frozen=True)
class CertificateConstants:
    c: float
    lambda_tilde: float
    lam: float
    c1: float
    c2: float
    c3: float


def certificate_constants(
    P: np.ndarray,
    N: np.ndarray,
    J: np.ndarray,
    residual: np.ndarray,
    extra_lambda: float = 0.0,
) -> CertificateConstants:
    """Decay-rate and offset constants from a verified QMI residual.

    c is the largest rate with residual + c P <= 0, found as the smallest
    generalized eigenvalue of (-residual, P).  lambda_tilde is the
    constant term tr(P J N^dag diag(I, 0) N J) contributed by the
    coupling; lam adds the perturbation-class offset extra_lambda.
    """
    dim = P.shape[0]
    m = N.shape[0] // 2
    proj = np.zeros((2 * m, 2 * m), dtype=complex)
    proj[:m, :m] = np.eye(m)
    lambda_tilde = float(np.trace(P @ J @ N.conj().T @ proj @ N @ J).real)
    c = float(np.min(sla.eigh(-residual, P, eigvals_only=True)))
    p_eigs = np.linalg.eigvalsh(P)
    lam = lambda_tilde + extra_lambda
    return CertificateConstants(
        c=c,
        lambda_tilde=lambda_tilde,
        lam=lam,
        c1=float(p_eigs.max() / p_eigs.min()),
        c2=c,
        c3=float(lam / (c * p_eigs.min())),
    )


@dataclass(frozen=True)
class StabilityCertificate:
    """Outcome of a robust mean-square stability analysis.

    verdict is "RobustlyMeanSquareStable" or "ConditionFailed"; in the
    failed case reason is one of NotHurwitz / NormTooLarge /
    QmiInfeasible and the fields below the failure point are None.
    """

    verdict: str
    reason: str | None
    F: np.ndarray
    gamma: float
    spectral_abscissa: float
    hinf_norm: float
    gamma_margin: float
    P: StructuredP | None = None
    c: float | None = None
    lambda_tilde: float | None = None
    lam: float | None = None
    mu: complex | None = None
    c1: float | None = None
    c2: float | None = None
    c3: float | None = None
    diagnostics: dict = dataclasses.field(default_factory=dict)

    @property
    def stable(self) -> bool:
        return self.verdict == VERDICT_STABLE


def _failed(F, gamma, reason, hinf=np.inf, diagnostics=None) -> StabilityCertificate:
    return StabilityCertificate(
        verdict=VERDICT_FAILED,
        reason=reason,
        F=F,
        gamma=gamma,
        spectral_abscissa=spectral_abscissa(F),
        hinf_norm=hinf,
        gamma_margin=gamma / 2.0 - hinf,
        diagnostics=diagnostics or {},
    )


def _certificate(F, gamma, P, consts, mu, hinf, iters, qmi_diag) -> StabilityCertificate:
    diag = {
        "eps": qmi_diag.get("eps"),
        "residual_eigenvalues": qmi_diag["residual_eigenvalues"],
        "p_eigenvalues": qmi_diag["p_eigenvalues"],
        "bisection_iterations": iters,
    }
    if "stage" in qmi_diag:
        diag["stage"] = qmi_diag["stage"]
    return StabilityCertificate(
        verdict=VERDICT_STABLE,
        reason=None,
        F=F,
        gamma=gamma,
        spectral_abscissa=spectral_abscissa(F),
        hinf_norm=hinf,
        gamma_margin=gamma / 2.0 - hinf,
        P=P,
        c=consts.c,
        lambda_tilde=consts.lambda_tilde,
        lam=consts.lam,
        mu=mu,
        c1=consts.c1,
        c2=consts.c2,
        c3=consts.c3,
        diagnostics=diag,
    )


def certify_quadratic(
    system: LinearNominalSystem,
    pert: QuadraticPerturbation,
    tol_hinf: float = TOL_HINF,
) -> StabilityCertificate:
    """Certificate against every quadratic perturbation with the given
    channel matrix E and gain bound ||Delta|| <= 2/gamma.

    Checks, in order: F Hurwitz; channel H-infinity norm below gamma/2;
    structured solvability of the QMI.  The first failure decides the
    verdict.
    """
    asm = assemble_doubled(system, pert)
    F = drift_matrix(asm.M, asm.N, asm.J)
    gamma = float(pert.gamma)
    if not is_hurwitz(F):
        return _failed(F, gamma, REASON_NOT_HURWITZ)
    E = asm.E
    B = 1j * (asm.J @ E.conj().T)
    norm, iters = _bisect_hinf(F, B, E, tol_hinf)
    if norm >= gamma / 2.0:
        return _failed(F, gamma, REASON_NORM, hinf=norm)
    try:
        P_struct, qmi_diag = solve_bounded_real_qmi(F, E, asm.J, asm.Sigma, gamma)
    except QmiInfeasibleError as exc:
        return _failed(F, gamma, REASON_QMI, hinf=norm, diagnostics=exc.diagnostics)
    P = P_struct.full()
    K = E.conj().T @ E
    consts = certificate_constants(
        P, asm.N, asm.J, qmi_residual(F, K, asm.J, gamma, P)
    )
    return _certificate(F, gamma, P_struct, consts, None, norm, iters, qmi_diag)


def certify_polynomial(
    system: LinearNominalSystem,
    pert: PolynomialPerturbation,
    tol_hinf: float = TOL_HINF,
) -> StabilityCertificate:
    """Certificate against scalar polynomial perturbations in the channel
    zeta = Etilde x obeying the first/second-derivative sector bounds.

    The channel row for both the norm test and the QMI constant term is
    conj(Etilde) Sigma.  The QMI is first attempted directly; if the
    symmetrized Riccati solution loses strictness (the solve data are
    not conjugation-symmetric for a single row), a second pass solves
    with the row stacked against its conjugate partner, which restores
    the symmetry and still implies the original inequality.
    """
    asm = assemble_doubled(system, pert)
    F = drift_matrix(asm.M, asm.N, asm.J)
    gamma = float(pert.gamma)
    if not is_hurwitz(F):
        return _failed(F, gamma, REASON_NOT_HURWITZ)
    Et = asm.Etilde
    C = Et.conj() @ asm.Sigma
    B = asm.J @ asm.Sigma @ Et.T
    norm, iters = _bisect_hinf(F, B, C, tol_hinf)
    if norm >= gamma / 2.0:
        return _failed(F, gamma, REASON_NORM, hinf=norm)
    try:
        P_struct, qmi_diag = solve_bounded_real_qmi(F, C, asm.J, asm.Sigma, gamma)
        qmi_diag["stage"] = "single-row"
    except QmiInfeasibleError:
        doubled_rows = np.vstack([Et, C])
        try:
            P_struct, qmi_diag = solve_bounded_real_qmi(
                F, doubled_rows, asm.J, asm.Sigma, gamma, verify_rows=C
            )
            qmi_diag["stage"] = "conjugate-doubled"
        except QmiInfeasibleError as exc:
            return _failed(F, gamma, REASON_QMI, hinf=norm, diagnostics=exc.diagnostics)
    P = P_struct.full()
    mu = double_commutator_constant(P, Et, asm.J, asm.Sigma)
    K = C.conj().T @ C
    extra = float(pert.delta1) + abs(mu) ** 2 / 4.0 + float(pert.delta2)
    consts = certificate_constants(
        P, asm.N, asm.J, qmi_residual(F, K, asm.J, gamma, P), extra_lambda=extra
    )
    return _certificate(F, gamma, P_struct, consts, mu, norm, iters, qmi_diag)
