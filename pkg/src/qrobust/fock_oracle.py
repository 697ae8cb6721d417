"""Brute-force verification in a truncated number basis.

Every operator identity used by the analysis layer can be checked
directly by representing the modes on a finite Fock ladder and comparing
matrices.  Truncation corrupts a band of states near the cutoff, so all
comparisons are made after compressing onto the subspace of total
occupation <= cutoff - 1 - guard, where products of up to `guard`
ladder operators are still exact.

The oracle deliberately knows nothing about Riccati equations or
H-infinity norms; it only multiplies matrices.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .model import (
    LinearNominalSystem,
    PolynomialPerturbation,
    QuadraticPerturbation,
)

#: refuse to build spaces larger than this (dense matrices get silly)
MAX_DIMENSION = 20_000

#: population of guard levels above which a simulation is untrusted
LEAKAGE_THRESHOLD = 1e-6

#: default slack floor for operator inequalities on the compressed subspace
DISSIPATION_SLACK_FLOOR = -1e-7


def default_cutoff(n_modes: int) -> int:
    return {1: 30, 2: 12}.get(n_modes, 8)


@dataclass(frozen=True)
class FockSpace:
    """A truncated Fock space: n_modes ladders of `cutoff` levels each."""

    n_modes: int
    cutoff: int
    guard: int = 0

    def __post_init__(self):
        if self.cutoff < 2:
            raise ValueError("cutoff must be at least 2")
        if self.guard < 0 or self.guard >= self.cutoff:
            raise ValueError("guard must satisfy 0 <= guard < cutoff")
        if self.dim > MAX_DIMENSION:
            raise ValueError(
                f"dimension {self.dim} exceeds the cap {MAX_DIMENSION}; "
                "lower the cutoff or the number of modes"
            )

    @property
    def dim(self) -> int:
        return self.cutoff**self.n_modes

    def occupations(self) -> np.ndarray:
        """(dim, n_modes) table of level indices, kron ordering."""
        idx = np.unravel_index(np.arange(self.dim), (self.cutoff,) * self.n_modes)
        return np.stack(idx, axis=1)

    def kept(self) -> np.ndarray:
        """Indices with total occupation <= cutoff - 1 - guard."""
        total = self.occupations().sum(axis=1)
        return np.flatnonzero(total <= self.cutoff - 1 - self.guard)

    def guard_indices(self) -> np.ndarray:
        total = self.occupations().sum(axis=1)
        return np.flatnonzero(total > self.cutoff - 1 - self.guard)


@lru_cache(maxsize=32)
def _single_mode_a(cutoff: int) -> np.ndarray:
    a = np.zeros((cutoff, cutoff), dtype=complex)
    ks = np.arange(1, cutoff)
    a[ks - 1, ks] = np.sqrt(ks)
    a.setflags(write=False)
    return a


def mode_operators(space: FockSpace) -> list[np.ndarray]:
    """Annihilation operator for each mode, lifted by Kronecker products."""
    a = _single_mode_a(space.cutoff)
    eye = np.eye(space.cutoff, dtype=complex)
    ops = []
    for i in range(space.n_modes):
        factors = [a if j == i else eye for j in range(space.n_modes)]
        out = factors[0]
        for f in factors[1:]:
            out = np.kron(out, f)
        ops.append(out)
    return ops


def doubled_operators(space: FockSpace) -> list[np.ndarray]:
    """The 2n entries of x = [a; a#] as matrices."""
    a_ops = mode_operators(space)
    return a_ops + [a.conj().T for a in a_ops]


def compress(space: FockSpace, X: np.ndarray) -> np.ndarray:
    """Restrict X to the subspace untouched by truncation effects."""
    keep = space.kept()
    return X[np.ix_(keep, keep)]


def rel_residual(space: FockSpace, X: np.ndarray, Y: np.ndarray) -> float:
    """Relative Frobenius distance of X and Y after compression."""
    Xc, Yc = compress(space, X), compress(space, Y)
    scale = max(1.0, np.linalg.norm(Xc), np.linalg.norm(Yc))
    return float(np.linalg.norm(Xc - Yc) / scale)


def scalar_part(space: FockSpace, X: np.ndarray) -> tuple[complex, float]:
    """Best scalar s with compressed X ~ s*I, and the deviation from it."""
    Xc = compress(space, X)
    k = Xc.shape[0]
    s = complex(np.trace(Xc) / k)
    dev = float(np.linalg.norm(Xc - s * np.eye(k)) / max(1.0, abs(s) * np.sqrt(k)))
    return s, dev


def min_eigenvalue(space: FockSpace, X: np.ndarray) -> float:
    """Smallest eigenvalue of the compressed (Hermitized) operator."""
    Xc = compress(space, X)
    Xc = 0.5 * (Xc + Xc.conj().T)
    return float(np.linalg.eigvalsh(Xc).min())


def commutator(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return A @ B - B @ A


def linear_combination(space: FockSpace, row: np.ndarray) -> np.ndarray:
    """The operator row . x for a 1-by-2n coefficient row."""
    xs = doubled_operators(space)
    row = np.asarray(row, dtype=complex).ravel()
    out = np.zeros((space.dim, space.dim), dtype=complex)
    for c, X in zip(row, xs):
        if c != 0:
            out += c * X
    return out


def quadratic_operator(space: FockSpace, A: np.ndarray) -> np.ndarray:
    """The operator x^dag A x = sum_ij A_ij x_i* x_j."""
    xs = doubled_operators(space)
    A = np.asarray(A, dtype=complex)
    out = np.zeros((space.dim, space.dim), dtype=complex)
    for i in range(len(xs)):
        xi_dag = xs[i].conj().T
        for j in range(len(xs)):
            if A[i, j] != 0:
                out += A[i, j] * (xi_dag @ xs[j])
    return out


def nominal_hamiltonian(space: FockSpace, system: LinearNominalSystem) -> np.ndarray:
    """H1 = (1/2) x^dag M x."""
    return quadratic_operator(space, 0.5 * system.doubled_M())


def coupling_operators(space: FockSpace, system: LinearNominalSystem) -> list[np.ndarray]:
    """The m coupling operators L_k = (N1 a + N2 a#)_k."""
    rows = np.hstack([system.N1, system.N2])
    return [linear_combination(space, rows[k]) for k in range(rows.shape[0])]


def lyapunov_operator(space: FockSpace, P: np.ndarray) -> np.ndarray:
    """V = x^dag P x (no 1/2 factor)."""
    return quadratic_operator(space, P)


def channel_operators(space: FockSpace, pert: QuadraticPerturbation) -> list[np.ndarray]:
    """The 2 m_z entries of z = [zeta; zeta#] = E x."""
    E = pert.doubled_E()
    return [linear_combination(space, E[k]) for k in range(E.shape[0])]


def w_operators(space: FockSpace, pert: QuadraticPerturbation) -> list[np.ndarray]:
    """The perturbation gain applied to the channels, w = (1/2) Delta z."""
    z_ops = channel_operators(space, pert)
    Delta = pert.doubled_Delta()
    out = []
    for i in range(Delta.shape[0]):
        w = np.zeros((space.dim, space.dim), dtype=complex)
        for j, Z in enumerate(z_ops):
            if Delta[i, j] != 0:
                w += 0.5 * Delta[i, j] * Z
        out.append(w)
    return out


def _zeta_powers(Z: np.ndarray, kmax: int) -> list[np.ndarray]:
    powers = [np.eye(Z.shape[0], dtype=complex)]
    for _ in range(kmax):
        powers.append(powers[-1] @ Z)
    return powers


def polynomial_operator(
    space: FockSpace, pert: PolynomialPerturbation, dk: int = 0
) -> np.ndarray:
    """sum_kl S_kl * d^dk/dzeta^dk [ zeta^k ] (zeta*)^l as a matrix.

    dk = 0 gives H2 itself, dk = 1 the first formal derivative f',
    dk = 2 the second derivative f''.  Derivatives act on the zeta
    powers only: each step maps zeta^k to k zeta^(k-1).
    """
    Z = linear_combination(space, pert.doubled_row())
    Zd = Z.conj().T
    kmax = max((k for k, _ in pert.coeffs), default=0)
    lmax = max((l for _, l in pert.coeffs), default=0)
    zp = _zeta_powers(Z, kmax)
    zdp = _zeta_powers(Zd, lmax)
    out = np.zeros((space.dim, space.dim), dtype=complex)
    for (k, l), s in pert.coeffs.items():
        if s == 0:
            continue
        factor = 1.0
        for step in range(dk):
            factor *= k - step
        if factor == 0 or k - dk < 0:
            continue
        out += s * factor * (zp[k - dk] @ zdp[l])
    return out


def perturbation_hamiltonian(space: FockSpace, pert) -> np.ndarray:
    """H2 for either perturbation flavor."""
    if isinstance(pert, QuadraticPerturbation):
        E = pert.doubled_E()
        Delta = pert.doubled_Delta()
        return quadratic_operator(space, 0.5 * E.conj().T @ Delta @ E)
    if isinstance(pert, PolynomialPerturbation):
        return polynomial_operator(space, pert, dk=0)
    raise TypeError(f"unsupported perturbation type {type(pert).__name__}")


def generator(X: np.ndarray, H: np.ndarray, L_ops: list[np.ndarray]) -> np.ndarray:
    """Heisenberg generator -i[X, H] + sum_k ( (1/2) L_k* [X, L_k] + (1/2) [L_k*, X] L_k )."""
    out = -1j * commutator(X, H)
    for L in L_ops:
        Ld = L.conj().T
        out += 0.5 * (Ld @ commutator(X, L)) + 0.5 * (commutator(Ld, X) @ L)
    return out


def verify_decomposition_w1(
    space: FockSpace,
    V: np.ndarray,
    H2: np.ndarray,
    w_ops: list[np.ndarray],
    z_ops: list[np.ndarray],
) -> float:
    """Residual of [V, H2] = [V, z^dag] w - w^dag [z, V] on the compressed subspace."""
    lhs = commutator(V, H2)
    rhs = np.zeros_like(lhs)
    for w, z in zip(w_ops, z_ops):
        zd = z.conj().T
        rhs += commutator(V, zd) @ w - w.conj().T @ commutator(z, V)
    return rel_residual(space, lhs, rhs)


@dataclass(frozen=True)
class W2Check:
    """Result of the scalar-channel commutator decomposition check."""

    residual: float
    mu_measured: complex
    mu_formula: complex
    mu_deviation: float

    @property
    def mu_constant(self) -> bool:
        return self.mu_deviation <= 1e-8

    @property
    def mu_matches(self) -> bool:
        return abs(self.mu_measured - self.mu_formula) <= 1e-9 * max(
            1.0, abs(self.mu_formula)
        )


def verify_decomposition_w2(
    space: FockSpace,
    V: np.ndarray,
    pert: PolynomialPerturbation,
    mu_formula: complex,
) -> W2Check:
    """Check [V, H2] = [V, zeta] f' - f'^* [zeta*, V] + (mu/2) f'' - (mu*/2) f''^*.

    Also measures mu = [zeta, [V, zeta]] directly; a deviation from
    scalar-times-identity marks a constancy violation (the decomposition
    then has no constant mu to use).
    """
    Z = linear_combination(space, pert.doubled_row())
    Zd = Z.conj().T
    H2 = polynomial_operator(space, pert, dk=0)
    fp = polynomial_operator(space, pert, dk=1)
    fpp = polynomial_operator(space, pert, dk=2)
    mu_measured, mu_dev = scalar_part(space, commutator(Z, commutator(V, Z)))
    mu = complex(mu_formula)
    lhs = commutator(V, H2)
    rhs = (
        commutator(V, Z) @ fp
        - fp.conj().T @ commutator(Zd, V)
        + 0.5 * mu * fpp
        - 0.5 * np.conj(mu) * fpp.conj().T
    )
    return W2Check(
        residual=rel_residual(space, lhs, rhs),
        mu_measured=mu_measured,
        mu_formula=mu,
        mu_deviation=mu_dev,
    )


def dissipation_slack_multichannel(
    space: FockSpace,
    V: np.ndarray,
    H1: np.ndarray,
    L_ops: list[np.ndarray],
    z_ops: list[np.ndarray],
    gamma: float,
    c: float,
    lambda_tilde: float,
) -> float:
    """Smallest eigenvalue of lambda_tilde - ( -i[V,H1] + L(V) + [V,z^dag][z,V] + z^dag z/gamma^2 + cV ).

    Nonnegative (within tolerance) iff the certified dissipation
    inequality holds on the compressed subspace.
    """
    lhs = generator(V, H1, L_ops) + c * V
    for z in z_ops:
        zd = z.conj().T
        lhs += commutator(V, zd) @ commutator(z, V)
        lhs += (zd @ z) / gamma**2
    slack = lambda_tilde * np.eye(space.dim) - lhs
    return min_eigenvalue(space, slack)


def dissipation_slack_scalar(
    space: FockSpace,
    V: np.ndarray,
    H1: np.ndarray,
    L_ops: list[np.ndarray],
    Z: np.ndarray,
    gamma: float,
    c: float,
    lambda_tilde: float,
) -> float:
    """Scalar-channel variant: [V,z][z*,V] + z z*/gamma^2 in place of the sums."""
    Zd = Z.conj().T
    lhs = generator(V, H1, L_ops) + c * V
    lhs += commutator(V, Z) @ commutator(Zd, V)
    lhs += (Z @ Zd) / gamma**2
    slack = lambda_tilde * np.eye(space.dim) - lhs
    return min_eigenvalue(space, slack)


def sector_slacks(space: FockSpace, pert: PolynomialPerturbation) -> tuple[float, float]:
    """Smallest compressed eigenvalues of the two sector-bound slacks.

    slack1: zeta zeta*/gamma^2 + delta1 - f'^* f'
    slack2: delta2 - f''^* f''
    A negative value falsifies membership of the perturbation class.
    """
    Z = linear_combination(space, pert.doubled_row())
    fp = polynomial_operator(space, pert, dk=1)
    fpp = polynomial_operator(space, pert, dk=2)
    eye = np.eye(space.dim)
    s1 = (Z @ Z.conj().T) / pert.gamma**2 + pert.delta1 * eye - fp.conj().T @ fp
    s2 = pert.delta2 * eye - fpp.conj().T @ fpp
    return min_eigenvalue(space, s1), min_eigenvalue(space, s2)


def sector_slack_multichannel(
    space: FockSpace, pert: QuadraticPerturbation, delta: float = 0.0
) -> float:
    """Smallest compressed eigenvalue of z^dag z/gamma^2 + delta - w^dag w."""
    z_ops = channel_operators(space, pert)
    w_ops = w_operators(space, pert)
    s = delta * np.eye(space.dim, dtype=complex)
    for z in z_ops:
        s += (z.conj().T @ z) / pert.gamma**2
    for w in w_ops:
        s -= w.conj().T @ w
    return min_eigenvalue(space, s)


@dataclass(frozen=True)
class IdentityCheck:
    """One oracle comparison: a named residual or slack with its tolerance."""

    name: str
    kind: str  # "residual" (pass if value <= tol) or "slack" (pass if value >= tol)
    value: float
    tol: float

    @property
    def passed(self) -> bool:
        if self.kind == "residual":
            return self.value <= self.tol
        return self.value >= self.tol


def identity_battery(
    space: FockSpace,
    system: LinearNominalSystem,
    pert=None,
    P=None,
    mu_formula: complex | None = None,
    dissipation: tuple[float, float] | None = None,
) -> list[IdentityCheck]:
    """Run every applicable operator-identity check on a concrete model.

    P is a structured certificate matrix (any admissible one works for
    the identities); dissipation, when given, is the pair (c, lambda_tilde)
    whose operator inequality should hold for that P.
    """
    from .model import StructuredP, doubled_J, doubled_Sigma

    if P is None:
        raise ValueError("identity_battery needs a structured P")
    if isinstance(P, StructuredP):
        Pf = P.full()
    else:
        Pf = np.asarray(P, dtype=complex)
    n = system.n_modes
    J = doubled_J(n)
    xs = doubled_operators(space)
    eye = np.eye(space.dim)
    checks: list[IdentityCheck] = []

    worst = 0.0
    for i in range(2 * n):
        for j in range(2 * n):
            lhs = commutator(xs[i], xs[j].conj().T)
            worst = max(worst, rel_residual(space, lhs, J[i, j] * eye))
    checks.append(IdentityCheck("canonical_commutators", "residual", worst, 1e-12))

    H1 = nominal_hamiltonian(space, system)
    V = lyapunov_operator(space, Pf)
    L_ops = coupling_operators(space, system)
    checks.append(
        IdentityCheck(
            "hermitian_nominal", "residual", rel_residual(space, H1, H1.conj().T), 1e-12
        )
    )
    checks.append(
        IdentityCheck(
            "hermitian_lyapunov", "residual", rel_residual(space, V, V.conj().T), 1e-12
        )
    )

    M = system.doubled_M()
    lhs = commutator(V, H1)
    rhs = quadratic_operator(space, Pf @ J @ M - M @ J @ Pf)
    checks.append(
        IdentityCheck("commutator_with_nominal", "residual", rel_residual(space, lhs, rhs), 1e-9)
    )

    N = system.doubled_N()
    m = system.n_channels
    sel = np.zeros((2 * m, 2 * m))
    sel[:m, :m] = np.eye(m)
    diss = generator(V, np.zeros_like(V), L_ops)
    Jc = doubled_J(m)
    scalar = complex(np.trace(Pf @ J @ N.conj().T @ sel @ N @ J))
    quad = -0.5 * (N.conj().T @ Jc @ N @ J @ Pf + Pf @ J @ N.conj().T @ Jc @ N)
    expected = scalar * eye + quadratic_operator(space, quad)
    checks.append(
        IdentityCheck("dissipator_action", "residual", rel_residual(space, diss, expected), 1e-9)
    )

    grad_rows = 2.0 * (J @ Pf)
    worst = 0.0
    for i in range(2 * n):
        lhs = commutator(xs[i], V)
        rhs = linear_combination(space, grad_rows[i])
        worst = max(worst, rel_residual(space, lhs, rhs))
    checks.append(IdentityCheck("gradient_commutator", "residual", worst, 1e-9))

    if isinstance(pert, QuadraticPerturbation):
        H2 = perturbation_hamiltonian(space, pert)
        checks.append(
            IdentityCheck(
                "hermitian_perturbation",
                "residual",
                rel_residual(space, H2, H2.conj().T),
                1e-12,
            )
        )
        z_ops = channel_operators(space, pert)
        w_ops = w_operators(space, pert)
        checks.append(
            IdentityCheck(
                "channel_decomposition",
                "residual",
                verify_decomposition_w1(space, V, H2, w_ops, z_ops),
                1e-8,
            )
        )
        checks.append(
            IdentityCheck(
                "channel_sector_bound",
                "slack",
                sector_slack_multichannel(space, pert),
                DISSIPATION_SLACK_FLOOR,
            )
        )
        if dissipation is not None:
            c, lam_tilde = dissipation
            slack = dissipation_slack_multichannel(
                space, V, H1, L_ops, z_ops, pert.gamma, c, lam_tilde
            )
            checks.append(
                IdentityCheck(
                    "dissipation_inequality", "slack", slack, DISSIPATION_SLACK_FLOOR
                )
            )
    elif isinstance(pert, PolynomialPerturbation):
        H2 = perturbation_hamiltonian(space, pert)
        checks.append(
            IdentityCheck(
                "hermitian_perturbation",
                "residual",
                rel_residual(space, H2, H2.conj().T),
                1e-12,
            )
        )
        if mu_formula is None:
            Z = linear_combination(space, pert.doubled_row())
            mu_formula, _ = scalar_part(space, commutator(Z, commutator(V, Z)))
        w2 = verify_decomposition_w2(space, V, pert, mu_formula)
        checks.append(
            IdentityCheck("derivative_decomposition", "residual", w2.residual, 1e-8)
        )
        checks.append(IdentityCheck("mu_constancy", "residual", w2.mu_deviation, 1e-8))
        checks.append(
            IdentityCheck(
                "mu_formula_match",
                "residual",
                abs(w2.mu_measured - w2.mu_formula) / max(1.0, abs(w2.mu_formula)),
                1e-9,
            )
        )
        s1, s2 = sector_slacks(space, pert)
        checks.append(
            IdentityCheck(
                "sector_first_derivative", "slack", s1, DISSIPATION_SLACK_FLOOR
            )
        )
        checks.append(
            IdentityCheck(
                "sector_second_derivative", "slack", s2, DISSIPATION_SLACK_FLOOR
            )
        )
        if dissipation is not None:
            c, lam_tilde = dissipation
            Z = linear_combination(space, pert.doubled_row())
            slack = dissipation_slack_scalar(
                space, V, H1, L_ops, Z, pert.gamma, c, lam_tilde
            )
            checks.append(
                IdentityCheck(
                    "dissipation_inequality", "slack", slack, DISSIPATION_SLACK_FLOOR
                )
            )
    return checks


def vacuum_state(space: FockSpace) -> np.ndarray:
    rho = np.zeros((space.dim, space.dim), dtype=complex)
    rho[0, 0] = 1.0
    return rho


def number_state(space: FockSpace, occupation) -> np.ndarray:
    """|n1 n2 ...><n1 n2 ...| as a density matrix."""
    occ = np.atleast_1d(np.asarray(occupation, dtype=int))
    if occ.shape != (space.n_modes,):
        raise ValueError(f"need {space.n_modes} occupation numbers, got {occ.shape}")
    if np.any(occ >= space.cutoff):
        raise ValueError("occupation exceeds the cutoff")
    index = int(np.ravel_multi_index(tuple(occ), (space.cutoff,) * space.n_modes))
    rho = np.zeros((space.dim, space.dim), dtype=complex)
    rho[index, index] = 1.0
    return rho


@dataclass(frozen=True)
class MasterTrajectory:
    """Expectations along a master-equation solution.

    expectations[k, j] is tr(observables[j] rho(t_k)).  leakage is the
    population of the guard levels; trusted is False once it exceeds
    LEAKAGE_THRESHOLD anywhere on the grid.  trace_defect tracks
    |tr rho - 1| (the integrator never renormalizes).
    """

    times: np.ndarray
    expectations: np.ndarray
    leakage: np.ndarray
    trace_defect: np.ndarray
    dt: float

    @property
    def trusted(self) -> bool:
        return bool(self.leakage.max() <= LEAKAGE_THRESHOLD)


def _liouvillian_scale(H: np.ndarray, L_ops: list[np.ndarray]) -> float:
    scale = 2.0 * np.linalg.norm(H, 2)
    for L in L_ops:
        scale += 3.0 * np.linalg.norm(L, 2) ** 2
    return max(scale, 1e-12)


def simulate_master_equation(
    space: FockSpace,
    H: np.ndarray,
    L_ops: list[np.ndarray],
    rho0: np.ndarray,
    t_grid: np.ndarray,
    observables: list[np.ndarray],
    step_budget: float = 0.05,
) -> MasterTrajectory:
    """Integrate drho/dt = -i[H, rho] + sum_k (L rho L^dag - (1/2){L^dag L, rho}).

    Classical fixed-step RK4; the step is chosen so that the estimated
    Liouvillian norm times dt stays below step_budget.  Records guard
    -level population (leakage) and the trace defect at every grid point.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or len(t_grid) < 1 or np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    Heff = -1j * H.astype(complex)
    for L in L_ops:
        Heff = Heff - 0.5 * (L.conj().T @ L)

    def rhs(rho):
        out = Heff @ rho + rho @ Heff.conj().T
        for L in L_ops:
            out += L @ rho @ L.conj().T
        return out

    dt_max = step_budget / _liouvillian_scale(H, L_ops)
    guard_idx = space.guard_indices()
    rho = np.array(rho0, dtype=complex)
    n_obs = len(observables)
    expectations = np.zeros((len(t_grid), n_obs), dtype=complex)
    leakage = np.zeros(len(t_grid))
    trace_defect = np.zeros(len(t_grid))

    def record(k):
        for j, O in enumerate(observables):
            expectations[k, j] = np.einsum("ij,ji->", O, rho)
        pops = np.diag(rho).real
        leakage[k] = float(pops[guard_idx].sum()) if len(guard_idx) else 0.0
        trace_defect[k] = abs(float(np.trace(rho).real) - 1.0) + abs(float(np.trace(rho).imag))

    t = t_grid[0]
    record(0)
    for k in range(1, len(t_grid)):
        span = t_grid[k] - t
        n_steps = max(1, int(np.ceil(span / dt_max)))
        h = span / n_steps
        for _ in range(n_steps):
            k1 = rhs(rho)
            k2 = rhs(rho + 0.5 * h * k1)
            k3 = rhs(rho + 0.5 * h * k2)
            k4 = rhs(rho + h * k3)
            rho = rho + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = t_grid[k]
        record(k)
    return MasterTrajectory(
        times=t_grid,
        expectations=expectations,
        leakage=leakage,
        trace_defect=trace_defect,
        dt=dt_max,
    )
