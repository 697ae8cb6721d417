"""Closed-loop second-moment dynamics for linear-quadratic models.

When the perturbation Hamiltonian is quadratic the Heisenberg equations
close on the first two moments: the matrix Q(t) = <x x^dag> obeys a
Lyapunov ODE dQ/dt = F Q + Q F^dag + G.  The drift F follows from the
closed-loop Hamiltonian and the couplings; the constant noise block G is
not written down here from a formula but calibrated once against the
Fock oracle, which keeps the simulator honest about ordering
conventions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import fock_oracle as fo
from .model import (
    DoubledConstants,
    LinearNominalSystem,
    QuadraticPerturbation,
)
from .sbr_analysis import StabilityCertificate, drift_matrix

#: cutoff used for the one-shot noise calibration (kept small; G is exact
#: on any space large enough to hold quartic products)
CALIBRATION_CUTOFF = 8

#: calibration is rejected if the generator minus drift terms deviates
#: from a constant by more than this
CALIBRATION_TOL = 1e-9


def closed_loop_drift(
    system: LinearNominalSystem, pert: QuadraticPerturbation | None = None
) -> np.ndarray:
    """Drift of <x>: the nominal matrix with E^dag Delta E folded into M."""
    consts = DoubledConstants.for_modes(system.n_modes)
    M = system.doubled_M()
    if pert is not None:
        # both Hamiltonians carry the same 1/2 prefactor, so the channel
        # term folds into M without an extra factor
        E = pert.doubled_E()
        M = M + E.conj().T @ pert.doubled_Delta() @ E
    return drift_matrix(M, system.doubled_N(), consts.J)


@dataclass(frozen=True)
class NoiseCalibration:
    """Constant noise block G plus the worst residual seen while fitting it."""

    G: np.ndarray
    residual: float

    @property
    def trusted(self) -> bool:
        return self.residual <= CALIBRATION_TOL


def calibrate_noise(
    system: LinearNominalSystem,
    pert: QuadraticPerturbation | None = None,
    cutoff: int = CALIBRATION_CUTOFF,
) -> NoiseCalibration:
    """Extract G_ij as the scalar part of the generator of x_i x_j^dag.

    For each entry the oracle computes G(x_i x_j*) and subtracts the
    drift contributions (F <x x^dag> + <x x^dag> F^dag)_ij evaluated as
    operators; what remains must be a multiple of the identity.  The
    deviation from a scalar is reported as the residual.
    """
    F = closed_loop_drift(system, pert)
    two_n = 2 * system.n_modes
    space = fo.FockSpace(system.n_modes, cutoff, guard=4)
    xs = fo.doubled_operators(space)
    H = fo.nominal_hamiltonian(space, system)
    if pert is not None:
        H = H + fo.perturbation_hamiltonian(space, pert)
    L_ops = fo.coupling_operators(space, system)

    prods = [[xs[i] @ xs[j].conj().T for j in range(two_n)] for i in range(two_n)]
    G = np.zeros((two_n, two_n), dtype=complex)
    worst = 0.0
    for i in range(two_n):
        for j in range(two_n):
            gen = fo.generator(prods[i][j], H, L_ops)
            for k in range(two_n):
                if F[i, k] != 0:
                    gen = gen - F[i, k] * prods[k][j]
                if F[j, k] != 0:
                    gen = gen - np.conj(F[j, k]) * prods[i][k]
            s, dev = fo.scalar_part(space, gen)
            G[i, j] = s
            worst = max(worst, dev)
    G = 0.5 * (G + G.conj().T)
    return NoiseCalibration(G=G, residual=worst)


def vacuum_moments(n_modes: int) -> np.ndarray:
    """<x x^dag> in the vacuum: <a a^dag> = I, the other blocks vanish."""
    Q = np.zeros((2 * n_modes, 2 * n_modes), dtype=complex)
    Q[:n_modes, :n_modes] = np.eye(n_modes)
    return Q


@dataclass(frozen=True)
class MomentTrajectory:
    """Q(t) on a time grid, with tr Q and the certified envelope if any.

    bound[k] = c1 * exp(-c2 t_k) * tr Q(0) + c3 when a certificate was
    supplied, else NaN.
    """

    times: np.ndarray
    Q: np.ndarray
    trace: np.ndarray
    bound: np.ndarray


def _step_matrices(F: np.ndarray, G: np.ndarray, h: float):
    """Exact discrete update over step h by the block-exponential trick.

    exp(h [[-F, G], [0, F^dag]]) has upper-right block exp(-hF) * C with
    Q_h = exp(hF) C the accumulated noise, so Q <- Phi Q Phi^dag + Q_h is
    exact for the linear ODE.
    """
    n = F.shape[0]
    blk = np.zeros((2 * n, 2 * n), dtype=complex)
    blk[:n, :n] = -F
    blk[:n, n:] = G
    blk[n:, n:] = F.conj().T
    big = sla.expm(blk * h)
    Phi = sla.expm(F * h)
    Qh = Phi @ big[:n, n:]
    Qh = 0.5 * (Qh + Qh.conj().T)
    return Phi, Qh


def simulate_moments(
    F: np.ndarray,
    G: np.ndarray,
    Q0: np.ndarray,
    t_grid: np.ndarray,
    certificate: StabilityCertificate | None = None,
) -> MomentTrajectory:
    """Propagate dQ/dt = F Q + Q F^dag + G exactly on the given grid."""
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or len(t_grid) < 1 or np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    n = F.shape[0]
    Q = np.array(Q0, dtype=complex)
    out = np.zeros((len(t_grid), n, n), dtype=complex)
    out[0] = Q
    cache: dict[float, tuple[np.ndarray, np.ndarray]] = {}
    for k in range(1, len(t_grid)):
        h = float(t_grid[k] - t_grid[k - 1])
        key = round(h, 15)
        if key not in cache:
            cache[key] = _step_matrices(F, G, h)
        Phi, Qh = cache[key]
        Q = Phi @ Q @ Phi.conj().T + Qh
        Q = 0.5 * (Q + Q.conj().T)
        out[k] = Q
    trace = np.einsum("kii->k", out).real
    if certificate is not None and certificate.stable:
        c1, c2, c3 = certificate.c1, certificate.c2, certificate.c3
        bound = c1 * np.exp(-c2 * (t_grid - t_grid[0])) * trace[0] + c3
    else:
        bound = np.full(len(t_grid), np.nan)
    return MomentTrajectory(times=t_grid, Q=out, trace=trace, bound=bound)


def steady_state_moments(F: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Solve F Q + Q F^dag + G = 0 (requires F Hurwitz)."""
    Q = sla.solve_continuous_lyapunov(F, -G)
    return 0.5 * (Q + Q.conj().T)
