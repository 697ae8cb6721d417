"""Truncated number-basis representations and operator identity checks."""

import numpy as np
import pytest

from qrobust import fock_oracle as fo
from qrobust.model import (
    LinearNominalSystem,
    PolynomialPerturbation,
    QuadraticPerturbation,
    doubled_J,
    doubled_Sigma,
    random_structured_positive,
)
from qrobust.sbr_analysis import double_commutator_constant


def make_opa(kappa, gamma=1.0):
    system = LinearNominalSystem(
        M1=np.zeros((1, 1)), M2=np.zeros((1, 1)),
        N1=np.array([[np.sqrt(kappa)]]), N2=np.zeros((1, 1)),
    )
    pert = QuadraticPerturbation(
        E1=np.eye(1), E2=np.zeros((1, 1)),
        Delta1=np.zeros((1, 1)), Delta2=np.array([[1j]]), gamma=gamma,
    )
    return system, pert


def random_system(rng, n, m):
    M1 = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    M1 = 0.5 * (M1 + M1.conj().T)
    M2 = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    M2 = 0.5 * (M2 + M2.T)
    N1 = rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))
    N2 = rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))
    return LinearNominalSystem(M1=M1, M2=M2, N1=N1, N2=N2)


def test_space_bookkeeping():
    space = fo.FockSpace(2, 4, guard=1)
    assert space.dim == 16
    occ = space.occupations()
    assert occ.shape == (16, 2)
    # kron ordering: the first factor varies slowest
    assert list(occ[1]) == [0, 1]
    assert list(occ[4]) == [1, 0]
    kept = space.kept()
    assert all(occ[k].sum() <= 2 for k in kept)
    assert len(kept) + len(space.guard_indices()) == 16


def test_space_refuses_silly_dimensions():
    with pytest.raises(ValueError):
        fo.FockSpace(4, 30)
    with pytest.raises(ValueError):
        fo.FockSpace(1, 10, guard=10)


def test_ladder_matrix_and_ccr():
    space = fo.FockSpace(1, 8, guard=1)
    a = fo.mode_operators(space)[0]
    assert a[0, 1] == pytest.approx(1.0)
    assert a[2, 3] == pytest.approx(np.sqrt(3.0))
    comm = fo.commutator(a, a.conj().T)
    assert fo.rel_residual(space, comm, np.eye(space.dim)) < 1e-14


def test_doubled_operators_obey_the_doubled_ccr():
    space = fo.FockSpace(2, 6, guard=1)
    xs = fo.doubled_operators(space)
    J = doubled_J(2)
    eye = np.eye(space.dim)
    for i in range(4):
        for j in range(4):
            comm = fo.commutator(xs[i], xs[j].conj().T)
            assert fo.rel_residual(space, comm, J[i, j] * eye) < 1e-12


def test_quadratic_operator_against_manual_sum():
    space = fo.FockSpace(1, 10, guard=2)
    a = fo.mode_operators(space)[0]
    A = np.array([[2.0, 1j], [-1j, 0.5]])
    got = fo.quadratic_operator(space, A)
    manual = (
        2.0 * a.conj().T @ a
        + 1j * a.conj().T @ a.conj().T
        - 1j * a @ a
        + 0.5 * a @ a.conj().T
    )
    assert np.allclose(got, manual)


def test_number_state_indexing():
    space = fo.FockSpace(2, 5)
    rho = fo.number_state(space, [1, 2])
    n_ops = [op.conj().T @ op for op in fo.mode_operators(space)]
    assert np.einsum("ij,ji->", n_ops[0], rho).real == pytest.approx(1.0)
    assert np.einsum("ij,ji->", n_ops[1], rho).real == pytest.approx(2.0)
    with pytest.raises(ValueError):
        fo.number_state(space, [5, 0])


def test_scalar_part_detects_nonconstants():
    space = fo.FockSpace(1, 12, guard=2)
    s, dev = fo.scalar_part(space, 3.5j * np.eye(space.dim))
    assert s == pytest.approx(3.5j)
    assert dev < 1e-15
    a = fo.mode_operators(space)[0]
    _, dev = fo.scalar_part(space, a.conj().T @ a)
    assert dev > 0.1


def test_identity_battery_random_single_mode():
    rng = np.random.default_rng(101)
    space = fo.FockSpace(1, 30, guard=4)
    for _ in range(5):
        system = random_system(rng, 1, int(rng.integers(1, 3)))
        P = random_structured_positive(1, rng)
        checks = fo.identity_battery(space, system, P=P)
        by_name = {c.name: c for c in checks}
        assert by_name["commutator_with_nominal"].value < 1e-9
        assert by_name["dissipator_action"].value < 1e-9
        assert by_name["gradient_commutator"].value < 1e-9
        assert all(c.passed for c in checks)


def test_identity_battery_two_modes():
    rng = np.random.default_rng(202)
    space = fo.FockSpace(2, 12, guard=4)
    system = random_system(rng, 2, 2)
    P = random_structured_positive(2, rng)
    checks = fo.identity_battery(space, system, P=P)
    assert all(c.passed for c in checks), [str(c.name) for c in checks if not c.passed]


def test_channel_decomposition_quadratic():
    rng = np.random.default_rng(303)
    space = fo.FockSpace(1, 30, guard=4)
    for mz in (1, 2):
        E1 = rng.standard_normal((mz, 1)) + 1j * rng.standard_normal((mz, 1))
        E2 = rng.standard_normal((mz, 1)) + 1j * rng.standard_normal((mz, 1))
        D1 = rng.standard_normal((mz, mz)) + 1j * rng.standard_normal((mz, mz))
        D1 = 0.5 * (D1 + D1.conj().T)
        D2 = rng.standard_normal((mz, mz)) + 1j * rng.standard_normal((mz, mz))
        D2 = 0.5 * (D2 + D2.T)
        Dfull = np.block([[D1, D2], [D2.conj(), D1.conj()]])
        gamma = 2.0 / np.linalg.norm(Dfull, 2)
        pert = QuadraticPerturbation(E1=E1, E2=E2, Delta1=D1, Delta2=D2, gamma=gamma)
        P = random_structured_positive(1, rng)
        V = fo.lyapunov_operator(space, P.full())
        H2 = fo.perturbation_hamiltonian(space, pert)
        res = fo.verify_decomposition_w1(
            space, V, H2, fo.w_operators(space, pert), fo.channel_operators(space, pert)
        )
        assert res < 1e-12
        # Delta scaled onto the gain bound keeps w inside the sector
        assert fo.sector_slack_multichannel(space, pert) >= -1e-7


def test_derivative_decomposition_polynomial():
    rng = np.random.default_rng(404)
    space = fo.FockSpace(1, 30, guard=6)
    J, Sigma = doubled_J(1), doubled_Sigma(1)
    for _ in range(4):
        row = 0.5 * (rng.standard_normal(2) + 1j * rng.standard_normal(2))
        c20 = 0.3 * complex(rng.standard_normal(), rng.standard_normal())
        c31 = 0.1 * complex(rng.standard_normal(), rng.standard_normal())
        pert = PolynomialPerturbation(
            E1row=row[:1], E2row=row[1:],
            coeffs={
                (2, 0): c20, (0, 2): np.conj(c20),
                (3, 1): c31, (1, 3): np.conj(c31),
                (1, 1): float(rng.standard_normal()),
                (2, 2): 0.05,
            },
        )
        P = random_structured_positive(1, rng)
        V = fo.lyapunov_operator(space, P.full())
        mu = double_commutator_constant(P.full(), pert.doubled_row(), J, Sigma)
        result = fo.verify_decomposition_w2(space, V, pert, mu)
        assert result.residual < 1e-12
        assert result.mu_constant
        assert result.mu_matches


def test_mu_formula_matches_measured_commutator():
    space = fo.FockSpace(1, 20, guard=4)
    J, Sigma = doubled_J(1), doubled_Sigma(1)
    P = np.array([[1.0, 0.5], [0.5, 1.0]], dtype=complex)
    Et = np.array([[1.0, 0.0]], dtype=complex)
    mu = double_commutator_constant(P, Et, J, Sigma)
    assert mu == pytest.approx(-1.0)
    Z = fo.linear_combination(space, Et)
    V = fo.lyapunov_operator(space, P)
    measured, dev = fo.scalar_part(space, fo.commutator(Z, fo.commutator(V, Z)))
    assert dev < 1e-10
    assert measured == pytest.approx(mu, abs=1e-10)


def test_sector_slacks_for_pure_squeezing_polynomial():
    # f = (zeta^2 + zeta*^2)/2 with zeta = a: f'' = 1 needs delta2 >= 1
    space = fo.FockSpace(1, 30, guard=4)
    ok = PolynomialPerturbation(
        E1row=np.array([1.0]), E2row=np.array([0.0]),
        coeffs={(2, 0): 0.5, (0, 2): 0.5}, delta1=0.0, delta2=1.0,
    )
    s1, s2 = fo.sector_slacks(space, ok)
    assert s1 == pytest.approx(1.0, abs=1e-10)
    assert s2 == pytest.approx(0.0, abs=1e-10)
    tight = PolynomialPerturbation(
        E1row=np.array([1.0]), E2row=np.array([0.0]),
        coeffs={(2, 0): 0.5, (0, 2): 0.5}, delta1=0.0, delta2=0.0,
    )
    _, s2 = fo.sector_slacks(space, tight)
    assert s2 == pytest.approx(-1.0, abs=1e-10)


def test_dissipation_slack_hand_worked_point():
    # P = I/2, c = 1, lambda_tilde = 5/2 keeps the kappa = 5 inequality
    # feasible; the same P at kappa = 3 breaks it
    space = fo.FockSpace(1, 30, guard=4)
    P = 0.5 * np.eye(2, dtype=complex)
    V = fo.lyapunov_operator(space, P)
    for kappa, sign in ((5.0, +1), (3.0, -1)):
        system, pert = make_opa(kappa)
        H1 = fo.nominal_hamiltonian(space, system)
        L_ops = fo.coupling_operators(space, system)
        z_ops = fo.channel_operators(space, pert)
        lam_tilde = 0.5 * kappa
        slack = fo.dissipation_slack_multichannel(
            space, V, H1, L_ops, z_ops, 1.0, 1.0, lam_tilde
        )
        if sign > 0:
            assert slack >= -1e-7
        else:
            assert slack < -1.0


def test_master_equation_matches_damped_cavity_decay():
    # pure damping: <n>(t) = n0 exp(-kappa t), no Hamiltonian at all
    kappa = 2.0
    space = fo.FockSpace(1, 10, guard=2)
    a = fo.mode_operators(space)[0]
    L = [np.sqrt(kappa) * a]
    H = np.zeros((space.dim, space.dim), dtype=complex)
    t = np.linspace(0.0, 2.0, 21)
    traj = fo.simulate_master_equation(
        space, H, L, fo.number_state(space, [2]), t, [a.conj().T @ a]
    )
    expected = 2.0 * np.exp(-kappa * t)
    assert np.max(np.abs(traj.expectations[:, 0].real - expected)) < 1e-6
    assert traj.trace_defect.max() < 1e-10
    assert traj.trusted


def test_master_equation_flags_leakage():
    # strong squeezing in a tiny space piles population onto the guard band
    space = fo.FockSpace(1, 5, guard=1)
    a = fo.mode_operators(space)[0]
    H = 1j * (a.conj().T @ a.conj().T - a @ a)
    traj = fo.simulate_master_equation(
        space, H, [], fo.vacuum_state(space), np.linspace(0, 1.5, 4), [a.conj().T @ a]
    )
    assert traj.leakage.max() > fo.LEAKAGE_THRESHOLD
    assert not traj.trusted


def test_master_equation_rejects_bad_grid():
    space = fo.FockSpace(1, 4)
    with pytest.raises(ValueError):
        fo.simulate_master_equation(
            space,
            np.zeros((4, 4)),
            [],
            fo.vacuum_state(space),
            np.array([0.0, 0.0]),
            [],
        )
