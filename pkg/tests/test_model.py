"""Structure constants, description objects and their validation."""

import numpy as np
import pytest

from qrobust.model import (
    DimensionMismatchError,
    DoubledConstants,
    LinearNominalSystem,
    PolynomialPerturbation,
    QuadraticPerturbation,
    StructuredP,
    assemble_doubled,
    conjugation_defect,
    doubled_J,
    doubled_Sigma,
    random_structured_positive,
    validate,
)


def test_structure_constants_are_involutions():
    for n in (1, 2, 3):
        J = doubled_J(n)
        Sigma = doubled_Sigma(n)
        eye = np.eye(2 * n)
        assert np.array_equal(J @ J, eye)
        assert np.array_equal(Sigma @ Sigma, eye)
        assert np.array_equal(Sigma @ J @ Sigma, -J)


def test_doubled_constants_for_modes():
    consts = DoubledConstants.for_modes(2)
    assert consts.J.shape == (4, 4)
    assert np.array_equal(consts.J, np.diag([1, 1, -1, -1]))
    assert np.array_equal(consts.Sigma, np.block(
        [[np.zeros((2, 2)), np.eye(2)], [np.eye(2), np.zeros((2, 2))]]
    ))


def test_doubled_blocks_have_conjugation_symmetry():
    rng = np.random.default_rng(11)
    for n in (1, 2, 3):
        Sigma = doubled_Sigma(n)
        M1 = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        M1 = 0.5 * (M1 + M1.conj().T)
        M2 = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        M2 = 0.5 * (M2 + M2.T)
        system = LinearNominalSystem(M1=M1, M2=M2, N1=M1.copy(), N2=M2.copy())
        for X in (system.doubled_M(), system.doubled_N()):
            assert conjugation_defect(X, Sigma) < 1e-15


def test_nominal_system_shape_accessors():
    system = LinearNominalSystem(
        M1=np.zeros((2, 2)),
        M2=np.zeros((2, 2)),
        N1=np.zeros((3, 2)),
        N2=np.zeros((3, 2)),
    )
    assert system.n_modes == 2
    assert system.n_channels == 3
    assert system.doubled_M().shape == (4, 4)
    assert system.doubled_N().shape == (6, 4)


def test_frozen_arrays_reject_writes():
    system = LinearNominalSystem(
        M1=np.zeros((1, 1)), M2=np.zeros((1, 1)),
        N1=np.ones((1, 1)), N2=np.zeros((1, 1)),
    )
    with pytest.raises(ValueError):
        system.M1[0, 0] = 5.0


def test_validate_flags_nonhermitian_m1():
    system = LinearNominalSystem(
        M1=np.array([[0.0, 1.0], [0.0, 0.0]]),
        M2=np.zeros((2, 2)),
        N1=np.zeros((1, 2)),
        N2=np.zeros((1, 2)),
    )
    problems = validate(system)
    assert any(p.field_name == "M1" for p in problems)


def test_validate_flags_nonsymmetric_m2():
    system = LinearNominalSystem(
        M1=np.zeros((2, 2)),
        M2=np.array([[0.0, 1.0], [-1.0, 0.0]]),
        N1=np.zeros((1, 2)),
        N2=np.zeros((1, 2)),
    )
    problems = validate(system)
    assert any(p.field_name == "M2" for p in problems)


def test_validate_raises_on_shape_mismatch():
    with pytest.raises(DimensionMismatchError):
        validate(LinearNominalSystem(
            M1=np.zeros((2, 2)), M2=np.zeros((2, 2)),
            N1=np.zeros((1, 2)), N2=np.zeros((1, 3)),
        ))


def test_validate_delta_norm_bound():
    # ||Delta|| = 2 with gamma = 1 sits exactly on the bound 2/gamma
    on_bound = QuadraticPerturbation(
        E1=np.eye(1), E2=np.zeros((1, 1)),
        Delta1=np.zeros((1, 1)), Delta2=np.array([[2.0]]), gamma=1.0,
    )
    assert validate(on_bound) == []
    over = QuadraticPerturbation(
        E1=np.eye(1), E2=np.zeros((1, 1)),
        Delta1=np.zeros((1, 1)), Delta2=np.array([[2.1]]), gamma=1.0,
    )
    problems = validate(over)
    assert any("2/gamma" in p.message for p in problems)


def test_validate_rejects_nonpositive_gamma():
    pert = QuadraticPerturbation(
        E1=np.eye(1), E2=np.zeros((1, 1)),
        Delta1=np.zeros((1, 1)), Delta2=np.zeros((1, 1)), gamma=0.0,
    )
    assert any(p.field_name == "gamma" for p in validate(pert))


def test_validate_polynomial_coefficient_symmetry():
    good = PolynomialPerturbation(
        E1row=np.array([1.0]), E2row=np.array([0.0]),
        coeffs={(2, 0): 0.5 + 0.25j, (0, 2): 0.5 - 0.25j},
    )
    assert validate(good) == []
    bad = PolynomialPerturbation(
        E1row=np.array([1.0]), E2row=np.array([0.0]),
        coeffs={(2, 0): 0.5},
    )
    assert any(p.field_name == "coeffs" for p in validate(bad))


def test_validate_polynomial_degree_cap_and_deltas():
    over = PolynomialPerturbation(
        E1row=np.array([1.0]), E2row=np.array([0.0]),
        coeffs={(5, 4): 1.0, (4, 5): 1.0},
        max_degree=8,
    )
    assert any("degree cap" in p.message for p in validate(over))
    neg = PolynomialPerturbation(
        E1row=np.array([1.0]), E2row=np.array([0.0]),
        coeffs={}, delta1=-1.0,
    )
    assert any(p.field_name == "delta1" for p in validate(neg))


def test_polynomial_degree_and_row():
    pert = PolynomialPerturbation(
        E1row=np.array([1.0, 2.0]), E2row=np.array([0.5, 0.0]),
        coeffs={(3, 1): 1j, (1, 3): -1j},
    )
    assert pert.degree() == 4
    row = pert.doubled_row()
    assert row.shape == (1, 4)
    assert np.allclose(row, [[1.0, 2.0, 0.5, 0.0]])


def test_structured_p_roundtrip_and_validation():
    rng = np.random.default_rng(5)
    P = random_structured_positive(2, rng)
    full = P.full()
    Sigma = doubled_Sigma(2)
    assert conjugation_defect(full, Sigma) < 1e-15
    again = StructuredP.from_full(full)
    assert np.allclose(again.full(), full)
    assert P.smallest_eigenvalue() > 0
    assert validate(P) == []


def test_validate_flags_indefinite_p():
    P = StructuredP(P1=np.array([[-1.0]]), P2=np.zeros((1, 1)))
    assert any("positive definite" in p.message for p in validate(P))


def test_assemble_doubled_opa_layout():
    kappa = 5.0
    system = LinearNominalSystem(
        M1=np.zeros((1, 1)), M2=np.zeros((1, 1)),
        N1=np.array([[np.sqrt(kappa)]]), N2=np.zeros((1, 1)),
    )
    pert = QuadraticPerturbation(
        E1=np.eye(1), E2=np.zeros((1, 1)),
        Delta1=np.zeros((1, 1)), Delta2=np.array([[1j]]), gamma=1.0,
    )
    asm = assemble_doubled(system, pert)
    assert np.allclose(asm.N, np.sqrt(kappa) * np.eye(2))
    assert np.allclose(asm.E, np.eye(2))
    assert np.allclose(asm.Delta, np.array([[0, 1j], [-1j, 0]]))
    assert np.array_equal(asm.J, np.diag([1.0, -1.0]))


def test_assemble_doubled_rejects_invalid():
    system = LinearNominalSystem(
        M1=np.array([[0.0, 1.0], [0.0, 0.0]]),
        M2=np.zeros((2, 2)),
        N1=np.zeros((1, 2)),
        N2=np.zeros((1, 2)),
    )
    with pytest.raises(ValueError, match="M1"):
        assemble_doubled(system)


def test_assemble_doubled_checks_channel_width():
    system = LinearNominalSystem(
        M1=np.zeros((2, 2)), M2=np.zeros((2, 2)),
        N1=np.eye(2), N2=np.zeros((2, 2)),
    )
    pert = QuadraticPerturbation(
        E1=np.eye(1), E2=np.zeros((1, 1)),
        Delta1=np.zeros((1, 1)), Delta2=np.zeros((1, 1)), gamma=1.0,
    )
    with pytest.raises(DimensionMismatchError):
        assemble_doubled(system, pert)


def test_random_structured_positive_is_reproducible():
    a = random_structured_positive(3, np.random.default_rng(42)).full()
    b = random_structured_positive(3, np.random.default_rng(42)).full()
    assert np.array_equal(a, b)
    assert np.linalg.eigvalsh(a).min() > 0
