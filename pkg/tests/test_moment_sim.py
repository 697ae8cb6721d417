"""Second-moment dynamics: drift, calibrated noise, exact stepping."""

import numpy as np
import pytest

from qrobust import fock_oracle as fo
from qrobust import moment_sim as ms
from qrobust.model import LinearNominalSystem, QuadraticPerturbation
from qrobust.sbr_analysis import certify_quadratic


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


def test_closed_loop_drift_folds_the_perturbation_in():
    system, pert = make_opa(5.0)
    F_nom = ms.closed_loop_drift(system, None)
    assert np.allclose(F_nom, -2.5 * np.eye(2))
    F = ms.closed_loop_drift(system, pert)
    assert np.allclose(F, np.array([[-2.5, 1.0], [1.0, -2.5]]))
    assert sorted(np.linalg.eigvals(F).real) == pytest.approx([-3.5, -1.5])


def test_noise_calibration_recovers_the_damping_channel():
    system, pert = make_opa(5.0)
    calib = ms.calibrate_noise(system, pert)
    assert calib.trusted
    assert calib.residual < 1e-9
    assert np.allclose(calib.G, np.diag([5.0, 0.0]), atol=1e-10)
    # the quadratic perturbation changes the drift, never the noise
    calib_nom = ms.calibrate_noise(system, None)
    assert np.allclose(calib.G, calib_nom.G, atol=1e-10)


def test_vacuum_moments_layout():
    Q0 = ms.vacuum_moments(2)
    assert np.allclose(Q0, np.diag([1.0, 1.0, 0.0, 0.0]))


def test_simulate_moments_is_exact_per_step():
    # the block-exponential update must agree with the eigenbasis solution
    # Q(t) = e^{Ft}(Q0 - Qss)e^{F^dag t} + Qss for constant G
    system, pert = make_opa(5.0)
    F = ms.closed_loop_drift(system, pert)
    G = np.diag([5.0, 0.0]).astype(complex)
    Q0 = ms.vacuum_moments(1)
    Qss = ms.steady_state_moments(F, G)
    t = np.array([0.0, 0.7, 1.9, 3.0])
    traj = ms.simulate_moments(F, G, Q0, t)
    import scipy.linalg as sla

    for k, tk in enumerate(t):
        Phi = sla.expm(F * tk)
        exact = Phi @ (Q0 - Qss) @ Phi.conj().T + Qss
        assert np.linalg.norm(traj.Q[k] - exact) < 1e-12


def test_simulate_moments_step_size_invariance():
    system, pert = make_opa(5.0)
    F = ms.closed_loop_drift(system, pert)
    G = np.diag([5.0, 0.0]).astype(complex)
    Q0 = ms.vacuum_moments(1)
    coarse = ms.simulate_moments(F, G, Q0, np.linspace(0, 2, 3))
    fine = ms.simulate_moments(F, G, Q0, np.linspace(0, 2, 201))
    assert np.linalg.norm(coarse.Q[-1] - fine.Q[-1]) < 1e-11


def test_steady_state_moments_opa():
    system, pert = make_opa(5.0)
    F = ms.closed_loop_drift(system, pert)
    G = ms.calibrate_noise(system, pert).G
    Qss = ms.steady_state_moments(F, G)
    assert Qss[0, 0].real == pytest.approx(23.0 / 21.0, rel=1e-12)
    assert Qss[1, 1].real == pytest.approx(2.0 / 21.0, rel=1e-12)
    assert np.trace(Qss).real == pytest.approx(25.0 / 21.0, rel=1e-12)


def test_trajectory_trace_matches_oracle():
    system, pert = make_opa(5.0)
    F = ms.closed_loop_drift(system, pert)
    calib = ms.calibrate_noise(system, pert)
    t = np.linspace(0.0, 1.5, 16)
    traj = ms.simulate_moments(F, calib.G, ms.vacuum_moments(1), t)

    space = fo.FockSpace(1, 30, guard=4)
    H = fo.nominal_hamiltonian(space, system) + fo.perturbation_hamiltonian(space, pert)
    L_ops = fo.coupling_operators(space, system)
    xs = fo.doubled_operators(space)
    obs = [xs[0] @ xs[0].conj().T, xs[1] @ xs[1].conj().T]
    otraj = fo.simulate_master_equation(space, H, L_ops, fo.vacuum_state(space), t, obs)
    tr_oracle = (otraj.expectations[:, 0] + otraj.expectations[:, 1]).real
    assert np.max(np.abs(traj.trace - tr_oracle)) < 1e-8


def test_bound_column_tracks_certificate():
    system, pert = make_opa(5.0)
    cert = certify_quadratic(system, pert)
    F = ms.closed_loop_drift(system, pert)
    G = ms.calibrate_noise(system, pert).G
    t = np.linspace(0.0, 4.0, 41)
    traj = ms.simulate_moments(F, G, ms.vacuum_moments(1), t, certificate=cert)
    expected = cert.c1 * np.exp(-cert.c2 * t) * traj.trace[0] + cert.c3
    assert np.allclose(traj.bound, expected)
    assert np.all(traj.trace <= traj.bound)
    no_cert = ms.simulate_moments(F, G, ms.vacuum_moments(1), t)
    assert np.all(np.isnan(no_cert.bound))


def test_simulate_moments_rejects_bad_grid():
    with pytest.raises(ValueError):
        ms.simulate_moments(
            -np.eye(2), np.zeros((2, 2)), np.eye(2), np.array([1.0, 0.5])
        )
