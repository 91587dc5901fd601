import numpy as np
import pytest

from permon import ipa, riccati, trajectory
from permon._kernels import rk4_augmented
from permon.errors import SteinUniquenessError
from permon.model import AgentParams, Scenario, TargetModel

from conftest import make_target, scalar_scenario_with


def test_homogeneous_identity_for_zero_generator():
    # A = 0 and eta = 0: the variational generator vanishes
    nodes = np.linspace(0, 1, 11)
    z = np.zeros(10)
    zn = np.zeros((10, 0))
    mask = np.zeros(0, dtype=np.bool_)
    A = np.zeros((2, 2))
    _, sh, _ = rk4_augmented(nodes, z, z, z, zn, zn, zn, mask, A,
                             np.eye(2), np.eye(2), 6.0, np.eye(2))
    assert np.allclose(sh, np.eye(2))


def test_homogeneous_scalar_decay(scalar_scenario):
    # a=0, g=1, eta=1, omega_bar=1: F = -T, so Sigma_H(q) = exp(-T q)
    cyc = riccati.limit_cycle(scalar_scenario, 0)
    sys = ipa.homogeneous_transition(cyc, scalar_scenario, 0)
    T = scalar_scenario.T
    expected = np.exp(-T * cyc.grid)
    assert np.abs(sys.sigma_h[:, 0, 0] - expected).max() < 1e-9
    assert sys.spectral_radius_end == pytest.approx(np.exp(-T), rel=1e-9)
    assert np.array_equal(sys.sigma_h[0], np.eye(1))


def test_spectral_radius_scenario1(scenario1):
    cycles = riccati.compute_cycles(scenario1)
    for i, cyc in enumerate(cycles):
        sys = ipa.homogeneous_transition(cyc, scenario1, i)
        assert sys.spectral_radius_end < 1.0


def test_particular_zero_forcing(scenario1):
    # add a faraway agent: its parameters never touch either eta
    far = AgentParams(s0=100.0, tau=(0.1, 0.1), omega=(0.1, 0.1), r=0.5)
    sc = Scenario(targets=scenario1.targets,
                  agents=scenario1.agents + (far,), T=scenario1.T)
    cyc = riccati.limit_cycle(sc, 0)
    sz = ipa.particular_solution("agent2.tau1", cyc, sc, 0)
    assert np.abs(sz).max() == 0.0


def test_particular_T_forcing_is_lyapunov_drift():
    # kernel-level check: with eta = 0 and A = 0 the T-column forcing
    # reduces to A Omega + Omega A^T + Q = Q, so Sigma_ZI(1) = Q
    nodes = np.linspace(0, 1, 21)
    K = 20
    z = np.zeros(K)
    dz = np.zeros((K, 1))
    mask = np.ones(1, dtype=np.bool_)
    A = np.zeros((2, 2))
    Q = np.diag([2.0, 0.5])
    _, _, sz = rk4_augmented(nodes, z, z, z, dz, dz, dz, mask, A, Q,
                             np.eye(2), 6.0, np.eye(2))
    assert np.allclose(sz[-1, 0], Q, atol=1e-12)


def test_particular_scalar_closed_form():
    # scalar a=0, g=1, eta=1, omega_bar=1, T=1, constant d(eta)/d(theta)=1:
    # s' = -2 s - 1, s(0)=0  =>  s(1) = -(1 - e^-2)/2
    nodes = np.linspace(0, 1, 201)
    K = 200
    ones = np.ones(K)
    done = np.ones((K, 1))
    mask = np.zeros(1, dtype=np.bool_)
    _, _, sz = rk4_augmented(nodes, ones, ones, ones, done, done, done, mask,
                             np.zeros((1, 1)), np.ones((1, 1)),
                             np.ones((1, 1)), 1.0, np.ones((1, 1)))
    expected = -(1.0 - np.exp(-2.0)) / 2.0
    assert sz[-1, 0, 0] == pytest.approx(expected, abs=1e-8)


def test_stein_contraction_to_inhomogeneity():
    Z = np.array([[1.0, 0.2], [0.2, 2.0]])
    lam = ipa.solve_stein(np.zeros((2, 2)), Z)
    assert np.allclose(lam, Z)


def test_stein_geometric_series():
    lam = ipa.solve_stein(0.5 * np.eye(2), np.eye(2))
    assert np.allclose(lam, (4.0 / 3.0) * np.eye(2))


def test_stein_scalar_closed_form():
    lam = ipa.solve_stein(np.array([[np.exp(-1.0)]]), np.array([[1.0]]))
    assert lam[0, 0] == pytest.approx(1.0 / (1.0 - np.exp(-2.0)), rel=1e-12)


def test_stein_residual_random():
    rng = np.random.default_rng(0)
    for _ in range(20):
        S = rng.normal(size=(3, 3))
        S *= 0.9 / max(np.abs(np.linalg.eigvals(S)))
        W = rng.normal(size=(3, 3))
        Z = W @ W.T
        lam = ipa.solve_stein(S, Z)
        res = np.linalg.norm(lam - S @ lam @ S.T - Z)
        assert res <= 1e-10 * (1 + np.linalg.norm(lam))
        assert np.allclose(lam, lam.T)


def test_stein_rejects_noncontractive():
    with pytest.raises(SteinUniquenessError):
        ipa.solve_stein(np.eye(2), np.eye(2))


def test_sensitivity_trace_initial_value(scenario1):
    cyc = riccati.limit_cycle(scenario1, 0)
    sys = ipa.homogeneous_transition(cyc, scenario1, 0)
    sz = ipa.particular_solution("agent1.tau1", cyc, scenario1, 0)
    lam = ipa.solve_stein(sys.sigma_h_end, sz[-1])
    X = ipa.sensitivity_trace(sys, lam, sz)
    assert np.allclose(X[0], lam)


def test_sensitivity_periodicity(scenario1):
    cycles = riccati.compute_cycles(scenario1)
    names = trajectory.param_names(scenario1)
    for i, cyc in enumerate(cycles):
        sys = ipa.homogeneous_transition(cyc, scenario1, i)
        for name in names:
            sz = ipa.particular_solution(name, cyc, scenario1, i)
            lam = ipa.solve_stein(sys.sigma_h_end, sz[-1])
            X = ipa.sensitivity_trace(sys, lam, sz)
            gap = np.linalg.norm(X[-1] - X[0])
            assert gap <= 1e-8 * (1 + np.linalg.norm(lam))


def test_gradient_block_of_decoupled_agent(scenario1):
    far = AgentParams(s0=100.0, tau=(0.1, 0.1), omega=(0.1, 0.1), r=0.5)
    sc = Scenario(targets=scenario1.targets,
                  agents=scenario1.agents + (far,), T=scenario1.T)
    cycles = riccati.compute_cycles(sc)
    grad = ipa.cost_gradient(sc, cycles)
    for name in ("agent2.s0", "agent2.tau1", "agent2.tau2",
                 "agent2.omega1", "agent2.omega2"):
        assert grad[name] == 0.0
    assert np.all(np.isfinite(grad.values))


def test_symmetric_s0_gradient_vanishes(scenario1):
    cycles = riccati.compute_cycles(scenario1)
    grad = ipa.cost_gradient(scenario1, cycles)
    assert abs(grad["agent1.s0"]) < 1e-6


def test_gradient_bundle_interface(scenario1):
    cycles = riccati.compute_cycles(scenario1)
    grad = ipa.cost_gradient(scenario1, cycles)
    assert grad.names[-1] == "global.T"
    assert grad.dT == grad["global.T"]
    d = grad.to_dict()
    assert set(d) == set(grad.names)
