import numpy as np
import pytest

from permon.model import AgentParams, Scenario, TargetModel

A_COMMON = [[-1.0, -0.1], [-0.1, 0.01]]
I2 = [[1.0, 0.0], [0.0, 1.0]]


def make_target(x, A=None, Q=None, H=None, R=None):
    return TargetModel(A=A if A is not None else A_COMMON,
                       Q=Q if Q is not None else I2,
                       H=H if H is not None else I2,
                       R=R if R is not None else I2, x=x)


@pytest.fixture(scope="session")
def scenario1():
    """One agent, two targets; the small benchmark configuration."""
    agent = AgentParams(s0=0.0, tau=(0.2, 0.4, 0.2),
                        omega=(0.05, 0.05, 0.05), r=0.9)
    return Scenario(targets=(make_target(-1.0), make_target(1.0)),
                    agents=(agent,), T=6.0)


@pytest.fixture(scope="session")
def scenario2_raw():
    """Two agents, five targets, with the infeasible initial tau
    (alternating sum 0.1) that must be projected before use."""
    tau = tuple(0.1 * v for v in (1, 0.1, 1, 1, 0.1, 1, 0.1, 1, 1, 0.1, 1))
    omega = (0.0125,) * 11
    targets = tuple(make_target(1.0 + 2 * i) for i in range(1, 6))
    agents = (AgentParams(s0=2.7, tau=tau, omega=omega, r=3.5),
              AgentParams(s0=6.8, tau=tau, omega=omega, r=3.5))
    return Scenario(targets=targets, agents=agents, T=6.0)


@pytest.fixture(scope="session")
def scalar_scenario():
    """Scalar target at the origin with a dwelling agent: eta is constantly
    one and the limit cycle is the algebraic steady state omega* = 1."""
    target = TargetModel(A=[[0.0]], Q=[[1.0]], H=[[1.0]], R=[[1.0]], x=0.0)
    agent = AgentParams(s0=0.0, tau=(), omega=(), r=1.0)
    return Scenario(targets=(target,), agents=(agent,), T=2.0)


def scalar_scenario_with(a=0.0, T=2.0):
    target = TargetModel(A=[[a]], Q=[[1.0]], H=[[1.0]], R=[[1.0]], x=0.0)
    agent = AgentParams(s0=0.0, tau=(), omega=(), r=1.0)
    return Scenario(targets=(target,), agents=(agent,), T=T)


def random_two_target_scenario(rng):
    """Random feasible 1-agent, 2-target, P=3 scenario with both targets
    observed; retries until the draw is usable."""
    from permon import trajectory
    from permon.model import validate_scenario
    for _ in range(200):
        B = rng.normal(size=(2, 2))
        shift = max(np.linalg.eigvals(B).real.max(), 0.0) + rng.uniform(0.2, 0.8)
        A = B - shift * np.eye(2)
        W = rng.normal(size=(2, 2))
        Q = W @ W.T + 0.3 * np.eye(2)
        R = np.diag(rng.uniform(0.5, 2.0, size=2))
        x1 = -rng.uniform(0.8, 1.5)
        x2 = rng.uniform(0.8, 1.5)
        a, c = rng.uniform(0.08, 0.18, size=2)
        tau = (a, a + c, c)
        omega = tuple(rng.uniform(0.02, 0.08, size=3))
        agent = AgentParams(s0=rng.uniform(-0.3, 0.3), tau=tau, omega=omega,
                            r=rng.uniform(0.7, 1.2))
        sc = Scenario(targets=(make_target(x1, A=A, Q=Q, R=R),
                               make_target(x2, A=A, Q=Q, R=R)),
                      agents=(agent,), T=rng.uniform(4.0, 8.0))
        if validate_scenario(sc):
            continue
        qs = np.linspace(0, 1, 400)
        if all(np.max(trajectory.eta(sc, i, qs)) > 0.05 for i in range(2)):
            return sc
    raise RuntimeError("could not draw a feasible scenario")
