import numpy as np
import pytest

from permon import trajectory
from permon.errors import InfeasibleParamsError, SpeedBoundError
from permon.model import AgentParams, Scenario

from conftest import make_target, random_two_target_scenario


@pytest.fixture
def sched1(scenario1):
    return trajectory.compile_schedule(scenario1.agents[0], scenario1.T)


def test_event_times(sched1):
    assert np.allclose(sched1.nodes, [0, 0.05, 0.25, 0.30, 0.70, 0.75, 0.95, 1.0])
    assert trajectory.position(sched1, 0.25) == pytest.approx(1.2)
    assert trajectory.position(sched1, 0.95) == pytest.approx(0.0)


def test_zero_movement():
    agent = AgentParams(s0=2.5, tau=(0.0, 0.0), omega=(0.5, 0.5), r=1.0)
    sched = trajectory.compile_schedule(agent, 3.0)
    qs = np.linspace(0, 1, 17)
    assert np.allclose(trajectory.position(sched, qs), 2.5)


def test_hand_summed_displacement():
    agent = AgentParams(s0=1.0, tau=(0.1, 0.2, 0.1), omega=(0.0, 0.0, 0.0), r=1.0)
    sched = trajectory.compile_schedule(agent, 10.0)
    assert trajectory.position(sched, 0.1) == pytest.approx(2.0)   # peak
    assert trajectory.position(sched, 1.0) == pytest.approx(1.0)   # closed


def test_position_endpoints(sched1):
    assert trajectory.position(sched1, 0.0) == 0.0
    assert trajectory.position(sched1, 1.0) == pytest.approx(0.0)
    assert trajectory.position(sched1, 0.15) == pytest.approx(0.6)


def test_position_domain(sched1):
    with pytest.raises(ValueError):
        trajectory.position(sched1, 1.5)


def test_infeasible_params_rejected():
    with pytest.raises(InfeasibleParamsError):
        trajectory.compile_schedule(AgentParams(0, (-0.1, 0.1), (0, 0), 1), 1.0)
    with pytest.raises(InfeasibleParamsError):
        trajectory.compile_schedule(AgentParams(0, (0.5, 0.5), (0.3, 0.3), 1), 1.0)
    with pytest.raises(InfeasibleParamsError):
        trajectory.compile_schedule(AgentParams(0, (0.1,), (0.1,), 1), 1.0)


def test_speed_bound(sched1):
    qs = np.linspace(0, 1, 5000)
    ds = np.abs(np.diff(trajectory.position(sched1, qs)))
    assert np.all(ds <= sched1.T * np.diff(qs) * (1 + 1e-12))


def test_eta_basic_values():
    agent = AgentParams(s0=0.0, tau=(), omega=(), r=0.9)
    sc = Scenario(targets=(make_target(0.0),), agents=(agent,), T=1.0)
    assert trajectory.eta(sc, 0, 0.3) == pytest.approx(1.0)
    sc2 = Scenario(targets=(make_target(0.45),), agents=(agent,), T=1.0)
    assert trajectory.eta(sc2, 0, 0.3) == pytest.approx(0.5)
    sc3 = Scenario(targets=(make_target(0.0),), agents=(agent, agent), T=1.0)
    assert trajectory.eta(sc3, 0, 0.3) == pytest.approx(2.0)


def test_eta_continuity(scenario1):
    qs = np.linspace(0, 1, 20001)
    for i in range(scenario1.M):
        e = trajectory.eta(scenario1, i, qs)
        assert np.abs(np.diff(e)).max() < 2 * scenario1.T / 0.9 * (qs[1] - qs[0])
        assert e.min() >= 0.0
        assert e.max() <= scenario1.N


def test_eta_breakpoints_cover_kinks(scenario1):
    breaks = trajectory.scenario_breakpoints(scenario1)
    # second differences of eta on a fine grid spike only near breakpoints
    qs = np.linspace(0, 1, 40001)
    for i in range(scenario1.M):
        e = trajectory.eta(scenario1, i, qs)
        dd = np.abs(np.diff(e, 2))
        kinks = qs[1:-1][dd > 1e-6]
        if kinks.size:
            dist = np.abs(kinks[:, None] - breaks[None, :]).min(axis=1)
            assert dist.max() <= qs[1] - qs[0]


def test_sensitivity_ds0_always_one(sched1):
    for q in (0.0, 0.1, 0.33, 0.6, 0.99):
        _, _, ds0, _ = trajectory.position_sensitivities(sched1, q)
        assert ds0 == 1.0


def test_first_dwell_sensitivities(sched1):
    dtau, domega, _, dT = trajectory.position_sensitivities(sched1, 0.02)
    assert np.all(dtau == 0)
    assert np.all(domega == 0)
    assert dT == 0.0


def test_dwell_sensitivity_values(sched1):
    # q = 0.275 lies in the dwell after the first move (segments: dwell to
    # 0.05, move to 0.25, dwell to 0.30); position there is 1.2
    dtau, domega, _, dT = trajectory.position_sensitivities(sched1, 0.275)
    assert dtau[0] == pytest.approx(6.0)
    assert dtau[1] == 0.0 and dtau[2] == 0.0
    assert np.all(domega == 0)
    assert dT == pytest.approx(0.2)


def test_move_sensitivity_values(sched1):
    # q = 0.5 is inside move 2 (leftward); earlier durations shift the
    # segment start, and the move's own elapsed time depends on omega_1
    dtau, domega, _, _ = trajectory.position_sensitivities(sched1, 0.5)
    assert dtau[0] == pytest.approx(12.0)
    assert domega[0] == pytest.approx(6.0)
    assert domega[1] == pytest.approx(6.0)
    assert dtau[1] == 0.0


def test_position_sensitivities_match_fd():
    rng = np.random.default_rng(42)
    checked = 0
    while checked < 100:
        P = int(rng.integers(1, 5))
        tau = rng.uniform(0.01, 0.8 / (2 * P), size=P)
        # enforce closure by balancing the alternating sum
        sigma = np.array([(-1.0) ** p for p in range(P)])
        tau = tau - sigma * (sigma @ tau) / P
        if np.any(tau < 1e-3):
            continue
        omega = rng.uniform(0.01, (1 - tau.sum()) / (P + 1), size=P)
        T = float(rng.uniform(1, 8))
        agent = AgentParams(rng.uniform(-1, 1), tuple(tau), tuple(omega), 1.0)
        sched = trajectory.compile_schedule(agent, T)
        q = float(rng.uniform(0, 1))
        if np.abs(sched.nodes - q).min() < 1e-4:
            continue
        dtau, domega, ds0, dT = trajectory.position_sensitivities(sched, q)
        h = 1e-6
        vec = np.concatenate(([agent.s0], tau, omega, [T]))
        got = np.concatenate(([ds0], dtau, domega, [dT]))
        for k in range(vec.size):
            vp, vm = vec.copy(), vec.copy()
            vp[k] += h
            vm[k] -= h

            def pos(v):
                a = AgentParams(v[0], tuple(v[1:1 + P]),
                                tuple(v[1 + P:1 + 2 * P]), 1.0)
                return trajectory.position(
                    trajectory._compile(a, v[-1], 0, check_closure=False), q)

            fd = (pos(vp) - pos(vm)) / (2 * h)
            assert got[k] == pytest.approx(fd, rel=1e-5, abs=1e-5)
        checked += 1


def test_eta_sensitivity_out_of_range(scenario1):
    # at q=0 the agent sits at 0, out of range of both targets
    g = trajectory.eta_sensitivities(scenario1, 0, 0.02)
    assert np.all(g == 0)


def test_eta_sensitivity_subgradient_on_target():
    agent = AgentParams(s0=0.0, tau=(), omega=(), r=0.9)
    sc = Scenario(targets=(make_target(0.0),), agents=(agent,), T=1.0)
    assert np.all(trajectory.eta_sensitivities(sc, 0, 0.5) == 0)


def test_eta_sensitivity_sign(scenario1):
    # during move 1 the agent crosses target 2's range from the left;
    # moving rightward, I = -1 and d(eta)/dtau has the +ds/dtau sign
    q = 0.12  # position 0.42, inside (0.1, 1.9) of target at +1
    sched = trajectory.compile_schedule(scenario1.agents[0], scenario1.T)
    dtau, _, _, _ = trajectory.position_sensitivities(sched, q)
    g = trajectory.eta_sensitivities(scenario1, 1, q)
    # parameter layout: [s0, tau1..3, omega1..3, T]
    assert g[1] == pytest.approx(dtau[0] / 0.9)
    assert g[0] == pytest.approx(1.0 / 0.9)  # ds/ds0 = 1, I = -1


def test_eta_sensitivity_matches_fd():
    rng = np.random.default_rng(7)
    for _ in range(20):
        sc = random_two_target_scenario(rng)
        vec = trajectory.params_to_vector(sc)
        q = float(rng.uniform(0, 1))
        i = int(rng.integers(0, 2))
        g = trajectory.eta_sensitivities(sc, i, q)
        h = 1e-7
        for k in range(vec.size):
            vp, vm = vec.copy(), vec.copy()
            vp[k] += h
            vm[k] -= h
            fp = trajectory.eta(trajectory.scenario_with_params(sc, vp), i, q)
            fm = trajectory.eta(trajectory.scenario_with_params(sc, vm), i, q)
            fd = (fp - fm) / (2 * h)
            if abs(g[k] - fd) > 1e-4 * max(1.0, abs(g[k])):
                # tolerated only right at a kink of the distance profile
                s = trajectory.position(
                    trajectory.compile_schedule(sc.agents[0], sc.T), q)
                d = abs(s - sc.targets[i].x)
                assert min(d, abs(d - sc.agents[0].r)) < 1e-6


def test_improve_policy_fixed_point(scenario1):
    sched = trajectory.compile_schedule(scenario1.agents[0], scenario1.T)
    qs, ss = trajectory.schedule_polyline(sched)
    out = trajectory.improve_policy([np.column_stack((qs, ss))], scenario1)
    grid = np.linspace(0, 1, 10001)
    old = trajectory.position(sched, grid)
    new = trajectory.position(out[0], grid)
    for i in range(scenario1.M):
        x, r = scenario1.targets[i].x, 0.9
        eo = np.maximum(0, 1 - np.abs(old - x) / r)
        en = np.maximum(0, 1 - np.abs(new - x) / r)
        assert np.min(en - eo) >= -1e-9


def test_improve_policy_dominates_sinusoid(scenario1):
    qs = np.linspace(0, 1, 601)
    ss = 0.9 * np.sin(2 * np.pi * qs)
    out = trajectory.improve_policy([np.column_stack((qs, ss))], scenario1)
    grid = np.linspace(0, 1, 10001)
    for i in range(scenario1.M):
        imp = Scenario(scenario1.targets, (out[0].params,), scenario1.T)
        new = trajectory.eta(imp, i, grid)
        old = trajectory.eta_from_polylines([(qs, ss)], [0.9],
                                            scenario1.targets[i].x, grid)
        assert np.min(new - old) >= -1e-12


def test_improve_policy_switch_bound(scenario1):
    qs = np.linspace(0, 1, 601)
    ss = 0.9 * np.sin(2 * np.pi * qs)
    out = trajectory.improve_policy([np.column_stack((qs, ss))], scenario1)
    n_switches = sum(1 for t in out[0].params.tau if t > 0)
    d_min = min(np.diff([t.x for t in scenario1.targets]))
    assert n_switches <= 2 * scenario1.T / d_min + 4


def test_improve_policy_speed_violation(scenario1):
    qs = np.linspace(0, 1, 11)
    ss = np.zeros(11)
    ss[5] = 5.0  # requires speed ~100 > T
    with pytest.raises(SpeedBoundError):
        trajectory.improve_policy([np.column_stack((qs, ss))], scenario1)


def test_improve_policy_nonperiodic_input(scenario1):
    qs = np.linspace(0, 1, 11)
    ss = qs * 2.0
    with pytest.raises(SpeedBoundError):
        trajectory.improve_policy([np.column_stack((qs, ss))], scenario1)


def test_param_vector_round_trip(scenario1):
    vec = trajectory.params_to_vector(scenario1)
    sc = trajectory.scenario_with_params(scenario1, vec)
    assert sc.agents == scenario1.agents
    assert sc.T == scenario1.T
    assert trajectory.param_names(scenario1)[-1] == "global.T"
