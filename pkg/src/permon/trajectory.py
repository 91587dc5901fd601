"""Bang-dwell schedules: positions, observation gains, and their derivatives.

An agent's period is a sequence of 2P+1 segments: dwell(1), move(1),
dwell(2), move(2), ..., move(P), trailing dwell.  Move p travels at speed
exactly 1 (i.e. slope ``(-1)**(p+1) * T`` in normalized time), so one
period is fully described by the ``AgentParams`` durations.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .errors import InfeasibleParamsError, SpeedBoundError
from .model import AgentParams, Scenario

# Tolerances on the schedule feasibility checks.
_NONNEG_TOL = 1e-12
_BUDGET_TOL = 1e-9
_CLOSURE_TOL = 1e-9
# Breakpoints closer than this are merged.
_MERGE_TOL = 1e-12


@dataclass(frozen=True)
class EventSchedule:
    """Compiled timeline of one agent's dwell/move segments over a period."""

    agent_index: int
    P: int
    T: float
    params: AgentParams
    nodes: np.ndarray      # (2P+2,) segment boundaries in normalized time
    seg_pos0: np.ndarray   # (2P+1,) position at each segment start
    seg_slope: np.ndarray  # (2P+1,) dposition/dq: 0 for dwells, +-T for moves
    events: tuple          # (q, kind, direction, position) per segment start

    @property
    def n_segments(self) -> int:
        return 2 * self.P + 1


@dataclass(frozen=True)
class EtaTrace:
    """Evaluator for one target's total observation gain over a period."""

    target_index: int
    breakpoints: np.ndarray
    values: Callable

    def __call__(self, q):
        return self.values(q)


def _check_params(agent: AgentParams) -> None:
    if any(t < -_NONNEG_TOL for t in agent.tau):
        raise InfeasibleParamsError("movement durations tau must be nonnegative")
    if any(w < -_NONNEG_TOL for w in agent.omega):
        raise InfeasibleParamsError("dwell durations omega must be nonnegative")
    if agent.budget() > 1.0 + _BUDGET_TOL:
        raise InfeasibleParamsError(
            "sum(tau) + sum(omega) must not exceed one period"
        )


def _compile(agent: AgentParams, T: float, agent_index: int,
             check_closure: bool) -> EventSchedule:
    _check_params(agent)
    if check_closure and abs(agent.closure_residual()) > _CLOSURE_TOL:
        raise InfeasibleParamsError(
            "alternating movement sum must vanish so the trajectory closes"
        )
    P = agent.P
    tau = np.maximum(np.array(agent.tau, dtype=float), 0.0)
    omega = np.maximum(np.array(agent.omega, dtype=float), 0.0)
    sigma = np.array([(-1.0) ** p for p in range(P)])  # +1, -1, +1, ...

    durations = np.empty(2 * P)
    durations[0::2] = omega
    durations[1::2] = tau
    nodes = np.concatenate(([0.0], np.cumsum(durations), [1.0]))
    nodes = np.minimum(nodes, 1.0)

    seg_slope = np.zeros(2 * P + 1)
    seg_slope[1::2] = sigma * T
    seg_pos0 = np.empty(2 * P + 1)
    pos = agent.s0
    for k in range(2 * P + 1):
        seg_pos0[k] = pos
        pos += seg_slope[k] * (nodes[k + 1] - nodes[k])

    events = []
    for k in range(2 * P + 1):
        if k % 2 == 0:
            events.append((nodes[k], "dwell-start", 0, seg_pos0[k]))
        else:
            p = (k + 1) // 2
            events.append((nodes[k], "move-start", int(sigma[p - 1]), seg_pos0[k]))
    nodes.setflags(write=False)
    seg_pos0.setflags(write=False)
    seg_slope.setflags(write=False)
    return EventSchedule(agent_index, P, float(T), agent, nodes, seg_pos0,
                         seg_slope, tuple(events))


@lru_cache(maxsize=512)
def _cached_schedule(agent: AgentParams, T: float, agent_index: int) -> EventSchedule:
    # Internal path: closure is enforced by validate_scenario / the optimizer
    # projection, and must stay relaxed here so that finite-difference probes
    # of single parameters remain evaluable.
    return _compile(agent, T, agent_index, check_closure=False)


def compile_schedule(agent: AgentParams, T: float, agent_index: int = 0) -> EventSchedule:
    """Compile agent parameters into an event schedule (validating Eq.-style
    feasibility: nonnegative durations, time budget, closure)."""
    return _compile(agent, float(T), agent_index, check_closure=True)


def _segment_index(schedule: EventSchedule, q: np.ndarray) -> np.ndarray:
    # Right-limit convention: a query exactly at a breakpoint belongs to the
    # following segment; q=1 is clamped into the trailing dwell.
    idx = np.searchsorted(schedule.nodes, q, side="right") - 1
    return np.clip(idx, 0, schedule.n_segments - 1)


def position(schedule: EventSchedule, q) -> float | np.ndarray:
    """Agent position at normalized time q in [0, 1]."""
    qa = np.asarray(q, dtype=float)
    if np.any(qa < -1e-12) or np.any(qa > 1.0 + 1e-12):
        raise ValueError("normalized time q must lie in [0, 1]")
    qa = np.clip(qa, 0.0, 1.0)
    k = _segment_index(schedule, qa)
    out = schedule.seg_pos0[k] + schedule.seg_slope[k] * (qa - schedule.nodes[k])
    return float(out) if np.isscalar(q) else out


def position_sensitivity_matrix(schedule: EventSchedule, q) -> tuple:
    """Partial derivatives of the position w.r.t. (s0, tau, omega) and T.

    Returns ``(block, dT)`` where ``block`` has columns
    ``[s0, tau_1..tau_P, omega_1..omega_P]`` for each query point.
    """
    qa = np.atleast_1d(np.asarray(q, dtype=float))
    P, T = schedule.P, schedule.T
    k = _segment_index(schedule, qa)
    nq = qa.size
    block = np.zeros((nq, 2 * P + 1))
    block[:, 0] = 1.0  # ds/ds0
    if P > 0:
        sigma = np.array([(-1.0) ** p for p in range(P)])
        is_move = (k % 2 == 1)
        completed = np.where(is_move, (k - 1) // 2, k // 2)
        m_idx = np.arange(P)[None, :]
        before = m_idx < completed[:, None]
        # dwells: ds/dtau_m = sigma_m * T for completed moves
        dtau = T * sigma[None, :] * before
        # inside move p the segment start also shifts with earlier durations
        p_move = np.where(is_move, (k + 1) // 2, 0)  # 1-based, 0 for dwells
        sig_p = np.where(is_move, sigma[np.maximum(p_move - 1, 0)], 0.0)
        dtau -= T * sig_p[:, None] * before * is_move[:, None]
        block[:, 1:P + 1] = dtau
        domega = -T * sig_p[:, None] * (m_idx < p_move[:, None]) * is_move[:, None]
        block[:, P + 1:] = domega
    s = position(schedule, qa)
    dT = (s - schedule.params.s0) / T
    return block, dT


def position_sensitivities(schedule: EventSchedule, q: float, T: float | None = None):
    """Scalar-query wrapper: (ds/dtau, ds/domega, ds/ds0, ds/dT)."""
    block, dT = position_sensitivity_matrix(schedule, q)
    P = schedule.P
    return (block[0, 1:P + 1].copy(), block[0, P + 1:].copy(),
            float(block[0, 0]), float(dT[0]))


def _schedules(scenario: Scenario) -> list:
    return [_cached_schedule(ag, scenario.T, j)
            for j, ag in enumerate(scenario.agents)]


def eta(scenario: Scenario, target_index: int, q) -> float | np.ndarray:
    """Total observation gain on a target: distance-degraded sum over agents."""
    x = scenario.targets[target_index].x
    qa = np.asarray(q, dtype=float)
    total = np.zeros(qa.shape)
    for sched in _schedules(scenario):
        d = np.abs(np.asarray(position(sched, qa)) - x)
        total += np.maximum(0.0, 1.0 - d / sched.params.r)
    return float(total) if np.isscalar(q) else total


def _range_indicator(d: np.ndarray, r: float) -> np.ndarray:
    """Subgradient sign I(s - x): 0 at the kink, at +-r, and out of range."""
    inside = (np.abs(d) > 0.0) & (np.abs(d) < r)
    return np.sign(d) * inside


def param_names(scenario: Scenario) -> list:
    names = []
    for j, ag in enumerate(scenario.agents):
        names.append(f"agent{j + 1}.s0")
        names.extend(f"agent{j + 1}.tau{p + 1}" for p in range(ag.P))
        names.extend(f"agent{j + 1}.omega{p + 1}" for p in range(ag.P))
    names.append("global.T")
    return names


def agent_block_slices(scenario: Scenario) -> list:
    """Slice of each agent's (s0, tau, omega) block in the parameter vector."""
    slices, start = [], 0
    for ag in scenario.agents:
        width = 2 * ag.P + 1
        slices.append(slice(start, start + width))
        start += width
    return slices


def params_to_vector(scenario: Scenario) -> np.ndarray:
    vec = []
    for ag in scenario.agents:
        vec.append(ag.s0)
        vec.extend(ag.tau)
        vec.extend(ag.omega)
    vec.append(scenario.T)
    return np.array(vec)


def scenario_with_params(scenario: Scenario, vec: Sequence[float]) -> Scenario:
    vec = np.asarray(vec, dtype=float)
    agents = []
    pos = 0
    for ag in scenario.agents:
        P = ag.P
        s0 = vec[pos]
        tau = tuple(vec[pos + 1:pos + 1 + P])
        omega = tuple(vec[pos + 1 + P:pos + 1 + 2 * P])
        agents.append(AgentParams(s0=s0, tau=tau, omega=omega, r=ag.r))
        pos += 2 * P + 1
    return Scenario(targets=scenario.targets, agents=tuple(agents), T=vec[pos])


def eta_sensitivity_matrix(scenario: Scenario, target_index: int, q) -> np.ndarray:
    """d(eta_i)/dtheta for every trajectory parameter, T last.

    Shape (nq, n_params); parameter order matches :func:`param_names`.
    """
    qa = np.atleast_1d(np.asarray(q, dtype=float))
    x = scenario.targets[target_index].x
    blocks = []
    dT_total = np.zeros(qa.size)
    for sched in _schedules(scenario):
        s = np.asarray(position(sched, qa))
        factor = -_range_indicator(s - x, sched.params.r) / sched.params.r
        block, dT = position_sensitivity_matrix(sched, qa)
        blocks.append(factor[:, None] * block)
        dT_total += factor * dT
    return np.hstack(blocks + [dT_total[:, None]])


def eta_sensitivities(scenario: Scenario, target_index: int, q: float) -> np.ndarray:
    """Vector of d(eta_i)/dtheta at a single normalized time (T last)."""
    return eta_sensitivity_matrix(scenario, target_index, q)[0]


# ---------------------------------------------------------------------------
# Piecewise-linear position polylines and eta breakpoints
# ---------------------------------------------------------------------------

def schedule_polyline(schedule: EventSchedule) -> tuple:
    """Schedule positions as a polyline (nodes, positions)."""
    qs = schedule.nodes
    end = schedule.seg_pos0[-1] + schedule.seg_slope[-1] * (qs[-1] - qs[-2])
    ss = np.concatenate((schedule.seg_pos0, [end]))
    return qs, ss


def _level_crossings(qs: np.ndarray, ss: np.ndarray, levels: Sequence[float]) -> list:
    out = []
    for a in range(qs.size - 1):
        qa, qb = qs[a], qs[a + 1]
        sa, sb = ss[a], ss[a + 1]
        if qb <= qa or sa == sb:
            continue
        for lev in levels:
            if (sa - lev) * (sb - lev) < 0.0:
                out.append(qa + (lev - sa) / (sb - sa) * (qb - qa))
    return out


def _merge_breakpoints(points: Sequence[float]) -> np.ndarray:
    pts = np.clip(np.sort(np.asarray(points, dtype=float)), 0.0, 1.0)
    pts = np.concatenate(([0.0], pts, [1.0]))
    keep = [0.0]
    for p in pts:
        if p - keep[-1] > _MERGE_TOL:
            keep.append(p)
    if keep[-1] < 1.0:
        keep[-1] = 1.0
    return np.array(keep)


def polyline_breakpoints(polylines: Sequence[tuple], rs: Sequence[float],
                         xs: Sequence[float]) -> np.ndarray:
    """Times where some eta_i is non-smooth: polyline nodes and the exact
    crossings of any target position or sensing-range boundary."""
    points = []
    for (qs, ss), r in zip(polylines, rs):
        points.extend(qs)
        for x in xs:
            points.extend(_level_crossings(qs, ss, (x - r, x, x + r)))
    return _merge_breakpoints(points)


def scenario_breakpoints(scenario: Scenario) -> np.ndarray:
    polylines = [schedule_polyline(s) for s in _schedules(scenario)]
    return polyline_breakpoints(polylines, [a.r for a in scenario.agents],
                                [t.x for t in scenario.targets])


def eta_trace(scenario: Scenario, target_index: int) -> EtaTrace:
    breaks = scenario_breakpoints(scenario)
    return EtaTrace(target_index, breaks,
                    lambda q: eta(scenario, target_index, q))


def eta_from_polylines(polylines: Sequence[tuple], rs: Sequence[float],
                       x: float, q) -> np.ndarray:
    """eta for one target under sampled (piecewise-linear) agent trajectories."""
    qa = np.asarray(q, dtype=float)
    total = np.zeros(qa.shape)
    for (qs, ss), r in zip(polylines, rs):
        s = np.interp(qa, qs, ss)
        total += np.maximum(0.0, 1.0 - np.abs(s - x) / r)
    return total


# ---------------------------------------------------------------------------
# Policy improvement (bang-dwell transform of an arbitrary trajectory)
# ---------------------------------------------------------------------------

def _inside_intervals(qs: np.ndarray, ss: np.ndarray, x: float, r: float) -> list:
    """Maximal intervals of a polyline where |s - x| < r, with exact entry
    and exit times."""
    nodes = _merge_breakpoints(list(qs) + _level_crossings(qs, ss, (x - r, x + r)))
    inside = []
    for a in range(nodes.size - 1):
        qm = 0.5 * (nodes[a] + nodes[a + 1])
        if abs(np.interp(qm, qs, ss) - x) < r:
            if inside and abs(inside[-1][1] - nodes[a]) <= _MERGE_TOL:
                inside[-1] = (inside[-1][0], nodes[a + 1])
            else:
                inside.append((nodes[a], nodes[a + 1]))
    return inside


def _visit_sequence(qs: np.ndarray, ss: np.ndarray, scenario: Scenario,
                    r: float) -> list:
    """Ordered visits (entry q, entry position, target position), merging
    consecutive visits to the same target."""
    entries = []
    for i, tgt in enumerate(scenario.targets):
        for qa, qb in _inside_intervals(qs, ss, tgt.x, r):
            entries.append((qa, i))
    entries.sort()
    visits = []
    for qa, i in entries:
        if visits and visits[-1][2] == i:
            continue
        visits.append((qa, float(np.interp(qa, qs, ss)), i))
    return [(qa, a, scenario.targets[i].x) for qa, a, i in visits]


def _interval_segments(a_p: float, chi: float | None, a_next: float,
                       dq: float, T: float) -> list:
    """Segments (length in q, slope sign) covering one inter-visit interval:
    full-speed approach to the target, dwell, full-speed departure timed to
    reach the next visit start exactly on time."""
    if dq <= 0:
        return []
    if chi is None:
        # No target in range: dwell, then move straight to the next start.
        d2 = abs(a_next - a_p) / T
        return [(max(dq - d2, 0.0), 0), (d2, _sign(a_next - a_p))]
    d1 = abs(chi - a_p) / T
    d2 = abs(a_next - chi) / T
    if d1 + d2 <= dq + 1e-15:
        return [(d1, _sign(chi - a_p)),
                (dq - d1 - d2, 0),
                (d2, _sign(a_next - chi))]
    # Target unreachable in time: approach at full speed, then turn so the
    # next visit start is met exactly.
    sig = _sign(chi - a_p)
    u = sig * (a_next - a_p) / T
    t_m = min(max(0.5 * (dq + u), 0.0), min(d1, dq))
    peak = a_p + sig * t_m * T
    return [(t_m, sig), (dq - t_m, _sign(a_next - peak))]


def _sign(v: float) -> int:
    return 0 if v == 0 else (1 if v > 0 else -1)


def _segments_to_params(segs: list, s0: float, r: float, T: float) -> AgentParams:
    # Merge zero-length and same-direction runs.
    merged = []
    for length, d in segs:
        if length <= 1e-14:
            continue
        if merged and merged[-1][1] == d:
            merged[-1] = (merged[-1][0] + length, d)
        else:
            merged.append((length, d))
    tau, omega = [], []
    pending = 0.0
    expected = 1
    for length, d in merged:
        if d == 0:
            pending += length
            continue
        while expected != d:
            omega.append(pending)
            tau.append(0.0)
            pending = 0.0
            expected = -expected
        omega.append(pending)
        tau.append(length)
        pending = 0.0
        expected = -expected
    tau = np.array(tau)
    omega = np.array(omega)
    if tau.size:
        # Absorb the floating-point closure residual into the longest move.
        sigma = np.array([(-1.0) ** p for p in range(tau.size)])
        k = int(np.argmax(tau))
        tau[k] -= sigma[k] * float(sigma @ tau)
        tau = np.maximum(tau, 0.0)
        total = tau.sum() + omega.sum()
        if total > 1.0:
            omega *= max(0.0, 1.0 - tau.sum()) / max(omega.sum(), 1e-300)
    return AgentParams(s0=s0, tau=tuple(tau), omega=tuple(omega), r=r)


def improve_policy(sampled_trajectory: Sequence[np.ndarray],
                   scenario: Scenario) -> list:
    """Bang-dwell schedule dominating a sampled periodic trajectory.

    Each input is an (n, 2) array of (normalized time, position) samples for
    one agent, interpreted as a piecewise-linear trajectory over one period.
    The returned schedules reproduce every visit start while approaching each
    visited target at full speed and dwelling on it, so the observation gain
    of every target is pointwise at least the input's (isolated targets).
    """
    schedules = []
    for j, samples in enumerate(sampled_trajectory):
        samples = np.asarray(samples, dtype=float)
        qs, ss = samples[:, 0], samples[:, 1]
        if qs[0] > 1e-9 or qs[-1] < 1.0 - 1e-9 or np.any(np.diff(qs) < 0):
            raise SpeedBoundError(
                f"agent {j}: samples must cover [0, 1] in increasing order"
            )
        T = scenario.T
        dq = np.diff(qs)
        dspan = np.abs(np.diff(ss))
        if np.any(dspan > T * dq * (1.0 + 1e-9) + 1e-12):
            raise SpeedBoundError(f"agent {j}: trajectory exceeds the speed bound")
        if abs(ss[0] - ss[-1]) > 1e-6 * max(1.0, T):
            raise SpeedBoundError(f"agent {j}: trajectory is not periodic")
        r = scenario.agents[j].r
        visits = _visit_sequence(qs, ss, scenario, r)
        segs = []
        if not visits:
            segs = [(1.0, 0)]
        else:
            # Before the first visit: dwell, then move to the first entry.
            q1, a1, _ = visits[0]
            segs.extend(_interval_segments(ss[0], None, a1, q1, T))
            for p, (qp, ap, chi) in enumerate(visits):
                if p + 1 < len(visits):
                    q_next, a_next, _ = visits[p + 1]
                else:
                    q_next, a_next = 1.0, ss[0]
                segs.extend(_interval_segments(ap, chi, a_next, q_next - qp, T))
        params = _segments_to_params(segs, ss[0], r, T)
        schedules.append(compile_schedule(params, T, j))
    return schedules
