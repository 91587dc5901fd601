"""Projected gradient descent over trajectory parameters and the period."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ipa, riccati, trajectory
from .errors import DescentAbortedError, PermonError
from .model import AgentParams, Scenario


@dataclass(frozen=True)
class DescentConfig:
    kappa: float = 0.02
    epsilon: float = 1e-4
    max_iter: int = 100
    T_min: float = 0.1
    max_backtracks: int = 30

    def __post_init__(self):
        if min(self.kappa, self.epsilon, self.T_min) <= 0 or self.max_iter < 0:
            raise ValueError("descent settings must be positive")
        if self.max_backtracks < 0:
            raise ValueError("max_backtracks must be nonnegative")


@dataclass(frozen=True)
class HistoryRow:
    iteration: int
    cost: float
    grad_norm: float
    T: float
    params: np.ndarray


@dataclass
class DescentHistory:
    param_names: tuple
    rows: list = field(default_factory=list)
    initial_projection_applied: bool = False

    def append(self, iteration, cost, grad_norm, scenario):
        self.rows.append(HistoryRow(iteration, cost, grad_norm, scenario.T,
                                    trajectory.params_to_vector(scenario)))


def _project_qp(y: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {x >= 0, sum(x) <= 1, c.x = 0} by an exact
    active-set solve (dimension 2P; at most 2P+2 constraints)."""
    n = y.size
    # Constraint rows as g(x) <= 0 gradients: bounds -e_i, budget 1^T, and
    # the closure equality (always active).
    active = set()
    for _ in range(4 * n + 8):
        rows = [c]
        rhs = [0.0]
        order = []
        for k in sorted(active):
            if k < n:
                e = np.zeros(n)
                e[k] = -1.0
                rows.append(e)
                rhs.append(0.0)
            else:
                rows.append(np.ones(n))
                rhs.append(1.0)
            order.append(k)
        A = np.vstack(rows)
        b = np.array(rhs)
        AAt = A @ A.T
        try:
            nu = np.linalg.solve(AAt, A @ y - b)
        except np.linalg.LinAlgError:
            nu = np.linalg.lstsq(AAt, A @ y - b, rcond=None)[0]
        x = y - A.T @ nu
        # Most violated inactive constraint, if any.
        worst, worst_v = None, 1e-12
        for k in range(n):
            if k not in active and -x[k] > worst_v:
                worst, worst_v = k, -x[k]
        if n not in active and x.sum() - 1.0 > worst_v:
            worst, worst_v = n, x.sum() - 1.0
        if worst is not None:
            active.add(worst)
            continue
        # Drop active inequalities with negative multipliers.
        neg, neg_v = None, -1e-12
        for pos, k in enumerate(order):
            if nu[pos + 1] < neg_v:
                neg, neg_v = k, nu[pos + 1]
        if neg is not None:
            active.discard(neg)
            continue
        for k in active:
            if k < n:
                x[k] = 0.0
        return np.maximum(x, 0.0)
    raise PermonError("active-set projection failed to terminate")


def project(agent: AgentParams) -> AgentParams:
    """Euclidean projection of (tau, omega) onto the feasibility polytope;
    s0 is unconstrained and returned unchanged."""
    P = agent.P
    if P == 0:
        return agent
    y = np.concatenate((agent.tau, agent.omega))
    c = np.zeros(2 * P)
    c[:P] = [(-1.0) ** (p + 1) for p in range(P)]
    x = _project_qp(y, c)
    return AgentParams(s0=agent.s0, tau=tuple(x[:P]), omega=tuple(x[P:]),
                       r=agent.r)


def project_scenario(scenario: Scenario) -> Scenario:
    agents = tuple(project(a) for a in scenario.agents)
    return Scenario(targets=scenario.targets, agents=agents, T=scenario.T)


def _step_candidate(scenario: Scenario, vec: np.ndarray, grad: np.ndarray,
                    kappa: float, T_min: float) -> Scenario:
    candidate = trajectory.scenario_with_params(scenario, vec - kappa * grad)
    candidate = project_scenario(candidate)
    return Scenario(targets=candidate.targets, agents=candidate.agents,
                    T=max(candidate.T, T_min))


def descend(scenario: Scenario, config: DescentConfig,
            numerics: riccati.Numerics = riccati.DEFAULT_NUMERICS) -> tuple:
    """Projected gradient descent on the steady-state cost.

    Every iteration starts from the step size kappa and halves it until the
    projected step does not increase the cost, so the recorded cost sequence
    is non-increasing.  The stopping norm is the accepted displacement over
    its step size.  Returns (optimized scenario, history).  Raises
    DescentAbortedError with the partial history when a target becomes
    unobserved or a limit cycle fails to converge mid-run.
    """
    history = DescentHistory(tuple(trajectory.param_names(scenario)))
    projected = project_scenario(scenario)
    history.initial_projection_applied = any(
        a != b for a, b in zip(projected.agents, scenario.agents))
    scenario = projected
    try:
        cycles, cost = riccati.evaluate(scenario, numerics)
    except PermonError as exc:
        raise DescentAbortedError(history, exc, 0) from exc
    history.append(0, cost, float("nan"), scenario)
    for it in range(1, config.max_iter + 1):
        try:
            grad = ipa.cost_gradient(scenario, cycles, numerics)
        except PermonError as exc:
            raise DescentAbortedError(history, exc, it - 1) from exc
        vec = trajectory.params_to_vector(scenario)
        seeds = [c.omega_bar[0] for c in cycles]
        kappa = config.kappa
        accepted = None
        for _ in range(config.max_backtracks + 1):
            candidate = _step_candidate(scenario, vec, grad.values, kappa,
                                        config.T_min)
            try:
                c_cycles, c_cost = riccati.evaluate(candidate, numerics, seeds)
            except PermonError:
                kappa *= 0.5
                continue
            if c_cost <= cost:
                accepted = (candidate, c_cycles, c_cost)
                break
            kappa *= 0.5
        if accepted is None:
            # no step of any tried length improves the cost: the iterate is
            # stationary at this numerical resolution
            break
        scenario, cycles, cost = accepted
        step = trajectory.params_to_vector(scenario) - vec
        grad_norm = float(np.linalg.norm(step) / kappa)
        history.append(it, cost, grad_norm, scenario)
        if grad_norm <= config.epsilon:
            break
    return scenario, history
