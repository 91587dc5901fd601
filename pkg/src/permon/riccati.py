"""Periodic Riccati propagation, limit cycles, and the steady-state cost.

Time is normalized: one period maps to q in [0, 1] and the covariance obeys
dOmega/dq = T (A Omega + Omega A^T + Q - eta(q) Omega G Omega).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import trajectory
from ._kernels import rk4_riccati
from .errors import CycleConvergenceError, DivergenceError, UnobservedTargetError
from .model import Scenario, TargetModel

_VISITED_TOL = 1e-12


@dataclass(frozen=True)
class Numerics:
    """Integrator and limit-cycle settings."""

    base_steps: int = 2000
    cycle_tol: float = 1e-9
    max_cycles: int = 500


DEFAULT_NUMERICS = Numerics()


@dataclass(frozen=True)
class CovarianceCycle:
    """A target's periodic steady-state covariance on the shared grid."""

    target_index: int
    grid: np.ndarray       # (K+1,) normalized times, aligned with breakpoints
    omega_bar: np.ndarray  # (K+1, L, L)
    periodic_residual: float


@dataclass(frozen=True)
class EtaGridData:
    """One target's observation gain sampled per grid interval.

    The gain is linear inside every interval; the three arrays hold its value
    at the interval's left end, midpoint, and right end.
    """

    nodes: np.ndarray
    left: np.ndarray
    mid: np.ndarray
    right: np.ndarray

    @classmethod
    def from_callable(cls, nodes: np.ndarray, fn: Callable) -> "EtaGridData":
        vals = np.asarray(fn(nodes), dtype=float)
        mids = np.asarray(fn(0.5 * (nodes[:-1] + nodes[1:])), dtype=float)
        return cls(nodes, vals[:-1].copy(), mids, vals[1:].copy())

    @classmethod
    def piecewise_constant(cls, nodes: np.ndarray, values: np.ndarray) -> "EtaGridData":
        values = np.asarray(values, dtype=float)
        return cls(nodes, values, values, values)

    def visited(self) -> bool:
        return bool(max(self.left.max(initial=0.0),
                        self.mid.max(initial=0.0)) > _VISITED_TOL)


def build_grid(breakpoints: np.ndarray, base_steps: int) -> np.ndarray:
    """Refine the breakpoint partition to roughly base_steps total steps,
    keeping every breakpoint an exact grid node."""
    pieces = [np.array([0.0])]
    for a, b in zip(breakpoints[:-1], breakpoints[1:]):
        n = max(1, int(np.ceil(base_steps * (b - a))))
        pieces.append(np.linspace(a, b, n + 1)[1:])
    return np.concatenate(pieces)


def scenario_grid(scenario: Scenario, numerics: Numerics = DEFAULT_NUMERICS) -> np.ndarray:
    return build_grid(trajectory.scenario_breakpoints(scenario), numerics.base_steps)


def scenario_eta_data(scenario: Scenario, target_index: int,
                      numerics: Numerics = DEFAULT_NUMERICS,
                      grid: np.ndarray | None = None) -> EtaGridData:
    if grid is None:
        grid = scenario_grid(scenario, numerics)
    return EtaGridData.from_callable(grid, lambda q: trajectory.eta(scenario, target_index, q))


def riccati_rhs(omega: np.ndarray, eta: float, target: TargetModel, T: float) -> np.ndarray:
    """Rescaled Riccati right-hand side, symmetrized."""
    omega = np.asarray(omega, dtype=float)
    M = target.A @ omega
    rhs = T * (M + M.T + target.Q - eta * (omega @ target.G @ omega))
    return 0.5 * (rhs + rhs.T)


def _propagate(eta_data: EtaGridData, target: TargetModel, T: float,
               omega0: np.ndarray, target_index: int) -> np.ndarray:
    trace = rk4_riccati(eta_data.nodes, eta_data.left, eta_data.mid,
                        eta_data.right, np.ascontiguousarray(target.A),
                        np.ascontiguousarray(target.Q),
                        np.ascontiguousarray(target.G), float(T),
                        np.ascontiguousarray(omega0, dtype=float))
    if not np.all(np.isfinite(trace)):
        bad = int(np.argmax(~np.isfinite(trace).all(axis=(1, 2))))
        raise DivergenceError(
            f"covariance propagation diverged for target {target_index} "
            f"near q={eta_data.nodes[bad]:.6f}"
        )
    return trace


def integrate_period(omega0: np.ndarray, scenario: Scenario, target_index: int,
                     numerics: Numerics = DEFAULT_NUMERICS) -> CovarianceCycle:
    """One-period trace from a given SPD initial covariance (residual is
    reported, not enforced)."""
    eta_data = scenario_eta_data(scenario, target_index, numerics)
    trace = _propagate(eta_data, scenario.targets[target_index], scenario.T,
                       omega0, target_index)
    res = _residual(trace)
    return CovarianceCycle(target_index, eta_data.nodes, trace, res)


def _residual(trace: np.ndarray) -> float:
    start, end = trace[0], trace[-1]
    return float(np.linalg.norm(end - start) / (1.0 + np.linalg.norm(start)))


def limit_cycle_from_eta(eta_data: EtaGridData, target: TargetModel, T: float,
                         target_index: int = 0,
                         tol: float | None = None,
                         max_cycles: int | None = None,
                         numerics: Numerics = DEFAULT_NUMERICS,
                         seed: np.ndarray | None = None) -> CovarianceCycle:
    """Picard iteration over periods until the period-start residual meets
    the tolerance (the periodic solution is globally attractive whenever the
    target is visited)."""
    tol = numerics.cycle_tol if tol is None else tol
    max_cycles = numerics.max_cycles if max_cycles is None else max_cycles
    if not eta_data.visited():
        raise UnobservedTargetError(target_index)
    omega0 = np.array(target.Q, dtype=float) if seed is None else np.asarray(seed, dtype=float)
    residuals = []
    for _ in range(max_cycles):
        trace = _propagate(eta_data, target, T, omega0, target_index)
        res = _residual(trace)
        residuals.append(res)
        if res <= tol:
            w = np.linalg.eigvalsh(trace)
            if w.min() <= 0.0:
                raise DivergenceError(
                    f"limit cycle for target {target_index} lost positive "
                    f"definiteness (min eigenvalue {w.min():.3e})"
                )
            return CovarianceCycle(target_index, eta_data.nodes, trace, res)
        omega0 = trace[-1]
    raise CycleConvergenceError(target_index, residuals)


def limit_cycle(scenario: Scenario, target_index: int,
                tol: float | None = None, max_cycles: int | None = None,
                numerics: Numerics = DEFAULT_NUMERICS,
                seed: np.ndarray | None = None) -> CovarianceCycle:
    eta_data = scenario_eta_data(scenario, target_index, numerics)
    return limit_cycle_from_eta(eta_data, scenario.targets[target_index],
                                scenario.T, target_index, tol, max_cycles,
                                numerics, seed)


def compute_cycles(scenario: Scenario, numerics: Numerics = DEFAULT_NUMERICS,
                   seeds: Sequence[np.ndarray] | None = None) -> list:
    """Limit cycles for every target (independent, computed concurrently)."""
    grid = scenario_grid(scenario, numerics)

    def one(i):
        eta_data = scenario_eta_data(scenario, i, numerics, grid=grid)
        seed = None if seeds is None else seeds[i]
        return limit_cycle_from_eta(eta_data, scenario.targets[i], scenario.T,
                                    i, numerics=numerics, seed=seed)

    if scenario.M <= 1:
        return [one(i) for i in range(scenario.M)]
    with ThreadPoolExecutor(max_workers=min(scenario.M, 8)) as pool:
        return list(pool.map(one, range(scenario.M)))


def steady_state_cost(scenario: Scenario, cycles: Sequence[CovarianceCycle]) -> float:
    """Mean steady-state estimation error: sum_i integral of tr(Omega_bar_i)
    over one normalized period (trapezoid on the shared grid)."""
    total = 0.0
    for cyc in cycles:
        tr = np.trace(cyc.omega_bar, axis1=1, axis2=2)
        total += float(np.trapezoid(tr, cyc.grid))
    return total


def evaluate(scenario: Scenario, numerics: Numerics = DEFAULT_NUMERICS,
             seeds: Sequence[np.ndarray] | None = None) -> tuple:
    cycles = compute_cycles(scenario, numerics, seeds)
    return cycles, steady_state_cost(scenario, cycles)
