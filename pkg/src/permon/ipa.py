"""Exact steady-state cost gradients via variational Riccati sensitivities.

For each parameter the sensitivity dOmega_bar/dtheta solves a linear
matrix ODE whose homogeneous part is X' = F X + X F^T with
F = T (A - eta Omega_bar G).  Its periodic initial condition Lambda is
fixed by the Stein equation Lambda = S Lambda S^T + Z with S the one-period
homogeneous transition and Z the zero-initial-condition particular solution
at the period end, and the trace is reconstructed as
Sigma_H(q) Lambda Sigma_H(q)^T + Sigma_ZI(q).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import trajectory
from ._kernels import rk4_augmented
from .errors import DivergenceError, SteinUniquenessError
from .model import Scenario
from .riccati import (DEFAULT_NUMERICS, CovarianceCycle, Numerics,
                      scenario_eta_data)

_STEIN_RADIUS_TOL = 1e-12


@dataclass(frozen=True)
class SensitivitySystem:
    """Homogeneous transition of the variational dynamics over one period."""

    target_index: int
    grid: np.ndarray
    sigma_h: np.ndarray        # (K+1, L, L), identity at q=0
    sigma_h_end: np.ndarray    # Sigma_H(1)
    spectral_radius_end: float


@dataclass(frozen=True)
class GradientBundle:
    """dJ/dtheta for every trajectory parameter plus the period."""

    names: tuple
    values: np.ndarray

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.names.index(name)])

    @property
    def dT(self) -> float:
        return float(self.values[-1])

    def to_dict(self) -> dict:
        return {n: float(v) for n, v in zip(self.names, self.values)}


def _deta_interval_data(scenario: Scenario, target_index: int,
                        nodes: np.ndarray, columns: Sequence[int] | None = None):
    """Per-interval linear data for d(eta)/dtheta (columns: params, T last).

    The sensitivities are linear inside each interval but jump at
    breakpoints, so each interval is sampled at its 1/4 and 3/4 points and
    the endpoint/midpoint values are recovered by linear extrapolation.
    """
    h = np.diff(nodes)
    q1 = nodes[:-1] + 0.25 * h
    q2 = nodes[:-1] + 0.75 * h
    D1 = trajectory.eta_sensitivity_matrix(scenario, target_index, q1)
    D2 = trajectory.eta_sensitivity_matrix(scenario, target_index, q2)
    if columns is not None:
        D1 = D1[:, columns]
        D2 = D2[:, columns]
    left = 1.5 * D1 - 0.5 * D2
    right = 1.5 * D2 - 0.5 * D1
    mid = 0.5 * (D1 + D2)
    return left, mid, right


def _augmented_pass(scenario: Scenario, target_index: int,
                    cycle: CovarianceCycle, numerics: Numerics,
                    columns: Sequence[int] | None, t_mask: np.ndarray):
    """Re-propagate the covariance jointly with Sigma_H and the selected
    particular solutions from the converged cycle start."""
    tgt = scenario.targets[target_index]
    eta_data = scenario_eta_data(scenario, target_index, numerics,
                                 grid=cycle.grid)
    n = t_mask.size
    if n > 0:
        dl, dm, dr = _deta_interval_data(scenario, target_index, cycle.grid,
                                         columns)
    else:
        K = cycle.grid.size - 1
        dl = dm = dr = np.zeros((K, 0))
    om_tr, sh_tr, sz_tr = rk4_augmented(
        cycle.grid, eta_data.left, eta_data.mid, eta_data.right,
        np.ascontiguousarray(dl), np.ascontiguousarray(dm),
        np.ascontiguousarray(dr), t_mask,
        np.ascontiguousarray(tgt.A), np.ascontiguousarray(tgt.Q),
        np.ascontiguousarray(tgt.G), float(scenario.T),
        np.ascontiguousarray(cycle.omega_bar[0]))
    if not (np.all(np.isfinite(sh_tr)) and np.all(np.isfinite(sz_tr))):
        raise DivergenceError(
            f"variational propagation diverged for target {target_index}"
        )
    return om_tr, sh_tr, sz_tr


def homogeneous_transition(cycle: CovarianceCycle, scenario: Scenario,
                           target_index: int,
                           numerics: Numerics = DEFAULT_NUMERICS) -> SensitivitySystem:
    _, sh_tr, _ = _augmented_pass(scenario, target_index, cycle, numerics,
                                  columns=[], t_mask=np.zeros(0, dtype=np.bool_))
    end = sh_tr[-1]
    rho = float(np.max(np.abs(np.linalg.eigvals(end))))
    return SensitivitySystem(target_index, cycle.grid, sh_tr, end, rho)


def _resolve_param(scenario: Scenario, theta) -> int:
    names = trajectory.param_names(scenario)
    if isinstance(theta, str):
        return names.index(theta)
    return int(theta)


def particular_solution(theta, cycle: CovarianceCycle, scenario: Scenario,
                        target_index: int,
                        numerics: Numerics = DEFAULT_NUMERICS) -> np.ndarray:
    """Zero-initial-condition solution of the forced variational ODE for one
    parameter (theta may be a name from param_names or an index; the period
    itself is the last parameter)."""
    idx = _resolve_param(scenario, theta)
    n_total = len(trajectory.param_names(scenario))
    is_T = idx == n_total - 1
    _, _, sz_tr = _augmented_pass(scenario, target_index, cycle, numerics,
                                  columns=[idx],
                                  t_mask=np.array([is_T], dtype=np.bool_))
    return sz_tr[:, 0]


def solve_stein(sigma_h_end: np.ndarray, sigma_zi_end: np.ndarray) -> np.ndarray:
    """Solve Lambda = S Lambda S^T + Z by Kronecker vectorization."""
    S = np.asarray(sigma_h_end, dtype=float)
    Z = np.asarray(sigma_zi_end, dtype=float)
    rho = float(np.max(np.abs(np.linalg.eigvals(S)))) if S.size else 0.0
    if rho >= 1.0 - _STEIN_RADIUS_TOL:
        raise SteinUniquenessError(
            f"one-period transition has spectral radius {rho:.6f} >= 1; the "
            "periodic sensitivity is not uniquely determined"
        )
    L = S.shape[0]
    lhs = np.eye(L * L) - np.kron(S, S)
    lam = np.linalg.solve(lhs, Z.reshape(-1)).reshape(L, L)
    if np.allclose(Z, Z.T, atol=1e-12 * (1.0 + np.abs(Z).max())):
        lam = 0.5 * (lam + lam.T)
    return lam


def _solve_stein_batch(S: np.ndarray, Z_batch: np.ndarray) -> np.ndarray:
    rho = float(np.max(np.abs(np.linalg.eigvals(S))))
    if rho >= 1.0 - _STEIN_RADIUS_TOL:
        raise SteinUniquenessError(
            f"one-period transition has spectral radius {rho:.6f} >= 1; the "
            "periodic sensitivity is not uniquely determined"
        )
    L = S.shape[0]
    lhs = np.eye(L * L) - np.kron(S, S)
    rhs = Z_batch.reshape(Z_batch.shape[0], -1).T
    lams = np.linalg.solve(lhs, rhs).T.reshape(-1, L, L)
    return 0.5 * (lams + np.transpose(lams, (0, 2, 1)))


def sensitivity_trace(system: SensitivitySystem, lam: np.ndarray,
                      sigma_zi: np.ndarray) -> np.ndarray:
    """Periodic sensitivity dOmega_bar/dtheta on the shared grid."""
    sh = system.sigma_h
    return np.einsum("qik,kl,qjl->qij", sh, lam, sh) + sigma_zi


def cost_gradient(scenario: Scenario, cycles: Sequence[CovarianceCycle],
                  numerics: Numerics = DEFAULT_NUMERICS) -> GradientBundle:
    """Assemble dJ/dtheta for all parameters by summing per-target trace
    integrals of the periodic sensitivities."""
    names = tuple(trajectory.param_names(scenario))
    n = len(names)
    t_mask = np.zeros(n, dtype=np.bool_)
    t_mask[-1] = True
    grad = np.zeros(n)

    def one(i):
        cycle = cycles[i]
        _, sh_tr, sz_tr = _augmented_pass(scenario, i, cycle, numerics,
                                          columns=None, t_mask=t_mask)
        end = sh_tr[-1]
        lams = _solve_stein_batch(end, sz_tr[-1])
        # tr(Sigma_H Lambda Sigma_H^T) = sum(Lambda * (Sigma_H^T Sigma_H))
        M = np.einsum("qki,qkj->qij", sh_tr, sh_tr)
        hom = np.einsum("nij,qij->nq", lams, M)
        part = np.trace(sz_tr, axis1=2, axis2=3).T  # (n, K+1)
        return np.trapezoid(hom + part, cycle.grid, axis=1)

    if scenario.M <= 1:
        contributions = [one(i) for i in range(scenario.M)]
    else:
        with ThreadPoolExecutor(max_workers=min(scenario.M, 8)) as pool:
            contributions = list(pool.map(one, range(scenario.M)))
    for c in contributions:
        grad += c
    return GradientBundle(names, grad)
