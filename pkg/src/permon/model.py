"""Domain types for targets, agents, and monitoring scenarios.

All types are immutable after construction and safe to share across
workers.  Invariant violations are reported by :func:`validate_scenario`
as data, not raised at construction time, so that invalid configurations
can be inspected and diagnosed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

# Pivot tolerance for the positive-definiteness check (Cholesky pivots).
PD_PIVOT_TOL = 1e-12
# Eigenvalue real-part threshold and kernel tolerance for detectability.
DETECT_EIG_TOL = 1e-10
# Tolerance on the trajectory closure equality.
CLOSURE_TOL = 1e-9


def _matrix(value, name: str) -> np.ndarray:
    M = np.array(value, dtype=float)
    if M.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got shape {M.shape}")
    M.setflags(write=False)
    return M


def is_symmetric(M: np.ndarray, tol: float = 1e-12) -> bool:
    scale = max(1.0, float(np.abs(M).max(initial=0.0)))
    return bool(np.abs(M - M.T).max(initial=0.0) <= tol * scale)


def is_spd(M: np.ndarray, pivot_tol: float = PD_PIVOT_TOL) -> bool:
    """Symmetric positive definiteness via attempted Cholesky factorization."""
    if M.shape[0] != M.shape[1] or not is_symmetric(M):
        return False
    try:
        C = np.linalg.cholesky(np.asarray(M))
    except np.linalg.LinAlgError:
        return False
    return bool(np.min(np.diag(C)) ** 2 > pivot_tol)


def is_psd(M: np.ndarray, tol: float = 1e-10) -> bool:
    if M.shape[0] != M.shape[1] or not is_symmetric(M):
        return False
    w = np.linalg.eigvalsh(np.asarray(M))
    scale = max(1.0, float(np.abs(w).max(initial=0.0)))
    return bool(w.min(initial=0.0) >= -tol * scale)


def is_detectable(A: np.ndarray, H: np.ndarray) -> bool:
    """Eigenvector test: no unstable/marginal mode of A in the kernel of H."""
    vals, vecs = np.linalg.eig(np.asarray(A))
    for k in range(vals.size):
        if vals[k].real >= -DETECT_EIG_TOL:
            x = vecs[:, k]
            if np.linalg.norm(H @ x) <= DETECT_EIG_TOL * np.linalg.norm(x):
                return False
    return True


@dataclass(frozen=True)
class TargetModel:
    """One target: linear-Gaussian internal state at a fixed line position.

    ``G = H^T R^{-1} H`` is derived and cached at construction.
    """

    A: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    R: np.ndarray
    x: float
    G: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        A = _matrix(self.A, "A")
        Q = _matrix(self.Q, "Q")
        H = _matrix(self.H, "H")
        R = _matrix(self.R, "R")
        L = A.shape[0]
        if A.shape != (L, L) or Q.shape != (L, L):
            raise ValueError("A and Q must be square with matching size")
        if H.shape[1] != L:
            raise ValueError("H must have as many columns as the state size")
        m = H.shape[0]
        if R.shape != (m, m):
            raise ValueError("R must be square with the observation size")
        try:
            Rinv_H = np.linalg.solve(R, H)
        except np.linalg.LinAlgError:
            Rinv_H = np.linalg.pinv(R) @ H
        G = H.T @ Rinv_H
        G = 0.5 * (G + G.T)
        G.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "G", G)

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class AgentParams:
    """One agent's bang-dwell schedule parameters over a normalized period.

    ``tau[p]`` / ``omega[p]`` are normalized movement / dwell durations;
    move ``p`` goes right for odd ``p`` (1-based) and left for even ``p``.
    """

    s0: float
    tau: tuple
    omega: tuple
    r: float

    def __post_init__(self):
        tau = tuple(float(v) for v in self.tau)
        omega = tuple(float(v) for v in self.omega)
        if len(tau) != len(omega):
            raise ValueError("tau and omega must have the same length")
        object.__setattr__(self, "s0", float(self.s0))
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "r", float(self.r))

    @property
    def P(self) -> int:
        return len(self.tau)

    def closure_residual(self) -> float:
        """Alternating sum that must vanish for the trajectory to close."""
        return float(sum((-1) ** (p + 1) * t for p, t in enumerate(self.tau, 1)))

    def budget(self) -> float:
        return float(sum(self.tau) + sum(self.omega))


@dataclass(frozen=True)
class Scenario:
    targets: tuple
    agents: tuple
    T: float

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "T", float(self.T))

    @property
    def M(self) -> int:
        return len(self.targets)

    @property
    def N(self) -> int:
        return len(self.agents)


def validate_scenario(scenario: Scenario) -> list:
    """Return every violated invariant as a message; empty when valid."""
    violations = []
    for i, tgt in enumerate(scenario.targets):
        if not is_spd(tgt.Q):
            violations.append(f"target {i}: Q is not symmetric positive definite")
        if not is_spd(tgt.R):
            violations.append(f"target {i}: R is not symmetric positive definite")
        if not is_detectable(tgt.A, tgt.H):
            violations.append(f"target {i}: (A, H) is not detectable")
        if not is_psd(tgt.G):
            violations.append(f"target {i}: G is not positive semidefinite")
    for j, ag in enumerate(scenario.agents):
        if any(t < 0 for t in ag.tau):
            violations.append(f"agent {j}: negative movement duration tau")
        if any(w < 0 for w in ag.omega):
            violations.append(f"agent {j}: negative dwell duration omega")
        if ag.budget() > 1.0 + CLOSURE_TOL:
            violations.append(
                f"agent {j}: total normalized time sum(tau)+sum(omega)="
                f"{ag.budget():.6g} exceeds 1"
            )
        if abs(ag.closure_residual()) > CLOSURE_TOL:
            violations.append(
                f"agent {j}: trajectory does not close, alternating tau sum = "
                f"{-ag.closure_residual():.6g}"
            )
        if ag.r <= 0:
            violations.append(f"agent {j}: sensing range r must be positive")
    if scenario.T <= 0:
        violations.append("period T must be positive")
    xs = [t.x for t in scenario.targets]
    if any(b <= a for a, b in zip(xs, xs[1:])):
        violations.append("target positions must be strictly increasing")
    return violations


def snr_diagnostic(target: TargetModel, agent_pos: float, r: float,
                   phi: Sequence[float]) -> float:
    """Instantaneous signal-to-noise ratio of a single measurement."""
    if r <= 0:
        raise ValueError("sensing range r must be positive")
    phi = np.asarray(phi, dtype=float)
    geom = max(0.0, 1.0 - abs(agent_pos - target.x) / r)
    Hphi = target.H @ phi
    return geom * float(Hphi @ Hphi) / float(np.trace(target.R))
