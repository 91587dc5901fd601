"""Independent oracles: Monte Carlo filter simulation, finite-difference
gradients, and the Riccati monotonicity harness."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import riccati, trajectory
from .errors import PermonError
from .model import Scenario

RNG_ALGORITHM = "philox"


@dataclass(frozen=True)
class McConfig:
    n_trials: int = 500
    dt: float = 1e-3
    n_periods: int = 10
    burn_in_periods: int = 5
    rng_seed: int = 0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.burn_in_periods >= self.n_periods:
            raise ValueError("burn-in must be shorter than the simulation")


@dataclass(frozen=True)
class McReport:
    empirical: np.ndarray   # per-target time-averaged MSE
    predicted: np.ndarray   # per-target integral of tr(Omega_bar)
    config: McConfig
    rng_algorithm: str = RNG_ALGORITHM

    @property
    def ratios(self) -> np.ndarray:
        return self.empirical / self.predicted

    @property
    def empirical_total(self) -> float:
        return float(self.empirical.sum())

    @property
    def predicted_total(self) -> float:
        return float(self.predicted.sum())


def _gamma_profiles(scenario: Scenario, target_index: int, qs: np.ndarray) -> np.ndarray:
    """Per-agent distance gains gamma_j(s_j(q) - x_i) on the step grid."""
    x = scenario.targets[target_index].x
    out = np.empty((scenario.N, qs.size))
    for j, agent in enumerate(scenario.agents):
        sched = trajectory.compile_schedule(agent, scenario.T, j)
        d = np.abs(np.asarray(trajectory.position(sched, qs)) - x)
        out[j] = np.sqrt(np.maximum(0.0, 1.0 - d / agent.r))
    return out


def kalman_bucy_monte_carlo(scenario: Scenario, cfg: McConfig,
                            numerics: riccati.Numerics = riccati.DEFAULT_NUMERICS) -> McReport:
    """Euler-Maruyama simulation of every target and its continuous filter.

    The filter gain uses the deterministic periodic covariance, computed once
    and interpolated on the step grid; measurement noise carries the R/dt
    consistency scaling.  Returns empirical and predicted mean square errors
    per target.
    """
    cycles, _ = riccati.evaluate(scenario, numerics)
    T, dt = scenario.T, cfg.dt
    steps_per_period = max(1, int(round(T / dt)))
    qs = (np.arange(steps_per_period) * dt / T) % 1.0
    total_steps = steps_per_period * cfg.n_periods
    burn_steps = steps_per_period * cfg.burn_in_periods

    empirical = np.empty(scenario.M)
    predicted = np.empty(scenario.M)
    rng = np.random.Generator(np.random.Philox(cfg.rng_seed))
    for i, tgt in enumerate(scenario.targets):
        cyc = cycles[i]
        tr = np.trace(cyc.omega_bar, axis1=1, axis2=2)
        predicted[i] = float(np.trapezoid(tr, cyc.grid))
        L = tgt.state_dim
        m = tgt.H.shape[0]
        # Per-step filter data on one period, reused across periods.
        omega = np.empty((steps_per_period, L, L))
        for a in range(L):
            for b in range(L):
                omega[:, a, b] = np.interp(qs, cyc.grid, cyc.omega_bar[:, a, b])
        gam = _gamma_profiles(scenario, i, qs)
        eta_steps = (gam ** 2).sum(axis=0)
        OG = omega @ tgt.G                       # (spp, L, L)
        B = omega @ (np.linalg.solve(tgt.R, tgt.H)).T  # (spp, L, m)
        cq = np.linalg.cholesky(tgt.Q)
        cr = np.linalg.cholesky(tgt.R)
        At = tgt.A.T

        phi = np.zeros((cfg.n_trials, L))
        est = np.zeros((cfg.n_trials, L))
        acc = 0.0
        n_acc = 0
        for k in range(total_steps):
            s = k % steps_per_period
            if k >= burn_steps:
                acc += float(np.mean(np.sum((est - phi) ** 2, axis=1)))
                n_acc += 1
            e = phi - est
            drift = dt * (est @ At)
            if eta_steps[s] > 0.0:
                drift += dt * eta_steps[s] * (e @ OG[s].T)
                noise = rng.standard_normal((cfg.n_trials, m))
                drift += np.sqrt(eta_steps[s] * dt) * (noise @ cr.T) @ B[s].T
            est = est + drift
            w = rng.standard_normal((cfg.n_trials, L))
            phi = phi + dt * (phi @ At) + np.sqrt(dt) * (w @ cq.T)
            if not np.all(np.isfinite(est)):
                raise PermonError(
                    f"filter diverged for target {i} at step {k} "
                    f"(seed {cfg.rng_seed})"
                )
        empirical[i] = acc / n_acc
    return McReport(empirical, predicted, cfg)


@dataclass(frozen=True)
class FdComponent:
    name: str
    value: float
    h_used: float
    note: str = ""


@dataclass(frozen=True)
class FdGradient:
    components: tuple

    @property
    def names(self):
        return tuple(c.name for c in self.components)

    @property
    def values(self) -> np.ndarray:
        return np.array([c.value for c in self.components])


def finite_difference_gradient(scenario: Scenario, h: float = 1e-5,
                               numerics: riccati.Numerics = riccati.DEFAULT_NUMERICS) -> FdGradient:
    """Central differences of the steady-state cost through the full
    limit-cycle pipeline; the step shrinks near constraint boundaries."""
    base_cycles, _ = riccati.evaluate(scenario, numerics)
    seeds = [c.omega_bar[0] for c in base_cycles]
    vec = trajectory.params_to_vector(scenario)
    names = trajectory.param_names(scenario)
    comps = []
    for k, name in enumerate(names):
        hk = h
        note = ""
        is_duration = (".tau" in name) or (".omega" in name)
        if is_duration and vec[k] < hk:
            hk = 0.5 * vec[k]
            note = f"h shrunk to {hk:.3e} at the nonnegativity boundary"
        if hk <= 0.0:
            comps.append(FdComponent(name, float("nan"), 0.0,
                                     "parameter pinned at a boundary"))
            continue
        try:
            plus = vec.copy()
            plus[k] += hk
            minus = vec.copy()
            minus[k] -= hk
            _, jp = riccati.evaluate(trajectory.scenario_with_params(scenario, plus),
                                     numerics, seeds)
            _, jm = riccati.evaluate(trajectory.scenario_with_params(scenario, minus),
                                     numerics, seeds)
            comps.append(FdComponent(name, (jp - jm) / (2 * hk), hk, note))
        except PermonError as exc:
            comps.append(FdComponent(name, float("nan"), hk,
                                     f"perturbed evaluation failed: {exc}"))
    return FdGradient(tuple(comps))


@dataclass(frozen=True)
class GradCheckRow:
    name: str
    ipa: float
    fd: float
    fd_half: float
    rel_err: float
    status: str  # pass | fail | flat | excluded
    note: str = ""


_FLAT_TOL = 1e-6
_REL_TOL = 1e-3
_ABS_TOL = 1e-6


def gradient_check(scenario: Scenario, h: float = 1e-5,
                   numerics: riccati.Numerics | None = None) -> list:
    """Side-by-side comparison of the exact cost gradient against central
    finite differences at steps h and h/2.

    A component whose finite-difference estimate is not self-consistent
    under step halving sits next to a nondifferentiability of eta (a kink in
    a distance profile crosses the sensing boundary within the probe) and is
    excluded rather than failed.  Symmetrically, a disagreeing component
    whose exact-gradient value still drifts when the quadrature grid is
    doubled is dominated by discretization bias (this happens for near-null
    directions such as a pure time shift of the schedule, where the true
    derivative is zero) and is excluded as well.  Components below the flat
    threshold on both sides pass as flat directions.
    """
    from . import ipa as ipa_mod
    if numerics is None:
        numerics = riccati.Numerics(cycle_tol=1e-12)
    elif numerics.cycle_tol > 1e-12:
        numerics = riccati.Numerics(numerics.base_steps, 1e-12,
                                    numerics.max_cycles)
    cycles, _ = riccati.evaluate(scenario, numerics)
    exact = ipa_mod.cost_gradient(scenario, cycles, numerics)
    fd1 = finite_difference_gradient(scenario, h, numerics)
    fd2 = finite_difference_gradient(scenario, 0.5 * h, numerics)
    refined = None

    def refined_gradient():
        nonlocal refined
        if refined is None:
            fine = riccati.Numerics(2 * numerics.base_steps,
                                    numerics.cycle_tol, numerics.max_cycles)
            fine_cycles, _ = riccati.evaluate(scenario, fine)
            refined = ipa_mod.cost_gradient(scenario, fine_cycles, fine)
        return refined

    rows = []
    for name, g, c1, c2 in zip(exact.names, exact.values,
                               fd1.components, fd2.components):
        f1, f2 = c1.value, c2.value
        note = c1.note or c2.note
        if not (np.isfinite(f1) and np.isfinite(f2)):
            rows.append(GradCheckRow(name, float(g), f1, f2, float("nan"),
                                     "excluded", note or "fd unavailable"))
            continue
        rel = abs(g - f1) / max(abs(g), abs(f1), 1e-300)
        if abs(g) <= _FLAT_TOL and abs(f1) <= 10 * _FLAT_TOL:
            rows.append(GradCheckRow(name, float(g), f1, f2, rel, "flat", note))
            continue
        if rel <= _REL_TOL or abs(g - f1) <= _ABS_TOL:
            rows.append(GradCheckRow(name, float(g), f1, f2, rel, "pass", note))
            continue
        fd_drift = abs(f1 - f2) / max(abs(f1), abs(f2), 1e-300)
        if fd_drift > _REL_TOL:
            rows.append(GradCheckRow(
                name, float(g), f1, f2, rel, "excluded",
                note or f"fd not converged under step halving "
                        f"(drift {fd_drift:.2e})"))
            continue
        g2 = refined_gradient()[name]
        ipa_drift = abs(g - g2) / max(abs(g), abs(g2), 1e-300)
        if ipa_drift > _REL_TOL:
            rows.append(GradCheckRow(
                name, float(g), f1, f2, rel, "excluded",
                note or f"exact gradient not converged under grid "
                        f"refinement (drift {ipa_drift:.2e})"))
        else:
            rows.append(GradCheckRow(name, float(g), f1, f2, rel, "fail", note))
    return rows


@dataclass
class MonotonicityReport:
    n_pass: int = 0
    n_fail: int = 0
    worst_eig: float = -np.inf
    failures: list = field(default_factory=list)


def monotonicity_harness(rng_seed: int, n_cases: int,
                         eig_tol: float = 1e-8,
                         base_steps: int = 800) -> MonotonicityReport:
    """Randomized check that a larger observation gain and a smaller initial
    covariance keep the propagated covariance dominated at every grid point."""
    rng = np.random.Generator(np.random.Philox(rng_seed))
    report = MonotonicityReport()
    L = 2
    for case in range(n_cases):
        A = rng.normal(scale=1.0, size=(L, L))
        W = rng.normal(size=(L, L))
        Q = W @ W.T + 0.1 * np.eye(L)
        V = rng.normal(size=(L, L))
        G = V @ V.T
        T = float(rng.uniform(0.5, 4.0))
        n_pieces = int(rng.integers(2, 6))
        breaks = np.sort(rng.uniform(0, 1, size=n_pieces - 1))
        breaks = np.concatenate(([0.0], breaks, [1.0]))
        eta2 = rng.uniform(0.0, 2.0, size=n_pieces)
        eta1 = eta2 + rng.uniform(0.0, 2.0, size=n_pieces)
        W2 = rng.normal(size=(L, L))
        om2 = W2 @ W2.T + 0.2 * np.eye(L)
        v = rng.normal(size=L)
        pert = np.outer(v, v)
        scale = 0.5 * np.linalg.eigvalsh(om2).min() / max(np.linalg.eigvalsh(pert).max(), 1e-12)
        om1 = om2 - min(1.0, scale) * pert

        grid = riccati.build_grid(breaks, base_steps)
        idx = np.clip(np.searchsorted(breaks, grid[:-1], side="right") - 1, 0,
                      n_pieces - 1)
        data1 = riccati.EtaGridData.piecewise_constant(grid, eta1[idx])
        data2 = riccati.EtaGridData.piecewise_constant(grid, eta2[idx])
        from ._kernels import rk4_riccati
        tr1 = rk4_riccati(grid, data1.left, data1.mid, data1.right, A, Q, G, T, om1)
        tr2 = rk4_riccati(grid, data2.left, data2.mid, data2.right, A, Q, G, T, om2)
        diff = tr1 - tr2
        max_eig = float(np.linalg.eigvalsh(diff).max())
        report.worst_eig = max(report.worst_eig, max_eig)
        if max_eig <= eig_tol:
            report.n_pass += 1
        else:
            report.n_fail += 1
            report.failures.append((case, max_eig))
    return report
