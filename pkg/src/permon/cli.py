"""Command-line front end: scenario file I/O and the evaluate / optimize /
gradcheck / simulate / improve subcommands.

Scenario files are YAML; matrices are flat row-major lists with explicit
dimensions.  All outputs are CSV with header rows, written atomically.
Exit codes: 0 success, 2 validation failure, 3 numerical non-convergence,
4 gradcheck failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import tempfile

import numpy as np
import yaml

from . import ipa, optimizer, riccati, trajectory, validate
from .errors import (CycleConvergenceError, DescentAbortedError,
                     DivergenceError, InfeasibleParamsError, PermonError,
                     SpeedBoundError, SteinUniquenessError,
                     UnobservedTargetError)
from .model import AgentParams, Scenario, TargetModel, validate_scenario

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_GRADCHECK = 4

_NONCONVERGENCE = (CycleConvergenceError, DivergenceError,
                   SteinUniquenessError)


class ScenarioFileError(PermonError):
    """The scenario file does not parse or misses required fields."""


def _fmt(v: float) -> str:
    return f"{float(v):.17g}"


def _matrix_from_entry(entry, key: str, rows: int, cols: int, where: str) -> np.ndarray:
    if key not in entry:
        raise ScenarioFileError(f"{where}: missing matrix '{key}'")
    raw = entry[key]
    arr = np.asarray(raw, dtype=float)
    if arr.ndim == 1:
        if arr.size != rows * cols:
            raise ScenarioFileError(
                f"{where}: '{key}' has {arr.size} entries, expected "
                f"{rows}x{cols}={rows * cols} (row-major)"
            )
        arr = arr.reshape(rows, cols)
    elif arr.shape != (rows, cols):
        raise ScenarioFileError(
            f"{where}: '{key}' has shape {arr.shape}, expected ({rows}, {cols})"
        )
    return arr


def parse_scenario(doc: dict, where: str = "scenario") -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioFileError(f"{where}: top level must be a mapping")
    for key in ("targets", "agents", "T"):
        if key not in doc:
            raise ScenarioFileError(f"{where}: missing required key '{key}'")
    targets = []
    for i, entry in enumerate(doc["targets"]):
        w = f"target {i}"
        try:
            L = int(entry["L"]) if "L" in entry else int(np.sqrt(np.size(entry["A"])))
            m = int(entry["m"]) if "m" in entry else L
            targets.append(TargetModel(
                A=_matrix_from_entry(entry, "A", L, L, w),
                Q=_matrix_from_entry(entry, "Q", L, L, w),
                H=_matrix_from_entry(entry, "H", m, L, w),
                R=_matrix_from_entry(entry, "R", m, m, w),
                x=float(entry["x"]),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioFileError(f"{w}: {exc}") from exc
    agents = []
    for j, entry in enumerate(doc["agents"]):
        w = f"agent {j}"
        try:
            agents.append(AgentParams(
                s0=float(entry["s0"]),
                tau=tuple(float(v) for v in entry.get("tau", ())),
                omega=tuple(float(v) for v in entry.get("omega", ())),
                r=float(entry["r"]),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioFileError(f"{w}: {exc}") from exc
    return Scenario(targets=tuple(targets), agents=tuple(agents),
                    T=float(doc["T"]))


def parse_numerics(doc: dict) -> riccati.Numerics:
    sec = doc.get("numerics") or {}
    return riccati.Numerics(
        base_steps=int(sec.get("base_steps", riccati.DEFAULT_NUMERICS.base_steps)),
        cycle_tol=float(sec.get("cycle_tol", riccati.DEFAULT_NUMERICS.cycle_tol)),
        max_cycles=int(sec.get("max_cycles", riccati.DEFAULT_NUMERICS.max_cycles)),
    )


def parse_descent(doc: dict) -> optimizer.DescentConfig:
    sec = doc.get("descent") or {}
    return optimizer.DescentConfig(
        kappa=float(sec.get("kappa", 0.02)),
        epsilon=float(sec.get("epsilon", 1e-4)),
        max_iter=int(sec.get("max_iter", 100)),
        T_min=float(sec.get("T_min", 0.1)),
        max_backtracks=int(sec.get("max_backtracks", 30)),
    )


def parse_monte_carlo(doc: dict) -> validate.McConfig:
    sec = doc.get("monte_carlo") or {}
    return validate.McConfig(
        n_trials=int(sec.get("n_trials", 500)),
        dt=float(sec.get("dt", 1e-3)),
        n_periods=int(sec.get("n_periods", 10)),
        burn_in_periods=int(sec.get("burn_in_periods", 5)),
        rng_seed=int(sec.get("seed", 0)),
    )


def load_scenario_file(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ScenarioFileError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ScenarioFileError(f"{path} is not valid YAML: {exc}") from exc
    if doc is None:
        raise ScenarioFileError(f"{path} is empty")
    return doc


def _atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header: list, rows) -> str:
    import io
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


def scenario_to_yaml(scenario: Scenario, extra: dict | None = None) -> str:
    """Serialize a scenario to YAML with full float precision (17 significant
    digits, round-trip exact)."""
    lines = [f"T: {_fmt(scenario.T)}", "targets:"]
    for tgt in scenario.targets:
        L, m = tgt.state_dim, tgt.H.shape[0]
        lines.append(f"  - L: {L}")
        lines.append(f"    m: {m}")
        for key, M in (("A", tgt.A), ("Q", tgt.Q), ("H", tgt.H), ("R", tgt.R)):
            flat = ", ".join(_fmt(v) for v in np.asarray(M).ravel())
            lines.append(f"    {key}: [{flat}]")
        lines.append(f"    x: {_fmt(tgt.x)}")
    lines.append("agents:")
    for ag in scenario.agents:
        lines.append(f"  - s0: {_fmt(ag.s0)}")
        lines.append(f"    tau: [{', '.join(_fmt(v) for v in ag.tau)}]")
        lines.append(f"    omega: [{', '.join(_fmt(v) for v in ag.omega)}]")
        lines.append(f"    r: {_fmt(ag.r)}")
    for section, body in (extra or {}).items():
        lines.append(f"{section}:")
        for key, val in body.items():
            if isinstance(val, float):
                lines.append(f"  {key}: {_fmt(val)}")
            else:
                lines.append(f"  {key}: {val}")
    return "\n".join(lines) + "\n"


def write_scenario_file(path: str, scenario: Scenario,
                        extra: dict | None = None) -> None:
    _atomic_write(path, scenario_to_yaml(scenario, extra))


def _prepare(doc: dict, auto_project: bool, out) -> Scenario:
    """Parse and validate, optionally projecting infeasible agent parameters
    onto the constraint polytope first."""
    scenario = parse_scenario(doc)
    if auto_project:
        projected = optimizer.project_scenario(scenario)
        if any(a != b for a, b in zip(projected.agents, scenario.agents)):
            print("note: agent parameters projected onto the feasible set",
                  file=out)
        scenario = projected
    violations = validate_scenario(scenario)
    if violations:
        raise InfeasibleParamsError(
            "scenario is invalid:\n  " + "\n  ".join(violations)
        )
    return scenario


def _write_cycles(out_dir: str, scenario: Scenario, cycles) -> None:
    for cyc in cycles:
        L = scenario.targets[cyc.target_index].state_dim
        header = ["q"] + [f"omega_{a + 1}{b + 1}" for a in range(L)
                          for b in range(L)] + ["trace"]
        rows = []
        for k, q in enumerate(cyc.grid):
            om = cyc.omega_bar[k]
            rows.append([_fmt(q)] + [_fmt(v) for v in om.ravel()]
                        + [_fmt(np.trace(om))])
        _atomic_write(os.path.join(out_dir, f"cycle_target{cyc.target_index}.csv"),
                      _csv_text(header, rows))


def _write_positions(out_dir: str, scenario: Scenario, grid: np.ndarray) -> None:
    scheds = [trajectory.compile_schedule(ag, scenario.T, j)
              for j, ag in enumerate(scenario.agents)]
    header = ["q"] + [f"agent{j + 1}" for j in range(scenario.N)]
    cols = [np.asarray(trajectory.position(s, grid)) for s in scheds]
    rows = [[_fmt(q)] + [_fmt(c[k]) for c in cols]
            for k, q in enumerate(grid)]
    _atomic_write(os.path.join(out_dir, "positions.csv"),
                  _csv_text(header, rows))


def cmd_evaluate(args, out=None) -> int:
    out = sys.stdout if out is None else out
    doc = load_scenario_file(args.file)
    scenario = _prepare(doc, args.auto_project, out)
    numerics = parse_numerics(doc)
    cycles, J = riccati.evaluate(scenario, numerics)
    os.makedirs(args.out_dir, exist_ok=True)
    _write_cycles(args.out_dir, scenario, cycles)
    _write_positions(args.out_dir, scenario, cycles[0].grid)
    print(f"J = {J:.9g}", file=out)
    return EXIT_OK


def cmd_optimize(args, out=None) -> int:
    out = sys.stdout if out is None else out
    doc = load_scenario_file(args.file)
    scenario = _prepare(doc, args.auto_project, out)
    numerics = parse_numerics(doc)
    config = parse_descent(doc)
    os.makedirs(args.out_dir, exist_ok=True)
    code = EXIT_OK
    try:
        final, history = optimizer.descend(scenario, config, numerics)
    except DescentAbortedError as exc:
        history = exc.history
        final = None
        print(f"error: descent aborted at iteration {exc.iteration}: "
              f"{exc.cause}", file=out)
        code = EXIT_NUMERICAL
    header = ["iteration", "cost", "grad_norm", "T"] + list(history.param_names)
    rows = [[r.iteration, _fmt(r.cost), _fmt(r.grad_norm), _fmt(r.T)]
            + [_fmt(v) for v in r.params] for r in history.rows]
    _atomic_write(os.path.join(args.out_dir, "history.csv"),
                  _csv_text(header, rows))
    if final is not None:
        extra = {"descent": {"kappa": config.kappa, "epsilon": config.epsilon,
                             "max_iter": config.max_iter,
                             "T_min": config.T_min}}
        write_scenario_file(os.path.join(args.out_dir, "final.scenario"),
                            final, extra)
        last = history.rows[-1]
        print(f"J = {last.cost:.9g} after {last.iteration} iterations",
              file=out)
    return code


def cmd_gradcheck(args, out=None) -> int:
    out = sys.stdout if out is None else out
    doc = load_scenario_file(args.file)
    scenario = _prepare(doc, args.auto_project, out)
    numerics = parse_numerics(doc)
    rows = validate.gradient_check(scenario, args.h, numerics)
    header = ["parameter", "ipa", "fd", "fd_half", "rel_err", "status", "note"]
    table = [[r.name, _fmt(r.ipa), _fmt(r.fd), _fmt(r.fd_half),
              _fmt(r.rel_err), r.status, r.note] for r in rows]
    os.makedirs(args.out_dir, exist_ok=True)
    _atomic_write(os.path.join(args.out_dir, "gradcheck.csv"),
                  _csv_text(header, table))
    width = max(len(r.name) for r in rows)
    for r in rows:
        print(f"{r.name:<{width}}  ipa={r.ipa: .9e}  fd={r.fd: .9e}  "
              f"rel={r.rel_err:.2e}  {r.status}", file=out)
    n_fail = sum(r.status == "fail" for r in rows)
    n_excl = sum(r.status == "excluded" for r in rows)
    print(f"{len(rows)} components: {n_fail} failed, {n_excl} excluded",
          file=out)
    return EXIT_GRADCHECK if n_fail else EXIT_OK


def cmd_simulate(args, out=None) -> int:
    out = sys.stdout if out is None else out
    doc = load_scenario_file(args.file)
    scenario = _prepare(doc, args.auto_project, out)
    numerics = parse_numerics(doc)
    cfg = parse_monte_carlo(doc)
    report = validate.kalman_bucy_monte_carlo(scenario, cfg, numerics)
    header = ["target", "empirical_mse", "predicted", "ratio", "n_trials",
              "dt", "seed", "rng"]
    rows = [[i, _fmt(report.empirical[i]), _fmt(report.predicted[i]),
             _fmt(report.ratios[i]), cfg.n_trials, _fmt(cfg.dt),
             cfg.rng_seed, report.rng_algorithm]
            for i in range(scenario.M)]
    os.makedirs(args.out_dir, exist_ok=True)
    _atomic_write(os.path.join(args.out_dir, "simulate.csv"),
                  _csv_text(header, rows))
    for i in range(scenario.M):
        print(f"target {i}: empirical {report.empirical[i]:.6g}  "
              f"predicted {report.predicted[i]:.6g}  "
              f"ratio {report.ratios[i]:.4f}", file=out)
    print(f"total: empirical {report.empirical_total:.6g}  "
          f"predicted {report.predicted_total:.6g}", file=out)
    return EXIT_OK


def _read_trajectory_csv(path: str, n_agents: int) -> list:
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            data = np.array([[float(v) for v in row] for row in reader])
    except (OSError, StopIteration, ValueError) as exc:
        raise ScenarioFileError(f"cannot read trajectory {path}: {exc}") from exc
    if data.ndim != 2 or data.shape[1] < 1 + n_agents:
        raise ScenarioFileError(
            f"{path}: expected columns q, agent1..agent{n_agents} "
            f"(header was {header})"
        )
    return [np.column_stack((data[:, 0], data[:, 1 + j]))
            for j in range(n_agents)]


def cmd_improve(args, out=None) -> int:
    out = sys.stdout if out is None else out
    doc = load_scenario_file(args.file)
    scenario = _prepare(doc, args.auto_project, out)
    samples = _read_trajectory_csv(args.trajectory, scenario.N)
    schedules = trajectory.improve_policy(samples, scenario)
    agents = tuple(s.params for s in schedules)
    improved = Scenario(targets=scenario.targets, agents=agents, T=scenario.T)
    os.makedirs(args.out_dir, exist_ok=True)
    path = os.path.join(args.out_dir, "improved.scenario")
    write_scenario_file(path, improved)
    print(f"wrote {path}", file=out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="permon",
        description="Steady-state optimal periodic trajectories for "
                    "persistent monitoring of targets on a line.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("file", help="scenario YAML file")
        p.add_argument("--out-dir", default=".", help="output directory")
        p.add_argument("--auto-project", action="store_true",
                       help="project infeasible agent parameters onto the "
                            "constraint set before validation")

    p = sub.add_parser("evaluate", help="compute limit cycles and the cost")
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("optimize", help="run projected gradient descent")
    common(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("gradcheck",
                       help="compare exact gradients with finite differences")
    common(p)
    p.add_argument("--h", type=float, default=1e-5,
                   help="finite-difference step (default 1e-5)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("simulate", help="Monte Carlo filter validation")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("improve",
                       help="bang-dwell schedule dominating a sampled trajectory")
    common(p)
    p.add_argument("trajectory",
                   help="CSV with columns q, agent1, ..., agentN")
    p.set_defaults(func=cmd_improve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioFileError, InfeasibleParamsError, UnobservedTargetError,
            SpeedBoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except _NONCONVERGENCE as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except PermonError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
