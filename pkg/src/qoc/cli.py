"""Command-line front end.

Subcommands: simulate | eliminate-drift | resonate | check | solve |
classify | demo-counterexample | verify.

Exit codes: 0 success, 2 configuration problem (missing or unparsable
input), 3 invariant violation (broken symmetry, inadmissible pair), 4 the
coupling graph is disconnected, 5 the solver did not converge.  All numeric
output is written in full double precision.  The environment variable
QOC_THREADS caps the solver's multi-start parallelism.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys as _sys

import numpy as np

from .costs import COST_KINDS, CostSpec, evaluate_all_costs, load_cost_spec
from .dynamics import (AdmissiblePair, ControlGrid, StateTrajectory, TimeGrid,
                       eliminate_drift, load_control, propagate_drift,
                       propagate_driftless, propagate_real, restore_drift,
                       save_control, save_trajectory_csv)
from .errors import (ConvergenceError, NotControllableError, QocError)
from .optimizer import (SolveOptions, classify_extremal, pmp_residual,
                        solve_reduced)
from .resonance import (classify_resonance, counterexample_pair,
                        resonance_transform)
from .system import (BoundarySpec, LevelSystem, connected_components,
                     is_controllable, load_system, save_system,
                     validate_system)
from .verify import render_report, run_all

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3
EXIT_NOT_CONTROLLABLE = 4
EXIT_NO_CONVERGENCE = 5


class ConfigError(Exception):
    """A problem with the invocation itself, not with the mathematics."""


def _write_json(path, data) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not JSON-serializable: {type(obj)!r}")


def _out_dir(args) -> str:
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


def _load_system_checked(path) -> LevelSystem:
    if not os.path.exists(path):
        raise ConfigError(f"system file not found: {path}")
    try:
        sysr = load_system(path)
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot parse system file {path}: {exc}")
    report = validate_system(sysr)
    if not report["ok"]:
        raise QocError("invalid system: " + "; ".join(report["violations"]))
    return sysr


def _load_control_checked(path) -> ControlGrid:
    if not os.path.exists(path):
        raise ConfigError(f"control file not found: {path}")
    try:
        return load_control(path)
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot parse control file {path}: {exc}")


def _parse_state(text, n: int, real: bool) -> np.ndarray:
    """Initial state: "eigenstate:k", a comma list, or a JSON file path."""
    if text.startswith("eigenstate:"):
        idx = int(text.split(":", 1)[1])
        if not 1 <= idx <= n:
            raise ConfigError(f"eigenstate index {idx} outside 1..{n}")
        out = np.zeros(n, dtype=float if real else complex)
        out[idx - 1] = 1.0
        return out
    if os.path.exists(text):
        with open(text) as fh:
            data = json.load(fh)
        if isinstance(data, dict):
            data = data["state"]
        vals = [complex(*row) if isinstance(row, list) else complex(row)
                for row in data]
    else:
        try:
            vals = [complex(tok) for tok in text.split(",")]
        except ValueError:
            raise ConfigError(f"cannot parse state {text!r}")
    arr = np.asarray(vals)
    if arr.shape != (n,):
        raise ConfigError(f"state has {arr.size} entries, system has {n} levels")
    nrm = float(np.linalg.norm(arr))
    if abs(nrm - 1.0) > 1e-9:
        raise ConfigError(f"state norm {nrm!r} is not 1")
    return arr.real if real else arr


def _parse_boundary(text, n: int) -> BoundarySpec:
    """Boundary condition: "eigenstate:k" or a comma list of populations."""
    if text.startswith("eigenstate:"):
        idx = int(text.split(":", 1)[1])
        if not 1 <= idx <= n:
            raise ConfigError(f"eigenstate index {idx} outside 1..{n}")
        return BoundarySpec("eigenstate", index=idx)
    try:
        moduli = tuple(float(tok) for tok in text.split(","))
    except ValueError:
        raise ConfigError(f"cannot parse boundary {text!r}")
    spec = BoundarySpec("moduli-point", moduli=moduli)
    problems = spec.violations(n)
    if problems:
        raise ConfigError("bad boundary: " + "; ".join(problems))
    return spec


def _save_populations_csv(traj: StateTrajectory, path) -> None:
    pops = traj.populations()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"pop_{j}" for j in range(1, traj.n + 1)])
        for t, row in zip(traj.grid.nodes, pops):
            w.writerow([repr(float(t))] + [repr(float(x)) for x in row])


def _save_lift_csv(lift, grid: TimeGrid, path) -> None:
    n = lift.covectors.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"P_{j}" for j in range(1, n + 1)] + ["hamiltonian"])
        for i, t in enumerate(grid.nodes):
            ham = repr(float(lift.hamiltonian[min(i, grid.steps - 1)]))
            w.writerow([repr(float(t))]
                       + [repr(float(x)) for x in lift.covectors[i]] + [ham])


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    sysr = _load_system_checked(args.system)
    ctrl = _load_control_checked(args.control)
    out = _out_dir(args)
    if ctrl.flavor == "V":
        psi0 = _parse_state(args.state, sysr.n, real=False)
        traj = propagate_drift(sysr, ctrl, psi0)
    elif ctrl.flavor == "H":
        psi0 = _parse_state(args.state, sysr.n, real=False)
        traj = propagate_driftless(ctrl, psi0)
    else:
        rho0 = _parse_state(args.state, sysr.n, real=True)
        traj = propagate_real(ctrl, rho0)
    save_trajectory_csv(traj, os.path.join(out, "trajectory.csv"))
    _save_populations_csv(traj, os.path.join(out, "populations.csv"))
    _write_json(os.path.join(out, "summary.json"), {
        "flavor": ctrl.flavor,
        "duration": ctrl.grid.duration,
        "steps": ctrl.grid.steps,
        "norm_drift": traj.norm_drift(),
        "final_populations": traj.populations()[-1],
    })
    print(f"simulated {ctrl.grid.steps} steps, "
          f"norm drift {traj.norm_drift():.3e}")
    return EXIT_OK


def cmd_eliminate_drift(args) -> int:
    sysr = _load_system_checked(args.system)
    ctrl = _load_control_checked(args.control)
    out = _out_dir(args)
    if args.restore:
        converted = restore_drift(sysr, ctrl)
        name = "control_drifted.json"
    else:
        converted = eliminate_drift(sysr, ctrl)
        name = "control_driftless.json"
    path = os.path.join(out, name)
    save_control(converted, path)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_resonate(args) -> int:
    sysr = _load_system_checked(args.system)
    ctrl = _load_control_checked(args.control)
    out = _out_dir(args)
    psi0 = _parse_state(args.state, sysr.n, real=False)
    if ctrl.flavor == "V":
        ctrl = eliminate_drift(sysr, ctrl)
    if ctrl.flavor == "H":
        traj = propagate_driftless(ctrl, psi0)
    else:
        raise ConfigError("resonate expects a hermitian-V or skew-H control")
    pair = AdmissiblePair(sysr, ctrl, traj)
    transformed = resonance_transform(pair, eps=args.epsilon, tol=args.tol)
    verdict_before = classify_resonance(pair, eps=args.epsilon)
    verdict_after = classify_resonance(transformed, eps=args.epsilon)
    weights = dict(sysr.couplings)
    table = {
        "before": evaluate_all_costs(weights, pair.control),
        "after": evaluate_all_costs(weights, transformed.control),
    }
    save_control(transformed.control,
                 os.path.join(out, "control_resonant.json"))
    _write_json(os.path.join(out, "costs.json"), table)
    _write_json(os.path.join(out, "verdict.json"), {
        "before": {"status": verdict_before.status,
                   "evidence": {f"{j},{k}": v for (j, k), v
                                in verdict_before.evidence.items()}},
        "after": {"status": verdict_after.status,
                  "evidence": {f"{j},{k}": v for (j, k), v
                               in verdict_after.evidence.items()}},
    })
    print(f"verdict before: {verdict_before.status}, "
          f"after: {verdict_after.status}; energy "
          f"{table['before']['energy']!r} -> {table['after']['energy']!r}")
    return EXIT_OK


def cmd_check(args) -> int:
    sysr = _load_system_checked(args.system)
    report = validate_system(sysr)
    report["controllable"] = is_controllable(sysr)
    report["components"] = [sorted(c) for c in connected_components(sysr)]
    if args.control:
        ctrl = _load_control_checked(args.control)
        ctrl.check_bounds(sysr)
        report["control"] = {"flavor": ctrl.flavor,
                             "steps": ctrl.grid.steps,
                             "duration": ctrl.grid.duration}
        if args.state:
            psi0 = _parse_state(args.state, sysr.n, real=ctrl.flavor == "U")
            if ctrl.flavor == "V":
                traj = propagate_drift(sysr, ctrl, psi0)
            elif ctrl.flavor == "H":
                traj = propagate_driftless(ctrl, psi0)
            else:
                traj = propagate_real(ctrl, psi0)
            pair = AdmissiblePair(sysr, ctrl, traj)
            report["control"]["residual"] = pair.residual()
            report["control"]["norm_drift"] = traj.norm_drift()
    if args.out:
        _write_json(os.path.join(_out_dir(args), "check.json"), report)
    print(json.dumps(report, indent=2, sort_keys=True, default=_jsonable))
    return EXIT_OK


def _cost_spec_from_args(args, sysr: LevelSystem) -> CostSpec:
    if args.cost:
        if not os.path.exists(args.cost):
            raise ConfigError(f"cost file not found: {args.cost}")
        try:
            return load_cost_spec(args.cost)
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise ConfigError(f"cannot parse cost file {args.cost}: {exc}")
    if args.cost_kind not in COST_KINDS:
        raise ConfigError(f"unknown cost kind {args.cost_kind!r}")
    final_time = "free" if args.free_time else "fixed"
    try:
        return CostSpec.for_system(sysr, args.cost_kind, final_time)
    except ValueError as exc:
        raise ConfigError(str(exc))


def _write_solution(out: str, result, spec, src, tgt, eps) -> None:
    save_control(result.pair.control, os.path.join(out, "control.json"))
    save_trajectory_csv(result.pair.trajectory,
                        os.path.join(out, "trajectory.csv"))
    _save_lift_csv(result.lift, result.pair.control.grid,
                   os.path.join(out, "lift.csv"))
    _write_json(os.path.join(out, "solution.json"), {
        "cost": result.cost,
        "endpoint_violation": result.endpoint_violation,
        "duration": result.pair.control.grid.duration,
        "steps": result.pair.control.grid.steps,
        "info": result.info,
        "lift_flags": result.lift.flags,
    })
    _write_json(os.path.join(out, "pmp_residual.json"),
                pmp_residual(result.pair, result.lift, spec, src, tgt))
    _write_json(os.path.join(out, "classification.json"),
                classify_extremal(result.pair, result.lift, spec, eps))


def cmd_solve(args) -> int:
    sysr = _load_system_checked(args.system)
    spec = _cost_spec_from_args(args, sysr)
    src = _parse_boundary(args.source, sysr.n)
    tgt = _parse_boundary(args.target, sysr.n)
    out = _out_dir(args)
    opts = SolveOptions(grid=TimeGrid(args.duration, args.steps),
                        seed=args.seed, restarts=args.restarts,
                        endpoint_tol=args.tol)
    try:
        result = solve_reduced(sysr, spec, src, tgt, opts)
    except ConvergenceError as exc:
        if exc.best is not None:
            _write_solution(out, exc.best, spec, src, tgt, args.epsilon)
        print(f"no convergence: {exc}", file=_sys.stderr)
        return EXIT_NO_CONVERGENCE
    _write_solution(out, result, spec, src, tgt, args.epsilon)
    print(f"cost {result.cost!r}, endpoint violation "
          f"{result.endpoint_violation:.3e}")
    return EXIT_OK


def cmd_classify(args) -> int:
    sysr = _load_system_checked(args.system)
    ctrl = _load_control_checked(args.control)
    out = _out_dir(args)
    if ctrl.flavor == "U":
        rho0 = _parse_state(args.state, sysr.n, real=True)
        traj = propagate_real(ctrl, rho0)
        pair = AdmissiblePair(sysr, ctrl, traj)
        spec = _cost_spec_from_args(args, sysr)
        report = classify_extremal(pair, None, spec, args.epsilon,
                                   tol=args.tol)
        _write_json(os.path.join(out, "classification.json"), report)
        verdicts = sorted({r["verdict"] for r in report})
        print(f"{len(report)} windows, verdicts: {', '.join(verdicts)}")
    else:
        if ctrl.flavor == "V":
            ctrl = eliminate_drift(sysr, ctrl)
        psi0 = _parse_state(args.state, sysr.n, real=False)
        traj = propagate_driftless(ctrl, psi0)
        pair = AdmissiblePair(sysr, ctrl, traj)
        verdict = classify_resonance(pair, eps=args.epsilon, tol=args.tol)
        _write_json(os.path.join(out, "verdict.json"), {
            "status": verdict.status,
            "evidence": {f"{j},{k}": v for (j, k), v
                         in verdict.evidence.items()},
        })
        print(f"verdict: {verdict.status}")
    return EXIT_OK


def cmd_demo_counterexample(args) -> int:
    out = _out_dir(args)
    pair_a, pair_b = counterexample_pair(args.steps)
    save_system(pair_a.system, os.path.join(out, "system.json"))
    save_control(pair_a.control, os.path.join(out, "control_a.json"))
    save_control(pair_b.control, os.path.join(out, "control_b.json"))
    save_trajectory_csv(pair_a.trajectory,
                        os.path.join(out, "trajectory.csv"))
    verdict_a = classify_resonance(pair_a)
    verdict_b = classify_resonance(pair_b)
    weights = dict(pair_a.system.couplings)
    _write_json(os.path.join(out, "summary.json"), {
        "verdict_a": verdict_a.status,
        "verdict_b": verdict_b.status,
        "costs_a": evaluate_all_costs(weights, pair_a.control),
        "costs_b": evaluate_all_costs(weights, pair_b.control),
        "endpoint_populations": pair_a.trajectory.populations()[-1],
    })
    print(f"pair A: {verdict_a.status}; pair B: {verdict_b.status} "
          "(same trajectory, same time-max cost)")
    return EXIT_OK


def cmd_verify(args) -> int:
    report = run_all(filter_text=args.filter, seed=args.seed)
    if args.out:
        _write_json(os.path.join(_out_dir(args), "verify.json"), report)
    print(render_report(report))
    return EXIT_OK if report["all_passed"] else 1


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(p, state=False):
    p.add_argument("--epsilon", type=float, default=1e-6,
                   help="zero threshold on moduli (default 1e-6)")
    p.add_argument("--tol", type=float, default=1e-6,
                   help="numerical tolerance (default 1e-6)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory (default: current)")
    if state:
        p.add_argument("--state", default="eigenstate:1",
                       help='initial state: "eigenstate:k", comma list, '
                            "or JSON file (default eigenstate:1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qoc",
        description="Optimal control of n-level quantum systems via the "
                    "real reduction.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="propagate a control from a state")
    p.add_argument("--system", required=True)
    p.add_argument("--control", required=True)
    _add_common(p, state=True)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("eliminate-drift",
                       help="convert a drifted control to the driftless frame")
    p.add_argument("--system", required=True)
    p.add_argument("--control", required=True)
    p.add_argument("--restore", action="store_true",
                   help="apply the inverse transform instead")
    _add_common(p)
    p.set_defaults(fn=cmd_eliminate_drift)

    p = sub.add_parser("resonate",
                       help="canonical resonant representative of a pair")
    p.add_argument("--system", required=True)
    p.add_argument("--control", required=True)
    _add_common(p, state=True)
    p.set_defaults(fn=cmd_resonate)

    p = sub.add_parser("check", help="validate a system (and optional pair)")
    p.add_argument("--system", required=True)
    p.add_argument("--control")
    _add_common(p, state=False)
    p.add_argument("--state")
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("solve", help="solve the reduced real problem")
    p.add_argument("--system", required=True)
    p.add_argument("--cost", help="cost spec JSON file")
    p.add_argument("--cost-kind", default="energy",
                   help="cost family when no cost file is given")
    p.add_argument("--free-time", action="store_true",
                   help="minimize the final time (time-max cost)")
    p.add_argument("--source", default="eigenstate:1")
    p.add_argument("--target", required=True)
    p.add_argument("--duration", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=40)
    p.add_argument("--restarts", type=int, default=8)
    _add_common(p)
    p.set_defaults(fn=cmd_solve, tol=1e-8)  # tol = endpoint tolerance here

    p = sub.add_parser("classify",
                       help="resonance verdict (complex) or per-window "
                            "extremal report (real)")
    p.add_argument("--system", required=True)
    p.add_argument("--control", required=True)
    p.add_argument("--cost", help="cost spec JSON file")
    p.add_argument("--cost-kind", default="energy")
    p.add_argument("--free-time", action="store_true")
    _add_common(p, state=True)
    p.set_defaults(fn=cmd_classify)

    p = sub.add_parser("demo-counterexample",
                       help="two optimal controls, only one resonant")
    p.add_argument("--steps", type=int, default=400)
    _add_common(p)
    p.set_defaults(fn=cmd_demo_counterexample)

    p = sub.add_parser("verify", help="run the built-in property suite")
    p.add_argument("--filter", help="run only criteria whose name contains "
                                    "this substring")
    _add_common(p)
    p.set_defaults(fn=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=_sys.stderr)
        return EXIT_CONFIG
    except NotControllableError as exc:
        print(f"not controllable: {exc}", file=_sys.stderr)
        return EXIT_NOT_CONTROLLABLE
    except ConvergenceError as exc:
        print(f"no convergence: {exc}", file=_sys.stderr)
        return EXIT_NO_CONVERGENCE
    except (QocError, ValueError) as exc:
        print(f"invariant violation: {exc}", file=_sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    raise SystemExit(main())
