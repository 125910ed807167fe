"""Self-contained property suite for the whole pipeline.

Each criterion is a function returning a report dict with the measured
quantities and a pass flag; run_all collects them.  The checks are
property-based with analytic oracles (exhaustive graph enumeration, closed
forms on two levels, finite differences), so the suite needs no external
fixtures and runs in seconds.
"""
from __future__ import annotations

import itertools
import math
import time

import numpy as np

from .costs import COST_KINDS, CostSpec, constant_speed_residual, evaluate_cost
from .dynamics import (AdmissiblePair, ControlGrid, StateTrajectory, TimeGrid,
                       eliminate_drift, embed_real_control, propagate_drift,
                       propagate_driftless, propagate_real)
from .errors import ConvergenceError
from .optimizer import (PenaltyState, SolveOptions, adjoint_gradient,
                        classify_extremal, distribution_rank,
                        partition_indexes, pmp_residual, solve_reduced,
                        spanning_tree)
from .resonance import (classify_resonance, counterexample_pair,
                        decompose_intervals, resonance_transform, rot_alpha,
                        uv_decompose)
from .system import (BoundarySpec, LevelSystem, canonical_edge,
                     is_controllable, lie_rank_oracle)

__all__ = ["CRITERIA", "run_all", "render_report"]


# ---------------------------------------------------------------------------
# random instance helpers


def _random_connected_edges(rng, n):
    """Random spanning tree plus a few extra chords on levels 1..n."""
    order = rng.permutation(np.arange(1, n + 1))
    edges = set()
    for i in range(1, n):
        j = order[i]
        k = order[rng.integers(0, i)]
        edges.add(canonical_edge(int(j), int(k)))
    extras = [(j, k) for j in range(1, n + 1) for k in range(j + 1, n + 1)
              if (j, k) not in edges]
    for e in extras:
        if rng.random() < 0.3:
            edges.add(e)
    return tuple(sorted(edges))


def _random_system(rng, nmax=4, energy_scale=3.0):
    n = int(rng.integers(2, nmax + 1))
    edges = _random_connected_edges(rng, n)
    energies = rng.uniform(-energy_scale, energy_scale, n)
    couplings = {e: float(rng.uniform(0.5, 2.0)) for e in edges}
    return LevelSystem.create(n, energies, edges, couplings)


def _random_piecewise(rng, steps, segments, scale):
    """Piecewise-constant complex values, |value| <= scale."""
    cuts = np.sort(rng.choice(np.arange(1, steps), size=segments - 1,
                              replace=False)) if segments > 1 else np.array([], int)
    out = np.empty(steps, dtype=complex)
    start = 0
    for end in list(cuts) + [steps]:
        amp = scale * rng.random()
        out[start:end] = amp * np.exp(1j * rng.uniform(0, 2 * math.pi))
        start = end
    return out


def _random_unit(rng, n, complex_=True):
    v = rng.standard_normal(n) + (1j * rng.standard_normal(n) if complex_ else 0)
    return v / np.linalg.norm(v)


def _random_driftless_pair(rng, nmax=4, duration=0.5, steps=600, scale=0.5):
    sysr = _random_system(rng, nmax)
    grid = TimeGrid(duration, steps)
    vals = {e: _random_piecewise(rng, steps, int(rng.integers(1, 4)), scale)
            for e in sysr.edges}
    ctrl = ControlGrid(grid, "H", sysr.n, vals)
    psi0 = _random_unit(rng, sysr.n)
    return AdmissiblePair(sysr, ctrl, propagate_driftless(ctrl, psi0))


def _two_level():
    return LevelSystem.create(2, edges=[(1, 2)])


def _report(num, name, description, passed, measured, started):
    return {
        "id": num,
        "name": name,
        "description": description,
        "passed": bool(passed),
        "measured": measured,
        "runtime_seconds": round(time.time() - started, 3),
    }


# ---------------------------------------------------------------------------
# criteria


def criterion_1(seed: int = 0) -> dict:
    """Graph connectivity vs the brute-force Lie-rank transitivity oracle."""
    started = time.time()
    budget = 30.0
    mismatches = []
    total = 0
    for n in (2, 3, 4):
        all_pairs = [(j, k) for j in range(1, n + 1) for k in range(j + 1, n + 1)]
        for r in range(len(all_pairs) + 1):
            for combo in itertools.combinations(all_pairs, r):
                sysr = LevelSystem.create(n, edges=combo)
                total += 1
                connected = is_controllable(sysr)
                oracle = lie_rank_oracle(sysr)["transitive"]
                if connected != oracle:
                    mismatches.append({"n": n, "edges": combo,
                                       "connected": connected,
                                       "oracle": oracle})
    elapsed = time.time() - started
    return _report(
        1, "controllability-oracle",
        "graph connectivity agrees with the Lie-rank transitivity oracle "
        "for every coupling graph on 2 to 4 levels, in under 30 s",
        not mismatches and elapsed < budget,
        {"graphs_checked": total, "mismatches": mismatches,
         "elapsed": round(elapsed, 3), "budget_seconds": budget},
        started)


def criterion_2(seed: int = 0) -> dict:
    """Population histories agree before and after removing the drift."""
    started = time.time()
    rng = np.random.default_rng(seed)
    tol = 1e-8
    worst = 0.0
    for _ in range(100):
        sysr = _random_system(rng)
        grid = TimeGrid(0.4, 2500)
        vals = {e: _random_piecewise(rng, grid.steps, int(rng.integers(1, 4)), 0.5)
                for e in sysr.edges}
        ctrl_v = ControlGrid(grid, "V", sysr.n, vals)
        psi0 = _random_unit(rng, sysr.n)
        with_drift = propagate_drift(sysr, ctrl_v, psi0)
        driftless = propagate_driftless(eliminate_drift(sysr, ctrl_v), psi0)
        worst = max(worst, float(np.max(np.abs(
            with_drift.moduli() - driftless.moduli()))))
    return _report(
        2, "drift-elimination",
        "on 100 random instances the interaction-picture control reproduces "
        "the drifted population history to 1e-8",
        worst <= tol,
        {"max_modulus_deviation": worst, "tolerance": tol,
         "instances": 100, "steps": 2500},
        started)


def _phase_drift_on_intervals(pair, floor=1e-3):
    """Max angular drift of a coordinate phase over each contiguous run
    with modulus > floor (across a zero crossing the phase may jump)."""
    psi = pair.trajectory.states
    worst = 0.0
    for j in range(psi.shape[1]):
        mask = np.abs(psi[:, j]) > floor
        i = 0
        while i < mask.size:
            if not mask[i]:
                i += 1
                continue
            start = i
            while i < mask.size and mask[i]:
                i += 1
            ang = np.angle(psi[start:i, j])
            worst = max(worst, float(np.max(np.abs(
                np.angle(np.exp(1j * (ang - ang[0])))))))
    return worst


def criterion_3(seed: int = 0) -> dict:
    """The canonical resonant representative: same populations, lower cost."""
    started = time.time()
    rng = np.random.default_rng(seed + 1)
    pop_tol, phase_tol, strict_tol, v_floor = 1e-8, 1e-6, 1e-8, 1e-6
    worst = {"population": 0.0, "phase": 0.0, "cost_excess": 0.0}
    strict_failures = []
    verdict_failures = 0
    strict_cases = 0
    for trial in range(100):
        pair = _random_driftless_pair(rng, steps=2000, duration=0.4, scale=0.5)
        out = resonance_transform(pair, tol=1e-7)
        worst["population"] = max(worst["population"], float(np.max(np.abs(
            out.trajectory.populations() - pair.trajectory.populations()))))
        worst["phase"] = max(worst["phase"], _phase_drift_on_intervals(out))
        if classify_resonance(out).status != "resonant":
            verdict_failures += 1
        weights = dict(pair.system.couplings)
        drop = {}
        for kind in COST_KINDS:
            spec = CostSpec(kind, weights,
                            "fixed" if kind == "energy" else "free")
            before = evaluate_cost(spec, pair.control)
            after = evaluate_cost(spec, out.control)
            worst["cost_excess"] = max(worst["cost_excess"], after - before)
            drop[kind] = before - after
        dec = decompose_intervals(pair.trajectory, pair.control.edges, 1e-6)
        uv = uv_decompose(pair, dec)
        v_mass = sum(float(np.sum(rec["v"] ** 2)) * pair.control.grid.dt
                     for recs in uv.pieces.values() for rec in recs)
        if v_mass > v_floor:
            strict_cases += 1
            if drop["energy"] <= strict_tol:
                strict_failures.append({"trial": trial, "v_mass": v_mass,
                                        "energy_drop": drop["energy"]})
    passed = (worst["population"] <= pop_tol and worst["phase"] <= phase_tol
              and verdict_failures == 0 and worst["cost_excess"] <= 1e-12
              and not strict_failures)
    return _report(
        3, "resonance-transform",
        "on 100 random admissible pairs the resonant representative keeps "
        "populations (1e-8), has constant phases (1e-6), is classified "
        "resonant, never raises any cost, and strictly lowers the energy "
        "whenever a phase-driving component was present",
        passed,
        {**worst, "verdict_failures": verdict_failures,
         "strict_decrease_cases": strict_cases,
         "strict_decrease_failures": strict_failures},
        started)


def criterion_4(seed: int = 0) -> dict:
    """Per-coordinate phase rotations are cost isometries."""
    started = time.time()
    rng = np.random.default_rng(seed + 2)
    cost_tol, res_tol = 1e-12, 1e-8
    worst_cost, worst_res = 0.0, 0.0
    for _ in range(100):
        pair = _random_driftless_pair(rng, steps=80, duration=0.5, scale=1.0)
        alpha = rng.uniform(-math.pi, math.pi, pair.system.n)
        rotated = rot_alpha(pair, alpha)
        worst_res = max(worst_res, rotated.residual())
        weights = dict(pair.system.couplings)
        for kind in COST_KINDS:
            spec = CostSpec(kind, weights,
                            "fixed" if kind == "energy" else "free")
            worst_cost = max(worst_cost, abs(
                evaluate_cost(spec, pair.control)
                - evaluate_cost(spec, rotated.control)))
    return _report(
        4, "phase-rotation-isometry",
        "on 100 random pairs a per-coordinate phase rotation changes no "
        "cost by more than 1e-12 and preserves admissibility",
        worst_cost <= cost_tol and worst_res <= res_tol,
        {"max_cost_change": worst_cost, "max_residual": worst_res},
        started)


def criterion_5(seed: int = 0) -> dict:
    """The built-in four-level example with two optimal controls."""
    started = time.time()
    pair_a, pair_b = counterexample_pair()
    nodes = pair_a.control.grid.nodes
    reference = np.zeros((nodes.size, 4))
    reference[:, 0] = np.cos(nodes)
    reference[:, 1] = np.sin(nodes)
    dev_a = float(np.max(np.abs(pair_a.trajectory.states - reference)))
    dev_b = float(np.max(np.abs(pair_b.trajectory.states - reference)))
    status_a = classify_resonance(pair_a).status
    status_b = classify_resonance(pair_b).status
    return _report(
        5, "four-level-example",
        "both built-in controls reproduce (cos t, sin t, 0, 0) to 1e-10; "
        "the quiet one is resonant, the phase-cycling one is neither",
        dev_a <= 1e-10 and dev_b <= 1e-10
        and status_a == "resonant" and status_b == "neither",
        {"trajectory_deviation_a": dev_a, "trajectory_deviation_b": dev_b,
         "status_a": status_a, "status_b": status_b},
        started)


def _solve_two_level_energy(seed=0, steps=40):
    sysr = _two_level()
    spec = CostSpec.for_system(sysr, "energy")
    opts = SolveOptions(grid=TimeGrid(1.0, steps), restarts=4, seed=seed)
    return solve_reduced(sysr, spec,
                         BoundarySpec("eigenstate", index=1),
                         BoundarySpec("eigenstate", index=2), opts), spec


def criterion_6(seed: int = 0) -> dict:
    """Two-level closed forms: energy pi^2/4 at T=1, minimal time pi/2."""
    started = time.time()
    budget = 10.0
    t0 = time.time()
    res_e, _ = _solve_two_level_energy(seed)
    t_energy = time.time() - t0
    energy_err = abs(res_e.cost - math.pi ** 2 / 4)

    sysb = LevelSystem.create(2, edges=[(1, 2)], bounds=1.0)
    spec_t = CostSpec.for_system(sysb, "time-max", final_time="free")
    opts = SolveOptions(grid=TimeGrid(2.0, 40), restarts=2, seed=seed,
                        time_tol=2e-4)
    t0 = time.time()
    res_t = solve_reduced(sysb, spec_t, BoundarySpec("eigenstate", index=1),
                          BoundarySpec("eigenstate", index=2), opts)
    t_time = time.time() - t0
    time_err = abs(res_t.info["minimal_time"] - math.pi / 2)
    return _report(
        6, "two-level-oracles",
        "energy transfer cost pi^2/4 within 1e-3 and minimal time pi/2 "
        "within 1e-3, each solve in under 10 s",
        energy_err <= 1e-3 and time_err <= 1e-3
        and t_energy < budget and t_time < budget,
        {"energy_cost": res_e.cost, "energy_error": energy_err,
         "minimal_time": res_t.info["minimal_time"], "time_error": time_err,
         "energy_solve_seconds": round(t_energy, 3),
         "time_solve_seconds": round(t_time, 3), "budget_seconds": budget},
        started)


def criterion_7(seed: int = 0) -> dict:
    """Adjoint gradient vs central finite differences."""
    started = time.time()
    rng = np.random.default_rng(seed + 3)
    tol, h = 1e-5, 1e-5
    worst = 0.0
    for trial in range(20):
        sysr = _random_system(rng)
        grid = TimeGrid(1.0, 20)
        kind = ("energy", "length", "area")[trial % 3]
        spec = CostSpec.for_system(sysr, kind)
        u = {e: rng.standard_normal(grid.steps) for e in sysr.edges}
        ctrl = ControlGrid(grid, "U", sysr.n, u)
        rho0 = _random_unit(rng, sysr.n, complex_=False)
        target = rng.dirichlet(np.ones(sysr.n))
        penalty = PenaltyState(target, np.ones(sysr.n),
                               rng.standard_normal(sysr.n), 50.0)
        pair = AdmissiblePair(sysr, ctrl, propagate_real(ctrl, rho0))
        grad = adjoint_gradient(sysr, spec, pair, penalty)

        def value(vals):
            c = ControlGrid(grid, "U", sysr.n, vals)
            rho_end = propagate_real(c, rho0).states[-1]
            defect = rho_end - penalty.anchor
            return (evaluate_cost(spec, c)
                    + float(penalty.multipliers @ defect)
                    + 0.5 * penalty.weight * float(defect @ defect))

        scale = max(1.0, max(float(np.max(np.abs(g))) for g in grad.values()))
        for e in sysr.edges:
            for s in range(grid.steps):
                up = {k: v.copy() for k, v in u.items()}
                um = {k: v.copy() for k, v in u.items()}
                up[e][s] += h
                um[e][s] -= h
                fd = (value(up) - value(um)) / (2 * h)
                worst = max(worst, abs(fd - grad[e][s]) / scale)
    return _report(
        7, "adjoint-gradient",
        "on 20 random instances the adjoint gradient matches central "
        "finite differences to a relative 1e-5",
        worst <= tol,
        {"max_relative_error": worst, "tolerance": tol, "fd_step": h},
        started)


def _converged_energy_solves(seed):
    """The two reference energy solves reused by several criteria."""
    out = []
    res2, spec2 = _solve_two_level_energy(seed)
    out.append((res2, spec2, BoundarySpec("eigenstate", index=1),
                BoundarySpec("eigenstate", index=2)))
    sys3 = LevelSystem.ladder(3)
    spec3 = CostSpec.for_system(sys3, "energy")
    opts = SolveOptions(grid=TimeGrid(1.0, 40), restarts=6, seed=seed)
    res3 = solve_reduced(sys3, spec3, BoundarySpec("eigenstate", index=1),
                         BoundarySpec("eigenstate", index=3), opts)
    out.append((res3, spec3, BoundarySpec("eigenstate", index=1),
                BoundarySpec("eigenstate", index=3)))
    return out


def criterion_8(seed: int = 0) -> dict:
    """Converged solutions satisfy the maximum-principle residuals."""
    started = time.time()
    res_tol, const_tol, speed_tol = 1e-4, 1e-3, 1e-3
    rows = []
    passed = True
    for res, spec, src, tgt in _converged_energy_solves(seed):
        rep = pmp_residual(res.pair, res.lift, spec, src, tgt)
        speed = constant_speed_residual(spec, res.pair.control)
        ok = (rep["state_residual"] <= res_tol
              and rep["costate_residual"] <= res_tol
              and rep["maximality_gap"] <= res_tol
              and rep["hamiltonian_constancy"] <= const_tol
              and speed <= speed_tol)
        passed = passed and ok
        rows.append({"n": res.pair.system.n, "ok": ok,
                     "state_residual": rep["state_residual"],
                     "costate_residual": rep["costate_residual"],
                     "maximality_gap": rep["maximality_gap"],
                     "hamiltonian_constancy": rep["hamiltonian_constancy"],
                     "constant_speed_residual": speed})
    return _report(
        8, "maximum-principle",
        "converged energy solutions pass all maximum-principle residuals "
        "at 1e-4, Hamiltonian constancy 1e-3, constant speed 1e-3",
        passed, {"solutions": rows}, started)


def _random_clean_trajectory(rng):
    """A real pair with a known zero pattern: some coordinates identically
    zero, the rest split into classes with no coupling across them."""
    n = int(rng.integers(3, 6))
    sysr = LevelSystem.ladder(n)
    grid = TimeGrid(1.0, 120)
    vanish = sorted(rng.choice(np.arange(1, n + 1),
                               size=int(rng.integers(0, n - 1)), replace=False))
    alive = [j for j in range(1, n + 1) if j not in vanish]
    rho0 = np.zeros(n)
    rho0[[j - 1 for j in alive]] = rng.standard_normal(len(alive)) + \
        np.sign(rng.standard_normal(len(alive))) * 0.2
    rho0 /= np.linalg.norm(rho0)
    vals = {}
    for j, k in sysr.edges:
        if j in vanish or k in vanish:
            vals[(j, k)] = np.zeros(grid.steps)
        else:
            vals[(j, k)] = rng.standard_normal(grid.steps) * 0.8
    ctrl = ControlGrid(grid, "U", n, vals)
    return AdmissiblePair(sysr, ctrl, propagate_real(ctrl, rho0)), vanish


def criterion_9(seed: int = 0) -> dict:
    """Zero-pattern machinery: class norms, spanning trees, distribution
    rank, and the extended normal lift on a converged minimizer."""
    started = time.time()
    rng = np.random.default_rng(seed + 4)
    eps = 1e-6
    drift_tol = 1e-8
    worst_drift = 0.0
    rank_failures = []
    tree_failures = []
    checked_ranks = 0
    for trial in range(50):
        pair, vanish = _random_clean_trajectory(rng)
        traj = pair.trajectory
        edges = pair.system.edges
        window = (0, traj.grid.steps)
        part = partition_indexes(traj, window, eps, edges,
                                 class_norm_tol=math.inf)
        rho = np.real(traj.states)
        for cls in part.classes:
            idx = [j - 1 for j in cls]
            norms = np.sum(rho[:, idx] ** 2, axis=1)
            worst_drift = max(worst_drift, float(np.max(np.abs(
                norms - norms[0]))))
        state = rho[0]
        all_big = all(abs(state[j - 1]) > eps
                      for cls in part.classes for j in cls)
        if all_big:
            checked_ranks += 1
            rank, dim = distribution_rank(part, state, edges)
            if rank != dim:
                rank_failures.append({"trial": trial, "rank": rank, "dim": dim})
            for cls in part.classes:
                tree = spanning_tree(cls, edges)
                vecs = []
                for j, k in tree:
                    f = np.zeros(pair.system.n)
                    f[j - 1] = state[k - 1]
                    f[k - 1] = -state[j - 1]
                    vecs.append(f)
                if vecs:
                    s = np.linalg.svd(np.array(vecs), compute_uv=False)
                    if s[-1] <= 1e-9 * s[0]:
                        tree_failures.append({"trial": trial, "class": cls})

    lift_rows = []
    lift_ok = True
    for res, spec, _, _ in _converged_energy_solves(seed):
        for rep in classify_extremal(res.pair, res.lift, spec, eps):
            if rep.get("verdict") != "not strictly abnormal":
                continue
            ext = rep.get("extended_lift")
            if ext is None:
                continue
            lift_ok = lift_ok and ext["ok"]
            lift_rows.append({"n": res.pair.system.n,
                              "window": rep["window"], **ext})
    passed = (worst_drift <= drift_tol and not rank_failures
              and not tree_failures and lift_ok and bool(lift_rows))
    return _report(
        9, "zero-pattern-machinery",
        "on 50 random clean-window trajectories class norms are conserved "
        "to 1e-8, spanning-tree fields and the full distribution have full "
        "rank, and converged minimizers carry a verified extended normal "
        "lift on every full-rank window",
        passed,
        {"max_class_norm_drift": worst_drift,
         "rank_checks": checked_ranks, "rank_failures": rank_failures,
         "tree_failures": tree_failures,
         "extended_lift_windows": len(lift_rows), "lift_ok": lift_ok},
        started)


def criterion_10(seed: int = 0) -> dict:
    """Converged energy minimizers are at least weakly resonant."""
    started = time.time()
    rows = []
    passed = True
    for res, _, _, _ in _converged_energy_solves(seed):
        ctrl = res.pair.control
        embedded = embed_real_control(ctrl)
        traj = StateTrajectory(ctrl.grid,
                               res.pair.trajectory.states.astype(complex),
                               "complex")
        verdict = classify_resonance(
            AdmissiblePair(res.pair.system, embedded, traj), tol=1e-4)
        ok = verdict.at_least_weakly_resonant
        passed = passed and ok
        rows.append({"n": res.pair.system.n, "status": verdict.status,
                     "ok": ok})
    return _report(
        10, "weak-resonance-of-minimizers",
        "every converged energy-cost solution, embedded as a complex pair, "
        "classifies as at least weakly resonant at tol 1e-4",
        passed, {"solutions": rows}, started)


CRITERIA = (
    criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
    criterion_6, criterion_7, criterion_8, criterion_9, criterion_10,
)


def run_all(filter_text: str | None = None, seed: int = 0) -> dict:
    """Run the criteria (optionally only those whose name contains
    filter_text) and collect a machine-readable report."""
    reports = []
    for fn in CRITERIA:
        probe = fn.__doc__ or ""
        # run only when the name matches; names are stable identifiers
        name = _NAMES[fn]
        if filter_text and filter_text not in name:
            continue
        try:
            reports.append(fn(seed))
        except ConvergenceError as exc:
            reports.append({"id": _IDS[fn], "name": name,
                            "description": probe.strip(),
                            "passed": False,
                            "measured": {"error": str(exc)},
                            "runtime_seconds": 0.0})
    return {"criteria": reports,
            "all_passed": all(r["passed"] for r in reports)}


_NAMES = {
    criterion_1: "controllability-oracle",
    criterion_2: "drift-elimination",
    criterion_3: "resonance-transform",
    criterion_4: "phase-rotation-isometry",
    criterion_5: "four-level-example",
    criterion_6: "two-level-oracles",
    criterion_7: "adjoint-gradient",
    criterion_8: "maximum-principle",
    criterion_9: "zero-pattern-machinery",
    criterion_10: "weak-resonance-of-minimizers",
}

_IDS = {fn: i + 1 for i, fn in enumerate(CRITERIA)}


def render_report(report: dict) -> str:
    lines = []
    for r in report["criteria"]:
        flag = "PASS" if r["passed"] else "FAIL"
        lines.append(f"[{flag}] criterion {r['id']:2d} {r['name']} "
                     f"({r['runtime_seconds']:.2f}s)")
    lines.append("all passed" if report["all_passed"] else "FAILURES present")
    return "\n".join(lines)
