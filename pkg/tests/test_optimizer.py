import math

import numpy as np
import pytest

from qoc import (AdmissiblePair, BoundarySpec, ControlGrid, ConvergenceError,
                 CostSpec, LevelSystem, MixedWindowError, NotControllableError,
                 PenaltyState, SolveOptions, StateTrajectory, TimeGrid,
                 WindowNotFoundError, abnormal_covector_probe, adjoint_gradient,
                 classify_extremal, distribution_rank, evaluate_cost,
                 find_clean_window, partition_indexes, pmp_residual,
                 propagate_real, solve_reduced, spanning_tree)


def two_level(**kw):
    return LevelSystem.create(2, edges=[(1, 2)], **kw)


def eigenstate(i):
    return BoundarySpec("eigenstate", index=i)


def solve_transfer(sys, spec, steps=150, duration=1.0, **kw):
    opts = SolveOptions(TimeGrid(duration, steps), restarts=3, seed=0, **kw)
    return solve_reduced(sys, spec, eigenstate(1), eigenstate(sys.n), opts)


def held_eigenstate_pair(n=2, steps=40):
    """Zero control holding the first level of an n-level ladder."""
    sysr = two_level() if n == 2 else LevelSystem.ladder(n)
    grid = TimeGrid(1.0, steps)
    ctrl = ControlGrid(grid, "U", n,
                       {e: np.zeros(steps) for e in sysr.edges})
    rho0 = np.zeros(n)
    rho0[0] = 1.0
    return AdmissiblePair(sysr, ctrl, propagate_real(ctrl, rho0))


def test_solve_options_validation():
    grid = TimeGrid(1.0, 10)
    with pytest.raises(ValueError):
        SolveOptions(grid, gradient_tol=0.0)
    with pytest.raises(ValueError):
        SolveOptions(grid, endpoint_tol=-1.0)


def test_energy_transfer_matches_constant_rotation():
    # minimal-energy level swap: constant speed pi/(2T), cost pi^2 / (4 T)
    res = solve_transfer(two_level(), CostSpec("energy", {(1, 2): 1.0}))
    assert res.endpoint_violation <= 1e-8
    assert abs(res.cost - math.pi ** 2 / 4) <= 1e-3
    assert res.lift.never_vanishing()
    rep = pmp_residual(res.pair, res.lift, CostSpec("energy", {(1, 2): 1.0}),
                       eigenstate(1), eigenstate(2))
    assert rep["state_residual"] <= 1e-10
    assert rep["costate_residual"] <= 1e-10
    assert rep["maximality_gap"] <= 1e-4
    assert rep["hamiltonian_constancy"] <= 1e-3


def test_source_equal_target_costs_nothing():
    spec = CostSpec("energy", {(1, 2): 1.0})
    opts = SolveOptions(TimeGrid(1.0, 80), restarts=1, seed=0)
    res = solve_reduced(two_level(), spec, eigenstate(1), eigenstate(1), opts)
    assert res.cost <= 1e-10
    assert res.endpoint_violation <= 1e-8


def test_disconnected_graph_is_rejected():
    sysr = LevelSystem.create(3, edges=[(1, 2)])
    spec = CostSpec("energy", {(1, 2): 1.0})
    with pytest.raises(NotControllableError):
        solve_reduced(sysr, spec, eigenstate(1), eigenstate(3),
                      SolveOptions(TimeGrid(1.0, 50)))


def test_infeasible_bound_raises_with_best_iterate():
    # |u| <= 0.5 over T = 1 cannot rotate by pi/2
    sysr = two_level(bounds=0.5)
    spec = CostSpec("energy", {(1, 2): 1.0})
    opts = SolveOptions(TimeGrid(1.0, 80), restarts=2, max_outer=6, seed=0)
    with pytest.raises(ConvergenceError) as err:
        solve_reduced(sysr, spec, eigenstate(1), eigenstate(2), opts)
    best = err.value.best
    assert best is not None
    assert best.endpoint_violation > 1e-8


def test_minimal_time_bisection_two_level():
    # box |u| <= mu = 1: the swap needs exactly pi/2 of rotation
    spec = CostSpec("time-max", {(1, 2): 1.0}, "free")
    opts = SolveOptions(TimeGrid(1.0, 120), restarts=2, seed=0, time_tol=5e-4)
    res = solve_reduced(two_level(), spec, eigenstate(1), eigenstate(2), opts)
    assert abs(res.cost - math.pi / 2) <= 5e-3
    assert res.endpoint_violation <= 1e-8


def test_adjoint_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    sysr = LevelSystem.ladder(3)
    grid = TimeGrid(0.6, 25)
    spec = CostSpec("energy", dict(sysr.couplings))
    target = np.array([0.2, 0.3, 0.5])
    penalty = PenaltyState.fresh(target, 40.0)
    base = {e: rng.standard_normal(grid.steps) * 0.4 for e in sysr.edges}

    def value(vals):
        ctrl = ControlGrid(grid, "U", 3, vals)
        rho_end = propagate_real(ctrl, np.array([1.0, 0.0, 0.0])).states[-1]
        defect = np.real(rho_end) - penalty.anchor
        return (evaluate_cost(spec, ctrl) + float(penalty.multipliers @ defect)
                + 0.5 * penalty.weight * float(defect @ defect))

    ctrl = ControlGrid(grid, "U", 3, base)
    pair = AdmissiblePair(sysr, ctrl, propagate_real(ctrl, np.array([1.0, 0, 0])))
    grad = adjoint_gradient(sysr, spec, pair, penalty)
    h = 1e-6
    for e in sysr.edges:
        for s in (0, grid.steps // 2, grid.steps - 1):
            plus = {k: v.copy() for k, v in base.items()}
            minus = {k: v.copy() for k, v in base.items()}
            plus[e][s] += h
            minus[e][s] -= h
            fd = (value(plus) - value(minus)) / (2 * h)
            assert abs(grad[e][s] - fd) <= 1e-6 * max(1.0, abs(fd))


def test_pmp_residual_rejects_mismatched_lift():
    res = solve_transfer(two_level(), CostSpec("energy", {(1, 2): 1.0}),
                         steps=60)
    bad = res.lift.__class__(res.lift.p0, res.lift.covectors[:-1],
                             res.lift.hamiltonian, res.lift.flags)
    with pytest.raises(ValueError):
        pmp_residual(res.pair, bad, CostSpec("energy", {(1, 2): 1.0}))


def test_pmp_residual_detects_perturbed_lift():
    spec = CostSpec("energy", {(1, 2): 1.0})
    res = solve_transfer(two_level(), spec, steps=60)
    clean = pmp_residual(res.pair, res.lift, spec)
    noisy_cov = res.lift.covectors + 0.3
    noisy = res.lift.__class__(res.lift.p0, noisy_cov, res.lift.hamiltonian)
    perturbed = pmp_residual(res.pair, noisy, spec)
    assert perturbed["costate_residual"] > 10 * max(clean["costate_residual"],
                                                    1e-12)
    assert perturbed["maximality_gap"] > 10 * max(clean["maximality_gap"],
                                                  1e-12)


def test_abnormal_probe_distinguishes_held_and_moving():
    # holding level 1 of a 3-level ladder never engages the (2,3) field,
    # so the covector (0, 0, 1) annihilates every control direction
    held = abnormal_covector_probe(held_eigenstate_pair(n=3))
    assert held["kernel"] is True
    assert held["ratio"] <= 1e-7
    res = solve_transfer(two_level(), CostSpec("energy", {(1, 2): 1.0}),
                         steps=80)
    moving = abnormal_covector_probe(res.pair)
    assert moving["kernel"] is False


def piecewise_trajectory(rows, duration=1.0):
    arr = np.asarray(rows, dtype=complex)
    return StateTrajectory(TimeGrid(duration, arr.shape[0] - 1), arr)


def test_partition_indexes_splits_classes():
    # ladder 1-2-3-4 with coordinate 3 held at zero: classes {1,2} and {4}
    r = 1 / math.sqrt(2)
    rows = [[r, r, 0.0, 0.0]] * 4
    rows = [[row[0], row[1], 0.0, 0.0] for row in rows]
    rows = np.array(rows)
    rows[:, 3] = 0.0
    rows[:, 0] = [r, 0.6, r, 0.6]
    rows[:, 1] = np.sqrt(0.5 - rows[:, 0] ** 2 + 0.5)  # keep |(1,2)| = 1
    traj = piecewise_trajectory(rows)
    edges = [(1, 2), (2, 3), (3, 4)]
    part = partition_indexes(traj, (0, 3), 1e-6, edges)
    assert part.vanishing == (3, 4)
    assert part.classes == ((1, 2),)
    assert part.cardinalities == (2,)
    assert part.offsets == (0, 2)
    assert part.manifold_dim == 1
    assert math.isclose(part.radii[0], 1.0, rel_tol=1e-12)


def test_partition_rejects_threshold_crossing():
    traj = piecewise_trajectory([[1.0, 0.0], [0.8, 0.6], [1.0, 0.0]])
    with pytest.raises(MixedWindowError):
        partition_indexes(traj, (0, 2), 1e-3, [(1, 2)])
    with pytest.raises(ValueError):
        partition_indexes(traj, (2, 1), 1e-3, [(1, 2)])


def test_partition_rejects_class_norm_drift():
    traj = piecewise_trajectory([[1.0, 0.5], [1.0, 0.5], [1.0, 0.8]])
    with pytest.raises(ValueError, match="norm drifts"):
        partition_indexes(traj, (0, 2), 1e-6, [(1, 2)])


def test_find_clean_window():
    rows = [[1.0, 0.0]] * 5 + [[0.8, 0.6]] * 6
    traj = piecewise_trajectory(rows)
    i1, i2 = find_clean_window(traj, 0.1, 1e-6)
    part = partition_indexes(traj, (i1, i2), 1e-6, [(1, 2)])
    assert part.classes in (((1,),), ((1, 2),))


def test_find_clean_window_fails_on_alternation():
    rows = [[1.0, 0.0], [0.8, 0.6]] * 6
    traj = piecewise_trajectory(rows)
    with pytest.raises(WindowNotFoundError):
        find_clean_window(traj, 0.5, 1e-3)


def test_spanning_tree():
    edges = [(1, 2), (2, 3), (1, 3), (4, 5)]
    tree = spanning_tree([1, 2, 3], edges)
    assert len(tree) == 2
    assert set().union(*({j, k} for j, k in tree)) == {1, 2, 3}
    assert spanning_tree([4], edges) == []
    with pytest.raises(ValueError):
        spanning_tree([1, 4], edges)


def test_distribution_rank():
    rows = [[0.6, 0.8, 0.0]] * 3
    traj = piecewise_trajectory(rows)
    edges = [(1, 2), (2, 3)]
    part = partition_indexes(traj, (0, 2), 1e-6, edges)
    rank, dim = distribution_rank(part, np.array([0.6, 0.8, 0.0]), edges)
    assert (rank, dim) == (1, 1)
    with pytest.raises(ValueError, match="inconsistent"):
        distribution_rank(part, np.array([0.6, 0.0, 0.8]), edges)


def test_classify_extremal_vacuous_on_held_eigenstate():
    pair = held_eigenstate_pair()
    spec = CostSpec("energy", {(1, 2): 1.0})
    reports = classify_extremal(pair, None, spec, eps=1e-6)
    assert reports
    for rep in reports:
        assert rep["verdict"] == "not strictly abnormal"
        assert "vacuously" in rep["reason"]


def test_classify_extremal_accepts_normal_solution():
    spec = CostSpec("energy", {(1, 2): 1.0})
    res = solve_transfer(two_level(), spec, steps=200)
    reports = classify_extremal(res.pair, res.lift, spec, eps=1e-3)
    checked = [r for r in reports if r.get("extended_lift")]
    assert checked
    for rep in checked:
        assert rep["verdict"] == "not strictly abnormal"
        assert rep["extended_lift"]["ok"]
