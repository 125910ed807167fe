import csv
import math

import numpy as np
import pytest

from qoc import (AdmissiblePair, ControlGrid, InvalidControlError,
                 LevelSystem, StateTrajectory, TimeGrid, eliminate_drift,
                 embed_real_control, load_control, propagate_drift,
                 propagate_driftless, propagate_real, restore_drift,
                 save_control, save_trajectory_csv, suggest_steps)


def two_level():
    return LevelSystem.create(2, edges=[(1, 2)])


def test_time_grid_validation():
    with pytest.raises(ValueError):
        TimeGrid(0.0, 10)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)
    grid = TimeGrid(1.0, 4)
    assert grid.dt == 0.25
    assert np.allclose(grid.nodes, [0.0, 0.25, 0.5, 0.75, 1.0])
    assert np.allclose(grid.midpoints, [0.125, 0.375, 0.625, 0.875])


def test_control_grid_invariants():
    grid = TimeGrid(1.0, 3)
    with pytest.raises(InvalidControlError):
        ControlGrid(grid, "X", 2, {})
    with pytest.raises(InvalidControlError):
        ControlGrid(grid, "H", 2, {(2, 1): np.zeros(3, complex)})
    with pytest.raises(InvalidControlError):
        ControlGrid(grid, "H", 2, {(1, 2): np.zeros(5, complex)})
    with pytest.raises(InvalidControlError):
        ControlGrid(grid, "U", 2, {(1, 2): np.full(3, 1j)})


def test_control_matrices_symmetry():
    grid = TimeGrid(1.0, 2)
    val = np.array([1 + 2j, 3 - 1j])
    herm = ControlGrid(grid, "V", 2, {(1, 2): val}).matrices()
    assert np.allclose(herm, np.conj(np.swapaxes(herm, 1, 2)))
    skew = ControlGrid(grid, "H", 2, {(1, 2): val}).matrices()
    assert np.allclose(skew, -np.conj(np.swapaxes(skew, 1, 2)))
    anti = ControlGrid(grid, "U", 2, {(1, 2): np.array([1.0, -2.0])}).matrices()
    assert np.allclose(anti, -np.swapaxes(anti, 1, 2))


def test_bounds_check():
    sysr = LevelSystem.create(2, edges=[(1, 2)], bounds=1.0)
    ctrl = ControlGrid(TimeGrid(1.0, 2), "U", 2, {(1, 2): np.array([0.5, 1.5])})
    with pytest.raises(InvalidControlError):
        ctrl.check_bounds(sysr)


def test_real_rotation_matches_closed_form():
    # constant u on one edge rotates at angular speed u
    grid = TimeGrid(1.0, 50)
    u = 0.8
    ctrl = ControlGrid(grid, "U", 2, {(1, 2): np.full(50, u)})
    traj = propagate_real(ctrl, np.array([1.0, 0.0]))
    t = grid.nodes
    assert np.allclose(traj.states[:, 0], np.cos(u * t), atol=1e-12)
    assert np.allclose(traj.states[:, 1], -np.sin(u * t), atol=1e-12)


def test_propagation_keeps_unit_norm():
    rng = np.random.default_rng(0)
    grid = TimeGrid(2.0, 100)
    ctrl = ControlGrid(grid, "H", 3, {
        (1, 2): rng.standard_normal(100) + 1j * rng.standard_normal(100),
        (2, 3): rng.standard_normal(100) + 1j * rng.standard_normal(100),
    })
    psi0 = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    traj = propagate_driftless(ctrl, psi0 / np.linalg.norm(psi0))
    assert traj.norm_drift() <= 1e-9
    traj.check_norms()


def test_propagation_requires_unit_state():
    ctrl = ControlGrid(TimeGrid(1.0, 2), "H", 2,
                       {(1, 2): np.zeros(2, complex)})
    with pytest.raises(ValueError):
        propagate_driftless(ctrl, np.array([1.0, 1.0]))


def test_flavor_mismatch_rejected():
    ctrl = ControlGrid(TimeGrid(1.0, 2), "H", 2,
                       {(1, 2): np.zeros(2, complex)})
    with pytest.raises(InvalidControlError):
        propagate_real(ctrl, np.array([1.0, 0.0]))
    with pytest.raises(InvalidControlError):
        propagate_drift(two_level(), ctrl, np.array([1.0, 0.0]))


def test_eliminate_restore_round_trip():
    sysr = LevelSystem.create(2, energies=[0.0, 2.0], edges=[(1, 2)])
    grid = TimeGrid(1.0, 20)
    vals = {(1, 2): np.exp(1j * np.linspace(0, 3, 20)) * 0.7}
    ctrl = ControlGrid(grid, "V", 2, vals)
    back = restore_drift(sysr, eliminate_drift(sysr, ctrl))
    assert back.flavor == "V"
    assert np.allclose(back.values[(1, 2)], vals[(1, 2)], atol=1e-14)


def test_drift_elimination_preserves_populations():
    sysr = LevelSystem.create(3, energies=[0.0, 1.0, 2.7],
                              edges=[(1, 2), (2, 3)])
    grid = TimeGrid(0.5, 1500)
    rng = np.random.default_rng(3)
    vals = {e: np.full(grid.steps,
                       0.4 * np.exp(1j * rng.uniform(0, 2 * math.pi)))
            for e in sysr.edges}
    ctrl = ControlGrid(grid, "V", 3, vals)
    psi0 = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    psi0 /= np.linalg.norm(psi0)
    drifted = propagate_drift(sysr, ctrl, psi0)
    driftless = propagate_driftless(eliminate_drift(sysr, ctrl), psi0)
    assert np.max(np.abs(drifted.moduli() - driftless.moduli())) <= 1e-8


def test_embed_real_control_is_skew_flavor():
    ctrl = ControlGrid(TimeGrid(1.0, 2), "U", 2, {(1, 2): np.array([1.0, 2.0])})
    emb = embed_real_control(ctrl)
    assert emb.flavor == "H"
    assert np.allclose(emb.values[(1, 2)], [1.0, 2.0])


def test_admissible_pair_residual():
    grid = TimeGrid(1.0, 30)
    ctrl = ControlGrid(grid, "U", 2, {(1, 2): np.linspace(-1, 1, 30)})
    traj = propagate_real(ctrl, np.array([1.0, 0.0]))
    pair = AdmissiblePair(two_level(), ctrl, traj)
    assert pair.residual() <= 1e-12
    pair.check_admissible()
    tampered = traj.states.copy()
    tampered[5] = tampered[5][::-1]
    bad = AdmissiblePair(two_level(), ctrl,
                         StateTrajectory(grid, tampered, "real"))
    with pytest.raises(ValueError):
        bad.check_admissible()


def test_control_file_round_trip(tmp_path):
    grid = TimeGrid(1.0, 3)
    vals = {(1, 2): np.array([1 + 1j, -2j, 0.5 + 0j])}
    ctrl = ControlGrid(grid, "H", 2, vals)
    path = tmp_path / "ctrl.json"
    save_control(ctrl, path)
    again = load_control(path)
    assert again.flavor == "H"
    assert again.grid == grid
    assert np.allclose(again.values[(1, 2)], vals[(1, 2)])


def test_load_control_accepts_consistent_mirror(tmp_path):
    path = tmp_path / "ctrl.json"
    path.write_text('{"T": 1.0, "N": 2, "flavor": "V", '
                    '"values": {"2,1": [[1.0, -1.0], [0.5, 0.0]]}}')
    ctrl = load_control(path)
    # the (2,1) Hermitian entry is the conjugate of the stored (1,2) one
    assert np.allclose(ctrl.values[(1, 2)], [1 + 1j, 0.5])


def test_load_control_rejects_broken_symmetry(tmp_path):
    path = tmp_path / "ctrl.json"
    path.write_text('{"T": 1.0, "N": 1, "flavor": "V", "values": '
                    '{"1,2": [[1.0, 1.0]], "2,1": [[1.0, 1.0]]}}')
    with pytest.raises(InvalidControlError, match="Hermitian"):
        load_control(path)


def test_load_control_rejects_non_finite(tmp_path):
    path = tmp_path / "ctrl.json"
    path.write_text('{"T": 1.0, "N": 1, "flavor": "H", '
                    '"values": {"1,2": [[NaN, 0.0]]}}')
    with pytest.raises(InvalidControlError):
        load_control(path)


def test_trajectory_csv_full_precision(tmp_path):
    grid = TimeGrid(1.0, 4)
    ctrl = ControlGrid(grid, "U", 2, {(1, 2): np.full(4, 1 / 3)})
    traj = propagate_real(ctrl, np.array([1.0, 0.0]))
    path = tmp_path / "traj.csv"
    save_trajectory_csv(traj, path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0] == "t"
    values = np.array([[float(x) for x in row] for row in rows[1:]])
    assert np.array_equal(values[:, 1], traj.states[:, 0].real)
    assert np.array_equal(values[:, 5], traj.populations()[:, 0])


def test_suggest_steps_scales_with_gap():
    slow = LevelSystem.create(2, energies=[0.0, 1.0], edges=[(1, 2)])
    fast = LevelSystem.create(2, energies=[0.0, 100.0], edges=[(1, 2)])
    assert suggest_steps(fast, 1.0) > suggest_steps(slow, 1.0)
