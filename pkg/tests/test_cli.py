import json
import math

import numpy as np
import pytest

from qoc import (ControlGrid, LevelSystem, TimeGrid, load_control,
                 save_control, save_system)
from qoc.cli import main


@pytest.fixture
def two_level_files(tmp_path):
    sysr = LevelSystem.create(2, energies=[0.0, 1.5], edges=[(1, 2)])
    sys_path = tmp_path / "system.json"
    save_system(sysr, sys_path)
    grid = TimeGrid(1.0, 60)
    ctrl = ControlGrid(grid, "H", 2,
                       {(1, 2): np.full(60, 0.5 * math.pi + 0j)})
    ctrl_path = tmp_path / "control.json"
    save_control(ctrl, ctrl_path)
    return sys_path, ctrl_path


def test_simulate_writes_outputs(tmp_path, two_level_files):
    sys_path, ctrl_path = two_level_files
    out = tmp_path / "out"
    code = main(["simulate", "--system", str(sys_path),
                 "--control", str(ctrl_path), "--out", str(out)])
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["steps"] == 60
    assert summary["norm_drift"] <= 1e-9
    assert (out / "trajectory.csv").exists()
    assert (out / "populations.csv").exists()


def test_missing_file_is_config_error(tmp_path):
    code = main(["simulate", "--system", str(tmp_path / "nope.json"),
                 "--control", str(tmp_path / "nope2.json"),
                 "--out", str(tmp_path)])
    assert code == 2


def test_bad_state_is_config_error(tmp_path, two_level_files):
    sys_path, ctrl_path = two_level_files
    code = main(["simulate", "--system", str(sys_path),
                 "--control", str(ctrl_path), "--state", "eigenstate:7",
                 "--out", str(tmp_path / "o")])
    assert code == 2


def test_eliminate_and_restore_round_trip(tmp_path):
    sysr = LevelSystem.create(2, energies=[0.0, 2.0], edges=[(1, 2)])
    sys_path = tmp_path / "system.json"
    save_system(sysr, sys_path)
    grid = TimeGrid(1.0, 40)
    vals = {(1, 2): 0.7 * np.exp(1j * np.linspace(0, 2, 40))}
    ctrl_path = tmp_path / "drifted.json"
    save_control(ControlGrid(grid, "V", 2, vals), ctrl_path)

    out = tmp_path / "out"
    assert main(["eliminate-drift", "--system", str(sys_path),
                 "--control", str(ctrl_path), "--out", str(out)]) == 0
    driftless = out / "control_driftless.json"
    assert load_control(driftless).flavor == "H"

    assert main(["eliminate-drift", "--restore", "--system", str(sys_path),
                 "--control", str(driftless), "--out", str(out)]) == 0
    back = load_control(out / "control_drifted.json")
    assert np.allclose(back.values[(1, 2)], vals[(1, 2)], atol=1e-14)


def test_check_reports_connectivity(tmp_path, capsys):
    sysr = LevelSystem.create(3, edges=[(1, 2)])
    sys_path = tmp_path / "system.json"
    save_system(sysr, sys_path)
    assert main(["check", "--system", str(sys_path),
                 "--out", str(tmp_path / "o")]) == 0
    report = json.loads((tmp_path / "o" / "check.json").read_text())
    assert report["ok"]
    assert report["controllable"] is False
    assert sorted(map(sorted, report["components"])) == [[1, 2], [3]]


def test_check_flags_bound_violation(tmp_path):
    sysr = LevelSystem.create(2, edges=[(1, 2)], bounds=0.1)
    sys_path = tmp_path / "system.json"
    save_system(sysr, sys_path)
    grid = TimeGrid(1.0, 5)
    ctrl_path = tmp_path / "big.json"
    save_control(ControlGrid(grid, "H", 2, {(1, 2): np.full(5, 1.0 + 0j)}),
                 ctrl_path)
    code = main(["check", "--system", str(sys_path),
                 "--control", str(ctrl_path)])
    assert code == 3


def solve_args(sys_path, out, extra=()):
    return (["solve", "--system", str(sys_path), "--target", "eigenstate:2",
             "--duration", "1.0", "--steps", "80", "--restarts", "2",
             "--out", str(out)] + list(extra))


def test_solve_energy_and_determinism(tmp_path, two_level_files):
    sys_path, _ = two_level_files
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(solve_args(sys_path, out1)) == 0
    assert main(solve_args(sys_path, out2)) == 0
    sol = json.loads((out1 / "solution.json").read_text())
    assert abs(sol["cost"] - math.pi ** 2 / 4) <= 1e-3
    assert sol["endpoint_violation"] <= 1e-8
    for name in ("solution.json", "control.json", "trajectory.csv",
                 "lift.csv", "pmp_residual.json", "classification.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_solve_disconnected_exits_4(tmp_path):
    sysr = LevelSystem.create(3, edges=[(1, 2)])
    sys_path = tmp_path / "system.json"
    save_system(sysr, sys_path)
    code = main(["solve", "--system", str(sys_path),
                 "--target", "eigenstate:3", "--out", str(tmp_path / "o")])
    assert code == 4


def test_solve_infeasible_exits_5_with_best(tmp_path):
    sysr = LevelSystem.create(2, edges=[(1, 2)], bounds=0.5)
    sys_path = tmp_path / "system.json"
    save_system(sysr, sys_path)
    out = tmp_path / "o"
    code = main(solve_args(sys_path, out))
    assert code == 5
    best = json.loads((out / "solution.json").read_text())
    assert best["endpoint_violation"] > 1e-8


def test_solve_bad_boundary_exits_2(tmp_path, two_level_files):
    sys_path, _ = two_level_files
    code = main(["solve", "--system", str(sys_path),
                 "--target", "0.4,0.4", "--out", str(tmp_path / "o")])
    assert code == 2


def test_classify_real_control(tmp_path, two_level_files):
    sys_path, _ = two_level_files
    grid = TimeGrid(1.0, 40)
    ctrl_path = tmp_path / "real.json"
    save_control(ControlGrid(grid, "U", 2, {(1, 2): np.zeros(40)}), ctrl_path)
    out = tmp_path / "o"
    assert main(["classify", "--system", str(sys_path),
                 "--control", str(ctrl_path), "--out", str(out)]) == 0
    report = json.loads((out / "classification.json").read_text())
    assert all(r["verdict"] == "not strictly abnormal" for r in report)


def test_classify_resonant_control(tmp_path, two_level_files):
    sys_path, ctrl_path = two_level_files
    out = tmp_path / "o"
    assert main(["classify", "--system", str(sys_path),
                 "--control", str(ctrl_path), "--out", str(out),
                 "--tol", "1e-4"]) == 0
    verdict = json.loads((out / "verdict.json").read_text())
    assert verdict["status"] == "resonant"


def test_resonate_reduces_energy(tmp_path):
    sysr = LevelSystem.create(2, edges=[(1, 2)])
    sys_path = tmp_path / "system.json"
    save_system(sysr, sys_path)
    grid = TimeGrid(1.0, 400)
    chirp = 0.9 * np.exp(1j * 4.0 * grid.nodes[:-1] ** 2)
    ctrl_path = tmp_path / "chirp.json"
    save_control(ControlGrid(grid, "H", 2, {(1, 2): chirp}), ctrl_path)
    out = tmp_path / "o"
    assert main(["resonate", "--system", str(sys_path),
                 "--control", str(ctrl_path), "--out", str(out),
                 "--tol", "1e-6"]) == 0
    costs = json.loads((out / "costs.json").read_text())
    assert costs["after"]["energy"] < costs["before"]["energy"] - 1e-3
    verdict = json.loads((out / "verdict.json").read_text())
    assert verdict["after"]["status"] == "resonant"
    assert load_control(out / "control_resonant.json").flavor == "H"


def test_demo_counterexample(tmp_path):
    out = tmp_path / "o"
    assert main(["demo-counterexample", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["verdict_a"] == "resonant"
    assert summary["verdict_b"] == "neither"
    assert math.isclose(summary["costs_a"]["time-max"],
                        summary["costs_b"]["time-max"], rel_tol=1e-12)


def test_verify_filter(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["verify", "--filter", "phase-rotation",
                 "--out", str(out)]) == 0
    report = json.loads((out / "verify.json").read_text())
    assert report["all_passed"]
    assert len(report["criteria"]) == 1
