import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qoc import (ControlGrid, CostSpec, LevelSystem, TimeGrid,
                 constant_speed_residual, evaluate_all_costs, evaluate_cost,
                 in_constraint_set, load_cost_spec, save_cost_spec)


def constant_control(value, steps=10, duration=2.0, n=2):
    grid = TimeGrid(duration, steps)
    return ControlGrid(grid, "H", n, {(1, 2): np.full(steps, value)})


def test_cost_spec_validation():
    with pytest.raises(ValueError):
        CostSpec("entropy", {(1, 2): 1.0})
    with pytest.raises(ValueError):
        CostSpec("energy", {(1, 2): 1.0}, final_time="sometimes")
    with pytest.raises(ValueError):
        CostSpec("energy", {(1, 2): 1.0}, final_time="free")
    with pytest.raises(KeyError):
        CostSpec("energy", {(1, 2): 1.0}).mu((2, 3))


def test_closed_forms_for_constant_control():
    mu = 2.0
    spec = {kind: CostSpec(kind, {(1, 2): mu},
                           "fixed" if kind == "energy" else "free")
            for kind in ("energy", "length", "area", "time-max")}
    ctrl = constant_control(0.5 + 0.5j, duration=2.0)
    amp = abs(0.5 + 0.5j)
    assert math.isclose(evaluate_cost(spec["energy"], ctrl),
                        (amp / mu) ** 2 * 2.0, rel_tol=1e-12)
    assert math.isclose(evaluate_cost(spec["length"], ctrl),
                        (amp / mu) * 2.0, rel_tol=1e-12)
    assert math.isclose(evaluate_cost(spec["area"], ctrl),
                        (amp / mu) * 2.0, rel_tol=1e-12)
    assert math.isclose(evaluate_cost(spec["time-max"], ctrl),
                        (amp / mu) * 2.0, rel_tol=1e-12)


def test_evaluate_all_costs_keys():
    out = evaluate_all_costs({(1, 2): 1.0}, constant_control(1.0))
    assert set(out) == {"energy", "length", "area", "time-max"}


def test_costs_depend_only_on_moduli():
    weights = {(1, 2): 1.0}
    a = constant_control(0.6)
    b = constant_control(0.6 * np.exp(1j * 1.234))
    costs_a = evaluate_all_costs(weights, a)
    costs_b = evaluate_all_costs(weights, b)
    for kind in costs_a:
        assert math.isclose(costs_a[kind], costs_b[kind], rel_tol=1e-14)


def test_constraint_set_membership():
    weights = {(1, 2): 1.0, (2, 3): 1.0}
    grid = TimeGrid(1.0, 1)
    ctrl = ControlGrid(grid, "H", 3, {(1, 2): np.array([0.8 + 0j]),
                                      (2, 3): np.array([0.7j])})
    # ellipsoid: 0.64 + 0.49 > 1; box: both below 1; cross-polytope: 1.5 > 1
    assert not in_constraint_set(CostSpec("energy", weights), ctrl, 0)
    assert not in_constraint_set(CostSpec("area", weights, "free"), ctrl, 0)
    assert in_constraint_set(CostSpec("time-max", weights, "free"), ctrl, 0)


def test_constant_speed_residual():
    spec = CostSpec("energy", {(1, 2): 1.0})
    assert constant_speed_residual(spec, constant_control(0.3)) <= 1e-15
    grid = TimeGrid(1.0, 4)
    ramp = ControlGrid(grid, "H", 2,
                       {(1, 2): np.array([0.1, 0.2, 0.3, 0.4], complex)})
    assert constant_speed_residual(spec, ramp) > 0.1
    with pytest.raises(ValueError):
        constant_speed_residual(CostSpec("area", {(1, 2): 1.0}, "free"),
                                constant_control(0.3))


@given(scale=st.floats(0.1, 10.0), amp=st.floats(0.01, 5.0),
       phase=st.floats(0.0, 2 * math.pi))
def test_costs_scale_homogeneously(scale, amp, phase):
    # energy is quadratic in the amplitude, the other families linear
    weights = {(1, 2): 1.0}
    base = evaluate_all_costs(weights, constant_control(amp * np.exp(1j * phase)))
    scaled = evaluate_all_costs(weights,
                                constant_control(scale * amp * np.exp(1j * phase)))
    assert math.isclose(scaled["energy"], scale ** 2 * base["energy"],
                        rel_tol=1e-9)
    for kind in ("length", "area", "time-max"):
        assert math.isclose(scaled[kind], scale * base[kind], rel_tol=1e-9)


def test_cost_spec_round_trip(tmp_path):
    spec = CostSpec("length", {(1, 2): 1.5, (2, 3): 0.5}, "free")
    path = tmp_path / "cost.json"
    save_cost_spec(spec, path)
    again = load_cost_spec(path)
    assert again.kind == "length"
    assert again.final_time == "free"
    assert again.weights == spec.weights


def test_for_system_uses_couplings():
    sysr = LevelSystem.create(2, edges=[(1, 2)], couplings=3.0)
    spec = CostSpec.for_system(sysr, "energy")
    assert spec.mu((1, 2)) == 3.0
