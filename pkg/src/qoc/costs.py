"""Cost functionals on control moduli and their constraint-set equivalents.

All four families depend only on the moduli of the controls, so any flavor
of control grid can be evaluated.  Integrals are left-endpoint Riemann sums,
which are exact for piecewise-constant controls.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .dynamics import ControlGrid
from .system import Edge, LevelSystem, canonical_edge

__all__ = [
    "COST_KINDS",
    "CostSpec",
    "evaluate_cost",
    "evaluate_all_costs",
    "in_constraint_set",
    "constant_speed_residual",
    "load_cost_spec",
    "save_cost_spec",
]

COST_KINDS = ("energy", "length", "area", "time-max")


@dataclass(frozen=True)
class CostSpec:
    """Cost family, per-edge weights mu and the final-time mode.

    The energy integrand is sum |c_e|^2 / mu_e^2; length its square root;
    area is sum |c_e| / mu_e; time-max is max_e |c_e| / mu_e.
    """

    kind: str
    weights: Mapping[Edge, float]
    final_time: str = "fixed"

    def __post_init__(self):
        if self.kind not in COST_KINDS:
            raise ValueError(f"unknown cost kind {self.kind!r}")
        if self.final_time not in ("fixed", "free"):
            raise ValueError("final_time must be 'fixed' or 'free'")
        if self.kind == "energy" and self.final_time == "free":
            # no minimizers exist with free final time for the energy cost
            raise ValueError("the energy cost requires a fixed final time")

    @staticmethod
    def for_system(sys: LevelSystem, kind: str, final_time: str = "fixed") -> "CostSpec":
        return CostSpec(kind, dict(sys.couplings), final_time)

    def mu(self, edge: Edge) -> float:
        e = canonical_edge(*edge)
        if e not in self.weights:
            raise KeyError(f"missing weight for edge {e}")
        return self.weights[e]


def _scaled_moduli(spec: CostSpec, ctrl: ControlGrid) -> np.ndarray:
    """|c_e(t_i)| / mu_e, shape (edges, steps)."""
    rows = []
    for e in ctrl.edges:
        rows.append(np.abs(np.asarray(ctrl.values[e])) / spec.mu(e))
    if not rows:
        return np.zeros((0, ctrl.grid.steps))
    return np.vstack(rows)


def _integrand(spec: CostSpec, ctrl: ControlGrid) -> np.ndarray:
    m = _scaled_moduli(spec, ctrl)
    if spec.kind == "energy":
        return np.sum(m ** 2, axis=0)
    if spec.kind == "length":
        return np.sqrt(np.sum(m ** 2, axis=0))
    if spec.kind == "area":
        return np.sum(m, axis=0)
    return np.max(m, axis=0) if m.size else np.zeros(ctrl.grid.steps)


def evaluate_cost(spec: CostSpec, ctrl: ControlGrid) -> float:
    """Left-endpoint Riemann sum of the cost integrand over the grid."""
    return float(np.sum(_integrand(spec, ctrl)) * ctrl.grid.dt)


def evaluate_all_costs(weights: Mapping[Edge, float], ctrl: ControlGrid) -> dict:
    """All four cost values for the same weights (time-max reported as the
    integral of the max-modulus integrand)."""
    out = {}
    for kind in COST_KINDS:
        spec = CostSpec(kind, weights, "fixed" if kind == "energy" else "free")
        out[kind] = evaluate_cost(spec, ctrl)
    return out


def in_constraint_set(spec: CostSpec, ctrl: ControlGrid, step: int) -> bool:
    """Membership of the step's control in the equivalent time-minimization set.

    energy and length map to the ellipsoid sum |c|^2/mu^2 <= 1, area to the
    cross-polytope sum |c|/mu <= 1, time-max to the box |c| <= mu.
    """
    m = _scaled_moduli(spec, ctrl)[:, step] if ctrl.edges else np.zeros(0)
    if spec.kind in ("energy", "length"):
        return bool(np.sum(m ** 2) <= 1.0)
    if spec.kind == "area":
        return bool(np.sum(m) <= 1.0)
    return bool(m.size == 0 or np.max(m) <= 1.0)


def constant_speed_residual(spec: CostSpec, ctrl: ControlGrid) -> float:
    """Relative deviation of the energy integrand from its mean over steps."""
    if spec.kind != "energy":
        raise ValueError("constant-speed residual is defined for the energy cost")
    speed = _integrand(spec, ctrl)
    mean = float(np.mean(speed))
    return float(np.max(np.abs(speed - mean)) / max(mean, 1e-15))


def load_cost_spec(path) -> CostSpec:
    with open(path) as fh:
        data = json.load(fh)
    weights = {canonical_edge(*(int(x) for x in key.split(","))): float(v)
               for key, v in data["weights"].items()}
    return CostSpec(data["kind"], weights, data.get("final_time", "fixed"))


def save_cost_spec(spec: CostSpec, path) -> None:
    data = {
        "kind": spec.kind,
        "weights": {f"{j},{k}": v for (j, k), v in sorted(spec.weights.items())},
        "final_time": spec.final_time,
    }
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")
