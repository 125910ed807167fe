"""Time grids, control grids and exact piecewise-constant propagation.

Controls are piecewise constant on a uniform grid: value index i applies on
[t_i, t_{i+1}).  Each propagation step is a matrix exponential of the frozen
generator, so every propagator is unitary (orthogonal for the real flavor)
by construction and norm conservation is structural, not a numerical
accident.

Three control flavors appear:

* ``"V"``   Hermitian control matrix for the drifted Schrodinger equation
            i dpsi/dt = (D + V) psi,
* ``"H"``   skew-Hermitian matrix for the driftless equation
            dpsi/dt = H psi (interaction picture),
* ``"U"``   real antisymmetric matrix for the reduced real equation
            drho/dt = U rho on S^{n-1}.

Only the (j, k) entry with j < k is stored per edge; the mirror entry is
implied by the flavor's symmetry rule, so the symmetry invariants hold by
construction for grids built in memory.  File loaders check redundant
entries and reject inconsistent ones.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import InvalidControlError
from .system import Edge, LevelSystem, canonical_edge

__all__ = [
    "TimeGrid",
    "ControlGrid",
    "StateTrajectory",
    "AdmissiblePair",
    "suggest_steps",
    "propagate_drift",
    "propagate_driftless",
    "propagate_real",
    "eliminate_drift",
    "restore_drift",
    "embed_real_control",
    "load_control",
    "save_control",
    "save_trajectory_csv",
]

NORM_TOL = 1e-9
RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid with nodes t_i = i*T/N, i = 0..N."""

    duration: float
    steps: int

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("final time must be positive")
        if self.steps < 1:
            raise ValueError("need at least one step")

    @property
    def dt(self) -> float:
        return self.duration / self.steps

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.duration, self.steps + 1)

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.steps) + 0.5) * self.dt


def suggest_steps(sys: LevelSystem, duration: float, max_control: float = 1.0,
                  resolution: float = 0.1) -> int:
    """Step count so that both max|E_j - E_k|*dt and max|control|*dt stay small."""
    gap = max((abs(sys.energies[j - 1] - sys.energies[k - 1])
               for j, k in sys.edges), default=0.0)
    rate = max(gap, max_control, 1e-12)
    return max(1, math.ceil(duration * rate / resolution))


@dataclass(frozen=True)
class ControlGrid:
    """Per-step, per-edge control values.

    values maps a canonical edge (j, k), j < k, to an array of length N
    (complex for flavors "V"/"H", real for "U").
    """

    grid: TimeGrid
    flavor: str
    n: int
    values: Mapping[Edge, np.ndarray]

    def __post_init__(self):
        if self.flavor not in ("V", "H", "U"):
            raise InvalidControlError(f"unknown control flavor {self.flavor!r}")
        for e, arr in self.values.items():
            if e != canonical_edge(*e):
                raise InvalidControlError(f"edge {e} not stored as (min, max)")
            if len(arr) != self.grid.steps:
                raise InvalidControlError(
                    f"edge {e}: {len(arr)} values for {self.grid.steps} steps")
            if self.flavor == "U" and np.iscomplexobj(arr) and np.any(arr.imag != 0):
                raise InvalidControlError(f"edge {e}: real-U control has imaginary part")

    @property
    def edges(self) -> tuple[Edge, ...]:
        return tuple(sorted(self.values))

    def check_bounds(self, sys: LevelSystem) -> None:
        for e, arr in self.values.items():
            b = sys.bound(e)
            if math.isfinite(b) and np.max(np.abs(arr)) > b * (1 + 1e-12):
                raise InvalidControlError(
                    f"edge {e}: control modulus exceeds bound {b}")

    def matrices(self) -> np.ndarray:
        """Assemble the (N, n, n) control matrices with the flavor's symmetry."""
        n, steps = self.n, self.grid.steps
        dtype = float if self.flavor == "U" else complex
        mats = np.zeros((steps, n, n), dtype=dtype)
        for (j, k), arr in self.values.items():
            a = np.asarray(arr, dtype=dtype)
            mats[:, j - 1, k - 1] = a
            if self.flavor == "V":
                mats[:, k - 1, j - 1] = np.conj(a)
            elif self.flavor == "H":
                mats[:, k - 1, j - 1] = -np.conj(a)
            else:
                mats[:, k - 1, j - 1] = -a
        return mats

    def map_values(self, fn) -> "ControlGrid":
        """New grid with values fn(edge, array); flavor and grid unchanged."""
        return ControlGrid(self.grid, self.flavor,
                           self.n, {e: fn(e, a) for e, a in self.values.items()})


@dataclass(frozen=True)
class StateTrajectory:
    """States at the grid nodes; complex psi or real rho, unit 2-norm."""

    grid: TimeGrid
    states: np.ndarray  # (N+1, n)
    flavor: str = "complex"

    @property
    def n(self) -> int:
        return self.states.shape[1]

    def moduli(self) -> np.ndarray:
        return np.abs(self.states)

    def populations(self) -> np.ndarray:
        return np.abs(self.states) ** 2

    def norm_drift(self) -> float:
        return float(np.max(np.abs(np.linalg.norm(self.states, axis=1) - 1.0)))

    def check_norms(self, tol: float = NORM_TOL) -> None:
        drift = self.norm_drift()
        if drift > tol:
            raise ValueError(f"trajectory norm drift {drift:.3e} exceeds {tol:.1e}")


@dataclass(frozen=True)
class AdmissiblePair:
    """A trajectory together with the control that generated it."""

    system: LevelSystem
    control: ControlGrid
    trajectory: StateTrajectory

    def residual(self) -> float:
        """Sup-norm mismatch between stored states and one-step propagation."""
        mats = _step_propagators(self.control, self.system)
        psi = self.trajectory.states
        pred = np.einsum("sij,sj->si", mats, psi[:-1])
        return float(np.max(np.abs(pred - psi[1:])))

    def check_admissible(self, tol: float = RESIDUAL_TOL) -> None:
        r = self.residual()
        if r > tol:
            raise ValueError(f"dynamics residual {r:.3e} exceeds {tol:.1e}")


def _expm_unitary(hermitian: np.ndarray, dt: float) -> np.ndarray:
    """exp(-i*A*dt) for a stack (N, n, n) of Hermitian A, via eigendecomposition."""
    w, q = np.linalg.eigh(hermitian)
    phases = np.exp(-1j * w * dt)
    return np.einsum("sij,sj,skj->sik", q, phases, q.conj())


def _step_propagators(ctrl: ControlGrid, sys: LevelSystem | None = None) -> np.ndarray:
    """One-step propagators for each flavor (drift needed only for "V")."""
    dt = ctrl.grid.dt
    mats = ctrl.matrices()
    if ctrl.flavor == "V":
        if sys is None:
            raise InvalidControlError("hermitian-V propagation needs the system drift")
        return _expm_unitary(mats + sys.drift, dt)
    if ctrl.flavor == "H":
        return _expm_unitary(1j * mats, dt)  # H = -i(iH), iH Hermitian
    props = _expm_unitary(1j * mats.astype(complex), dt)
    return props.real


def _propagate(props: np.ndarray, psi0: np.ndarray) -> np.ndarray:
    states = np.empty((props.shape[0] + 1, psi0.shape[0]), dtype=props.dtype)
    states[0] = psi0
    for i in range(props.shape[0]):
        states[i + 1] = props[i] @ states[i]
    return states


def _require_unit(psi0: np.ndarray) -> np.ndarray:
    psi0 = np.asarray(psi0)
    if abs(np.linalg.norm(psi0) - 1.0) > 1e-9:
        raise ValueError("initial state must have unit norm")
    return psi0


def propagate_drift(sys: LevelSystem, ctrl: ControlGrid, psi0) -> StateTrajectory:
    """Propagate i dpsi/dt = (D + V) psi with piecewise-constant Hermitian V."""
    if ctrl.flavor != "V":
        raise InvalidControlError("propagate_drift expects the hermitian-V flavor")
    ctrl.check_bounds(sys)
    psi0 = _require_unit(np.asarray(psi0, dtype=complex))
    props = _step_propagators(ctrl, sys)
    return StateTrajectory(ctrl.grid, _propagate(props, psi0), "complex")


def propagate_driftless(ctrl: ControlGrid, psi0) -> StateTrajectory:
    """Propagate dpsi/dt = H psi with piecewise-constant skew-Hermitian H."""
    if ctrl.flavor != "H":
        raise InvalidControlError("propagate_driftless expects the skew-H flavor")
    psi0 = _require_unit(np.asarray(psi0, dtype=complex))
    props = _step_propagators(ctrl)
    return StateTrajectory(ctrl.grid, _propagate(props, psi0), "complex")


def propagate_real(ctrl: ControlGrid, rho0) -> StateTrajectory:
    """Propagate drho/dt = U rho: rotation steps on the real sphere S^{n-1}."""
    if ctrl.flavor != "U":
        raise InvalidControlError("propagate_real expects the real-U flavor")
    rho0 = _require_unit(np.asarray(rho0, dtype=float))
    props = _step_propagators(ctrl)
    return StateTrajectory(ctrl.grid, _propagate(props, rho0), "real")


def _drift_phases(sys: LevelSystem, grid: TimeGrid, edge: Edge) -> np.ndarray:
    """exp(i[(E_k - E_j) t_mid + pi/2]) at the step midpoints of the edge (j, k).

    Midpoint sampling keeps the discrete interaction-picture transform
    second-order accurate against the discrete propagation.
    """
    j, k = edge
    omega = sys.energies[k - 1] - sys.energies[j - 1]
    return np.exp(1j * (omega * grid.midpoints + math.pi / 2))


def eliminate_drift(sys: LevelSystem, ctrl: ControlGrid) -> ControlGrid:
    """Interaction-picture transform: hermitian-V control -> skew-H control.

    H_{j,k}(t_i) = V_{j,k}(t_i) * exp(-i[(E_k - E_j) t_mid + pi/2]); the
    original control is recovered exactly by restore_drift on the same grid.
    """
    if ctrl.flavor != "V":
        raise InvalidControlError("eliminate_drift expects the hermitian-V flavor")
    return ControlGrid(ctrl.grid, "H", ctrl.n, {
        e: np.asarray(a, dtype=complex) / _drift_phases(sys, ctrl.grid, e)
        for e, a in ctrl.values.items()
    })


def restore_drift(sys: LevelSystem, ctrl: ControlGrid) -> ControlGrid:
    """Exact inverse of eliminate_drift on the same grid."""
    if ctrl.flavor != "H":
        raise InvalidControlError("restore_drift expects the skew-H flavor")
    return ControlGrid(ctrl.grid, "V", ctrl.n, {
        e: np.asarray(a, dtype=complex) * _drift_phases(sys, ctrl.grid, e)
        for e, a in ctrl.values.items()
    })


def embed_real_control(ctrl: ControlGrid) -> ControlGrid:
    """View a real-U control as a skew-H control (same matrices)."""
    if ctrl.flavor != "U":
        raise InvalidControlError("embed_real_control expects the real-U flavor")
    return ControlGrid(ctrl.grid, "H", ctrl.n,
                       {e: np.asarray(a, dtype=complex) for e, a in ctrl.values.items()})


def load_control(path) -> ControlGrid:
    """Read {"T","N","flavor","values": {"j,k": [[re, im], ...]}}.

    Entries may appear in either orientation; redundant mirror entries must
    be consistent with the flavor's symmetry rule.
    """
    with open(path) as fh:
        data = json.load(fh)
    grid = TimeGrid(float(data["T"]), int(data["N"]))
    flavor = data["flavor"]
    n = int(data.get("n", 0))
    values: dict[Edge, np.ndarray] = {}
    for key, rows in data["values"].items():
        j, k = (int(x) for x in key.split(","))
        arr = np.array([complex(re, im) for re, im in rows])
        if not np.all(np.isfinite(arr.real)) or not np.all(np.isfinite(arr.imag)):
            raise InvalidControlError(f"edge {key}: non-finite control value")
        e = canonical_edge(j, k)
        if j > k:  # mirror entry: map back to the stored orientation
            if flavor == "V":
                arr = np.conj(arr)
            elif flavor == "H":
                arr = -np.conj(arr)
            else:
                arr = -arr
        if e in values:
            if not np.allclose(values[e], arr, atol=1e-12):
                rule = {"V": "Hermitian", "H": "skew-Hermitian", "U": "antisymmetric"}[flavor]
                raise InvalidControlError(
                    f"edge {key}: redundant entry breaks the {rule} symmetry")
        else:
            values[e] = arr
        n = max(n, j, k)
    if flavor == "U":
        for e in values:
            if np.any(np.abs(values[e].imag) > 0):
                raise InvalidControlError(f"edge {e}: real-U control has imaginary part")
            values[e] = values[e].real
    return ControlGrid(grid, flavor, n, values)


def save_control(ctrl: ControlGrid, path) -> None:
    data = {
        "T": ctrl.grid.duration,
        "N": ctrl.grid.steps,
        "flavor": ctrl.flavor,
        "n": ctrl.n,
        "values": {
            f"{j},{k}": [[float(np.real(v)), float(np.imag(v))] for v in arr]
            for (j, k), arr in sorted(ctrl.values.items())
        },
    }
    with open(path, "w") as fh:
        json.dump(data, fh)
        fh.write("\n")


def save_trajectory_csv(traj: StateTrajectory, path) -> None:
    """Columns: t, Re psi_1, Im psi_1, ..., |psi_1|^2, ..."""
    n = traj.n
    header = ["t"]
    for j in range(1, n + 1):
        header += [f"re_psi_{j}", f"im_psi_{j}"]
    header += [f"pop_{j}" for j in range(1, n + 1)]
    nodes = traj.grid.nodes
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, t in enumerate(nodes):
            row = [repr(float(t))]
            for j in range(n):
                z = complex(traj.states[i, j])
                row += [repr(z.real), repr(z.imag)]
            row += [repr(abs(complex(traj.states[i, j])) ** 2) for j in range(n)]
            w.writerow(row)
