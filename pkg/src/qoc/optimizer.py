"""Direct-transcription solver for the reduced real problem, PMP residual
evaluation and the zero-pattern machinery for ruling out strict abnormality.

The decision variables are the per-edge real controls on the grid steps.
Dynamics are enforced by exact rotation steps; the endpoint condition on the
populations is handled with an augmented-Lagrangian penalty whose gradients
come from a discrete adjoint sweep through the transposed step
linearizations.  The adjoint of each matrix-exponential step uses the
eigenvalue divided-difference (Daleckii-Krein) form, so the gradient matches
finite differences to machine precision at every step size.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .costs import CostSpec
from .dynamics import AdmissiblePair, ControlGrid, StateTrajectory, TimeGrid
from .errors import (ConvergenceError, MixedWindowError, NotControllableError,
                     WindowNotFoundError)
from .system import BoundarySpec, Edge, LevelSystem, is_controllable

__all__ = [
    "SolveOptions",
    "PenaltyState",
    "PMPLift",
    "SolveResult",
    "IndexPartition",
    "solve_reduced",
    "adjoint_gradient",
    "pmp_residual",
    "abnormal_covector_probe",
    "partition_indexes",
    "find_clean_window",
    "spanning_tree",
    "distribution_rank",
    "classify_extremal",
]

_ABNORMAL_TOL = 1e-7
_RANK_TOL = 1e-9


@dataclass(frozen=True)
class SolveOptions:
    grid: TimeGrid
    max_outer: int = 30
    max_inner: int = 400
    gradient_tol: float = 1e-7
    endpoint_tol: float = 1e-8
    penalty_init: float = 10.0
    penalty_factor: float = 10.0
    penalty_max: float = 1e6  # larger weights make the inner solves ill-conditioned
    seed: int = 0
    restarts: int = 8
    time_tol: float = 1e-4  # bisection width for free-final-time problems

    def __post_init__(self):
        if self.gradient_tol <= 0 or self.endpoint_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class PenaltyState:
    """Augmented-Lagrangian state for the endpoint population constraint.

    The constraint rho_j(T)^2 = a_j has a vanishing gradient wherever
    a_j is 0 or 1, which makes its multiplier diverge.  The penalty is
    therefore written on the state itself against the nearest admissible
    sign pattern, c = rho(T) - signs * sqrt(a); the signs are refreshed
    between outer iterations and the multipliers follow them.
    """

    target: np.ndarray          # populations a_j, sum 1
    signs: np.ndarray           # +-1 per level, the current target branch
    multipliers: np.ndarray     # one per level
    weight: float

    @staticmethod
    def fresh(target: np.ndarray, weight: float) -> "PenaltyState":
        target = np.asarray(target, dtype=float)
        return PenaltyState(target, np.ones_like(target),
                            np.zeros_like(target), float(weight))

    @property
    def anchor(self) -> np.ndarray:
        return self.signs * np.sqrt(self.target)

    def refreshed(self, rho_end: np.ndarray) -> "PenaltyState":
        """Re-anchor to the endpoint's sign pattern, flipping multipliers."""
        new = np.where((self.target > 0) & (np.abs(rho_end) > 1e-12),
                       np.sign(rho_end), self.signs)
        flip = new / self.signs
        return PenaltyState(self.target, new, self.multipliers * flip,
                            self.weight)


@dataclass(frozen=True)
class PMPLift:
    """Covector history with multiplier and per-step Hamiltonian values."""

    p0: float
    covectors: np.ndarray       # (N+1, n)
    hamiltonian: np.ndarray     # (N,)
    flags: dict = field(default_factory=dict)

    def never_vanishing(self, tol: float = 1e-12) -> bool:
        if abs(self.p0) > tol:
            return True
        return bool(np.min(np.linalg.norm(self.covectors, axis=1)) > tol)


@dataclass(frozen=True)
class SolveResult:
    pair: AdmissiblePair
    lift: PMPLift
    cost: float
    endpoint_violation: float
    info: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# step linearizations


def _edge_matrix(n: int, edge: Edge) -> np.ndarray:
    j, k = edge[0] - 1, edge[1] - 1
    e = np.zeros((n, n))
    e[j, k] = 1.0
    e[k, j] = -1.0
    return e


def _generators(n: int, edges: Sequence[Edge], u: np.ndarray) -> np.ndarray:
    """Stack of antisymmetric generators A_i = sum_e u[e, i] E_e, shape (N, n, n)."""
    mats = np.zeros((u.shape[1], n, n))
    for idx, (j, k) in enumerate(edges):
        mats[:, j - 1, k - 1] = u[idx]
        mats[:, k - 1, j - 1] = -u[idx]
    return mats


def _phi1(delta: np.ndarray) -> np.ndarray:
    """(exp(delta) - 1) / delta with the removable singularity filled in."""
    small = np.abs(delta) < 1e-6
    safe = np.where(small, 1.0, delta)
    out = (np.exp(safe) - 1.0) / safe
    series = 1.0 + delta / 2.0 + delta * delta / 6.0
    return np.where(small, series, out)


class _StepLinearization:
    """Rotation steps exp(A_i dt) with exact directional derivatives."""

    def __init__(self, n: int, edges: Sequence[Edge], u: np.ndarray, dt: float):
        self.n, self.edges, self.dt = n, tuple(edges), dt
        mats = _generators(n, edges, u)
        w, q = np.linalg.eigh(1j * mats)      # i*A is Hermitian
        self.lam = -1j * w * dt               # eigenvalues of A*dt
        self.q = q
        expl = np.exp(self.lam)
        self.props = np.einsum("sab,sb,scb->sac", q, expl, q.conj()).real
        delta = self.lam[:, :, None] - self.lam[:, None, :]
        self.kernel = expl[:, None, :] * _phi1(delta)   # K_ab, per step

    def propagate(self, x0: np.ndarray) -> np.ndarray:
        out = np.empty((self.props.shape[0] + 1, self.n))
        out[0] = x0
        for i in range(self.props.shape[0]):
            out[i + 1] = self.props[i] @ out[i]
        return out

    def half_props(self) -> np.ndarray:
        """exp(A_i dt/2): propagators from each step's left node to its
        midpoint; the costate uses the same ones (dP/dt = A P as well)."""
        expl = np.exp(0.5 * self.lam)
        return np.einsum("sab,sb,scb->sac", self.q, expl, self.q.conj()).real

    def backward(self, p_final: np.ndarray) -> np.ndarray:
        out = np.empty((self.props.shape[0] + 1, self.n))
        out[-1] = p_final
        for i in range(self.props.shape[0] - 1, -1, -1):
            out[i] = self.props[i].T @ out[i + 1]
        return out

    def direction_terms(self, rho: np.ndarray, costate: np.ndarray) -> np.ndarray:
        """g[e, i] = costate[i+1]^T d(exp(A_i dt))/du_e rho[i], all edges/steps."""
        c = np.einsum("sab,sa->sb", self.q, costate[1:])        # Q^T p
        d = np.einsum("sab,sa->sb", self.q.conj(), rho[:-1])    # Q^dagger rho
        m1 = c[:, :, None] * self.kernel * d[:, None, :]
        out = np.empty((len(self.edges), self.props.shape[0]))
        for idx, (j, k) in enumerate(self.edges):
            qj = self.q[:, j - 1, :]
            qk = self.q[:, k - 1, :]
            w = (qj.conj()[:, :, None] * qk[:, None, :]
                 - qk.conj()[:, :, None] * qj[:, None, :])
            out[idx] = np.einsum("sab,sab->s", w, m1).real * self.dt
        return out


# ---------------------------------------------------------------------------
# objective


def _running_cost(spec: CostSpec | None, mu: np.ndarray, u: np.ndarray,
                  dt: float) -> tuple[float, np.ndarray]:
    """Integrated cost and its gradient in the control values; spec None
    means a pure feasibility problem (zero cost)."""
    if spec is None:
        return 0.0, np.zeros_like(u)
    scaled = u / mu[:, None]
    if spec.kind == "energy":
        return float(np.sum(scaled ** 2) * dt), 2.0 * dt * u / (mu ** 2)[:, None]
    if spec.kind == "area":
        return float(np.sum(np.abs(scaled)) * dt), dt * np.sign(u) / mu[:, None]
    if spec.kind == "length":
        speed = np.sqrt(np.sum(scaled ** 2, axis=0))
        grad = np.where(speed > 1e-12,
                        u / (mu ** 2)[:, None] / np.maximum(speed, 1e-12), 0.0) * dt
        return float(np.sum(speed) * dt), grad
    # time-max: the transcription only solves box-bounded feasibility, the
    # horizon itself is driven by the outer bisection
    return 0.0, np.zeros_like(u)


def _objective(sys: LevelSystem, spec: CostSpec | None, edges: Sequence[Edge],
               grid: TimeGrid, rho0: np.ndarray, penalty: PenaltyState,
               u: np.ndarray):
    """Value, gradient (edges, steps), trajectory and endpoint defect."""
    mu = np.array([sys.mu(e) for e in edges])
    lin = _StepLinearization(sys.n, edges, u, grid.dt)
    rho = lin.propagate(rho0)
    defect = rho[-1] - penalty.anchor
    cost, grad = _running_cost(spec, mu, u, grid.dt)
    value = (cost + float(penalty.multipliers @ defect)
             + 0.5 * penalty.weight * float(defect @ defect))
    p_final = penalty.multipliers + penalty.weight * defect
    costate = lin.backward(p_final)
    grad = grad + lin.direction_terms(rho, costate)
    return value, grad, rho, defect, costate


def adjoint_gradient(sys: LevelSystem, spec: CostSpec | None,
                     pair: AdmissiblePair, penalty: PenaltyState) -> dict:
    """Gradient of discretized cost plus endpoint penalty w.r.t. each control.

    Returns {edge: array over steps}; matches central finite differences.
    """
    edges = pair.control.edges
    u = np.vstack([np.real(pair.control.values[e]) for e in edges])
    _, grad, _, _, _ = _objective(sys, spec, edges, pair.control.grid,
                                  np.real(pair.trajectory.states[0]), penalty, u)
    return {e: grad[i] for i, e in enumerate(edges)}


# ---------------------------------------------------------------------------
# solver


def _box_bounds(sys: LevelSystem, spec: CostSpec | None,
                edges: Sequence[Edge], steps: int):
    """L-BFGS-B bounds from the system's modulus bounds (and the time-max box)."""
    caps = []
    for e in edges:
        cap = sys.bound(e)
        if spec is not None and spec.kind == "time-max":
            cap = min(cap, spec.mu(e))
        caps.append(cap)
    if all(math.isinf(c) for c in caps):
        return None
    out = []
    for c in caps:
        lim = None if math.isinf(c) else c
        out.extend([(-lim if lim else None, lim)] * steps)
    return out


def _single_start(sys, spec, edges, grid, rho0, target, opts, u_init):
    penalty = PenaltyState.fresh(target, opts.penalty_init)
    u = u_init.copy()
    shape = u.shape
    history = []
    for outer in range(opts.max_outer):
        def fun(x):
            value, grad, _, _, _ = _objective(
                sys, spec, edges, grid, rho0, penalty, x.reshape(shape))
            return value, grad.ravel()

        res = minimize(fun, u.ravel(), jac=True, method="L-BFGS-B",
                       bounds=_box_bounds(sys, spec, edges, grid.steps),
                       options={"maxiter": opts.max_inner, "ftol": 1e-18,
                                "gtol": min(1e-12, opts.gradient_tol / 10),
                                "maxls": 60})
        u = res.x.reshape(shape)
        value, grad, rho, defect, costate = _objective(
            sys, spec, edges, grid, rho0, penalty, u)
        gnorm = float(np.max(np.abs(grad)))
        violation = float(np.max(np.abs(rho[-1] ** 2 - penalty.target)))
        history.append((outer, violation, gnorm))
        if violation <= opts.endpoint_tol and gnorm <= opts.gradient_tol:
            break
        penalty = penalty.refreshed(rho[-1])
        defect = rho[-1] - penalty.anchor
        penalty = PenaltyState(penalty.target, penalty.signs,
                               penalty.multipliers + penalty.weight * defect,
                               min(penalty.weight * opts.penalty_factor,
                                   opts.penalty_max))
    mu = np.array([sys.mu(e) for e in edges])
    cost, _ = _running_cost(spec, mu, u, grid.dt)
    return {"u": u, "rho": rho, "costate": costate, "cost": cost,
            "violation": violation, "gnorm": gnorm, "outer": history}


def _initial_controls(rng, n_edges, steps, duration, attempt):
    if attempt == 0:
        return np.zeros((n_edges, steps))
    scale = (math.pi / duration) * (0.5 + rng.random())
    return rng.standard_normal((n_edges, steps)) * scale / math.sqrt(steps)


def _worker_count(restarts: int) -> int:
    cap = os.environ.get("QOC_THREADS")
    try:
        cap = max(1, int(cap)) if cap else 1
    except ValueError:
        cap = 1
    return min(cap, restarts)


def _multi_start(sys, spec, edges, grid, rho0, target, opts):
    rng = np.random.default_rng(opts.seed)
    inits = [_initial_controls(rng, len(edges), grid.steps, grid.duration, a)
             for a in range(max(1, opts.restarts))]
    workers = _worker_count(len(inits))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(
                lambda u0: _single_start(sys, spec, edges, grid, rho0, target,
                                         opts, u0), inits))
    else:
        results = [_single_start(sys, spec, edges, grid, rho0, target, opts, u0)
                   for u0 in inits]
    feasible = [r for r in results if r["violation"] <= opts.endpoint_tol]
    pool_ = feasible or results
    key = (lambda r: r["cost"]) if feasible else (lambda r: r["violation"])
    return min(pool_, key=key), bool(feasible)


def _build_pair(sys, edges, grid, u, rho) -> AdmissiblePair:
    ctrl = ControlGrid(grid, "U", sys.n, {e: u[i].copy() for i, e in enumerate(edges)})
    return AdmissiblePair(sys, ctrl, StateTrajectory(grid, rho.copy(), "real"))


def _edge_pairings(P: np.ndarray, rho: np.ndarray, edges) -> np.ndarray:
    """phi[e, i] = <P_i, F_e(rho_i)> for aligned covector/state samples."""
    out = np.empty((len(edges), rho.shape[0]))
    for idx, (j, k) in enumerate(edges):
        out[idx] = (P[:, j - 1] * rho[:, k - 1]
                    - P[:, k - 1] * rho[:, j - 1])
    return out


def _assemble_lift(sys, spec, edges, grid, u, rho, costate) -> PMPLift:
    P = -costate  # PMP covector is the negated descent adjoint
    mu = np.array([sys.mu(e) for e in edges])
    phi = _edge_pairings(P[:-1], rho[:-1], edges)
    ham = np.sum(u * phi, axis=0)
    if spec is not None:
        if spec.kind == "energy":
            ham = ham - np.sum((u / mu[:, None]) ** 2, axis=0)
        elif spec.kind == "area":
            ham = ham - np.sum(np.abs(u) / mu[:, None], axis=0)
        elif spec.kind == "length":
            ham = ham - np.sqrt(np.sum((u / mu[:, None]) ** 2, axis=0))
        else:
            ham = ham - np.max(np.abs(u) / mu[:, None], axis=0)
    probe = abnormal_covector_probe(_build_pair(sys, edges, grid, u, rho))
    return PMPLift(-1.0, P, ham,
                   flags={"normal_candidate": True,
                          "abnormal_candidate": probe["kernel"],
                          "abnormal_singular_ratio": probe["ratio"]})


def solve_reduced(sys: LevelSystem, spec: CostSpec, source: BoundarySpec,
                  target: BoundarySpec, opts: SolveOptions) -> SolveResult:
    """Solve the reduced real problem between two population boundary points.

    For the time-max cost with a free final time, bisects on the horizon
    over feasibility of the box-constrained fixed-time problem; otherwise
    runs the augmented-Lagrangian transcription at the given grid.

    Raises NotControllableError for a disconnected graph and
    ConvergenceError (carrying the best iterate) when tolerances are not met.
    """
    if not is_controllable(sys):
        raise NotControllableError("coupling graph is disconnected")
    a_src = source.populations(sys.n)
    a_tgt = target.populations(sys.n)
    rho0 = np.sqrt(a_src)
    edges = sys.edges
    if spec.kind == "time-max" and spec.final_time == "free":
        return _min_time_bisection(sys, spec, edges, rho0, a_tgt, opts)

    best, feasible = _multi_start(sys, spec, edges, opts.grid, rho0, a_tgt, opts)
    pair = _build_pair(sys, edges, opts.grid, best["u"], best["rho"])
    lift = _assemble_lift(sys, spec, edges, opts.grid, best["u"], best["rho"],
                          best["costate"])
    result = SolveResult(pair, lift, best["cost"], best["violation"],
                         info={"gradient_norm": best["gnorm"],
                               "outer_iterations": best["outer"]})
    if not feasible or best["gnorm"] > opts.gradient_tol:
        raise ConvergenceError(
            f"solver stopped at endpoint violation {best['violation']:.3e}, "
            f"gradient norm {best['gnorm']:.3e}", best=result)
    return result


def _min_time_bisection(sys, spec, edges, rho0, a_tgt, opts) -> SolveResult:
    steps = opts.grid.steps

    def attempt(duration):
        grid = TimeGrid(duration, steps)
        best, feasible = _multi_start(sys, spec, edges, grid, rho0, a_tgt, opts)
        return best, feasible, grid

    lo, hi = 0.0, opts.grid.duration
    best, feasible, grid = attempt(hi)
    doublings = 0
    while not feasible and doublings < 12:
        lo, hi = hi, hi * 2.0
        best, feasible, grid = attempt(hi)
        doublings += 1
    if not feasible:
        pair = _build_pair(sys, edges, grid, best["u"], best["rho"])
        lift = _assemble_lift(sys, spec, edges, grid, best["u"], best["rho"],
                              best["costate"])
        raise ConvergenceError(
            "no feasible horizon found for the bounded-control problem",
            best=SolveResult(pair, lift, hi, best["violation"]))
    while hi - lo > opts.time_tol:
        mid = 0.5 * (lo + hi)
        cand, ok, cand_grid = attempt(mid)
        if ok:
            hi, best, grid = mid, cand, cand_grid
        else:
            lo = mid
    pair = _build_pair(sys, edges, grid, best["u"], best["rho"])
    lift = _assemble_lift(sys, spec, edges, grid, best["u"], best["rho"],
                          best["costate"])
    return SolveResult(pair, lift, grid.duration, best["violation"],
                       info={"minimal_time": grid.duration,
                             "bracket": (lo, hi)})


# ---------------------------------------------------------------------------
# PMP residuals


def _maximality_gap(spec: CostSpec, mu, p0, phi, u) -> float:
    """max over steps of H_M(rho, P) - H(rho, P, u)."""
    scaled = u / mu[:, None]
    drive = np.sum(u * phi, axis=0)
    if spec.kind == "energy":
        if p0 >= 0:
            return float(np.max(np.abs(phi)))  # abnormal: sup finite iff phi = 0
        hm = np.sum((mu[:, None] * phi) ** 2, axis=0) / (-4.0 * p0)
        h = drive + p0 * np.sum(scaled ** 2, axis=0)
        return float(np.max(hm - h))
    if spec.kind == "time-max":
        hm = np.maximum(0.0, np.sum(mu[:, None] * np.abs(phi), axis=0) + p0)
        h = drive + p0 * np.max(np.abs(scaled), axis=0)
        return float(np.max(hm - h))
    # area / length: the supremum is 0 under dual feasibility, +inf otherwise;
    # report the dual feasibility violation plus the shortfall of H below 0.
    if spec.kind == "area":
        dual = np.max(mu[:, None] * np.abs(phi), axis=0)
        h = drive + p0 * np.sum(np.abs(scaled), axis=0)
    else:
        dual = np.sqrt(np.sum((mu[:, None] * phi) ** 2, axis=0))
        h = drive + p0 * np.sqrt(np.sum(scaled ** 2, axis=0))
    infeas = np.maximum(0.0, dual - abs(p0))
    return float(np.max(np.maximum(infeas, -h)))


def _boundary_tangent_defect(boundary: BoundarySpec | None, P_end: np.ndarray,
                             rho_end: np.ndarray):
    """Transversality defect against the boundary set's tangent directions.

    Population points and eigenstates are isolated points of the moduli
    simplex, so their tangent space is trivial and the defect vanishes;
    genuine moduli sets are flagged for the caller rather than evaluated.
    """
    if boundary is None or boundary.kind in ("moduli-point", "eigenstate"):
        return 0.0
    return None


def pmp_residual(pair: AdmissiblePair, lift: PMPLift, spec: CostSpec,
                 source: BoundarySpec | None = None,
                 target: BoundarySpec | None = None) -> dict:
    """Residual report for the PMP conditions along a real admissible pair.

    Keys: state_residual, costate_residual, maximality_gap,
    hamiltonian_constancy (stdev/|mean|), transversality (per endpoint,
    None marks a flagged-but-not-evaluated set boundary).
    """
    edges = pair.control.edges
    grid = pair.control.grid
    u = np.vstack([np.real(pair.control.values[e]) for e in edges])
    rho = np.real(pair.trajectory.states)
    P = lift.covectors
    if P.shape != rho.shape:
        raise ValueError(
            f"lift dimensions {P.shape} do not match the trajectory {rho.shape}")
    lin = _StepLinearization(pair.system.n, edges, u, grid.dt)
    state_res = float(np.max(np.abs(
        np.einsum("sij,sj->si", lin.props, rho[:-1]) - rho[1:])))
    costate_res = float(np.max(np.abs(
        np.einsum("sij,sj->si", lin.props, P[:-1]) - P[1:])))
    mu = np.array([pair.system.mu(e) for e in edges])
    # the discrete optimal control matches the pairing averaged over each
    # step; sampling at the step midpoint keeps the gap free of the O(dt^2)
    # left-endpoint artifact
    half = lin.half_props()
    phi = _edge_pairings(np.einsum("sij,sj->si", half, P[:-1]),
                         np.einsum("sij,sj->si", half, rho[:-1]), edges)
    gap = _maximality_gap(spec, mu, lift.p0, phi, u)
    ham = lift.hamiltonian
    mean = float(np.mean(ham))
    constancy = float(np.std(ham) / max(abs(mean), 1e-15))
    return {
        "state_residual": state_res,
        "costate_residual": costate_res,
        "maximality_gap": gap,
        "hamiltonian_constancy": constancy,
        "hamiltonian_mean": mean,
        "transversality": {
            "source": _boundary_tangent_defect(source, P[0], rho[0]),
            "target": _boundary_tangent_defect(target, P[-1], rho[-1]),
        },
    }


def abnormal_covector_probe(pair: AdmissiblePair, tol: float = _ABNORMAL_TOL) -> dict:
    """Least-squares probe for a nonvanishing covector annihilating every
    control direction along the trajectory (the p0 = 0 maximality condition).

    Returns {"kernel": bool, "ratio": smallest/largest singular value} of the
    stacked constraints on P(0).
    """
    edges = pair.control.edges
    u = np.vstack([np.real(pair.control.values[e]) for e in edges])
    rho = np.real(pair.trajectory.states)
    lin = _StepLinearization(pair.system.n, edges, u, pair.control.grid.dt)
    # the radial covector P = c*rho annihilates every control field but is
    # pure gauge on the sphere, so pin P(0) to the cotangent space
    rows = [rho[0].copy()]
    transport = np.eye(pair.system.n)
    for i in range(rho.shape[0] - 1):
        for j, k in edges:
            f = np.zeros(pair.system.n)
            f[j - 1] = rho[i, k - 1]
            f[k - 1] = -rho[i, j - 1]
            rows.append(transport.T @ f)
        transport = lin.props[i] @ transport
    s = np.linalg.svd(np.array(rows), compute_uv=False)
    ratio = float(s[-1] / s[0]) if s[0] > 0 else 0.0
    return {"kernel": ratio <= tol, "ratio": ratio}


# ---------------------------------------------------------------------------
# index partitions and the invariant manifold


@dataclass(frozen=True)
class IndexPartition:
    """Zero/nonzero split of the coordinates on a clean window.

    window holds node indices (i1, i2); vanishing lists the coordinates in
    I, classes the edge-connectivity classes of the nonvanishing set J, and
    radii the per-class norms at the window's left end.
    """

    window: tuple[int, int]
    times: tuple[float, float]
    vanishing: tuple[int, ...]
    classes: tuple[tuple[int, ...], ...]
    radii: tuple[float, ...]
    eps: float

    @property
    def nonvanishing(self) -> tuple[int, ...]:
        return tuple(sorted(j for c in self.classes for j in c))

    @property
    def cardinalities(self) -> tuple[int, ...]:
        return tuple(len(c) for c in self.classes)

    @property
    def offsets(self) -> tuple[int, ...]:
        """Cumulative class sizes M_0 = 0, M_1, ..., M_r."""
        out = [0]
        for m in self.cardinalities:
            out.append(out[-1] + m)
        return tuple(out)

    @property
    def manifold_dim(self) -> int:
        """Dimension of the invariant product of spheres."""
        return sum(m - 1 for m in self.cardinalities)


def partition_indexes(traj: StateTrajectory, window: tuple[int, int],
                      eps: float, edges: Sequence[Edge],
                      class_norm_tol: float = 1e-8) -> IndexPartition:
    """Split coordinates into vanishing/nonvanishing over a node window.

    Raises MixedWindowError when a coordinate crosses the threshold inside
    the window, and ValueError when a class norm fails to stay constant.
    """
    i1, i2 = window
    if not (0 <= i1 < i2 <= traj.grid.steps):
        raise ValueError(f"window {window} outside the grid")
    block = np.abs(traj.states[i1:i2 + 1])
    mx, mn = block.max(axis=0), block.min(axis=0)
    vanishing, nonvanishing = [], []
    for j in range(traj.n):
        if mx[j] <= eps:
            vanishing.append(j + 1)
        elif mn[j] > eps:
            nonvanishing.append(j + 1)
        else:
            raise MixedWindowError(
                f"coordinate {j + 1} crosses eps inside nodes {i1}..{i2}")
    jset = set(nonvanishing)
    adj = {j: set() for j in nonvanishing}
    for j, k in edges:
        if j in jset and k in jset:
            adj[j].add(k)
            adj[k].add(j)
    classes = []
    remaining = set(nonvanishing)
    while remaining:
        start = min(remaining)
        comp = {start}
        stack = [start]
        while stack:
            v = stack.pop()
            for w in adj[v]:
                if w not in comp:
                    comp.add(w)
                    stack.append(w)
        classes.append(tuple(sorted(comp)))
        remaining -= comp
    classes.sort(key=lambda c: c[0])
    radii = []
    for cls in classes:
        idx = [j - 1 for j in cls]
        norms = np.sqrt(np.sum(block[:, idx] ** 2, axis=1))
        drift = float(np.max(np.abs(norms - norms[0])))
        if drift > class_norm_tol:
            raise ValueError(
                f"class {cls}: norm drifts by {drift:.3e} > {class_norm_tol:.1e} "
                "over the window")
        radii.append(float(norms[0]))
    nodes = traj.grid.nodes
    return IndexPartition((i1, i2), (float(nodes[i1]), float(nodes[i2])),
                          tuple(vanishing), tuple(classes), tuple(radii), eps)


def find_clean_window(traj: StateTrajectory, t: float, eps: float,
                      edges: Sequence[Edge] = (),
                      max_halfwidth: int | None = None) -> tuple[int, int]:
    """Longest clean node window near time t, possibly not containing it.

    Scans windows of decreasing length, preferring those closest to t, and
    returns the first on which partition_indexes succeeds.  Raises
    WindowNotFoundError when even two-node windows near t are mixed.
    """
    steps = traj.grid.steps
    it = int(round(t / traj.grid.dt))
    it = min(max(it, 0), steps)
    if max_halfwidth is None:
        max_halfwidth = max(1, steps // 6)

    def clean(i1, i2):
        block = np.abs(traj.states[i1:i2 + 1])
        mx, mn = block.max(axis=0), block.min(axis=0)
        return bool(np.all((mx <= eps) | (mn > eps)))

    for h in range(max_halfwidth, 0, -1):
        for off in sorted(range(-2 * h, 2 * h + 1), key=abs):
            i1 = it - h + off
            i2 = it + h + off
            if i1 < 0 or i2 > steps:
                continue
            if clean(i1, i2):
                return (i1, i2)
    raise WindowNotFoundError(
        f"no clean window near t = {t:.6g} at eps = {eps:.1e}; "
        "shrink eps or refine the grid")


def spanning_tree(class_nodes: Sequence[int], edges: Sequence[Edge]) -> list[Edge]:
    """A spanning tree of the class in the coupling graph: |class| - 1 edges."""
    nodes = set(class_nodes)
    adj = {j: [] for j in nodes}
    for j, k in edges:
        if j in nodes and k in nodes:
            adj[j].append(k)
            adj[k].append(j)
    if not nodes:
        return []
    root = min(nodes)
    seen = {root}
    tree: list[Edge] = []
    frontier = [root]
    while frontier:
        v = frontier.pop()
        for w in adj[v]:
            if w not in seen:
                seen.add(w)
                tree.append((v, w) if v < w else (w, v))
                frontier.append(w)
    if seen != nodes:
        raise ValueError(f"class {sorted(nodes)} is not connected by the edges")
    return tree


def distribution_rank(partition: IndexPartition, rho,
                      edges: Sequence[Edge]) -> tuple[int, int]:
    """Rank of the control distribution at a state versus dim of the manifold.

    Assembles F_{j,k}(rho) for every edge inside a class and measures the
    span by singular values.  Returns (rank, manifold_dim); the two agree
    whenever all class coordinates exceed eps.
    """
    rho = np.real(np.asarray(rho))
    for i in partition.vanishing:
        if abs(rho[i - 1]) > partition.eps:
            raise ValueError(
                f"state inconsistent with partition: |rho_{i}| > eps")
    vecs = []
    class_of = {}
    for idx, cls in enumerate(partition.classes):
        for j in cls:
            class_of[j] = idx
    for j, k in edges:
        if class_of.get(j) is not None and class_of.get(j) == class_of.get(k):
            f = np.zeros(rho.shape[0])
            f[j - 1] = rho[k - 1]
            f[k - 1] = -rho[j - 1]
            vecs.append(f)
    if not vecs:
        return 0, partition.manifold_dim
    s = np.linalg.svd(np.array(vecs), compute_uv=False)
    rank = int(np.sum(s > _RANK_TOL * s[0])) if s[0] > 0 else 0
    return rank, partition.manifold_dim


def _project_lift(partition: IndexPartition, rho1: np.ndarray,
                  p: np.ndarray) -> np.ndarray:
    """Zero the covector components on the radial and vanishing directions,
    keeping only the part dual to the invariant manifold's tangent space."""
    out = p.copy()
    for i in partition.vanishing:
        out[i - 1] = 0.0
    for cls, radius in zip(partition.classes, partition.radii):
        idx = [j - 1 for j in cls]
        if radius > 0:
            radial = np.zeros_like(out)
            radial[idx] = rho1[idx] / radius
            out = out - (out @ radial) * radial
    return out


def classify_extremal(pair: AdmissiblePair, lift: PMPLift | None,
                      spec: CostSpec, eps: float,
                      sample_count: int = 8, tol: float = 1e-4) -> list[dict]:
    """Per clean window, test whether the pair can be strictly abnormal.

    For each window found near evenly spread sample times: partition the
    indexes, check that the control distribution spans the invariant
    manifold's tangent space, and (when a normal lift is supplied and no
    control bound is active on the window) build the extended lift by
    padding the manifold-restricted covector with zeros on the radial and
    vanishing directions, verifying it still satisfies the PMP conditions.
    """
    grid = pair.control.grid
    edges = pair.control.edges
    u = np.vstack([np.real(pair.control.values[e]) for e in edges])
    rho = np.real(pair.trajectory.states)
    reports: list[dict] = []
    seen = set()
    for s in range(sample_count):
        t = (s + 0.5) / sample_count * grid.duration
        try:
            window = find_clean_window(pair.trajectory, t, eps)
        except WindowNotFoundError:
            reports.append({"sample_time": t, "verdict": "inconclusive",
                            "reason": "no clean window"})
            continue
        if window in seen:
            continue
        seen.add(window)
        i1, i2 = window
        try:
            part = partition_indexes(pair.trajectory, window, eps, edges,
                                     class_norm_tol=max(1e-8, 10 * eps))
        except (MixedWindowError, ValueError) as exc:
            reports.append({"sample_time": t, "window": window,
                            "verdict": "inconclusive", "reason": str(exc)})
            continue
        rep: dict = {"sample_time": t, "window": window, "times": part.times,
                     "vanishing": part.vanishing, "classes": part.classes,
                     "radii": part.radii}
        bound_active = False
        for idx, e in enumerate(edges):
            cap = pair.system.bound(e)
            if math.isfinite(cap) and np.max(np.abs(u[idx, i1:i2])) >= cap * (1 - 1e-9):
                bound_active = True
        rep["bound_active"] = bound_active
        rank, dim = distribution_rank(part, rho[i1], edges)
        rep["rank"], rep["manifold_dim"] = rank, dim
        rep["trees"] = [spanning_tree(cls, edges) for cls in part.classes]
        if bound_active:
            rep["verdict"] = "inconclusive"
            rep["reason"] = "control bound active on the window"
        elif rank != dim:
            rep["verdict"] = "inconclusive"
            rep["reason"] = "distribution does not span the manifold tangent"
        elif dim == 0:
            rep["verdict"] = "not strictly abnormal"
            rep["reason"] = "vacuously full rank (all classes singletons)"
        else:
            rep["verdict"] = "not strictly abnormal"
        if lift is not None and rep["verdict"] == "not strictly abnormal":
            rep["extended_lift"] = _extended_lift_check(
                pair, lift, spec, part, tol)
        reports.append(rep)
    return reports


def _extended_lift_check(pair, lift, spec, part: IndexPartition, tol) -> dict:
    """Propagate the padded covector across the window and measure residuals."""
    i1, i2 = part.window
    edges = pair.control.edges
    u = np.vstack([np.real(pair.control.values[e]) for e in edges])
    rho = np.real(pair.trajectory.states)
    lin = _StepLinearization(pair.system.n, edges, u[:, i1:i2],
                             pair.control.grid.dt)
    p_tilde = np.empty((i2 - i1 + 1, pair.system.n))
    p_tilde[0] = _project_lift(part, rho[i1], lift.covectors[i1])
    for i in range(i2 - i1):
        p_tilde[i + 1] = lin.props[i] @ p_tilde[i]
    mu = np.array([pair.system.mu(e) for e in edges])
    half = lin.half_props()
    phi_mid = _edge_pairings(
        np.einsum("sij,sj->si", half, p_tilde[:-1]),
        np.einsum("sij,sj->si", half, rho[i1:i2]), edges)
    gap = _maximality_gap(spec, mu, lift.p0, phi_mid, u[:, i1:i2])
    phi = _edge_pairings(p_tilde[:-1], rho[i1:i2], edges)
    zero_pad = 0.0
    for i in part.vanishing:
        zero_pad = max(zero_pad, float(np.max(np.abs(p_tilde[:, i - 1]))))
    for cls, radius in zip(part.classes, part.radii):
        if radius > 0:
            idx = [j - 1 for j in cls]
            radial = np.einsum("si,si->s", p_tilde[:, idx],
                               rho[i1:i2 + 1][:, idx]) / radius
            zero_pad = max(zero_pad, float(np.max(np.abs(radial))))
    ham = np.sum(u[:, i1:i2] * phi, axis=0)
    if spec.kind == "energy":
        ham = ham - np.sum((u[:, i1:i2] / mu[:, None]) ** 2, axis=0)
    constancy = float(np.std(ham) / max(abs(float(np.mean(ham))), 1e-15)) \
        if ham.size else 0.0
    return {"maximality_gap": gap, "padded_components_max": zero_pad,
            "hamiltonian_constancy": constancy,
            "ok": gap <= tol and zero_pad <= max(tol, 1e-8)}
