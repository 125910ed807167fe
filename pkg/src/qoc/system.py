"""n-level system description: energies, coupling graph, controllability.

Levels are indexed 1..n. An edge {j,k} means the matrix element coupling
levels j and k is a control; each edge carries a coupling strength mu > 0
and a modulus bound M in (0, inf].
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DimensionExceededError

__all__ = [
    "Edge",
    "LevelSystem",
    "BoundarySpec",
    "canonical_edge",
    "validate_system",
    "connected_components",
    "is_controllable",
    "lie_rank_oracle",
    "load_system",
    "save_system",
]

Edge = tuple[int, int]

LIE_RANK_MAX_LEVELS = 6
_RANK_TOL = 1e-9


def canonical_edge(j: int, k: int) -> Edge:
    """Return the unordered pair {j,k} as an ordered tuple (min, max)."""
    return (j, k) if j < k else (k, j)


@dataclass(frozen=True)
class LevelSystem:
    """Immutable description of an n-level system with complex pair couplings.

    Attributes
    ----------
    n : number of levels (>= 2).
    energies : the n level energies E_j in angular-frequency units (hbar = 1).
    edges : the coupled pairs, each stored as (j, k) with j < k, 1-based.
    couplings : per-edge coupling strength mu_{j,k} > 0.
    bounds : per-edge control-modulus bound; math.inf means unconstrained.
    """

    n: int
    energies: tuple[float, ...]
    edges: tuple[Edge, ...]
    couplings: Mapping[Edge, float]
    bounds: Mapping[Edge, float] = field(default_factory=dict)

    @staticmethod
    def create(
        n: int,
        energies: Sequence[float] | None = None,
        edges: Iterable[tuple[int, int]] = (),
        couplings: Mapping[tuple[int, int], float] | float = 1.0,
        bounds: Mapping[tuple[int, int], float] | float = math.inf,
    ) -> "LevelSystem":
        """Convenience constructor with canonicalized edges and scalar fills."""
        if energies is None:
            energies = [0.0] * n
        edge_list = tuple(sorted(canonical_edge(j, k) for j, k in edges))
        if isinstance(couplings, Mapping):
            mu = {canonical_edge(*e): float(v) for e, v in couplings.items()}
        else:
            mu = {e: float(couplings) for e in edge_list}
        if isinstance(bounds, Mapping):
            bb = {canonical_edge(*e): float(v) for e, v in bounds.items()}
            for e in edge_list:
                bb.setdefault(e, math.inf)
        else:
            bb = {e: float(bounds) for e in edge_list}
        return LevelSystem(
            n=int(n),
            energies=tuple(float(x) for x in energies),
            edges=edge_list,
            couplings=mu,
            bounds=bb,
        )

    @staticmethod
    def ladder(n: int, energies: Sequence[float] | None = None, mu: float = 1.0,
               bound: float = math.inf) -> "LevelSystem":
        """System in which only adjacent levels are coupled."""
        return LevelSystem.create(
            n, energies, [(j, j + 1) for j in range(1, n)], mu, bound)

    @property
    def drift(self) -> np.ndarray:
        """diag(E_1..E_n) as a real array."""
        return np.diag(np.asarray(self.energies, dtype=float))

    def mu(self, edge: Edge) -> float:
        return self.couplings[canonical_edge(*edge)]

    def bound(self, edge: Edge) -> float:
        return self.bounds.get(canonical_edge(*edge), math.inf)


@dataclass(frozen=True)
class BoundarySpec:
    """Source or target condition on the moduli of the wave function.

    kind is one of:
      * "moduli-point": prescribed populations ``moduli`` (sum to one),
      * "eigenstate": all population on level ``index``,
      * "moduli-set": a described subset of the population simplex.
    """

    kind: str
    moduli: tuple[float, ...] | None = None
    index: int | None = None
    description: str | None = None

    def populations(self, n: int) -> np.ndarray:
        """The target populations as an array of length n."""
        if self.kind == "eigenstate":
            a = np.zeros(n)
            a[self.index - 1] = 1.0
            return a
        if self.kind == "moduli-point":
            return np.asarray(self.moduli, dtype=float)
        raise ValueError("moduli-set boundary has no single population vector")

    def violations(self, n: int) -> list[str]:
        out = []
        if self.kind not in ("moduli-point", "eigenstate", "moduli-set"):
            out.append(f"unknown boundary kind {self.kind!r}")
            return out
        if self.kind == "moduli-point":
            if self.moduli is None or len(self.moduli) != n:
                out.append("moduli vector missing or of wrong length")
            else:
                a = np.asarray(self.moduli, dtype=float)
                if np.any(a < 0):
                    out.append("negative population entry")
                if abs(float(a.sum()) - 1.0) > 1e-12:
                    out.append("populations do not sum to 1 (tolerance 1e-12)")
        elif self.kind == "eigenstate":
            if self.index is None or not 1 <= self.index <= n:
                out.append("eigenstate index out of range")
        return out


def validate_system(sys: LevelSystem) -> dict:
    """Check the LevelSystem invariants; report style, never raises.

    Returns {"ok": bool, "violations": [str], "warnings": [str]}.
    """
    violations: list[str] = []
    warnings: list[str] = []
    if sys.n < 2:
        violations.append("level count must be >= 2")
    if len(sys.energies) != sys.n:
        violations.append("energy vector length differs from level count")
    if any(not math.isfinite(e) for e in sys.energies):
        violations.append("non-finite energy")
    seen = set()
    for j, k in sys.edges:
        if j == k:
            violations.append(f"self-loop on level {j}")
            continue
        e = canonical_edge(j, k)
        if e in seen:
            violations.append(f"duplicate edge {e}")
        seen.add(e)
        if not (1 <= j <= sys.n and 1 <= k <= sys.n):
            violations.append(f"edge {e} references a level outside 1..{sys.n}")
        mu = sys.couplings.get(e)
        if mu is None:
            violations.append(f"missing coupling for edge {e}")
        elif not (mu > 0):
            violations.append(f"non-positive coupling on edge {e}")
        b = sys.bounds.get(e, math.inf)
        if not (b > 0):
            violations.append(f"non-positive bound on edge {e}")
    if len(set(sys.energies)) < len(sys.energies):
        warnings.append("coinciding energies (degenerate levels)")
    return {"ok": not violations, "violations": violations, "warnings": warnings}


def connected_components(sys: LevelSystem) -> list[set[int]]:
    """Partition of {1..n} into maximal connected sets under the edges."""
    adj: dict[int, set[int]] = {j: set() for j in range(1, sys.n + 1)}
    for j, k in sys.edges:
        adj[j].add(k)
        adj[k].add(j)
    remaining = set(range(1, sys.n + 1))
    comps = []
    while remaining:
        start = min(remaining)
        comp = {start}
        frontier = [start]
        while frontier:
            v = frontier.pop()
            for w in adj[v]:
                if w not in comp:
                    comp.add(w)
                    frontier.append(w)
        comps.append(comp)
        remaining -= comp
    return sorted(comps, key=min)


def is_controllable(sys: LevelSystem) -> bool:
    """True iff the coupling graph is connected."""
    return len(connected_components(sys)) == 1


def _edge_generators(n: int, edge: Edge) -> list[np.ndarray]:
    """The two skew-Hermitian generators of an edge: real and imaginary slot."""
    j, k = edge[0] - 1, edge[1] - 1
    a = np.zeros((n, n), dtype=complex)
    a[j, k] = 1.0
    a[k, j] = -1.0
    b = np.zeros((n, n), dtype=complex)
    b[j, k] = 1j
    b[k, j] = 1j
    return [a, b]


def _span_rank(vectors: np.ndarray) -> int:
    if vectors.size == 0:
        return 0
    s = np.linalg.svd(vectors, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > _RANK_TOL * s[0]))


def _orthonormal_basis(mats: list[np.ndarray], n: int) -> list[np.ndarray]:
    """Orthonormal basis (as matrices) of the real span of skew-Hermitian mats."""
    if not mats:
        return []
    flat = np.array([np.concatenate([m.real.ravel(), m.imag.ravel()]) for m in mats])
    q, r = np.linalg.qr(flat.T)
    keep = np.abs(np.diag(r)) > _RANK_TOL * max(1.0, np.abs(np.diag(r)).max())
    basis = []
    for col in np.nonzero(keep)[0]:
        v = q[:, col]
        basis.append((v[: n * n] + 1j * v[n * n:]).reshape(n, n))
    return basis


def lie_rank_oracle(sys: LevelSystem) -> dict:
    """Brute-force bracket closure of the edge generators.

    Returns {"dimension": dim of the generated real Lie algebra,
             "transitive": whether the algebra acts transitively on the state
             sphere up to a global phase}.

    The transitivity test evaluates the algebra at a generic state and asks
    for the evaluation (together with the phase direction) to span the full
    tangent space of S^{2n-1}.
    """
    if sys.n > LIE_RANK_MAX_LEVELS:
        raise DimensionExceededError(
            f"Lie closure limited to n <= {LIE_RANK_MAX_LEVELS}, got n = {sys.n}")
    n = sys.n
    gens: list[np.ndarray] = []
    for e in sys.edges:
        gens.extend(_edge_generators(n, e))
    basis = _orthonormal_basis(gens, n)
    # Iterate bracket closure until the dimension stabilizes.
    while True:
        new = list(basis)
        for i in range(len(basis)):
            for j in range(i + 1, len(basis)):
                new.append(basis[i] @ basis[j] - basis[j] @ basis[i])
        nb = _orthonormal_basis(new, n)
        if len(nb) == len(basis):
            basis = nb
            break
        basis = nb
    dim = len(basis)

    # Generic unit state with deterministic, incommensurate-looking entries.
    raw = np.array([math.sin(3.7 * (i + 1)) + 1j * math.cos(1.3 * (i + 1) ** 2)
                    for i in range(n)])
    psi = raw / np.linalg.norm(raw)
    vecs = [m @ psi for m in basis]
    vecs.append(1j * psi)  # global phase direction
    real_chart = np.array([np.concatenate([v.real, v.imag]) for v in vecs])
    eval_dim = _span_rank(real_chart)
    transitive = dim > 0 and eval_dim >= 2 * n - 1
    return {"dimension": dim, "transitive": transitive}


def load_system(path) -> LevelSystem:
    """Read a system spec file: {"n", "energies", "edges": [{"j","k","mu","bound"}]}."""
    with open(path) as fh:
        data = json.load(fh)
    edges, mu, bb = [], {}, {}
    for rec in data.get("edges", []):
        e = canonical_edge(int(rec["j"]), int(rec["k"]))
        edges.append(e)
        mu[e] = float(rec.get("mu", 1.0))
        b = rec.get("bound", "inf")
        bb[e] = math.inf if b in ("inf", None) else float(b)
    return LevelSystem.create(int(data["n"]), data.get("energies"), edges, mu, bb)


def save_system(sys: LevelSystem, path) -> None:
    data = {
        "n": sys.n,
        "energies": list(sys.energies),
        "edges": [
            {
                "j": j,
                "k": k,
                "mu": sys.couplings[(j, k)],
                "bound": "inf" if math.isinf(sys.bound((j, k))) else sys.bound((j, k)),
            }
            for j, k in sys.edges
        ],
    }
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")
