"""Lattice Green's functions of simple random walk in d >= 3.

Infinite volume
    ``g(a) = sum_n P_0(S_n = a)``, evaluated from the Fourier integral

        g(a) = (2 pi)^-d  int_{[-pi,pi]^d} cos(k.a) / (1 - d^-1 sum_j cos k_j) dk.

    The ``k_1`` integral is done in closed form,

        (2 pi)^-1 int cos(a k) / (c - cos k) dk = r^|a| / sqrt(c^2 - 1),
        r = c - sqrt(c^2 - 1),

    leaving a ``(d-1)``-dimensional integral over ``[0, pi]^(d-1)`` whose only
    singularity is ``~1/|k|`` at the origin. Splitting the cube into pyramids
    ``{k : k_i = max}`` and mapping ``k_i = s``, ``k_j = s t_j`` (Duffy) cancels
    it, after which tensor Gauss-Legendre converges geometrically. The node
    count is doubled until two successive levels agree within ``tol``.

Finite volume
    ``g_L(a, b)`` solves ``(I - P) u = delta_b`` on ``L`` with ``u = 0``
    outside (walk killed on leaving ``L``). Direct sparse factorization for
    small systems, conjugate gradient above.
"""
from __future__ import annotations

import itertools
import json
import math
import threading
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .lattice import (LatticeBox, LatticePoint, as_point, canonical_offset,
                      check_dimension, nearest_neighbor_offsets)

SCHEMA_VERSION = 1


class QuadratureError(RuntimeError):
    """Raised when successive refinements fail to agree within tolerance."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


class SolverError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class QuadSpec:
    """Quadrature configuration: nodes per axis start at ``start_nodes`` and double."""

    tol: float = 1e-11
    start_nodes: int = 16
    max_nodes: int = 512

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("quadrature tolerance must be positive")
        if self.start_nodes < 2 or self.max_nodes < self.start_nodes:
            raise ValueError("invalid node counts")


@dataclass(frozen=True)
class SolverSpec:
    tol: float = 1e-10
    direct_max: int = 10_000
    maxiter: int = 20_000


# --------------------------------------------------------------------------
# infinite volume


_RULE_CACHE: Dict[Tuple[int, int], tuple] = {}


def _duffy_rule(m: int, q: int):
    """Nodes/weights on ``[0, pi]^m`` for integrands with a 1/|k| origin singularity.

    Returns ``(pyramids, weights)`` where ``pyramids`` is a list of ``(K, m)``
    node arrays (one per pyramid) sharing a common weight vector.
    """
    key = (m, q)
    if key in _RULE_CACHE:
        return _RULE_CACHE[key]
    x, w = np.polynomial.legendre.leggauss(q)
    s = 0.5 * math.pi * (x + 1.0)
    ws = 0.5 * math.pi * w
    t = 0.5 * (x + 1.0)
    wt = 0.5 * w
    grids = np.meshgrid(*([s] + [t] * (m - 1)), indexing="ij")
    wgrids = np.meshgrid(*([ws] + [wt] * (m - 1)), indexing="ij")
    S = grids[0].ravel()
    T = [g.ravel() for g in grids[1:]]
    W = np.prod([g.ravel() for g in wgrids], axis=0) * S ** (m - 1)
    pyramids = []
    for i in range(m):
        k = np.empty((S.size, m))
        k[:, i] = S
        others = [j for j in range(m) if j != i]
        for j, tj in zip(others, T):
            k[:, j] = S * tj
        pyramids.append(k)
    _RULE_CACHE[key] = (pyramids, W)
    return pyramids, W


def _level_values(offsets: np.ndarray, d: int, q: int) -> np.ndarray:
    """Quadrature at ``q`` nodes per axis for a batch of canonical offsets."""
    m = d - 1
    pyramids, W = _duffy_rule(m, q)
    a1 = offsets[:, 0].astype(np.float64)
    rest = offsets[:, 1:].astype(np.float64)
    total = np.zeros(len(offsets))
    for k in pyramids:
        # c = d - sum_j cos k_j = 1 + sum_j (1 - cos k_j), with c - 1 kept exact near 0
        cm1 = 2.0 * np.sum(np.sin(0.5 * k) ** 2, axis=1)
        c = 1.0 + cm1
        root = np.sqrt(cm1 * (c + 1.0))
        base = W / root
        logr = -np.log(c + root)        # log(c - root), computed stably
        # (K, B): r^{a1} * prod cos(k_j a_j)
        vals = np.exp(np.outer(logr, a1))
        vals *= np.prod(np.cos(k[:, :, None] * rest.T[None, :, :]), axis=1)
        total += base @ vals
    return d * total / math.pi ** m


def green_infinite_many(offsets: Iterable[Sequence[int]], d: int,
                        quad_spec: QuadSpec | None = None,
                        return_levels: bool = False):
    """Infinite-volume Green's function at several offsets.

    Offsets are reduced to canonical form first; the refinement runs jointly
    and an offset leaves the batch once two successive levels agree.

    Returns
    -------
    values : ndarray
    levels : ndarray, optional
        Nodes per axis at which each value was accepted.
    """
    d = check_dimension(d)
    spec = quad_spec or QuadSpec()
    canon = np.array([canonical_offset(as_point(o, d)) for o in offsets],
                     dtype=np.int64).reshape(-1, d)
    out = np.full(len(canon), np.nan)
    levels = np.zeros(len(canon), dtype=np.int64)
    if len(canon) == 0:
        return (out, levels) if return_levels else out
    pending = np.arange(len(canon))
    q = spec.start_nodes
    prev = _level_values(canon, d, q)
    residual = np.full(len(canon), np.inf)
    while pending.size:
        q2 = 2 * q
        if q2 > spec.max_nodes:
            worst = int(pending[np.argmax(residual[pending])])
            raise QuadratureError(
                f"quadrature for offset {tuple(canon[worst])} did not converge at "
                f"{q} nodes/axis: residual {residual[worst]:.3e} > tol {spec.tol:.1e}",
                residual=float(residual[worst]))
        cur = _level_values(canon[pending], d, q2)
        residual[pending] = np.abs(cur - prev)
        done = residual[pending] <= spec.tol
        out[pending[done]] = cur[done]
        levels[pending[done]] = q2
        prev = cur[~done]
        pending = pending[~done]
        q = q2
    return (out, levels) if return_levels else out


def green_infinite(offset: Sequence[int], d: int = 3,
                   quad_spec: QuadSpec | None = None) -> float:
    """``g(offset)`` for simple random walk on ``Z^d``."""
    return float(green_infinite_many([offset], d, quad_spec)[0])


def kappa(d: int = 3, quad_spec: QuadSpec | None = None) -> float:
    """Escape probability ``P_0(no return to 0) = 1 / g(0)``."""
    return 1.0 / green_infinite((0,) * check_dimension(d), d, quad_spec)


# --------------------------------------------------------------------------
# finite volume


def precision_matrix(mask: np.ndarray) -> sp.csc_matrix:
    """``I - P`` restricted to the sites of ``mask`` (lexicographic order).

    Off-diagonal entries ``-1/(2d)`` between l1 nearest neighbours inside the
    domain; the walk is killed outside.
    """
    mask = np.asarray(mask, dtype=bool)
    d = mask.ndim
    idx = -np.ones(mask.shape, dtype=np.int64)
    sites = np.argwhere(mask)
    idx[tuple(sites.T)] = np.arange(len(sites))
    rows = [np.arange(len(sites))]
    cols = [np.arange(len(sites))]
    vals = [np.ones(len(sites))]
    for e in nearest_neighbor_offsets(d):
        nb = sites + e
        ok = np.all((nb >= 0) & (nb < np.array(mask.shape)), axis=1)
        src = np.flatnonzero(ok)
        j = idx[tuple(nb[ok].T)]
        keep = j >= 0
        rows.append(src[keep])
        cols.append(j[keep])
        vals.append(np.full(int(keep.sum()), -1.0 / (2 * d)))
    Q = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(len(sites), len(sites)))
    return Q


class DirichletSolver:
    """Solves ``(I - P) u = f`` on a domain given as a boolean grid mask."""

    def __init__(self, mask: np.ndarray, spec: SolverSpec | None = None):
        self.mask = np.asarray(mask, dtype=bool)
        self.spec = spec or SolverSpec()
        self.Q = precision_matrix(self.mask)
        self.size = self.Q.shape[0]
        self.index = -np.ones(self.mask.shape, dtype=np.int64)
        self.index[self.mask] = np.arange(self.size)
        self._lu = None
        if 0 < self.size <= self.spec.direct_max:
            self._lu = spla.splu(self.Q, permc_spec="MMD_AT_PLUS_A")

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=np.float64)
        if self.size == 0:
            return np.zeros_like(rhs)
        if self._lu is not None:
            u = self._lu.solve(rhs)
        else:
            # Jacobi preconditioning is the identity here (unit diagonal).
            cols = rhs.reshape(self.size, -1)
            u = np.empty_like(cols)
            for i in range(cols.shape[1]):
                sol, info = spla.cg(self.Q, cols[:, i], rtol=self.spec.tol,
                                    atol=0.0, maxiter=self.spec.maxiter)
                u[:, i] = sol
            u = u.reshape(rhs.shape)
        res = self.Q @ u - rhs
        scale = max(float(np.linalg.norm(rhs)), 1.0)
        rnorm = float(np.linalg.norm(res)) / scale
        if not rnorm <= max(10 * self.spec.tol, 1e-12):
            raise SolverError(f"Dirichlet solve residual {rnorm:.3e} above tolerance", rnorm)
        return u

    def green_column(self, beta: Sequence[int]) -> np.ndarray:
        """``g_L(., beta)`` on the mask grid (zeros outside the domain)."""
        beta = tuple(int(b) for b in beta)
        if (len(beta) != self.mask.ndim
                or any(not 0 <= b < s for b, s in zip(beta, self.mask.shape))
                or not self.mask[beta]):
            raise ValueError(f"site {beta} is not in the domain")
        rhs = np.zeros(self.size)
        rhs[self.index[beta]] = 1.0
        u = self.solve(rhs)
        out = np.zeros(self.mask.shape)
        out[self.mask] = u
        return out


_SOLVER_CACHE: "OrderedDict[tuple, DirichletSolver]" = OrderedDict()
_SOLVER_LOCK = threading.Lock()


def box_solver(box: LatticeBox, spec: SolverSpec | None = None) -> DirichletSolver:
    spec = spec or SolverSpec()
    key = (box.n, box.d, spec)
    with _SOLVER_LOCK:
        if key in _SOLVER_CACHE:
            _SOLVER_CACHE.move_to_end(key)
            return _SOLVER_CACHE[key]
    solver = DirichletSolver(np.ones(box.shape, dtype=bool), spec)
    with _SOLVER_LOCK:
        _SOLVER_CACHE[key] = solver
        while len(_SOLVER_CACHE) > 4:
            _SOLVER_CACHE.popitem(last=False)
    return solver


def green_finite_column(box: LatticeBox, beta: Sequence[int],
                        solver_spec: SolverSpec | None = None) -> np.ndarray:
    """``g_{V_N}(alpha, beta)`` for every site ``alpha`` of ``box``, flat (lexicographic)."""
    beta = as_point(beta, box.d)
    if not box.contains(beta):
        raise ValueError(f"beta={beta} is outside the box of side {box.n}")
    return box_solver(box, solver_spec).green_column(beta).ravel()


def bulk_gap_bound(box: LatticeBox, delta: float, C_d: float = 1.0) -> float:
    """``C_d * (delta * N^(1/d))^(2-d)``: allowed gap ``g - g_{V_N}`` on the bulk."""
    if not C_d > 0:
        raise ValueError("C_d must be positive")
    return float(C_d * (delta * box.N ** (1.0 / box.d)) ** (2 - box.d))


# --------------------------------------------------------------------------
# memoized table


@dataclass
class GreenTable:
    """Memoized infinite-volume values and finite-volume Green columns for one ``d``."""

    d: int = 3
    quad_spec: QuadSpec = field(default_factory=QuadSpec)
    entries: Dict[LatticePoint, float] = field(default_factory=dict)
    finite_columns: Dict[Tuple[int, LatticePoint], np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        check_dimension(self.d)
        self._lock = threading.Lock()

    @property
    def g0(self) -> float:
        return self.value((0,) * self.d)

    @property
    def kappa(self) -> float:
        return 1.0 / self.g0

    def value(self, offset: Sequence[int]) -> float:
        key = canonical_offset(offset)
        if key not in self.entries:
            self.ensure([key])
        return self.entries[key]

    def ensure(self, offsets: Iterable[Sequence[int]]) -> None:
        keys = {canonical_offset(o) for o in offsets}
        with self._lock:
            missing = sorted(k for k in keys if k not in self.entries)
        if not missing:
            return
        vals = green_infinite_many(missing, self.d, self.quad_spec)
        with self._lock:
            for k, v in zip(missing, vals):
                self.entries.setdefault(k, float(v))

    def values(self, offsets: np.ndarray) -> np.ndarray:
        """Vectorized lookup for an ``(K, d)`` offset array."""
        offsets = np.asarray(offsets, dtype=np.int64).reshape(-1, self.d)
        canon = -np.sort(-np.abs(offsets), axis=1)
        uniq, inv = np.unique(canon, axis=0, return_inverse=True)
        self.ensure(map(tuple, uniq))
        table = np.array([self.entries[tuple(int(c) for c in u)] for u in uniq])
        return table[inv.ravel()]

    def offsets_up_to(self, r: int) -> np.ndarray:
        """All canonical offsets with entries in ``[0, r]``."""
        return np.array([c[::-1] for c in itertools.combinations_with_replacement(range(r + 1), self.d)],
                        dtype=np.int64)

    def covariance(self, box: LatticeBox) -> np.ndarray:
        """Dense ``[g(alpha - beta)]`` over the sites of ``box``."""
        self.ensure(map(tuple, self.offsets_up_to(box.n - 1)))
        coords = box.coords()
        diff = np.abs(coords[:, None, :] - coords[None, :, :])
        canon = -np.sort(-diff, axis=2)
        # encode canonical offsets as integers for a table lookup
        base = box.n
        code = np.zeros(canon.shape[:2], dtype=np.int64)
        for j in range(self.d):
            code = code * base + canon[:, :, j]
        keys = self.offsets_up_to(box.n - 1)
        kcode = np.zeros(len(keys), dtype=np.int64)
        for j in range(self.d):
            kcode = kcode * base + keys[:, j]
        lut = np.zeros(base ** self.d)
        lut[kcode] = [self.entries[tuple(int(c) for c in k)] for k in keys]
        return lut[code]

    def finite_column(self, box: LatticeBox, beta: Sequence[int],
                      solver_spec: SolverSpec | None = None) -> np.ndarray:
        if box.d != self.d:
            raise ValueError("box dimension does not match the table")
        key = (box.n, as_point(beta, self.d))
        with self._lock:
            col = self.finite_columns.get(key)
        if col is None:
            col = green_finite_column(box, beta, solver_spec)
            with self._lock:
                self.finite_columns.setdefault(key, col)
        return col

    # -- serialization

    def to_json(self) -> str:
        payload = {
            "schema_version": SCHEMA_VERSION,
            "d": self.d,
            "quad_spec": asdict(self.quad_spec),
            "entries": [[list(k), v] for k, v in sorted(self.entries.items())],
            "finite_columns": [
                {"n": n, "beta": list(beta), "values": col.tolist()}
                for (n, beta), col in sorted(self.finite_columns.items())
            ],
        }
        return json.dumps(payload, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GreenTable":
        payload = json.loads(text)
        version = payload.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported Green table schema_version {version!r}")
        table = cls(d=int(payload["d"]), quad_spec=QuadSpec(**payload["quad_spec"]))
        table.entries = {tuple(int(c) for c in k): float(v) for k, v in payload["entries"]}
        for item in payload.get("finite_columns", []):
            key = (int(item["n"]), tuple(int(c) for c in item["beta"]))
            table.finite_columns[key] = np.asarray(item["values"], dtype=np.float64)
        return table

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "GreenTable":
        with open(path) as fh:
            return cls.from_json(fh.read())


_DEFAULT_TABLES: Dict[int, GreenTable] = {}


def default_table(d: int = 3) -> GreenTable:
    """Process-wide table with the default quadrature settings."""
    d = check_dimension(d)
    if d not in _DEFAULT_TABLES:
        _DEFAULT_TABLES[d] = GreenTable(d=d)
    return _DEFAULT_TABLES[d]


# --------------------------------------------------------------------------
# bulk comparison


@dataclass
class BulkGapResult:
    n: int
    delta: float
    bulk_sites: int
    max_gap: float            # max over bulk pairs of g(a-b) - g_N(a,b)
    max_violation: float      # max over bulk pairs of g_N(a,b) - g(a-b); <= 0 up to solver tol
    scaled_gap: float         # max_gap * (delta N^(1/d))^(d-2)


def _fundamental_bulk_sites(box: LatticeBox, mask: np.ndarray) -> list:
    """Bulk sites up to the box's reflection/permutation symmetries."""
    n = box.n
    reps = set()
    for p in np.argwhere(mask):
        folded = tuple(sorted(min(int(c), n - 1 - int(c)) for c in p))
        reps.add(folded)
    return sorted(reps)


def bulk_gap(box: LatticeBox, delta: float, table: GreenTable | None = None,
             solver_spec: SolverSpec | None = None) -> BulkGapResult:
    """Compare ``g_{V_N}`` with ``g`` over all pairs of bulk sites.

    Columns are solved only for bulk sites in a fundamental domain of the
    box symmetry group; every bulk pair is the image of such a pair.
    """
    table = table or default_table(box.d)
    mask = box.bulk_mask(delta)
    if not mask.any():
        raise ValueError("bulk is empty")
    coords = np.argwhere(mask)
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    table.ensure(map(tuple, table.offsets_up_to(int((hi - lo).max()))))
    solver = box_solver(box, solver_spec)
    max_gap = -np.inf
    max_violation = -np.inf
    for beta in _fundamental_bulk_sites(box, mask):
        col = solver.green_column(beta)[mask]
        g = table.values(coords - np.array(beta))
        diff = g - col
        max_gap = max(max_gap, float(diff.max()))
        max_violation = max(max_violation, float((-diff).max()))
    scale = (delta * box.N ** (1.0 / box.d)) ** (box.d - 2)
    return BulkGapResult(n=box.n, delta=delta, bulk_sites=int(mask.sum()),
                         max_gap=max_gap, max_violation=max_violation,
                         scaled_gap=max_gap * scale)


def calibrate_cd(sides: Sequence[int], delta: float = 0.25, d: int = 3,
                 table: GreenTable | None = None) -> tuple[float, list]:
    """Smallest ``C_d`` making the lower bulk bound hold for every side in ``sides``."""
    results = [bulk_gap(LatticeBox(n=n, d=d), delta, table) for n in sides]
    return max(r.scaled_gap for r in results), results


def zero_boundary_variances(box: LatticeBox) -> np.ndarray:
    """Diagonal ``g_N(a, a)`` over the box as a flat array.

    Uses the sine eigenbasis of the Dirichlet walk:
    ``g_N(a, a) = sum_k prod_j s(k_j, a_j) / (1 - (1/d) sum_j cos(pi k_j / (n+1)))``
    with ``s(k, x) = 2 sin^2(pi k (x+1) / (n+1)) / (n+1)``, contracted one axis at a time.
    """
    n, d = box.n, box.d
    k = np.arange(1, n + 1)
    x = np.arange(n)
    s = 2.0 * np.sin(np.pi * np.outer(k, x + 1) / (n + 1)) ** 2 / (n + 1)   # (k, x)
    c = np.cos(np.pi * k / (n + 1))
    lam = 1.0 - sum(np.meshgrid(*([c] * d), indexing="ij")) / d
    t = 1.0 / lam
    # contract each k-axis against s, replacing it by the matching x-axis
    for _ in range(d):
        t = np.tensordot(t, s, axes=([0], [0]))
    return t.ravel()
