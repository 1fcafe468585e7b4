"""Exact and approximate samplers for the discrete Gaussian free field on a box.

Zero-boundary field ``psi`` on ``V_N``
    Centered Gaussian with precision ``Q = I - P`` restricted to the box
    (``Q_aa = 1``, ``Q_ab = -1/(2d)`` for nearest neighbours), covariance
    ``g_{V_N}``. Two exact methods:

    ``factorization``
        Symmetric sparse factorization ``Q[p][:, p] = L D L^T`` (SuperLU with
        diagonal pivoting); ``x = P^T L^-T D^-1/2 z``.
    ``spectral``
        ``Q`` is diagonalized by the orthonormal type-I sine transform ``S``,
        eigenvalues ``1 - d^-1 sum_j cos(pi k_j / (n+1))``; ``x = S Lambda^-1/2 z``.

Infinite-volume field ``phi`` restricted to ``V_N``
    ``exact``: Cholesky factor of ``[g(a - b)]`` (dense, capped size).
    ``enlarged``: zero-boundary field on a centered box of side
    ``m = ceil(margin * n)`` restricted to the inner box; the covariance error
    is bounded by the bulk gap bound with ``delta' = (m - n) / (2m)``.

All draws for replication ``r`` come from the stream ``rng.generator(r)``,
so a sample depends only on ``(box, kind, method, seed, r)``.
"""
from __future__ import annotations

import csv
import io
import json
import math
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse.linalg as spla
from scipy import fft

from .green import (DirichletSolver, GreenTable, SolverSpec, bulk_gap_bound,
                    default_table, precision_matrix)
from .lattice import LatticeBox, as_point
from .rng import TAG_FIELD, RngSpec

DENSE_CAP = 4096
FACTOR_CAP = 40 ** 3
DEFAULT_MARGIN = 4.0

ZERO = "zero_boundary"
INFINITE = "infinite_volume"


class SamplerError(RuntimeError):
    pass


@dataclass
class FieldSample:
    """One realization on ``box``; ``values`` is flat in lexicographic site order."""

    box: LatticeBox
    values: np.ndarray
    kind: str
    method: str
    seed: int
    master_seed: int
    replication: int
    bias_bound: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise SamplerError("non-finite field values")

    def grid(self) -> np.ndarray:
        return self.values.reshape(self.box.shape)

    def envelope(self) -> dict:
        return {
            "n": self.box.n, "d": self.box.d, "kind": self.kind, "method": self.method,
            "seed": self.seed, "master_seed": self.master_seed,
            "replication": self.replication, "bias_bound": self.bias_bound,
            "rng": RngSpec(self.master_seed).algorithm, **self.meta,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x{j + 1}" for j in range(self.box.d)] + ["value"])
        for c, v in zip(self.box.coords(), self.values):
            w.writerow([*map(int, c), repr(float(v))])
        return buf.getvalue()

    def write(self, csv_path, json_path) -> None:
        with open(csv_path, "w") as fh:
            fh.write(self.to_csv())
        with open(json_path, "w") as fh:
            json.dump(self.envelope(), fh, indent=1, sort_keys=True)


def read_field_csv(text: str) -> tuple[np.ndarray, np.ndarray]:
    """Parse a field CSV dump into ``(coords, values)``."""
    rows = list(csv.reader(io.StringIO(text)))
    body = rows[1:]
    coords = np.array([[int(x) for x in r[:-1]] for r in body], dtype=np.int64)
    values = np.array([float(r[-1]) for r in body])
    return coords, values


# --------------------------------------------------------------------------
# transforms: standard normals (B, N_inner) -> fields (B, N)


class _SparseFactor:
    """``Q[p][:, p] = L D L^T`` from SuperLU run with symmetric diagonal pivoting."""

    def __init__(self, box: LatticeBox):
        Q = precision_matrix(np.ones(box.shape, dtype=bool))
        lu = spla.splu(Q, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options=dict(SymmetricMode=True))
        if not np.array_equal(lu.perm_r, lu.perm_c):
            raise SamplerError("factorization used non-symmetric pivoting")
        dvec = lu.U.diagonal()
        if np.any(dvec <= 0):
            raise SamplerError("precision matrix is not positive definite")
        self.lu = lu
        self.perm = np.argsort(lu.perm_c)     # Q[perm][:, perm] = L U
        self.L = lu.L.tocsr()
        self.sqrt_d = np.sqrt(dvec)

    def apply(self, z: np.ndarray) -> np.ndarray:
        # x = P^T L^-T D^-1/2 z = Q^-1 P^T (L D^1/2 z)
        w = self.L @ (self.sqrt_d[:, None] * z.T)
        v = np.empty_like(w)
        v[self.perm] = w
        return self.lu.solve(v).T


def _spectral_scale(box: LatticeBox) -> np.ndarray:
    k = np.arange(1, box.n + 1)
    c = np.cos(np.pi * k / (box.n + 1))
    lam = np.ones(box.shape)
    acc = np.zeros(box.shape)
    for j in range(box.d):
        shape = [1] * box.d
        shape[j] = box.n
        acc = acc + c.reshape(shape)
    lam = lam - acc / box.d
    return 1.0 / np.sqrt(lam)


def _spectral_apply(box: LatticeBox, scale: np.ndarray, z: np.ndarray) -> np.ndarray:
    g = z.reshape((-1,) + box.shape) * scale
    axes = tuple(range(1, box.d + 1))
    return fft.dstn(g, type=1, norm="ortho", axes=axes).reshape(len(z), -1)


_TRANSFORMS: "OrderedDict[tuple, object]" = OrderedDict()
_TLOCK = threading.Lock()


def _cached(key, build):
    with _TLOCK:
        if key in _TRANSFORMS:
            _TRANSFORMS.move_to_end(key)
            return _TRANSFORMS[key]
    obj = build()
    with _TLOCK:
        _TRANSFORMS.setdefault(key, obj)
        while len(_TRANSFORMS) > 6:
            _TRANSFORMS.popitem(last=False)
        return _TRANSFORMS[key]


@dataclass
class FieldPlan:
    """A configured sampler: the box, the law and how it is realized."""

    box: LatticeBox
    kind: str = INFINITE
    method: str = "factorization"
    margin_factor: float = DEFAULT_MARGIN
    C_d: float = 1.0
    dense_cap: int = DENSE_CAP
    factor_cap: int = FACTOR_CAP
    table: GreenTable | None = None

    def __post_init__(self):
        if self.kind not in (ZERO, INFINITE):
            raise ValueError(f"unknown field kind {self.kind!r}")
        if self.kind == ZERO:
            if self.method not in ("factorization", "spectral"):
                raise ValueError(f"unknown zero-boundary method {self.method!r}")
            if self.method == "factorization" and self.box.N > self.factor_cap:
                raise SamplerError(
                    f"N={self.box.N} above factorization cap {self.factor_cap}; use method='spectral'")
            self.inner = self.box
            self.bias_bound = 0.0
        else:
            if self.method in ("factorization", "exact"):
                self.method = "exact"
                if self.box.N > self.dense_cap:
                    raise SamplerError(
                        f"N={self.box.N} above dense cap {self.dense_cap}: use the "
                        "enlarged-box method (method='enlarged')")
                self.inner = self.box
                self.bias_bound = 0.0
            elif self.method == "enlarged":
                if self.margin_factor < 2:
                    raise SamplerError("enlarged-box method needs margin_factor >= 2")
                m = int(math.ceil(self.margin_factor * self.box.n))
                self.inner = self.box.with_side(m)
                delta_p = (m - self.box.n) / (2.0 * m)
                self.bias_bound = bulk_gap_bound(self.inner, delta_p, self.C_d)
                self.offset = (m - self.box.n) // 2
            else:
                raise ValueError(f"unknown infinite-volume method {self.method!r}")
        if self.table is None:
            self.table = default_table(self.box.d)

    @property
    def label(self) -> str:
        if self.kind == INFINITE and self.method == "enlarged":
            return f"enlarged:{self.margin_factor:g}"
        return self.method

    def _transform(self):
        box = self.box
        if self.kind == ZERO and self.method == "factorization":
            return _cached(("factor", box.n, box.d), lambda: _SparseFactor(box)).apply
        if self.kind == ZERO:
            scale = _cached(("spectral", box.n, box.d), lambda: _spectral_scale(box))
            return lambda z: _spectral_apply(box, scale, z)
        if self.method == "exact":
            def build():
                cov = self.table.covariance(box)
                return np.linalg.cholesky(cov)
            chol = _cached(("dense", box.n, box.d, id(self.table)), build)
            return lambda z: z @ chol.T
        inner = self.inner
        scale = _cached(("spectral", inner.n, inner.d), lambda: _spectral_scale(inner))
        sl = (slice(None),) + (slice(self.offset, self.offset + box.n),) * box.d

        def restrict(z):
            full = _spectral_apply(inner, scale, z).reshape((-1,) + inner.shape)
            return full[sl].reshape(len(z), -1)
        return restrict

    def standard_normals(self, rng: RngSpec, indices: Sequence[int]) -> np.ndarray:
        N = self.inner.N
        return np.stack([rng.generator(int(i), TAG_FIELD).standard_normal(N) for i in indices])

    def sample_values(self, rng: RngSpec, indices: Sequence[int]) -> np.ndarray:
        """Fields for replications ``indices`` as a ``(len(indices), N)`` array."""
        indices = list(indices)
        if not indices:
            return np.zeros((0, self.box.N))
        z = self.standard_normals(rng, indices)
        out = np.ascontiguousarray(self._transform()(z))
        if not np.all(np.isfinite(out)):
            raise SamplerError("non-finite field values")
        return out

    def sample(self, rng: RngSpec, index: int = 0) -> FieldSample:
        values = self.sample_values(rng, [index])[0]
        meta = {}
        if self.kind == INFINITE and self.method == "enlarged":
            meta = {"margin_factor": self.margin_factor, "inner_side": self.inner.n,
                    "C_d": self.C_d}
        return FieldSample(box=self.box, values=values, kind=self.kind, method=self.label,
                           seed=rng.derived_seed(index, TAG_FIELD),
                           master_seed=int(rng.master_seed), replication=int(index),
                           bias_bound=self.bias_bound, meta=meta)


def sample_zero_boundary(box: LatticeBox, rng: RngSpec, index: int = 0,
                         method: str = "factorization") -> FieldSample:
    """Exact sample of the zero-boundary field on ``box``."""
    return FieldPlan(box, ZERO, method).sample(rng, index)


def sample_infinite_box(box: LatticeBox, rng: RngSpec, index: int = 0,
                        method: str = "exact", margin_factor: float = DEFAULT_MARGIN,
                        C_d: float = 1.0, table: GreenTable | None = None,
                        dense_cap: int = DENSE_CAP) -> FieldSample:
    """Infinite-volume field restricted to ``box`` (exact or enlarged-box)."""
    return FieldPlan(box, INFINITE, method, margin_factor=margin_factor, C_d=C_d,
                     table=table, dense_cap=dense_cap).sample(rng, index)


# --------------------------------------------------------------------------
# Markov property


def hitting_distribution(alpha: Sequence[int], conditioning_set: Sequence[Sequence[int]],
                         box: LatticeBox | None = None, green: GreenTable | None = None,
                         solver_spec: SolverSpec | None = None) -> np.ndarray:
    """``h(b) = P_alpha(H_A < inf, S_{H_A} = b)`` for ``b`` in the conditioning set ``A``.

    With ``box=None`` the walk lives on ``Z^d`` and ``h`` solves
    ``g(alpha - c) = sum_b h(b) g(b - c)`` for ``c`` in ``A``. With a box, the
    walk is killed on leaving it and
    ``h(b) = sum_{x ~ b, x in U} g_U(alpha, x) / (2d)`` with ``U = box minus A``.
    """
    A = [tuple(int(c) for c in b) for b in conditioning_set]
    if not A:
        return np.zeros(0)
    d = len(A[0])
    alpha = as_point(alpha, d)
    if alpha in set(A):
        raise ValueError("alpha belongs to the conditioning set")
    if len(set(A)) != len(A):
        raise ValueError("conditioning set has repeated sites")
    if box is None:
        green = green or default_table(d)
        Aarr = np.array(A)
        G = green.values((Aarr[:, None, :] - Aarr[None, :, :]).reshape(-1, d)).reshape(len(A), len(A))
        rhs = green.values(Aarr - np.array(alpha))
        return np.linalg.solve(G, rhs)
    if not box.contains(alpha) or not all(box.contains(b) for b in A):
        raise ValueError("sites must lie in the box")
    mask = np.ones(box.shape, dtype=bool)
    for b in A:
        mask[b] = False
    solver = DirichletSolver(mask, solver_spec)
    col = solver.green_column(alpha)
    h = np.zeros(len(A))
    for i, b in enumerate(A):
        for j in range(d):
            for s in (-1, 1):
                x = list(b)
                x[j] += s
                x = tuple(x)
                if box.contains(x) and mask[x]:
                    h[i] += col[x]
    return h / (2 * d)


def conditional_mean(green: GreenTable | None, box: LatticeBox | None, alpha: Sequence[int],
                     conditioning_set: Sequence[Sequence[int]],
                     boundary_values: Sequence[float]) -> float:
    """``mu_alpha = sum_b h(b) value(b)``: conditional mean of the field at ``alpha``."""
    values = np.asarray(boundary_values, dtype=np.float64)
    if len(values) != len(conditioning_set):
        raise ValueError("one boundary value per conditioning site is required")
    if len(conditioning_set) == 0:
        return 0.0
    h = hitting_distribution(alpha, conditioning_set, box=box, green=green)
    return float(h @ values)
