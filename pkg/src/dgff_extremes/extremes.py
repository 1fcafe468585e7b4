"""Normalizing constants and the rescaled extremal point pattern.

Each site ``a`` of the source region contributes the point
``(a / n, (value_a - b_N) / a_N)`` of ``[0, 1]^d x R``.
"""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np

from .lattice import LatticeBox
from .normal import interval_prob

INF = math.inf


@dataclass(frozen=True)
class NormalizingConstants:
    N: int
    g0: float
    b_N: float
    a_N: float

    def threshold(self, z):
        return threshold(self, z)

    def to_dict(self) -> dict:
        return {"N": self.N, "g0": self.g0, "b_N": self.b_N, "a_N": self.a_N}


def normalizing_constants(N: int, g0: float) -> NormalizingConstants:
    """``b_N = sqrt(g0) [sqrt(2 log N) - (log log N + log 4 pi) / (2 sqrt(2 log N))]``, ``a_N = g0 / b_N``."""
    if int(N) <= 2:
        raise ValueError(f"N={N} too small: need N >= 3 so that log log N > 0")
    if not g0 > 0:
        raise ValueError("g0 must be positive")
    L = math.log(N)
    s = math.sqrt(2.0 * L)
    b = math.sqrt(g0) * (s - (math.log(L) + math.log(4.0 * math.pi)) / (2.0 * s))
    return NormalizingConstants(N=int(N), g0=float(g0), b_N=b, a_N=g0 / b)


def threshold(consts: NormalizingConstants, z):
    """``u_N(z) = a_N z + b_N``; infinite levels map to infinite thresholds."""
    z = np.asarray(z, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        u = consts.a_N * z + consts.b_N
    u = np.where(np.isinf(z), z, u)
    return float(u) if u.ndim == 0 else u


@dataclass(frozen=True)
class Rectangle:
    """``A x R``: ``A`` a product of ``[lo, hi)`` intervals, ``R`` a union of ``(x, y]``."""

    space: Tuple[Tuple[float, float], ...]
    levels: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        space = tuple((float(lo), float(hi)) for lo, hi in self.space)
        levels = tuple(sorted((float(x), float(y)) for x, y in self.levels))
        for lo, hi in space:
            if not 0.0 <= lo <= hi <= 1.0:
                raise ValueError(f"space interval [{lo}, {hi}) not inside [0, 1]")
        for x, y in levels:
            if not (x <= y and y > -INF and x < INF):
                raise ValueError(f"invalid level interval ({x}, {y}]")
        for (x1, y1), (x2, y2) in zip(levels, levels[1:]):
            if x2 < y1:
                raise ValueError("level intervals overlap")
        object.__setattr__(self, "space", space)
        object.__setattr__(self, "levels", levels)

    @classmethod
    def full(cls, d: int, levels=((-INF, INF),)) -> "Rectangle":
        return cls(space=((0.0, 1.0),) * d, levels=tuple(levels))

    @property
    def d(self) -> int:
        return len(self.space)

    @property
    def volume(self) -> float:
        return float(np.prod([hi - lo for lo, hi in self.space]))

    @property
    def lower_level(self) -> float:
        return min((x for x, _ in self.levels), default=INF)

    def omega(self) -> float:
        """``int_R e^-z dz`` with ``e^-inf = 0``."""
        return float(sum(math.exp(-x) - (math.exp(-y) if y < INF else 0.0)
                         for x, y in self.levels))

    def intensity(self, delta: float | None = None) -> float:
        """Limit mean ``|A| omega(R)``; with ``delta``, ``|A cap [delta, 1-delta]^d| omega(R)``."""
        return self.space_volume(delta) * self.omega()

    def space_volume(self, delta: float | None = None) -> float:
        if delta is None:
            return self.volume
        return float(np.prod([max(0.0, min(hi, 1 - delta) - max(lo, delta))
                              for lo, hi in self.space]))

    def space_contains(self, locations: np.ndarray) -> np.ndarray:
        locations = np.asarray(locations, dtype=np.float64).reshape(-1, self.d)
        lo = np.array([a for a, _ in self.space])
        hi = np.array([b for _, b in self.space])
        return np.all((locations >= lo) & (locations < hi), axis=1)

    def level_contains(self, heights) -> np.ndarray:
        h = np.asarray(heights, dtype=np.float64)
        out = np.zeros(h.shape, dtype=bool)
        for x, y in self.levels:
            out |= (h > x) & (h <= y)
        return out

    def site_mask(self, box: LatticeBox) -> np.ndarray:
        """Flat boolean mask of the sites ``a`` with ``a / n`` in ``A``."""
        return self.space_contains(box.coords() / box.n)

    def overlaps(self, other: "Rectangle") -> bool:
        return all(max(a0, b0) < min(a1, b1)
                   for (a0, a1), (b0, b1) in zip(self.space, other.space))

    def to_dict(self) -> dict:
        enc = lambda v: v if math.isfinite(v) else ("inf" if v > 0 else "-inf")
        return {"space": [list(s) for s in self.space],
                "levels": [[enc(x), enc(y)] for x, y in self.levels]}


def source_mask(box: LatticeBox, source="full_box") -> np.ndarray:
    """Flat mask of the source region: ``"full_box"`` or ``("bulk", delta)``."""
    if source in ("full_box", None):
        return np.ones(box.N, dtype=bool)
    kind, delta = source
    if kind != "bulk":
        raise ValueError(f"unknown source {source!r}")
    return box.bulk_mask(delta).ravel()


def source_label(source) -> str:
    return "full_box" if source in ("full_box", None) else f"bulk({source[1]:g})"


@dataclass
class PointPattern:
    locations: np.ndarray           # (K, d) in [0, 1)^d
    heights: np.ndarray             # (K,)
    source: str
    consts: NormalizingConstants
    n: int
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.heights)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = self.locations.shape[1]
        w.writerow([f"x{j + 1}" for j in range(d)] + ["height"])
        for loc, h in zip(self.locations, self.heights):
            w.writerow([repr(float(x)) for x in loc] + [repr(float(h))])
        return buf.getvalue()

    def sidecar(self) -> dict:
        return {"n": self.n, "d": int(self.locations.shape[1]), "source": self.source,
                "consts": self.consts.to_dict(), **self.meta}

    def write(self, csv_path, json_path) -> None:
        with open(csv_path, "w") as fh:
            fh.write(self.to_csv())
        with open(json_path, "w") as fh:
            json.dump(self.sidecar(), fh, indent=1, sort_keys=True)


def read_pattern_csv(text: str) -> tuple[np.ndarray, np.ndarray]:
    rows = list(csv.reader(io.StringIO(text)))[1:]
    arr = np.array([[float(x) for x in r] for r in rows]).reshape(len(rows), -1)
    return arr[:, :-1], arr[:, -1]


def _check_consts(box: LatticeBox, consts: NormalizingConstants):
    if consts.N != box.N:
        raise ValueError(f"constants built for N={consts.N}, field has N={box.N}")


def extract_points(field, consts: NormalizingConstants, source="full_box") -> PointPattern:
    """Rescaled points ``(a / n, (value_a - b_N) / a_N)`` over the source sites."""
    box = field.box
    _check_consts(box, consts)
    mask = source_mask(box, source)
    if not mask.any():
        warnings.warn(f"source {source_label(source)} is empty; returning an empty pattern")
    locations = box.coords()[mask] / box.n
    heights = (np.asarray(field.values)[mask] - consts.b_N) / consts.a_N
    meta = {"seed": getattr(field, "seed", None), "kind": getattr(field, "kind", None)}
    return PointPattern(locations=locations, heights=heights, source=source_label(source),
                        consts=consts, n=box.n, meta=meta)


def count(pattern: PointPattern, rect: Rectangle) -> int:
    """Number of points with location in ``A`` and height in ``R``."""
    if len(pattern) == 0:
        return 0
    return int(np.count_nonzero(rect.space_contains(pattern.locations)
                                & rect.level_contains(pattern.heights)))


def count_batch(values: np.ndarray, box: LatticeBox, consts: NormalizingConstants,
                rect: Rectangle, source="full_box") -> np.ndarray:
    """``count`` for each row of a ``(M, N)`` array of fields, without building patterns."""
    _check_consts(box, consts)
    sites = rect.site_mask(box) & source_mask(box, source)
    heights = (np.asarray(values)[:, sites] - consts.b_N) / consts.a_N
    return rect.level_contains(heights).sum(axis=1)


def max_rescaled(field, consts: NormalizingConstants) -> float:
    """``(max_a value_a - b_N) / a_N``."""
    _check_consts(field.box, consts)
    return float((np.max(field.values) - consts.b_N) / consts.a_N)


def expected_count(box: LatticeBox, consts: NormalizingConstants, rect: Rectangle,
                   sigma, source="full_box") -> float:
    """Exact mean count: ``sum_a sum_(x,y] P(value_a in (u_N(x), u_N(y)])``.

    ``sigma`` is the per-site standard deviation (scalar or flat array).
    """
    _check_consts(box, consts)
    sites = rect.site_mask(box) & source_mask(box, source)
    sig = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (box.N,))[sites]
    total = 0.0
    for x, y in rect.levels:
        total += float(np.sum(interval_prob(threshold(consts, x), threshold(consts, y), sig)))
    return total
