"""Poisson approximation error terms for exceedance indicators of the field.

For a partition ``I_1, ..., I_k`` of sites and level sets ``R_j`` put
``X_a = 1{(value_a - b_N) / a_N in R_j}``, ``p_a = E X_a`` and
``lambda_j = sum_{a in I_j} p_a``. With dependency neighbourhoods ``B_a``
(l-infinity balls intersected with ``I``)::

    b1 = sum_a sum_{b in B_a} p_a p_b
    b2 = sum_a sum_{b in B_a, b != a} E[X_a X_b]
    TV(W, Z) <= 2 min(1, 1.4 min_j lambda_j^-1/2) (2 b1 + 2 b2 + b3)

``b3`` (conditional-mean deviations) is not computed; a certificate of its
computable ingredients is reported instead and the caller chooses ``b3_used``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate, signal

from . import kernels
from .extremes import NormalizingConstants, Rectangle, threshold
from .green import GreenTable
from .lattice import LatticeBox, linf_ball_offsets
from .normal import interval_prob, upper_tail

RADIUS_RULES = ("paper", "paper_bulk", "fixed")


def paper_radius(N: int, epsilon: float) -> float:
    """``(log N)^(2 + 2 epsilon)``; the bulk variant ``(log N)^(2(1 + epsilon))`` is the same number."""
    return math.log(N) ** (2.0 + 2.0 * epsilon)


@dataclass
class DependencyGraph:
    """Index set, its parts and l-infinity neighbourhoods ``B_a = B(a, radius) cap I``."""

    box: LatticeBox
    labels: np.ndarray              # flat; part index or -1 outside I
    rects: tuple
    radius: float
    rule: str
    epsilon: float
    delta: float | None = None

    @property
    def k(self) -> int:
        return len(self.rects)

    @property
    def index_mask(self) -> np.ndarray:
        return self.labels >= 0

    @property
    def size(self) -> int:
        return int(np.count_nonzero(self.labels >= 0))

    @property
    def offsets(self) -> np.ndarray:
        return linf_ball_offsets(self.radius, self.box.d)

    def neighbors(self, alpha) -> list:
        """Sites of ``B_alpha`` (including ``alpha``) as flat indices."""
        dist = np.abs(self.box.coords() - np.array(alpha)).max(axis=1)
        near = (dist <= math.floor(self.radius + 1e-12)) & (self.labels >= 0)
        return np.flatnonzero(near).tolist()

    def covers_index_set(self) -> bool:
        """True when every ``B_a`` is all of ``I`` (the ball spans the index set)."""
        coords = self.box.coords()[self.index_mask]
        if len(coords) == 0:
            return True
        span = int((coords.max(axis=0) - coords.min(axis=0)).max())
        return math.floor(self.radius + 1e-12) >= span

    def describe(self) -> dict:
        return {"radius": self.radius, "rule": self.rule, "epsilon": self.epsilon,
                "delta": self.delta, "index_size": self.size,
                "rects": [r.to_dict() for r in self.rects]}


def build_neighborhoods(box: LatticeBox, rects: Sequence[Rectangle], epsilon: float,
                        radius: float | None = None, rule: str = "paper",
                        delta: float | None = None) -> DependencyGraph:
    """Index sets ``I_j = n A_j cap V_N`` (or ``cap`` the bulk) and their neighbourhoods.

    ``rule='paper'``/``'paper_bulk'`` uses ``(log N)^(2+2 epsilon)``;
    ``rule='fixed'`` uses the given ``radius``.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    rects = tuple(rects)
    for i in range(len(rects)):
        for j in range(i + 1, len(rects)):
            if rects[i].overlaps(rects[j]):
                raise ValueError(f"rectangles {i} and {j} overlap")
    if rule not in RADIUS_RULES:
        raise ValueError(f"unknown radius rule {rule!r}")
    if rule == "fixed":
        if radius is None or radius < 0:
            raise ValueError("rule 'fixed' needs a nonnegative radius")
        r = float(radius)
    else:
        r = paper_radius(box.N, epsilon)
    labels = -np.ones(box.N, dtype=np.int64)
    region = np.ones(box.N, dtype=bool) if delta is None else box.bulk_mask(delta).ravel()
    for j, rect in enumerate(rects):
        labels[rect.site_mask(box) & region] = j
    return DependencyGraph(box=box, labels=labels, rects=rects, radius=r, rule=rule,
                           epsilon=float(epsilon), delta=delta)


# --------------------------------------------------------------------------
# marginals


def marginal_p(level_set, consts: NormalizingConstants, sigma):
    """``P((value - b_N) / a_N in R)`` for a centered normal with std ``sigma``.

    ``level_set`` is a :class:`Rectangle` (its level part is used) or a
    sequence of ``(x, y]`` intervals. Vectorized over ``sigma``.
    """
    levels = level_set.levels if isinstance(level_set, Rectangle) else level_set
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    total = np.zeros(sigma.shape)
    for x, y in levels:
        total = total + interval_prob(threshold(consts, x), threshold(consts, y), sigma)
    return float(total) if total.ndim == 0 else total


@dataclass
class BernoulliSummary:
    p: np.ndarray                   # flat over the box; 0 outside I
    lambdas: np.ndarray
    level_sets: tuple

    @property
    def lambda_min(self) -> float:
        return float(self.lambdas.min()) if len(self.lambdas) else 0.0


def bernoulli_summary(graph: DependencyGraph, consts: NormalizingConstants,
                      sigma) -> BernoulliSummary:
    """Per-site ``p_a`` for the part containing ``a`` and the part sums ``lambda_j``."""
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (graph.box.N,))
    p = np.zeros(graph.box.N)
    lambdas = np.zeros(graph.k)
    for j, rect in enumerate(graph.rects):
        sites = graph.labels == j
        if sites.any():
            p[sites] = marginal_p(rect, consts, sigma[sites])
        lambdas[j] = float(p[sites].sum())
    return BernoulliSummary(p=p, lambdas=lambdas, level_sets=tuple(r.levels for r in graph.rects))


# --------------------------------------------------------------------------
# bivariate tails


def joint_tail(rho: float, t: float, s: float | None = None, tol: float = 1e-10) -> float:
    """``P(X > t, Y > s)`` for standard normals with correlation ``rho`` (``s`` defaults to ``t``).

    One-dimensional quadrature of ``int_t^inf phi(x) Pbar((s - rho x) / sqrt(1 - rho^2)) dx``.
    """
    if not -1.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [-1, 1]")
    s = t if s is None else s
    if rho == 1.0:
        return float(upper_tail(max(t, s)))
    if rho == -1.0:
        # Y = -X: need t < X < -s
        return float(max(0.0, upper_tail(t) - upper_tail(-s)))
    r = math.sqrt(1.0 - rho * rho)

    def f(x):
        return math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi) * float(upper_tail((s - rho * x) / r))

    # the integrand is negligible past x = t + 40 (and past ~40 for negative t)
    hi = max(t, 0.0) + 40.0
    points = []
    if rho > 0:
        kink = s / rho
        if t < kink < hi:
            points.append(kink)
    val, _ = integrate.quad(f, t, hi, epsabs=0.0, epsrel=tol, limit=400,
                            points=points or None)
    return float(val)


_GL_X, _GL_W = np.polynomial.legendre.leggauss(96)


def orthant_tail(h, k, rho):
    """Vectorized ``P(X > h, Y > k)`` for standard normals with correlation ``rho``.

    Uses ``d/d rho P = phi_2(h, k; rho)`` integrated from 0 with ``r = sin(theta)``::

        P = Pbar(h) Pbar(k) + (1 / 2 pi) int_0^asin(rho) exp(-(h^2 - 2 h k sin + k^2) / (2 cos^2)) dtheta

    The integrand is smooth in ``theta`` so a fixed Gauss-Legendre rule suffices.
    """
    h, k, rho = np.broadcast_arrays(np.asarray(h, np.float64), np.asarray(k, np.float64),
                                    np.asarray(rho, np.float64))
    scalar = h.ndim == 0
    h, k, rho = (np.atleast_1d(v).astype(np.float64) for v in (h, k, rho))
    if np.any(np.abs(rho) > 1):
        raise ValueError("rho must lie in [-1, 1]")
    out = upper_tail(h) * upper_tail(k)
    top = np.arcsin(rho)
    fin = np.isfinite(h) & np.isfinite(k)
    if fin.any():
        hf, kf, tf = h[fin], k[fin], top[fin]
        theta = 0.5 * tf[:, None] * (_GL_X[None, :] + 1.0)
        s, c2 = np.sin(theta), np.cos(theta) ** 2
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            expo = -(hf[:, None] ** 2 - 2 * hf[:, None] * kf[:, None] * s + kf[:, None] ** 2) / (2 * c2)
        f = np.where(c2 > 0, np.exp(expo), 0.0)
        out[fin] = out[fin] + 0.5 * tf * (f @ _GL_W) / (2 * math.pi)
    # rho = +-1 exactly: closed forms
    one = fin & (rho == 1.0)
    out[one] = upper_tail(np.maximum(h[one], k[one]))
    neg = fin & (rho == -1.0)
    out[neg] = np.maximum(0.0, upper_tail(h[neg]) - upper_tail(-k[neg]))
    out = np.clip(out, 0.0, None)
    return float(out[0]) if scalar else out


def joint_interval_prob(levels_a, levels_b, rho, sigma_a, sigma_b, consts):
    """``P(value_a in u_N(R_a), value_b in u_N(R_b))`` by inclusion-exclusion of orthants."""
    total = 0.0
    for xa, ya in levels_a:
        for xb, yb in levels_b:
            corners = 0.0
            for ha, sa in ((xa, 1.0), (ya, -1.0)):
                for hb, sb in ((xb, 1.0), (yb, -1.0)):
                    if ha == math.inf or hb == math.inf:
                        continue
                    hh = threshold(consts, ha) / sigma_a
                    kk = threshold(consts, hb) / sigma_b
                    corners = corners + sa * sb * orthant_tail(hh, kk, rho)
            total = total + corners
    return np.clip(total, 0.0, None)


# --------------------------------------------------------------------------
# b1, b2, b3


def _clipped_offsets(graph: DependencyGraph) -> np.ndarray:
    r = min(graph.radius, graph.box.n - 1)
    return np.ascontiguousarray(linf_ball_offsets(r, graph.box.d), dtype=np.int64)


FFT_WORK = 20_000_000


def _autocorr(x: np.ndarray) -> np.ndarray:
    return signal.fftconvolve(x, x[(slice(None, None, -1),) * x.ndim], mode="full")


def neighborhood_sums(graph: DependencyGraph, p: np.ndarray, offsets: np.ndarray,
                      pair_values: np.ndarray) -> tuple[float, float, int]:
    """``(b1, b2, pairs)`` over the offsets; see :func:`kernels.neighborhood_sums`.

    Small problems use the direct kernel; when ``N * K`` exceeds ``FFT_WORK``
    the per-offset sums come from FFT autocorrelations instead.
    """
    box = graph.box
    if box.N * len(offsets) <= FFT_WORK:
        b1, b2, pairs = kernels.neighborhood_sums(np.ascontiguousarray(p, dtype=np.float64),
                                                  graph.labels, box.shape, offsets,
                                                  np.ascontiguousarray(pair_values, dtype=np.float64))
        return float(b1), float(b2), int(pairs)
    member = (graph.labels >= 0).reshape(box.shape)
    pw = np.where(member, np.asarray(p).reshape(box.shape), 0.0)
    idx = tuple((offsets + box.n - 1).T)
    per_p = _autocorr(pw)[idx]
    per_n = np.rint(_autocorr(member.astype(np.float64))[idx]).astype(np.int64)
    nz = np.any(offsets != 0, axis=1)
    b1 = float(per_p.sum())
    b2 = float(np.sum(per_n[nz] * np.asarray(pair_values)[nz]))
    return b1, b2, int(per_n[nz].sum())


def compute_b1(graph: DependencyGraph, summary: BernoulliSummary) -> float:
    """``sum_a sum_{b in B_a} p_a p_b`` (diagonal included)."""
    offsets = _clipped_offsets(graph)
    b1, _, _ = neighborhood_sums(graph, summary.p, offsets, np.zeros(len(offsets)))
    return b1


def neighbor_pairs(graph: DependencyGraph) -> tuple[np.ndarray, np.ndarray]:
    """Ordered pairs ``(a, b)`` of flat indices with ``b in B_a``, ``b != a``."""
    box = graph.box
    member = (graph.labels >= 0).reshape(box.shape)
    flat = np.arange(box.N).reshape(box.shape)
    A, B = [], []
    for o in _clipped_offsets(graph):
        if not o.any():
            continue
        src = tuple(slice(max(0, -oj), box.n - max(0, oj)) for oj in o)
        dst = tuple(slice(max(0, oj), box.n - max(0, -oj)) for oj in o)
        both = member[src] & member[dst]
        A.append(flat[src][both])
        B.append(flat[dst][both])
    if not A:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(A), np.concatenate(B)


def finite_covariance(box: LatticeBox, cap: int = 4096) -> np.ndarray:
    """Dense zero-boundary covariance ``[g_N(a, b)]`` (inverse of ``I - P``)."""
    from .green import precision_matrix
    if box.N > cap:
        raise ValueError(f"N={box.N} above the dense cap {cap} for finite-volume pair sums")
    Q = precision_matrix(np.ones(box.shape, dtype=bool)).toarray()
    return np.linalg.inv(Q)


def analytic_pair_bound(N: int, kappa: float, z: float) -> float:
    """Per-pair upper bound ``(2-k)^{3/2} k^{-1/2} N^{-2/(2-k)} max{e^{-2z} 1_{z<=0}, e^{-2z/(2-k)} 1_{z>0}}``."""
    branch = math.exp(-2 * z) if z <= 0 else math.exp(-2 * z / (2 - kappa))
    return (2 - kappa) ** 1.5 / math.sqrt(kappa) * N ** (-2.0 / (2 - kappa)) * branch


def compute_b2(graph: DependencyGraph, summary: BernoulliSummary | None, green: GreenTable,
               consts: NormalizingConstants, z: float, finite_volume: bool = False,
               dense_cap: int = 4096) -> tuple[float, float]:
    """``(numeric, analytic)`` bounds on ``b2``.

    ``numeric`` sums ``P(value_a > u_N(z), value_b > u_N(z))`` over neighbour pairs,
    which dominates ``E[X_a X_b]`` whenever every level set lies in ``(z, inf]``.
    Correlations come from ``g(a - b) / g(0)`` or, with ``finite_volume``, from
    the zero-boundary covariance with per-site variances.
    """
    if not math.isfinite(z):
        raise ValueError("z must be finite")
    if green.d != graph.box.d:
        raise ValueError("graph and Green table dimensions differ")
    u = threshold(consts, z)
    offsets = _clipped_offsets(graph)
    if finite_volume:
        G = finite_covariance(graph.box, dense_cap)
        a, b = neighbor_pairs(graph)
        sd = np.sqrt(np.diag(G))
        rho = G[a, b] / (sd[a] * sd[b])
        numeric = float(np.sum(orthant_tail(u / sd[a], u / sd[b], np.clip(rho, -1, 1))))
        pairs = len(a)
    else:
        g = green.values(offsets)
        if not np.all(np.isfinite(g)):
            bad = offsets[~np.isfinite(g)]
            raise ValueError(f"missing Green entries at offsets {bad.tolist()}")
        g0 = green.g0
        t = u / math.sqrt(g0)
        pv = orthant_tail(t, t, np.clip(g / g0, -1, 1))
        _, numeric, pairs = neighborhood_sums(graph, np.zeros(graph.box.N), offsets, pv)
    analytic = pairs * analytic_pair_bound(graph.box.N, green.kappa, z)
    return float(numeric), float(analytic)


@dataclass
class B3Certificate:
    sup_green: float
    var_bound: float
    tail_bound: float

    def to_dict(self) -> dict:
        return asdict(self)


def _far_offsets(graph: DependencyGraph) -> np.ndarray:
    """Offsets ``b - a`` realized by pairs in ``I`` with ``b`` outside ``B_a``."""
    box = graph.box
    # autocorrelation of the index mask counts pairs per offset
    corr = _autocorr((graph.labels >= 0).reshape(box.shape).astype(np.float64))
    realized = corr > 0.5
    idx = np.argwhere(realized) - (box.n - 1)
    far = np.abs(idx).max(axis=1) > math.floor(graph.radius + 1e-12)
    return idx[far]


def b3_certificate(graph: DependencyGraph, green: GreenTable, consts: NormalizingConstants,
                   z: float, epsilon: float | None = None, finite_volume: bool = False,
                   dense_cap: int = 4096) -> B3Certificate:
    """Computable ingredients of the long-range term; not ``b3`` itself.

    ``sup_green`` is ``max_a sup_{b in I minus B_a} g(a, b)``, ``var_bound`` bounds
    ``Var(mu_a)`` by it, and ``tail_bound`` sums the Gaussian tail
    ``2 exp(-u^{-2(1+eps)} / (2 var_bound))`` over ``a in I``.
    """
    eps = graph.epsilon if epsilon is None else epsilon
    if finite_volume:
        G = finite_covariance(graph.box, dense_cap)
        idx = np.flatnonzero(graph.labels >= 0)
        coords = graph.box.coords()[idx]
        cut = math.floor(graph.radius + 1e-12)
        sup = 0.0
        for i, c in zip(idx, coords):
            far = np.abs(coords - c).max(axis=1) > cut
            if far.any():
                sup = max(sup, float(G[i, idx[far]].max()))
    else:
        far = _far_offsets(graph)
        sup = float(green.values(far).max()) if len(far) else 0.0
    if sup <= 0.0:
        return B3Certificate(0.0, 0.0, 0.0)
    u = threshold(consts, z)
    s2 = abs(u) ** (-2.0 * (1.0 + eps))
    tail = graph.size * 2.0 * math.exp(-s2 / (2.0 * sup))
    return B3Certificate(sup_green=sup, var_bound=sup, tail_bound=tail)


def tv_bound(b1: float, b2: float, b3_used: float, lambda_min: float) -> float:
    """``2 min(1, 1.4 lambda_min^{-1/2}) (2 b1 + 2 b2 + b3_used)``."""
    if not lambda_min > 0:
        raise ValueError("lambda_min must be positive")
    if min(b1, b2, b3_used) < 0:
        raise ValueError("b1, b2 and b3_used must be nonnegative")
    return 2.0 * min(1.0, 1.4 / math.sqrt(lambda_min)) * (2 * b1 + 2 * b2 + b3_used)


# --------------------------------------------------------------------------
# report

REPORT_SCHEMA_VERSION = 1
B3_CHOICES = ("zero", "tail_bound")


@dataclass
class SteinChenReport:
    b1: float
    b2_numeric: float
    b2_analytic: float
    b3_certificate: B3Certificate
    lambdas: list
    lambda_min: float
    b3_used: float
    b3_label: str
    tv_bound: float
    inputs: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"schema_version": REPORT_SCHEMA_VERSION, "b1": self.b1,
                "b2_numeric": self.b2_numeric, "b2_analytic": self.b2_analytic,
                "b3_certificate": self.b3_certificate.to_dict(),
                "b3_used": self.b3_used, "b3_used_label": self.b3_label,
                "lambdas": list(self.lambdas), "lambda_min": self.lambda_min,
                "tv_bound": self.tv_bound, "inputs": self.inputs}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def stein_chen_report(box: LatticeBox, rects: Sequence[Rectangle], epsilon: float,
                      green: GreenTable, consts: NormalizingConstants,
                      z: float | None = None, rule: str = "paper", radius: float | None = None,
                      delta: float | None = None, b3_used: str = "zero",
                      finite_volume: bool = False) -> SteinChenReport:
    """Full report for one configuration.

    ``z`` defaults to the smallest lower level over the rectangles. ``b3_used``
    is ``"zero"`` (diagnostic) or ``"tail_bound"`` (the certificate's tail sum).
    When every neighbourhood is all of ``I`` the long-range term vanishes
    exactly and ``b3_used`` is 0 regardless of the choice.
    """
    if b3_used not in B3_CHOICES:
        raise ValueError(f"b3_used must be one of {B3_CHOICES}")
    graph = build_neighborhoods(box, rects, epsilon, radius=radius, rule=rule, delta=delta)
    z = min(r.lower_level for r in graph.rects) if z is None else float(z)
    if finite_volume:
        sigma = np.sqrt(np.diag(finite_covariance(box)))
    else:
        sigma = math.sqrt(green.g0)
    summary = bernoulli_summary(graph, consts, sigma)
    b1 = compute_b1(graph, summary)
    b2n, b2a = compute_b2(graph, summary, green, consts, z, finite_volume=finite_volume)
    cert = b3_certificate(graph, green, consts, z, epsilon, finite_volume=finite_volume)
    exact_zero = graph.covers_index_set()
    if exact_zero:
        b3, label = 0.0, "zero (neighbourhoods cover the index set)"
    elif b3_used == "tail_bound":
        b3, label = cert.tail_bound, "tail_bound"
    else:
        b3, label = 0.0, "zero (diagnostic)"
    lam = summary.lambda_min
    tv = tv_bound(b1, b2n, b3, lam)
    inputs = {"n": box.n, "d": box.d, "N": box.N, "z": z, "epsilon": epsilon,
              "radius_rule": rule, **graph.describe(), "g0": green.g0,
              "consts": consts.to_dict(), "field": "zero" if finite_volume else "infinite"}
    return SteinChenReport(b1=b1, b2_numeric=b2n, b2_analytic=b2a, b3_certificate=cert,
                           lambdas=summary.lambdas.tolist(), lambda_min=lam, b3_used=b3,
                           b3_label=label, tv_bound=tv, inputs=inputs)
