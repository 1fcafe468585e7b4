"""Statistical checks turning replicated samples into pass/fail/diagnostic reports.

Two modes:

``exact_finite_N``
    Monte Carlo against an independent finite-N oracle (tail sums, solver,
    quadrature). These are hard gates with a 4 standard-error tolerance.
``limit``
    Comparison with the N -> infinity values. Diagnostic only.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .extremes import PointPattern, Rectangle, count
from .green import green_finite_column
from .lattice import LatticeBox, as_point
from .normal import pdf, upper_tail
from .rng import TAG_FIELD, TAG_TEST, RngSpec
from .sampler import ZERO, FieldPlan, hitting_distribution

SCHEMA_VERSION = 1
EXACT = "exact_finite_N"
LIMIT = "limit"
PASS, FAIL, DIAGNOSTIC = "pass", "fail", "diagnostic"
N_SE = 4.0
CHI2_LEVEL = 0.01


def _num(x):
    """JSON-safe float (inf/nan become strings)."""
    if x is None:
        return None
    if isinstance(x, (list, tuple)):
        return [_num(v) for v in x]
    x = float(x)
    return x if math.isfinite(x) else str(x)


@dataclass
class TestReport:
    __test__ = False  # not a pytest class

    test: str
    mode: str
    statistic: float
    reference: float
    verdict: str
    M: int
    tolerance: str = ""
    stderr: float | None = None
    p_value: float | None = None
    seeds: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)

    def __post_init__(self):
        if self.mode == LIMIT and self.verdict == FAIL:
            raise ValueError("limit-mode tests cannot hard-fail")

    @property
    def hard(self) -> bool:
        return self.mode == EXACT and self.verdict in (PASS, FAIL)

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "test": self.test, "mode": self.mode,
                "M": self.M, "seeds": self.seeds, "statistic": _num(self.statistic),
                "reference": _num(self.reference), "stderr": _num(self.stderr),
                "p_value": _num(self.p_value), "tolerance": self.tolerance,
                "verdict": self.verdict, "details": _jsonable(self.details),
                "artifacts": list(self.artifacts)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def seeds_record(rng: RngSpec, tag: int, start: int, M: int) -> dict:
    return {"master_seed": int(rng.master_seed), "tag": int(tag),
            "replications": [int(start), int(start + M)], "algorithm": rng.algorithm}


# --------------------------------------------------------------------------
# replication driver


BATCH_ELEMENTS = 20_000_000


def batch_size(plan: FieldPlan, cap: int = 100, elements: int = BATCH_ELEMENTS) -> int:
    """Replications per batch so one batch holds about ``elements`` inner-box values.

    Depends on the plan only, never on the thread count.
    """
    return max(1, min(cap, elements // plan.inner.N))


def replicate(plan: FieldPlan, rng: RngSpec, M: int, reduce: Callable[[np.ndarray], np.ndarray],
              threads: int = 1, batch: int = 100, start: int = 0) -> np.ndarray:
    """Apply ``reduce`` to fields ``start .. start+M-1`` in fixed batches.

    ``reduce`` maps a ``(b, N)`` array of fields to a ``(b, ...)`` array. Batches
    are fixed by ``batch`` alone and results are concatenated in replication
    order, so the output does not depend on ``threads``.
    """
    if M <= 0:
        raise ValueError("M must be positive")
    chunks = [range(i, min(i + batch, start + M)) for i in range(start, start + M, batch)]

    def work(idx):
        return np.asarray(reduce(plan.sample_values(rng, idx)))

    if threads <= 1:
        parts = [work(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, chunks))
    return np.concatenate(parts, axis=0)


# --------------------------------------------------------------------------
# normal tail


def mills_bracket(t: float) -> tuple[float, float]:
    """``((1 - t^-2) phi(t) / t, phi(t) / t)``, which brackets ``P(Z > t)`` for ``t > 0``."""
    if not t > 0:
        raise ValueError("t must be positive")
    upper = float(pdf(t)) / t
    return (1.0 - t ** -2) * upper, upper


# --------------------------------------------------------------------------
# counts


def _chi2_poisson(counts: np.ndarray, mean: float) -> tuple[float, float, int]:
    """Pearson chi-square of counts against Poisson(mean), bins pooled to expected >= 5.

    Returns ``(statistic, p_value, dof)``; ``p_value`` is 1 with fewer than two bins.
    """
    M = len(counts)
    if mean <= 0:
        ok = bool(np.all(counts == 0))
        return (0.0, 1.0 if ok else 0.0, 0)
    kmax = int(max(counts.max(), stats.poisson.ppf(1 - 1e-12, mean))) + 1
    expected = M * stats.poisson.pmf(np.arange(kmax), mean)
    expected[-1] += M * stats.poisson.sf(kmax - 1, mean)
    observed = np.bincount(np.minimum(counts, kmax - 1), minlength=kmax).astype(float)
    # pool from the right, then from the left, until every bin expects >= 5
    bins_o, bins_e = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(observed[::-1], expected[::-1]):
        acc_o += o
        acc_e += e
        if acc_e >= 5.0:
            bins_o.append(acc_o)
            bins_e.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0 and bins_e:
        bins_o[-1] += acc_o
        bins_e[-1] += acc_e
    if len(bins_e) < 2:
        return (0.0, 1.0, 0)
    o = np.array(bins_o)
    e = np.array(bins_e)
    chi2 = float(np.sum((o - e) ** 2 / e))
    dof = len(e) - 1
    return chi2, float(stats.chi2.sf(chi2, dof)), dof


def poisson_count_test(counts: Sequence[int], rect: Rectangle, mode: str = EXACT,
                       oracle_mean: float | None = None, delta: float | None = None,
                       name: str = "poisson_count", seeds: dict | None = None) -> TestReport:
    """Mean count against the exact tail-sum oracle or the limit ``|A| omega(R)``.

    Exact mode passes when ``|mean - oracle| <= 4 SE`` (SE from the sample
    standard deviation; the Poisson value ``sqrt(oracle / M)`` when the sample
    is constant). The dispersion ratio and a chi-square fit against
    ``Poisson(reference)`` at level 0.01 are reported alongside.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if counts.size == 0:
        raise ValueError("empty counts")
    if counts.size < 100:
        raise ValueError("need at least 100 replications")
    if np.any(counts < 0):
        raise ValueError("counts must be nonnegative")
    M = counts.size
    mean = float(counts.mean())
    var = float(counts.var(ddof=1))
    limit_ref = rect.intensity(delta)
    if mode == EXACT:
        if oracle_mean is None:
            raise ValueError("exact mode needs oracle_mean")
        ref = float(oracle_mean)
    elif mode == LIMIT:
        ref = limit_ref
    else:
        raise ValueError(f"unknown mode {mode!r}")
    se = math.sqrt(var / M) if var > 0 else math.sqrt(max(ref, 0.0) / M)
    chi2, p, dof = _chi2_poisson(counts, ref)
    details = {"variance": var, "dispersion": var / mean if mean > 0 else None,
               "chi2": chi2, "chi2_dof": dof, "chi2_pass": p >= CHI2_LEVEL,
               "limit_reference": limit_ref, "rect": rect.to_dict(), "delta": delta}
    if mode == EXACT:
        ok = abs(mean - ref) <= N_SE * se if se > 0 else mean == ref
        verdict = PASS if ok else FAIL
        tol = "|mean - oracle| <= 4 SE"
    else:
        verdict = DIAGNOSTIC
        tol = "diagnostic (no finite-N rate); |mean - limit| reported"
        details["abs_deviation"] = abs(mean - ref)
    return TestReport(test=name, mode=mode, statistic=mean, reference=ref, verdict=verdict,
                      M=M, tolerance=tol, stderr=se, p_value=p, seeds=seeds or {},
                      details=details)


# --------------------------------------------------------------------------
# avoidance


def _check_disjoint(rects):
    for i in range(len(rects)):
        for j in range(i + 1, len(rects)):
            if rects[i].overlaps(rects[j]):
                raise ValueError(f"rectangles {i} and {j} overlap")


def avoidance_limit(rects: Sequence[Rectangle], delta: float | None = None) -> float:
    """``exp(-sum_j |A_j| omega(R_j))``."""
    return math.exp(-sum(r.intensity(delta) for r in rects))


def avoidance_test(patterns: Sequence[PointPattern] | None, rects: Sequence[Rectangle],
                   bernoulli_reference: float | None = None, tv_bound: float | None = None,
                   zero_flags: Sequence[bool] | None = None, delta: float | None = None,
                   name: str = "avoidance", seeds: dict | None = None) -> TestReport:
    """Frequency of ``{all counts zero}`` against its references.

    With ``bernoulli_reference`` (``prod_a (1 - p_a)``) and ``tv_bound`` the test
    is exact-mode: pass when ``|freq - reference| <= tv_bound + 4 SE``.
    Otherwise it is a limit-mode diagnostic against ``exp(-sum |A_j| omega(R_j))``.
    ``zero_flags`` may replace ``patterns`` when counts were taken in batch.
    """
    rects = list(rects)
    _check_disjoint(rects)
    if zero_flags is None:
        if patterns is None:
            raise ValueError("need patterns or zero_flags")
        zero_flags = [all(count(p, r) == 0 for r in rects) for p in patterns]
    flags = np.asarray(zero_flags, dtype=bool)
    M = flags.size
    if M < 100:
        raise ValueError("need at least 100 replications")
    f = float(flags.mean())
    limit_ref = avoidance_limit(rects, delta)
    details = {"limit_reference": limit_ref, "limit_deviation": abs(f - limit_ref),
               "rects": [r.to_dict() for r in rects]}
    if bernoulli_reference is not None:
        ref = float(bernoulli_reference)
        p_se = f if 0 < f < 1 else ref
        se = math.sqrt(p_se * (1 - p_se) / M)
        radius = (tv_bound or 0.0) + N_SE * se
        verdict = PASS if abs(f - ref) <= radius else FAIL
        details.update({"tv_bound": tv_bound, "radius": radius})
        return TestReport(test=name, mode=EXACT, statistic=f, reference=ref, verdict=verdict,
                          M=M, tolerance="|freq - prod(1 - p)| <= tv_bound + 4 SE",
                          stderr=se, seeds=seeds or {}, details=details)
    se = math.sqrt(limit_ref * (1 - limit_ref) / M)
    return TestReport(test=name, mode=LIMIT, statistic=f, reference=limit_ref,
                      verdict=DIAGNOSTIC, M=M, tolerance="diagnostic", stderr=se,
                      seeds=seeds or {}, details=details)


# --------------------------------------------------------------------------
# Gumbel


def gumbel_cdf(z):
    return np.exp(-np.exp(-np.asarray(z, dtype=np.float64)))


def gumbel_test(max_samples: Sequence[float], name: str = "gumbel",
                seeds: dict | None = None) -> TestReport:
    """Kolmogorov-Smirnov distance of rescaled maxima to ``exp(-e^{-z})`` (diagnostic)."""
    x = np.asarray(max_samples, dtype=np.float64)
    if x.size < 100:
        raise ValueError("need at least 100 samples")
    res = stats.kstest(x, gumbel_cdf)
    return TestReport(test=name, mode=LIMIT, statistic=float(res.statistic), reference=0.0,
                      verdict=DIAGNOSTIC, M=int(x.size), tolerance="diagnostic (KS distance)",
                      p_value=float(res.pvalue), seeds=seeds or {},
                      details={"mean": float(x.mean()), "sd": float(x.std(ddof=1))})


def gumbel_trend(ks_small: float, ks_large: float, slack: float = 0.05) -> bool:
    """``KS(larger n) <= KS(smaller n) + slack``."""
    return ks_large <= ks_small + slack


# --------------------------------------------------------------------------
# total variation


def poisson_tv(lam1: float, lam2: float, tol: float = 1e-15) -> float:
    """Exact total variation between ``Poisson(lam1)`` and ``Poisson(lam2)``."""
    hi = int(stats.poisson.isf(tol, max(lam1, lam2))) + 10
    k = np.arange(hi + 1)
    return 0.5 * float(np.abs(stats.poisson.pmf(k, lam1) - stats.poisson.pmf(k, lam2)).sum())


def empirical_tv(count_vectors, lambdas: Sequence[float], tv_bound: float | None = None,
                 name: str = "empirical_tv", seeds: dict | None = None) -> TestReport:
    """Plug-in total variation between empirical count vectors and the product Poisson law.

    ``0.5 * [sum over observed vectors |emp - pmf| + (1 - sum over observed pmf)]``;
    the second term is the Poisson mass on vectors never observed. Plug-in
    estimates are biased upward by roughly ``sqrt(support / M)``.
    """
    lambdas = [float(v) for v in lambdas]
    k = len(lambdas)
    if not 1 <= k <= 3:
        raise ValueError("supported for 1 <= k <= 3 parts")
    if any(not 0 <= v <= 10 for v in lambdas):
        raise ValueError("supported for 0 <= lambda_j <= 10")
    cv = np.asarray(count_vectors, dtype=np.int64).reshape(-1, k)
    M = cv.shape[0]
    if M < 1000:
        raise ValueError("need at least 1000 replications")
    uniq, freq = np.unique(cv, axis=0, return_counts=True)
    emp = freq / M
    pmf = np.prod([stats.poisson.pmf(uniq[:, j], lambdas[j]) for j in range(k)], axis=0)
    tv = 0.5 * (float(np.abs(emp - pmf).sum()) + max(0.0, 1.0 - float(pmf.sum())))
    support = int(len(uniq))
    details = {"lambdas": lambdas, "observed_support": support,
               "plugin_bias_scale": math.sqrt(support / M), "tv_bound": tv_bound}
    if tv_bound is not None:
        details["within_bound_plus_bias"] = tv <= tv_bound + math.sqrt(support / M)
    return TestReport(test=name, mode=LIMIT, statistic=tv, reference=0.0, verdict=DIAGNOSTIC,
                      M=M, tolerance="diagnostic (plug-in TV)", seeds=seeds or {},
                      details=details)


# --------------------------------------------------------------------------
# Markov property


def _sphere(box: LatticeBox, alpha, radius: int) -> list:
    """Sites of the box at l-infinity distance exactly ``radius`` from ``alpha``."""
    coords = box.coords()
    dist = np.abs(coords - np.array(alpha)).max(axis=1)
    return [tuple(int(c) for c in x) for x in coords[dist == radius]]


def markov_property_test(box: LatticeBox, alpha, conditioning_radius: int, M: int,
                         rng: RngSpec | None = None, threads: int = 1, batch: int = 250,
                         method: str = "factorization", name: str = "markov_property",
                         start: int = 0) -> TestReport:
    """Residual ``value_alpha - mu_alpha`` after conditioning on the l-infinity sphere.

    The conditioning set is the sphere of radius ``r`` about ``alpha``; the
    residual lives on ``U``, the open ball of radius ``r - 1``, with variance
    ``g_U(alpha)``. Pass requires the variance within 4 SE of ``g_U(alpha)``,
    the mean within 4 SE of 0 and every residual/conditioning correlation
    within 4 SE of 0. If no site of the box is at distance ``>= r`` the set is
    empty and the oracle is ``g_N(alpha)``.
    """
    alpha = as_point(alpha, box.d)
    if not box.contains(alpha):
        raise ValueError("alpha outside the box")
    r = int(conditioning_radius)
    if r < 1:
        raise ValueError("conditioning radius must be >= 1")
    if M < 1000:
        raise ValueError("need at least 1000 replications")
    rng = rng or RngSpec()
    lo = np.array(alpha) - r
    hi = np.array(alpha) + r
    inside = bool(np.all(lo >= 0) and np.all(hi < box.n))
    far = np.abs(box.coords() - np.array(alpha)).max(axis=1) >= r
    if inside:
        A = _sphere(box, alpha, r)
        h = hitting_distribution(alpha, A, box=box)
        inner = LatticeBox(2 * r - 1, box.d)
        centre = (r - 1,) * box.d
        oracle = float(green_finite_column(inner, centre)[inner.index(centre)])
        geometry = "sphere"
    elif not far.any():
        A, h = [], np.zeros(0)
        oracle = float(green_finite_column(box, alpha)[box.index(alpha)])
        geometry = "empty"
    else:
        raise ValueError("conditioning sphere is neither inside the box nor empty")
    a_idx = box.index(alpha)
    A_idx = np.array([box.index(b) for b in A], dtype=np.int64)

    def reduce(values):
        resid = values[:, a_idx] - (values[:, A_idx] @ h if len(A_idx) else 0.0)
        return np.column_stack([resid, values[:, A_idx]])

    plan = FieldPlan(box, ZERO, method)
    data = replicate(plan, rng, M, reduce, threads=threads, batch=batch, start=start)
    resid = data[:, 0]
    cond = data[:, 1:]
    var = float(resid.var(ddof=1))
    m4 = float(np.mean((resid - resid.mean()) ** 4))
    var_se = math.sqrt(max(m4 - var ** 2, 0.0) / M)
    mean = float(resid.mean())
    mean_se = math.sqrt(var / M)
    if cond.shape[1]:
        rc = resid - resid.mean()
        cc = cond - cond.mean(axis=0)
        corr = (rc @ cc) / math.sqrt(float(rc @ rc)) / np.sqrt(np.sum(cc * cc, axis=0))
        corr_se = 1.0 / math.sqrt(M)
        max_corr = float(np.abs(corr).max())
    else:
        corr_se, max_corr = 1.0 / math.sqrt(M), 0.0
    ok_var = abs(var - oracle) <= N_SE * var_se
    ok_mean = abs(mean) <= N_SE * mean_se
    ok_corr = max_corr <= N_SE * corr_se
    verdict = PASS if (ok_var and ok_mean and ok_corr) else FAIL
    return TestReport(
        test=name, mode=EXACT, statistic=var, reference=oracle, verdict=verdict, M=M,
        tolerance="variance, mean and correlations within 4 SE", stderr=var_se,
        seeds=seeds_record(rng, TAG_FIELD, start, M),
        details={"alpha": list(alpha), "radius": r, "geometry": geometry,
                 "conditioning_sites": len(A), "residual_mean": mean, "mean_se": mean_se,
                 "max_abs_corr": max_corr, "corr_se": corr_se, "variance_pass": ok_var,
                 "mean_pass": ok_mean, "corr_pass": ok_corr, "n": box.n, "d": box.d})
