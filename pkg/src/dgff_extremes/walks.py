"""Monte Carlo of simple random walk: independent checks on the Green's functions.

None of these routines touch the Fourier quadrature or the sparse solvers,
so they serve as oracles for both.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import special

from . import kernels
from .lattice import LatticeBox, as_point, check_dimension
from .rng import TAG_WALK, RngSpec


@dataclass
class MCEstimate:
    estimate: float
    stderr: float
    samples: int
    details: dict


def one_dim_return_table(T: int) -> np.ndarray:
    """``q[m] = P(1-d simple walk is at 0 after m steps)``, ``m = 0..T``."""
    q = np.zeros(T + 1)
    q[0] = 1.0
    for m in range(2, T + 1, 2):
        q[m] = q[m - 2] * (m - 1) / m
    return q


def exact_return_probabilities(k: int, d: int) -> list[Fraction]:
    """``P_0(S_n = 0)`` for ``n = 0..k`` by counting closed walks.

    The number of closed walks of length ``2m`` is
    ``sum_{m_1+...+m_d=m} (2m)! / prod (m_j!)^2``.
    """
    d = check_dimension(d)
    out = []
    for n in range(k + 1):
        if n % 2:
            out.append(Fraction(0))
            continue
        m = n // 2
        count = 0
        for parts in itertools.product(range(m + 1), repeat=d - 1):
            last = m - sum(parts)
            if last < 0:
                continue
            denom = math.prod(math.factorial(x) ** 2 for x in (*parts, last))
            count += math.factorial(n) // denom
        out.append(Fraction(count, (2 * d) ** n))
    return out


def local_clt_tail(T: int, d: int) -> float:
    """``sum_{n > T} P_0(S_n = 0)`` from the local limit theorem.

    ``P_0(S_{2m} = 0) ~ 2 (d / (4 pi m))^(d/2)``; relative error ``O(1/m)``.
    """
    m0 = T // 2 + 1
    return float(2.0 * (d / (4.0 * math.pi)) ** (d / 2.0) * special.zeta(d / 2.0, m0))


def green0_coordinate_mc(d: int = 3, samples: int = 40_000, steps: int = 10_000,
                         exact_head: int = 160, rng: RngSpec | None = None,
                         batch: int = 500) -> MCEstimate:
    """Estimate ``g(0)`` by conditional Monte Carlo over the walk's coordinate choices.

    Given which coordinate moves at each step, the coordinates are independent
    one-dimensional walks, so ``P(S_n = 0 | choices) = prod_j q(N_j(n))`` with
    ``N_j(n)`` the number of moves of coordinate ``j``. Only the coordinate
    sequence is sampled; the signs are integrated exactly. Terms with
    ``n <= exact_head`` are replaced by their exact expectations and the
    remainder past ``steps`` by the local-CLT tail.
    """
    d = check_dimension(d)
    if exact_head >= steps:
        raise ValueError("exact_head must be smaller than steps")
    rng = rng or RngSpec()
    gen = rng.generator(0, TAG_WALK)
    qtable = one_dim_return_table(steps)
    head = float(sum(exact_return_probabilities(exact_head, d)))
    tail = local_clt_tail(steps, d)
    series = []
    done = 0
    while done < samples:
        b = min(batch, samples - done)
        choices = gen.integers(0, d, size=(b, steps), dtype=np.uint8)
        series.append(kernels.coordinate_return_series(choices, qtable, d, exact_head))
        done += b
    series = np.concatenate(series)
    mid = float(series.mean())
    se = float(series.std(ddof=1) / math.sqrt(samples))
    g0 = head + mid + tail
    return MCEstimate(estimate=g0, stderr=se, samples=samples,
                      details={"head": head, "middle": mid, "tail": tail,
                               "steps": steps, "exact_head": exact_head,
                               "return_probability": 1.0 - 1.0 / g0,
                               "return_probability_se": se / g0 ** 2})


def return_probability_mc(d: int = 3, walks: int = 100_000, steps: int = 2_000,
                          rng: RngSpec | None = None, batch: int = 2_000) -> MCEstimate:
    """Plain Monte Carlo of the return probability ``u = P_0(return to 0)``.

    Walks are truncated after ``steps`` steps. Returns after the cut are added
    back with ``f_n ~ (1 - u)^2 P_0(S_n = 0)``, solved jointly with the estimate.
    The estimate's ``details`` carry ``g0 = 1 / (1 - u)`` and its standard error.
    """
    d = check_dimension(d)
    rng = rng or RngSpec()
    gen = rng.generator(1, TAG_WALK)
    returned = 0
    done = 0
    while done < walks:
        b = min(batch, walks - done)
        st = gen.integers(0, 2 * d, size=(b, steps), dtype=np.uint8)
        returned += int(np.count_nonzero(kernels.walk_first_returns(st, d)))
        done += b
    u_cut = returned / walks
    tail = local_clt_tail(steps, d)
    u = u_cut
    for _ in range(50):
        u = u_cut + (1.0 - u) ** 2 * tail
    se = math.sqrt(max(u_cut * (1 - u_cut), 1e-300) / walks)
    g0 = 1.0 / (1.0 - u)
    return MCEstimate(estimate=u, stderr=se, samples=walks,
                      details={"truncated_fraction": u_cut, "tail_correction": u - u_cut,
                               "g0": g0, "g0_se": se * g0 ** 2, "steps": steps})


def killed_walk_green(box: LatticeBox, alpha, beta, walks: int = 20_000,
                      rng: RngSpec | None = None, max_steps: int | None = None,
                      batch: int = 1_000) -> MCEstimate:
    """Mean number of visits to ``alpha`` by a walk from ``beta`` killed outside ``box``.

    The expectation is ``g_{V_N}(alpha, beta)``.
    """
    alpha = as_point(alpha, box.d)
    beta = as_point(beta, box.d)
    if not (box.contains(alpha) and box.contains(beta)):
        raise ValueError("alpha and beta must lie in the box")
    rng = rng or RngSpec()
    gen = rng.generator(2, TAG_WALK)
    L = max_steps or 40 * box.n ** 2 * box.d
    visits = []
    unfinished = 0
    done = 0
    while done < walks:
        b = min(batch, walks - done)
        st = gen.integers(0, 2 * box.d, size=(b, L), dtype=np.uint8)
        v, u = kernels.killed_walk_visits(st, np.array(beta), np.array(alpha), box.n, box.d)
        visits.append(v)
        unfinished += u
        done += b
    if unfinished:
        raise RuntimeError(f"{unfinished} walks did not leave the box within {L} steps")
    visits = np.concatenate(visits).astype(np.float64)
    return MCEstimate(estimate=float(visits.mean()),
                      stderr=float(visits.std(ddof=1) / math.sqrt(walks)),
                      samples=walks, details={"max_steps": L})
