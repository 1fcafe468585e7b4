"""Standard normal density and upper tail."""
import math

import numpy as np
from scipy import special

_SQRT2PI = math.sqrt(2.0 * math.pi)


def pdf(t):
    t = np.asarray(t, dtype=np.float64)
    return np.exp(-0.5 * t * t) / _SQRT2PI


def upper_tail(t):
    """``P(N(0,1) > t)``; ``+inf`` maps to 0 and ``-inf`` to 1."""
    # erfc keeps full relative accuracy deep in the tail
    return 0.5 * special.erfc(np.asarray(t, dtype=np.float64) / math.sqrt(2.0))


def interval_prob(lo, hi, sigma=1.0):
    """``P(sigma Z in (lo, hi])`` for possibly infinite endpoints."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    return np.maximum(upper_tail(lo / sigma) - upper_tail(hi / sigma), 0.0)
