import math
import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from dgff_extremes.extremes import (INF, Rectangle, count, count_batch, expected_count,
                                    extract_points, max_rescaled, normalizing_constants,
                                    read_pattern_csv, threshold)
from dgff_extremes.lattice import LatticeBox
from dgff_extremes.normal import upper_tail
from dgff_extremes.rng import RngSpec
from dgff_extremes.sampler import FieldSample, FieldPlan, INFINITE

G0 = 1.5163860591519804


def mp_constants(N, g0):
    mpmath.mp.dps = 40
    L = mpmath.log(N)
    s = mpmath.sqrt(2 * L)
    b = mpmath.sqrt(g0) * (s - (mpmath.log(L) + mpmath.log(4 * mpmath.pi)) / (2 * s))
    return float(b), float(mpmath.mpf(g0) / b)


def const_field(box, values):
    return FieldSample(box=box, values=np.asarray(values, dtype=float), kind="test",
                       method="none", seed=0, master_seed=0, replication=0)


@pytest.mark.parametrize("N", [27, 4096, 32768, 10 ** 6])
def test_constants_match_high_precision(N):
    c = normalizing_constants(N, G0)
    b, a = mp_constants(N, G0)
    assert c.b_N == pytest.approx(b, rel=1e-14)
    assert c.a_N == pytest.approx(a, rel=1e-14)
    assert c.a_N * c.b_N == pytest.approx(G0, rel=1e-15)


def test_constants_n4096():
    c = normalizing_constants(4096, G0)
    # published roundings, good to about 3e-5 relative
    assert c.b_N == pytest.approx(4.3208, rel=1e-4)
    assert c.a_N == pytest.approx(0.35095, rel=1e-4)
    # frozen from the 40-digit evaluation above
    assert c.b_N == pytest.approx(4.320670631623801, abs=1e-13)
    assert threshold(c, 1) == pytest.approx(4.6717, rel=1e-4)
    assert threshold(c, 0) == c.b_N


def test_constants_monotone_in_N():
    c1, c2 = normalizing_constants(4096, G0), normalizing_constants(32768, G0)
    assert c2.b_N > c1.b_N and c2.a_N < c1.a_N


@pytest.mark.parametrize("N,g0", [(2, 1.0), (1, 1.0), (100, 0.0)])
def test_constants_errors(N, g0):
    with pytest.raises(ValueError):
        normalizing_constants(N, g0)


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_threshold_affine(z1, z2):
    c = normalizing_constants(4096, G0)
    assert threshold(c, z2) - threshold(c, z1) == pytest.approx(c.a_N * (z2 - z1), abs=1e-12)


def test_threshold_infinite_levels():
    c = normalizing_constants(4096, G0)
    assert threshold(c, INF) == INF and threshold(c, -INF) == -INF


def test_rectangle_validation():
    with pytest.raises(ValueError):
        Rectangle(((0.0, 1.2),), ((0, INF),))
    with pytest.raises(ValueError):
        Rectangle(((0, 1),), ((1, 0),))
    with pytest.raises(ValueError):
        Rectangle(((0, 1),), ((0, 2), (1, 3)))
    r = Rectangle.full(3, ((-1, 0), (0, INF)))
    assert r.omega() == pytest.approx(math.e)
    assert r.intensity(0.25) == pytest.approx(0.125 * math.e)


def test_constant_field_heights_zero():
    box = LatticeBox(4)
    c = normalizing_constants(box.N, G0)
    pat = extract_points(const_field(box, np.full(box.N, c.b_N)), c)
    assert len(pat) == box.N and np.all(pat.heights == 0)
    assert max_rescaled(const_field(box, np.full(box.N, c.b_N)), c) == 0


def test_single_spike():
    box = LatticeBox(4)
    c = normalizing_constants(box.N, G0)
    v = np.full(box.N, -1e6)
    v[17] = c.b_N + c.a_N
    pat = extract_points(const_field(box, v), c)
    above = Rectangle.full(3, ((0, INF),))
    assert count(pat, above) == 1
    assert pat.heights[17] == pytest.approx(1.0, abs=1e-12)
    assert np.array_equal(pat.locations[17], box.point(17) / np.float64(4))


def test_counts_full_and_empty():
    box = LatticeBox(4)
    c = normalizing_constants(box.N, G0)
    pat = extract_points(const_field(box, np.random.default_rng(0).normal(size=box.N)), c)
    assert count(pat, Rectangle.full(3)) == box.N
    assert count(pat, Rectangle(((0.5, 0.5), (0, 1), (0, 1)), ((-INF, INF),))) == 0


def test_bulk_source_and_empty_warning(monkeypatch):
    box = LatticeBox(8)
    c = normalizing_constants(box.N, G0)
    f = const_field(box, np.random.default_rng(1).normal(size=box.N))
    full = extract_points(f, c)
    bulk = extract_points(f, c, ("bulk", 0.25))
    keep = box.bulk_mask(0.25).ravel()
    assert np.array_equal(bulk.heights, full.heights[keep])
    assert bulk.source == "bulk(0.25)"
    # for delta < 1/2 the bulk always holds the central sites, so force an empty mask
    import dgff_extremes.extremes as ex
    monkeypatch.setattr(ex, "source_mask", lambda b, s: np.zeros(b.N, dtype=bool))
    with pytest.warns(UserWarning, match="empty"):
        empty = extract_points(f, c, ("bulk", 0.49))
    assert len(empty) == 0 and count(empty, Rectangle.full(3)) == 0


def test_additivity_and_monotonicity():
    box = LatticeBox(6)
    c = normalizing_constants(box.N, G0)
    rng = np.random.default_rng(2)
    X = rng.normal(scale=1.5, size=(20, box.N)) + c.b_N - 0.5
    halves = [Rectangle(((0, 0.5), (0, 1), (0, 1)), ((0, INF),)),
              Rectangle(((0.5, 1), (0, 1), (0, 1)), ((0, INF),))]
    union = Rectangle.full(3, ((0, INF),))
    total = count_batch(X, box, c, union)
    assert np.array_equal(sum(count_batch(X, box, c, r) for r in halves), total)
    split = [Rectangle.full(3, ((0, 1),)), Rectangle.full(3, ((1, INF),))]
    assert np.array_equal(sum(count_batch(X, box, c, r) for r in split), total)
    prev = None
    for z in (-2, -1, 0, 1, 2):
        cur = count_batch(X, box, c, Rectangle.full(3, ((z, INF),)))
        if prev is not None:
            assert np.all(cur <= prev)
        prev = cur
    # batch counting agrees with pattern counting
    for i in range(3):
        assert count(extract_points(const_field(box, X[i]), c), union) == total[i]


def test_pattern_csv_roundtrip():
    box = LatticeBox(3)
    c = normalizing_constants(box.N, G0)
    pat = extract_points(const_field(box, np.random.default_rng(3).normal(size=box.N)), c)
    loc, h = read_pattern_csv(pat.to_csv())
    assert np.array_equal(loc, pat.locations) and np.array_equal(h, pat.heights)
    assert pat.sidecar()["consts"]["N"] == box.N


def test_mismatched_constants():
    box = LatticeBox(3)
    with pytest.raises(ValueError):
        extract_points(const_field(box, np.zeros(box.N)), normalizing_constants(64, G0))


def test_expected_count_oracle_value():
    box = LatticeBox(16)
    c = normalizing_constants(box.N, G0)
    lam = expected_count(box, c, Rectangle.full(3, ((0, INF),)), math.sqrt(G0))
    assert lam == pytest.approx(box.N * float(upper_tail(c.b_N / math.sqrt(G0))), rel=1e-14)
    assert float(upper_tail(c.b_N / math.sqrt(G0))) == pytest.approx(2.2515e-4, rel=1e-4)
    assert abs(lam - 1) < 0.15


def test_mean_count_matches_oracle(table):
    box = LatticeBox(8)
    c = normalizing_constants(box.N, G0)
    rect = Rectangle.full(3, ((-1, INF),))
    plan = FieldPlan(box, INFINITE, "exact", table=table)
    X = plan.sample_values(RngSpec(4), range(2000))
    counts = count_batch(X, box, c, rect)
    oracle = expected_count(box, c, rect, math.sqrt(table.g0))
    assert abs(counts.mean() - oracle) < 4 * counts.std(ddof=1) / math.sqrt(len(counts))
