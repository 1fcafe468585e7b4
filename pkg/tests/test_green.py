import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special

from dgff_extremes.green import (GreenTable, QuadSpec, QuadratureError, SolverSpec,
                                 DirichletSolver, _level_values, bulk_gap, bulk_gap_bound,
                                 green_finite_column, green_infinite, green_infinite_many, kappa,
                                 precision_matrix, zero_boundary_variances)
from dgff_extremes.lattice import LatticeBox
from dgff_extremes.rng import RngSpec
from dgff_extremes.walks import killed_walk_green


def bessel_green(offset, d):
    """Independent oracle: g(a) = int_0^inf prod_j e^{-t/d} I_{a_j}(t/d) dt."""
    f = lambda t: np.prod([special.ive(abs(a), t / d) for a in offset])
    head, _ = integrate.quad(f, 0, 50, epsabs=1e-14, epsrel=1e-13, limit=200)
    # substitute t = 50 / s^2 on the tail so the t^(-d/2) decay becomes smooth
    tail_f = lambda s: f(50 / s ** 2) * 100 / s ** 3 if s > 0 else 0.0
    tail, _ = integrate.quad(tail_f, 0, 1, epsabs=1e-14, epsrel=1e-13, limit=200)
    return head + tail


@pytest.mark.parametrize("offset", [(0, 0, 0), (1, 0, 0), (1, 1, 0), (2, 1, 0), (3, 2, 1), (5, 0, 0)])
def test_green_matches_bessel_oracle(offset):
    assert green_infinite(offset, 3) == pytest.approx(bessel_green(offset, 3), abs=1e-9)


@pytest.mark.parametrize("offset", [(0, 0, 0, 0), (1, 0, 0, 0), (2, 1, 1, 0)])
def test_green_matches_bessel_oracle_d4(offset):
    assert green_infinite(offset, 4) == pytest.approx(bessel_green(offset, 4), abs=1e-9)


def test_g0_value():
    # two digits beyond the classical Watson-integral value 1.516386
    assert green_infinite((0, 0, 0)) == pytest.approx(1.516386, abs=1e-6)


def test_g0_doubled_resolution():
    vals, levels = green_infinite_many([(0, 0, 0)], 3, return_levels=True)
    finer = _level_values(np.array([[0, 0, 0]]), 3, 2 * int(levels[0]))[0]
    assert abs(finer - vals[0]) < 1e-10


def test_neighbor_identity(table):
    # (I - P) g = delta_0 at the origin
    assert table.value((1, 0, 0)) == pytest.approx(table.g0 - 1, abs=1e-10)
    assert table.value((0, 1, 0)) == table.value((1, 0, 0))


def test_kappa():
    k3 = kappa(3)
    assert k3 == pytest.approx(0.659463, abs=1e-6)
    assert k3 * green_infinite((0, 0, 0)) == pytest.approx(1.0, abs=1e-15)
    assert kappa(4) > k3
    assert 0 < k3 < 1


def test_dimension_two_rejected():
    with pytest.raises(ValueError):
        green_infinite((0, 0), 2)


def test_quadrature_nonconvergence_reports_residual():
    with pytest.raises(QuadratureError) as err:
        green_infinite((0, 0, 0), 3, QuadSpec(tol=1e-15, start_nodes=8, max_nodes=16))
    assert err.value.residual > 0


@settings(max_examples=25, deadline=None)
@given(st.tuples(st.integers(0, 4), st.integers(0, 4), st.integers(0, 4)).filter(any))
def test_harmonic_away_from_origin(a):
    a = np.array(a)
    nbrs = [a + s * e for e in np.eye(3, dtype=int) for s in (1, -1)]
    vals = green_infinite_many([a] + nbrs, 3)
    assert vals[0] == pytest.approx(vals[1:].mean(), abs=10 * QuadSpec().tol)


@settings(max_examples=25, deadline=None)
@given(st.tuples(st.integers(-5, 5), st.integers(-5, 5), st.integers(-5, 5)))
def test_symmetry_and_bounds(a):
    from dgff_extremes.green import default_table
    t = default_table(3)
    v = t.value(a)
    assert 0 < v <= t.g0
    assert t.value(tuple(-x for x in a)) == v
    assert t.value((a[2], a[0], a[1])) == v


def test_decreasing_along_axis(table):
    vals = [table.value((k, 0, 0)) for k in range(8)]
    assert all(x > y for x, y in zip(vals, vals[1:]))


# ---------------------------------------------------------------- finite volume


def test_single_site_box():
    assert green_finite_column(LatticeBox(1), (0, 0, 0))[0] == pytest.approx(1.0)


def test_precision_matrix_structure():
    Q = precision_matrix(np.ones((3, 3, 3), dtype=bool)).toarray()
    assert np.allclose(Q, Q.T)
    assert np.all(np.diag(Q) == 1)
    assert np.all(np.sum(Q != 0, axis=1) <= 7)
    assert np.all(np.linalg.eigvalsh(Q) > 0)


def test_column_symmetry_and_domination(table):
    box = LatticeBox(6)
    a, b = (1, 2, 3), (4, 4, 1)
    ca = green_finite_column(box, a)
    cb = green_finite_column(box, b)
    assert ca[box.index(b)] == pytest.approx(cb[box.index(a)], abs=1e-10)
    g = table.values(box.coords() - np.array(a))
    assert np.all(ca >= -1e-12)
    assert np.all(ca <= g + 1e-10)


def test_nested_boxes_monotone(table):
    small, big = LatticeBox(4), LatticeBox(8)
    shift = np.array([2, 2, 2])
    beta = (1, 2, 1)
    cs = green_finite_column(small, beta)
    cb = green_finite_column(big, tuple(np.array(beta) + shift))
    for c in small.coords():
        v_small = cs[small.index(c)]
        v_big = cb[big.index(c + shift)]
        assert v_small <= v_big + 1e-12
        assert v_big <= table.value(c - np.array(beta)) + 1e-12


def test_centre_value_n8(table):
    box = LatticeBox(8)
    v = green_finite_column(box, box.center())[box.index(box.center())]
    assert 1 < v < table.g0


def test_killed_walk_oracle():
    box = LatticeBox(8)
    c = box.center()
    exact = green_finite_column(box, c)[box.index(c)]
    mc = killed_walk_green(box, c, c, walks=20_000, rng=RngSpec(7))
    assert abs(mc.estimate - exact) < 4 * mc.stderr


def test_cg_path_matches_direct():
    mask = np.ones((7, 7, 7), dtype=bool)
    direct = DirichletSolver(mask).green_column((3, 3, 3))
    cg = DirichletSolver(mask, SolverSpec(direct_max=10)).green_column((3, 3, 3))
    assert np.abs(direct - cg).max() < 1e-8


def test_column_outside_box_raises():
    with pytest.raises(ValueError):
        green_finite_column(LatticeBox(4), (4, 0, 0))


def test_spectral_variances_match_dense_inverse():
    box = LatticeBox(6)
    G = np.linalg.inv(precision_matrix(np.ones(box.shape, dtype=bool)).toarray())
    assert np.abs(zero_boundary_variances(box) - np.diag(G)).max() < 1e-13


@pytest.mark.parametrize("n,expected", [(16, 0.25), (32, 0.125)])
def test_bulk_gap_bound(n, expected):
    assert bulk_gap_bound(LatticeBox(n), 0.25, 1.0) == pytest.approx(expected)


def test_bulk_gap_n8(table):
    res = bulk_gap(LatticeBox(8), 0.25, table)
    assert res.bulk_sites == 64
    assert res.max_violation <= 1e-9       # g_N <= g on the bulk
    assert res.max_gap > 0
    assert res.scaled_gap == pytest.approx(res.max_gap * (0.25 * 8), rel=1e-12)


def test_table_json_roundtrip(tmp_path):
    t = GreenTable(d=3)
    t.ensure([(0, 0, 0), (1, 0, 0), (2, 1, 0)])
    t.finite_column(LatticeBox(3), (1, 1, 1))
    path = tmp_path / "g.json"
    t.save(path)
    u = GreenTable.load(path)
    assert u.entries == t.entries
    key = (3, (1, 1, 1))
    assert np.array_equal(u.finite_columns[key], t.finite_columns[key])
    payload = json.loads(path.read_text())
    payload["schema_version"] = 99
    with pytest.raises(ValueError):
        GreenTable.from_json(json.dumps(payload))


def test_covariance_matches_values(table):
    box = LatticeBox(3)
    C = table.covariance(box)
    coords = box.coords()
    for i in (0, 5, 13):
        for j in (2, 13, 26):
            assert C[i, j] == table.value(coords[i] - coords[j])
