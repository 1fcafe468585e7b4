import numpy as np
import pytest

from dgff_extremes.green import bulk_gap_bound, precision_matrix
from dgff_extremes.lattice import LatticeBox
from dgff_extremes.rng import RngSpec
from dgff_extremes.sampler import (INFINITE, ZERO, FieldPlan, SamplerError, conditional_mean,
                                   hitting_distribution, read_field_csv, sample_infinite_box,
                                   sample_zero_boundary)


def implied_covariance(plan):
    """Covariance of the linear map from standard normals to fields, computed exactly."""
    T = plan._transform()(np.eye(plan.inner.N))      # row i = image of e_i
    return T.T @ T


def dense_green(box):
    return np.linalg.inv(precision_matrix(np.ones(box.shape, dtype=bool)).toarray())


@pytest.mark.parametrize("method", ["factorization", "spectral"])
@pytest.mark.parametrize("n", [1, 4, 7])
def test_zero_boundary_covariance_exact(method, n):
    box = LatticeBox(n)
    C = implied_covariance(FieldPlan(box, ZERO, method))
    assert np.abs(C - dense_green(box)).max() < 1e-11


def test_infinite_exact_covariance(table):
    box = LatticeBox(5)
    C = implied_covariance(FieldPlan(box, INFINITE, "exact", table=table))
    assert np.abs(C - table.covariance(box)).max() < 1e-11


def test_enlarged_covariance_within_bias(table):
    box = LatticeBox(4)
    plan = FieldPlan(box, INFINITE, "enlarged", margin_factor=4, table=table)
    assert plan.inner.n == 16 and plan.offset == 6
    # the enlarged-box covariance is the zero-boundary Green's function of the big box
    T = plan._transform()(np.eye(plan.inner.N))
    C = T.T @ T
    G = dense_green(plan.inner)
    idx = [plan.inner.index(tuple(c + plan.offset)) for c in box.coords()]
    assert np.abs(C - G[np.ix_(idx, idx)]).max() < 1e-11
    gap = table.covariance(box) - C
    assert gap.min() > -1e-12
    assert plan.bias_bound == bulk_gap_bound(plan.inner, 12 / 32, 1.0)
    assert np.abs(np.diag(gap)).max() < 1.5 * plan.bias_bound


def test_empirical_covariance(table):
    box = LatticeBox(4)
    plan = FieldPlan(box, INFINITE, "exact", table=table)
    X = plan.sample_values(RngSpec(9), range(4000))
    emp = X.T @ X / len(X)
    C = table.covariance(box)
    se = np.sqrt((C ** 2 + np.outer(np.diag(C), np.diag(C))) / len(X))
    assert np.all(np.abs(emp - C) < 5 * se)


def test_determinism_and_independence_of_batching():
    plan = FieldPlan(LatticeBox(5), ZERO, "spectral")
    rng = RngSpec(1)
    a = plan.sample_values(rng, range(6))
    b = np.vstack([plan.sample_values(rng, [i]) for i in range(6)])
    assert np.array_equal(a, b)
    assert not np.array_equal(a[0], a[1])
    assert np.array_equal(plan.sample(rng, 3).values, a[3])


def test_caps():
    with pytest.raises(SamplerError, match="enlarged"):
        FieldPlan(LatticeBox(17), INFINITE, "exact")
    with pytest.raises(SamplerError, match="spectral"):
        FieldPlan(LatticeBox(41), ZERO, "factorization")
    with pytest.raises(SamplerError):
        FieldPlan(LatticeBox(4), INFINITE, "enlarged", margin_factor=1.5)
    with pytest.raises(ValueError):
        FieldPlan(LatticeBox(4), "periodic")
    with pytest.raises(ValueError):
        FieldPlan(LatticeBox(4), ZERO, "exact")


def test_envelope_and_csv_roundtrip():
    f = sample_zero_boundary(LatticeBox(3), RngSpec(2), index=4)
    env = f.envelope()
    assert env["kind"] == ZERO and env["replication"] == 4 and env["master_seed"] == 2
    assert env["seed"] == RngSpec(2).derived_seed(4)
    coords, values = read_field_csv(f.to_csv())
    assert np.array_equal(coords, f.box.coords())
    assert np.array_equal(values, f.values)


def test_enlarged_sample_metadata(table):
    f = sample_infinite_box(LatticeBox(4), RngSpec(0), method="enlarged", table=table)
    assert f.method == "enlarged:4" and f.meta["inner_side"] == 16 and f.bias_bound > 0


def test_hitting_distribution_box_matches_gaussian_conditioning():
    box = LatticeBox(5)
    alpha = (2, 2, 2)
    A = [(1, 2, 2), (3, 2, 2), (2, 3, 2), (0, 0, 0), (4, 4, 1)]
    h = hitting_distribution(alpha, A, box=box)
    G = dense_green(box)
    ia = box.index(alpha)
    iA = [box.index(b) for b in A]
    oracle = np.linalg.solve(G[np.ix_(iA, iA)], G[iA, ia])
    assert np.abs(h - oracle).max() < 1e-10
    assert np.all(h >= -1e-14) and h.sum() < 1


def test_hitting_distribution_infinite_sums_below_one(table):
    A = [(1, 0, 0), (-1, 0, 0), (0, 2, 0)]
    h = hitting_distribution((0, 0, 0), A, green=table)
    assert np.all(h > 0) and h.sum() < 1
    mu = conditional_mean(table, None, (0, 0, 0), A, [1.0, 1.0, 1.0])
    assert mu == pytest.approx(h.sum())


def test_hitting_distribution_validation():
    with pytest.raises(ValueError):
        hitting_distribution((0, 0, 0), [(0, 0, 0)])
    with pytest.raises(ValueError):
        hitting_distribution((0, 0, 0), [(1, 0, 0), (1, 0, 0)])
    assert conditional_mean(None, None, (0, 0, 0), [], []) == 0.0
