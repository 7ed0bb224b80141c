import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvtreat.smoother import Grid, bandwidth_rule, bin_data, finite_diff, fit, fit_many, fit_nodes


def multilinear(q, a):
    return a[0] + a[1] * q[:, 0] + a[2] * q[:, 1] + a[3] * q[:, 0] * q[:, 1]


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=4, max_size=4), st.sampled_from([None, 100]))
def test_tensor_linear_fit_reproduces_multilinear(a, bins):
    # with a tensor basis of order 1 the fit is exact for a0 + a1 q1 + a2 q2 + a3 q1 q2
    rng = np.random.default_rng(0)
    q = rng.uniform(0, 1, (4000, 2))
    grid = Grid.uniform(2, 5, 0.2, 0.8)
    s = fit(q, multilinear(q, a), grid, 0.3, 1, bins=bins)
    nodes = grid.nodes()
    # binning keeps cell means only, so the cross term picks up within-cell covariance
    tol = 1e-9 if bins is None else 1e-4
    assert np.allclose(s.values.ravel(), multilinear(nodes, a), atol=tol)
    assert np.allclose(s.d((1, 0)).ravel(), a[1] + a[3] * nodes[:, 1], atol=tol)
    assert np.allclose(s.mixed(), a[3], atol=tol)


def test_binning_keeps_cell_means():
    rng = np.random.default_rng(1)
    q = rng.uniform(0, 1, (5000, 2))
    w = q[:, 0] ** 2
    bd = bin_data(q, w, bins=10)
    assert bd.count.sum() == 5000
    assert np.allclose((bd.q * bd.count[:, None]).sum(axis=0), q.sum(axis=0))
    assert np.isclose(bd.wsum.sum(), w.sum())


def test_binning_outside_unit_cube():
    # instrument-space data is unbounded; every record must keep its position
    rng = np.random.default_rng(2)
    z = rng.normal(0, 1, (20_000, 2))
    bd = bin_data(z, np.ones(len(z)), bins=50)
    assert bd.q.min() < -2 and bd.q.max() > 2
    grid = Grid((np.linspace(-2, 2, 9),) * 2, (-np.inf, np.inf))
    s = fit(z, z[:, 0] - z[:, 1], grid, 0.5, 1, bins=200)
    assert np.all(s.reliable)
    assert np.allclose(s.d((1, 0)), 1.0, atol=1e-8)


def test_frequency_weights_equal_replication():
    rng = np.random.default_rng(3)
    q = rng.uniform(0, 1, (500, 1))
    y = np.sin(3 * q[:, 0]) + rng.normal(0, 0.1, 500)
    wts = rng.integers(0, 3, 500).astype(float)
    rep = np.repeat(np.arange(500), wts.astype(int))
    nodes = np.array([[0.3], [0.6]])
    a = fit_nodes(q, y, nodes, 0.2, 1, weights=wts)[0][(0,)]
    b = fit_nodes(q[rep], y[rep], nodes, 0.2, 1)[0][(0,)]
    assert np.allclose(a, b)


def test_sparse_nodes_flagged_unreliable():
    q = np.random.default_rng(4).uniform(0, 0.5, (2000, 2))
    grid = Grid.uniform(2, 5, 0.1, 0.9)
    s = fit(q, np.ones(2000), grid, 0.1, 1)
    assert s.reliable[0, 0] and not s.reliable[-1, -1]
    assert np.isnan(s.values[-1, -1])


def test_fit_many_matches_single_fits():
    rng = np.random.default_rng(5)
    q = rng.uniform(0, 1, (3000, 2))
    W = np.column_stack([q[:, 0] ** 2, np.cos(q[:, 1])])
    grid = Grid.uniform(2, 4, 0.3, 0.7)
    many = fit_many(q, W, grid, 0.25, 1, bins=100)
    for c in range(2):
        assert np.allclose(many[c].values, fit(q, W[:, c], grid, 0.25, 1, bins=100).values)


def test_validation():
    q = np.random.default_rng(6).uniform(0, 1, (200, 2))
    grid = Grid.uniform(2, 4)
    with pytest.raises(ValueError):
        fit(q, q[:, 0], grid, 0.0, 1)
    with pytest.raises(ValueError):
        fit(q, q[:, 0], grid, 0.2, 0)
    with pytest.raises(ValueError):
        fit(q[:, :1], q[:, 0], grid, 0.2, 1)
    with pytest.raises(ValueError):
        Grid((np.linspace(0, 1, 5),))
    with pytest.raises(ValueError):
        Grid((np.array([0.1, 0.3, 0.2, 0.4]),))
    with pytest.raises(ValueError):
        bandwidth_rule(q[:50], 1)


def test_bandwidth_rule_scaling():
    q = np.random.default_rng(7).uniform(0, 1, (10_000, 2))
    h0, h2 = bandwidth_rule(q, 0), bandwidth_rule(q, (1, 1))
    assert np.allclose(h2 / h0, 1.5**2 * 10_000 ** (1 / 6 - 1 / 8))


@pytest.mark.parametrize("alpha, expected", [((1, 0), 2 * 0.3 * 0.7), ((0, 1), 0.09 + 3 * 0.49),
                                             ((1, 1), 0.6), ((2, 0), 2 * 0.7), ((0, 2), 6 * 0.7)])
def test_finite_diff_polynomial(alpha, expected):
    f = lambda x: x[:, 0] ** 2 * x[:, 1] + x[:, 1] ** 3  # noqa: E731
    assert finite_diff(f, [0.3, 0.7], alpha) == pytest.approx(expected, abs=1e-8)


def test_finite_diff_domain():
    with pytest.raises(ValueError, match="domain"):
        finite_diff(lambda x: x[:, 0], [0.0005], (1,))
