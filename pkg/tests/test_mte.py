import numpy as np
import pytest
from scipy import stats

from mvtreat import mte
from mvtreat.copulas import GaussianCopula
from mvtreat.dgp import builtin, simulate, true_mte
from mvtreat.mte import (
    IdentificationError,
    OracleSource,
    SampleSource,
    Transform,
    _set_partitions,
    conditional_mean_partial,
    counterfactual_cdf,
    counterfactual_quantile,
    estimate_density,
    estimate_mte,
    estimate_zero_index,
    specification_test,
    zero_index_invariance,
)
from mvtreat.smoother import Grid


@pytest.mark.parametrize("n, bell", [(1, 1), (2, 2), (3, 5), (4, 15), (5, 52)])
def test_set_partitions_count(n, bell):
    parts = list(_set_partitions(range(n)))
    assert len(parts) == bell
    assert all(sorted(x for b in p for x in b) == list(range(n)) for p in parts)


def test_indicator_partials_match_finite_differences():
    spec = builtin("two_way_flows")
    out = Transform("indicator", 0.3).outcome_model(spec.outcomes)
    v = np.array([[0.4, 0.6], [0.7, 0.2]])
    h = 1e-4
    e1, e2 = np.array([h, 0]), np.array([0, h])

    def G(x):
        return conditional_mean_partial(out, 2, (), x)

    fd = (G(v + e1 + e2) - G(v + e1 - e2) - G(v - e1 + e2) + G(v - e1 - e2)) / (4 * h * h)
    assert np.allclose(conditional_mean_partial(out, 2, (0, 1), v), fd, rtol=1e-5)


@pytest.fixture(scope="module")
def two_way():
    spec = builtin("two_way_flows")
    return spec, OracleSource(spec), Grid.uniform(2, 7, 0.1, 0.9)


def test_oracle_density_from_every_treatment(two_way):
    spec, src, grid = two_way
    truth = spec.heterogeneity.density(grid.nodes()).reshape(grid.shape)
    for k in range(3):
        assert np.allclose(estimate_density(src, spec.model, k, grid).f, truth, rtol=1e-4)


def test_oracle_mte(two_way):
    spec, src, grid = two_way
    est = estimate_mte(src, spec.model, 2, 0, grid)
    truth = true_mte(spec, 2, 0, grid.nodes()).reshape(grid.shape)
    assert np.allclose(est.mte, truth, atol=1e-6)
    assert est.reliable.all()


def test_oracle_specification_test(two_way):
    spec, src, grid = two_way
    st = specification_test(src, spec.model, grid)
    assert st.passed and st.statistic < 1e-5
    assert st.pairs == [(0, 1), (0, 2), (1, 2)]
    # three nonzero-index treatments whose propensities sum to one
    assert st.independent_restrictions == 1


def test_double_hurdle_has_no_restriction():
    spec = builtin("double_hurdle")
    st = specification_test(OracleSource(spec), spec.model, Grid.uniform(2, 5, 0.2, 0.8))
    assert st.independent_restrictions == 0 and st.passed


def test_zero_index_rejected_by_mte():
    spec = builtin("zero_index_example3")
    with pytest.raises(IdentificationError, match="index 0"):
        estimate_mte(OracleSource(spec), spec.model, 0, 1, Grid.uniform(3, 4))
    with pytest.raises(IdentificationError, match="leading subset"):
        estimate_density(OracleSource(spec), spec.model, 0, Grid.uniform(3, 4))


def test_zero_index_margin_and_mean():
    spec = builtin("zero_index_example3")
    src = OracleSource(spec)
    grid = Grid.uniform(2, 5, 0.2, 0.8)
    z = estimate_zero_index(src, spec.model, 0, (1, 2), grid, fixed=0.4)
    margin = GaussianCopula([[1.0, 0.3], [0.3, 1.0]]).density(grid.nodes()).reshape(grid.shape)
    assert z.coefficient == 1
    assert np.allclose(z.f, margin, rtol=1e-4)
    # E[Y_0 | V] = v1 + v2 does not involve v3
    assert np.allclose(z.mean, grid.nodes().sum(axis=1).reshape(grid.shape), atol=1e-5)
    assert zero_index_invariance(src, spec.model, 0, (1, 2), grid, [0.3, 0.7]) < 1e-6
    with pytest.raises(IdentificationError):
        estimate_zero_index(src, spec.model, 0, (1,), Grid.uniform(1, 5))


def test_counterfactual_quantile():
    # Y_1 | V = v is normal with mean v1 + v2 and sd 0.1
    spec = builtin("double_hurdle")
    src = OracleSource(spec)
    y = np.linspace(0.6, 1.4, 81)
    node = [0.5, 0.5]
    cdf = counterfactual_cdf(src, spec.model, 1, node, y)
    assert np.all(np.diff(cdf) >= 0)
    assert np.allclose(cdf, stats.norm.cdf(y, 1.0, 0.1), atol=1e-5)
    for u, q in [(0.5, 1.0), (stats.norm.cdf(1.0), 1.1)]:
        assert counterfactual_quantile(src, spec.model, 1, node, u, y) == pytest.approx(q, abs=2e-3)
    with pytest.raises(ValueError, match="outside the attained"):
        counterfactual_quantile(src, spec.model, 1, node, 0.9999999, y)


@pytest.fixture(scope="module")
def sample_source():
    spec = builtin("double_hurdle")
    s = simulate(spec, 100_000, 0)
    return spec, SampleSource.from_sample(s, bandwidth=0.35)


def test_estimation_mode_tracks_truth(sample_source):
    spec, src = sample_source
    grid = Grid.uniform(2, 5, 0.3, 0.7)
    est = estimate_mte(src, spec.model, 1, 0, grid)
    truth = true_mte(spec, 1, 0, grid.nodes()).reshape(grid.shape)
    assert np.sqrt(np.mean((est.mte - truth) ** 2)) < 0.15
    dens = spec.heterogeneity.density(grid.nodes()).reshape(grid.shape)
    assert np.abs(est.f / dens - 1).max() < 0.3


def test_bootstrap_is_seeded(sample_source):
    _, src = sample_source
    node = np.array([[0.5, 0.5]])
    fn = lambda s: s.derivatives([mte.P(1)], (1, 1), node)[0][0, 0]  # noqa: E731
    a = mte.bootstrap(src, fn, 5, 3)
    assert np.array_equal(a, mte.bootstrap(src, fn, 5, 3))
    assert a.std() > 0


def test_transform_validation():
    with pytest.raises(ValueError):
        Transform("log")
    assert Transform("indicator", 1.0).apply([0.5, 1.5]).tolist() == [1.0, 0.0]
    assert not Transform().bounded
