import numpy as np
import pytest
from scipy.special import expit

from mvtreat.copulas import Archimedean, GaussianCopula, Generator, Independence
from mvtreat.dgp import builtin, true_propensity
from mvtreat.smoother import Grid
from mvtreat.thresholds import (
    c_interval,
    identify_archimedean,
    identify_clayton_theta,
    identify_double_hurdle_global,
    identify_two_way,
    oracle_surface,
    separability_test,
    tabulated_surface,
)

INF = np.inf


@pytest.fixture(scope="module")
def two_way_surfaces():
    spec = builtin("two_way_flows")
    z = np.linspace(-2, 2, 21)
    grid = Grid((z, z), (-INF, INF))
    surf = [oracle_surface(lambda zz, k=k: true_propensity(spec, spec.thresholds(zz))[:, k], grid)
            for k in range(3)]
    return spec, grid, surf


def test_two_way_recovers_thresholds(two_way_surfaces):
    spec, grid, (P0, P1, P2) = two_way_surfaces
    rec = identify_two_way(P0, P2, (10, 10), P1=P1)
    z = grid.axes[0]
    for j in range(2):
        truth = spec.thresholds.components[j](np.column_stack([z, z]))
        assert np.ptp(rec.values[j] - truth) < 1e-9
    # both thresholds equal 1/2 at the anchor z = 0, so the true constant is 1/2
    lo, hi = rec.normalization["range_interval"]
    assert lo <= 0.5 <= hi
    assert rec.normalization["C"] == pytest.approx(0.5, abs=0.05)
    assert rec.diagnostics["separability_2P0_P2"] < 1e-6
    assert rec.diagnostics["separability_2P0_P1"] > 0.1
    assert rec(0, 0.0) == pytest.approx(rec.normalization["C"])


def test_explicit_constant(two_way_surfaces):
    _, _, (P0, _, P2) = two_way_surfaces
    rec = identify_two_way(P0, P2, (10, 10), C=0.5)
    assert np.allclose(rec.values[0] + rec.values[1][10], 2 * P0.values[:, 10] + P2.values[:, 10])


def test_c_interval_on_additive_surface():
    z = np.linspace(0, 1, 5)
    P = 0.2 + 0.5 * z[:, None] + (0.1 + 0.4 * z[None, :])
    positivity, rng = c_interval(P, 2, 2)
    assert positivity[0] < rng[0] <= rng[1] < positivity[1]


def test_separability_on_tabulated_surface():
    z = np.linspace(0, 1, 30)
    grid = Grid((z[1:-1], z[1:-1]), (-INF, INF))
    a, b = np.meshgrid(grid.axes[0], grid.axes[1], indexing="ij")
    assert separability_test(tabulated_surface(grid, a**2 + np.sin(b))).statistic < 1e-9
    assert not separability_test(tabulated_surface(grid, a * b)).passed


def test_global_hurdle_under_independence():
    law = Independence(2)
    z = np.linspace(-10, 10, 200)
    H = oracle_surface(lambda zz: law.cdf(expit(zz)), Grid((z, z), (-INF, INF)))
    res = identify_double_hurdle_global(H)
    for j in range(2):
        assert np.abs(res.thresholds.values[j] - expit(z)).max() < 1e-3


def test_global_hurdle_needs_reach():
    law = Independence(2)
    z = np.linspace(-2, 2, 40)
    H = oracle_surface(lambda zz: law.cdf(expit(zz)), Grid((z, z), (-INF, INF)))
    with pytest.raises(ValueError, match="upper boundary"):
        identify_double_hurdle_global(H)


@pytest.fixture(scope="module")
def clayton_surface():
    z = np.linspace(-3, 6, 61)
    law = Archimedean(Generator("clayton", 2.0))
    return law, oracle_surface(lambda zz: law.cdf(expit(zz)), Grid((z, z), (-INF, INF)))


def test_clayton_theta(clayton_surface):
    _, H = clayton_surface
    th = identify_clayton_theta(H)
    assert th.pooled == pytest.approx(2.0, abs=1e-4)
    assert th.dispersion < 1e-4


def test_archimedean_generator_up_to_affine_map(clayton_surface):
    law, H = clayton_surface
    gen, rec = identify_archimedean(H)
    assert gen.constancy_passed
    _, d1, _ = law.generator.eval(gen.h_bar)
    ref = (law.generator.phi(gen.h) - law.generator.phi(gen.h_bar)) / -d1 + gen.phi[-1]
    assert np.abs(gen.phi - ref).max() / np.abs(ref).max() < 1e-2
    lo, hi = gen.location_interval
    assert lo <= gen.location <= hi


def test_gaussian_fails_constancy():
    z = np.linspace(-3, 6, 61)
    law = GaussianCopula([[1.0, 0.5], [0.5, 1.0]])
    H = oracle_surface(lambda zz: law.cdf(expit(zz)), Grid((z, z), (-INF, INF)))
    gen, _ = identify_archimedean(H)
    assert not gen.constancy_passed
