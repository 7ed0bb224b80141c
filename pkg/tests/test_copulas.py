import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from mvtreat.copulas import (
    Archimedean,
    GaussianCopula,
    Generator,
    Independence,
    LinearIndexLaw,
    law_from_config,
)

FAMILIES = [("clayton", 2.0), ("frank", 5.0), ("gumbel", 1.5), ("independence", 0.0)]


def test_clayton_cdf_closed_form():
    u = np.array([[0.2, 0.7], [0.5, 0.5], [0.9, 0.1]])
    ref = (u[:, 0] ** -2.0 + u[:, 1] ** -2.0 - 1) ** -0.5
    assert np.allclose(Archimedean(Generator("clayton", 2.0)).cdf(u), ref, atol=1e-14)


@pytest.mark.parametrize("family, theta", FAMILIES)
def test_uniform_margins_and_boundaries(family, theta):
    law = Archimedean(Generator(family, theta))
    u = np.linspace(0.05, 0.95, 7)
    assert np.allclose(law.cdf(np.column_stack([u, np.ones_like(u)])), u, atol=1e-12)
    assert np.allclose(law.cdf(np.column_stack([np.zeros_like(u), u])), 0.0)


@pytest.mark.parametrize("family, theta", FAMILIES)
@settings(max_examples=30)
@given(s=st.floats(0.0, 50.0))
def test_generator_inverse_round_trip(family, theta, s):
    g = Generator(family, theta)
    u = g.inverse(s)
    if u > 1e-10:
        assert g.phi(u) == pytest.approx(s, rel=1e-7, abs=1e-9)


@pytest.mark.parametrize("family, theta", FAMILIES)
def test_generator_derivatives(family, theta):
    g = Generator(family, theta)
    u, h = np.linspace(0.1, 0.9, 9), 1e-5
    p, d1, d2 = g.eval(u)
    assert np.allclose(d1, (g.phi(u + h) - g.phi(u - h)) / (2 * h), rtol=1e-6)
    assert np.allclose(d2, (g.eval(u + h)[1] - g.eval(u - h)[1]) / (2 * h), rtol=1e-5)


def test_generator_validation():
    with pytest.raises(ValueError):
        Generator("clayton", -1.0)
    with pytest.raises(ValueError):
        Generator("gumbel", 0.5)
    with pytest.raises(ValueError):
        Generator("frank", 0.0)
    with pytest.raises(ValueError):
        Generator("joe", 2.0)
    with pytest.raises(ValueError):
        Generator("clayton", 2.0).phi(0.0)


@pytest.mark.parametrize("R", [
    [[1.0, 0.5], [0.5, 1.0]],
    [[1.0, -0.7], [-0.7, 1.0]],
    [[1.0, 0.3, 0.2], [0.3, 1.0, -0.4], [0.2, -0.4, 1.0]],
    [[1.0, 0.5, 0.5, 0.5], [0.5, 1.0, 0.5, 0.5], [0.5, 0.5, 1.0, 0.5], [0.5, 0.5, 0.5, 1.0]],
])
def test_gaussian_cdf_matches_scipy(R):
    R = np.array(R)
    J = len(R)
    rng = np.random.default_rng(3)
    u = rng.uniform(0.05, 0.95, (6, J))
    ours = GaussianCopula(R).cdf(u)
    mvn = stats.multivariate_normal(np.zeros(J), R)
    ref = np.array([mvn.cdf(stats.norm.ppf(x)) for x in u])
    # scipy's own integration error is about 1e-6
    assert np.allclose(ours, ref, atol=2e-5)


def test_gaussian_block_factoring():
    R = np.eye(4)
    R[0, 1] = R[1, 0] = 0.6
    R[2, 3] = R[3, 2] = -0.3
    u = np.array([[0.3, 0.6, 0.4, 0.8]])
    a = GaussianCopula(R[:2, :2]).cdf(u[:, :2])
    b = GaussianCopula(R[2:, 2:]).cdf(u[:, 2:])
    assert GaussianCopula(R).cdf(u) == pytest.approx(a * b, abs=1e-13)


def test_gaussian_validation():
    with pytest.raises(ValueError):
        GaussianCopula([[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(ValueError):
        GaussianCopula([[1.0, 0.2], [0.3, 1.0]])


@pytest.mark.parametrize("law", [
    Archimedean(Generator("clayton", 2.0)),
    Archimedean(Generator("frank", -3.0)),
    GaussianCopula([[1.0, 0.5], [0.5, 1.0]]),
    Independence(2),
])
def test_density_integrates_to_one(law):
    x, w = np.polynomial.legendre.leggauss(60)
    x, w = (x + 1) / 2, w / 2
    X, Y = np.meshgrid(x, x, indexing="ij")
    d = law.density(np.stack([X, Y], -1).reshape(-1, 2)).reshape(X.shape)
    # Clayton's corner spike makes the rule slightly less accurate
    assert np.sum(w[:, None] * w[None, :] * d) == pytest.approx(1.0, abs=5e-3)


@pytest.mark.parametrize("law", [
    Archimedean(Generator("clayton", 2.0)),
    Archimedean(Generator("gumbel", 2.0)),
    GaussianCopula([[1.0, 0.3, 0.2], [0.3, 1.0, 0.1], [0.2, 0.1, 1.0]]),
])
def test_sampler_matches_cdf(law):
    n = 200_000
    V = law.sample(n, np.random.default_rng(11))
    assert V.shape == (n, law.J)
    for j in range(law.J):
        assert stats.kstest(V[:, j], "uniform").pvalue > 1e-3
    pts = np.full((3, law.J), 0.5)
    pts[1] = 0.3
    pts[2, 0] = 0.8
    emp = np.array([np.mean(np.all(V <= p, axis=1)) for p in pts])
    assert np.allclose(emp, law.cdf(pts), atol=5 * np.sqrt(0.25 / n))


def test_rectangle_prob_independence():
    law = Independence(3)
    p = law.rectangle_prob([0.1, 0.2, 0.3], [0.5, 0.6, 0.9])
    assert p == pytest.approx(0.4 * 0.4 * 0.6)


def test_linear_index_normal_is_gaussian_copula():
    alpha = [[1.0, 0.0], [1.0, 1.0]]
    law = LinearIndexLaw(alpha)
    # alpha U with U ~ N(0, I) has correlation 1/sqrt(2)
    ref = GaussianCopula([[1.0, 2 ** -0.5], [2 ** -0.5, 1.0]])
    u = np.array([[0.3, 0.4], [0.7, 0.2]])
    assert np.allclose(law.cdf(u), ref.cdf(u), atol=1e-8)


def test_law_from_config():
    assert isinstance(law_from_config({"family": "clayton", "theta": 2}), Archimedean)
    g = law_from_config({"family": "gaussian", "rho": 0.3, "J": 3})
    assert g.J == 3 and g.corr[0, 2] == 0.3
    with pytest.raises(ValueError):
        law_from_config({"family": "student"})
