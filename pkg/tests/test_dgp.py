import numpy as np
import pytest

from mvtreat import dgp, seeds
from mvtreat.dgp import (
    BUILTIN_DGPS,
    ThresholdComponent,
    builtin,
    simulate,
    spec_from_config,
    spec_to_config,
    true_mte,
    true_propensity,
)


@pytest.mark.parametrize("name", sorted(BUILTIN_DGPS))
def test_config_round_trip(name):
    spec = builtin(name)
    again = spec_from_config(spec_to_config(spec))
    assert spec_to_config(again) == spec_to_config(spec)
    assert spec_from_config({"builtin": name}).name == name


def test_simulate_is_deterministic():
    spec = builtin("double_hurdle")
    a, b = simulate(spec, 5000, 4), simulate(spec, 5000, 4)
    for f in ("Y", "D", "Z", "V", "Y_all", "Q"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
    assert not np.array_equal(a.V, simulate(spec, 5000, 5).V)


@pytest.mark.parametrize("name", ["two_way_flows", "double_hurdle", "zero_index_example3"])
def test_records_are_consistent(name):
    spec = builtin(name)
    s = simulate(spec, 20_000, 0)
    assert np.array_equal(s.D, spec.model.assign(s.V < s.Q))
    assert np.array_equal(s.Y, s.Y_all[np.arange(s.n), s.D])
    assert np.allclose(s.Q, spec.thresholds(s.Z))
    shares = np.bincount(s.D, minlength=spec.K) / s.n
    expected = true_propensity(spec, s.Q).mean(axis=0)
    assert np.all(np.abs(shares - expected) < 4 * np.sqrt(0.25 / s.n))


def test_double_hurdle_propensity_closed_form():
    # treated iff V < Q componentwise, so P_1(q) is the Clayton CDF at q
    spec = builtin("double_hurdle")
    q = np.array([[0.3, 0.6], [0.8, 0.2]])
    clayton = (q[:, 0] ** -2 + q[:, 1] ** -2 - 1) ** -0.5
    P = true_propensity(spec, q)
    assert np.allclose(P[:, 1], clayton)
    assert np.allclose(P.sum(axis=1), 1.0)


def test_linear_threshold_map():
    spec = builtin("double_hurdle")
    Z = np.array([[0.0, 1.0], [0.5, 0.25]])
    assert np.allclose(spec.thresholds(Z), 0.02 + 0.96 * Z)
    shifted = spec.thresholds.shifted(0.1)
    assert np.allclose(shifted(Z), np.clip(0.02 + 0.96 * Z + 0.1, 0.02, 0.98))


def test_true_mte():
    spec = builtin("double_hurdle")
    v = np.array([[0.2, 0.3], [0.9, 0.5]])
    assert np.allclose(true_mte(spec, 1, 0, v), v.sum(axis=1))
    with pytest.raises(ValueError):
        true_mte(spec, 2, 0, v)


def test_latent_conditional_mean_matches_sample():
    spec = builtin("two_way_flows")
    s = simulate(spec, 200_000, 1)
    near = np.all(np.abs(s.V - 0.5) < 0.03, axis=1)
    assert abs(s.Y_all[near, 2].mean() - 0.25) < 0.01


def test_validation():
    with pytest.raises(ValueError):
        simulate(builtin("double_hurdle"), 0, 0)
    with pytest.raises(ValueError):
        builtin("nope")
    with pytest.raises(ValueError):
        ThresholdComponent("logistic", (0,), (1.0, 2.0))
    with pytest.raises(ValueError):
        ThresholdComponent("spline", (0,), knots_x=(0.0, 1.0), knots_y=(0.0, 0.5))
    spec = builtin("double_hurdle")
    with pytest.raises(ValueError):
        spec.with_(thresholds=dgp.ThresholdMap(spec.thresholds.components[:1]))


def test_stage_streams_are_independent():
    a = seeds.rng(0, "simulate").random(3)
    b = seeds.rng(0, "instrument_panel").random(3)
    assert not np.array_equal(a, b)
    assert np.array_equal(a, seeds.rng(0, "simulate").random(3))
