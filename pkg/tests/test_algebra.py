import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvtreat.algebra import (
    AlgebraError,
    RulePolynomial,
    SelectionModel,
    ThresholdEventSet,
    builtin_model,
    check_partition,
    decompose,
    index_and_degree,
    leading_subsets,
    mask_subset,
    subset_mask,
)


def mobius_by_sum(table, J):
    """Independent oracle: c_l = sum over m subset of l of (-1)^(|l|-|m|) D(m)."""
    out = []
    for l in range(1 << J):
        c = 0
        for m in range(1 << J):
            if m & ~l == 0:
                c += (-1) ** (bin(l).count("1") - bin(m).count("1")) * table[m]
        out.append(c)
    return out


def tables(max_J=5):
    return st.integers(1, max_J).flatmap(
        lambda J: st.lists(st.integers(0, 1), min_size=1 << J, max_size=1 << J))


@given(tables())
def test_decompose_matches_inclusion_exclusion(table):
    J = len(table).bit_length() - 1
    rule = decompose(table)
    assert list(rule.coeffs) == mobius_by_sum(table, J)


@given(tables(6))
def test_round_trip(table):
    assert decompose(table).truth_table().tolist() == table


@given(tables(4))
def test_evaluation_at_vertices(table):
    rule = decompose(table)
    J = rule.J
    for m in range(1 << J):
        s = [(m >> j) & 1 for j in range(J)]
        direct = sum(c * np.prod([s[j - 1] for j in mask_subset(l)]) for l, c in enumerate(rule.coeffs))
        assert direct == table[m] == rule(np.array(s))


@settings(max_examples=50)
@given(st.integers(1, 4), st.integers(2, 5), st.data())
def test_partition_coefficients_sum_to_constant_one(J, K, data):
    labels = data.draw(st.lists(st.integers(0, K - 1), min_size=1 << J, max_size=1 << J))
    rules = [decompose([int(x == k) for x in labels]) for k in range(K)]
    total = np.sum([r.coeffs for r in rules], axis=0)
    expected = np.zeros(1 << J, dtype=int)
    expected[0] = 1
    assert np.array_equal(total, expected)
    # so the indices of a partition cancel
    assert sum(r.index for r in rules) == 0


def test_two_way_pass_one_expansion():
    rule = builtin_model("two_way_flows").rules[2]
    assert rule.terms() == {(1,): 1, (2,): 1, (1, 2): -2}
    assert index_and_degree(rule) == (-2, 2)
    assert rule.pretty(["S1", "S2"]) == "S1 + S2 - 2*S1*S2"


def test_double_hurdle_indices():
    m = builtin_model("double_hurdle")
    assert m.rules[1].terms() == {(1, 2): 1}
    assert m.rules[0].terms() == {(): 1, (1, 2): -1}
    assert [r.index for r in m.rules] == [-1, 1]


def test_zero_index_rule():
    # 1(all same side) = S1S2S3 + (1-S1)(1-S2)(1-S3); the cubic terms cancel
    rule = builtin_model("zero_index_example3").rules[0]
    assert rule.terms() == {(): 1, (1,): -1, (2,): -1, (3,): -1, (1, 2): 1, (1, 3): 1, (2, 3): 1}
    assert index_and_degree(rule) == (0, 2)
    assert leading_subsets(rule) == [(1, 2), (1, 3), (2, 3)]
    assert builtin_model("zero_index_example3").nonzero_index_treatments() == [1, 2]


@pytest.mark.parametrize("name", ["two_way_flows", "double_hurdle", "zero_index_example3",
                                  "entry_game", "entry_game_identity"])
def test_builtins_partition(name):
    model = builtin_model(name)
    assert check_partition(model).ok
    assert sorted(set(model.assignment_table().tolist())) == list(range(model.K))


def test_entry_game_sizes():
    assert builtin_model("entry_game").K == 3
    assert builtin_model("entry_game_identity").K == 4
    assert builtin_model("entry_game").J == 5


def test_non_indicator_rejected():
    with pytest.raises(AlgebraError, match="not an indicator"):
        RulePolynomial.from_terms(2, {(1,): 1, (2,): 1})


def test_constant_rule_has_no_index():
    rule = decompose([1, 1, 1, 1])
    assert rule.is_constant
    with pytest.raises(AlgebraError, match="constant"):
        index_and_degree(rule)


def test_bad_tables():
    with pytest.raises(AlgebraError):
        decompose([0, 1, 1])
    with pytest.raises(AlgebraError):
        decompose([0, 2])
    with pytest.raises(AlgebraError):
        subset_mask([0])


def test_partition_violation_reported():
    ev = ThresholdEventSet(("A", "B"))
    a = decompose([0, 1, 1, 1])
    b = decompose([0, 0, 1, 1])
    model = SelectionModel(ev, (a, b))
    rep = check_partition(model)
    assert not rep.ok
    assert ((0, 0), 0) in rep.violations
    assert ((0, 1), 2) in rep.violations
    with pytest.raises(AlgebraError):
        model.validate()
    with pytest.raises(AlgebraError):
        model.assign(np.array([[0, 0]]))


def test_assign_vectorised():
    model = builtin_model("two_way_flows")
    S = np.array(list(itertools.product([0, 1], repeat=2)))
    # fail_both needs S1 = S2 = 1, pass_both S1 = S2 = 0, otherwise pass_one
    expected = [1 if not s.any() else 0 if s.all() else 2 for s in S]
    assert model.assign(S).tolist() == expected


def test_unknown_builtin():
    with pytest.raises(AlgebraError, match="unknown builtin"):
        builtin_model("nope")


def test_duplicate_labels():
    with pytest.raises(AlgebraError):
        ThresholdEventSet(("A", "A"))
