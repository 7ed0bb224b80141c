import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvtreat.algebra import builtin_model
from mvtreat.expr import ExpressionError, parse_rule

LABELS = ["A", "B", "C"]


def test_xor_is_the_two_way_rule():
    rule = parse_rule("(A AND NOT B) OR (B AND NOT A)", ["A", "B"])
    assert rule == builtin_model("two_way_flows").rules[2]


def test_precedence_and_case():
    # AND binds tighter than OR; keywords are case-insensitive
    a = parse_rule("A or B and C", LABELS)
    b = parse_rule("A OR (B AND C)", LABELS)
    assert a == b
    assert a != parse_rule("(A OR B) AND C", LABELS)


def test_docstring_example():
    assert parse_rule("S1 AND S2", ["S1", "S2"]).terms() == {(1, 2): 1}


@pytest.mark.parametrize("text, pos", [
    ("(A AND ) B", 7),
    ("A AND", 5),
    ("A & B", 2),
    ("(A OR B", 7),
    ("A B", 2),
])
def test_parse_errors_report_position(text, pos):
    with pytest.raises(ExpressionError) as info:
        parse_rule(text, LABELS)
    assert info.value.position == pos
    assert f"position {pos}" in str(info.value)


def test_unknown_event():
    with pytest.raises(ExpressionError, match="unknown event 'D'"):
        parse_rule("A AND D", LABELS)


def exprs():
    leaf = st.sampled_from(LABELS)
    return st.recursive(
        leaf,
        lambda sub: st.one_of(
            st.builds(lambda x: f"NOT {x}", sub),
            st.builds(lambda x, y: f"({x} AND {y})", sub, sub),
            st.builds(lambda x, y: f"({x} OR {y})", sub, sub),
        ),
        max_leaves=8,
    )


@settings(max_examples=100)
@given(exprs())
def test_matches_python_evaluation(text):
    rule = parse_rule(text, LABELS)
    py = text.replace("AND", "and").replace("OR", "or").replace("NOT", "not")
    for m in range(8):
        env = {lab: bool((m >> j) & 1) for j, lab in enumerate(LABELS)}
        assert rule.truth_table()[m] == int(eval(py, {}, env))
    assert np.all(np.isin(rule.truth_table(), [0, 1]))
