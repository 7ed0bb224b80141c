"""Treatment rules as multilinear polynomials in threshold indicators.

A vertex ``s`` of ``{0,1}^J`` and a subset ``l`` of ``{1..J}`` are both
encoded as J-bit masks: bit ``j`` (0-based) is set iff ``s_{j+1} = 1``
(resp. ``j+1 in l``).  ``S_j = 1`` means the event ``V_j < Q_j``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class AlgebraError(ValueError):
    pass


def subset_mask(subset: Iterable[int]) -> int:
    """Mask of a subset given with 1-based threshold indices."""
    mask = 0
    for j in subset:
        if j < 1:
            raise AlgebraError(f"threshold indices are 1-based, got {j}")
        mask |= 1 << (j - 1)
    return mask


def mask_subset(mask: int) -> tuple[int, ...]:
    return tuple(j + 1 for j in range(mask.bit_length()) if mask >> j & 1)


def popcount(mask: int) -> int:
    return bin(mask).count("1")


def _mobius(values: np.ndarray, J: int) -> np.ndarray:
    # c_l = sum_{m subset l} (-1)^{|l|-|m|} value(m), one bit at a time
    c = values.astype(np.int64).copy()
    idx = np.arange(1 << J)
    for j in range(J):
        bit = 1 << j
        hi = idx[(idx & bit) != 0]
        c[hi] -= c[hi ^ bit]
    return c


def vertex_values(coeffs: Sequence[int], J: int) -> np.ndarray:
    """Evaluate ``sum_l c_l prod_{j in l} s_j`` at every vertex (zeta transform)."""
    v = np.asarray(coeffs, dtype=np.int64).copy()
    if v.shape != (1 << J,):
        raise AlgebraError(f"expected {1 << J} coefficients, got {v.shape}")
    idx = np.arange(1 << J)
    for j in range(J):
        bit = 1 << j
        hi = idx[(idx & bit) != 0]
        v[hi] += v[hi ^ bit]
    return v


def _vertex_masks(S: np.ndarray) -> np.ndarray:
    S = np.asarray(S)
    if S.ndim == 1:
        S = S[None, :]
    weights = 1 << np.arange(S.shape[-1], dtype=np.int64)
    return (S.astype(np.int64) * weights).sum(axis=-1)


@dataclass(frozen=True)
class ThresholdEventSet:
    labels: tuple[str, ...]

    def __post_init__(self):
        if len(self.labels) < 1:
            raise AlgebraError("need at least one threshold event")
        if len(set(self.labels)) != len(self.labels):
            raise AlgebraError(f"event labels must be distinct: {self.labels}")

    @property
    def J(self) -> int:
        return len(self.labels)

    @classmethod
    def default(cls, J: int) -> "ThresholdEventSet":
        return cls(tuple(f"S{j}" for j in range(1, J + 1)))


@dataclass(frozen=True)
class RulePolynomial:
    """Integer coefficients ``c_l`` over all subsets, stored densely by mask.

    Construction checks that the polynomial is an indicator, i.e. takes
    only the values 0 and 1 on ``{0,1}^J``.
    """

    J: int
    coeffs: tuple[int, ...]

    def __post_init__(self):
        if self.J < 1:
            raise AlgebraError("J must be positive")
        coeffs = tuple(int(c) for c in self.coeffs)
        object.__setattr__(self, "coeffs", coeffs)
        vals = vertex_values(coeffs, self.J)
        bad = np.flatnonzero((vals != 0) & (vals != 1))
        if bad.size:
            s = int(bad[0])
            raise AlgebraError(
                f"polynomial is not an indicator: value {int(vals[s])} at vertex "
                f"{self.vertex_tuple(s)}"
            )

    def vertex_tuple(self, mask: int) -> tuple[int, ...]:
        return tuple((mask >> j) & 1 for j in range(self.J))

    @property
    def full_mask(self) -> int:
        return (1 << self.J) - 1

    def coefficient(self, subset: Iterable[int]) -> int:
        return self.coeffs[subset_mask(subset)]

    def truth_table(self) -> np.ndarray:
        return vertex_values(self.coeffs, self.J)

    def __call__(self, S) -> np.ndarray:
        """Evaluate at vertices given as 0/1 rows of shape (..., J)."""
        table = self.truth_table()
        S = np.asarray(S)
        masks = _vertex_masks(S.reshape(-1, self.J))
        return table[masks].reshape(S.shape[:-1])

    def terms(self) -> dict[tuple[int, ...], int]:
        return {mask_subset(m): c for m, c in enumerate(self.coeffs) if c != 0}

    @property
    def is_constant(self) -> bool:
        return all(c == 0 for c in self.coeffs[1:])

    @property
    def index(self) -> int:
        return self.coeffs[self.full_mask]

    @property
    def degree(self) -> int:
        nz = [popcount(m) for m, c in enumerate(self.coeffs) if c != 0]
        return max(nz) if nz else 0

    def gradient(self) -> np.ndarray:
        """Partial differences ``dD/dS_j`` at every vertex, shape (2^J, J).

        The polynomial is multilinear so the partial in ``S_j`` equals
        ``D(s with s_j=1) - D(s with s_j=0)`` and does not depend on ``s_j``.
        """
        table = self.truth_table()
        idx = np.arange(1 << self.J)
        grad = np.empty((1 << self.J, self.J), dtype=np.int64)
        for j in range(self.J):
            bit = 1 << j
            grad[:, j] = table[idx | bit] - table[idx & ~bit]
        return grad

    def depends_on(self) -> tuple[int, ...]:
        """1-based indices of thresholds the rule actually depends on."""
        g = self.gradient()
        return tuple(j + 1 for j in range(self.J) if np.any(g[:, j] != 0))

    def pretty(self, labels: Sequence[str] | None = None) -> str:
        labels = labels or [f"S{j}" for j in range(1, self.J + 1)]
        parts = []
        for m, c in enumerate(self.coeffs):
            if c == 0:
                continue
            mono = "*".join(labels[j - 1] for j in mask_subset(m))
            if not mono:
                parts.append(str(c))
            elif c == 1:
                parts.append(mono)
            elif c == -1:
                parts.append(f"-{mono}")
            else:
                parts.append(f"{c}*{mono}")
        if not parts:
            return "0"
        out = parts[0]
        for p in parts[1:]:
            out += f" - {p[1:]}" if p.startswith("-") else f" + {p}"
        return out

    def __str__(self) -> str:
        return self.pretty()

    @classmethod
    def from_terms(cls, J: int, terms: dict) -> "RulePolynomial":
        coeffs = [0] * (1 << J)
        for subset, c in terms.items():
            coeffs[subset_mask(subset)] += int(c)
        return cls(J, tuple(coeffs))


def decompose(truth_table: Sequence) -> RulePolynomial:
    """Unique polynomial decomposition of a 0/1 truth table indexed by vertex mask."""
    table = np.asarray(truth_table)
    n = table.shape[0] if table.ndim == 1 else -1
    if table.ndim != 1 or n < 2 or n & (n - 1):
        raise AlgebraError(f"truth table length must be 2^J with J >= 1, got {table.shape}")
    if not np.all((table == 0) | (table == 1)):
        raise AlgebraError("truth table entries must be 0 or 1")
    J = n.bit_length() - 1
    return RulePolynomial(J, tuple(int(c) for c in _mobius(table.astype(np.int64), J)))


def index_and_degree(rule: RulePolynomial) -> tuple[int, int]:
    if rule.is_constant:
        raise AlgebraError(
            "constant rule: the treatment has probability zero or one, "
            "which the selection mechanism excludes"
        )
    return rule.index, rule.degree


def leading_subsets(rule: RulePolynomial) -> list[tuple[int, ...]]:
    _, m = index_and_degree(rule)
    return [mask_subset(l) for l, c in enumerate(rule.coeffs) if c != 0 and popcount(l) == m]


@dataclass(frozen=True)
class SelectionModel:
    events: ThresholdEventSet
    rules: tuple[RulePolynomial, ...]
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))
        if not self.rules:
            raise AlgebraError("a selection model needs at least one rule")
        for r in self.rules:
            if r.J != self.events.J:
                raise AlgebraError(f"rule has J={r.J}, events have J={self.events.J}")
        if not self.names:
            object.__setattr__(self, "names", tuple(f"D{k}" for k in range(len(self.rules))))
        elif len(self.names) != len(self.rules):
            raise AlgebraError("one name per rule required")

    @property
    def J(self) -> int:
        return self.events.J

    @property
    def K(self) -> int:
        return len(self.rules)

    def assignment_table(self) -> np.ndarray:
        """Treatment id at every vertex; -1 where the rules do not partition."""
        tables = np.stack([r.truth_table() for r in self.rules])
        out = np.argmax(tables, axis=0)
        out[tables.sum(axis=0) != 1] = -1
        return out

    def assign(self, S) -> np.ndarray:
        S = np.asarray(S)
        table = self.assignment_table()
        d = table[_vertex_masks(S.reshape(-1, self.J))].reshape(S.shape[:-1])
        if np.any(d < 0):
            raise AlgebraError("rules do not partition the drawn indicator vertices")
        return d

    def validate(self) -> "SelectionModel":
        report = check_partition(self)
        if not report.ok:
            raise AlgebraError(report.describe())
        return self

    def nonzero_index_treatments(self) -> list[int]:
        return [k for k, r in enumerate(self.rules) if r.index != 0]


@dataclass(frozen=True)
class PartitionReport:
    ok: bool
    violations: tuple[tuple[tuple[int, ...], int], ...]
    never_assigned: tuple[int, ...]

    def describe(self) -> str:
        if self.ok:
            return "rules partition {0,1}^J"
        lines = [f"vertex {v}: rules sum to {s}" for v, s in self.violations]
        lines += [f"treatment {k} is never assigned" for k in self.never_assigned]
        return "; ".join(lines)


def check_partition(model: SelectionModel) -> PartitionReport:
    tables = np.stack([r.truth_table() for r in model.rules])
    sums = tables.sum(axis=0)
    J = model.J
    violations = tuple(
        (tuple(int(m >> j) & 1 for j in range(J)), int(sums[m]))
        for m in np.flatnonzero(sums != 1)
    )
    never = tuple(k for k in range(model.K) if not tables[k].any())
    return PartitionReport(ok=not violations and not never, violations=violations,
                           never_assigned=never)


def rule_from_predicate(J: int, pred) -> RulePolynomial:
    """Build a rule from a Python predicate on a 0/1 tuple ``(s_1..s_J)``."""
    table = [int(bool(pred(tuple((m >> j) & 1 for j in range(J))))) for m in range(1 << J)]
    return decompose(table)


def _two_way_flows() -> SelectionModel:
    rules = (
        rule_from_predicate(2, lambda s: s[0] and s[1]),
        rule_from_predicate(2, lambda s: not s[0] and not s[1]),
        rule_from_predicate(2, lambda s: s[0] != s[1]),
    )
    return SelectionModel(ThresholdEventSet(("S1", "S2")), rules,
                          ("fail_both", "pass_both", "pass_one"))


def _double_hurdle() -> SelectionModel:
    rules = (
        rule_from_predicate(2, lambda s: not (s[0] and s[1])),
        rule_from_predicate(2, lambda s: s[0] and s[1]),
    )
    return SelectionModel(ThresholdEventSet(("S1", "S2")), rules, ("untreated", "treated"))


def _zero_index_example3() -> SelectionModel:
    # treatment 0 is the zero-index rule; 1 and 2 split the remaining vertices on S1
    def d0(s):
        return all(s) or not any(s)

    rules = (
        rule_from_predicate(3, d0),
        rule_from_predicate(3, lambda s: not d0(s) and s[0]),
        rule_from_predicate(3, lambda s: not d0(s) and not s[0]),
    )
    return SelectionModel(ThresholdEventSet(("S1", "S2", "S3")), rules,
                          ("all_same_side", "mixed_s1_below", "mixed_s1_above"))


# Entry game events.  S_j = 1 means V_j < Q_j, so for the profit
# pi = V - Q an event S = 1 means the profit is negative:
#   S1, S2: monopoly profit of firm 1, 2 negative
#   S3, S4: duopoly profit of firm 1, 2 negative
#   S5:     equilibrium selection draw U < q(Z) favours firm 1
_ENTRY_LABELS = ("m1_neg", "m2_neg", "d1_neg", "d2_neg", "select1")


def _entry_outcome(s) -> str:
    m1, m2 = not s[0], not s[1]
    d1, d2 = not s[2], not s[3]
    sel1 = bool(s[4])
    if not m1 and not m2:
        return "none"
    if d1 and d2:
        return "both"
    if m1 and (not m2 or (not d2 and sel1)):
        return "firm1"
    # remaining one-entrant vertices, including the ones the
    # profit ordering pi^d < pi^m rules out
    return "firm2"


def _entry_game() -> SelectionModel:
    rules = (
        rule_from_predicate(5, lambda s: _entry_outcome(s) == "none"),
        rule_from_predicate(5, lambda s: _entry_outcome(s) in ("firm1", "firm2")),
        rule_from_predicate(5, lambda s: _entry_outcome(s) == "both"),
    )
    return SelectionModel(ThresholdEventSet(_ENTRY_LABELS), rules,
                          ("no_entry", "one_entrant", "both_enter"))


def _entry_game_identity() -> SelectionModel:
    rules = tuple(
        rule_from_predicate(5, lambda s, o=o: _entry_outcome(s) == o)
        for o in ("none", "firm1", "firm2", "both")
    )
    return SelectionModel(ThresholdEventSet(_ENTRY_LABELS), rules,
                          ("no_entry", "firm1_only", "firm2_only", "both_enter"))


BUILTIN_MODELS = {
    "two_way_flows": _two_way_flows,
    "double_hurdle": _double_hurdle,
    "zero_index_example3": _zero_index_example3,
    "entry_game": _entry_game,
    "entry_game_identity": _entry_game_identity,
}


def builtin_model(name: str) -> SelectionModel:
    try:
        return BUILTIN_MODELS[name]()
    except KeyError:
        raise AlgebraError(
            f"unknown builtin model {name!r}; choose from {sorted(BUILTIN_MODELS)}"
        ) from None
