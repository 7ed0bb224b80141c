"""Direction-of-flow analysis for treatment rules.

A change ``dQ`` in thresholds moves an individual with indicator vertex
``s`` across the ``j``-th threshold when ``V_j`` sits near ``Q_j``.  To
first order only one coordinate crosses at a time, and the treatment
indicator then changes by ``grad_j D(s) * sign(dQ_j)``.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass

import numpy as np

from .algebra import RulePolynomial, SelectionModel


class FlowVerdict(str, enum.Enum):
    ONE_WAY_DIRECTIONS_EXIST = "ONE_WAY_DIRECTIONS_EXIST"
    ALWAYS_TWO_WAY = "ALWAYS_TWO_WAY"
    CONSTANT_RULE = "CONSTANT_RULE"
    UNCLASSIFIED_BY_THEOREM = "UNCLASSIFIED_BY_THEOREM"


@dataclass(frozen=True)
class FlowEntry:
    """Classification of one rule.

    ``witness_oneway`` is a sign vector along which no outflow occurs.
    ``witness_twoway`` is ``(signs, s_in, s_out)``: moving thresholds by
    ``signs`` sends vertex ``s_in`` into the treatment and ``s_out`` out.
    """

    verdict: FlowVerdict
    witness_oneway: tuple[int, ...] | None = None
    witness_twoway: tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...]] | None = None


@dataclass(frozen=True)
class FlowReport:
    entries: tuple[FlowEntry, ...]

    def __getitem__(self, k: int) -> FlowEntry:
        return self.entries[k]

    def __len__(self) -> int:
        return len(self.entries)


def first_order_flows(rule: RulePolynomial, dq) -> tuple[bool, bool]:
    """Whether an infinitesimal move along ``dq`` creates inflow / outflow.

    Assumes the heterogeneity has positive density near every threshold.
    """
    dq = np.sign(np.asarray(dq, dtype=float))
    prod = rule.gradient() * dq[None, :]
    return bool(np.any(prod > 0)), bool(np.any(prod < 0))


def _twoway_witness(rule: RulePolynomial, dq) -> tuple | None:
    dq = np.sign(np.asarray(dq, dtype=float)).astype(int)
    prod = rule.gradient() * dq[None, :]
    pos = np.argwhere(prod > 0)
    neg = np.argwhere(prod < 0)
    if len(pos) == 0 or len(neg) == 0:
        return None
    return (tuple(int(x) for x in dq), rule.vertex_tuple(int(pos[0, 0])),
            rule.vertex_tuple(int(neg[0, 0])))


def find_oneway_direction(rule: RulePolynomial) -> tuple[int, ...] | None:
    """Exhaustive search over ``{-1,0,1}^J`` for a nonzero move with no outflow
    that does change the rule's probability.  ``None`` if no such move exists."""
    relevant = set(rule.depends_on())
    for dq in itertools.product((1, -1, 0), repeat=rule.J):
        if not any(dq[j - 1] != 0 for j in relevant):
            continue
        inflow, outflow = first_order_flows(rule, dq)
        if inflow and not outflow:
            return dq
    return None


def classify_flows(rule: RulePolynomial) -> FlowEntry:
    if rule.is_constant:
        return FlowEntry(FlowVerdict.CONSTANT_RULE)
    grad = rule.gradient()
    pos = np.any(grad > 0, axis=0)
    neg = np.any(grad < 0, axis=0)
    relevant = pos | neg
    changes = pos & neg
    if not changes.any():
        signs = tuple(int(x) for x in np.where(pos, 1, np.where(neg, -1, 0)))
        return FlowEntry(FlowVerdict.ONE_WAY_DIRECTIONS_EXIST, witness_oneway=signs)
    j = int(np.flatnonzero(changes)[0])
    dq = np.zeros(rule.J, dtype=int)
    dq[j] = 1
    witness = _twoway_witness(rule, dq)
    if np.array_equal(changes, relevant):
        return FlowEntry(FlowVerdict.ALWAYS_TWO_WAY, witness_twoway=witness)
    # some components keep their sign while others flip; the exhaustive
    # first-order search still supplies a one-way direction when one exists
    return FlowEntry(FlowVerdict.UNCLASSIFIED_BY_THEOREM,
                     witness_oneway=find_oneway_direction(rule),
                     witness_twoway=witness)


def classify_model(model: SelectionModel) -> FlowReport:
    return FlowReport(tuple(classify_flows(r) for r in model.rules))


def verify_entry(rule: RulePolynomial, entry: FlowEntry) -> bool:
    """Re-check the witnesses of ``entry`` against the gradient test."""
    ok = True
    if entry.witness_oneway is not None:
        inflow, outflow = first_order_flows(rule, entry.witness_oneway)
        ok &= inflow and not outflow
    if entry.witness_twoway is not None:
        dq, s_in, s_out = entry.witness_twoway
        grad = rule.gradient()
        weights = 1 << np.arange(rule.J)
        g_in = grad[int(np.dot(s_in, weights))] * np.sign(dq)
        g_out = grad[int(np.dot(s_out, weights))] * np.sign(dq)
        ok &= bool(np.any(g_in > 0) and np.any(g_out < 0))
    if entry.verdict == FlowVerdict.ONE_WAY_DIRECTIONS_EXIST:
        ok &= entry.witness_oneway is not None
    if entry.verdict == FlowVerdict.ALWAYS_TWO_WAY:
        ok &= entry.witness_twoway is not None
    return bool(ok)


@dataclass(frozen=True)
class FlowMasses:
    """Per-treatment directed flow masses between two threshold vectors.

    ``inflow[k]`` estimates Pr(D_k: 0 -> 1) and ``outflow[k]`` Pr(D_k: 1 -> 0),
    divided by ``scale`` (the step size when called through
    :func:`brute_force_flows`).  ``se`` fields are zero on the exact path.
    """

    inflow: np.ndarray
    outflow: np.ndarray
    inflow_se: np.ndarray
    outflow_se: np.ndarray
    method: str
    scale: float = 1.0


def _check_interior(q, name):
    q = np.asarray(q, dtype=float)
    if np.any(q <= 0) or np.any(q >= 1):
        raise ValueError(f"{name} must lie in the open unit cube, got {q}")
    return q


def exact_flow_masses(model: SelectionModel, q0, q1, heterogeneity) -> FlowMasses:
    """Flow masses from the 3^J cells cut out by the two threshold vectors.

    Along coordinate j the cells are ``[0, lo)``, ``[lo, hi)``, ``[hi, 1]``
    with ``lo = min(q0_j, q1_j)``.  Every cell maps to a fixed pair of
    vertices, and cell probabilities are rectangle masses of the joint CDF.
    """
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    J = model.J
    lo, hi = np.minimum(q0, q1), np.maximum(q0, q1)
    knots = [np.array([0.0, lo[j], hi[j], 1.0]) for j in range(J)]
    mesh = np.stack(np.meshgrid(*knots, indexing="ij"), axis=-1).reshape(-1, J)
    F = np.asarray(heterogeneity.cdf(mesh), dtype=float).reshape((4,) * J)
    P = F
    for j in range(J):
        P = np.diff(P, axis=j)
    P = np.clip(P, 0.0, None)
    # vertex of each cell: middle cell is below q only for the larger threshold
    s_before = np.empty((3, J), dtype=int)
    s_after = np.empty((3, J), dtype=int)
    s_before[0], s_after[0] = 1, 1
    s_before[2], s_after[2] = 0, 0
    s_before[1] = (q0 > q1).astype(int)
    s_after[1] = (q1 > q0).astype(int)
    cells = np.array(list(itertools.product(range(3), repeat=J)))
    S0 = s_before[cells, np.arange(J)]
    S1 = s_after[cells, np.arange(J)]
    mass = P.reshape(-1)
    tables = np.stack([r.truth_table() for r in model.rules])
    weights = 1 << np.arange(J)
    d0 = tables[:, S0 @ weights]
    d1 = tables[:, S1 @ weights]
    inflow = ((d0 == 0) & (d1 == 1)) @ mass
    outflow = ((d0 == 1) & (d1 == 0)) @ mass
    z = np.zeros(model.K)
    return FlowMasses(inflow, outflow, z, z.copy(), "exact")


def mc_flow_masses(model: SelectionModel, q0, q1, heterogeneity, n: int, seed) -> FlowMasses:
    if n <= 0:
        raise ValueError("number of draws must be positive")
    rng = np.random.default_rng(seed)
    V = heterogeneity.sample(n, rng)
    d0 = model.assign(V < np.asarray(q0)[None, :])
    d1 = model.assign(V < np.asarray(q1)[None, :])
    inflow = np.empty(model.K)
    outflow = np.empty(model.K)
    for k in range(model.K):
        inflow[k] = np.mean((d0 != k) & (d1 == k))
        outflow[k] = np.mean((d0 == k) & (d1 != k))
    se = lambda p: np.sqrt(p * (1 - p) / n)  # noqa: E731
    return FlowMasses(inflow, outflow, se(inflow), se(outflow), "mc")


def brute_force_flows(model: SelectionModel, q, dq, eps: float, heterogeneity,
                      n: int = 200_000, seed=0, method: str = "mc") -> FlowMasses:
    """Directed flow masses for the move ``q -> q + eps * dq``, per unit ``eps``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    if method == "mc" and n <= 0:
        raise ValueError("number of draws must be positive")
    q = _check_interior(q, "base thresholds")
    q1 = _check_interior(q + eps * np.asarray(dq, dtype=float), "shifted thresholds")
    if method == "exact":
        m = exact_flow_masses(model, q, q1, heterogeneity)
    elif method == "mc":
        m = mc_flow_masses(model, q, q1, heterogeneity, n, seed)
    else:
        raise ValueError(f"unknown method {method!r}")
    return FlowMasses(m.inflow / eps, m.outflow / eps, m.inflow_se / eps,
                      m.outflow_se / eps, m.method, eps)


def unordered_monotonicity_check(model: SelectionModel, q0, q1, heterogeneity,
                                 n: int = 200_000, seed=0, method: str = "exact",
                                 tol: float | None = None) -> np.ndarray:
    """True for treatment k iff at most one directed flow between q0 and q1 is nonzero."""
    q0 = _check_interior(q0, "thresholds")
    q1 = _check_interior(q1, "thresholds")
    if method == "exact":
        m = exact_flow_masses(model, q0, q1, heterogeneity)
        tol = 1e-14 if tol is None else tol
    elif method == "mc":
        m = mc_flow_masses(model, q0, q1, heterogeneity, n, seed)
        tol = 0.0 if tol is None else tol
    else:
        raise ValueError(f"unknown method {method!r}")
    return ~((m.inflow > tol) & (m.outflow > tol))
