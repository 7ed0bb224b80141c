"""Aggregate effects from MTE surfaces, and bounds under limited threshold range.

All integrals are tensor trapezoid rules over the estimate's grid.  The
conditional assignment probability ``Pr[d_k(v, Q(Z)) = 1]`` is a plain
average over a fixed instrument panel, since ``V`` and ``Z`` are
independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import seeds
from .algebra import SelectionModel
from .dgp import InstrumentLaw
from .mte import B, MteEstimate, P, Transform
from .quadrature import trapezoid
from .smoother import Grid

PANEL_SIZE = 10_000
WEIGHT_TOL = 0.01
NEGLIGIBLE_DENSITY = 1e-3


class WeightNormalizationError(ValueError):
    pass


@dataclass
class AggregateResult:
    estimand: str
    value: float
    weight_integral: float | None = None
    meta: dict = field(default_factory=dict)

    def __float__(self):
        return float(self.value)

    def to_report(self) -> dict:
        out = {"estimand": self.estimand, "value": self.value}
        if self.weight_integral is not None:
            out["weight_integral"] = self.weight_integral
        out.update(self.meta)
        return out


def instrument_panel(instruments: InstrumentLaw, seed: int, size: int = PANEL_SIZE) -> np.ndarray:
    """Seeded instrument draws shared by every node."""
    return instruments.sample(size, seeds.rng(seed, "instrument_panel"))


def assignment_probability(model: SelectionModel, q_panel, nodes, k: int,
                           chunk: int = 64) -> np.ndarray:
    """``Pr_Z[d_k(v, Q(Z)) = 1]`` at each node ``v``.

    ``q_panel`` holds threshold values ``Q(Z)`` on the instrument panel.
    """
    q_panel = np.atleast_2d(np.asarray(q_panel, dtype=float))
    nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
    table = (model.assignment_table() == k).astype(float)
    bits = 1 << np.arange(model.J)
    out = np.empty(len(nodes))
    for s in range(0, len(nodes), chunk):
        S = nodes[s:s + chunk, None, :] < q_panel[None, :, :]
        out[s:s + chunk] = table[(S * bits).sum(axis=-1)].mean(axis=1)
    return out


def _mte_for(est: MteEstimate, k, l):
    if est.pair is None:
        raise ValueError("estimate carries no treatment pair")
    if k is None or (k, l) == est.pair:
        return est.mte
    if (l, k) == est.pair:
        return -est.mte
    raise ValueError(f"estimate is for pair {est.pair}, not {(k, l)}")


def _weighted(values, w, f, negligible: float = NEGLIGIBLE_DENSITY):
    """``values * w`` with undefined nodes of negligible density set to 0.

    Ratio estimates are undefined where the density falls below the floor;
    such nodes carry no weight, but a gap where ``f`` is sizeable is an error.
    """
    bad = ~np.isfinite(values)
    if not np.all(np.isfinite(w)) or np.any(np.abs(f[bad]) > negligible):
        raise ValueError("surface has undefined nodes where the density is not negligible")
    return np.where(bad, 0.0, values * np.where(bad, 0.0, w))


def ate(est: MteEstimate, k: int | None = None, l: int | None = None) -> AggregateResult:
    """``E[G(Y_k) - G(Y_l)] = int MTE(v) f(v) dv`` over a grid covering the cube."""
    mte = _mte_for(est, k, l)
    axes = est.grid.axes
    return AggregateResult("ate", trapezoid(_weighted(mte, est.f, est.f), axes),
                           trapezoid(est.f, axes),
                           {"pair": list(est.pair if k is None else (k, l))})


def att(est: MteEstimate, model: SelectionModel, q_panel, k: int, l: int, share: float,
        tol: float = WEIGHT_TOL) -> AggregateResult:
    """Effect on those choosing ``k``.

    ``share`` is ``Pr(D = k)``, taken from outside the grid (sample share
    or closed form), so the weight integral is a genuine check.
    """
    if not share > 0:
        raise ValueError("treatment share must be positive")
    mte = _mte_for(est, k, l)
    prob = assignment_probability(model, q_panel, est.grid.nodes(), k).reshape(est.grid.shape)
    w = prob * est.f / share
    total = trapezoid(w, est.grid.axes)
    if abs(total - 1) > tol:
        raise WeightNormalizationError(
            f"treated weights integrate to {total:.4f}, outside 1 +/- {tol}")
    return AggregateResult("att", trapezoid(_weighted(mte, w, est.f), est.grid.axes), total,
                           {"pair": [k, l], "share": share})


@dataclass(frozen=True)
class PolicyShift:
    """Baseline and counterfactual threshold maps over one instrument law."""

    baseline: object
    counterfactual: object

    def panels(self, Z):
        q0, q1 = self.baseline(Z), self.counterfactual(Z)
        for q in (q0, q1):
            if np.any(q <= 0) or np.any(q >= 1):
                raise ValueError("threshold maps must stay inside (0, 1)")
        return q0, q1


@dataclass
class PrteResult:
    delta_outcome: float
    delta_treatment: float
    delta_shares: dict

    def to_report(self) -> dict:
        return {"estimand": "prte", "delta_outcome": self.delta_outcome,
                "delta_treatment": self.delta_treatment,
                "delta_shares": {str(k): v for k, v in self.delta_shares.items()}}


def prte(means: dict, f, grid: Grid, shift: PolicyShift, model: SelectionModel, Z) -> PrteResult:
    """Changes in mean outcome, mean treatment and treatment shares.

    ``means[k]`` is ``E[G(Y_k) | V = .]`` on ``grid``; treatments whose
    assignment probability does not move may be omitted.
    """
    q0, q1 = shift.panels(Z)
    nodes = grid.nodes()
    f = np.asarray(f, dtype=float)
    d_out = d_treat = 0.0
    shares = {}
    for k in range(model.K):
        ups = (assignment_probability(model, q1, nodes, k)
               - assignment_probability(model, q0, nodes, k)).reshape(grid.shape)
        if not np.any(ups):
            shares[k] = 0.0
            continue
        mass = trapezoid(ups * f, grid.axes)
        shares[k] = mass
        d_treat += k * mass
        if k not in means:
            raise ValueError(f"treatment {k} changes share but has no mean surface")
        d_out += trapezoid(_weighted(means[k], ups * f, f), grid.axes)
    return PrteResult(float(d_out), float(d_treat), shares)


@dataclass
class BoundsResult:
    lo: float
    hi: float
    coverage: float
    point: float | None = None

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, x: float) -> bool:
        return self.lo <= x <= self.hi

    def to_report(self) -> dict:
        return {"estimand": "bounds", "lo": self.lo, "hi": self.hi, "coverage": self.coverage}


def bounds(tb, grid: Grid, index: int, coverage: float,
           transform: Transform = Transform("indicator")) -> BoundsResult:
    """Interval for ``E[G(Y_k)]`` when thresholds only span ``grid``.

    ``tb`` is the mixed partial of ``E[G(Y) D_k | Q = q]`` on the grid and
    ``coverage`` the heterogeneity mass of the attained region.  ``G`` must
    take values in ``[0, 1]``.
    """
    if not transform.bounded:
        raise ValueError("bounds need a transform with values in [0, 1]")
    if not 0 <= coverage <= 1 + WEIGHT_TOL:
        raise ValueError(f"coverage mass {coverage} outside [0, 1]")
    lo = trapezoid(np.asarray(tb, dtype=float), grid.axes, extend=False) / index
    return BoundsResult(lo, lo + 1 - coverage, coverage)


def bounds_from_source(source, model: SelectionModel, k: int, grid: Grid,
                       transform: Transform) -> BoundsResult:
    """Estimate the pieces of :func:`bounds` over the span of ``grid``.

    The coverage mass is the integral of the density implied by treatment
    ``k`` over that span.
    """
    c = model.rules[k].index
    if c == 0:
        raise ValueError("bounds need a treatment with nonzero index")
    vals, _ = source.derivatives([P(k), B(k, transform)], (1,) * model.J, grid.nodes())
    coverage = trapezoid(vals[:, 0].reshape(grid.shape), grid.axes, extend=False) / c
    return bounds(vals[:, 1].reshape(grid.shape), grid, c, float(coverage), transform)

