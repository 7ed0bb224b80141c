"""Heterogeneity densities, counterfactual means and MTEs from mixed partials.

For a treatment with nonzero index ``c``, the full mixed partial ``T`` of
the propensity gives the density, ``f(q) = T P_k(q) / c``, and
``E[G(Y_k) | V = q] = T E[G(Y) D_k | Q = q] / T P_k(q)``.  For a zero-index
treatment the same holds with the partial taken over a leading subset.

Two data sources share one interface: :class:`OracleSource`
differentiates closed-form surfaces, :class:`SampleSource` fits local
polynomials to simulated records.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import special

from .algebra import SelectionModel, leading_subsets, subset_mask
from .dgp import DgpSpec, OutcomeModel, PolyMean, true_propensity
from .smoother import Grid, finite_diff, fit_nodes

DENOM_FLOOR = 1e-4


class IdentificationError(ValueError):
    pass


@dataclass(frozen=True)
class Transform:
    """Outcome transform ``G``: identity, or ``1(Y <= y)``."""

    kind: str = "identity"
    y: float = 0.0

    def __post_init__(self):
        if self.kind not in ("identity", "indicator"):
            raise ValueError(f"unknown transform {self.kind!r}")

    def apply(self, Y):
        Y = np.asarray(Y, dtype=float)
        return Y if self.kind == "identity" else (Y <= self.y).astype(float)

    @property
    def bounded(self) -> bool:
        return self.kind == "indicator"

    def outcome_model(self, outcomes: OutcomeModel) -> OutcomeModel:
        return replace(outcomes, transform=self.kind, y_cut=self.y)


IDENTITY = Transform()


def P(k: int):
    return ("P", int(k), IDENTITY)


def B(k: int, transform: Transform = IDENTITY):
    return ("B", int(k), transform)


# --- oracle surfaces -------------------------------------------------------------

def _set_partitions(items):
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]
        yield [[first]] + part


def _poly_partial(mu: PolyMean, coords) -> PolyMean:
    for j in coords:
        mu = mu.partial(j)
    return mu


def conditional_mean_partial(outcomes: OutcomeModel, k: int, coords, V) -> np.ndarray:
    """``d_S E[G(Y_k) | V = v]`` for the 0-based coordinates ``S``.

    The indicator transform ``Phi((y - mu) / sigma)`` is differentiated by
    summing over set partitions of ``S`` (Faa di Bruno), using
    ``Phi^{(m)}(t) = (-1)^{m-1} He_{m-1}(t) phi(t)``.
    """
    mu = outcomes.means[k]
    coords = tuple(coords)
    if outcomes.transform == "identity":
        return _poly_partial(mu, coords)(V)
    s = outcomes.sigmas[k]
    if s == 0:
        raise IdentificationError("indicator transform without noise has no smooth oracle")
    t = (outcomes.y_cut - mu(V)) / s
    if not coords:
        return special.ndtr(t)
    pdf = np.exp(-0.5 * t * t) / np.sqrt(2 * np.pi)
    out = np.zeros_like(t)
    for part in _set_partitions(coords):
        m = len(part)
        herm = np.polynomial.hermite_e.hermeval(t, [0] * (m - 1) + [1])
        term = (-1) ** (m - 1) * herm * pdf
        for block in part:
            term = term * (-_poly_partial(mu, block)(V) / s)
        out += term
    return out


class OracleSource:
    """Closed-form observable surfaces of a DGP, differentiated numerically.

    ``P_k(q)`` comes from the joint CDF by inclusion-exclusion.  The
    outcome surface ``E[G(Y) D_k | Q = q] = sum_l c_l E[g_k(V) 1(V_l < q_l)]``
    uses integration by parts on each box ``[0, b]``::

        int_{[0,b]} g dF = sum_S (-1)^|S| int_{[0,b_S]} d_S g(v_S, b_-S) F(v_S, b_-S) dv_S

    with Gauss-Legendre nodes, so only ``F`` and partials of ``g`` are needed.
    """

    mode = "oracle"

    def __init__(self, spec: DgpSpec, h: float = 1e-3, richardson: bool = True,
                 quad_nodes: int = 32):
        self.spec = spec
        self.h = h
        self.richardson = richardson
        x, w = np.polynomial.legendre.leggauss(quad_nodes)
        self._gl = (0.5 * (x + 1), 0.5 * w)

    @property
    def J(self):
        return self.spec.J

    def _box_expectation(self, outcomes, k, b):
        """``E[g_k(V) 1(V < b)]`` for corners ``b`` of shape (M, J)."""
        het = self.spec.heterogeneity
        M, J = b.shape
        t, w = self._gl
        total = conditional_mean_partial(outcomes, k, (), b) * het.cdf(b)
        for S in range(1, 1 << J):
            coords = [j for j in range(J) if S >> j & 1]
            if outcomes.transform == "identity" and not _poly_partial(outcomes.means[k], coords).terms:
                continue  # the partial of a polynomial mean is identically zero
            nodes = np.array(list(itertools.product(t, repeat=len(coords))))
            wts = np.prod(np.array(list(itertools.product(w, repeat=len(coords)))), axis=1)
            pts = np.repeat(b[:, None, :], len(nodes), axis=1)
            pts[:, :, coords] = b[:, None, coords] * nodes[None, :, :]
            jac = np.prod(b[:, coords], axis=1)
            flat = pts.reshape(-1, J)
            vals = (conditional_mean_partial(outcomes, k, coords, flat) * het.cdf(flat)).reshape(M, -1)
            total = total + (-1) ** len(coords) * jac * (vals @ wts)
        return total

    def level(self, response, q) -> np.ndarray:
        kind, k, tr = response
        q = np.atleast_2d(np.asarray(q, dtype=float))
        if kind == "P":
            return true_propensity(self.spec, q)[:, k]
        outcomes = tr.outcome_model(self.spec.outcomes)
        rule = self.spec.model.rules[k]
        out = np.zeros(len(q))
        for l, c in enumerate(rule.coeffs):
            if c == 0:
                continue
            sel = np.array([(l >> j) & 1 for j in range(self.J)], dtype=bool)
            b = np.where(sel[None, :], q, 1.0)
            for start in range(0, len(b), 256):
                out[start:start + 256] += c * self._box_expectation(outcomes, k, b[start:start + 256])
        return out

    def derivatives(self, responses, alpha, nodes):
        nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
        cols = [finite_diff(lambda x, r=r: self.level(r, x), nodes, alpha, self.h, self.richardson)
                for r in responses]
        return np.column_stack(cols), np.ones(len(nodes), dtype=bool)


class SampleSource:
    """Observable records ``(Y, D, Q(Z))`` smoothed by local polynomials.

    Parameters
    ----------
    q : (n, J) array
        Threshold values ``Q(Z)`` of each record.
    D, Y : (n,) arrays
    bandwidth : float or sequence
        Kernel half-width(s).
    poly_order : int
        Per-dimension degree of the tensor basis; 1 already contains the
        full mixed monomial.
    bins : int or None
        Cells per dimension used to collapse the sample.
    weights : (n,) array, optional
        Frequency weights (bootstrap).
    """

    mode = "estimation"

    def __init__(self, q, D, Y, bandwidth=0.35, poly_order: int = 1, bins: int | None = 200,
                 weights=None):
        self.q = np.atleast_2d(np.asarray(q, dtype=float))
        self.D = np.asarray(D)
        self.Y = np.asarray(Y, dtype=float)
        self.bandwidth = bandwidth
        self.poly_order = poly_order
        self.bins = bins
        self.weights = weights

    @property
    def J(self):
        return self.q.shape[1]

    @property
    def n(self):
        return len(self.D)

    @classmethod
    def from_sample(cls, sample, thresholds=None, **kw) -> "SampleSource":
        q = sample.Q if thresholds is None else thresholds(sample.Z)
        if q is None:
            raise ValueError("sample carries no threshold values; pass the threshold map")
        return cls(q, sample.D, sample.Y, **kw)

    def reweighted(self, weights) -> "SampleSource":
        return SampleSource(self.q, self.D, self.Y, self.bandwidth, self.poly_order,
                            self.bins, weights)

    def response(self, response) -> np.ndarray:
        kind, k, tr = response
        d = (self.D == k).astype(float)
        return d if kind == "P" else tr.apply(self.Y) * d

    def derivatives(self, responses, alpha, nodes):
        W = np.column_stack([self.response(r) for r in responses])
        derivs, ess, ok, _ = fit_nodes(self.q, W, nodes, self.bandwidth, self.poly_order,
                                       self.weights, self.bins)
        alpha = tuple(int(a) for a in alpha)
        if alpha not in derivs:
            raise ValueError(f"derivative {alpha} needs a higher poly_order")
        vals = derivs[alpha]
        return vals, ok & np.all(np.isfinite(vals), axis=1)


def bootstrap(source: SampleSource, fn, n_boot: int, seed) -> np.ndarray:
    """Stack of ``fn(source_b)`` over Poisson(1)-reweighted replicates."""
    rng = np.random.default_rng(seed)
    reps = []
    for _ in range(n_boot):
        w = rng.poisson(1.0, source.n).astype(float)
        reps.append(np.asarray(fn(source.reweighted(w)), dtype=float))
    return np.stack(reps)


# --- estimands --------------------------------------------------------------------

@dataclass
class MteEstimate:
    """Estimates on a grid.  ``means[k]`` is ``E[G(Y_k) | V = .]``; ``mte`` is
    ``means[k] - means[l]`` for ``pair = (k, l)`` when present."""

    grid: Grid
    f: np.ndarray
    means: dict = field(default_factory=dict)
    reliable: np.ndarray | None = None
    pair: tuple[int, int] | None = None
    meta: dict = field(default_factory=dict)

    @property
    def mte(self) -> np.ndarray:
        if self.pair is None:
            raise ValueError("no treatment pair attached")
        k, l = self.pair
        return self.means[k] - self.means[l]


def _full_index(model: SelectionModel, k: int) -> int:
    c = model.rules[k].index
    if c == 0:
        raise IdentificationError(
            f"treatment {k} has index 0; use estimate_zero_index with one of its "
            f"leading subsets {leading_subsets(model.rules[k])}")
    return c


def estimate_density(source, model: SelectionModel, k: int, grid: Grid) -> MteEstimate:
    c = _full_index(model, k)
    vals, ok = source.derivatives([P(k)], (1,) * model.J, grid.nodes())
    f = (vals[:, 0] / c).reshape(grid.shape)
    return MteEstimate(grid, f, {}, ok.reshape(grid.shape),
                       meta={"mode": source.mode, "treatment": k, "index": c})


def _means(source, model, ks, grid, transform, floor):
    ks = list(dict.fromkeys(ks))
    for k in ks:
        _full_index(model, k)
    responses = [r for k in ks for r in (P(k), B(k, transform))]
    vals, ok = source.derivatives(responses, (1,) * model.J, grid.nodes())
    means = {}
    dens = {}
    for i, k in enumerate(ks):
        tp, tb = vals[:, 2 * i], vals[:, 2 * i + 1]
        small = np.abs(tp) < floor
        ok = ok & ~small
        with np.errstate(divide="ignore", invalid="ignore"):
            means[k] = np.where(small, np.nan, tb / tp).reshape(grid.shape)
        dens[k] = (tp / model.rules[k].index).reshape(grid.shape)
    return means, dens, ok.reshape(grid.shape)


def estimate_counterfactual_mean(source, model: SelectionModel, k: int, grid: Grid,
                                 transform: Transform = IDENTITY,
                                 floor: float = DENOM_FLOOR) -> MteEstimate:
    means, dens, ok = _means(source, model, [k], grid, transform, floor)
    return MteEstimate(grid, dens[k], means, ok,
                       meta={"mode": source.mode, "transform": transform.kind, "floor": floor})


def estimate_mte(source, model: SelectionModel, k: int, l: int, grid: Grid,
                 transform: Transform = IDENTITY, floor: float = DENOM_FLOOR,
                 density_from: int | None = None) -> MteEstimate:
    """MTE of ``k`` versus ``l``.  Both treatments need a nonzero index: a
    zero-index treatment identifies a mean given only part of ``V``, which
    cannot be contrasted with a full-``V`` mean."""
    zero = [t for t in (k, l) if model.rules[t].index == 0]
    if zero:
        raise IdentificationError(
            f"treatment(s) {zero} have index 0 and condition on a subvector of V; "
            "contrast them only with treatments sharing the same leading subset")
    means, dens, ok = _means(source, model, [k, l], grid, transform, floor)
    f = dens[k if density_from is None else density_from]
    return MteEstimate(grid, f, means, ok, (k, l),
                       meta={"mode": source.mode, "transform": transform.kind, "floor": floor})


@dataclass
class ZeroIndexEstimate:
    subset: tuple[int, ...]
    grid: Grid
    f: np.ndarray
    mean: np.ndarray
    reliable: np.ndarray
    fixed: tuple[float, ...]
    coefficient: int


def _embed(grid_nodes, subset, fixed, J):
    """Full-dimensional nodes with subset coordinates from the grid."""
    off = [j for j in range(J) if j + 1 not in subset]
    fixed = np.broadcast_to(np.asarray(fixed, dtype=float), (len(off),))
    out = np.empty((len(grid_nodes), J))
    for i, j in enumerate(sorted(j - 1 for j in subset)):
        out[:, j] = grid_nodes[:, i]
    for i, j in enumerate(off):
        out[:, j] = fixed[i]
    return out, tuple(fixed.tolist())


def estimate_zero_index(source, model: SelectionModel, k: int, subset: Sequence[int],
                        grid: Grid, fixed=0.5, transform: Transform = IDENTITY,
                        floor: float = DENOM_FLOOR, with_mean: bool = True) -> ZeroIndexEstimate:
    """Density of ``V_l`` and ``E[G(Y_k) | V_l]`` from a leading subset ``l``.

    ``subset`` holds 1-based threshold indices; the remaining coordinates of
    ``q`` are held at ``fixed``.  The result should not depend on them.
    ``with_mean=False`` skips the outcome surface and leaves ``mean`` NaN.
    """
    subset = tuple(sorted(int(j) for j in subset))
    rule = model.rules[k]
    if subset not in [tuple(s) for s in leading_subsets(rule)]:
        raise IdentificationError(
            f"{subset} is not a leading subset of treatment {k}; choose from {leading_subsets(rule)}")
    if grid.J != len(subset):
        raise ValueError("grid dimension must equal the subset size")
    c = rule.coeffs[subset_mask(subset)]
    nodes, fixed = _embed(grid.nodes(), subset, fixed, model.J)
    alpha = tuple(1 if j + 1 in subset else 0 for j in range(model.J))
    responses = [P(k), B(k, transform)] if with_mean else [P(k)]
    vals, ok = source.derivatives(responses, alpha, nodes)
    tp = vals[:, 0]
    tb = vals[:, 1] if with_mean else np.full_like(tp, np.nan)
    small = np.abs(tp) < floor
    with np.errstate(divide="ignore", invalid="ignore"):
        mean = np.where(small, np.nan, tb / tp)
    return ZeroIndexEstimate(subset, grid, (tp / c).reshape(grid.shape),
                             mean.reshape(grid.shape), (ok & ~small).reshape(grid.shape),
                             fixed, c)


def zero_index_invariance(source, model, k, subset, grid, fixed_values) -> float:
    """Largest change of the zero-index density across held-fixed values."""
    fs = [estimate_zero_index(source, model, k, subset, grid, fixed=v, with_mean=False).f
          for v in fixed_values]
    return float(max(np.max(np.abs(a - fs[0])) for a in fs[1:])) if len(fs) > 1 else 0.0


@dataclass
class SpecTestResult:
    """Cross-treatment comparison of density estimates.

    ``independent_restrictions`` counts the equalities that carry
    information: with nonzero-index treatments ``N``, it is ``N - 1``, less
    one more when every treatment has a nonzero index (the propensities sum
    to one, so the last density is implied by the others).
    """

    statistic: float
    per_node: np.ndarray
    pairs: list
    independent_restrictions: int
    tolerance: float
    max_t: float | None = None
    se: np.ndarray | None = None
    mode: str = "oracle"

    @property
    def passed(self) -> bool:
        if self.independent_restrictions == 0:
            return True
        if self.max_t is not None:
            return self.max_t <= self.tolerance
        return self.statistic < self.tolerance


def _density_stack(source, model, ks, grid):
    vals, ok = source.derivatives([P(k) for k in ks], (1,) * model.J, grid.nodes())
    idx = np.array([model.rules[k].index for k in ks], dtype=float)
    return vals / idx[None, :], ok


def specification_test(source, model: SelectionModel, grid: Grid, tol: float | None = None,
                       n_boot: int = 50, seed=0) -> SpecTestResult:
    """Compare the densities implied by every pair of nonzero-index treatments.

    Oracle mode passes when the largest gap is below ``tol`` (default
    1e-5).  Estimation mode passes when the largest node-wise gap divided
    by its bootstrap standard error stays below ``tol`` (default 4).
    """
    ks = model.nonzero_index_treatments()
    if len(ks) < 2:
        raise IdentificationError("the specification test needs two nonzero-index treatments")
    restrictions = len(ks) - 1 - (1 if len(ks) == model.K else 0)
    pairs = list(itertools.combinations(ks, 2))
    dens, ok = _density_stack(source, model, ks, grid)

    def gaps(d):
        return np.column_stack([d[:, ks.index(a)] - d[:, ks.index(b)] for a, b in pairs])

    g = gaps(dens)
    g[~ok] = 0.0
    per_node = np.max(np.abs(g), axis=1).reshape(grid.shape)
    stat = float(per_node.max())
    if source.mode == "oracle":
        return SpecTestResult(stat, per_node, pairs, restrictions, 1e-5 if tol is None else tol)
    if restrictions == 0:
        # the gaps vanish identically, so a bootstrap would only scale round-off
        return SpecTestResult(stat, per_node, pairs, 0, 4.0 if tol is None else tol, mode="estimation")
    reps = bootstrap(source, lambda s: gaps(_density_stack(s, model, ks, grid)[0]), n_boot, seed)
    se = reps.std(axis=0, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(ok[:, None] & (se > 0), np.abs(g) / se, 0.0)
    return SpecTestResult(stat, per_node, pairs, restrictions, 4.0 if tol is None else tol,
                          float(np.nanmax(t)), se, "estimation")


def counterfactual_cdf(source, model: SelectionModel, k: int, node, y_grid,
                       floor: float = DENOM_FLOOR) -> np.ndarray:
    """``Pr(Y_k <= y | V = node)`` over ``y_grid``, rearranged to be nondecreasing."""
    _full_index(model, k)
    node = np.atleast_2d(np.asarray(node, dtype=float))
    y_grid = np.asarray(y_grid, dtype=float)
    responses = [P(k)] + [B(k, Transform("indicator", y)) for y in y_grid]
    vals, ok = source.derivatives(responses, (1,) * model.J, node)
    tp = vals[0, 0]
    if abs(tp) < floor or not ok[0]:
        raise IdentificationError("density too small at the node to form the ratio")
    return np.sort(vals[0, 1:] / tp)


def counterfactual_quantile(source, model: SelectionModel, k: int, node, u: float, y_grid) -> float:
    y_grid = np.sort(np.asarray(y_grid, dtype=float))
    cdf = counterfactual_cdf(source, model, k, node, y_grid)
    if not cdf[0] <= u <= cdf[-1]:
        raise ValueError(f"level {u} outside the attained CDF range [{cdf[0]:.4g}, {cdf[-1]:.4g}]")
    i = int(np.searchsorted(cdf, u, side="left"))
    if i == 0 or cdf[i] == u:
        return float(y_grid[i])
    # linear interpolation inside the bracketing step
    lo, hi = cdf[i - 1], cdf[i]
    return float(y_grid[i - 1] + (u - lo) / (hi - lo) * (y_grid[i] - y_grid[i - 1]))
