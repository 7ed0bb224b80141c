"""Local polynomial surfaces with mixed partial derivatives, and finite differences.

A local fit at node ``x0`` regresses the response on the tensor basis
``prod_j u_j^{a_j}`` with ``u = (q - x0) / h`` and ``0 <= a_j <= p``, using
the product Epanechnikov kernel ``prod_j 0.75 (1 - u_j^2)_+``.  The
coefficient ``b_a`` gives the derivative ``d^a E[W|q] = b_a * prod_j a_j! / h_j^{a_j}``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

MIN_ESS = 30.0


@dataclass(frozen=True)
class Grid:
    """Tensor grid.  Knots must lie inside ``bounds`` (the unit interval by
    default; instrument-space grids may use other bounds)."""

    axes: tuple[np.ndarray, ...]
    bounds: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        for a in axes:
            if a.ndim != 1 or len(a) < 4:
                raise ValueError("each grid axis needs at least 4 knots")
            if np.any(np.diff(a) <= 0):
                raise ValueError("grid knots must be strictly increasing")
            if a[0] <= self.bounds[0] or a[-1] >= self.bounds[1]:
                raise ValueError(f"grid knots must lie inside {self.bounds}")
        object.__setattr__(self, "axes", axes)

    @property
    def J(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.axes)

    def nodes(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    @classmethod
    def uniform(cls, J: int, m: int, lo: float = 0.05, hi: float = 0.95) -> "Grid":
        return cls(tuple(np.linspace(lo, hi, m) for _ in range(J)))

    def __eq__(self, other):
        return (isinstance(other, Grid) and self.shape == other.shape
                and self.bounds == other.bounds
                and all(np.array_equal(a, b) for a, b in zip(self.axes, other.axes)))

    def __hash__(self):
        return hash(tuple(a.tobytes() for a in self.axes))


@dataclass
class Surface:
    """Values and derivatives on a grid.

    ``derivatives`` maps a multi-index tuple to a tensor of the grid shape;
    the zero multi-index holds the values.  ``reliable`` is False at nodes
    whose effective sample size fell below 30 or whose local design was
    singular.
    """

    grid: Grid
    derivatives: dict
    ess: np.ndarray | None = None
    reliable: np.ndarray | None = None
    bandwidth: tuple[float, ...] | None = None
    meta: dict = field(default_factory=dict)

    @property
    def values(self) -> np.ndarray:
        return self.derivatives[(0,) * self.grid.J]

    def d(self, alpha: Sequence[int]) -> np.ndarray:
        alpha = tuple(int(a) for a in alpha)
        if alpha not in self.derivatives:
            raise KeyError(f"derivative {alpha} was not computed")
        return self.derivatives[alpha]

    def mixed(self) -> np.ndarray:
        return self.d((1,) * self.grid.J)

    def __post_init__(self):
        if self.reliable is None:
            self.reliable = np.ones(self.grid.shape, dtype=bool)


def _basis_exponents(J: int, p: int) -> list[tuple[int, ...]]:
    return list(itertools.product(range(p + 1), repeat=J))


@dataclass
class BinnedData:
    """Sample collapsed onto a regular cell lattice: cell mean position,
    total weight and weighted response sums."""

    q: np.ndarray
    count: np.ndarray
    wsum: np.ndarray  # (cells, m)


def bin_data(q, w, bins: int = 200, weights=None) -> BinnedData:
    q = np.atleast_2d(np.asarray(q, dtype=float))
    w = np.asarray(w, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    n, J = q.shape
    c = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    # the lattice spans the unit cube, widened to the data range when needed
    lo = np.minimum(q.min(axis=0), 0.0)
    span = np.maximum(q.max(axis=0), 1.0) - lo
    cell = np.clip(((q - lo) / span * bins).astype(np.int64), 0, bins - 1)
    key = np.ravel_multi_index(cell.T, (bins,) * J)
    uniq, inv = np.unique(key, return_inverse=True)
    cnt = np.bincount(inv, weights=c, minlength=len(uniq))
    qs = np.column_stack([np.bincount(inv, weights=c * q[:, j], minlength=len(uniq))
                          for j in range(J)])
    ws = np.column_stack([np.bincount(inv, weights=c * w[:, i], minlength=len(uniq))
                          for i in range(w.shape[1])])
    keep = cnt > 0
    return BinnedData(qs[keep] / cnt[keep, None], cnt[keep], ws[keep])


def _local_solve(qc, cnt, wsum, node, h, exps, fact, min_ess):
    u = (qc - node) / h
    inside = np.all(np.abs(u) < 1, axis=1)
    u = u[inside]
    k = np.prod(0.75 * (1 - u**2), axis=1) * cnt[inside]
    m = wsum.shape[1]
    if k.size == 0:
        return np.full((len(exps), m), np.nan), 0.0, False
    ess = k.sum() ** 2 / np.sum(k**2 / np.maximum(cnt[inside], 1e-300))
    X = np.prod(u[:, None, :] ** exps[None, :, :], axis=2)
    A = X.T @ (X * k[:, None])
    # cell sums already carry the count, so only the kernel multiplies them
    b = X.T @ (wsum[inside] * (k / cnt[inside])[:, None])
    ok = ess >= min_ess
    try:
        cond = np.linalg.cond(A)
        if not np.isfinite(cond) or cond > 1e12:
            raise np.linalg.LinAlgError
        coef = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        return np.full((len(exps), m), np.nan), ess, False
    return coef * fact[:, None], ess, ok


def _prepare(q, W, bandwidth, poly_order, weights, bins):
    q = np.atleast_2d(np.asarray(q, dtype=float))
    W = np.asarray(W, dtype=float)
    if W.ndim == 1:
        W = W[:, None]
    n, J = q.shape
    if n == 0:
        raise ValueError("empty sample")
    if poly_order < 1:
        raise ValueError("poly_order must be at least 1")
    h = np.broadcast_to(np.asarray(bandwidth, dtype=float), (J,)).copy()
    if np.any(h <= 0):
        raise ValueError("bandwidth must be positive")
    if bins:
        bd = bin_data(q, W, bins, weights)
        return h, bd.q, bd.count, bd.wsum
    cnt = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    keep = cnt > 0
    return h, q[keep], cnt[keep], W[keep] * cnt[keep, None]


def fit_nodes(q, W, nodes, bandwidth, poly_order: int, weights=None,
              bins: int | None = None, min_ess: float = MIN_ESS):
    """Local fits at arbitrary nodes.

    Returns ``(derivs, ess, ok)`` where ``derivs`` maps each multi-index
    of the basis to an ``(N, m)`` array of derivative estimates.
    """
    nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
    h, qc, cnt, wsum = _prepare(q, W, bandwidth, poly_order, weights, bins)
    J = qc.shape[1]
    if nodes.shape[1] != J:
        raise ValueError("sample and node dimensions differ")
    exps_list = _basis_exponents(J, poly_order)
    exps = np.array(exps_list, dtype=float)
    fact = np.array([np.prod([math.factorial(a) / h[j] ** a for j, a in enumerate(e)])
                     for e in exps_list])
    m = wsum.shape[1]
    out = np.empty((len(nodes), len(exps_list), m))
    ess = np.empty(len(nodes))
    ok = np.empty(len(nodes), dtype=bool)
    for i, node in enumerate(nodes):
        out[i], ess[i], ok[i] = _local_solve(qc, cnt, wsum, node, h, exps, fact, min_ess)
    derivs = {e: out[:, i, :] for i, e in enumerate(exps_list)}
    return derivs, ess, ok, h


def fit_many(q, W, grid: Grid, bandwidth, poly_order: int, weights=None,
             bins: int | None = None, min_ess: float = MIN_ESS) -> list[Surface]:
    """Fit several responses sharing the positions ``q`` and one local design.

    Parameters
    ----------
    q : (n, J) array
    W : (n,) or (n, m) array of responses
    grid : Grid
    bandwidth : float or sequence of J floats
        Kernel half-widths.
    poly_order : int
        Degree per dimension of the tensor basis.
    weights : (n,) array, optional
        Frequency weights (bootstrap resampling uses Poisson weights).
    bins : int, optional
        Collapse the sample onto ``bins**J`` cells first; cell positions are
        the within-cell means, so only within-cell spread is lost.

    Returns
    -------
    list of Surface, one per response column.
    """
    if np.atleast_2d(q).shape[1] != grid.J:
        raise ValueError("sample and grid dimensions differ")
    derivs, ess, ok, h = fit_nodes(q, W, grid.nodes(), bandwidth, poly_order, weights,
                                   bins, min_ess)
    shape = grid.shape
    m = next(iter(derivs.values())).shape[1]
    return [Surface(grid, {e: d[:, c].reshape(shape) for e, d in derivs.items()},
                    ess.reshape(shape), ok.reshape(shape), tuple(h.tolist()),
                    {"poly_order": poly_order, "bins": bins})
            for c in range(m)]


def fit(q, w, grid: Grid, bandwidth, poly_order: int, **kw) -> Surface:
    w = np.asarray(w, dtype=float)
    if w.ndim != 1:
        raise ValueError("fit takes a single response; use fit_many for several")
    return fit_many(q, w, grid, bandwidth, poly_order, **kw)[0]


def bandwidth_rule(q, order, poly_order: int | None = None) -> np.ndarray:
    """Rule-of-thumb half-widths ``sd_j * n^(-1/(2p + J + 2)) * 1.5^|order|``.

    ``order`` is a multi-index (or an int total order); ``p`` defaults to
    one above the highest per-dimension order.
    """
    q = np.atleast_2d(np.asarray(q, dtype=float))
    n, J = q.shape
    if n < 100:
        raise ValueError("bandwidth rule needs at least 100 points")
    if np.isscalar(order):
        total, top = int(order), int(order)
    else:
        total, top = int(sum(order)), int(max(order))
    p = top + 1 if poly_order is None else int(poly_order)
    sd = q.std(axis=0, ddof=1)
    if np.any(sd <= 0):
        raise ValueError("degenerate dimension: zero variance")
    return sd * n ** (-1.0 / (2 * p + J + 2)) * 1.5**total


# --- finite differences ------------------------------------------------------

_STENCILS = {
    0: ((0.0,), (1.0,)),
    1: ((-1.0, 1.0), (-0.5, 0.5)),
    2: ((-1.0, 0.0, 1.0), (1.0, -2.0, 1.0)),
    3: ((-2.0, -1.0, 1.0, 2.0), (-0.5, 1.0, -1.0, 0.5)),
}


def _fd_once(f, points, alpha, h, bounds):
    J = points.shape[1]
    offs, wts = [], []
    for j, a in enumerate(alpha):
        if a not in _STENCILS:
            raise ValueError(f"derivative order {a} per dimension is not supported")
        o, w = _STENCILS[a]
        offs.append(np.asarray(o) * h)
        wts.append(np.asarray(w) / h**a)
    combos = list(itertools.product(*[range(len(o)) for o in offs]))
    shift = np.array([[offs[j][c[j]] for j in range(J)] for c in combos])
    weight = np.array([np.prod([wts[j][c[j]] for j in range(J)]) for c in combos])
    pts = points[:, None, :] + shift[None, :, :]
    if np.any(pts <= bounds[0]) or np.any(pts >= bounds[1]):
        raise ValueError(f"finite-difference stencil exits the domain {bounds}")
    vals = np.asarray(f(pts.reshape(-1, J)), dtype=float)
    vals = vals.reshape(len(points), len(combos), *vals.shape[1:])
    return np.einsum("c,nc...->n...", weight, vals)


def finite_diff(f: Callable, point, alpha: Sequence[int], h: float = 1e-3,
                richardson: bool = True, bounds=(0.0, 1.0)):
    """Centered tensor finite difference of ``f`` at one or many points.

    ``f`` maps an (N, J) array to N values (or to an (N, K) array).  With
    ``richardson`` the step-``h`` and step-``h/2`` estimates are combined as
    ``D(h/2) + (D(h/2) - D(h)) / 3``.
    """
    pts = np.asarray(point, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != pts.shape[1]:
        raise ValueError("multi-index length differs from the dimension")
    if not any(alpha):
        out = np.asarray(f(pts), dtype=float)
        return out[0] if single else out
    if not h > 0:
        raise ValueError("step must be positive")
    d1 = _fd_once(f, pts, alpha, h, bounds)
    if richardson:
        d2 = _fd_once(f, pts, alpha, h / 2, bounds)
        d1 = d2 + (d2 - d1) / 3
    return d1[0] if single else d1


def finite_diff_surface(f: Callable, grid: Grid, alphas, h: float = 1e-3,
                        richardson: bool = True) -> Surface:
    """Surface of ``f`` and the requested derivatives on ``grid``, by finite differences."""
    nodes = grid.nodes()
    derivs = {}
    for a in [(0,) * grid.J] + [tuple(a) for a in alphas]:
        derivs[a] = np.asarray(finite_diff(f, nodes, a, h, richardson, grid.bounds)).reshape(grid.shape)
    return Surface(grid, derivs, meta={"mode": "oracle", "h": h, "richardson": richardson})
