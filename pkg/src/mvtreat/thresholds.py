"""Recovery of threshold functions (and copula generators) from propensity surfaces.

Surfaces here live in instrument space: a :class:`~mvtreat.smoother.Surface`
on a grid over ``(z1, z2)``, carrying at least the values and, where
needed, the first partials and the cross partial.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import interpolate
from scipy.integrate import cumulative_trapezoid

from .smoother import Grid, Surface, finite_diff_surface


def oracle_surface(fn, grid: Grid, h: float = 1e-3, richardson: bool = True) -> Surface:
    """Values, first partials and cross partial of a closed-form function."""
    return finite_diff_surface(fn, grid, [(1, 0), (0, 1), (1, 1)], h, richardson)


def tabulated_surface(grid: Grid, values) -> Surface:
    """Surface from tabulated values; partials by second-order ``np.gradient``."""
    v = np.asarray(values, dtype=float)
    d1 = np.gradient(v, grid.axes[0], axis=0, edge_order=2)
    d2 = np.gradient(v, grid.axes[1], axis=1, edge_order=2)
    d12 = np.gradient(d1, grid.axes[1], axis=1, edge_order=2)
    return Surface(grid, {(0, 0): v, (1, 0): d1, (0, 1): d2, (1, 1): d12},
                   meta={"mode": "tabulated"})


# --- two-way flows ----------------------------------------------------------

@dataclass
class RecoveredThresholds:
    """Tabulated threshold estimates with the normalization that fixes them.

    ``axes[j]`` is the instrument grid on which ``values[j]`` (``Q_j`` or
    ``G_j``) is tabulated.  ``normalization`` records the anchor, the
    constant chosen and its admissible interval.
    """

    axes: tuple[np.ndarray, ...]
    values: tuple[np.ndarray, ...]
    normalization: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def __call__(self, j: int, z):
        return np.interp(z, self.axes[j], self.values[j])


@dataclass(frozen=True)
class SeparabilityResult:
    statistic: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.statistic < self.tolerance


def separability_test(P: Surface, tol: float | None = None, interior: int = 1) -> SeparabilityResult:
    """Sup of ``|d2P/dz1dz2|`` over nodes at least ``interior`` steps from the edge.

    The default tolerance is ten times the surface's ``noise_floor`` when it
    reports one and ``1e-6`` otherwise.
    """
    d12 = P.d((1, 1))
    sl = tuple(slice(interior, n - interior) for n in d12.shape)
    inner = d12[sl]
    rel = P.reliable[sl]
    vals = np.abs(inner[rel & np.isfinite(inner)])
    stat = float(vals.max()) if vals.size else float("nan")
    if tol is None:
        floor = P.meta.get("noise_floor")
        tol = 10 * floor if floor else 1e-6
    return SeparabilityResult(stat, float(tol))


def _combine(a: Surface, b: Surface, wa: float, wb: float) -> Surface:
    keys = set(a.derivatives) & set(b.derivatives)
    meta = dict(a.meta)
    fa, fb = a.meta.get("noise_floor"), b.meta.get("noise_floor")
    if fa or fb:
        meta["noise_floor"] = float(np.hypot(wa * (fa or 0), wb * (fb or 0)))
    return Surface(a.grid, {k: wa * a.derivatives[k] + wb * b.derivatives[k] for k in keys},
                   a.ess, a.reliable & b.reliable, a.bandwidth, meta)


def c_interval(P: np.ndarray, i0: int, j0: int) -> tuple[tuple[float, float], tuple[float, float]]:
    """Admissible ranges for the normalizing constant.

    Returns ``(positivity, range)``.  ``positivity`` keeps every treatment
    probability positive over the grid; ``range`` is the narrower set of
    constants that keep every recovered threshold inside (0, 1).
    """
    a = P[i0, j0] - P[:, j0]  # Q1 > 0  <=>  C > a(z1)
    b = P[i0, :]              # Q2 > 0  <=>  C < b(z2)
    positivity = (max(a.min(), b.min() - 1), min(b.max(), a.max() + 1))
    rng = (max(a.max(), b.max() - 1), min(b.min(), a.min() + 1))
    return positivity, rng


def identify_two_way(P0: Surface, P2: Surface, anchor: tuple[int, int],
                     C: float | None = None, P1: Surface | None = None) -> RecoveredThresholds:
    """Thresholds of the two-way-flows model from ``P = 2 P0 + P2 = Q1 + Q2``.

    ``anchor`` is the grid index ``(i0, j0)`` of ``(z1^0, z2^0)``.  Without
    ``C`` the midpoint of the range-consistent interval is used.  When
    ``P1`` is given, the separability statistic of ``2 P0 + P1`` is also
    reported for comparison.
    """
    P = _combine(P0, P2, 2.0, 1.0)
    v = P.values
    i0, j0 = anchor
    positivity, rng = c_interval(v, i0, j0)
    if not positivity[0] < positivity[1]:
        raise ValueError(f"empty admissible interval {positivity}: model misspecified")
    if C is None:
        lo, hi = rng if rng[0] < rng[1] else positivity
        C = 0.5 * (lo + hi)
    q1 = v[:, j0] - v[i0, j0] + C
    q2 = v[i0, :] - C
    diag = {}
    if (1, 1) in P.derivatives:
        s = separability_test(P)
        diag["separability_2P0_P2"] = s.statistic
        if P1 is not None:
            diag["separability_2P0_P1"] = separability_test(_combine(P0, P1, 2.0, 1.0)).statistic
    norm = {"anchor_index": [int(i0), int(j0)],
            "anchor": [float(P.grid.axes[0][i0]), float(P.grid.axes[1][j0])],
            "C": float(C), "positivity_interval": [float(x) for x in positivity],
            "range_interval": [float(x) for x in rng]}
    return RecoveredThresholds(P.grid.axes, (q1, q2), norm, diag)


# --- double hurdle, global ----------------------------------------------------

@dataclass
class GlobalHurdleResult:
    thresholds: RecoveredThresholds
    H: Surface

    def F_hat(self, v):
        """``F_V(v1, v2) = H(G1^{-1}(v1), G2^{-1}(v2))`` by monotone inversion."""
        v = np.atleast_2d(np.asarray(v, dtype=float))
        th = self.thresholds
        z = [np.interp(v[:, j], th.values[j], th.axes[j]) for j in range(2)]
        spline = interpolate.RectBivariateSpline(th.axes[0], th.axes[1], self.H.values, kx=3, ky=3)
        return spline.ev(z[0], z[1])


def identify_double_hurdle_global(H: Surface, top_coverage: float = 0.97) -> GlobalHurdleResult:
    """Thresholds from the propensity ``H = F_V(G1(z1), G2(z2))``.

    ``G1`` integrates ``lim_{z2 -> b2} dH/dz1``.  The limit is taken by
    linear extrapolation, across the last two grid rows, in the row level
    ``w = H(b1, z2)`` (which tends to ``G2(z2)``) up to ``w = 1``.  The
    lower end starts from the level ``H(a1, b2)`` rather than zero.  Both
    edge corrections vanish as the grid approaches the boundary.
    """
    v = H.values
    H1, H2 = H.d((1, 0)), H.d((0, 1))
    z1, z2 = H.grid.axes
    top = max(v[-1, :].max(), v[:, -1].max())
    if top < top_coverage:
        raise ValueError(f"grid does not reach the upper boundary: sup H on the edge is {top:.4f}")
    w2, w1 = v[-1, :], v[:, -1]
    lim1 = H1[:, -1] + (1 - w2[-1]) * (H1[:, -1] - H1[:, -2]) / (w2[-1] - w2[-2])
    lim2 = H2[-1, :] + (1 - w1[-1]) * (H2[-1, :] - H2[-2, :]) / (w1[-1] - w1[-2])
    G1 = v[0, -1] + cumulative_trapezoid(lim1, z1, initial=0.0)
    G2 = v[-1, 0] + cumulative_trapezoid(lim2, z2, initial=0.0)
    diag = {"edge_sup_H": float(top), "G1_top": float(G1[-1]), "G2_top": float(G2[-1]),
            "monotone": bool(np.all(np.diff(G1) > 0) and np.all(np.diff(G2) > 0))}
    if not diag["monotone"]:
        raise ValueError("recovered thresholds are not monotone: model misspecified")
    return GlobalHurdleResult(RecoveredThresholds((z1, z2), (G1, G2), {"method": "global"}, diag), H)


# --- double hurdle, Archimedean -----------------------------------------------

@dataclass
class RecoveredGenerator:
    """Generator recovered on ``[h_lo, h_bar]`` with ``phi'(h_bar) = -1``."""

    h: np.ndarray
    phi: np.ndarray
    h_bar: float
    location: float
    location_interval: tuple[float, float]
    R_bins: tuple[np.ndarray, np.ndarray]
    constancy: float
    constancy_tol: float

    @property
    def constancy_passed(self) -> bool:
        return self.constancy < self.constancy_tol

    def __call__(self, h):
        h = np.asarray(h, dtype=float)
        out = np.interp(h, self.h, self.phi)
        return np.where(h > self.h_bar, self.phi[-1] - (h - self.h_bar), out)

    def inverse(self, t):
        t = np.asarray(t, dtype=float)
        # phi decreases: reverse for interpolation, slope -1 beyond h_bar
        out = np.interp(t, self.phi[::-1], self.h[::-1])
        return np.where(t < self.phi[-1], self.h_bar + (self.phi[-1] - t), out)


def ratio_R(H: Surface) -> np.ndarray:
    return H.d((1, 1)) / (H.d((1, 0)) * H.d((0, 1)))


def _binned_R(h, R, nbins):
    order = np.argsort(h)
    h, R = h[order], R[order]
    edges = np.quantile(h, np.linspace(0, 1, nbins + 1))
    idx = np.clip(np.searchsorted(edges, h, side="right") - 1, 0, nbins - 1)
    hb, Rb, resid = [], [], []
    for b in range(nbins):
        m = idx == b
        if m.sum() < 4:
            continue
        lh, lR = np.log(h[m]), np.log(R[m])
        mid = np.median(lh)
        deg = 2 if np.ptp(lh) > 0 else 0
        coef = np.polyfit(lh - mid, lR, deg)
        hb.append(np.exp(mid))
        Rb.append(np.exp(coef[-1]))
        resid.append(np.abs(lR - np.polyval(coef, lh - mid)))
    return np.array(hb), np.array(Rb), np.concatenate(resid)


def identify_archimedean(H: Surface, anchor: tuple[int, int] | None = None, nbins: int = 40,
                         eps_top: float = 0.01, constancy_tol: float = 0.01,
                         neg_tol: float = 1e-8, fine: int = 4000):
    """Generator and thresholds of an Archimedean double-hurdle model.

    Steps: ``R = H12 / (H1 H2)`` at every node; nodes binned by level ``h``
    into quantile bins, with a quadratic fit of ``log R`` on ``log h`` in
    each bin; the constancy diagnostic is the 99th percentile of the
    within-bin residuals (zero when ``R`` depends on the level only).  The bin curve is interpolated
    log-log onto a fine level grid, and ``phi`` follows by nested
    trapezoids.  ``G1``, ``G2`` are returned up to the constant ``k``
    described in the normalization record.

    Returns
    -------
    (RecoveredGenerator, RecoveredThresholds)
    """
    v = H.values
    R = ratio_R(H)
    ok = H.reliable & np.isfinite(R)
    if np.any(R[ok] < -neg_tol):
        raise ValueError(f"negative R (min {R[ok].min():.3g}): generator cannot be convex")
    hv, Rv = v[ok], np.maximum(R[ok], 1e-300)
    hb, Rb, resid = _binned_R(hv, Rv, nbins)
    constancy = float(np.quantile(resid, 0.99))
    h_lo, h_bar = float(hv.min()), float(hv.max())
    grid = np.geomspace(h_lo, h_bar, fine)
    lR = np.interp(np.log(grid), np.log(hb), np.log(Rb))
    # extend the end bins linearly in log-log
    for side in (0, -1):
        i, k = (0, 1) if side == 0 else (-1, -2)
        slope = (np.log(Rb[i]) - np.log(Rb[k])) / (np.log(hb[i]) - np.log(hb[k]))
        out = grid < hb[0] if side == 0 else grid > hb[-1]
        lR[out] = np.log(Rb[i]) + slope * (np.log(grid[out]) - np.log(hb[i]))
    Rg = np.exp(lR)
    inner = cumulative_trapezoid(Rg[::-1], -grid[::-1], initial=0.0)[::-1]  # int_k^hbar R
    T = cumulative_trapezoid(np.exp(inner)[::-1], -grid[::-1], initial=0.0)[::-1]
    loc_interval = (0.0, 1.0 - h_bar)
    location = 0.0 if h_bar >= 1 - eps_top else 0.5 * (1.0 - h_bar)
    # phi(h) = phi(h_bar) - phi'(h_bar) T(h) with phi'(h_bar) = -1
    gen = RecoveredGenerator(grid, location + T, h_bar, location, loc_interval, (hb, Rb),
                             constancy, constancy_tol)
    i0, j0 = anchor if anchor is not None else (v.shape[0] // 2, v.shape[1] // 2)
    phiH = gen(v)
    k_lo = phiH[i0, j0] - phiH[i0, :].min()
    k_hi = phiH[:, j0].min()
    k = 0.5 * (k_lo + k_hi)
    # phi(G2(z2^0)) = k  =>  phi(G1(z1)) = phi(H(z1, z2^0)) - k
    G1 = gen.inverse(phiH[:, j0] - k)
    G2 = gen.inverse(phiH[i0, :] - (phiH[i0, j0] - k))
    norm = {"method": "archimedean", "anchor_index": [int(i0), int(j0)], "k": float(k),
            "k_interval": [float(k_lo), float(k_hi)], "h_bar": h_bar,
            "location": location, "location_interval": list(loc_interval)}
    return gen, RecoveredThresholds(H.grid.axes, (G1, G2), norm, {"constancy": constancy})


@dataclass(frozen=True)
class ClaytonTheta:
    table: np.ndarray
    pooled: float
    dispersion: float


def identify_clayton_theta(H: Surface) -> ClaytonTheta:
    """``theta = h H12 / (H1 H2) - 1`` node by node; pooled by the median,
    dispersion is the interquartile range."""
    th = H.values * ratio_R(H) - 1
    ok = H.reliable & np.isfinite(th)
    q25, q50, q75 = np.quantile(th[ok], [0.25, 0.5, 0.75])
    return ClaytonTheta(th, float(q50), float(q75 - q25))
