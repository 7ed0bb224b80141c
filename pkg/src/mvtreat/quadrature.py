"""Tensor trapezoid quadrature over grids in the unit cube."""

from __future__ import annotations

import numpy as np

EDGE_REACH = 0.05


class CoverageError(ValueError):
    """The grid does not cover the unit cube; use bounds instead of point estimates."""


def covers_cube(axes, reach: float = EDGE_REACH) -> bool:
    return all(a[0] <= reach and a[-1] >= 1 - reach for a in axes)


def _extend_axis(x):
    parts = [np.zeros(1)] if x[0] > 0 else []
    parts.append(x)
    if x[-1] < 1:
        parts.append(np.ones(1))
    return np.concatenate(parts)


def trapezoid(values, axes, extend: bool = True, reach: float = EDGE_REACH) -> float:
    """Integrate a tensor over the cube spanned by ``axes``.

    With ``extend`` the integral runs over the whole unit cube: every axis
    is padded with knots at 0 and 1 carrying the edge values.  The grid
    must then reach within ``reach`` of both ends in every dimension.
    """
    v = np.asarray(values, dtype=float)
    axes = [np.asarray(a, dtype=float) for a in axes]
    if extend and not covers_cube(axes, reach):
        raise CoverageError(
            f"grid spans {[(float(a[0]), float(a[-1])) for a in axes]}, which does not "
            f"cover the unit cube to within {reach}; point aggregates need full "
            "coverage, so compute bounds instead"
        )
    for ax in reversed(range(v.ndim)):
        x = axes[ax]
        if extend:
            first = np.take(v, [0], axis=ax)
            last = np.take(v, [-1], axis=ax)
            pre = [first] if x[0] > 0 else []
            post = [last] if x[-1] < 1 else []
            v = np.concatenate(pre + [v] + post, axis=ax)
            x = _extend_axis(x)
        v = np.trapezoid(v, x, axis=ax)
    return float(v)


def weights(axes, extend: bool = True, reach: float = EDGE_REACH) -> np.ndarray:
    """Tensor of quadrature weights so that ``trapezoid(v) == sum(w * v)``."""
    axes = [np.asarray(a, dtype=float) for a in axes]
    if extend and not covers_cube(axes, reach):
        raise CoverageError("grid does not cover the unit cube")
    ws = []
    for x in axes:
        xe = x
        if extend:
            xe = _extend_axis(x)
        d = np.diff(xe)
        w = np.zeros(len(xe))
        w[:-1] += d / 2
        w[1:] += d / 2
        if extend:
            if x[0] > 0:
                w[1] += w[0]
                w = w[1:]
            if x[-1] < 1:
                w[-2] += w[-1]
                w = w[:-1]
        ws.append(w)
    out = ws[0]
    for w in ws[1:]:
        out = np.multiply.outer(out, w)
    return out
