"""Data-generating processes: instruments, thresholds, outcomes, assignment."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import special

from . import seeds
from .algebra import (AlgebraError, SelectionModel, ThresholdEventSet, builtin_model,
                      decompose)
from .copulas import (Archimedean, GaussianCopula, Generator,
                      JointHeterogeneity, law_from_config)
from .expr import parse_rule

Q_LO, Q_HI = 0.02, 0.98
CHUNK = 65536


@dataclass(frozen=True)
class ThresholdComponent:
    """One threshold ``Q_j(Z) = lo + (hi - lo) * link(b + w . Z[coords])``.

    ``form`` is ``'logistic'``, ``'probit'``, ``'spline'`` or ``'constant'``.
    A spline takes a single coordinate and interpolates ``(knots_x,
    knots_y)`` linearly with flat extension; its values are used as is.
    A constant returns ``value``.
    """

    form: str
    coords: tuple[int, ...] = ()
    weights: tuple[float, ...] = ()
    intercept: float = 0.0
    knots_x: tuple[float, ...] = ()
    knots_y: tuple[float, ...] = ()
    value: float = 0.5
    lo: float = Q_LO
    hi: float = Q_HI

    def __post_init__(self):
        if self.form not in ("logistic", "probit", "spline", "constant"):
            raise ValueError(f"unknown threshold form {self.form!r}")
        if not 0 < self.lo < self.hi < 1:
            raise ValueError("threshold range must satisfy 0 < lo < hi < 1")
        if self.form in ("logistic", "probit") and len(self.coords) != len(self.weights):
            raise ValueError("one weight per entering instrument coordinate")
        if self.form == "spline":
            x, y = np.asarray(self.knots_x), np.asarray(self.knots_y)
            if len(self.coords) != 1 or len(x) != len(y) or len(x) < 2:
                raise ValueError("a spline threshold takes one coordinate and matching knots")
            if np.any(np.diff(x) <= 0) or np.any(np.diff(y) < 0):
                raise ValueError("spline knots must be increasing with nondecreasing values")
            if y.min() <= 0 or y.max() >= 1:
                raise ValueError("spline values must lie strictly inside (0, 1)")
        if self.form == "constant" and not 0 < self.value < 1:
            raise ValueError("constant threshold must lie in (0, 1)")

    def __call__(self, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if self.form == "constant":
            return np.full(Z.shape[0], self.value)
        if self.form == "spline":
            return np.interp(Z[:, self.coords[0]], self.knots_x, self.knots_y)
        x = self.intercept + Z[:, list(self.coords)] @ np.asarray(self.weights, dtype=float)
        link = special.expit(x) if self.form == "logistic" else special.ndtr(x)
        return self.lo + (self.hi - self.lo) * link

    def to_config(self) -> dict:
        out = {"form": self.form}
        if self.form == "constant":
            out["value"] = self.value
            return out
        out["coords"] = list(self.coords)
        if self.form == "spline":
            out["knots_x"] = list(self.knots_x)
            out["knots_y"] = list(self.knots_y)
        else:
            out.update(weights=list(self.weights), intercept=self.intercept, lo=self.lo, hi=self.hi)
        return out

    @classmethod
    def from_config(cls, cfg: dict) -> "ThresholdComponent":
        kw = dict(cfg)
        for key in ("coords", "weights", "knots_x", "knots_y"):
            if key in kw:
                kw[key] = tuple(kw[key])
        if "coords" in kw:
            kw["coords"] = tuple(int(c) for c in kw["coords"])
        return cls(**kw)


def linear_threshold(coord: int, lo: float = Q_LO, hi: float = Q_HI) -> ThresholdComponent:
    """``Q = lo + (hi - lo) z`` for ``z`` in [0, 1]; uniform instruments give uniform Q."""
    return ThresholdComponent("spline", coords=(coord,), knots_x=(0.0, 1.0), knots_y=(lo, hi))


@dataclass(frozen=True)
class ThresholdMap:
    components: tuple[ThresholdComponent, ...]

    @property
    def J(self) -> int:
        return len(self.components)

    def __call__(self, Z) -> np.ndarray:
        return np.column_stack([c(Z) for c in self.components])

    def entering(self, j: int) -> tuple[int, ...]:
        return self.components[j].coords

    def shifted(self, delta) -> "ShiftedThresholdMap":
        return ShiftedThresholdMap(self, tuple(np.broadcast_to(delta, (self.J,)).tolist()))

    def to_config(self):
        return [c.to_config() for c in self.components]


@dataclass(frozen=True)
class ShiftedThresholdMap:
    """``Q*(Z) = clip(Q(Z) + delta)``, kept inside ``[Q_LO, Q_HI]``."""

    base: ThresholdMap
    delta: tuple[float, ...]

    @property
    def J(self) -> int:
        return self.base.J

    def __call__(self, Z) -> np.ndarray:
        return np.clip(self.base(Z) + np.asarray(self.delta), Q_LO, Q_HI)


@dataclass(frozen=True)
class InstrumentLaw:
    """Product law; each entry is ``('uniform', low, high)`` or ``('normal', mean, sd)``."""

    dims: tuple[tuple[str, float, float], ...]

    def __post_init__(self):
        for kind, a, b in self.dims:
            if kind not in ("uniform", "normal"):
                raise ValueError(f"unknown instrument law {kind!r}")
            if kind == "uniform" and not a < b:
                raise ValueError("uniform instrument needs low < high")
            if kind == "normal" and not b > 0:
                raise ValueError("normal instrument needs sd > 0")

    @property
    def dim(self) -> int:
        return len(self.dims)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        cols = []
        for kind, a, b in self.dims:
            if kind == "uniform":
                cols.append(rng.uniform(a, b, n))
            else:
                cols.append(rng.normal(a, b, n))
        return np.column_stack(cols)

    def to_config(self):
        return [list(d) for d in self.dims]

    @classmethod
    def uniform(cls, L: int, low=0.0, high=1.0):
        return cls(tuple(("uniform", low, high) for _ in range(L)))


@dataclass(frozen=True)
class PolyMean:
    """``mu(v) = sum_i coef_i prod_j v_j^{exps_i[j]}``."""

    terms: tuple[tuple[float, tuple[int, ...]], ...] = ()

    def __call__(self, V) -> np.ndarray:
        V = np.atleast_2d(np.asarray(V, dtype=float))
        out = np.zeros(V.shape[0])
        for coef, exps in self.terms:
            out += coef * np.prod(V ** np.asarray(exps, dtype=float), axis=1)
        return out

    def partial(self, j: int) -> "PolyMean":
        new = []
        for coef, exps in self.terms:
            if exps[j] > 0:
                e = list(exps)
                e[j] -= 1
                new.append((coef * exps[j], tuple(e)))
        return PolyMean(tuple(new))

    def to_config(self):
        return [[c, list(e)] for c, e in self.terms]

    @classmethod
    def from_config(cls, cfg) -> "PolyMean":
        return cls(tuple((float(c), tuple(int(x) for x in e)) for c, e in cfg))

    @classmethod
    def constant(cls, c: float, J: int) -> "PolyMean":
        return cls(((float(c), (0,) * J),)) if c else cls(())

    @classmethod
    def linear(cls, coefs: Sequence[float], intercept: float = 0.0) -> "PolyMean":
        J = len(coefs)
        terms = [(float(intercept), (0,) * J)] if intercept else []
        for j, c in enumerate(coefs):
            if c:
                e = [0] * J
                e[j] = 1
                terms.append((float(c), tuple(e)))
        return cls(tuple(terms))


@dataclass(frozen=True)
class OutcomeModel:
    """Potential outcomes ``Y_k = mu_k(V) + sigma_k * eps_k`` with standard normal noise.

    ``transform`` is ``'identity'`` or ``'indicator'``; the latter targets
    ``1(Y_k <= y_cut)``.
    """

    means: tuple[PolyMean, ...]
    sigmas: tuple[float, ...]
    transform: str = "identity"
    y_cut: float = 0.0

    def __post_init__(self):
        if len(self.means) != len(self.sigmas):
            raise ValueError("one noise scale per treatment")
        if any(s < 0 for s in self.sigmas):
            raise ValueError("noise scales must be nonnegative")
        if self.transform not in ("identity", "indicator"):
            raise ValueError(f"unknown outcome transform {self.transform!r}")

    @property
    def K(self) -> int:
        return len(self.means)

    def apply(self, y):
        y = np.asarray(y, dtype=float)
        if self.transform == "identity":
            return y
        return (y <= self.y_cut).astype(float)

    def conditional_mean(self, k: int, V) -> np.ndarray:
        """``E[G(Y_k) | V = v]``."""
        mu = self.means[k](V)
        if self.transform == "identity":
            return mu
        s = self.sigmas[k]
        if s == 0:
            return (mu <= self.y_cut).astype(float)
        return special.ndtr((self.y_cut - mu) / s)

    def to_config(self):
        return {"means": [m.to_config() for m in self.means], "sigmas": list(self.sigmas),
                "transform": self.transform, "y_cut": self.y_cut}

    @classmethod
    def from_config(cls, cfg) -> "OutcomeModel":
        return cls(tuple(PolyMean.from_config(m) for m in cfg["means"]),
                   tuple(float(s) for s in cfg["sigmas"]),
                   cfg.get("transform", "identity"), float(cfg.get("y_cut", 0.0)))


@dataclass(frozen=True)
class DgpSpec:
    name: str
    model: SelectionModel
    heterogeneity: JointHeterogeneity
    thresholds: ThresholdMap
    outcomes: OutcomeModel
    instruments: InstrumentLaw

    def __post_init__(self):
        if self.heterogeneity.J != self.model.J:
            raise ValueError("heterogeneity dimension differs from the number of thresholds")
        if self.thresholds.J != self.model.J:
            raise ValueError("one threshold function per event required")
        if self.outcomes.K != self.model.K:
            raise ValueError("one outcome mean per treatment required")
        for c in self.thresholds.components:
            if c.coords and max(c.coords) >= self.instruments.dim:
                raise ValueError("threshold refers to a missing instrument coordinate")
        self.model.validate()

    @property
    def J(self):
        return self.model.J

    @property
    def K(self):
        return self.model.K

    def with_(self, **kw) -> "DgpSpec":
        return replace(self, **kw)


@dataclass
class SampleSet:
    """Observed records plus an optional oracle-only latent block."""

    Y: np.ndarray
    D: np.ndarray
    Z: np.ndarray
    V: np.ndarray | None = None
    Y_all: np.ndarray | None = None
    Q: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.D)

    @property
    def has_latent(self) -> bool:
        return self.V is not None and self.Y_all is not None

    def subset(self, idx) -> "SampleSet":
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return SampleSet(self.Y[idx], self.D[idx], self.Z[idx], pick(self.V),
                         pick(self.Y_all), pick(self.Q), dict(self.meta))


def _simulate_chunk(spec: DgpSpec, m: int, rng: np.random.Generator, thresholds):
    Z = spec.instruments.sample(m, rng)
    V = spec.heterogeneity.sample(m, rng)
    eps = rng.standard_normal((m, spec.K))
    Q = thresholds(Z)
    D = spec.model.assign(V < Q)
    Y_all = np.column_stack([spec.outcomes.means[k](V) for k in range(spec.K)])
    Y_all = Y_all + eps * np.asarray(spec.outcomes.sigmas)[None, :]
    Y = Y_all[np.arange(m), D]
    return Y, D, Z, V, Y_all, Q


def simulate(spec: DgpSpec, n: int, seed: int, thresholds=None) -> SampleSet:
    """Draw ``n`` records.  Chunk ``i`` uses its own stream, so output is
    independent of how chunks are scheduled.  ``thresholds`` overrides the
    spec's map (used for counterfactual policies)."""
    if int(n) < 1:
        raise ValueError("number of records must be positive")
    n = int(n)
    thresholds = spec.thresholds if thresholds is None else thresholds
    parts = []
    for i, start in enumerate(range(0, n, CHUNK)):
        m = min(CHUNK, n - start)
        parts.append(_simulate_chunk(spec, m, seeds.rng(seed, "simulate", i), thresholds))
    Y, D, Z, V, Y_all, Q = (np.concatenate(p) for p in zip(*parts))
    return SampleSet(Y, D, Z, V, Y_all, Q, {"dgp": spec.name, "seed": int(seed), "n": n})


def true_propensity(spec_or_model, q, heterogeneity=None) -> np.ndarray:
    """``P_k(q) = sum_l c^k_l F(q_l, 1_{-l})`` for every k; shape (..., K)."""
    if isinstance(spec_or_model, DgpSpec):
        model, het = spec_or_model.model, spec_or_model.heterogeneity
    else:
        model, het = spec_or_model, heterogeneity
    if not getattr(het, "closed_form_cdf", True):
        raise ValueError("heterogeneity law has no closed-form CDF")
    q = np.asarray(q, dtype=float)
    J = model.J
    masks = np.arange(1 << J)
    sel = ((masks[:, None] >> np.arange(J)[None, :]) & 1).astype(bool)
    pts = np.where(sel, q[..., None, :], 1.0)
    F = het.cdf(pts)
    C = np.array([r.coeffs for r in model.rules], dtype=float)
    return F @ C.T


def true_mte(spec: DgpSpec, k: int, l: int, v) -> np.ndarray:
    if not (0 <= k < spec.K and 0 <= l < spec.K):
        raise ValueError(f"treatment ids must lie in 0..{spec.K - 1}")
    return spec.outcomes.conditional_mean(k, v) - spec.outcomes.conditional_mean(l, v)


# --- built-ins -------------------------------------------------------------

def _clayton2():
    return Archimedean(Generator("clayton", 2.0))


def _builtin_two_way():
    model = builtin_model("two_way_flows")
    th = ThresholdMap((ThresholdComponent("logistic", (0,), (3.0,)),
                       ThresholdComponent("logistic", (1,), (3.0,))))
    out = OutcomeModel((PolyMean.linear([1.0, 1.0]), PolyMean.constant(0.0, 2),
                        PolyMean(((1.0, (1, 1)),))), (0.1, 0.1, 0.1))
    return DgpSpec("two_way_flows", model, _clayton2(), th, out,
                   InstrumentLaw((("normal", 0.0, 1.0), ("normal", 0.0, 1.0))))


def _builtin_double_hurdle():
    model = builtin_model("double_hurdle")
    th = ThresholdMap((linear_threshold(0), linear_threshold(1)))
    out = OutcomeModel((PolyMean.constant(0.0, 2), PolyMean.linear([1.0, 1.0])), (0.1, 0.1))
    return DgpSpec("double_hurdle", model, _clayton2(), th, out, InstrumentLaw.uniform(2))


def _builtin_example3():
    model = builtin_model("zero_index_example3")
    R = np.full((3, 3), 0.3)
    np.fill_diagonal(R, 1.0)
    th = ThresholdMap(tuple(linear_threshold(j) for j in range(3)))
    out = OutcomeModel((PolyMean.linear([1.0, 1.0, 0.0]), PolyMean.linear([0.5, 0.0, 0.5]),
                        PolyMean.constant(0.2, 3)), (0.1, 0.1, 0.1))
    return DgpSpec("zero_index_example3", model, GaussianCopula(R), th, out,
                   InstrumentLaw.uniform(3))


def _entry_law():
    # monopoly and duopoly profit shocks of the same firm are correlated
    R = np.eye(5)
    R[0, 2] = R[2, 0] = 0.5
    R[1, 3] = R[3, 1] = 0.5
    R[0, 1] = R[1, 0] = 0.2
    return GaussianCopula(R)


def _builtin_entry(name):
    model = builtin_model(name)
    th = ThresholdMap(tuple(linear_threshold(j) for j in range(5)))
    means = tuple(PolyMean.linear([0.5 * k, 0, 0, 0, 0], intercept=float(k)) for k in range(model.K))
    out = OutcomeModel(means, (0.1,) * model.K)
    return DgpSpec(name, model, _entry_law(), th, out,
                   InstrumentLaw.uniform(5))


BUILTIN_DGPS = {
    "two_way_flows": _builtin_two_way,
    "double_hurdle": _builtin_double_hurdle,
    "zero_index_example3": _builtin_example3,
    "entry_game": lambda: _builtin_entry("entry_game"),
    "entry_game_identity": lambda: _builtin_entry("entry_game_identity"),
}


def builtin(name: str) -> DgpSpec:
    try:
        return BUILTIN_DGPS[name]()
    except KeyError:
        raise ValueError(f"unknown builtin DGP {name!r}; choose from {sorted(BUILTIN_DGPS)}") from None


# --- config round trip -----------------------------------------------------

def model_to_config(model: SelectionModel) -> dict:
    return {"labels": list(model.events.labels), "names": list(model.names),
            "rules": [{"table": [int(x) for x in r.truth_table()]} for r in model.rules]}


def model_from_config(cfg) -> SelectionModel:
    if isinstance(cfg, str):
        return builtin_model(cfg)
    if "builtin" in cfg:
        return builtin_model(cfg["builtin"])
    labels = tuple(cfg["labels"])
    rules = []
    for r in cfg["rules"]:
        if "table" in r:
            rule = decompose(r["table"])
        elif "expr" in r:
            rule = parse_rule(r["expr"], labels)
        else:
            raise AlgebraError("each rule needs a 'table' or an 'expr'")
        if rule.J != len(labels):
            raise AlgebraError(f"rule table has J={rule.J} but {len(labels)} labels were given")
        rules.append(rule)
    return SelectionModel(ThresholdEventSet(labels), tuple(rules), tuple(cfg.get("names", ())))


def spec_to_config(spec: DgpSpec) -> dict:
    return {"name": spec.name, "model": model_to_config(spec.model),
            "heterogeneity": spec.heterogeneity.to_config(),
            "thresholds": spec.thresholds.to_config(),
            "outcomes": spec.outcomes.to_config(),
            "instruments": spec.instruments.to_config()}


def spec_from_config(cfg: dict) -> DgpSpec:
    """Build a spec from a config tree.  ``builtin: name`` starts from a
    built-in template; any other keys present override its parts."""
    base = builtin(cfg["builtin"]) if "builtin" in cfg else None
    parts = {}
    if "model" in cfg:
        parts["model"] = model_from_config(cfg["model"])
    J = (parts.get("model") or base.model).J if (base or parts.get("model")) else None
    if "heterogeneity" in cfg:
        parts["heterogeneity"] = law_from_config(cfg["heterogeneity"], J)
    if "thresholds" in cfg:
        parts["thresholds"] = ThresholdMap(tuple(ThresholdComponent.from_config(c)
                                                 for c in cfg["thresholds"]))
    if "outcomes" in cfg:
        parts["outcomes"] = OutcomeModel.from_config(cfg["outcomes"])
    if "instruments" in cfg:
        parts["instruments"] = InstrumentLaw(tuple((str(k), float(a), float(b))
                                                   for k, a, b in cfg["instruments"]))
    name = cfg.get("name", base.name if base else "custom")
    if base is not None:
        return replace(base, name=name, **parts)
    missing = {"model", "heterogeneity", "thresholds", "outcomes", "instruments"} - parts.keys()
    if missing:
        raise ValueError(f"DGP config lacks {sorted(missing)} and names no builtin")
    return DgpSpec(name=name, **parts)
