"""Joint laws of the heterogeneity vector with uniform marginals.

Bivariate Archimedean copulas are parameterized by their generator
``phi``: ``C(u, v) = phi^{-1}(phi(u) + phi(v))``.  Laws of any dimension
are available through independence, the Gaussian copula, and linear
index transforms of a latent vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

U_FLOOR = 1e-12


def _as_points(v, J):
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != J:
        raise ValueError(f"expected points of dimension {J}, got shape {v.shape}")
    return v


@dataclass(frozen=True)
class Generator:
    """Archimedean generator of a strict bivariate copula.

    Parameters
    ----------
    family : {'clayton', 'frank', 'gumbel', 'independence'}
    theta : float
        Clayton needs ``theta > 0``, Frank ``theta != 0``, Gumbel ``theta >= 1``.
        Ignored for independence.
    """

    family: str
    theta: float = 0.0

    def __post_init__(self):
        f, t = self.family, self.theta
        if f == "clayton" and not t > 0:
            raise ValueError(f"clayton requires theta > 0, got {t}")
        if f == "frank" and (t == 0 or not np.isfinite(t)):
            raise ValueError(f"frank requires a finite nonzero theta, got {t}")
        if f == "gumbel" and not t >= 1:
            raise ValueError(f"gumbel requires theta >= 1, got {t}")
        if f not in ("clayton", "frank", "gumbel", "independence"):
            raise ValueError(f"unknown generator family {f!r}")

    def _check_u(self, u):
        u = np.asarray(u, dtype=float)
        if np.any(u <= 0) or np.any(u > 1) or np.any(np.isnan(u)):
            raise ValueError("generator argument must lie in (0, 1]")
        return np.maximum(u, U_FLOOR)

    def phi(self, u):
        return self.eval(u)[0]

    def eval(self, u):
        """Return ``(phi(u), phi'(u), phi''(u))``."""
        u = self._check_u(u)
        t = self.theta
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.family == "independence":
                return -np.log(u), -1.0 / u, 1.0 / u**2
            if self.family == "clayton":
                return (u**-t - 1) / t, -(u ** (-t - 1)), (1 + t) * u ** (-t - 2)
            if self.family == "frank":
                em = np.expm1(-t * u)
                a = em + 1
                p = -np.log(em / np.expm1(-t))
                return p, t * a / em, t * t * a / em**2
            L = -np.log(u)
            p = L**t
            d1 = -t * L ** (t - 1) / u
            if t == 1:
                d2 = 1.0 / u**2
            else:
                d2 = t * ((t - 1) * L ** (t - 2) + L ** (t - 1)) / u**2
            return p, d1, d2

    def inverse(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s < 0) or np.any(np.isnan(s)):
            raise ValueError("inverse generator argument must be nonnegative")
        t = self.theta
        if self.family == "independence":
            return np.exp(-s)
        if self.family == "clayton":
            return (1 + t * s) ** (-1 / t)
        if self.family == "frank":
            return -np.log1p(np.exp(-s) * np.expm1(-t)) / t
        return np.exp(-(s ** (1 / t)))

    def ratio(self, u):
        """``phi''(u) / phi'(u)``, the quantity the recovery ODE is built on."""
        _, d1, d2 = self.eval(u)
        return d2 / d1


def generator_eval(spec: Generator, u):
    return spec.eval(u)


def inverse_generator(spec: Generator, t):
    return spec.inverse(t)


class JointHeterogeneity:
    """Base class: a law on ``[0,1]^J`` with uniform marginals."""

    J: int
    closed_form_cdf = True

    def cdf(self, v):
        raise NotImplementedError

    def density(self, v):
        raise NotImplementedError

    def sample(self, n, seed):
        raise NotImplementedError

    def _check_n(self, n):
        if int(n) < 1:
            raise ValueError("sample size must be at least 1")
        return int(n)

    def rectangle_prob(self, lo, hi):
        """Probability of the box ``prod_j (lo_j, hi_j]`` by inclusion-exclusion."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        J = self.J
        corners = []
        signs = []
        for m in range(1 << J):
            take_lo = np.array([(m >> j) & 1 for j in range(J)], dtype=bool)
            corners.append(np.where(take_lo, lo, hi))
            signs.append((-1) ** int(take_lo.sum()))
        F = self.cdf(np.stack(corners, axis=-2))
        return np.tensordot(F, np.array(signs, dtype=float), axes=([-1], [0]))


def joint_cdf(het: JointHeterogeneity, v):
    return het.cdf(v)


def joint_density(het: JointHeterogeneity, v):
    return het.density(v)


def sample(het: JointHeterogeneity, n, seed):
    return het.sample(n, seed)


@dataclass(frozen=True)
class Independence(JointHeterogeneity):
    J: int = 2

    def __post_init__(self):
        if self.J < 1:
            raise ValueError("J must be positive")

    def cdf(self, v):
        v = _as_points(v, self.J)
        return np.prod(np.clip(v, 0.0, 1.0), axis=-1)

    def density(self, v):
        v = _as_points(v, self.J)
        inside = np.all((v >= 0) & (v <= 1), axis=-1)
        return inside.astype(float)

    def sample(self, n, seed):
        n = self._check_n(n)
        return np.random.default_rng(seed).random((n, self.J))

    def to_config(self):
        return {"family": "independence", "J": self.J}


@dataclass(frozen=True)
class Archimedean(JointHeterogeneity):
    generator: Generator
    J: int = field(default=2, init=False)

    @property
    def family(self):
        return self.generator.family

    @property
    def theta(self):
        return self.generator.theta

    def cdf(self, v):
        v = np.clip(_as_points(v, 2), 0.0, 1.0)
        u1, u2 = v[..., 0], v[..., 1]
        g = self.generator
        zero = (u1 <= 0) | (u2 <= 0)
        a = np.where(zero, 1.0, u1)
        b = np.where(zero, 1.0, u2)
        out = g.inverse(g.phi(a) + g.phi(b))
        out = np.where(u2 >= 1, u1, np.where(u1 >= 1, u2, out))
        return np.where(zero, 0.0, out)

    def density(self, v):
        v = _as_points(v, 2)
        g = self.generator
        C = self.cdf(v)
        _, d1u, _ = g.eval(np.clip(v[..., 0], U_FLOOR, 1))
        _, d1v, _ = g.eval(np.clip(v[..., 1], U_FLOOR, 1))
        _, d1c, d2c = g.eval(np.clip(C, U_FLOOR, 1))
        return -d2c * d1u * d1v / d1c**3

    def conditional(self, u1, u2):
        """``dC/du1`` at ``(u1, u2)``: the law of ``V2`` given ``V1 = u1``."""
        g = self.generator
        C = self.cdf(np.stack([u1, u2], axis=-1))
        _, d1u, _ = g.eval(np.clip(u1, U_FLOOR, 1))
        _, d1c, _ = g.eval(np.clip(C, U_FLOOR, 1))
        return np.where(np.asarray(u2) <= 0, 0.0, d1u / d1c)

    def sample(self, n, seed, tol=1e-10, max_iter=200):
        n = self._check_n(n)
        rng = np.random.default_rng(seed)
        u1 = rng.random(n)
        w = rng.random(n)
        lo = np.zeros(n)
        hi = np.ones(n)
        for _ in range(max_iter):
            mid = 0.5 * (lo + hi)
            below = self.conditional(u1, mid) < w
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.max(hi - lo) < tol:
                break
        u2 = np.clip(0.5 * (lo + hi), U_FLOOR, 1 - U_FLOOR)
        return np.column_stack([np.clip(u1, U_FLOOR, 1 - U_FLOOR), u2])

    def to_config(self):
        return {"family": self.family, "theta": self.theta}


def _gauss_legendre(m):
    x, w = np.polynomial.legendre.leggauss(m)
    return 0.5 * (x + 1), 0.5 * w


def _phi2(x, y, r):
    det = 1 - r * r
    return np.exp(-(x * x - 2 * r * x * y + y * y) / (2 * det)) / (2 * np.pi * np.sqrt(det))


_BIG = 38.0


def _blocks(R):
    """Index sets of the connected components of the nonzero pattern of ``R``."""
    J = len(R)
    seen, out = set(), []
    for i in range(J):
        if i in seen:
            continue
        stack, comp = [i], []
        seen.add(i)
        while stack:
            a = stack.pop()
            comp.append(a)
            for b in np.flatnonzero(R[a] != 0):
                if int(b) not in seen:
                    seen.add(int(b))
                    stack.append(int(b))
        out.append(sorted(comp))
    return out


def _gauss_cdf(x, R, t_nodes, w_nodes):
    """Standard normal CDF with correlation ``R`` at rows of ``x`` (n, J)."""
    J = R.shape[0]
    blocks = _blocks(R)
    if len(blocks) > 1:
        out = np.ones(len(x))
        for b in blocks:
            out *= _gauss_cdf(x[:, b], R[np.ix_(b, b)], t_nodes, w_nodes)
        return out
    if J == 1:
        return special.ndtr(x[:, 0])
    out = np.prod(special.ndtr(x), axis=1)
    for i in range(J):
        for j in range(i + 1, J):
            rho = R[i, j]
            if rho == 0:
                continue
            rest = [k for k in range(J) if k not in (i, j)]
            acc = np.zeros(len(x))
            for t, w in zip(t_nodes, w_nodes):
                term = _phi2(x[:, i], x[:, j], t * rho)
                if rest:
                    Rt = t * R + (1 - t) * np.eye(J)
                    S12 = Rt[np.ix_(rest, [i, j])]
                    B = S12 @ np.linalg.inv(Rt[np.ix_([i, j], [i, j])])
                    cov = Rt[np.ix_(rest, rest)] - B @ S12.T
                    sd = np.sqrt(np.diag(cov))
                    xc = np.clip((x[:, rest] - x[:, [i, j]] @ B.T) / sd, -_BIG, _BIG)
                    if len(rest) == 1:
                        term = term * special.ndtr(xc[:, 0])
                    else:
                        C = cov / np.outer(sd, sd)
                        C[np.abs(C) < 1e-15] = 0.0
                        term = term * _gauss_cdf(xc, C, t_nodes, w_nodes)
                acc += w * term
            out = out + rho * acc
    return out


class GaussianCopula(JointHeterogeneity):
    """Gaussian copula with correlation matrix ``corr``.

    The CDF integrates the derivative of the normal CDF with respect to
    the correlations along ``t R + (1-t) I`` (Gauss-Legendre in ``t``);
    the conditional ``J-2`` dimensional CDF inside the integrand is
    computed the same way, and independent blocks of ``R`` factor out.
    This is accurate to ~1e-14 at ``J = 2`` and smooth enough to
    finite-difference.
    """

    def __init__(self, corr, nodes: int = 48):
        R = np.array(corr, dtype=float)
        if R.ndim != 2 or R.shape[0] != R.shape[1]:
            raise ValueError("correlation matrix must be square")
        if not np.allclose(R, R.T) or not np.allclose(np.diag(R), 1.0):
            raise ValueError("correlation matrix must be symmetric with unit diagonal")
        evals = np.linalg.eigvalsh(R)
        if evals.min() <= 1e-10:
            raise ValueError("correlation matrix must be positive definite")
        self.corr = R
        self.J = R.shape[0]
        self._chol = np.linalg.cholesky(R)
        self._prec = np.linalg.inv(R)
        self._logdet = float(np.sum(np.log(evals)))
        self._t, self._w = _gauss_legendre(nodes)

    def __eq__(self, other):
        return isinstance(other, GaussianCopula) and np.array_equal(self.corr, other.corr)

    def __hash__(self):
        return hash(self.corr.tobytes())

    def __repr__(self):
        return f"GaussianCopula(corr={self.corr.tolist()})"

    def to_config(self):
        return {"family": "gaussian", "corr": self.corr.tolist()}

    def _plackett(self, x):
        return _gauss_cdf(x, self.corr, self._t, self._w)

    def cdf(self, v):
        v = _as_points(v, self.J)
        shape = v.shape[:-1]
        flat = np.clip(v.reshape(-1, self.J), 0.0, 1.0)
        zero = np.any(flat <= 0, axis=1)
        x = np.clip(special.ndtri(np.clip(flat, 1e-300, 1.0)), -_BIG, _BIG)
        out = np.zeros(len(flat))
        live = ~zero
        if live.any():
            out[live] = self._plackett(x[live])
        return np.clip(out, 0.0, 1.0).reshape(shape)

    def density(self, v):
        v = _as_points(v, self.J)
        x = special.ndtri(np.clip(v, U_FLOOR, 1 - U_FLOOR))
        A = self._prec - np.eye(self.J)
        q = np.einsum("...i,ij,...j->...", x, A, x)
        return np.exp(-0.5 * self._logdet - 0.5 * q)

    def sample(self, n, seed):
        n = self._check_n(n)
        z = np.random.default_rng(seed).standard_normal((n, self.J)) @ self._chol.T
        return np.clip(special.ndtr(z), U_FLOOR, 1 - U_FLOOR)


class LinearIndexLaw(JointHeterogeneity):
    """Law of ``V_j = H_j(alpha_j . U)`` with ``H_j`` the CDF of ``alpha_j . U``.

    ``latent`` is ``'normal'`` (U standard normal with covariance
    ``latent_cov``) or ``'uniform'`` (independent uniforms).  For a normal
    latent vector the result is a Gaussian copula and ``H_j`` is exact; for
    uniforms, rows with a single positive entry map exactly and other rows
    use an empirical ``H_j`` from a calibration sample.
    """

    def __init__(self, alpha, latent: str = "normal", latent_cov=None,
                 calibration_n: int = 400_000, calibration_seed: int = 12345):
        A = np.atleast_2d(np.array(alpha, dtype=float))
        if np.any(np.all(A == 0, axis=1)):
            raise ValueError("every row of alpha must have a nonzero entry")
        if latent not in ("normal", "uniform"):
            raise ValueError(f"unknown latent law {latent!r}")
        self.alpha = A
        self.J, self.L = A.shape
        self.latent = latent
        self.latent_cov = np.eye(self.L) if latent_cov is None else np.array(latent_cov, dtype=float)
        if latent == "normal":
            cov = A @ self.latent_cov @ A.T
            self._scale = np.sqrt(np.diag(cov))
            self._gauss = GaussianCopula(cov / np.outer(self._scale, self._scale))
            self.closed_form_cdf = True
        else:
            self._exact = [np.count_nonzero(row) == 1 and row.max() > 0 for row in A]
            self._knots = []
            if not all(self._exact):
                rng = np.random.default_rng(calibration_seed)
                idx = rng.random((calibration_n, self.L)) @ A.T
                probs = np.linspace(0, 1, 4001)
                self._knots = [np.quantile(idx[:, j], probs) for j in range(self.J)]
                self._probs = probs
            self.closed_form_cdf = all(self._exact)

    def to_config(self):
        return {"family": "linear_index", "latent": self.latent,
                "alpha": self.alpha.tolist(), "latent_cov": self.latent_cov.tolist()}

    def transform(self, U):
        idx = np.asarray(U, dtype=float) @ self.alpha.T
        if self.latent == "normal":
            return np.clip(special.ndtr(idx / self._scale), U_FLOOR, 1 - U_FLOOR)
        V = np.empty_like(idx)
        for j in range(self.J):
            if self._exact[j]:
                V[:, j] = idx[:, j] / self.alpha[j].max()
            else:
                V[:, j] = np.interp(idx[:, j], self._knots[j], self._probs)
        return np.clip(V, U_FLOOR, 1 - U_FLOOR)

    def sample(self, n, seed):
        n = self._check_n(n)
        rng = np.random.default_rng(seed)
        if self.latent == "normal":
            U = rng.multivariate_normal(np.zeros(self.L), self.latent_cov, size=n, method="cholesky")
        else:
            U = rng.random((n, self.L))
        return self.transform(U)

    def _exact_uniform(self):
        # each V_j is a rescaled single latent uniform; distinct columns are independent
        cols = [int(np.argmax(row)) for row in self.alpha]
        return cols

    def cdf(self, v):
        v = _as_points(v, self.J)
        if self.latent == "normal":
            return self._gauss.cdf(v)
        if not self.closed_form_cdf:
            raise NotImplementedError("no closed-form CDF for this linear index law")
        cols = self._exact_uniform()
        out = np.ones(v.shape[:-1])
        for c in set(cols):
            js = [j for j in range(self.J) if cols[j] == c]
            out = out * np.min(np.clip(v[..., js], 0, 1), axis=-1)
        return out

    def density(self, v):
        if self.latent == "normal":
            return self._gauss.density(v)
        cols = self._exact_uniform() if self.closed_form_cdf else None
        if cols is None or len(set(cols)) < self.J:
            raise NotImplementedError("law has no density in closed form")
        v = _as_points(v, self.J)
        return np.all((v >= 0) & (v <= 1), axis=-1).astype(float)


def linear_index_transform(latent: str, alpha, latent_cov=None) -> LinearIndexLaw:
    return LinearIndexLaw(alpha, latent=latent, latent_cov=latent_cov)


def law_from_config(cfg: dict, J: int | None = None) -> JointHeterogeneity:
    fam = str(cfg.get("family", "independence")).lower()
    if fam == "independence":
        return Independence(int(cfg.get("J", J or 2)))
    if fam in ("clayton", "frank", "gumbel"):
        return Archimedean(Generator(fam, float(cfg["theta"])))
    if fam == "gaussian":
        if "corr" in cfg:
            return GaussianCopula(cfg["corr"])
        rho = float(cfg["rho"])
        d = int(cfg.get("J", J or 2))
        R = np.full((d, d), rho)
        np.fill_diagonal(R, 1.0)
        return GaussianCopula(R)
    if fam == "linear_index":
        return LinearIndexLaw(cfg["alpha"], latent=cfg.get("latent", "normal"),
                              latent_cov=cfg.get("latent_cov"))
    raise ValueError(f"unknown heterogeneity family {fam!r}")
