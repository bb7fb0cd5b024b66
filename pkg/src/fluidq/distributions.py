"""Service and patience time distributions and their derived transforms.

A law is exposed through its CDF and survival (tail) function plus three
transforms that drive the fluid dynamics:

* ``equilibrium_cdf``:   stationary-excess distribution of a service law,
  ``(1/mean) * integral_0^x tail(y) dy``.
* ``patience_area``:     cumulative area under the patience survival curve,
  ``integral_0^x tail(y) dy``; its limit is the patience mean (possibly
  infinite).
* ``surviving_fraction``: fraction of scheduled fluid that outlives its
  queueing delay, ``tail(area_inverse(x / lam))``, zero once ``x`` reaches
  ``lam * mean``.

Tail integrals are computed by composite trapezoid quadrature on a uniform
grid (default step 1e-3) and inverted by bisection inside the bracketing
grid cell, so inversion is deterministic and family-agnostic.  Flat
stretches of the integral resolve to the smallest preimage.

All distribution objects are immutable after construction; quadrature
caches are built lazily and only grow, so concurrent readers at worst
duplicate work.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod

import numpy as np
from scipy import special

__all__ = [
    "Distribution",
    "Exponential",
    "Erlang",
    "HyperExponential",
    "Uniform",
    "LogNormal",
    "Weibull",
    "PiecewiseLinearCdf",
    "evaluate",
    "equilibrium_cdf",
    "patience_area",
    "patience_area_inverse",
    "surviving_fraction",
    "max_cdf_slope",
]

DEFAULT_QUAD_STEP = 1e-3

# Bisection tolerance (in the argument) for all scalar inversions.
INVERSE_ATOL = 1e-10


class Distribution(ABC):
    """A continuous law on [0, inf) with analytic CDF and tail.

    ``lipschitz_bound`` is an optional user-supplied bound on the CDF slope;
    scenario validation checks the discretized CDF against it when present.
    """

    family = "abstract"

    def __init__(self, lipschitz_bound: float | None = None):
        if lipschitz_bound is not None and lipschitz_bound <= 0:
            raise ValueError("lipschitz_bound must be positive")
        self.lipschitz_bound = lipschitz_bound
        self._areas: dict[float, _TailArea] = {}

    @abstractmethod
    def tail(self, x):
        """Survival function P(X > x), elementwise on scalars or arrays."""

    def cdf(self, x):
        """Distribution function, the exact complement of :meth:`tail`."""
        return 1.0 - self.tail(x)

    @property
    @abstractmethod
    def mean(self) -> float:
        """First moment; ``math.inf`` when the tail is not integrable."""

    @property
    def cdf_sup(self) -> float:
        """Least upper bound of the CDF (1 except for defective laws)."""
        return 1.0

    @abstractmethod
    def quantile(self, u: float) -> float:
        """Generalized inverse CDF; ``math.inf`` beyond ``cdf_sup``."""

    @abstractmethod
    def params(self) -> dict:
        """Constructor parameters, for serialization round trips."""

    def tail_area(self, step: float = DEFAULT_QUAD_STEP) -> "_TailArea":
        """Cached cumulative tail integral at the given grid step."""
        cache = self._areas.get(step)
        if cache is None:
            cache = _TailArea(self, step)
            self._areas[step] = cache
        return cache

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{type(self).__name__}({args})"


def _bisect_quantile(dist: Distribution, u: float, hi0: float = 1.0) -> float:
    """Smallest x with cdf(x) >= u, by bracket doubling plus bisection."""
    if u <= 0.0:
        return 0.0
    if u >= dist.cdf_sup:
        return math.inf
    hi = hi0
    while float(dist.cdf(hi)) < u:
        hi *= 2.0
        if hi > 1e300:
            return math.inf
    lo = 0.0
    while hi - lo > INVERSE_ATOL:
        mid = 0.5 * (lo + hi)
        if float(dist.cdf(mid)) < u:
            lo = mid
        else:
            hi = mid
    return hi


class Exponential(Distribution):
    family = "exponential"

    def __init__(self, rate: float, lipschitz_bound: float | None = None):
        super().__init__(lipschitz_bound)
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = float(rate)

    def tail(self, x):
        x = np.asarray(x, dtype=float)
        out = np.where(x < 0, 1.0, np.exp(-self.rate * np.maximum(x, 0.0)))
        return out if out.ndim else float(out)

    @property
    def mean(self):
        return 1.0 / self.rate

    def quantile(self, u):
        if u <= 0.0:
            return 0.0
        if u >= 1.0:
            return math.inf
        return -math.log1p(-u) / self.rate

    def params(self):
        return {"rate": self.rate}


class Erlang(Distribution):
    """Sum of ``k`` independent exponential(rate) stages."""

    family = "erlang"

    def __init__(self, k: int, rate: float, lipschitz_bound: float | None = None):
        super().__init__(lipschitz_bound)
        if k < 1 or k != int(k):
            raise ValueError("k must be a positive integer")
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.k = int(k)
        self.rate = float(rate)

    def tail(self, x):
        x = np.asarray(x, dtype=float)
        out = np.where(x < 0, 1.0, special.gammaincc(self.k, self.rate * np.maximum(x, 0.0)))
        return out if out.ndim else float(out)

    @property
    def mean(self):
        return self.k / self.rate

    def quantile(self, u):
        if u <= 0.0:
            return 0.0
        if u >= 1.0:
            return math.inf
        return float(special.gammaincinv(self.k, u)) / self.rate

    def params(self):
        return {"k": self.k, "rate": self.rate}


class HyperExponential(Distribution):
    """Probabilistic mixture of exponentials."""

    family = "hyperexponential"

    def __init__(self, probs, rates, lipschitz_bound: float | None = None):
        super().__init__(lipschitz_bound)
        self.probs = np.asarray(probs, dtype=float)
        self.rates = np.asarray(rates, dtype=float)
        if self.probs.shape != self.rates.shape or self.probs.ndim != 1:
            raise ValueError("probs and rates must be 1-d arrays of equal length")
        if np.any(self.probs < 0) or abs(self.probs.sum() - 1.0) > 1e-12:
            raise ValueError("probs must be non-negative and sum to 1")
        if np.any(self.rates <= 0):
            raise ValueError("rates must be positive")

    def tail(self, x):
        x = np.asarray(x, dtype=float)
        xp = np.maximum(x, 0.0)
        out = np.exp(-np.multiply.outer(xp, self.rates)) @ self.probs
        out = np.where(x < 0, 1.0, out)
        return out if out.ndim else float(out)

    @property
    def mean(self):
        return float(np.sum(self.probs / self.rates))

    def quantile(self, u):
        return _bisect_quantile(self, u, hi0=self.mean + 1.0)

    def params(self):
        return {"probs": self.probs.tolist(), "rates": self.rates.tolist()}


class Uniform(Distribution):
    family = "uniform"

    def __init__(self, lo: float, hi: float, lipschitz_bound: float | None = None):
        super().__init__(lipschitz_bound)
        if not 0 <= lo < hi:
            raise ValueError("need 0 <= lo < hi")
        self.lo = float(lo)
        self.hi = float(hi)

    def tail(self, x):
        x = np.asarray(x, dtype=float)
        out = 1.0 - np.clip((x - self.lo) / (self.hi - self.lo), 0.0, 1.0)
        return out if out.ndim else float(out)

    @property
    def mean(self):
        return 0.5 * (self.lo + self.hi)

    def quantile(self, u):
        if u <= 0.0:
            return 0.0
        if u >= 1.0:
            return self.hi
        return self.lo + u * (self.hi - self.lo)

    def params(self):
        return {"lo": self.lo, "hi": self.hi}


class LogNormal(Distribution):
    """exp(N(mu, sigma^2)); mean exp(mu + sigma^2/2)."""

    family = "lognormal"

    def __init__(self, mu: float, sigma: float, lipschitz_bound: float | None = None):
        super().__init__(lipschitz_bound)
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        self.mu = float(mu)
        self.sigma = float(sigma)

    def tail(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            z = (np.log(np.maximum(x, 1e-300)) - self.mu) / self.sigma
        out = np.where(x <= 0, 1.0, special.ndtr(-z))
        return out if out.ndim else float(out)

    @property
    def mean(self):
        return math.exp(self.mu + 0.5 * self.sigma**2)

    def quantile(self, u):
        if u <= 0.0:
            return 0.0
        if u >= 1.0:
            return math.inf
        return math.exp(self.mu + self.sigma * float(special.ndtri(u)))

    def params(self):
        return {"mu": self.mu, "sigma": self.sigma}


class Weibull(Distribution):
    family = "weibull"

    def __init__(self, shape: float, scale: float, lipschitz_bound: float | None = None):
        super().__init__(lipschitz_bound)
        if shape <= 0 or scale <= 0:
            raise ValueError("shape and scale must be positive")
        self.shape = float(shape)
        self.scale = float(scale)

    def tail(self, x):
        x = np.asarray(x, dtype=float)
        out = np.where(x < 0, 1.0, np.exp(-np.power(np.maximum(x, 0.0) / self.scale, self.shape)))
        return out if out.ndim else float(out)

    @property
    def mean(self):
        return self.scale * math.gamma(1.0 + 1.0 / self.shape)

    def quantile(self, u):
        if u <= 0.0:
            return 0.0
        if u >= 1.0:
            return math.inf
        return self.scale * (-math.log1p(-u)) ** (1.0 / self.shape)

    def params(self):
        return {"shape": self.shape, "scale": self.scale}


class PiecewiseLinearCdf(Distribution):
    """Universal fallback: a CDF sampled at nodes and interpolated linearly.

    Nodes must start at (0, 0) with strictly increasing x and non-decreasing
    values.  Behaviour past the last node (x_n, F_n):

    * ``F_n == 1``: the support ends at x_n.
    * ``pareto_alpha`` given: the tail continues as
      ``(1 - F_n) * (x_n / x) ** alpha``; the mean is infinite for
      ``alpha <= 1``.
    * otherwise the law is defective (mass ``1 - F_n`` never occurs), which
      models customers who never abandon.  Defective laws are rejected as
      service distributions via their infinite mean.
    """

    family = "piecewise"

    def __init__(self, points, pareto_alpha: float | None = None,
                 lipschitz_bound: float | None = None):
        super().__init__(lipschitz_bound)
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ValueError("points must be an (n, 2) array with n >= 2")
        self.xs = pts[:, 0].copy()
        self.fs = pts[:, 1].copy()
        if self.xs[0] != 0.0 or self.fs[0] != 0.0:
            raise ValueError("first node must be (0, 0)")
        if np.any(np.diff(self.xs) <= 0):
            raise ValueError("node x-coordinates must be strictly increasing")
        if np.any(np.diff(self.fs) < 0) or self.fs[-1] > 1.0:
            raise ValueError("node CDF values must be non-decreasing and <= 1")
        if pareto_alpha is not None:
            if pareto_alpha <= 0:
                raise ValueError("pareto_alpha must be positive")
            if self.fs[-1] >= 1.0:
                raise ValueError("pareto tail requires final CDF value < 1")
        self.pareto_alpha = pareto_alpha

    def tail(self, x):
        x = np.asarray(x, dtype=float)
        out = 1.0 - np.interp(x, self.xs, self.fs)
        xe, te = self.xs[-1], 1.0 - self.fs[-1]
        if self.pareto_alpha is not None:
            beyond = x > xe
            if np.any(beyond):
                out = np.where(beyond, te * (xe / np.maximum(x, xe)) ** self.pareto_alpha, out)
        out = np.where(x < 0, 1.0, out)
        return out if out.ndim else float(out)

    @property
    def cdf_sup(self):
        if self.pareto_alpha is None and self.fs[-1] < 1.0:
            return float(self.fs[-1])
        return 1.0

    @property
    def mean(self):
        # trapezoid is exact on a piecewise-linear tail
        tails = 1.0 - self.fs
        body = float(np.sum(0.5 * (tails[:-1] + tails[1:]) * np.diff(self.xs)))
        te = 1.0 - self.fs[-1]
        if te == 0.0:
            return body
        if self.pareto_alpha is None or self.pareto_alpha <= 1.0:
            return math.inf
        return body + te * self.xs[-1] / (self.pareto_alpha - 1.0)

    def quantile(self, u):
        if u <= 0.0:
            return 0.0
        if u >= self.cdf_sup:
            if u < 1.0 and self.pareto_alpha is not None:
                te = 1.0 - self.fs[-1]
                return self.xs[-1] * (te / (1.0 - u)) ** (1.0 / self.pareto_alpha)
            if u >= 1.0 and self.fs[-1] >= 1.0:
                return float(self.xs[np.searchsorted(self.fs, 1.0, side="left")])
            return math.inf
        i = int(np.searchsorted(self.fs, u, side="left"))
        x0, x1 = self.xs[i - 1], self.xs[i]
        f0, f1 = self.fs[i - 1], self.fs[i]
        return float(x0 + (u - f0) * (x1 - x0) / (f1 - f0))

    def params(self):
        out = {"points": np.column_stack([self.xs, self.fs]).tolist()}
        if self.pareto_alpha is not None:
            out["pareto_alpha"] = self.pareto_alpha
        return out


class _TailArea:
    """Cumulative trapezoid integral of a survival function on a uniform grid.

    ``value`` uses the sign convention ``integral_0^y`` with the tail taken
    as 1 on negative arguments, so ``value(y) = y`` for y <= 0; this is what
    buffer-measure reconstructions need.  The grid extends geometrically on
    demand.  ``inverse`` returns the smallest preimage, refined by bisection
    within the bracketing cell to ``INVERSE_ATOL``.
    """

    _MAX_POINTS = 1 << 27  # ~134M grid points, ~1 GB per array

    def __init__(self, dist: Distribution, step: float):
        if step <= 0:
            raise ValueError("step must be positive")
        self.dist = dist
        self.step = float(step)
        self._tails = np.asarray(dist.tail(np.arange(2) * self.step), dtype=float)
        self._vals = np.concatenate([[0.0], np.cumsum(
            0.5 * (self._tails[:-1] + self._tails[1:]) * self.step)])

    @property
    def grid_end(self) -> float:
        return (len(self._vals) - 1) * self.step

    def extend_to(self, x: float) -> None:
        while self.grid_end < x:
            n_old = len(self._vals)
            n_new = 2 * (n_old - 1) + 1
            if n_new > self._MAX_POINTS:
                raise ValueError("tail integral grid exceeds supported span")
            new_x = np.arange(n_old, n_new) * self.step
            new_tails = np.asarray(self.dist.tail(new_x), dtype=float)
            tails = np.concatenate([self._tails, new_tails])
            inc = 0.5 * (tails[n_old - 1:-1] + tails[n_old:]) * self.step
            self._vals = np.concatenate([self._vals, self._vals[-1] + np.cumsum(inc)])
            self._tails = tails

    def _grow_until(self, q: float) -> None:
        """Extend the grid until the integral reaches q; error if it stalls."""
        while self._vals[-1] < q:
            prev = float(self._vals[-1])
            self.extend_to(2.0 * self.grid_end)
            if self._vals[-1] - prev < 1e-16 * max(1.0, q):
                raise ValueError(
                    f"mass {q} is numerically unreachable (integral saturates near {prev})")

    def value(self, y: float) -> float:
        if y <= 0.0:
            return float(y)
        self.extend_to(y)
        pos = y / self.step
        i = min(int(pos), len(self._vals) - 2)
        frac = pos - i
        return float(self._vals[i] + frac * (self._vals[i + 1] - self._vals[i]))

    def values(self, y) -> np.ndarray:
        """Vectorized :meth:`value` (signed convention for y < 0)."""
        y = np.asarray(y, dtype=float)
        top = float(y.max()) if y.size else 0.0
        if top > 0:
            self.extend_to(top)
        pos = np.clip(y, 0.0, None) / self.step
        i = np.minimum(pos.astype(int), len(self._vals) - 2)
        interp = self._vals[i] + (pos - i) * (self._vals[i + 1] - self._vals[i])
        return np.where(y <= 0.0, y, interp)

    def inverse(self, q: float) -> float:
        """Smallest y with ``value(y) = q``; q must be reachable."""
        if q < 0:
            raise ValueError("mass must be non-negative")
        if q == 0.0:
            return 0.0
        mean = self.dist.mean
        if math.isfinite(mean) and q >= mean:
            raise ValueError(f"mass {q} is not below the tail-integral limit {mean}")
        self._grow_until(q)
        i = int(np.searchsorted(self._vals, q, side="left"))
        lo, hi = (i - 1) * self.step, i * self.step
        v0, v1 = self._vals[i - 1], self._vals[i]
        while hi - lo > INVERSE_ATOL:
            mid = 0.5 * (lo + hi)
            vm = v0 + (mid / self.step - (i - 1)) * (v1 - v0)
            if vm < q:
                lo = mid
            else:
                hi = mid
        return hi

    def inverse_many(self, q) -> np.ndarray:
        """Vectorized inverse: exact piecewise-linear solve per cell."""
        q = np.asarray(q, dtype=float)
        if np.any(q < 0):
            raise ValueError("mass must be non-negative")
        top = float(q.max()) if q.size else 0.0
        mean = self.dist.mean
        if math.isfinite(mean) and top >= mean:
            raise ValueError(f"mass {top} is not below the tail-integral limit {mean}")
        self._grow_until(top)
        i = np.searchsorted(self._vals, q, side="left")
        i = np.maximum(i, 1)
        v0 = self._vals[i - 1]
        v1 = self._vals[i]
        frac = np.where(v1 > v0, (q - v0) / np.maximum(v1 - v0, 1e-300), 1.0)
        return np.where(q == 0.0, 0.0, ((i - 1) + frac) * self.step)


def evaluate(d: Distribution, x: float):
    """Return ``(cdf, tail)`` at x; ``(0, 1)`` for negative x."""
    if not math.isfinite(x):
        raise ValueError("x must be finite")
    t = float(d.tail(x))
    return 1.0 - t, t


def equilibrium_cdf(g: Distribution, x, step: float = DEFAULT_QUAD_STEP):
    """Stationary-excess CDF of a finite-mean service law."""
    mean = g.mean
    if not math.isfinite(mean):
        raise ValueError("equilibrium distribution requires a finite mean")
    area = g.tail_area(step)
    if np.ndim(x) == 0:
        if x < 0:
            return 0.0
        return min(area.value(float(x)) / mean, 1.0)
    return np.minimum(area.values(np.maximum(np.asarray(x, dtype=float), 0.0)) / mean, 1.0)


def patience_area(f: Distribution, x, step: float = DEFAULT_QUAD_STEP):
    """Integral of the patience survival function from 0 to x (x >= 0)."""
    if np.ndim(x) == 0:
        if x < 0:
            raise ValueError("x must be non-negative")
        return f.tail_area(step).value(float(x))
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("x must be non-negative")
    return f.tail_area(step).values(x)


def patience_area_inverse(f: Distribution, q: float, step: float = DEFAULT_QUAD_STEP) -> float:
    """Smallest y with ``patience_area(f, y) = q``; requires q < mean."""
    return f.tail_area(step).inverse(q)


def surviving_fraction(f: Distribution, lam: float, x: float,
                       step: float = DEFAULT_QUAD_STEP) -> float:
    """Fraction of scheduled fluid that outlives its queueing delay.

    Total on x >= 0: returns 0 once x reaches ``lam * mean``.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    if x < 0:
        raise ValueError("x must be non-negative")
    mean = f.mean
    q = x / lam
    if math.isfinite(mean) and q >= mean * (1.0 - 1e-12):
        return 0.0
    return float(f.tail(f.tail_area(step).inverse(q)))


def max_cdf_slope(d: Distribution, span: float, step: float = DEFAULT_QUAD_STEP) -> float:
    """Largest finite-difference slope of the CDF sampled on [0, span]."""
    xs = np.arange(0.0, span + step, step)
    cdf = np.asarray(d.cdf(xs), dtype=float)
    return float(np.max(np.diff(cdf)) / step)
