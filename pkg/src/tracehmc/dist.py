"""One-dimensional distributions used at sample and observe sites.

Every distribution can be reached from a standard-normal trace coordinate
``z`` through ``inv_cdf(cdf_normal(z))``; :meth:`Dist1D.from_normal` computes
that transform directly (and differentiably where it is smooth).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from tracehmc import ad

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_SQRT2 = math.sqrt(2.0)


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / _SQRT2)


def normal_inv_cdf(u: float) -> float:
    _check_unit(u)
    return float(special.ndtri(u))


def _check_unit(u: float) -> None:
    if not 0.0 < u < 1.0:
        raise ValueError(f"inverse cdf needs 0 < u < 1, got {u!r}")


class Dist1D:
    """Base class; subclasses are frozen dataclasses."""

    def log_pdf(self, x):
        raise NotImplementedError

    def cdf(self, x: float) -> float:
        raise NotImplementedError

    def inv_cdf(self, u: float) -> float:
        raise NotImplementedError

    def from_normal(self, z):
        """Map a standard-normal coordinate to a draw from this distribution."""
        return self.inv_cdf(normal_cdf(float(z)))


@dataclass(frozen=True)
class Normal(Dist1D):
    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if not float(ad._primal(self.sigma)) > 0:
            raise ValueError("Normal needs sigma > 0")

    def log_pdf(self, x):
        z = (x - self.mu) / self.sigma
        return -0.5 * ad.square(z) - LOG_SQRT_2PI - ad.log(self.sigma)

    def cdf(self, x: float) -> float:
        return normal_cdf((x - self.mu) / self.sigma)

    def inv_cdf(self, u: float) -> float:
        return self.mu + self.sigma * normal_inv_cdf(u)

    def from_normal(self, z):
        return self.mu + self.sigma * z


@dataclass(frozen=True)
class Uniform(Dist1D):
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError("Uniform needs a < b")

    def log_pdf(self, x):
        x = ad._primal(x)
        if np.ndim(x):
            inside = (x >= self.a) & (x <= self.b)
            return np.where(inside, -math.log(self.b - self.a), -np.inf)
        return -math.log(self.b - self.a) if self.a <= x <= self.b else -math.inf

    def cdf(self, x: float) -> float:
        return min(1.0, max(0.0, (x - self.a) / (self.b - self.a)))

    def inv_cdf(self, u: float) -> float:
        _check_unit(u)
        return self.a + u * (self.b - self.a)

    def from_normal(self, z):
        return self.a + (self.b - self.a) * ad.ndtr(z)


@dataclass(frozen=True)
class Beta1(Dist1D):
    """Beta(1, alpha), the stick-breaking proportion."""

    alpha: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("Beta1 needs alpha > 0")

    def log_pdf(self, x):
        x = float(ad._primal(x))
        if not 0.0 <= x <= 1.0:
            return -math.inf
        if x == 1.0:
            # closed support; the density at 1 is 1, 0 or unbounded depending on alpha
            return 0.0 if self.alpha == 1.0 else (-math.inf if self.alpha > 1.0 else math.inf)
        return math.log(self.alpha) + (self.alpha - 1.0) * math.log1p(-x)

    def cdf(self, x: float) -> float:
        if x <= 0.0:
            return 0.0
        if x >= 1.0:
            return 1.0
        return -math.expm1(self.alpha * math.log1p(-x))

    def inv_cdf(self, u: float) -> float:
        _check_unit(u)
        return -math.expm1(math.log1p(-u) / self.alpha)

    def from_normal(self, z):
        # 1 - u = Phi(-z); the log form keeps precision when u -> 1
        return 1.0 - ad.exp(ad.log_ndtr(-z) / self.alpha)


@dataclass(frozen=True)
class Laplace(Dist1D):
    loc: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("Laplace needs scale > 0")

    def log_pdf(self, x):
        return -ad.abs_(x - self.loc) / self.scale - math.log(2.0 * self.scale)

    def cdf(self, x: float) -> float:
        d = (x - self.loc) / self.scale
        if d < 0:
            return 0.5 * math.exp(d)
        return 1.0 - 0.5 * math.exp(-d)

    def inv_cdf(self, u: float) -> float:
        _check_unit(u)
        if u < 0.5:
            return self.loc + self.scale * math.log(2.0 * u)
        return self.loc - self.scale * math.log(2.0 * (1.0 - u))

    def from_normal(self, z):
        z = float(ad._primal(z))
        if z < 0:
            return self.loc + self.scale * (math.log(2.0) + float(special.log_ndtr(z)))
        return self.loc - self.scale * (math.log(2.0) + float(special.log_ndtr(-z)))


@dataclass(frozen=True)
class Poisson(Dist1D):
    lam: float = 1.0

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("Poisson needs lam > 0")

    def log_pdf(self, x):
        k = ad._primal(x)
        if k < 0 or k != math.floor(k):
            return -math.inf
        return k * math.log(self.lam) - self.lam - math.lgamma(k + 1.0)

    def cdf(self, x: float) -> float:
        if x < 0:
            return 0.0
        return float(special.pdtr(math.floor(x), self.lam))

    def inv_cdf(self, u: float) -> float:
        """Smallest k with cdf(k) >= u, by cumulative pmf summation."""
        _check_unit(u)
        k = 0
        pmf = math.exp(-self.lam)
        total = pmf
        while total < u:
            k += 1
            pmf *= self.lam / k
            total += pmf
            if pmf == 0.0 and total < u:
                # summation stalled in float precision; fall back to the tail routine
                return _poisson_quantile_tail(self.lam, u, k)
        return k

    def from_normal(self, z):
        z = float(ad._primal(z))
        if z > 5.0:
            # upper tail: smallest k with P(X > k) <= Phi(-z)
            tail = normal_cdf(-z)
            k = max(0, math.floor(self.lam))
            while special.pdtrc(k, self.lam) > tail:
                k += 1
            return k
        u = normal_cdf(z)
        if u == 0.0:
            return 0
        return self.inv_cdf(u)


def _poisson_quantile_tail(lam: float, u: float, start: int) -> int:
    k = start
    while special.pdtr(k, lam) < u:
        k += 1
    return k
