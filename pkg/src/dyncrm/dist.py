"""Distribution toolkit: Gamma, Inverse-Gamma, Beta, Negative Binomial, GB2.

Conventions
-----------
* ``Gamma(alpha, beta)`` uses a *rate* ``beta``: mean ``alpha / beta``.
* ``InverseGamma(alpha, beta)`` is the law of ``1 / Y`` with ``Y ~ Gamma(alpha, beta)``.
* ``NegBinomial(mean, size)`` has mean ``mean`` and variance ``mean + mean**2 / size``.
* ``GB2(a, b, p, q)`` has density ``|a| y^(ap-1) / (b^(ap) B(p,q) (1 + (y/b)^a)^(p+q))``.

A gamma law with zero shape and a GB2 law with zero first shape are both the
point mass at zero; the factories :func:`gamma` and :func:`gb2` collapse them to
:data:`POINT_MASS_ZERO`.

Densities are evaluated in log space through ``gammaln``/``betaln``; the
probability-space functions exponentiate the log versions.  All density
functions broadcast over numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np
from scipy import special

from .errors import DomainError

__all__ = [
    "UNDEFINED",
    "Moments",
    "Gamma",
    "InverseGamma",
    "Beta",
    "NegBinomial",
    "GB2",
    "PointMassZero",
    "POINT_MASS_ZERO",
    "Law",
    "gamma",
    "gb2",
    "logpmf_nb",
    "pmf_nb",
    "logpdf_gb2",
    "pdf_gb2",
    "moments",
    "sample",
]


class _Undefined:
    """Marker for a moment that does not exist (infinite or not defined)."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "UNDEFINED"

    def __bool__(self):
        return False

    def __reduce__(self):
        return (_Undefined, ())


UNDEFINED = _Undefined()


class Moments(NamedTuple):
    mean: Union[float, _Undefined]
    variance: Union[float, _Undefined]

    @property
    def mean_exists(self) -> bool:
        return self.mean is not UNDEFINED

    @property
    def variance_exists(self) -> bool:
        return self.variance is not UNDEFINED


def _check_positive(name, value):
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise DomainError(f"{name} must be finite and > 0, got {value!r}")


def _check_nonneg(name, value):
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise DomainError(f"{name} must be finite and >= 0, got {value!r}")


# ---------------------------------------------------------------------------
# log densities (array friendly)
# ---------------------------------------------------------------------------


def logpmf_nb(y, mean, size):
    """Log pmf of ``NB(mean, size)`` at the non-negative integer(s) ``y``."""
    _check_positive("mean", mean)
    _check_positive("size", size)
    y = np.asarray(y, dtype=float)
    if np.any(y < 0) or np.any(y != np.floor(y)):
        raise DomainError(f"y must be a non-negative integer, got {y!r}")
    mean = np.asarray(mean, dtype=float)
    size = np.asarray(size, dtype=float)
    total = size + mean
    out = (
        special.gammaln(y + size)
        - special.gammaln(y + 1.0)
        - special.gammaln(size)
        + size * (np.log(size) - np.log(total))
        + special.xlogy(y, mean)
        - y * np.log(total)
    )
    return out[()] if out.ndim == 0 else out


def pmf_nb(y, mean, size):
    return np.exp(logpmf_nb(y, mean, size))


def logpdf_gb2(y, a, b, p, q):
    """Log density of ``GB2(a, b, p, q)`` at ``y > 0``."""
    y = np.asarray(y, dtype=float)
    if np.any(~(y > 0)):
        raise DomainError(f"GB2 density needs y > 0, got {y!r}")
    a = np.asarray(a, dtype=float)
    if np.any(a == 0) or not np.all(np.isfinite(a)):
        raise DomainError("GB2 needs a finite, non-zero a")
    _check_positive("b", b)
    _check_positive("p", p)
    _check_positive("q", q)
    b = np.asarray(b, dtype=float)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    logz = a * (np.log(y) - np.log(b))
    out = (
        np.log(np.abs(a))
        + (a * p - 1.0) * np.log(y)
        - a * p * np.log(b)
        - special.betaln(p, q)
        - (p + q) * np.logaddexp(0.0, logz)
    )
    return out[()] if out.ndim == 0 else out


def pdf_gb2(y, a, b, p, q):
    return np.exp(logpdf_gb2(y, a, b, p, q))


# ---------------------------------------------------------------------------
# law objects
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PointMassZero:
    """Degenerate law at 0."""

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.where(x == 0, 0.0, -np.inf)
        return out[()] if out.ndim == 0 else out

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.where(x >= 0, 1.0, 0.0)
        return out[()] if out.ndim == 0 else out


POINT_MASS_ZERO = PointMassZero()


@dataclass(frozen=True)
class Gamma:
    alpha: float
    beta: float

    def __post_init__(self):
        _check_positive("alpha", self.alpha)
        _check_positive("beta", self.beta)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            out = (
                self.alpha * np.log(self.beta)
                - special.gammaln(self.alpha)
                + special.xlogy(self.alpha - 1.0, x)
                - self.beta * x
            )
        out = np.where(x > 0, out, -np.inf)
        return out[()] if out.ndim == 0 else out

    def cdf(self, x):
        x = np.clip(np.asarray(x, dtype=float), 0.0, None)
        return special.gammainc(self.alpha, self.beta * x)


@dataclass(frozen=True)
class InverseGamma:
    alpha: float
    beta: float

    def __post_init__(self):
        _check_positive("alpha", self.alpha)
        _check_positive("beta", self.beta)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        safe = np.where(x > 0, x, 1.0)
        out = (
            self.alpha * np.log(self.beta)
            - special.gammaln(self.alpha)
            - (self.alpha + 1.0) * np.log(safe)
            - self.beta / safe
        )
        out = np.where(x > 0, out, -np.inf)
        return out[()] if out.ndim == 0 else out

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        safe = np.where(x > 0, x, 1.0)
        out = np.where(x > 0, special.gammaincc(self.alpha, self.beta / safe), 0.0)
        return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class Beta:
    alpha: float
    beta: float

    def __post_init__(self):
        _check_positive("alpha", self.alpha)
        _check_positive("beta", self.beta)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x > 0) & (x < 1)
        safe = np.where(inside, x, 0.5)
        out = (
            (self.alpha - 1.0) * np.log(safe)
            + (self.beta - 1.0) * np.log1p(-safe)
            - special.betaln(self.alpha, self.beta)
        )
        out = np.where(inside, out, -np.inf)
        return out[()] if out.ndim == 0 else out

    def cdf(self, x):
        x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
        return special.betainc(self.alpha, self.beta, x)


@dataclass(frozen=True)
class NegBinomial:
    """Negative binomial parameterised by its mean and size."""

    mean: float
    size: float

    def __post_init__(self):
        _check_positive("mean", self.mean)
        _check_positive("size", self.size)

    def logpmf(self, y):
        return logpmf_nb(y, self.mean, self.size)

    logpdf = logpmf

    def pmf(self, y):
        return pmf_nb(y, self.mean, self.size)

    def cdf(self, y):
        k = np.floor(np.asarray(y, dtype=float))
        prob = self.size / (self.size + self.mean)
        out = np.where(k >= 0, special.betainc(self.size, np.maximum(k, 0) + 1.0, prob), 0.0)
        return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class GB2:
    a: float
    b: float
    p: float
    q: float

    def __post_init__(self):
        if self.a == 0 or not np.isfinite(self.a):
            raise DomainError("GB2 needs a finite, non-zero a")
        _check_positive("b", self.b)
        _check_positive("p", self.p)
        _check_positive("q", self.q)

    @property
    def mean_exists(self) -> bool:
        return self.a == 1 and self.q > 1

    @property
    def variance_exists(self) -> bool:
        return self.a == 1 and self.q > 2

    def logpdf(self, y):
        y = np.asarray(y, dtype=float)
        safe = np.where(y > 0, y, 1.0)
        out = np.where(y > 0, logpdf_gb2(safe, self.a, self.b, self.p, self.q), -np.inf)
        return out[()] if out.ndim == 0 else out

    def pdf(self, y):
        return np.exp(self.logpdf(y))

    def cdf(self, y):
        y = np.asarray(y, dtype=float)
        safe = np.where(y > 0, y, 1.0)
        u = (safe / self.b) ** self.a
        z = u / (1.0 + u)
        val = special.betainc(self.p, self.q, z)
        if self.a < 0:
            val = 1.0 - val
        out = np.where(y > 0, val, 0.0)
        return out[()] if out.ndim == 0 else out


Law = Union[Gamma, InverseGamma, Beta, NegBinomial, GB2, PointMassZero]


def gamma(alpha, beta) -> Law:
    """Gamma law, or the point mass at zero when ``alpha == 0``."""
    _check_nonneg("alpha", alpha)
    _check_positive("beta", beta)
    if alpha == 0:
        return POINT_MASS_ZERO
    return Gamma(float(alpha), float(beta))


def gb2(a, b, p, q) -> Law:
    """GB2 law, or the point mass at zero when the first shape ``p`` is 0."""
    _check_nonneg("p", p)
    if p == 0:
        return POINT_MASS_ZERO
    return GB2(float(a), float(b), float(p), float(q))


# ---------------------------------------------------------------------------
# moments and sampling
# ---------------------------------------------------------------------------


def moments(law: Law) -> Moments:
    """Closed-form mean and variance; non-existent moments are ``UNDEFINED``."""
    if isinstance(law, PointMassZero):
        return Moments(0.0, 0.0)
    if isinstance(law, Gamma):
        return Moments(law.alpha / law.beta, law.alpha / law.beta**2)
    if isinstance(law, InverseGamma):
        a, b = law.alpha, law.beta
        mean = b / (a - 1.0) if a > 1 else UNDEFINED
        var = b * b / ((a - 1.0) ** 2 * (a - 2.0)) if a > 2 else UNDEFINED
        return Moments(mean, var)
    if isinstance(law, Beta):
        a, b = law.alpha, law.beta
        s = a + b
        return Moments(a / s, a * b / (s * s * (s + 1.0)))
    if isinstance(law, NegBinomial):
        m = law.mean
        return Moments(m, m + m * m / law.size)
    if isinstance(law, GB2):
        if law.a != 1:
            raise NotImplementedError("moments are only provided for GB2 with a = 1")
        b, p, q = law.b, law.p, law.q
        mean = b * p / (q - 1.0) if q > 1 else UNDEFINED
        var = b * b * p / (q - 1.0) * (p + q - 1.0) / ((q - 2.0) * (q - 1.0)) if q > 2 else UNDEFINED
        return Moments(mean, var)
    raise TypeError(f"unknown law {law!r}")


def _beta_draw(rng, a, b, size):
    x = rng.standard_gamma(a, size)
    y = rng.standard_gamma(b, size)
    return x / (x + y)


def sample(law: Law, rng: np.random.Generator, size=None):
    """Draw from ``law`` using ``rng``; returns a float when ``size`` is None."""
    if isinstance(law, PointMassZero):
        return 0.0 if size is None else np.zeros(size)
    if isinstance(law, Gamma):
        return rng.standard_gamma(law.alpha, size) / law.beta
    if isinstance(law, InverseGamma):
        return law.beta / rng.standard_gamma(law.alpha, size)
    if isinstance(law, Beta):
        return _beta_draw(rng, law.alpha, law.beta, size)
    if isinstance(law, NegBinomial):
        theta = rng.standard_gamma(law.size, size) / law.size
        return rng.poisson(law.mean * theta, size)
    if isinstance(law, GB2):
        ratio = rng.standard_gamma(law.p, size) / rng.standard_gamma(law.q, size)
        return law.b * ratio ** (1.0 / law.a)
    raise TypeError(f"unknown law {law!r}")
