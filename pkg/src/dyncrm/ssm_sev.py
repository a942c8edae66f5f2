"""Dynamic gamma / inverse-gamma model for positive observations.

The random effect moves as ``theta_t = theta_{t-1} * q*_t / B_t`` with
``B_t ~ Beta(q_t a, (1 - q_t) a)``; both ``q_t`` and ``q*_t`` depend on the
current filtering shape ``a`` through a :class:`QSchedule`:

``STANDARD``
    ``q_t = (q(a-2)+2)/a``, ``q*_t = (q(a-2)+1)/(a-1)``.  The predictive mean is
    preserved and, for ``a > 2``, the predictive variance is inflated by ``1/q``.
``EWMA``
    ``q_t = (q(a-1)+1)/a``, ``q*_t = q``.  The mean is still preserved and the
    forecast becomes an exponentially weighted moving average, but the
    predictive variance can cease to exist.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import dist
from .errors import BoundaryWarning, DomainError, InvariantError
from .ssm_freq import check_q


class ScheduleKind(str, enum.Enum):
    STANDARD = "standard"
    EWMA = "ewma"


@dataclass(frozen=True)
class QSchedule:
    kind: ScheduleKind
    q: float

    def __post_init__(self):
        object.__setattr__(self, "kind", ScheduleKind(self.kind))
        check_q(self.q)

    @classmethod
    def standard(cls, q):
        return cls(ScheduleKind.STANDARD, q)

    @classmethod
    def ewma(cls, q):
        return cls(ScheduleKind.EWMA, q)

    def min_alpha0(self) -> float:
        """Smallest admissible prior shape (exclusive)."""
        if self.kind is ScheduleKind.STANDARD and self.q < 1:
            return 2.0
        return 1.0

    def ewma_conditions(self, alpha0, psi):
        """Sufficient conditions for a finite predictive variance at all times.

        Returns ``(q (alpha0 - 1) > 1, q (1/psi + 1) + 1 >= 2)``.
        """
        q = self.q
        return bool(q * (alpha0 - 1.0) > 1.0), bool(q * (1.0 / psi + 1.0) + 1.0 >= 2.0)


def q_step(schedule: QSchedule, alpha_prev):
    """Return ``(q_t, q*_t)`` for the filtering shape ``alpha_prev``."""
    a = np.asarray(alpha_prev, dtype=float)
    if np.any(~(a > 1)):
        raise InvariantError(f"severity shape must stay > 1, got {alpha_prev!r}")
    q = schedule.q
    if schedule.kind is ScheduleKind.STANDARD:
        if q < 1 and np.any(a <= 2):
            warnings.warn(
                f"standard schedule at shape {alpha_prev!r} <= 2: q_t >= 1, the beta "
                "transition degenerates",
                BoundaryWarning,
                stacklevel=2,
            )
        q_t = (q * (a - 2.0) + 2.0) / a
        q_star = (q * (a - 2.0) + 1.0) / (a - 1.0)
    else:
        q_t = (q * (a - 1.0) + 1.0) / a
        q_star = np.full_like(a, q)
    if q_t.ndim == 0:
        return float(q_t), float(q_star)
    return q_t, q_star


@dataclass(frozen=True)
class InvGammaState:
    """Filtering law ``IG(alpha, beta)`` after ``t`` periods."""

    alpha: float
    beta: float
    t: int = 0

    @property
    def mean(self):
        return self.beta / (self.alpha - 1.0)

    def law(self) -> dist.InverseGamma:
        return dist.InverseGamma(self.alpha, self.beta)


@dataclass(frozen=True)
class SevParams:
    schedule: QSchedule
    alpha0: float
    beta0: float
    psi: float
    lambdas: tuple = ()

    def __post_init__(self):
        if not self.alpha0 > 1:
            raise InvariantError("alpha0 must be > 1")
        if not (self.beta0 > 0 and self.psi > 0):
            raise DomainError("beta0 and psi must be > 0")
        lam = np.asarray(self.lambdas, dtype=float)
        if lam.size and (not np.all(np.isfinite(lam)) or np.any(lam <= 0)):
            raise DomainError("every lambda_t must be finite and > 0")
        object.__setattr__(self, "lambdas", tuple(float(v) for v in lam))

    def initial_state(self) -> InvGammaState:
        return InvGammaState(float(self.alpha0), float(self.beta0), 0)


def predict_state(state: InvGammaState, schedule: QSchedule) -> dist.InverseGamma:
    """Law of the next random effect: ``IG(q_t alpha, q*_t beta)``."""
    q_t, q_star = q_step(schedule, state.alpha)
    return dist.InverseGamma(q_t * state.alpha, q_star * state.beta)


def advance(state: InvGammaState, schedule: QSchedule) -> InvGammaState:
    """Transition without an observation."""
    q_t, q_star = q_step(schedule, state.alpha)
    return InvGammaState(q_t * state.alpha, q_star * state.beta, state.t + 1)


def forecast_obs(state: InvGammaState, schedule: QSchedule, lam, psi, count=1) -> dist.Law:
    """Predictive law of an observation made of ``count`` gamma claims.

    ``count = 1`` is the plain positive-value model; ``count = 0`` gives the
    point mass at zero.
    """
    q_t, q_star = q_step(schedule, state.alpha)
    return dist.gb2(1.0, q_star * state.beta * lam * psi, count / psi, q_t * state.alpha)


def predictive_variance_exists(state: InvGammaState, schedule: QSchedule):
    q_t, _ = q_step(schedule, state.alpha)
    return q_t * state.alpha > 2.0


def variance_ratio(state: InvGammaState, schedule: QSchedule):
    """Predictive over filtering variance of the random effect, or UNDEFINED."""
    before = dist.moments(state.law()).variance
    after = dist.moments(predict_state(state, schedule)).variance
    if before is dist.UNDEFINED or after is dist.UNDEFINED:
        return dist.UNDEFINED
    return after / before


def update(state: InvGammaState, schedule: QSchedule, lam, psi, y, count=1) -> InvGammaState:
    """Bayes update after observing ``y`` (sum of ``count`` claims)."""
    y_arr = np.asarray(y, dtype=float)
    c_arr = np.asarray(count, dtype=float)
    if np.any(c_arr < 0):
        raise DomainError("count must be >= 0")
    if np.any((c_arr > 0) & ~(y_arr > 0)) or np.any((c_arr == 0) & (y_arr != 0)):
        raise DomainError(f"observation {y!r} inconsistent with count {count!r}")
    q_t, q_star = q_step(schedule, state.alpha)
    return InvGammaState(
        q_t * state.alpha + count / psi,
        q_star * state.beta + y / (lam * psi),
        state.t + 1,
    )


def filter_states(params: SevParams, ys: Sequence[float]) -> list[InvGammaState]:
    if len(ys) > len(params.lambdas):
        raise DomainError("more observations than lambdas")
    states = [params.initial_state()]
    for lam, y in zip(params.lambdas, ys):
        states.append(update(states[-1], params.schedule, lam, params.psi, y))
    return states


def forecast_mean(params: SevParams, ys: Sequence[float], lam_next) -> float:
    last = filter_states(params, ys)[-1]
    return lam_next * last.beta / (last.alpha - 1.0)


def weights_from_path(q_stars, alpha_last, beta0, psi):
    """Credibility weights given the realised ``q*`` factors of periods 1..tau-1.

    ``b0 = beta0 * prod(q*) / (alpha_last - 1)`` and
    ``b_t = prod_{k > t} q*_k / ((alpha_last - 1) psi)``.
    """
    q_stars = np.asarray(q_stars, dtype=float)
    # tail products prod_{k=t+1}^{tau-1} q*_k for t = 0..tau-1
    tail = np.ones(q_stars.size + 1)
    if q_stars.size:
        tail[:-1] = np.cumprod(q_stars[::-1])[::-1]
    scale = alpha_last - 1.0
    return beta0 * tail[0] / scale, tail[1:] / (scale * psi)


def forecast_weights(params: SevParams, tau: int):
    """Linear weights of the severity forecast at ``tau``.

    ``E[y_tau | past] = lambda_tau * (b0 + sum_t b[t-1] * y_t / lambda_t)``.
    The weights depend only on the shape path, which in this model does not
    depend on the observed values.
    """
    if tau < 1:
        raise DomainError("tau must be >= 1")
    if tau - 1 > len(params.lambdas):
        raise DomainError("not enough lambdas for this tau")
    alpha = float(params.alpha0)
    q_stars = []
    for _ in range(tau - 1):
        q_t, q_star = q_step(params.schedule, alpha)
        q_stars.append(q_star)
        alpha = q_t * alpha + 1.0 / params.psi
    return weights_from_path(q_stars, alpha, params.beta0, params.psi)


def ewma_forecast_mean(params: SevParams, ys: Sequence[float], lam_next) -> float:
    """Closed-form EWMA forecast valid under the ``EWMA`` schedule."""
    if params.schedule.kind is not ScheduleKind.EWMA:
        raise DomainError("closed-form EWMA forecast needs the EWMA schedule")
    q, psi = params.schedule.q, params.psi
    n = len(ys)
    lam = np.asarray(params.lambdas[:n], dtype=float)
    decay = q ** np.arange(n - 1, -1, -1, dtype=float)
    num = q**n * params.beta0 + float(np.sum(decay * np.asarray(ys, dtype=float) / lam)) / psi
    geo = float(np.sum(q ** np.arange(n, dtype=float)))
    den = q**n * (params.alpha0 - 1.0) + geo / psi
    return lam_next * num / den


def loglik(params: SevParams, ys: Sequence[float]) -> float:
    state = params.initial_state()
    if len(ys) > len(params.lambdas):
        raise DomainError("more observations than lambdas")
    total = 0.0
    for lam, y in zip(params.lambdas, ys):
        law = forecast_obs(state, params.schedule, lam, params.psi)
        total += float(law.logpdf(y))
        state = update(state, params.schedule, lam, params.psi, y)
    return total
