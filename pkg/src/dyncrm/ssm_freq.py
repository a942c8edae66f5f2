"""Dynamic Poisson-gamma count model with beta-thinning transitions.

The random effect evolves as ``theta_t = theta_{t-1} * B_t / q`` with
``B_t ~ Beta(q a, (1-q) a)`` where ``a`` is the current filtering shape.  The
filtering law stays gamma and is carried by :class:`GammaState`.

Every function accepts scalars or numpy arrays in the state fields, so a whole
portfolio can be filtered at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import dist
from .errors import DomainError


@dataclass(frozen=True)
class GammaState:
    """Filtering law ``Gamma(alpha, beta)`` after ``t`` periods."""

    alpha: float
    beta: float
    t: int = 0

    @property
    def mean(self):
        return self.alpha / self.beta

    @property
    def variance(self):
        return self.alpha / self.beta**2

    def law(self) -> dist.Law:
        return dist.gamma(self.alpha, self.beta)


@dataclass(frozen=True)
class HfParams:
    """Parameters of the count model: ``q``, the prior, and per-period rates."""

    q: float
    alpha0: float
    beta0: float
    lambdas: tuple = ()

    def __post_init__(self):
        check_q(self.q)
        if not (self.alpha0 > 0 and self.beta0 > 0):
            raise DomainError("alpha0 and beta0 must be > 0")
        lam = np.asarray(self.lambdas, dtype=float)
        if lam.size and (not np.all(np.isfinite(lam)) or np.any(lam <= 0)):
            raise DomainError("every lambda_t must be finite and > 0")
        object.__setattr__(self, "lambdas", tuple(float(v) for v in lam))

    @classmethod
    def constant(cls, q, alpha0, beta0, lam, n):
        return cls(q, alpha0, beta0, (lam,) * n)

    def initial_state(self) -> GammaState:
        return GammaState(float(self.alpha0), float(self.beta0), 0)


def check_q(q):
    # q = 1 is the static limit (no transition noise)
    if not (0 < q <= 1):
        raise DomainError(f"q must lie in (0, 1], got {q!r}")


def predict_state(state: GammaState, q) -> dist.Gamma:
    """Law of the next random effect given the past: ``Gamma(q alpha, q beta)``."""
    return dist.Gamma(q * state.alpha, q * state.beta)


def advance(state: GammaState, q) -> GammaState:
    """Transition without an observation (a missing period)."""
    return GammaState(q * state.alpha, q * state.beta, state.t + 1)


def forecast_obs(state: GammaState, q, lam) -> dist.NegBinomial:
    """One-step predictive law of the count: ``NB(lam alpha/beta, q alpha)``."""
    return dist.NegBinomial(lam * state.alpha / state.beta, q * state.alpha)


def update(state: GammaState, q, lam, y) -> GammaState:
    y_arr = np.asarray(y, dtype=float)
    if np.any(y_arr < 0) or np.any(y_arr != np.floor(y_arr)):
        raise DomainError(f"counts must be non-negative integers, got {y!r}")
    return GammaState(q * state.alpha + y, q * state.beta + lam, state.t + 1)


def filter_states(params: HfParams, counts: Sequence[int]) -> list[GammaState]:
    """Filtering states ``[s_0, s_1, ..., s_n]`` along a count history."""
    if len(counts) > len(params.lambdas):
        raise DomainError("more counts than lambdas")
    states = [params.initial_state()]
    for lam, y in zip(params.lambdas, counts):
        states.append(update(states[-1], params.q, lam, y))
    return states


def forecast_weights(params: HfParams, tau: int):
    """Linear credibility weights of the forecast at period ``tau``.

    Returns ``(b0, b)`` such that
    ``E[y_tau | past] = lambda_tau * (b0 + sum_t b[t-1] * y_t / lambda_t)``.
    """
    if tau < 1:
        raise DomainError("tau must be >= 1")
    if tau - 1 > len(params.lambdas):
        raise DomainError("not enough lambdas for this tau")
    q = params.q
    lam = np.asarray(params.lambdas[: tau - 1], dtype=float)
    decay = q ** np.arange(tau - 2, -1, -1, dtype=float)  # q^(tau-1-t), t = 1..tau-1
    denom = float(np.sum(decay * lam)) + q ** (tau - 1) * params.beta0
    b0 = q ** (tau - 1) * params.alpha0 / denom
    return b0, decay * lam / denom


def forecast_mean(params: HfParams, counts: Sequence[int], lam_next) -> float:
    """State-threaded one-step forecast mean after observing ``counts``."""
    last = filter_states(params, counts)[-1]
    return forecast_obs(last, params.q, lam_next).mean


def loglik(params: HfParams, counts: Sequence[int]) -> float:
    """Exact log-likelihood: sum of one-step negative binomial log pmfs."""
    state = params.initial_state()
    if len(counts) > len(params.lambdas):
        raise DomainError("more counts than lambdas")
    total = 0.0
    for lam, y in zip(params.lambdas, counts):
        total += float(forecast_obs(state, params.q, lam).logpmf(y))
        state = update(state, params.q, lam, y)
    return total
