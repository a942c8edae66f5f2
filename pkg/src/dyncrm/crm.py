"""Bivariate frequency-severity state-space model.

The frequency random effect follows the dynamic Poisson-gamma model of
:mod:`dyncrm.ssm_freq`; the severity random effect follows the inverse-gamma
model of :mod:`dyncrm.ssm_sev`, observed through

``y2 | y1, theta2 ~ Gamma(y1 / psi, rate = 1 / (theta2 * lam2 * psi))`` with
``lam2 = lam2_star * exp(eta * y1)``.

Given the past, the two random effects are independent, so both filtering laws
stay conjugate.  Four variants share one code path:

========================  ===================  ===============================
variant                   severity schedule    severity state on ``y1 == 0``
========================  ===================  ===============================
``PLAIN``                 standard             evolves
``EWMA_SEVERITY``         EWMA                 evolves
``THREE_PART``            standard             frozen
``EWMA_THREE_PART``       EWMA                 frozen
========================  ===================  ===============================

State arithmetic broadcasts, so states may carry numpy arrays (one entry per
policyholder) as in :func:`loglik_panel`.
"""

from __future__ import annotations

import enum
import math
import dataclasses
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import special

from . import dist, ssm_freq, ssm_sev
from .errors import DomainError, ExistenceError, InvariantError
from .records import GAP, OBSERVED, Panel, PolicyHistory
from .ssm_freq import GammaState
from .ssm_sev import InvGammaState, QSchedule, ScheduleKind


class Variant(str, enum.Enum):
    PLAIN = "plain"
    EWMA_SEVERITY = "ewma"
    THREE_PART = "three_part"
    EWMA_THREE_PART = "ewma_three_part"

    @property
    def schedule_kind(self) -> ScheduleKind:
        if self in (Variant.EWMA_SEVERITY, Variant.EWMA_THREE_PART):
            return ScheduleKind.EWMA
        return ScheduleKind.STANDARD

    @property
    def freezes_severity(self) -> bool:
        return self in (Variant.THREE_PART, Variant.EWMA_THREE_PART)


@dataclass(frozen=True)
class CrmParams:
    q1: float
    q2: float
    alpha0_1: float
    beta0_1: float
    alpha0_2: float
    beta0_2: float
    zeta1: tuple = (0.0,)
    zeta2: tuple = (0.0,)
    eta: float = 0.0
    psi: float = 1.0
    variant: Variant = Variant.PLAIN

    def __post_init__(self):
        ssm_freq.check_q(self.q1)
        ssm_freq.check_q(self.q2)
        if not (self.alpha0_1 > 0 and self.beta0_1 > 0):
            raise DomainError("alpha0_1 and beta0_1 must be > 0")
        if not self.alpha0_2 > 1:
            raise InvariantError("alpha0_2 must be > 1")
        if not (self.beta0_2 > 0 and self.psi > 0):
            raise DomainError("beta0_2 and psi must be > 0")
        if not math.isfinite(self.eta):
            raise DomainError("eta must be finite")
        object.__setattr__(self, "zeta1", tuple(float(v) for v in np.ravel(self.zeta1)))
        object.__setattr__(self, "zeta2", tuple(float(v) for v in np.ravel(self.zeta2)))
        object.__setattr__(self, "variant", Variant(self.variant))

    @classmethod
    def unit_mean(cls, q1, q2, alpha0_1, alpha0_2, **kwargs):
        """Parameters with prior random-effect means tied to one."""
        return cls(q1, q2, alpha0_1, alpha0_1, alpha0_2, alpha0_2 - 1.0, **kwargs)

    @property
    def schedule(self) -> QSchedule:
        return QSchedule(self.variant.schedule_kind, self.q2)

    def lambdas(self, x):
        """``(lam1, lam2_star)`` for covariates ``x`` (last axis = features)."""
        x = np.asarray(x, dtype=float)
        lam1 = np.exp(x @ np.asarray(self.zeta1))
        lam2 = np.exp(x @ np.asarray(self.zeta2))
        return lam1, lam2

    def initial_state(self) -> "CrmState":
        return CrmState(
            GammaState(float(self.alpha0_1), float(self.beta0_1), 0),
            InvGammaState(float(self.alpha0_2), float(self.beta0_2), 0),
        )

    def replace(self, **changes) -> "CrmParams":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class Observation:
    y1: int
    y2: float

    def __post_init__(self):
        y1 = np.asarray(self.y1, dtype=float)
        y2 = np.asarray(self.y2, dtype=float)
        if np.any(y1 < 0) or np.any(y1 != np.floor(y1)):
            raise DomainError(f"claim count must be a non-negative integer, got {self.y1!r}")
        if np.any((y1 == 0) & (y2 != 0)) or np.any((y1 > 0) & ~(y2 > 0)):
            raise DomainError(
                f"two-part invariant violated: y1={self.y1!r}, y2={self.y2!r} "
                "(y2 must be 0 exactly when y1 is 0)"
            )


@dataclass(frozen=True)
class CrmState:
    freq: GammaState
    sev: InvGammaState

    @property
    def t(self):
        return self.freq.t

    @property
    def credibility_freq(self):
        return self.freq.alpha / self.freq.beta

    @property
    def credibility_sev(self):
        return self.sev.beta / (self.sev.alpha - 1.0)


@dataclass(frozen=True)
class CrmForecast:
    """One-step predictive laws: the count, and the severity given the count."""

    count: dist.NegBinomial
    theta_sev: dist.InverseGamma
    scale_factor: float  # q*_t beta lam2_star psi
    shape_sev: float  # q_t alpha
    eta: float
    psi: float
    lam2_star: float
    sev_mean_factor: float  # beta / (alpha - 1)

    def severity(self, y1) -> dist.Law:
        """Predictive law of the aggregate loss given ``y1`` claims."""
        if y1 == 0:
            return dist.POINT_MASS_ZERO
        scale = self.scale_factor * math.exp(self.eta * y1)
        return dist.GB2(1.0, scale, y1 / self.psi, self.shape_sev)

    def severity_mean(self, y1):
        return y1 * self.lam2_star * math.exp(self.eta * y1) * self.sev_mean_factor

    @property
    def severity_variance_exists(self) -> bool:
        return self.shape_sev > 2


def _check_state(state: CrmState):
    if np.any(~(np.asarray(state.sev.alpha) > 1)):
        raise InvariantError("severity shape must stay > 1")


def predict(state: CrmState, params: CrmParams, x) -> CrmForecast:
    _check_state(state)
    lam1, lam2_star = params.lambdas(x)
    lam1, lam2_star = float(lam1), float(lam2_star)
    count = ssm_freq.forecast_obs(state.freq, params.q1, lam1)
    q_t, q_star = ssm_sev.q_step(params.schedule, state.sev.alpha)
    return CrmForecast(
        count=count,
        theta_sev=dist.InverseGamma(q_t * state.sev.alpha, q_star * state.sev.beta),
        scale_factor=q_star * state.sev.beta * lam2_star * params.psi,
        shape_sev=q_t * state.sev.alpha,
        eta=params.eta,
        psi=params.psi,
        lam2_star=lam2_star,
        sev_mean_factor=state.credibility_sev,
    )


def conditional_severity_variance(state: CrmState, params: CrmParams, lam2, y1):
    """Closed-form ``Var(y2 | past, y1)`` under the standard schedule, shape > 2."""
    a, b = state.sev.alpha, state.sev.beta
    if params.variant.schedule_kind is not ScheduleKind.STANDARD or not a > 2:
        return dist.UNDEFINED
    psi, q = params.psi, params.q2
    m = lam2 * b / (a - 1.0)
    return y1 * m * m * ((psi + y1) / (q * (a - 2.0)) + psi)


def _step(state: CrmState, params: CrmParams, lam1, lam2_star, y1, y2) -> CrmState:
    freq = ssm_freq.update(state.freq, params.q1, lam1, y1)
    lam2 = lam2_star * np.exp(params.eta * y1)
    q_t, q_star = ssm_sev.q_step(params.schedule, state.sev.alpha)
    alpha2 = q_t * state.sev.alpha + y1 / params.psi
    beta2 = q_star * state.sev.beta + y2 / (lam2 * params.psi)
    if params.variant.freezes_severity:
        no_claim = np.asarray(y1) == 0
        alpha2 = np.where(no_claim, state.sev.alpha, alpha2)
        beta2 = np.where(no_claim, state.sev.beta, beta2)
        if np.ndim(alpha2) == 0:
            alpha2, beta2 = float(alpha2), float(beta2)
    return CrmState(freq, InvGammaState(alpha2, beta2, state.sev.t + 1))


def update(state: CrmState, params: CrmParams, x, obs: Observation) -> CrmState:
    """Filtering state after observing ``obs`` with covariates ``x``."""
    if not isinstance(obs, Observation):
        obs = Observation(*obs)
    _check_state(state)
    lam1, lam2_star = params.lambdas(x)
    return _step(state, params, lam1, lam2_star, obs.y1, obs.y2)


def advance(state: CrmState, params: CrmParams) -> CrmState:
    """Transition through a period without data (missing year)."""
    freq = ssm_freq.advance(state.freq, params.q1)
    if params.variant.freezes_severity:
        sev = InvGammaState(state.sev.alpha, state.sev.beta, state.sev.t + 1)
    else:
        sev = ssm_sev.advance(state.sev, params.schedule)
    return CrmState(freq, sev)


def _walk(history: PolicyHistory, params: CrmParams, until_year=None):
    """Yield ``(kind, state_before, period)`` for every step of the history.

    ``kind`` is ``"gap"`` for a missing inner year and ``"obs"`` otherwise.  When
    ``until_year`` is given, gap steps up to ``until_year - 1`` are appended.
    """
    state = params.initial_state()
    prev_year = None
    for per in history.periods:
        if until_year is not None and per.year >= until_year:
            break
        if prev_year is not None:
            for _ in range(per.year - prev_year - 1):
                yield "gap", state, None
                state = advance(state, params)
        yield "obs", state, per
        state = update(state, params, per.x, Observation(per.y1, per.y2))
        prev_year = per.year
    if until_year is not None and prev_year is not None:
        for _ in range(until_year - prev_year - 1):
            yield "gap", state, None
            state = advance(state, params)
    yield "end", state, None


def filter_history(history: PolicyHistory, params: CrmParams, until_year=None) -> CrmState:
    """Filtering state at the end of ``history`` (or just before ``until_year``)."""
    for kind, state, _ in _walk(history, params, until_year):
        if kind == "end":
            return state
    raise AssertionError("unreachable")


def loglik(history: PolicyHistory, params: CrmParams) -> float:
    """Exact log-likelihood of one policyholder from the one-step predictive laws."""
    total = 0.0
    for kind, state, per in _walk(history, params):
        if kind != "obs":
            continue
        fc = predict(state, params, per.x)
        total += float(fc.count.logpmf(per.y1))
        if per.y1 > 0:
            total += float(fc.severity(per.y1).logpdf(per.y2))
    return total


def loglik_panel(panel: Panel, params: CrmParams) -> np.ndarray:
    """Per-policy log-likelihoods for a whole padded panel, vectorised."""
    n, T = panel.y1.shape
    state = CrmState(
        GammaState(np.full(n, float(params.alpha0_1)), np.full(n, float(params.beta0_1))),
        InvGammaState(np.full(n, float(params.alpha0_2)), np.full(n, float(params.beta0_2))),
    )
    out = np.zeros(n)
    lam1_all, lam2s_all = params.lambdas(panel.x)
    psi, eta = params.psi, params.eta
    for t in range(T):
        status = panel.status[:, t]
        if not np.any(status):
            continue
        obs = status == OBSERVED
        gap = status == GAP
        y1, y2 = panel.y1[:, t], panel.y2[:, t]
        lam1, lam2s = lam1_all[:, t], lam2s_all[:, t]
        a1, b1 = state.freq.alpha, state.freq.beta
        a2, b2 = state.sev.alpha, state.sev.beta
        q_t, q_star = ssm_sev.q_step(params.schedule, a2)
        size = params.q1 * a1
        mean = lam1 * a1 / b1
        ll = (
            special.gammaln(y1 + size)
            - special.gammaln(y1 + 1.0)
            - special.gammaln(size)
            + size * (np.log(size) - np.log(size + mean))
            + special.xlogy(y1, mean)
            - y1 * np.log(size + mean)
        )
        claim = y1 > 0
        lam2 = lam2s * np.exp(eta * y1)
        p = np.where(claim, y1 / psi, 1.0)
        qq = q_t * a2
        scale = q_star * b2 * lam2 * psi
        yy = np.where(claim, y2, 1.0)
        sev_ll = (
            (p - 1.0) * np.log(yy)
            - p * np.log(scale)
            - special.betaln(p, qq)
            - (p + qq) * np.log1p(yy / scale)
        )
        ll = ll + np.where(claim, sev_ll, 0.0)
        out += np.where(obs, ll, 0.0)

        new = _step(state, params, lam1, lam2s, y1, np.where(obs, y2, 0.0))
        adv = advance(state, params)
        state = CrmState(
            GammaState(
                np.where(obs, new.freq.alpha, np.where(gap, adv.freq.alpha, a1)),
                np.where(obs, new.freq.beta, np.where(gap, adv.freq.beta, b1)),
            ),
            InvGammaState(
                np.where(obs, new.sev.alpha, np.where(gap, adv.sev.alpha, a2)),
                np.where(obs, new.sev.beta, np.where(gap, adv.sev.beta, b2)),
            ),
        )
    return out


# ---------------------------------------------------------------------------
# posterior premium
# ---------------------------------------------------------------------------


def eta_bound(state: CrmState, q1, lam1):
    """Largest admissible ``eta`` (exclusive) for the aggregate-loss mean."""
    return np.log((q1 * state.freq.beta + lam1) / lam1)


def laplace_count_term(state: CrmState, q1, lam1, eta):
    """``E[exp(eta Y) Y | past]`` for the predictive count ``Y``.

    With ``r = q1 alpha``, ``c = q1 beta`` and ``D = c + lam1 - lam1 e^eta``,
    the value is ``r lam1 e^eta (c / D)^r / D``.  It exists only when ``D > 0``.
    """
    c = q1 * state.freq.beta
    r = q1 * state.freq.alpha
    ee = np.exp(eta)
    d = c + lam1 - lam1 * ee
    if np.any(~(d > 0)):
        bound = eta_bound(state, q1, lam1)
        raise ExistenceError(
            f"eta={eta!r} must be < {bound!r} for the expected aggregate loss to exist",
            bound=bound,
        )
    return r * lam1 * ee * np.exp(r * (np.log(c) - np.log(d))) / d


class Premium(NamedTuple):
    freq_mean: float
    sev_mean: float  # expected aggregate loss of the period
    credibility_freq: float
    credibility_sev: float

    @property
    def multiplier(self):
        return self.credibility_freq * self.credibility_sev


def premium(state: CrmState, params: CrmParams, x) -> Premium:
    """Posterior mean frequency and aggregate loss for the next period."""
    lam1, lam2_star = params.lambdas(x)
    cf1 = state.credibility_freq
    cf2 = state.credibility_sev
    lap = laplace_count_term(state, params.q1, lam1, params.eta)
    return Premium(lam1 * cf1, lam2_star * lap * cf2, cf1, cf2)


def premium_weights(history: PolicyHistory, params: CrmParams, tau=None):
    """Linear representation of the frequency and aggregate-loss forecasts.

    Returns ``(omega1, omega2)``, arrays of length ``tau`` whose entry 0 is the
    prior weight.  With ``L`` the Laplace term,

    ``E[y1_tau] = lam1_tau (omega1[0] + sum_t omega1[t] y1_t / lam1_t)`` and
    ``E[y2_tau] = lam2*_tau L (omega2[0] + sum_t omega2[t] y2_t / lam2_t)``.

    ``tau`` defaults to ``len(history) + 1``; missing inner years contribute
    their transition factors but no weight entry.
    """
    n = len(history)
    tau = n + 1 if tau is None else int(tau)
    if not 1 <= tau <= n + 1:
        raise DomainError(f"tau must lie in [1, {n + 1}]")
    hist = PolicyHistory(history.policy_id, history.periods[: tau - 1])
    coef1 = [1.0]  # multiplies alpha0_1, then each y1_t
    coef2 = [1.0]  # multiplies beta0_2, then each y2_t / (lam2_t psi)
    state = None
    for kind, st, per in _walk(hist, params):
        state = st
        if kind == "end":
            break
        f1 = params.q1
        if params.variant.freezes_severity and (kind == "gap" or per.y1 == 0):
            f2 = 1.0
        else:
            f2 = ssm_sev.q_step(params.schedule, st.sev.alpha)[1]
        coef1 = [c * f1 for c in coef1]
        coef2 = [c * f2 for c in coef2]
        if kind == "obs":
            coef1.append(1.0)
            coef2.append(1.0)
    lam1 = np.array([float(params.lambdas(p.x)[0]) for p in hist.periods])
    beta1 = state.freq.beta
    omega1 = np.empty(tau)
    omega1[0] = coef1[0] * params.alpha0_1 / beta1
    omega1[1:] = np.asarray(coef1[1:]) * lam1 / beta1
    scale = state.sev.alpha - 1.0
    omega2 = np.empty(tau)
    omega2[0] = coef2[0] * params.beta0_2 / scale
    omega2[1:] = np.asarray(coef2[1:]) / (scale * params.psi)
    return omega1, omega2


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


class Trajectory(NamedTuple):
    theta1: np.ndarray
    theta2: np.ndarray
    y1: np.ndarray
    y2: np.ndarray


def _beta_or_one(rng, a, b):
    # b == 0 is the degenerate q_t = 1 limit: B = 1
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(b < 0):
        raise InvariantError("beta transition with q_t > 1 cannot be sampled")
    ga = rng.standard_gamma(a)
    gb = np.where(b > 0, rng.standard_gamma(np.where(b > 0, b, 1.0)), 0.0)
    return ga / (ga + gb)


def simulate(params: CrmParams, x_path, rng: np.random.Generator, size=None) -> Trajectory:
    """Draw random effects and observations along the covariate path ``x_path``.

    ``x_path`` has shape ``(T, p)``, or ``(size, T, p)`` for one covariate path
    per trajectory.  With ``size`` the draws are vectorised over ``size``
    independent trajectories and arrays have shape ``(size, T)``.
    """
    x_path = np.atleast_2d(np.asarray(x_path, dtype=float))
    T = x_path.shape[-2]
    shape = () if size is None else (int(size),)
    theta1 = rng.standard_gamma(params.alpha0_1, shape) / params.beta0_1
    theta2 = params.beta0_2 / rng.standard_gamma(params.alpha0_2, shape)
    state = CrmState(
        GammaState(np.full(shape, float(params.alpha0_1)), np.full(shape, float(params.beta0_1))),
        InvGammaState(np.full(shape, float(params.alpha0_2)), np.full(shape, float(params.beta0_2))),
    )
    out = {k: np.zeros(shape + (T,)) for k in ("theta1", "theta2", "y1", "y2")}
    for t in range(T):
        lam1, lam2_star = params.lambdas(x_path[..., t, :])
        a1 = state.freq.alpha
        b = _beta_or_one(rng, params.q1 * a1, (1.0 - params.q1) * a1)
        theta1 = theta1 * b / params.q1
        y1 = rng.poisson(lam1 * theta1)

        a2 = state.sev.alpha
        q_t, q_star = ssm_sev.q_step(params.schedule, a2)
        b2 = _beta_or_one(rng, q_t * a2, (1.0 - q_t) * a2)
        moved = theta2 * q_star / b2
        if params.variant.freezes_severity:
            moved = np.where(y1 == 0, theta2, moved)
        theta2 = moved

        lam2 = lam2_star * np.exp(params.eta * y1)
        shape_y2 = np.where(y1 > 0, y1 / params.psi, 1.0)
        draw = rng.standard_gamma(shape_y2) * theta2 * lam2 * params.psi
        y2 = np.where(y1 > 0, draw, 0.0)

        state = _step(state, params, lam1, lam2_star, y1, y2)
        out["theta1"][..., t] = theta1
        out["theta2"][..., t] = theta2
        out["y1"][..., t] = y1
        out["y2"][..., t] = y2
    return Trajectory(out["theta1"], out["theta2"], out["y1"].astype(int), out["y2"])
