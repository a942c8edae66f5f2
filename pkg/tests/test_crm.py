import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from dyncrm import crm, dist, oracle, ssm_freq, ssm_sev
from dyncrm.crm import CrmParams, CrmState, Observation, Variant
from dyncrm.errors import DomainError, ExistenceError
from dyncrm.records import Period, PolicyHistory, make_panel
from dyncrm.ssm_freq import GammaState
from dyncrm.ssm_sev import InvGammaState

LOG02, LOG15K = math.log(0.2), math.log(15000.0)


def base_params(**kw):
    kw.setdefault("zeta1", (LOG02,))
    kw.setdefault("zeta2", (LOG15K,))
    kw.setdefault("psi", 1.5)
    return CrmParams(0.8, 0.8, 1.0, 1.0, 3.0, 2.0, **kw)


def history(claims, amounts=None, years=None, x=(1.0,)):
    amounts = amounts or [15000.0 * c for c in claims]
    years = years or range(1, len(claims) + 1)
    return PolicyHistory("p", tuple(Period(y, x, c, a) for y, c, a in zip(years, claims, amounts)))


@st.composite
def histories(draw, max_len=6, gaps=True):
    n = draw(st.integers(0, max_len))
    year, periods = 1, []
    for _ in range(n):
        y1 = draw(st.integers(0, 4))
        y2 = draw(st.floats(0.05, 30.0)) * y1 if y1 else 0.0
        x = (1.0, draw(st.sampled_from([0.0, 1.0])))
        periods.append(Period(year, x, y1, y2))
        year += 1 + (draw(st.integers(0, 2)) if gaps else 0)
    return PolicyHistory(draw(st.text("abc", min_size=1, max_size=3)), tuple(periods))


@st.composite
def param_sets(draw, variants=tuple(Variant)):
    variant = draw(st.sampled_from(variants))
    q1, q2 = draw(st.floats(0.3, 0.99)), draw(st.floats(0.3, 0.99))
    lb = 2.0 if variant.schedule_kind is ssm_sev.ScheduleKind.STANDARD else 1.0
    return CrmParams.unit_mean(
        q1, q2, draw(st.floats(0.3, 5.0)), lb + draw(st.floats(0.05, 4.0)),
        zeta1=(draw(st.floats(-2.0, 1.0)), draw(st.floats(-0.5, 0.5))),
        zeta2=(draw(st.floats(-1.0, 2.0)), draw(st.floats(-0.5, 0.5))),
        eta=draw(st.floats(-0.5, 0.2)), psi=draw(st.floats(0.3, 3.0)), variant=variant,
    )


START = CrmState(GammaState(1.0, 1.0), InvGammaState(3.0, 2.0))


def test_predict_example():
    fc = crm.predict(START, base_params(), (1.0,))
    assert (fc.count.mean, fc.count.size) == pytest.approx((0.2, 0.8))
    law = fc.severity(1)
    assert (law.a, law.b, law.p, law.q) == pytest.approx((1.0, 0.9 * 2 * 15000 * 1.5, 1 / 1.5, 2.8))
    assert dist.moments(law).mean == pytest.approx(15000.0, rel=1e-14)
    assert fc.severity_mean(1) == pytest.approx(15000.0, rel=1e-14)
    assert fc.severity(0) is dist.POINT_MASS_ZERO


@pytest.mark.parametrize("y1", [1, 3])
def test_conditional_variance_against_numeric_integral(y1):
    state = CrmState(GammaState(1.0, 1.0), InvGammaState(4.5, 2.0))
    params = base_params(zeta2=(0.0,), eta=-0.2)
    law = crm.predict(state, params, (1.0,)).severity(y1)
    mean = integrate.quad(lambda y: y * law.pdf(y), 0, np.inf, epsabs=0, epsrel=1e-12, limit=400)[0]
    second = integrate.quad(lambda y: y * y * law.pdf(y), 0, np.inf, epsabs=0, epsrel=1e-12,
                            limit=400)[0]
    lam2 = math.exp(-0.2 * y1)
    closed = crm.conditional_severity_variance(state, params, lam2, y1)
    assert second - mean**2 == pytest.approx(closed, rel=1e-8)
    assert mean == pytest.approx(y1 * lam2 * 2.0 / 3.5, rel=1e-10)


def test_update_examples():
    s = crm.update(START, base_params(), (1.0,), Observation(1, 15000.0))
    assert [s.freq.alpha, s.freq.beta, s.sev.alpha, s.sev.beta] == pytest.approx(
        [1.8, 1.0, 2.8 + 1 / 1.5, 1.8 + 1 / 1.5])
    s = crm.update(START, base_params(variant=Variant.THREE_PART), (1.0,), Observation(0, 0.0))
    assert [s.freq.alpha, s.freq.beta] == pytest.approx([0.8, 1.0])
    assert (s.sev.alpha, s.sev.beta) == (3.0, 2.0)
    s = crm.update(START, base_params(), (1.0,), Observation(0, 0.0))
    assert [s.sev.alpha, s.sev.beta] == pytest.approx([2.8, 1.8])


@pytest.mark.parametrize("obs", [(0, 5.0), (2, 0.0), (1, -3.0), (-1, 0.0), (1.5, 2.0)])
def test_observation_invariant(obs):
    with pytest.raises(DomainError):
        Observation(*obs)


def test_single_zero_period_loglik_is_count_term():
    params = base_params()
    h = history([0])
    expected = float(dist.NegBinomial(0.2, 0.8).logpmf(0))
    assert crm.loglik(h, params) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("variant", list(Variant))
def test_loglik_matches_quadrature(variant):
    params = CrmParams.unit_mean(0.8, 0.7, 1.5, 3.5, zeta1=(-0.5,), zeta2=(0.3,), eta=-0.3,
                                 psi=1.2, variant=variant)
    h = history([1, 0, 2], [2.0, 0.0, 3.5])
    quad = oracle.quadrature_filter(h, params)
    assert quad.loglik == pytest.approx(crm.loglik(h, params), abs=1e-6)


def test_naive_limit():
    # q -> 1 and alpha0 -> infinity: random effects degenerate at one
    params = CrmParams.unit_mean(0.9999, 0.9999, 1e6, 1e6, zeta1=(-0.4,), zeta2=(1.0,), psi=1.3)
    h = history([1, 0, 3], [2.0, 0.0, 10.0])
    lam1, lam2 = math.exp(-0.4), math.exp(1.0)
    indep = sum(stats.poisson.logpmf(p.y1, lam1) for p in h.periods)
    indep += sum(stats.gamma.logpdf(p.y2, p.y1 / 1.3, scale=lam2 * 1.3)
                 for p in h.periods if p.y1)
    assert crm.loglik(h, params) == pytest.approx(indep, abs=1e-3)


@given(params=param_sets(), hs=st.lists(histories(), min_size=1, max_size=5))
def test_panel_loglik_matches_scalar_path(params, hs):
    hs = [PolicyHistory(f"{i}", h.periods) for i, h in enumerate(hs)]
    if not any(len(h) for h in hs):
        return
    panel = make_panel(hs)
    vec = crm.loglik_panel(panel, params)
    scalar = [crm.loglik(h, params) for h in hs]
    assert vec == pytest.approx(scalar, rel=1e-10, abs=1e-10)


def test_gap_is_transition_only():
    params = base_params()
    h = history([1, 2], [10.0, 30.0], years=[1, 3])
    s = crm.update(params.initial_state(), params, (1.0,), Observation(1, 10.0))
    s = crm.advance(s, params)
    s = crm.update(s, params, (1.0,), Observation(2, 30.0))
    f = crm.filter_history(h, params)
    assert (f.freq.alpha, f.freq.beta, f.sev.alpha, f.sev.beta) == pytest.approx(
        (s.freq.alpha, s.freq.beta, s.sev.alpha, s.sev.beta), rel=1e-15)


# ---------------------------------------------------------------------------
# Laplace term and premium
# ---------------------------------------------------------------------------


@given(a=st.floats(0.2, 8.0), b=st.floats(0.2, 8.0), q=st.floats(0.3, 0.99),
       lam=st.floats(0.05, 3.0), frac=st.floats(-3.0, 0.9))
def test_laplace_term_matches_series(a, b, q, lam, frac):
    state = CrmState(GammaState(a, b), InvGammaState(3.0, 2.0))
    bound = float(crm.eta_bound(state, q, lam))
    eta = frac * bound
    law = dist.NegBinomial(lam * a / b, q * a)
    y = np.arange(0, 200_000, dtype=float)
    series = math.fsum(np.exp(eta * y + law.logpmf(y)) * y)
    assert float(crm.laplace_count_term(state, q, lam, eta)) == pytest.approx(series, rel=1e-9)


@given(a=st.floats(0.2, 8.0), b=st.floats(0.2, 8.0), q=st.floats(0.3, 0.99), lam=st.floats(0.05, 3))
def test_laplace_term_at_zero_is_forecast_mean(a, b, q, lam):
    state = CrmState(GammaState(a, b), InvGammaState(3.0, 2.0))
    assert float(crm.laplace_count_term(state, q, lam, 0.0)) == pytest.approx(lam * a / b,
                                                                               rel=1e-12)


def test_laplace_bound():
    state = START
    bound = float(crm.eta_bound(state, 0.8, 0.2))
    assert bound == pytest.approx(math.log(5.0))
    for eta in (bound + 1e-9, bound + 1.0):
        with pytest.raises(ExistenceError) as info:
            crm.laplace_count_term(state, 0.8, 0.2, eta)
        assert info.value.bound == pytest.approx(bound)
    assert np.isfinite(crm.laplace_count_term(state, 0.8, 0.2, bound - 1e-6))


def test_prior_premium():
    pr = crm.premium(START, base_params(), (1.0,))
    assert pr.sev_mean == pytest.approx(3000.0, rel=1e-14)
    assert pr.freq_mean == pytest.approx(0.2)
    assert (pr.credibility_freq, pr.credibility_sev) == pytest.approx((1.0, 1.0))


def test_frequency_recency_factors():
    h = history([0, 0, 0, 1])
    assert crm.filter_history(h, base_params()).credibility_freq == pytest.approx(1.4096, abs=5e-5)
    static = CrmParams(1.0, 1.0, 1.0, 1.0, 3.0, 2.0, zeta1=(LOG02,), zeta2=(LOG15K,), psi=1.5)
    assert crm.filter_history(h, static).credibility_freq == pytest.approx(2 / 1.8, abs=1e-12)


def test_premium_dependence_structure():
    params = base_params(eta=-0.3)
    h = history([1, 0, 2], [10000.0, 0.0, 40000.0])
    base = crm.premium(crm.filter_history(h, params), params, (1.0,))
    h2 = history([1, 0, 2], [10000.0, 0.0, 50000.0])
    p2 = crm.premium(crm.filter_history(h2, params), params, (1.0,))
    assert p2.freq_mean == base.freq_mean and p2.sev_mean != base.sev_mean
    h3 = history([1, 0, 3], [10000.0, 0.0, 40000.0])
    p3 = crm.premium(crm.filter_history(h3, params), params, (1.0,))
    assert p3.freq_mean != base.freq_mean and p3.credibility_sev != base.credibility_sev


@given(params=param_sets(), h=histories(gaps=True), x2=st.sampled_from([0.0, 1.0]))
def test_premium_weights_reconstruct_premium(params, h, x2):
    x_next = (1.0, x2)
    lam1_next, lam2s_next = (float(v) for v in params.lambdas(x_next))
    state = crm.filter_history(h, params)
    om1, om2 = crm.premium_weights(h, params)
    lam1 = np.array([float(params.lambdas(p.x)[0]) for p in h.periods])
    lam2 = np.array([float(params.lambdas(p.x)[1]) * math.exp(params.eta * p.y1)
                     for p in h.periods])
    y1 = np.array([p.y1 for p in h.periods], dtype=float)
    y2 = np.array([p.y2 for p in h.periods])
    f_lin = lam1_next * (om1[0] + math.fsum(om1[1:] * y1 / lam1))
    s_lin = om2[0] + math.fsum(om2[1:] * y2 / lam2)
    assert f_lin == pytest.approx(lam1_next * state.credibility_freq, rel=1e-12)
    assert s_lin == pytest.approx(state.credibility_sev, rel=1e-12)
    pr = crm.premium(state, params, x_next)
    lap = float(crm.laplace_count_term(state, params.q1, lam1_next, params.eta))
    assert lam2s_next * lap * s_lin == pytest.approx(float(pr.sev_mean), rel=1e-12)


def test_frequency_weights_coincide_with_count_model():
    params = base_params()
    h = history([0, 1, 0, 2])
    om1, _ = crm.premium_weights(h, params)
    b0, b = ssm_freq.forecast_weights(ssm_freq.HfParams.constant(0.8, 1.0, 1.0, 0.2, 4), 5)
    assert om1 == pytest.approx(np.concatenate([[b0], b]), rel=1e-14)


@given(params=param_sets(variants=(Variant.PLAIN, Variant.EWMA_SEVERITY)),
       claims=st.lists(st.integers(0, 4), min_size=2, max_size=8))
def test_equal_lambda_weight_ordering(params, claims):
    h = history(claims, [3.0 * c for c in claims], x=(1.0, 0.0))
    om1, om2 = crm.premium_weights(h, params)
    assert np.all(np.diff(om1[1:]) > 0)
    assert np.all(np.diff(om2[1:]) > 0)


@given(params=param_sets(variants=(Variant.PLAIN,)), h=histories(gaps=False))
def test_plain_shape_above_two_is_absorbing(params, h):
    for kind, st_, _ in crm._walk(h, params):
        assert st_.sev.alpha > 2


# ---------------------------------------------------------------------------
# three-part variants
# ---------------------------------------------------------------------------


@given(params=param_sets(variants=(Variant.THREE_PART, Variant.EWMA_THREE_PART)), h=histories())
def test_three_part_freezes_on_zero_claims(params, h):
    state = params.initial_state()
    for per in h.periods:
        new = crm.update(state, params, per.x, Observation(per.y1, per.y2))
        if per.y1 == 0:
            assert new.sev.alpha == state.sev.alpha and new.sev.beta == state.sev.beta
        state = new


@given(params=param_sets(variants=(Variant.PLAIN, Variant.EWMA_SEVERITY)),
       claims=st.lists(st.integers(1, 4), max_size=6))
def test_three_part_equals_plain_on_claim_only_histories(params, claims):
    three = params.replace(variant=Variant.THREE_PART if params.variant is Variant.PLAIN
                           else Variant.EWMA_THREE_PART)
    h = history(claims, [2.0 * c for c in claims], x=(1.0, 1.0))
    a, b = crm.filter_history(h, params), crm.filter_history(h, three)
    assert (a.sev.alpha, a.sev.beta, a.freq.alpha) == (b.sev.alpha, b.sev.beta, b.freq.alpha)
    assert crm.loglik(h, params) == crm.loglik(h, three)


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


def test_simulate_moments():
    params = CrmParams(0.8, 0.8, 2.0, 1.5, 3.5, 2.0, zeta1=(0.2,), zeta2=(0.5,), psi=1.2)
    n = 200_000
    tr = crm.simulate(params, np.ones((1, 1)), np.random.default_rng(3), size=n)
    y1, y2 = tr.y1[:, 0], tr.y2[:, 0]
    lam1, lam2 = math.exp(0.2), math.exp(0.5)
    se = math.sqrt(y1.var() / n)
    assert abs(y1.mean() - lam1 * 2.0 / 1.5) < 4 * se
    for k in (1, 2):
        sel = y2[y1 == k]
        target = k * lam2 * 2.0 / 2.5
        assert abs(sel.mean() - target) < 4 * sel.std() / math.sqrt(sel.size)
    assert np.all((y1 == 0) == (y2 == 0))


def test_simulate_determinism_and_shapes():
    params = base_params()
    a = crm.simulate(params, np.ones((4, 1)), np.random.default_rng(9), size=5)
    b = crm.simulate(params, np.ones((4, 1)), np.random.default_rng(9), size=5)
    assert a.y1.shape == (5, 4)
    for u, v in zip(a, b):
        assert np.array_equal(u, v)
    one = crm.simulate(params, np.ones((4, 1)), np.random.default_rng(9))
    assert one.y1.shape == (4,)


def test_simulate_three_part_keeps_theta_on_zero_claims():
    params = base_params(variant=Variant.THREE_PART, zeta1=(-3.0,))
    tr = crm.simulate(params, np.ones((6, 1)), np.random.default_rng(1), size=1000)
    zero = tr.y1[:, 1:] == 0
    assert np.array_equal(tr.theta2[:, 1:][zero], tr.theta2[:, :-1][zero])


@given(ratio=st.floats(0.05, 20.0).filter(lambda r: abs(r - 1) > 1e-3), q=st.floats(0.3, 0.99),
       variant=st.sampled_from([Variant.PLAIN, Variant.EWMA_SEVERITY]))
def test_severity_factor_recency_follows_sign_of_claim_surprise(ratio, q, variant):
    # one claim in year k of four: the more recent it is, the further the factor moves from one
    params = CrmParams(q, q, 1.0, 1.0, 3.0, 2.0, zeta1=(LOG02,), zeta2=(LOG15K,), psi=1.5,
                       variant=variant)
    factors = []
    for k in range(1, 5):
        h = history([int(y == k) for y in range(1, 5)],
                    [15000.0 * ratio if y == k else 0.0 for y in range(1, 5)])
        factors.append(float(crm.filter_history(h, params).credibility_sev))
    steps = np.diff(factors)
    assert np.all(steps > 0) if ratio > 1 else np.all(steps < 0)
