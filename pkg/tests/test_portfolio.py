import math
import warnings

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dyncrm import crm, fit, glm
from dyncrm import portfolio as pf
from dyncrm.errors import DataError, ExistenceError
from dyncrm.fit import Benchmark, FitResult
from dyncrm.records import Period, PolicyHistory

SCHEMA = pf.Schema(("x1",), True, 2003)
HEADER = "policy_id,year,x1,claim_count,total_loss\n"


def write(tmp_path, body, name="data.csv"):
    path = tmp_path / name
    path.write_text(HEADER + body, encoding="utf-8")
    return path


def proposed_fit(**kw):
    d = dict(benchmark=Benchmark.PROPOSED, variant=crm.Variant.PLAIN, zeta1=(math.log(0.2), 0.0),
             zeta2=(math.log(15000.0), 0.0), eta=0.0, psi=1.5, q1=0.8, q2=0.8, alpha0_1=1.0,
             alpha0_2=3.0, loglik=math.nan, converged=True)
    d.update(kw)
    return FitResult(**d)


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------


def test_ingest_valid(tmp_path):
    port = pf.ingest(write(tmp_path, "A,2001,0.5,1,100\nA,2002,0.5,0,0\n"), SCHEMA)
    assert len(port) == 1 and len(port.histories[0]) == 2
    assert port.histories[0].periods[0] == Period(2001, (1.0, 0.5), 1, 100.0)
    assert port.design_names == ("intercept", "x1")


def test_ingest_rejects_with_line_numbers(tmp_path):
    body = "A,2001,0.5,0,100\nA,2002,abc,1,5\nB,2001,1,1,5\nB,2001,1,0,0\nC,2001,,0,0\n"
    with pytest.raises(DataError) as info:
        pf.ingest(write(tmp_path, body), SCHEMA)
    lines = [ln for ln, _ in info.value.problems]
    assert lines == [2, 3, 5, 6]


@pytest.mark.parametrize("body", ["A,2001,0.5,1.5,10\n", "A,2001,0.5,1,-3\n", "A,2001,0.5,2,0\n",
                                  "A,2001,0.5,1\n", "A,2001,inf,0,0\n"])
def test_ingest_row_errors(tmp_path, body):
    with pytest.raises(DataError):
        pf.ingest(write(tmp_path, body), SCHEMA)


def test_ingest_header_and_missing_file(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("policy_id,year,claim_count,total_loss\nA,2001,0,0\n", encoding="utf-8")
    with pytest.raises(DataError):
        pf.ingest(bad, SCHEMA)
    with pytest.raises(DataError):
        pf.ingest(tmp_path / "nope.csv", SCHEMA)


def test_ingest_resorts_with_warning(tmp_path):
    path = write(tmp_path, "A,2002,0.5,0,0\nA,2001,0.5,1,100\n")
    with pytest.warns(UserWarning):
        port = pf.ingest(path, SCHEMA)
    assert list(port.histories[0].years) == [2001, 2002]


def test_write_ingest_round_trip(tmp_path):
    params = crm.CrmParams.unit_mean(0.8, 0.8, 1.0, 3.0, zeta1=(0.0, 0.2, 0.1),
                                     zeta2=(1.0, 0.3, -0.2), eta=-0.3)
    port = pf.synthetic_portfolio(params, 30, range(2001, 2004), seed=4)
    path = tmp_path / "p.csv"
    pf.write_portfolio(path, port, pf.SYNTHETIC_SCHEMA)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        back = pf.ingest(path, pf.SYNTHETIC_SCHEMA)
    assert back == port


# ---------------------------------------------------------------------------
# premiums
# ---------------------------------------------------------------------------


def test_fresh_policy_gets_prior_premium():
    h = PolicyHistory("A", (Period(2001, (1.0, 0.0), 0, 0.0),))
    row = pf.policy_premium(h, proposed_fit(), 2001, (1.0, 0.0))
    assert row.multiplier == pytest.approx(1.0, abs=1e-15)
    assert row.premium == pytest.approx(0.2 * 15000.0, rel=1e-14)


def test_cap():
    assert pf.capped(310.0, 3.1) == pytest.approx((250.0, 2.5))
    assert pf.capped(90.0, 0.9) == (90.0, 0.9)
    # many recent claims push the multiplier above the cap
    h = PolicyHistory("A", tuple(Period(2000 + k, (1.0, 0.0), 3, 90000.0) for k in range(1, 5)))
    row = pf.policy_premium(h, proposed_fit(), 2005, (1.0, 0.0))
    assert row.multiplier_uncapped > 2.5 and row.multiplier == 2.5
    assert row.premium == pytest.approx(row.sev_mean * 2.5 / row.multiplier_uncapped, rel=1e-15)


@given(premium=st.floats(0.0, 1e6), m=st.floats(0.01, 20.0))
def test_cap_never_increases(premium, m):
    p, mc = pf.capped(premium, m)
    assert p <= premium and mc <= min(m, 2.5)


@given(lam1=st.floats(0.01, 5.0), lam2=st.floats(0.01, 1e5))
def test_dglm_equals_naive_at_zero_eta(lam1, lam2):
    assert pf.dglm_premium(lam1, lam2, 0.0) == pf.naive_premium(lam1, lam2)


def test_existence_error_names_policy():
    h = PolicyHistory("Z9", (Period(2001, (1.0, 0.0), 0, 0.0), Period(2002, (1.0, 0.0), 0, 0.0)))
    port = pf.Portfolio((h,), ("intercept", "x1"))
    with pytest.raises(ExistenceError) as info:
        pf.predict_portfolio(port, proposed_fit(eta=5.0), 2002)
    assert "Z9" in str(info.value) and info.value.bound > 0


def test_streaming_matches_batch():
    params = crm.CrmParams.unit_mean(0.7, 0.8, 1.2, 3.5, zeta1=(0.0, 0.2, 0.1),
                                     zeta2=(1.0, 0.3, -0.2), eta=-0.2)
    port = pf.synthetic_portfolio(params, 20, range(2001, 2006), seed=8)
    res = proposed_fit(zeta1=params.zeta1, zeta2=params.zeta2, eta=-0.2, psi=1.0, q1=0.7,
                       alpha0_1=1.2, alpha0_2=3.5)
    batch = pf.predict_portfolio(port, res, 2005)
    for h, row in zip(port.histories, batch):
        state = params.initial_state()
        for per in h.before(2005).periods:
            state = crm.update(state, params, per.x, crm.Observation(per.y1, per.y2))
        pr = crm.premium(state, params, h.at(2005).x)
        assert float(pr.sev_mean) == pytest.approx(row.sev_mean, rel=1e-14)
    assert pf.predict_portfolio(port, res, 2005, threads=4) == batch


def test_premium_file_round_trip(tmp_path):
    rows = [pf.PremiumRow("A", 2003, 0.1, 1234.5678901234567, 1.1, 1.1, 1 / 3)]
    pf.write_premiums(tmp_path / "p.csv", rows)
    assert pf.read_premiums(tmp_path / "p.csv") == rows


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


def one_year_portfolio(losses):
    hs = tuple(PolicyHistory(f"P{i}", (Period(2003, (1.0, 0.0), 1 if v else 0, v),))
               for i, v in enumerate(losses))
    return pf.Portfolio(hs, ("intercept", "x1"))


def rows_for(losses):
    return [pf.PremiumRow(f"P{i}", 2003, 0, 0, 1, 1, v) for i, v in enumerate(losses)]


def test_validate_examples():
    rep = pf.validate(one_year_portfolio([5.0, 0.0, 7.0]), rows_for([5.0, 0.0, 7.0]), 2003)
    assert rep.models["model"].rmse == 0 and rep.models["model"].mae == 0
    rep = pf.validate(one_year_portfolio([100.0]), {"m": rows_for([0.0])}, 2003)
    assert (rep.models["m"].rmse, rep.models["m"].mae) == (100.0, 100.0)
    assert rep.n == 1 and rep.actual_mean == 100.0
    with pytest.raises(DataError):
        pf.validate(one_year_portfolio([1.0]), rows_for([1.0]), 2004)
    with pytest.raises(DataError):
        pf.validate(one_year_portfolio([1.0, 2.0]), rows_for([1.0]), 2003)


@given(st.lists(st.tuples(st.floats(0, 1e4), st.floats(0, 1e4)), min_size=1, max_size=20),
       st.randoms())
def test_validate_permutation_invariant(pairs, rnd):
    act, pred = [a for a, _ in pairs], [p for _, p in pairs]
    rep = pf.validate(one_year_portfolio(act), rows_for(pred), 2003)
    idx = list(range(len(pairs)))
    rnd.shuffle(idx)
    port = one_year_portfolio(act)
    shuffled = pf.Portfolio(tuple(port.histories[i] for i in idx), port.design_names)
    rows = rows_for(pred)
    rep2 = pf.validate(shuffled, [rows[i] for i in idx], 2003)
    assert rep2 == rep
    assert rep.models["model"].rmse >= 0 and rep.models["model"].mae >= 0


def test_proposed_beats_naive_on_dynamic_data():
    truth = crm.CrmParams.unit_mean(0.8, 0.8, 1.0, 3.0, zeta1=(-0.5, 0.2, 0.1),
                                    zeta2=(2.0, 0.3, -0.2), eta=-0.3, psi=1.0)
    wins = 0
    for seed in range(20):
        port = pf.synthetic_portfolio(truth, 200, range(2001, 2006), seed=1000 + seed)
        train = port.before(2005)
        X, y1, y2 = train.stacked()
        f1 = glm.fit_poisson(X, y1)
        f2 = glm.fit_gamma_severity(X, y1, y2)
        f20 = glm.fit_gamma_severity(X, y1, y2, include_count=False)
        prop = fit.fit_dependence(train.panel(), f1, f2, "proposed",
                                  fit.FitConfig(estimate_psi=True))
        naive = fit.fit_dependence(train.panel(), f1, f20, "naive")
        rep = pf.validate(port, {"p": pf.predict_portfolio(port, prop, 2005),
                                 "n": pf.predict_portfolio(port, naive, 2005)}, 2005)
        wins += rep.models["p"].rmse <= rep.models["n"].rmse
    assert wins > 10
