"""Portfolio ingestion, a posteriori premiums and hold-out validation."""

from __future__ import annotations

import csv
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import crm
from .errors import DataError, DomainError, ExistenceError
from .fit import Benchmark, FitResult
from .records import Panel, Period, PolicyHistory, make_panel

CAP = 2.5
INTERCEPT = "intercept"
PREMIUM_FIELDS = ("policy_id", "year", "freq_mean", "sev_mean", "multiplier_uncapped",
                  "multiplier", "premium")


@dataclass(frozen=True)
class Schema:
    """Column layout of a portfolio CSV and the hold-out year."""

    covariates: tuple
    intercept: bool = True
    holdout_year: int | None = None

    @classmethod
    def from_dict(cls, d):
        if "covariates" not in d:
            raise DataError("schema needs a 'covariates' list")
        hy = d.get("holdout_year")
        return cls(tuple(d["covariates"]), bool(d.get("intercept", True)),
                   None if hy is None else int(hy))

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read schema {path}: {exc}") from exc

    def to_dict(self):
        return {"covariates": list(self.covariates), "intercept": self.intercept,
                "holdout_year": self.holdout_year}

    @property
    def design_names(self):
        return ((INTERCEPT,) if self.intercept else ()) + tuple(self.covariates)

    @property
    def header(self):
        return ("policy_id", "year") + tuple(self.covariates) + ("claim_count", "total_loss")


@dataclass(frozen=True)
class Portfolio:
    histories: tuple
    design_names: tuple

    def __len__(self):
        return len(self.histories)

    @property
    def years(self):
        return sorted({y for h in self.histories for y in h.years})

    def before(self, year) -> "Portfolio":
        """Records strictly earlier than ``year``; empty histories are dropped."""
        hs = tuple(h.before(year) for h in self.histories)
        return Portfolio(tuple(h for h in hs if len(h)), self.design_names)

    def panel(self) -> Panel:
        return make_panel(self.histories)

    def stacked(self):
        """``(X, y1, y2)`` over all observed periods, for the GLM step."""
        rows = [p for h in self.histories for p in h.periods]
        X = np.array([p.x for p in rows], dtype=float).reshape(len(rows), len(self.design_names))
        return X, np.array([p.y1 for p in rows], dtype=float), np.array([p.y2 for p in rows])


def _parse_number(text, kind, line, col, problems):
    try:
        v = kind(text)
    except ValueError:
        problems.append((line, f"column {col!r}: malformed number {text!r}"))
        return None
    if kind is float and not math.isfinite(v):
        problems.append((line, f"column {col!r}: non-finite value {text!r}"))
        return None
    return v


def _parse_count(text, line, problems):
    v = _parse_number(text, float, line, "claim_count", problems)
    if v is None:
        return None
    if v < 0 or v != int(v):
        problems.append((line, f"claim_count must be a non-negative integer, got {text!r}"))
        return None
    return int(v)


def ingest(path, schema: Schema) -> Portfolio:
    """Read and validate a portfolio CSV.

    Every invalid row is reported with its line number in one
    :class:`~dyncrm.errors.DataError`.  Years out of order within a policy are
    re-sorted with a warning; a repeated ``(policy_id, year)`` is an error.
    """
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path} is empty")
        header = tuple(h.strip() for h in header)
        if header != schema.header:
            raise DataError(f"header {list(header)} does not match schema {list(schema.header)}",
                            [(1, "header mismatch")])
        problems = []
        records: dict[str, dict[int, Period]] = {}
        order = []
        unsorted = set()
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                problems.append((line, f"expected {len(header)} fields, got {len(row)}"))
                continue
            pid = row[0].strip()
            if not pid:
                problems.append((line, "empty policy_id"))
                continue
            year = _parse_number(row[1], int, line, "year", problems)
            covs = []
            for col, text in zip(schema.covariates, row[2:-2]):
                if not text.strip():
                    problems.append((line, f"missing covariate {col!r}"))
                    covs.append(None)
                else:
                    covs.append(_parse_number(text, float, line, col, problems))
            y1 = _parse_count(row[-2], line, problems)
            y2 = _parse_number(row[-1], float, line, "total_loss", problems)
            if None in covs or year is None or y1 is None or y2 is None:
                continue
            if y2 < 0:
                problems.append((line, f"negative total_loss {y2!r}"))
                continue
            if y1 == 0 and y2 != 0:
                problems.append((line, f"total_loss {y2!r} with zero claims"))
                continue
            if y1 > 0 and y2 == 0:
                problems.append((line, "claims reported with zero total_loss"))
                continue
            per_policy = records.setdefault(pid, {})
            if pid not in order:
                order.append(pid)
            if year in per_policy:
                problems.append((line, f"duplicate record for policy {pid!r}, year {year}"))
                continue
            if per_policy and year < max(per_policy):
                unsorted.add(pid)
            x = ((1.0,) if schema.intercept else ()) + tuple(covs)
            per_policy[year] = Period(year, x, y1, y2)
    if problems:
        raise DataError(f"{path}: {len(problems)} invalid row(s)", problems)
    if unsorted:
        warnings.warn(f"{len(unsorted)} policy record(s) were not in year order and were re-sorted",
                      UserWarning, stacklevel=2)
    histories = tuple(
        PolicyHistory(pid, tuple(records[pid][y] for y in sorted(records[pid]))) for pid in order
    )
    if not histories:
        raise DataError(f"{path} has no data rows")
    return Portfolio(histories, schema.design_names)


def write_portfolio(path, portfolio: Portfolio, schema: Schema):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(schema.header)
        skip = 1 if schema.intercept else 0
        for h in portfolio.histories:
            for p in h.periods:
                w.writerow([h.policy_id, p.year, *(fmt(v) for v in p.x[skip:]), p.y1, fmt(p.y2)])


def fmt(v) -> str:
    """Round-trip float formatting (17 significant digits)."""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


# ---------------------------------------------------------------------------
# premiums
# ---------------------------------------------------------------------------


class PremiumRow(NamedTuple):
    policy_id: str
    year: int
    freq_mean: float
    sev_mean: float
    multiplier_uncapped: float
    multiplier: float
    premium: float


def naive_premium(lam1, lam2_star):
    return lam1 * lam2_star


def dglm_premium(lam1, lam2_star, eta):
    """Expected aggregate loss with a Poisson count and count-dependent severity."""
    return lam1 * lam2_star * np.exp(lam1 * np.expm1(eta) + eta)


def capped(premium_uncapped, multiplier, cap=CAP):
    """Scale a premium so that its credibility multiplier does not exceed ``cap``."""
    if multiplier <= cap:
        return premium_uncapped, multiplier
    return premium_uncapped * (cap / multiplier), cap


def policy_premium(history: PolicyHistory, fit: FitResult, target_year: int, x) -> PremiumRow:
    """Premium of one policy for ``target_year`` given covariates ``x``."""
    x = np.asarray(x, dtype=float)
    if fit.is_limit:
        lam1 = float(np.exp(x @ np.asarray(fit.zeta1)))
        lam2 = float(np.exp(x @ np.asarray(fit.zeta2)))
        if fit.benchmark is Benchmark.NAIVE:
            prem = naive_premium(lam1, lam2)
        else:
            prem = float(dglm_premium(lam1, lam2, fit.eta))
        return PremiumRow(history.policy_id, target_year, lam1, prem, 1.0, 1.0, prem)
    params = fit.params()
    state = crm.filter_history(history.before(target_year), params, until_year=target_year)
    pr = crm.premium(state, params, x)
    m = float(pr.multiplier)
    prem, m_cap = capped(float(pr.sev_mean), m)
    return PremiumRow(history.policy_id, target_year, float(pr.freq_mean), float(pr.sev_mean),
                      m, m_cap, prem)


def predict_portfolio(portfolio: Portfolio, fit: FitResult, target_year: int,
                      threads: int = 1) -> list[PremiumRow]:
    """Premiums for every policy observed in ``target_year``.

    The filter runs over all earlier records.  ``sev_mean`` is the uncapped
    expected aggregate loss; ``premium`` is scaled so that the combined
    credibility multiplier is at most 2.5.
    """
    jobs = [(h, h.at(target_year)) for h in portfolio.histories]
    jobs = [(h, per.x) for h, per in jobs if per is not None]
    if not jobs:
        raise DataError(f"no policy has a record in {target_year}")

    def one(job):
        h, x = job
        try:
            return policy_premium(h, fit, target_year, x)
        except ExistenceError as exc:
            raise ExistenceError(f"policy {h.policy_id}: {exc}", bound=exc.bound) from exc

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(one, jobs))
    return [one(j) for j in jobs]


def write_premiums(path, rows: Sequence[PremiumRow]):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREMIUM_FIELDS)
        for r in rows:
            w.writerow([r.policy_id, r.year, *(fmt(v) for v in r[2:])])


def read_premiums(path) -> list[PremiumRow]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != PREMIUM_FIELDS:
            raise DataError(f"{path} is not a premiums file")
        return [
            PremiumRow(r["policy_id"], int(r["year"]),
                       *(float(r[k]) for k in PREMIUM_FIELDS[2:]))
            for r in reader
        ]


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelScore:
    rmse: float
    mae: float
    predicted_mean: float


@dataclass(frozen=True)
class ValidationReport:
    target_year: int
    n: int
    actual_mean: float
    models: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "target_year": self.target_year,
            "n": self.n,
            "actual_mean": self.actual_mean,
            "models": {k: vars(v) for k, v in self.models.items()},
        }


def validate(portfolio: Portfolio, premiums, target_year: int) -> ValidationReport:
    """Out-of-sample error of one or several premium sets.

    ``premiums`` maps a model name to its :class:`PremiumRow` list (a bare list
    is scored under the name ``"model"``).
    """
    if not isinstance(premiums, dict):
        premiums = {"model": premiums}
    actual = {}
    for h in portfolio.histories:
        per = h.at(target_year)
        if per is not None:
            actual[h.policy_id] = per.y2
    if not actual:
        raise DataError(f"no hold-out records for {target_year}")
    ids = sorted(actual)
    act = np.array([actual[i] for i in ids])
    models = {}
    for name, rows in premiums.items():
        pred_by_id = {r.policy_id: r.premium for r in rows if r.year == target_year}
        missing = [i for i in ids if i not in pred_by_id]
        if missing:
            raise DataError(f"model {name!r} has no premium for {len(missing)} hold-out policies")
        pred = np.array([pred_by_id[i] for i in ids])
        err = act - pred
        models[name] = ModelScore(
            math.sqrt(math.fsum(err * err) / len(ids)),
            math.fsum(np.abs(err)) / len(ids),
            math.fsum(pred) / len(ids),
        )
    return ValidationReport(int(target_year), len(ids), math.fsum(act) / len(ids), models)


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

SYNTHETIC_SCHEMA = Schema(("x1", "x2"), True, None)


def synthetic_portfolio(params: crm.CrmParams, n_policies: int, years: Sequence[int],
                        seed: int, schema: Schema = SYNTHETIC_SCHEMA) -> Portfolio:
    """Simulate a portfolio from the model with generated covariates.

    Covariates are drawn per policy and held fixed over time: ``x1`` is a 0/1
    indicator with probability 0.5, ``x2`` standard normal.  Schemas with other
    covariates draw every extra column standard normal.
    """
    years = list(years)
    ss_cov, ss_sim = np.random.SeedSequence(seed).spawn(2)
    rng_cov = np.random.default_rng(ss_cov)
    k = len(schema.covariates)
    cov = rng_cov.standard_normal((n_policies, k))
    if k:
        cov[:, 0] = rng_cov.integers(0, 2, n_policies)
    x = np.column_stack([np.ones(n_policies), cov]) if schema.intercept else cov
    if x.shape[1] != len(params.zeta1) or x.shape[1] != len(params.zeta2):
        raise DomainError("coefficient length does not match the synthetic design")
    x_path = np.repeat(x[:, None, :], len(years), axis=1)
    traj = crm.simulate(params, x_path, np.random.default_rng(ss_sim), size=n_policies)
    width = len(str(n_policies))
    histories = tuple(
        PolicyHistory(
            f"P{i + 1:0{width}d}",
            tuple(Period(y, tuple(x[i]), int(traj.y1[i, t]), float(traj.y2[i, t]))
                  for t, y in enumerate(years)),
        )
        for i in range(n_policies)
    )
    return Portfolio(histories, schema.design_names)
