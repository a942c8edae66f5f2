"""Second-step maximum likelihood for the dependence parameters.

With the regression coefficients, ``eta`` and ``psi`` held at their GLM
values, the joint closed-form likelihood is maximised over the free subset of
``(q1, q2, alpha0_1, alpha0_2)``.  The prior scales are tied to the shapes,
``beta0_1 = alpha0_1`` and ``beta0_2 = alpha0_2 - 1``, so both random effects
start with mean one.

The Pearson dispersion of the gamma GLM absorbs the severity random effect
and overstates ``psi`` when that effect is present.  ``FitConfig.estimate_psi``
frees ``psi`` in this step as well; by default it stays at the GLM value.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special, stats

from . import crm
from .errors import ConvergenceError, DomainError, EstimationError, InvariantError
from .glm import GlmFit
from .records import OBSERVED, Panel


class Benchmark(str, enum.Enum):
    NAIVE = "naive"
    DGLM = "dglm"
    STATIC = "static"
    PROPOSED = "proposed"


@dataclass(frozen=True)
class BenchmarkSpec:
    name: Benchmark
    fixed: dict
    free: tuple  # names of the optimised parameters
    uses_eta: bool

    @classmethod
    def of(cls, name) -> "BenchmarkSpec":
        name = Benchmark(name)
        if name is Benchmark.NAIVE:
            return cls(name, {"q1": 1.0, "q2": 1.0, "alpha0": math.inf, "eta": 0.0}, (), False)
        if name is Benchmark.DGLM:
            return cls(name, {"q1": 1.0, "q2": 1.0, "alpha0": math.inf}, (), True)
        if name is Benchmark.STATIC:
            return cls(name, {"q1": 1.0, "q2": 1.0}, ("alpha0_1", "alpha0_2"), True)
        return cls(name, {}, ("q1", "q2", "alpha0_1", "alpha0_2"), True)

    @property
    def is_limit(self) -> bool:
        """True when the random effects are degenerate (infinite prior shape)."""
        return not self.free


@dataclass(frozen=True)
class FitConfig:
    max_iter: int = 4000
    xatol: float = 1e-8
    fatol: float = 1e-10
    gtol: float = 1e-6
    grad_tol: float = 1e-5
    starts: tuple = ({"q1": 0.8, "q2": 0.8, "alpha0_1": 1.5, "alpha0_2": 4.0},)
    estimate_psi: bool = False
    threads: int = 1

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        if "starts" in d:
            d["starts"] = tuple(dict(s) for s in d["starts"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise DomainError(f"unknown optimizer settings: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return {
            "max_iter": self.max_iter,
            "xatol": self.xatol,
            "fatol": self.fatol,
            "gtol": self.gtol,
            "grad_tol": self.grad_tol,
            "starts": [dict(s) for s in self.starts],
            "estimate_psi": self.estimate_psi,
            "threads": self.threads,
        }


@dataclass(frozen=True)
class FitResult:
    benchmark: Benchmark
    variant: crm.Variant
    zeta1: tuple
    zeta2: tuple
    eta: float
    psi: float
    q1: float
    q2: float
    alpha0_1: float
    alpha0_2: float
    loglik: float
    converged: bool
    n_eval: int = 0
    max_grad: float = 0.0
    boundary: tuple = ()
    messages: tuple = field(default_factory=tuple)

    @property
    def is_limit(self):
        return math.isinf(self.alpha0_1)

    def to_dict(self):
        # JSON has no infinity: the infinite prior shapes are written as null
        finite = lambda v: None if math.isinf(v) else float(v)  # noqa: E731
        return {
            "benchmark": self.benchmark.value,
            "variant": self.variant.value,
            "zeta1": list(self.zeta1),
            "zeta2": list(self.zeta2),
            "eta": float(self.eta),
            "psi": float(self.psi),
            "q1": float(self.q1),
            "q2": float(self.q2),
            "alpha0_1": finite(self.alpha0_1),
            "alpha0_2": finite(self.alpha0_2),
            "loglik": float(self.loglik),
            "converged": bool(self.converged),
            "n_eval": int(self.n_eval),
            "max_grad": float(self.max_grad),
            "boundary": list(self.boundary),
            "messages": list(self.messages),
        }

    @classmethod
    def from_dict(cls, d):
        """Read a fitted-parameter record; missing fit diagnostics take defaults."""
        inf = lambda v: math.inf if v is None else float(v)  # noqa: E731
        try:
            return cls(
                Benchmark(d.get("benchmark", "proposed")),
                crm.Variant(d.get("variant", "plain")),
                tuple(float(v) for v in d["zeta1"]),
                tuple(float(v) for v in d["zeta2"]),
                float(d.get("eta", 0.0)),
                float(d.get("psi", 1.0)),
                float(d.get("q1", 1.0)),
                float(d.get("q2", 1.0)),
                inf(d.get("alpha0_1")),
                inf(d.get("alpha0_2")),
                float(d.get("loglik", math.nan)),
                bool(d.get("converged", True)),
                int(d.get("n_eval", 0)),
                float(d.get("max_grad", 0.0)),
                tuple(d.get("boundary", ())),
                tuple(d.get("messages", ())),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DomainError(f"invalid parameter record: {exc}") from exc

    def params(self) -> crm.CrmParams:
        """Model parameters; the infinite-shape benchmarks have none."""
        if self.is_limit:
            raise DomainError(f"{self.benchmark.value} benchmark has no finite prior")
        return crm.CrmParams(
            self.q1, self.q2, self.alpha0_1, self.alpha0_1, self.alpha0_2, self.alpha0_2 - 1.0,
            zeta1=self.zeta1, zeta2=self.zeta2, eta=self.eta, psi=self.psi, variant=self.variant,
        )


def limit_loglik_panel(panel: Panel, zeta1, zeta2, eta, psi) -> np.ndarray:
    """Per-policy log-likelihood with no random effects: Poisson counts, gamma losses."""
    x = panel.x
    lam1 = np.exp(x @ np.asarray(zeta1, dtype=float))
    lam2 = np.exp(x @ np.asarray(zeta2, dtype=float) + eta * panel.y1)
    y1, y2 = panel.y1, panel.y2
    obs = panel.status == OBSERVED
    ll = stats.poisson.logpmf(y1, lam1)
    claim = y1 > 0
    shape = np.where(claim, y1 / psi, 1.0)
    sev = stats.gamma.logpdf(np.where(claim, y2, 1.0), shape, scale=lam2 * psi)
    ll = ll + np.where(claim, sev, 0.0)
    return np.where(obs, ll, 0.0).sum(axis=1)


def _chunks(panel: Panel, k: int):
    n = panel.n_policies
    bounds = np.linspace(0, n, min(k, n) + 1).astype(int)
    for a, b in zip(bounds[:-1], bounds[1:]):
        yield Panel(panel.policy_ids[a:b], panel.years, panel.x[a:b], panel.y1[a:b],
                    panel.y2[a:b], panel.status[a:b])


def policy_logliks(panel: Panel, params: crm.CrmParams, threads: int = 1) -> np.ndarray:
    """Per-policy log-likelihoods, optionally evaluated on several threads."""
    if threads <= 1 or panel.n_policies < 2 * threads:
        return crm.loglik_panel(panel, params)
    with ThreadPoolExecutor(threads) as pool:
        parts = list(pool.map(lambda p: crm.loglik_panel(p, params), _chunks(panel, threads)))
    return np.concatenate(parts)


def total_loglik(values) -> float:
    # exactly rounded, hence independent of policy order and chunking
    return math.fsum(np.asarray(values, dtype=float).ravel())


class _Reparam:
    """Map between the free parameters and an unconstrained vector."""

    def __init__(self, spec: BenchmarkSpec, variant: crm.Variant, estimate_psi: bool):
        self.names = spec.free + (("psi",) if estimate_psi else ())
        self.spec = spec
        q_free = "q1" in spec.free
        kind = variant.schedule_kind
        # a standard schedule with q2 < 1 needs alpha0_2 > 2 to keep q_t < 1
        self.lb2 = 2.0 if (q_free and kind is crm.ScheduleKind.STANDARD) else 1.0

    def to_natural(self, u):
        out = dict(self.spec.fixed)
        out.pop("alpha0", None)
        for name, v in zip(self.names, u):
            if name in ("q1", "q2"):
                out[name] = float(special.expit(v))
            elif name == "alpha0_1":
                out[name] = float(np.exp(v))
            elif name == "alpha0_2":
                out[name] = self.lb2 + float(np.exp(v))
            else:
                out[name] = float(np.exp(v))
        return out

    def to_free(self, natural):
        u = []
        for name in self.names:
            v = natural[name]
            if name in ("q1", "q2"):
                v = min(max(v, 1e-6), 1 - 1e-6)
                u.append(float(special.logit(v)))
            elif name == "alpha0_2":
                u.append(float(np.log(max(v - self.lb2, 1e-6))))
            else:
                u.append(float(np.log(v)))
        return np.array(u)


def _central_grad(f, u, h=1e-5):
    g = np.empty_like(u)
    for j in range(u.size):
        e = np.zeros_like(u)
        e[j] = h * max(1.0, abs(u[j]))
        g[j] = (f(u + e) - f(u - e)) / (2 * e[j])
    return g


def _newton_polish(f, u, fu, gtol, max_steps=8):
    """A few Newton steps with finite-difference derivatives near an optimum."""
    for _ in range(max_steps):
        g = _central_grad(f, u)
        if np.max(np.abs(g)) < gtol:
            break
        h = 1e-4
        H = np.empty((u.size, u.size))
        for j in range(u.size):
            e = np.zeros_like(u)
            e[j] = h
            H[:, j] = (_central_grad(f, u + e) - _central_grad(f, u - e)) / (2 * h)
        H = 0.5 * (H + H.T)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(step)) or g @ step <= 0:
            break
        t = 1.0
        while t > 1e-4:
            cand = u - t * step
            fc = f(cand)
            if fc <= fu:
                u, fu = cand, fc
                break
            t *= 0.5
        else:
            break
    return u, fu


def fit_dependence(
    panel: Panel,
    freq_fit: GlmFit,
    sev_fit: GlmFit,
    benchmark="proposed",
    config: FitConfig | None = None,
    variant=crm.Variant.PLAIN,
) -> FitResult:
    """Fit one benchmark configuration by maximum likelihood.

    ``freq_fit`` and ``sev_fit`` are the step-one GLMs.  The Naive benchmark
    ignores the count coefficient of ``sev_fit`` (it should be fitted without
    the count column).
    """
    config = config or FitConfig()
    spec = BenchmarkSpec.of(benchmark)
    variant = crm.Variant(variant)
    zeta1 = tuple(float(v) for v in freq_fit.regression())
    zeta2 = tuple(float(v) for v in sev_fit.regression())
    eta = sev_fit.eta if spec.uses_eta else 0.0
    psi = float(sev_fit.dispersion)
    if not np.any(panel.y1[panel.status == OBSERVED] > 0):
        raise EstimationError("portfolio has no claims: severity parameters are not identifiable")
    if len(zeta1) != panel.x.shape[2] or len(zeta2) != panel.x.shape[2]:
        raise DomainError("GLM coefficients do not match the panel covariates")

    if spec.is_limit:
        ll = total_loglik(limit_loglik_panel(panel, zeta1, zeta2, eta, psi))
        return FitResult(spec.name, variant, zeta1, zeta2, eta, psi, 1.0, 1.0, math.inf,
                         math.inf, ll, True)

    rp = _Reparam(spec, variant, config.estimate_psi)

    def build(u):
        nat = rp.to_natural(u)
        return crm.CrmParams(
            nat["q1"], nat["q2"], nat["alpha0_1"], nat["alpha0_1"], nat["alpha0_2"],
            nat["alpha0_2"] - 1.0, zeta1=zeta1, zeta2=zeta2, eta=eta,
            psi=nat.get("psi", psi), variant=variant,
        )

    def objective(u):
        try:
            params = build(u)
        except (DomainError, InvariantError):
            return math.inf
        with np.errstate(all="ignore"):
            val = -total_loglik(policy_logliks(panel, params, config.threads))
        return val if math.isfinite(val) else math.inf

    best = None
    n_eval = 0
    for start in config.starts:
        natural = dict(start)
        natural.setdefault("psi", psi)
        u0 = rp.to_free(natural)
        nm = optimize.minimize(
            objective, u0, method="Nelder-Mead",
            options={"maxiter": config.max_iter, "xatol": config.xatol,
                     "fatol": config.fatol, "adaptive": True},
        )
        n_eval += nm.nfev
        bf = optimize.minimize(
            objective, nm.x, method="BFGS",
            jac=lambda u: _central_grad(objective, u),
            options={"gtol": config.gtol, "maxiter": config.max_iter},
        )
        n_eval += bf.nfev
        cand = bf if bf.fun <= nm.fun else nm
        u, fu = _newton_polish(objective, cand.x, cand.fun, config.gtol)
        if best is None or fu < best[1]:
            best = (u, fu)
    best = optimize.OptimizeResult(x=best[0], fun=best[1])
    grad = _central_grad(objective, best.x)
    max_grad = float(np.max(np.abs(grad)))
    nat = rp.to_natural(best.x)
    boundary = tuple(name for name in ("q1", "q2") if name in rp.names and nat[name] > 0.999)
    messages = []
    if boundary:
        messages.append(f"{', '.join(boundary)} at the static boundary q -> 1")
    converged = math.isfinite(best.fun) and max_grad < config.grad_tol
    if not math.isfinite(best.fun):
        raise ConvergenceError("likelihood is not finite at any start")
    if not converged:
        messages.append(f"gradient {max_grad:.3g} above tolerance {config.grad_tol:g}")
    params = build(best.x)
    return FitResult(
        spec.name, variant, zeta1, zeta2, eta, params.psi, params.q1, params.q2,
        params.alpha0_1, params.alpha0_2, -float(best.fun), converged, n_eval, max_grad,
        boundary, tuple(messages),
    )
