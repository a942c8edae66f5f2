"""Log-link Poisson and gamma regressions fitted by iteratively reweighted least squares.

These give the fixed effects of the two-step estimation: ``zeta1`` from the
claim counts, then ``zeta2`` and the count coefficient ``eta`` from the
average claim sizes of periods with at least one claim, weighted by the count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import ConvergenceError, EstimationError

COUNT_NAME = "count"


@dataclass(frozen=True)
class GlmFit:
    family: str
    names: tuple
    coef: np.ndarray
    se: np.ndarray
    pvalues: np.ndarray
    dispersion: float
    loglik: float
    n_obs: int
    n_iter: int
    converged: bool
    max_score: float

    def __getitem__(self, name):
        return float(self.coef[self.names.index(name)])

    def std_error(self, name):
        return float(self.se[self.names.index(name)])

    def coef_dict(self):
        return {n: float(c) for n, c in zip(self.names, self.coef)}

    @property
    def eta(self):
        """Count coefficient, 0 when the count column was left out."""
        return self[COUNT_NAME] if COUNT_NAME in self.names else 0.0

    def regression(self):
        """Coefficients on the policy covariates only (the count column removed)."""
        return np.array([c for n, c in zip(self.names, self.coef) if n != COUNT_NAME])

    @classmethod
    def from_dict(cls, d):
        rows = d["coefficients"]
        arr = lambda key: np.array([float(r[key]) for r in rows])  # noqa: E731
        return cls(d["family"], tuple(r["name"] for r in rows), arr("estimate"),
                   arr("std_error"), arr("p_value"), float(d["dispersion"]),
                   float(d["loglik"]), int(d["n_obs"]), int(d["n_iter"]),
                   bool(d["converged"]), float(d["max_score"]))

    def to_dict(self):
        return {
            "family": self.family,
            "coefficients": [
                {"name": n, "estimate": float(c), "std_error": float(s), "p_value": float(p)}
                for n, c, s, p in zip(self.names, self.coef, self.se, self.pvalues)
            ],
            "dispersion": float(self.dispersion),
            "loglik": float(self.loglik),
            "n_obs": int(self.n_obs),
            "n_iter": int(self.n_iter),
            "converged": bool(self.converged),
            "max_score": float(self.max_score),
        }


def _check_design(X, names):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise EstimationError("design matrix must be two-dimensional")
    if not np.all(np.isfinite(X)):
        raise EstimationError("design matrix has non-finite entries")
    n, p = X.shape
    if n < p or np.linalg.matrix_rank(X) < p:
        raise EstimationError(f"design matrix is rank deficient ({n} rows, {p} columns)")
    if names is None:
        names = tuple(f"x{j}" for j in range(p))
    names = tuple(names)
    if len(names) != p:
        raise EstimationError("one name per design column is required")
    return X, names


def _irls(X, y, w, variance_weight, start, tol, max_iter):
    """Log-link IRLS with iteration weights ``w * variance_weight(mu)``.

    The score is ``X^T w (y - mu) mu / V(mu)``; for both families used here the
    working weight is ``w mu^2 / V(mu)``, supplied through ``variance_weight``.
    """
    beta = start.copy()
    score = np.inf
    for it in range(1, max_iter + 1):
        eta = X @ beta
        mu = np.exp(eta)
        ww = w * variance_weight(mu)
        z = eta + (y - mu) / mu
        xtw = X.T * ww
        new = np.linalg.solve(xtw @ X, xtw @ z)
        if not np.all(np.isfinite(new)):
            raise ConvergenceError("IRLS diverged")
        beta = new
        mu = np.exp(X @ beta)
        score = float(np.max(np.abs(X.T @ (w * (y - mu) * variance_weight(mu) / mu))))
        if score < tol:
            return beta, it, score
    raise ConvergenceError(f"IRLS did not converge in {max_iter} iterations (score {score:.3g})")


def fit_poisson(X, y, names=None, tol=1e-10, max_iter=100) -> GlmFit:
    """Poisson regression with log link."""
    X, names = _check_design(X, names)
    y = np.asarray(y, dtype=float)
    if np.any(y < 0) or np.any(y != np.floor(y)):
        raise EstimationError("counts must be non-negative integers")
    w = np.ones_like(y)
    start = np.linalg.lstsq(X, np.log(y + 0.5), rcond=None)[0]
    beta, it, score = _irls(X, y, w, lambda mu: mu, start, tol, max_iter)
    mu = np.exp(X @ beta)
    info = (X.T * mu) @ X
    se = np.sqrt(np.diag(np.linalg.inv(info)))
    z = beta / se
    ll = float(np.sum(stats.poisson.logpmf(y, mu)))
    return GlmFit("poisson", names, beta, se, 2 * stats.norm.sf(np.abs(z)), 1.0, ll,
                  len(y), it, True, score)


def severity_rows(y1, y2):
    """Mask, response and weight for the average-claim regression."""
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    mask = y1 > 0
    return mask, y2[mask] / y1[mask], y1[mask]


def fit_gamma_severity(X, y1, y2, names=None, include_count=True, tol=1e-10,
                       max_iter=100) -> GlmFit:
    """Gamma regression with log link for the average claim size.

    Rows with ``y1 >= 1`` enter with response ``y2 / y1`` and weight ``y1``.
    With ``include_count`` the claim count is appended as the last column, and
    its coefficient is ``eta``.  The dispersion is the Pearson estimate.
    """
    X = np.asarray(X, dtype=float)
    mask, resp, w = severity_rows(y1, y2)
    if not mask.any():
        raise EstimationError("no period with a positive claim count: severity not identifiable")
    if np.any(~(resp > 0)):
        raise EstimationError("positive claim counts need positive losses")
    Xs = X[mask]
    if names is None:
        names = tuple(f"x{j}" for j in range(X.shape[1]))
    names = tuple(names)
    if include_count:
        Xs = np.column_stack([Xs, w])
        names = names + (COUNT_NAME,)
    Xs, names = _check_design(Xs, names)
    n, p = Xs.shape
    if n <= p:
        raise EstimationError("too few claim rows for the severity regression")
    start = np.linalg.lstsq(Xs, np.log(resp), rcond=None)[0]
    beta, it, score = _irls(Xs, resp, w, lambda mu: np.ones_like(mu), start, tol, max_iter)
    mu = np.exp(Xs @ beta)
    psi = float(np.sum(w * (resp - mu) ** 2 / mu**2) / (n - p))
    # observed information of the quasi-likelihood at the optimum
    info = (Xs.T * (w * resp / mu)) @ Xs / psi
    se = np.sqrt(np.diag(np.linalg.inv(info)))
    t = beta / se
    shape = w / psi
    ll = float(np.sum(stats.gamma.logpdf(resp, shape, scale=mu / shape)))
    pv = 2 * stats.t.sf(np.abs(t), df=n - p)
    return GlmFit("gamma", names, beta, se, pv, psi, ll, n, it, True, score)

