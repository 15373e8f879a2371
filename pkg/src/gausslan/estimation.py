"""Maximum-likelihood estimation with rate-matrix preconditioned Newton steps."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ContractError, DegenerateDataError, ParameterError, SymbolError
from .likelihood import LikelihoodWorkspace, fisher_exact, hessian, log_likelihood, score
from .spectral_models import SpectralModel, make_model


@dataclass
class NewtonOptions:
    tol: float = 1e-8
    max_iter: int = 100
    max_halvings: int = 30
    curvature: str = "hessian"  # or "fisher"
    damping: float = 1e-4
    polish_steps: int = 2  # full steps taken after convergence to reach roundoff level


@dataclass
class EstimationResult:
    theta_hat: np.ndarray
    score_norm_exit: float
    iterations: int
    converged: bool
    loglik: float = math.nan
    standardized_error: Optional[np.ndarray] = None
    asymptotic_cov: Optional[np.ndarray] = None
    message: str = ""
    seed: Optional[int] = None

    def to_record(self) -> dict:
        rec = asdict(self)
        for key, val in rec.items():
            if isinstance(val, np.ndarray):
                rec[key] = val.tolist()
        return rec


def _total(x):
    return float(np.sum(x))


def _summed(ws, values):
    # batched workspaces return one row per path
    values = np.asarray(values)
    return values.sum(axis=0) if ws.data.ndim == 2 else values


def _pd_solve(matrix, rhs):
    try:
        chol = linalg.cho_factor(matrix, lower=True)
    except linalg.LinAlgError:
        return None
    return linalg.cho_solve(chol, rhs)


def _curvature_step(ws, theta, rate, grad, opts):
    """Solve the preconditioned Newton system, switching curvature if needed."""
    rg = rate.T @ grad
    paths = 1 if ws.data.ndim == 1 else ws.data.shape[0]
    mats = []
    if opts.curvature == "hessian":
        mats.append(-_summed(ws, hessian(ws, theta)))

    def fisher_mat():
        return paths * fisher_exact(ws, theta)

    if opts.curvature == "fisher":
        mats.append(fisher_mat())
    for mat in mats:
        step = _pd_solve(rate.T @ mat @ rate, rg)
        if step is not None:
            return rate @ step
    fisher = fisher_mat() if opts.curvature == "hessian" else mats[0]
    base = rate.T @ fisher @ rate
    if opts.curvature == "hessian":
        step = _pd_solve(base, rg)
        if step is not None:
            return rate @ step
    lam = opts.damping
    scale = max(1.0, float(np.max(np.abs(np.diag(base)))))
    while lam < 1e8:
        step = _pd_solve(base + lam * scale * np.eye(base.shape[0]), rg)
        if step is not None:
            return rate @ step
        lam *= 10
    return None


def _polish(ws, theta, ll, grad, norm, rate, opts):
    """Undamped Newton steps from a converged point, kept while the scaled score shrinks."""
    for _ in range(opts.polish_steps):
        if norm == 0.0:
            break
        step = _curvature_step(ws, theta, rate, grad, opts)
        if step is None:
            break
        cand = theta + step
        if not ws.model.contains_at(cand, ws.n):
            break
        try:
            cand_grad = _summed(ws, score(ws, cand))
        except SymbolError:
            break
        cand_norm = float(np.linalg.norm(rate.T @ cand_grad))
        if not cand_norm < norm:
            break
        theta, grad, norm = cand, cand_grad, cand_norm
        ll = _total(log_likelihood(ws, theta))
    return theta, ll, grad, norm


def solve_mle(ws: LikelihoodWorkspace, theta_init, opts: NewtonOptions = None,
              theta0=None, rate_theta=None) -> EstimationResult:
    """Damped Newton iteration on ``R' score = 0``.

    The step solves ``[R'(-H)R] d = R' score`` and moves ``theta += R d``;
    halving continues until the log-likelihood does not decrease (up to
    roundoff) and the point stays inside the open parameter space.  Batched
    data are treated as independent paths with a summed log-likelihood.
    """
    opts = opts or NewtonOptions()
    model, n = ws.model, ws.n
    ws.require_data()
    theta = np.asarray(theta_init, dtype=float).copy()
    if not model.contains_at(theta, n):
        raise ParameterError(f"initial value {theta.tolist()} is outside the parameter space", theta)
    rate = model.rate_matrix(rate_theta if rate_theta is not None else
                             (theta0 if theta0 is not None else theta), n)
    message, converged, it = "", False, 0
    try:
        ll = _total(log_likelihood(ws, theta))
        grad = _summed(ws, score(ws, theta))
        norm = float(np.linalg.norm(rate.T @ grad))
        for it in range(opts.max_iter + 1):
            if norm <= opts.tol:
                converged = True
                theta, ll, grad, norm = _polish(ws, theta, ll, grad, norm, rate, opts)
                break
            if it == opts.max_iter:
                message = "iteration limit reached"
                break
            step = _curvature_step(ws, theta, rate, grad, opts)
            if step is None:
                message = "no positive definite curvature"
                break
            accepted = False
            for h in range(opts.max_halvings + 1):
                cand = theta + step * 0.5**h
                if not model.contains_at(cand, n):
                    continue
                try:
                    ll_new = _total(log_likelihood(ws, cand))
                except SymbolError:
                    continue
                if ll_new >= ll - 64 * np.finfo(float).eps * (1 + abs(ll)):
                    accepted = True
                    break
            if not accepted:
                message = "backtracking failed (boundary or no ascent)"
                break
            theta, ll = cand, ll_new
            grad = _summed(ws, score(ws, theta))
            norm = float(np.linalg.norm(rate.T @ grad))
    except SymbolError as exc:
        message = f"factorization failed: {exc}"
        ll = math.nan
        norm = math.inf
    result = EstimationResult(theta, norm, it, converged, ll, message=message)
    if theta0 is not None:
        rate0 = model.rate_matrix(theta0, n)
        result.standardized_error = standardize(theta, theta0, rate0)
    try:
        limit = model.limiting_fisher(theta)
        cov_rate = model.rate_matrix(theta, n)
        result.asymptotic_cov = cov_rate @ np.linalg.inv(limit) @ cov_rate.T
    except (ParameterError, np.linalg.LinAlgError):
        pass
    return result


def standardize(theta_hat, theta0, rate) -> np.ndarray:
    """``R^-1 (theta_hat - theta0)`` by triangular solve."""
    rate = np.asarray(rate, dtype=float)
    diff = np.asarray(theta_hat, dtype=float) - np.asarray(theta0, dtype=float)
    diag = np.abs(np.diag(rate))
    if rate.shape[0] != rate.shape[1] or np.any(diag == 0) or not np.all(np.isfinite(rate)):
        raise ContractError("rate matrix is singular")
    if np.allclose(rate, np.tril(rate), rtol=0, atol=0):
        return linalg.solve_triangular(rate, diff, lower=True)
    return np.linalg.solve(rate, diff)


def ols_mild_ar1(data, a_n: float) -> float:
    """Least-squares drift ``c = (1 - phi_hat) / a_n`` for a mildly integrated AR(1)."""
    x = np.asarray(data, dtype=float)
    if x.shape[-1] < 2:
        raise DegenerateDataError("need at least two observations")
    num = np.sum(x[..., 1:] * x[..., :-1], axis=-1)
    den = np.sum(x[..., :-1] ** 2, axis=-1)
    if np.any(den == 0):
        raise DegenerateDataError("lagged sum of squares is zero")
    return (1.0 - num / den) / a_n


# ---------------------------------------------------------------------------
# estimator objects
# ---------------------------------------------------------------------------

def _initial_guess(model, X):
    if model.name == "white_noise":
        return np.array([np.mean(X**2)])
    if model.name == "ar1_mild":
        n = X.shape[1]
        a = model.stage(n).a
        c = float(np.clip(np.mean(ols_mild_ar1(X, a)), 0.05, 0.9 / a))
        phi = 1 - c * a
        s = float(np.mean(X**2)) * (1 - phi**2)
        return np.array([c, s])
    return None


class GaussianArrayMLE(BaseEstimator):
    """Exact Gaussian MLE for one row of a stationary Gaussian array.

    Each row of ``X`` is an independent path of length ``n``; the
    log-likelihoods of the rows are summed.

    Parameters
    ----------
    model : str or SpectralModel
    model_params : dict, optional
        Stage-rule parameters passed to :func:`make_model` for string ids.
    theta_init : array-like, optional
        Required for families without a closed-form starting value.
    tol, max_iter, curvature : Newton controls.
    """

    def __init__(self, model="ar1_mild", model_params=None, theta_init=None,
                 tol=1e-8, max_iter=100, curvature="hessian"):
        self.model = model
        self.model_params = model_params
        self.theta_init = theta_init
        self.tol = tol
        self.max_iter = max_iter
        self.curvature = curvature

    def _model(self) -> SpectralModel:
        if isinstance(self.model, SpectralModel):
            return self.model
        return make_model(self.model, **(self.model_params or {}))

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_features=1)
        model = self._model()
        theta_init = self.theta_init
        if theta_init is None:
            theta_init = _initial_guess(model, X)
            if theta_init is None:
                raise ValueError(f"theta_init is required for model {model.name!r}")
        ws = LikelihoodWorkspace(model, data=X)
        opts = NewtonOptions(tol=self.tol, max_iter=self.max_iter, curvature=self.curvature)
        self.result_ = solve_mle(ws, theta_init, opts)
        self.theta_ = self.result_.theta_hat
        self.n_iter_ = self.result_.iterations
        self.converged_ = self.result_.converged
        self.n_features_in_ = X.shape[1]
        return self

    def score_samples(self, X):
        """Per-path log-likelihood at the fitted parameter."""
        check_is_fitted(self, "theta_")
        X = check_array(X)
        ws = LikelihoodWorkspace(self._model(), data=X)
        return np.atleast_1d(log_likelihood(ws, self.theta_))

    def score(self, X, y=None):
        return float(np.mean(self.score_samples(X)))


class MildAR1OLS(BaseEstimator):
    """Least-squares drift estimator for the mildly integrated AR(1).

    ``a_n = n^-alpha`` unless ``a`` fixes it directly.  Rows of ``X`` are
    pooled into one regression.
    """

    def __init__(self, alpha=0.15, a=None):
        self.alpha = alpha
        self.a = a

    def fit(self, X, y=None):
        X = check_array(X)
        n = X.shape[1]
        a_n = self.a if self.a is not None else n ** (-self.alpha)
        num = np.sum(X[:, 1:] * X[:, :-1])
        den = np.sum(X[:, :-1] ** 2)
        if den == 0:
            raise DegenerateDataError("lagged sum of squares is zero")
        self.a_n_ = a_n
        self.phi_ = num / den
        self.c_ = (1.0 - self.phi_) / a_n
        self.n_features_in_ = n
        return self

    def predict(self, X):
        """One-step-ahead predictions ``phi_hat x_t`` for each row."""
        check_is_fitted(self, "phi_")
        return self.phi_ * check_array(X)
