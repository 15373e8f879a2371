"""Exact Gaussian log-likelihood of a stationary array row and its derivatives.

For ``X ~ N(0, T)`` with ``T = T_n(f_n^theta)``:

* ``l = -n/2 log 2pi - 1/2 log det T - 1/2 x' T^-1 x``
* ``dl_j = -1/2 tr(T^-1 T_j) + 1/2 x' T^-1 T_j T^-1 x``
* ``d2l_jk = 1/2 tr(T^-1 T_k T^-1 T_j) - 1/2 tr(T^-1 T_jk)
  - x' T^-1 T_k T^-1 T_j T^-1 x + 1/2 x' T^-1 T_jk T^-1 x``

where ``T_j = T_n(d_j f)`` and ``T_jk = T_n(d_jk f)``.  Data may be a single
path ``(n,)`` or a batch ``(paths, n)``; batched inputs return batched outputs.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from typing import Sequence

import numpy as np
from scipy import linalg

from ._quadrature import panel_rule
from .exceptions import ContractError, DomainError, ParameterError
from .spectral_models import SpectralModel
from .toeplitz import ToeplitzMatrix, build

LOG_2PI = math.log(2 * math.pi)


class _State:
    """Factorizations and derived matrices at one parameter value."""

    def __init__(self, model, theta, n):
        self.model, self.theta, self.n = model, theta, n
        self.matrix = ToeplitzMatrix(model.autocovariance(theta, n))
        self.precision = model.precision_matrix(theta, n)
        self._dT = self._d2T = self._B = self._inv = None

    def solve(self, rhs):
        if self.precision is not None:
            return np.asarray(self.precision @ rhs)
        return self.matrix.solve(rhs)

    def logdet(self):
        return self.matrix.logdet()

    @property
    def inverse(self):
        if self._inv is None:
            if self.precision is not None:
                self._inv = self.precision.toarray()
            else:
                self._inv = self.matrix.inverse()
        return self._inv

    @property
    def dT(self):
        if self._dT is None:
            grads = self.model.autocovariance_gradient(self.theta, self.n)
            self._dT = [linalg.toeplitz(g) for g in grads]
        return self._dT

    @property
    def d2T(self):
        if self._d2T is None:
            hess = self.model.autocovariance_hessian(self.theta, self.n)
            M = hess.shape[0]
            self._d2T = [[None] * M for _ in range(M)]
            for j in range(M):
                for k in range(j, M):
                    mat = None if not np.any(hess[j, k]) else linalg.toeplitz(hess[j, k])
                    self._d2T[j][k] = self._d2T[k][j] = mat
        return self._d2T

    @property
    def B(self):
        """``T^-1 T_j`` for every parameter direction."""
        if self._B is None:
            self._B = [self.solve(d) for d in self.dT]
        return self._B


class LikelihoodWorkspace:
    """Data plus cached per-theta factorizations for one model and sample size.

    ``cache_size=0`` disables caching; results are identical either way.
    ``closed_form`` lets families with an O(n) exact likelihood bypass the
    dense path for log-likelihood, score and Hessian.
    """

    def __init__(self, model: SpectralModel, n: int = None, data=None,
                 cache_size: int = 4, closed_form: bool = True):
        if data is not None:
            data = np.asarray(data, dtype=float)
            if data.ndim not in (1, 2):
                raise ContractError("data must be a vector or a (paths, n) array")
            if n is not None and data.shape[-1] != n:
                raise ContractError(f"data length {data.shape[-1]} differs from n={n}")
            n = data.shape[-1]
        if n is None or n < 1:
            raise ContractError("sample size must be positive")
        self.model, self.n, self.data = model, int(n), data
        self.cache_size = cache_size
        self.closed_form = closed_form and model.exact_loglik is not None
        self._cache = OrderedDict()

    def with_data(self, data):
        return LikelihoodWorkspace(self.model, self.n, data, self.cache_size, self.closed_form)

    def theta(self, theta):
        theta = self.model.check_theta(theta)
        self.model._check_stage(theta, self.n)
        return theta

    def state(self, theta) -> _State:
        theta = self.theta(theta)
        key = theta.tobytes()
        if key in self._cache:
            self._cache.move_to_end(key)
            return self._cache[key]
        st = _State(self.model, theta, self.n)
        if self.cache_size > 0:
            self._cache[key] = st
            while len(self._cache) > self.cache_size:
                self._cache.popitem(last=False)
        return st

    def require_data(self):
        if self.data is None:
            raise ContractError("workspace has no data")
        return self.data

    def _columns(self):
        # data as (n, paths) for matrix solves
        x = self.require_data()
        return np.atleast_2d(x).T

    def _shape(self, values):
        return values[0] if self.data.ndim == 1 else values


def log_likelihood(ws: LikelihoodWorkspace, theta):
    """Exact Gaussian log-likelihood (per path for batched data)."""
    if ws.closed_form:
        return ws.model.exact_loglik(ws.theta(theta), ws.n, ws.require_data(), derivatives=False)
    st = ws.state(theta)
    x = ws._columns()
    alpha = st.matrix.solve(x)
    quad = np.sum(x * alpha, axis=0)
    ll = -0.5 * ws.n * LOG_2PI - 0.5 * st.logdet() - 0.5 * quad
    return ws._shape(ll)


def score(ws: LikelihoodWorkspace, theta):
    """Gradient of the log-likelihood, shape ``(M,)`` or ``(paths, M)``."""
    if ws.closed_form:
        return ws.model.exact_loglik(ws.theta(theta), ws.n, ws.require_data())[1]
    st = ws.state(theta)
    x = ws._columns()
    alpha = st.solve(x)
    traces = np.array([np.trace(b) for b in st.B])
    quads = np.stack([np.sum(alpha * (d @ alpha), axis=0) for d in st.dT], axis=-1)
    return ws._shape(0.5 * (quads - traces))


def hessian(ws: LikelihoodWorkspace, theta):
    """Hessian of the log-likelihood, shape ``(M, M)`` or ``(paths, M, M)``."""
    if ws.closed_form:
        return ws.model.exact_loglik(ws.theta(theta), ws.n, ws.require_data())[2]
    st = ws.state(theta)
    x = ws._columns()
    alpha = st.solve(x)
    M = len(st.dT)
    u = [d @ alpha for d in st.dT]
    v = [st.solve(w) for w in u]
    out = np.zeros((alpha.shape[1], M, M))
    for j in range(M):
        for k in range(j, M):
            val = 0.5 * np.sum(st.B[k] * st.B[j].T) - np.sum(u[k] * v[j], axis=0)
            d2 = st.d2T[j][k]
            if d2 is not None:
                val = val - 0.5 * np.sum(st.inverse * d2) + 0.5 * np.sum(alpha * (d2 @ alpha), axis=0)
            out[:, j, k] = out[:, k, j] = val
    return ws._shape(out)


def fisher_exact(ws_or_model, theta, n: int = None) -> np.ndarray:
    """``(1/2) tr(T^-1 T_j T^-1 T_k)``."""
    if isinstance(ws_or_model, LikelihoodWorkspace):
        ws = ws_or_model
    else:
        ws = LikelihoodWorkspace(ws_or_model, n)
    st = ws.state(theta)
    M = len(st.B)
    out = np.empty((M, M))
    for j in range(M):
        for k in range(j, M):
            out[j, k] = out[k, j] = 0.5 * np.sum(st.B[j] * st.B[k].T)
    return out


def _half_integral(fn, alpha, tol, max_halvings=6):
    """``int_0^pi fn`` with panel refinement until two orders agree."""
    budget = 6.0
    value = None
    for _ in range(max_halvings + 1):
        fine = panel_rule(1, alpha, order=20, budget=budget)
        coarse = panel_rule(1, alpha, order=10, budget=budget / 2)
        value = fine.integrate(fn(fine.nodes))
        check = coarse.integrate(fn(coarse.nodes))
        if np.max(np.abs(value - check)) <= tol * max(1.0, float(np.max(np.abs(value)))):
            break
        budget /= 2
    return value


def fisher_whittle(model: SpectralModel, theta, n: int, tol: float = 1e-10) -> np.ndarray:
    """``(n / 4pi) int d_j f d_k f / f^2``."""
    theta = model.check_theta(theta)

    def integrand(lam):
        ratio = model.gradient(theta, n, lam) / model.density(theta, n, lam)
        return ratio[:, None, :] * ratio[None, :, :]

    # symmetric integrand: int_{-pi}^{pi} = 2 int_0^pi
    return n / (2 * math.pi) * _half_integral(integrand, model.ratio_alpha_hint(theta, n), tol)


# ---------------------------------------------------------------------------
# quadratic forms of the CLT
# ---------------------------------------------------------------------------

def _check_symmetric_sequence(mats):
    p = len(mats)
    if p == 0:
        raise ContractError("need at least one symbol")
    for l in range(p // 2):
        a, b = mats[l].column.gamma, mats[p - 1 - l].column.gamma
        if not np.allclose(a, b, rtol=1e-12, atol=1e-14 * max(1.0, np.abs(a).max())):
            raise ContractError(f"symbols {l + 1} and {p - l} differ: the product is not symmetric")


def _z_matrices(ws, theta, g_symbols):
    st = ws.state(theta)
    alpha_hint = ws.model.alpha_hint(st.theta, ws.n)
    mats = [build(g, ws.n, alpha_hint) for g in g_symbols]
    _check_symmetric_sequence(mats)
    prod = np.eye(ws.n)
    for tg in mats:
        prod = prod @ st.solve(tg.dense).T
    return st, prod


def quadratic_form_Z(ws: LikelihoodWorkspace, theta, g_symbols: Sequence):
    """``x' T^-1 prod_l[T(g_l) T^-1] x - tr prod_l[T(g_l) T^-1]``."""
    st, prod = _z_matrices(ws, theta, g_symbols)
    x = ws._columns()
    quad = np.sum(st.solve(x) * (prod @ x), axis=0)
    return ws._shape(quad - np.trace(prod))


def z_variance(ws: LikelihoodWorkspace, theta, g_symbols: Sequence) -> float:
    """Exact ``Var Z = 2 ||L' A L||_F^2`` with ``A = T^-1 prod_l[...]`` and ``T = L L'``."""
    st, prod = _z_matrices(ws, theta, g_symbols)
    chol = st.matrix.cholesky()
    a = st.solve(prod)
    a = 0.5 * (a + a.T)
    core = chol.T @ a @ chol
    return float(2.0 * np.sum(core**2))


def phi_n(model: SpectralModel, theta0, n: int, g_symbols: Sequence, tol: float = 1e-10) -> float:
    """``[(n/pi) int prod_l (g_l / f)^2]^(1/2)``."""
    theta0 = model.check_theta(theta0)

    def integrand(lam):
        f = model.density(theta0, n, lam)
        out = np.ones_like(lam)
        for g in g_symbols:
            out = out * (g(lam) / f) ** 2
        return out

    alpha = min(0.95, model.ratio_alpha_hint(theta0, n) * len(g_symbols))
    integral = 2.0 * _half_integral(integrand, alpha, tol)
    return math.sqrt(n / math.pi * integral)


def llr(ws: LikelihoodWorkspace, theta0, a, rate) -> np.ndarray:
    """``l(theta0 + R a) - l(theta0)``."""
    theta0 = np.asarray(theta0, dtype=float)
    shifted = theta0 + np.asarray(rate) @ np.asarray(a, dtype=float)
    if not ws.model.contains_at(shifted, ws.n):
        raise DomainError(f"local alternative leaves the parameter space: theta={shifted.tolist()}")
    if not np.any(np.asarray(a)):
        return log_likelihood(ws, theta0) * 0.0
    return log_likelihood(ws, shifted) - log_likelihood(ws, theta0)
