"""Toeplitz matrices of spectral symbols and the trace/norm primitives built on them.

Convention: ``T_n(f)[j, k] = int_{-pi}^{pi} exp(i (k - j) lam) f(lam) dlam``, so
for an even symbol the first column holds ``gamma_k = 2 int_0^pi cos(k lam) f``.
"""

from __future__ import annotations

import csv
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import linalg

from ._quadrature import panel_rule
from .exceptions import DomainError, InvalidTableError, SymbolError

Symbol = Callable[[np.ndarray], np.ndarray]


# ---------------------------------------------------------------------------
# autocovariances
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AutocovarianceSequence:
    """Lags ``0..n-1`` of a symbol's Fourier coefficients with an error estimate."""

    gamma: np.ndarray
    error: float = 0.0
    source: str = ""

    @property
    def n(self) -> int:
        return self.gamma.size

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write("# schema=1\n")
            writer = csv.writer(fh)
            writer.writerow(["lag", "gamma", "abs_error"])
            for k, g in enumerate(self.gamma):
                writer.writerow([k, repr(float(g)), repr(float(self.error))])


def _check_alpha(alpha_hint):
    if alpha_hint >= 1.0:
        raise DomainError(f"alpha_hint={alpha_hint} >= 1: symbol is not integrable at 0")


def fourier_coefficients(symbol: Symbol, n: int, alpha_hint: float = 0.0,
                         tol: float = 1e-11, max_halvings: int = 6) -> AutocovarianceSequence:
    """``gamma_k = int exp(i k lam) symbol(lam) dlam`` for ``k < n``.

    Composite Gauss-Legendre panels shrink geometrically toward the origin;
    the panel width is halved until the 20-point and 10-point rules on the
    same panels agree to ``tol`` (relative to ``|gamma_0|``).  The reported
    error is the smallest such discrepancy seen, so tightening ``tol`` never
    increases it.
    """
    _check_alpha(alpha_hint)
    if n < 1:
        raise DomainError("n must be positive")
    budget, best, error = 6.0, None, math.inf
    for _ in range(max_halvings + 1):
        fine = panel_rule(n - 1, alpha_hint, order=20, budget=budget)
        coarse = panel_rule(n - 1, alpha_hint, order=10, budget=budget / 2)
        g_fine = fine.cosine_moments(symbol(fine.nodes), n)
        g_coarse = coarse.cosine_moments(symbol(coarse.nodes), n)
        est = float(np.max(np.abs(g_fine - g_coarse)))
        if est < error or best is None:
            best, error = g_fine, min(error, est)
        if est <= tol * max(1.0, abs(g_fine[0])):
            break
        budget /= 2
    return AutocovarianceSequence(best, error, getattr(symbol, "__name__", "symbol"))


# ---------------------------------------------------------------------------
# Toeplitz matrices
# ---------------------------------------------------------------------------

class ToeplitzMatrix:
    """Dense symmetric Toeplitz matrix with a lazily cached Cholesky factor."""

    def __init__(self, first_column):
        if isinstance(first_column, AutocovarianceSequence):
            self.column = first_column
        else:
            self.column = AutocovarianceSequence(np.asarray(first_column, dtype=float))
        self._dense = None
        self._chol = None
        self._lock = threading.Lock()

    @property
    def n(self) -> int:
        return self.column.n

    @property
    def dense(self) -> np.ndarray:
        if self._dense is None:
            dense = linalg.toeplitz(self.column.gamma)
            dense.setflags(write=False)
            self._dense = dense
        return self._dense

    def cholesky(self) -> np.ndarray:
        """Lower Cholesky factor; raises :class:`SymbolError` if not positive definite."""
        with self._lock:
            if self._chol is None:
                self._chol = _cholesky(self.dense)
            return self._chol

    def solve(self, rhs):
        return linalg.cho_solve((self.cholesky(), True), rhs, check_finite=False)

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.cholesky()))))

    def whiten(self, rhs):
        """``L^-1 rhs`` for the Cholesky factor ``L``."""
        return linalg.solve_triangular(self.cholesky(), rhs, lower=True, check_finite=False)

    def inverse(self) -> np.ndarray:
        return self.solve(np.eye(self.n))


def _cholesky(a):
    chol, info = linalg.lapack.dpotrf(a, lower=1, clean=1)
    if info == 0:
        return chol
    if info < 0:
        raise SymbolError(f"dpotrf: illegal argument {-info}")
    k = info - 1
    # Schur-complement pivot at the first failing leading minor
    if k == 0:
        pivot = a[0, 0]
    else:
        head = linalg.cholesky(a[:k, :k], lower=True)
        w = linalg.solve_triangular(head, a[:k, k], lower=True)
        pivot = a[k, k] - w @ w
    raise SymbolError(
        f"Toeplitz matrix is not positive definite: pivot {pivot:.3e} at order {k + 1}; "
        "the symbol is not positive or the quadrature is inaccurate", float(pivot))


def build(symbol, n: int, alpha_hint: float = 0.0, tol: float = 1e-11) -> ToeplitzMatrix:
    """Toeplitz matrix of a symbol, an autocovariance sequence or a gamma vector."""
    if isinstance(symbol, ToeplitzMatrix):
        return symbol
    if isinstance(symbol, AutocovarianceSequence):
        return ToeplitzMatrix(symbol)
    if callable(symbol):
        return ToeplitzMatrix(fourier_coefficients(symbol, n, alpha_hint, tol))
    return ToeplitzMatrix(np.asarray(symbol, dtype=float)[:n])


# ---------------------------------------------------------------------------
# traces and Whittle integrals
# ---------------------------------------------------------------------------

def _as_matrix(obj, n, alpha_hint):
    return build(obj, n, alpha_hint)


def trace_product(pairs: Sequence, n: int, alpha_hint: float = 0.0) -> float:
    """``tr prod_l T_n(g_l) T_n(f_l)^-1`` by dense factorization."""
    if not pairs:
        raise DomainError("trace_product needs at least one (g, f) pair")
    prod = None
    for g, f in pairs:
        tg = _as_matrix(g, n, alpha_hint).dense
        tf = _as_matrix(f, n, alpha_hint)
        # T(g) T(f)^-1 = (T(f)^-1 T(g))^T for symmetric matrices
        factor = tf.solve(tg).T
        prod = factor if prod is None else prod @ factor
    return float(np.trace(prod))


def whittle_integral(pairs: Sequence, tol: float = 1e-10, alpha_hint: float = 0.0,
                     max_halvings: int = 6) -> float:
    """``(1/2pi) int prod_l g_l / f_l dlam`` for even symbols."""
    _check_alpha(alpha_hint)
    if not pairs:
        raise DomainError("whittle_integral needs at least one (g, f) pair")

    def integrand(lam):
        out = np.ones_like(lam)
        for g, f in pairs:
            out = out * g(lam) / f(lam)
        return out

    budget, value = 6.0, None
    for _ in range(max_halvings + 1):
        fine = panel_rule(1, alpha_hint, order=20, budget=budget)
        coarse = panel_rule(1, alpha_hint, order=10, budget=budget / 2)
        value = fine.integrate(integrand(fine.nodes)) / math.pi
        check = coarse.integrate(integrand(coarse.nodes)) / math.pi
        if abs(value - check) <= tol * max(1.0, abs(value)):
            break
        budget /= 2
    return float(value)


# ---------------------------------------------------------------------------
# trace-theorem rates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DeltaBounds:
    """Rate quantities controlling the trace-approximation error."""

    delta_n: float
    delta_ast_n: float
    delta_star_n: float
    R: np.ndarray
    epsilon: float
    eta: float

    def trace_bound(self, n, p):
        """``(1/n) delta_star [delta_ast^p + (delta_star delta)^p]`` (constant omitted)."""
        return self.delta_star_n * (self.delta_ast_n**p + (self.delta_star_n * self.delta_n) ** p) / n


def _pos(x):
    return max(x, 0.0)


def _alpha_prime(table, i):
    vals = [table.alpha_bar[table.i_prime[i, k], k] for k in range(table.q)]
    return max(v if v < 1 else 0.0 for v in vals)


def validate_table(table, eta: float, p: int = 1) -> list:
    """Violated admissibility conditions of an envelope table (empty if valid)."""
    problems = []
    m, q = table.m, table.q
    a, ab, b = table.alpha, table.alpha_bar, table.beta
    for name in ("i_prime", "i_ast", "i_star"):
        arr = getattr(table, name)
        if arr.shape != (m, q) or arr.min() < 0 or arr.max() >= m:
            problems.append(f"{name} must map into rows 0..{m - 1}")
    for name in ("k_prime", "k_ast", "k_star"):
        arr = getattr(table, name)
        if arr.shape != (m, q) or arr.min() < 0 or arr.max() >= q:
            problems.append(f"{name} must map into columns 0..{q - 1}")
    if problems:
        return problems
    for i in range(m):
        if not a[i].min() < 1:
            problems.append(f"min_k alpha[{i}] >= 1")
        if not b[i].min() < 1:
            problems.append(f"min_k beta[{i}] >= 1")
        gaps = [b[i, table.k_prime[i, k]] - ab[table.i_prime[i, k], k] for k in range(q)]
        lead = max(_pos(g) for g in gaps) + min(ab[table.i_prime[i, k], k] for k in range(q))
        if not lead < 1 - eta:
            problems.append(f"row {i}: max gap_+ + min alpha_bar = {lead:.4g} >= 1 - eta")
        if not _alpha_prime(table, i) < 1 - eta:
            problems.append(f"row {i}: alpha' >= 1 - eta")
        for k in range(q):
            ka, ia = table.k_ast[i, k], table.i_ast[i, k]
            ks, is_ = table.k_star[i, k], table.i_star[i, k]
            checks = {
                "beta_{i,k'} - alpha_bar_{i',k} < 1 - eta": gaps[k] < 1 - eta,
                "p (beta_{i,k*} - alpha_bar_{i*,k})_+ < 1 - eta": p * _pos(b[i, ka] - ab[ia, k]) < 1 - eta,
                "p (alpha_{i,k*} - alpha_bar_{i*,k})_+ < 1 - eta": p * _pos(a[i, ks] - ab[is_, k]) < 1 - eta,
                "beta_{i,k*} < 1 - eta": b[i, ka] < 1 - eta,
                "alpha_{i,k*} < 1 - eta": a[i, ks] < 1 - eta,
                "alpha_bar_{i*,k} > -1 + eta": ab[ia, k] > -1 + eta and ab[is_, k] > -1 + eta,
            }
            problems.extend(f"(i={i}, k={k}): {label}" for label, ok in checks.items() if not ok)
    return problems


def delta_rates(table, n: int, epsilon: float, eta: float) -> DeltaBounds:
    """Evaluate the three trace-error rates and the ratios ``R_{i,k}`` at sample size ``n``."""
    c, c_bar, d = table.coefficients(n)
    a, ab, b = table.alpha, table.alpha_bar, table.beta
    m, q = table.m, table.q
    R = np.ones((m, q))
    delta = delta_ast = star_sum = 0.0
    for i in range(m):
        alpha_prime = _pos(_alpha_prime(table, i))
        for k in range(q):
            kp, ip = table.k_prime[i, k], table.i_prime[i, k]
            gap = b[i, kp] - ab[ip, k]
            if gap + eta >= 0:
                big = [k1 for k1 in range(q) if ab[table.i_prime[i, k1], k1] + gap >= 1 - eta]
                small = [k2 for k2 in range(q) if ab[table.i_prime[i, k2], k2] + gap < 1 - eta]
                if not small:
                    raise InvalidTableError(
                        f"(i={i}, k={k}): no column k2 with alpha_bar + gap < 1 - eta")
                best = -math.inf
                for k1 in big:
                    i1 = table.i_prime[i, k1]
                    best = max(best, min(c_bar[table.i_prime[i, k2], k2] / c_bar[i1, k1]
                                         for k2 in small))
                R[i, k] = max(1.0, best)
            delta += d[i, kp] / c_bar[ip, k] * (R[i, k] * n) ** (
                _pos(gap) / (1 - alpha_prime) + epsilon)
            ka, ia = table.k_ast[i, k], table.i_ast[i, k]
            delta_ast += d[i, ka] / c_bar[ia, k] * n ** (_pos(b[i, ka] - ab[ia, k]) + epsilon)
            ks, is_ = table.k_star[i, k], table.i_star[i, k]
            star_sum += c[i, ks] / c_bar[is_, k] * n ** (_pos(a[i, ks] - ab[is_, k]) + epsilon)
    return DeltaBounds(delta, delta_ast, max(1.0, star_sum), R, epsilon, eta)


# ---------------------------------------------------------------------------
# operator norms and the bounded-density fractional program
# ---------------------------------------------------------------------------

def half_norm_squared(g, f, n: int, alpha_hint: float = 0.0) -> float:
    """``||T_n(g)^1/2 T_n(f)^-1/2||_op^2``: top eigenvalue of the pencil ``(T(g), T(f))``."""
    tg = _as_matrix(g, n, alpha_hint)
    tf = _as_matrix(f, n, alpha_hint)
    half = tf.whiten(tg.dense)
    whitened = tf.whiten(half.T)
    whitened = 0.5 * (whitened + whitened.T)
    top = linalg.eigh(whitened, eigvals_only=True, subset_by_index=[n - 1, n - 1])
    return float(top[0])


def log_grid(points: int = 2**15, lo: float = 1e-10, hi: float = math.pi,
             breakpoints: Sequence[float] = ()) -> np.ndarray:
    """Cell edges on ``[0, hi]``: 0, then log-spaced from ``lo``, plus extra breakpoints."""
    edges = np.geomspace(lo, hi, points)
    extra = [x for x in breakpoints if 0 < x < hi]
    return np.unique(np.concatenate([[0.0], edges, extra]))


def power_cell_integrals(edges, exponent):
    """``int_{e_j}^{e_{j+1}} lam^-exponent dlam`` for every cell (exponent < 1)."""
    if exponent >= 1:
        raise DomainError("power integral diverges at 0")
    p = 1.0 - exponent
    return np.diff(edges**p) / p


def _cell_values(fn, edges):
    if callable(fn):
        mids = 0.5 * (edges[1:] + edges[:-1])
        return np.asarray(fn(mids), dtype=float) * np.diff(edges)
    vals = np.asarray(fn, dtype=float)
    if vals.shape != (edges.size - 1,):
        raise DomainError("cell integrals must have one entry per grid cell")
    return vals


def greedy_density(score, widths, cap):
    """Cellwise density ``0 <= h <= cap`` with unit mass on the largest ``score / width``."""
    order = np.argsort(-score / widths, kind="stable")
    h = np.zeros_like(widths)
    mass = 1.0
    for j in order:
        take = min(cap * widths[j], mass)
        h[j] = take / widths[j]
        mass -= take
        if mass <= 0:
            break
    return h


@dataclass
class RatioProgramResult:
    value: float
    density: np.ndarray = field(repr=False)
    threshold: float = 0.0


def solve_ratio_program(g, f, n_bound: float, edges=None, iterations: int = 60) -> RatioProgramResult:
    """Maximize ``int g h / int f h`` over cellwise densities bounded by ``n_bound``.

    ``g`` and ``f`` are callables (midpoint rule) or arrays of per-cell
    integrals on ``edges``.  For fixed ``t`` the inner problem
    ``max int (g - t f) h`` is a fractional knapsack solved greedily; the
    optimal ratio is the root in ``t``, located by bisection.
    """
    edges = log_grid() if edges is None else np.asarray(edges, dtype=float)
    widths = np.diff(edges)
    if n_bound * widths.sum() < 1.0:
        raise DomainError(f"no density on the grid is bounded by {n_bound}")
    G, F = _cell_values(g, edges), _cell_values(f, edges)
    if np.any(F < 0) or np.any(G < 0) or not np.any(F > 0):
        raise DomainError("g and f must be nonnegative and f not identically zero")

    def ratio(h):
        return float(h @ G / (h @ F))

    pos = F > 0
    lo, hi = float(np.min(G[pos] / F[pos])), float(np.max(G[pos] / F[pos]))
    best_h = greedy_density(G - lo * F, widths, n_bound)
    best = ratio(best_h)
    lo = max(lo, best)
    for _ in range(iterations):
        t = 0.5 * (lo + hi)
        h = greedy_density(G - t * F, widths, n_bound)
        if h @ (G - t * F) > 0:
            val = ratio(h)
            if val > best:
                best, best_h = val, h
            lo = max(t, val)
        else:
            hi = t
        if hi - lo <= 1e-15 * hi:
            break
    return RatioProgramResult(best, best_h, lo)


def sup_ratio_bounded_density(g, f, n_bound: float, edges=None) -> float:
    """Supremum of ``int g h / int f h`` over probability densities bounded by ``n_bound``."""
    return solve_ratio_program(g, f, n_bound, edges).value
