"""Parametric spectral-density families for stationary Gaussian arrays.

Every family maps a parameter vector ``theta`` and a sample size ``n`` to the
stage-``n`` spectral density ``f_n^theta`` on ``(-pi, pi)``, normalized so that
``gamma_k = int exp(i k lam) f(lam) dlam`` is the lag-``k`` autocovariance.

Four families are provided:

=================  ==========================  ==============================
id                 parameters                  stage
=================  ==========================  ==============================
``mixed_fbm``      (H1, sigma1^2, H2, sigma2^2) mesh ``Delta_n = T / n``
``fou``            (kappa, H, sigma^2)          ``T_n = C Delta_n^-beta``
``ar1_mild``       (c, sigma^2)                 ``phi_n = 1 - c a_n``
``white_noise``    (sigma^2,)                   none
=================  ==========================  ==============================
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import sparse, special

from ._quadrature import TWO_PI, fold_sum, panel_rule
from .exceptions import DomainError, ParameterError, UnsupportedModelError

#: strict-inequality margin for the open parameter spaces (shape parameters;
#: variances only need to be positive)
MARGIN = 1e-10


# ---------------------------------------------------------------------------
# increments of fractional Brownian motion
# ---------------------------------------------------------------------------

def _check_hurst(H):
    if not (0.0 < H < 1.0):
        raise DomainError(f"Hurst index must lie in (0, 1), got {H!r}")


def _check_freq(lam):
    lam = np.asarray(lam, dtype=float)
    if np.any(lam == 0.0):
        raise DomainError("spectral density is undefined at frequency 0")
    if np.any(np.abs(lam) > math.pi):
        raise DomainError("frequencies must lie in (-pi, pi)")
    # every symbol is even, so evaluate on |lam| to make that exact
    return np.abs(lam)


def fbm_constant(H, order=0):
    """``C_H = Gamma(2H+1) sin(pi H) / pi`` and its first two H-derivatives."""
    c = special.gamma(2 * H + 1) * math.sin(math.pi * H) / math.pi
    if order == 0:
        return c
    dlog = 2 * special.digamma(2 * H + 1) + math.pi / math.tan(math.pi * H)
    if order == 1:
        return c * dlog
    if order == 2:
        d2log = 4 * special.polygamma(1, 2 * H + 1) - (math.pi / math.sin(math.pi * H)) ** 2
        return c * (dlog**2 + d2log)
    raise ValueError("order must be 0, 1 or 2")


def _fbm_sums(H, lam, jmax):
    s = 1.0 + 2.0 * H
    return [fold_sum(lam, (lambda u, j=j: u ** (-s) * np.log(u) ** j), [(1.0, s, j)])
            for j in range(jmax + 1)]


def fbm_increment_density(H, lam):
    """Spectral density of unit-variance fractional Gaussian noise.

    ``f_H(lam) = C_H (1 - cos lam) sum_k |2 pi k + lam|^(-1-2H)``.
    """
    _check_hurst(H)
    lam = _check_freq(lam)
    (s0,) = _fbm_sums(H, lam, 0)
    return fbm_constant(H) * 2.0 * np.sin(lam / 2) ** 2 * s0


def fbm_increment_density_dH(H, lam, order=1):
    """First or second derivative of :func:`fbm_increment_density` in ``H``."""
    _check_hurst(H)
    lam = _check_freq(lam)
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    one_minus_cos = 2.0 * np.sin(lam / 2) ** 2
    sums = _fbm_sums(H, lam, order)
    c0, c1 = fbm_constant(H), fbm_constant(H, 1)
    if order == 1:
        return one_minus_cos * (c1 * sums[0] - 2.0 * c0 * sums[1])
    c2 = fbm_constant(H, 2)
    return one_minus_cos * (c2 * sums[0] - 4.0 * c1 * sums[1] + 4.0 * c0 * sums[2])


def _fbm_all(H, lam):
    """(f_H, d_H f_H, d_H^2 f_H) sharing one set of lattice sums."""
    one_minus_cos = 2.0 * np.sin(lam / 2) ** 2
    s0, s1, s2 = _fbm_sums(H, lam, 2)
    c0, c1, c2 = fbm_constant(H), fbm_constant(H, 1), fbm_constant(H, 2)
    f = c0 * one_minus_cos * s0
    df = one_minus_cos * (c1 * s0 - 2.0 * c0 * s1)
    d2f = one_minus_cos * (c2 * s0 - 4.0 * c1 * s1 + 4.0 * c0 * s2)
    return f, df, d2f


def fgn_autocovariance(H, lags, order=0):
    """Closed-form fGN autocovariance ``(|k+1|^2H - 2|k|^2H + |k-1|^2H) / 2``.

    ``order`` selects the 0th, 1st or 2nd derivative in ``H``.
    """
    k = np.abs(np.asarray(lags, dtype=float))

    def term(x):
        x = np.abs(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            lg = np.where(x > 0, np.log(np.where(x > 0, x, 1.0)), 0.0)
            p = np.where(x > 0, x ** (2 * H), 0.0)
        return p * (2.0 * lg) ** order

    return 0.5 * (term(k + 1) - 2.0 * term(k) + term(k - 1))


# ---------------------------------------------------------------------------
# model interface
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelStage:
    """Sample-size dependent quantities of one array row."""

    n: int
    delta: Optional[float] = None
    span: Optional[float] = None
    a: Optional[float] = None


def _pole_exponent(alpha):
    return max(0.0, float(alpha))


class SpectralModel:
    """Base class for a parametric family ``(theta, n) -> f_n^theta``.

    Subclasses implement ``stage``, ``_check``, ``density``, ``gradient``,
    ``hessian``, ``rate_matrix``, ``limiting_fisher`` and ``alpha_hint``.
    Autocovariances default to quadrature of the symbol; families with closed
    forms override :meth:`autocovariance` and friends.
    """

    name: str = "abstract"
    param_names: tuple = ()
    #: power of ``log n`` in the derivative-integral bounds (0 for purely polynomial families)
    polylog_power: int = 0

    @property
    def dimension(self) -> int:
        return len(self.param_names)

    # -- parameter space ----------------------------------------------------
    def _check(self, theta) -> Optional[str]:
        raise NotImplementedError

    def contains(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dimension,) or not np.all(np.isfinite(theta)):
            return False
        return self._check(theta) is None

    def check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dimension,):
            raise ParameterError(
                f"{self.name}: expected {self.dimension} parameters, got shape {theta.shape}",
                theta)
        if not np.all(np.isfinite(theta)):
            raise ParameterError(f"{self.name}: non-finite parameter {theta}", theta)
        problem = self._check(theta)
        if problem is not None:
            raise ParameterError(f"{self.name}: theta={theta.tolist()} {problem}", theta)
        return theta

    def contains_at(self, theta, n) -> bool:
        """Membership including stage-dependent constraints."""
        if not self.contains(theta):
            return False
        try:
            self._check_stage(np.asarray(theta, dtype=float), n)
        except ParameterError:
            return False
        return True

    def _check_stage(self, theta, n):
        pass

    # -- stage --------------------------------------------------------------
    def stage(self, n) -> ModelStage:
        n = int(n)
        if n < 1:
            raise DomainError("sample size must be a positive integer")
        return ModelStage(n)

    # -- symbol and derivatives ---------------------------------------------
    def density(self, theta, n, lam):
        raise NotImplementedError

    def gradient(self, theta, n, lam):
        raise NotImplementedError

    def hessian(self, theta, n, lam):
        raise NotImplementedError

    def alpha_hint(self, theta, n) -> float:
        """Exponent of the strongest pole of the symbol at the origin (>= 0)."""
        return 0.0

    def ratio_alpha_hint(self, theta, n) -> float:
        """Pole exponent of ``(d_j f)(d_k f) / f^2``, used by Whittle-type integrals."""
        return 0.0

    def precision_matrix(self, theta, n):
        """Sparse inverse of ``T_n(f)`` when known in closed form, else ``None``."""
        return None

    # -- asymptotics --------------------------------------------------------
    def rate_matrix(self, theta0, n) -> np.ndarray:
        raise NotImplementedError

    def limiting_fisher(self, theta) -> np.ndarray:
        raise NotImplementedError

    # -- autocovariances ----------------------------------------------------
    def _rule(self, theta, n, nlags):
        return panel_rule(max(nlags - 1, 1), _pole_exponent(self.alpha_hint(theta, n)))

    def autocovariance(self, theta, n, nlags=None):
        """Lags ``0..nlags-1`` of the stage-``n`` autocovariance."""
        theta = self.check_theta(theta)
        nlags = n if nlags is None else nlags
        rule = self._rule(theta, n, nlags)
        return rule.cosine_moments(self.density(theta, n, rule.nodes), nlags)

    def autocovariance_gradient(self, theta, n, nlags=None):
        """``(M, nlags)`` array of ``d gamma_k / d theta_j``."""
        theta = self.check_theta(theta)
        nlags = n if nlags is None else nlags
        rule = self._rule(theta, n, nlags)
        return rule.cosine_moments(self.gradient(theta, n, rule.nodes), nlags)

    def autocovariance_hessian(self, theta, n, nlags=None):
        """``(M, M, nlags)`` array of second derivatives of the autocovariance."""
        theta = self.check_theta(theta)
        nlags = n if nlags is None else nlags
        rule = self._rule(theta, n, nlags)
        return rule.cosine_moments(self.hessian(theta, n, rule.nodes), nlags)

    # closed-form likelihood hook (None when the family has none)
    exact_loglik = None

    def __repr__(self):
        return f"{type(self).__name__}()"


def _fd_hessian(grad_fn, theta, step=1e-5):
    """Central differences of an analytic gradient; returns (M, M, ...)."""
    theta = np.asarray(theta, dtype=float)
    cols = []
    for j in range(theta.size):
        h = step * (1.0 + abs(theta[j]))
        tp, tm = theta.copy(), theta.copy()
        tp[j] += h
        tm[j] -= h
        cols.append((grad_fn(tp) - grad_fn(tm)) / (2 * h))
    hess = np.stack(cols, axis=1)
    return 0.5 * (hess + np.swapaxes(hess, 0, 1))


# ---------------------------------------------------------------------------
# mixed fractional Brownian motion
# ---------------------------------------------------------------------------

class MixedFBM(SpectralModel):
    """Increments of ``sigma1 B^H1 + sigma2 B^H2`` sampled on ``[0, T]`` at mesh ``T/n``."""

    name = "mixed_fbm"
    param_names = ("H1", "sigma1_sq", "H2", "sigma2_sq")
    polylog_power = 6

    def __init__(self, span=1.0):
        if span <= 0:
            raise DomainError("span must be positive")
        self.span = float(span)

    def __repr__(self):
        return f"MixedFBM(span={self.span})"

    def _check(self, theta):
        h1, s1, h2, s2 = theta
        if not (MARGIN < h1 and h1 + MARGIN < h2 and h2 < 1 - MARGIN):
            return "requires 0 < H1 < H2 < 1"
        if not (h2 - h1 < 0.25 - MARGIN):
            return "requires H2 - H1 < 1/4"
        if not (s1 > 0 and s2 > 0):
            return "requires positive variances"
        return None

    def stage(self, n):
        n = int(n)
        if n < 1:
            raise DomainError("sample size must be a positive integer")
        return ModelStage(n, delta=self.span / n, span=self.span)

    def _parts(self, theta, n, lam):
        theta = self.check_theta(theta)
        lam = _check_freq(lam)
        delta = self.stage(n).delta
        out = []
        for h, s in ((theta[0], theta[1]), (theta[2], theta[3])):
            f, df, d2f = _fbm_all(h, lam)
            out.append((h, s, delta ** (2 * h), f, df, d2f))
        return out, math.log(1.0 / delta)

    def density(self, theta, n, lam):
        parts, _ = self._parts(theta, n, lam)
        return sum(s * scale * f for _, s, scale, f, _, _ in parts)

    def gradient(self, theta, n, lam):
        parts, logd = self._parts(theta, n, lam)
        rows = []
        for _, s, scale, f, df, _ in parts:
            rows.append(s * scale * (df - 2 * logd * f))
            rows.append(scale * f)
        return np.stack(rows)

    def hessian(self, theta, n, lam):
        parts, logd = self._parts(theta, n, lam)
        lam = np.asarray(lam, dtype=float)
        hess = np.zeros((4, 4) + lam.shape)
        for b, (_, s, scale, f, df, d2f) in enumerate(parts):
            i = 2 * b
            hess[i, i] = s * scale * (d2f - 4 * logd * df + 4 * logd**2 * f)
            hess[i, i + 1] = hess[i + 1, i] = scale * (df - 2 * logd * f)
        return hess

    def alpha_hint(self, theta, n):
        return max(0.0, 2 * theta[2] - 1, 2 * theta[0] - 1)

    def ratio_alpha_hint(self, theta, n):
        return _pole_exponent(4 * (theta[2] - theta[0]))

    # closed-form autocovariances of the fGN components
    def _acf_parts(self, theta, n, nlags):
        theta = self.check_theta(theta)
        lags = np.arange(n if nlags is None else nlags)
        delta = self.stage(n).delta
        logd = math.log(1.0 / delta)
        out = []
        for h, s in ((theta[0], theta[1]), (theta[2], theta[3])):
            g = [fgn_autocovariance(h, lags, k) for k in range(3)]
            out.append((s, delta ** (2 * h), g))
        return out, logd

    def autocovariance(self, theta, n, nlags=None):
        parts, _ = self._acf_parts(theta, n, nlags)
        return sum(s * scale * g[0] for s, scale, g in parts)

    def autocovariance_gradient(self, theta, n, nlags=None):
        parts, logd = self._acf_parts(theta, n, nlags)
        rows = []
        for s, scale, g in parts:
            rows.append(s * scale * (g[1] - 2 * logd * g[0]))
            rows.append(scale * g[0])
        return np.stack(rows)

    def autocovariance_hessian(self, theta, n, nlags=None):
        parts, logd = self._acf_parts(theta, n, nlags)
        size = parts[0][2][0].size
        hess = np.zeros((4, 4, size))
        for b, (s, scale, g) in enumerate(parts):
            i = 2 * b
            hess[i, i] = s * scale * (g[2] - 4 * logd * g[1] + 4 * logd**2 * g[0])
            hess[i, i + 1] = hess[i + 1, i] = scale * (g[1] - 2 * logd * g[0])
        return hess

    def rate_matrix(self, theta0, n):
        theta0 = self.check_theta(theta0)
        delta = self.stage(n).delta
        logd = math.log(1.0 / delta)
        root = math.sqrt(delta)

        def block(s):
            return np.array([[root, 0.0], [2 * s * root * logd, root]])

        rate = np.zeros((4, 4))
        rate[:2, :2] = block(theta0[1])
        rate[2:, 2:] = block(theta0[3]) * delta ** (-2 * (theta0[2] - theta0[0]))
        return rate

    def limiting_fisher(self, theta):
        h1, s1, h2, s2 = self.check_theta(theta)
        rule = panel_rule(1, _pole_exponent(4 * (h2 - h1)))
        lam = rule.nodes
        f1, df1, _ = _fbm_all(h1, lam)
        f2, df2, _ = _fbm_all(h2, lam)
        v = np.stack([s1 * df1, f1, s2 * df2, f2]) / f1
        outer = v[:, None, :] * v[None, :, :]
        # symmetric integrand: int_{-pi}^{pi} = 2 int_0^pi
        return self.span / (4 * math.pi * s1**2) * 2.0 * rule.integrate(outer)


# ---------------------------------------------------------------------------
# fractional Ornstein-Uhlenbeck under infill + long span
# ---------------------------------------------------------------------------

def fou_constant(H, order=0):
    """``C(H) = Gamma(2H+1) sin(pi H)`` (no 1/pi) and derivatives."""
    return math.pi * fbm_constant(H, order)


class FractionalOU(SpectralModel):
    """Stationary fOU ``dX = -kappa X dt + sigma dB^H`` sampled at mesh ``Delta_n``.

    The span grows as ``T_n = C Delta_n^-beta`` and ``n = T_n / Delta_n``, so
    ``Delta_n = (n / C)^(-1 / (1 + beta))``.  Parameters are ordered
    ``(kappa, H, sigma^2)``.
    """

    name = "fou"
    param_names = ("kappa", "H", "sigma_sq")
    polylog_power = 6

    def __init__(self, beta=0.5, span_constant=1.0, span_rule: Optional[Callable] = None):
        if beta <= 0 or span_constant <= 0:
            raise DomainError("span rule needs C, beta > 0")
        self.beta = float(beta)
        self.span_constant = float(span_constant)
        self.span_rule = span_rule

    def __repr__(self):
        return f"FractionalOU(beta={self.beta}, span_constant={self.span_constant})"

    def _check(self, theta):
        kappa, h, s = theta
        if not kappa > MARGIN:
            return "requires kappa > 0"
        if not (MARGIN < h < 1 - MARGIN):
            return "requires 0 < H < 1"
        if not s > 0:
            return "requires sigma^2 > 0"
        return None

    def regularity_margin(self, H):
        """``1 + beta/4 - 5H + 2H^2``; positive values satisfy the span condition."""
        return 1.0 + self.beta / 4.0 - 5.0 * H + 2.0 * H**2

    def validate_span_condition(self, theta):
        margin = self.regularity_margin(float(theta[1]))
        if margin <= 0:
            warnings.warn(
                f"fou: 1 + beta/4 - 5H + 2H^2 = {margin:.4f} <= 0 at H={theta[1]}, "
                f"beta={self.beta}; the span grows too slowly for the regularity bounds",
                RuntimeWarning, stacklevel=2)
        return margin > 0

    def stage(self, n):
        n = int(n)
        if n < 1:
            raise DomainError("sample size must be a positive integer")
        if self.span_rule is None:
            delta = (n / self.span_constant) ** (-1.0 / (1.0 + self.beta))
            span = n * delta
        else:
            delta, span = self.span_rule(n)
        return ModelStage(n, delta=delta, span=span)

    def _setup(self, theta, n, lam):
        theta = self.check_theta(theta)
        lam = _check_freq(lam)
        st = self.stage(n)
        kappa, h, s = theta
        cd = kappa * st.delta
        pref = s / TWO_PI * fou_constant(h) * st.delta ** (2 * h)
        return theta, lam, st, cd, pref

    @staticmethod
    def _phi_terms(h, cd, power, scale, log_power=0, nterms=3):
        # u^(1-2H) / (cd^2 + u^2)^power expanded in cd^2 / u^2 for the tail
        base = 2 * power - 1 + 2 * h
        terms = []
        for m in range(nterms):
            coef = (-1) ** m * math.comb(power + m - 1, m) * cd ** (2 * m)
            terms.append((scale * coef, base + 2 * m, log_power))
        return terms

    def _sum(self, lam, h, cd, power, log_power=0):
        def summand(u):
            val = u ** (1 - 2 * h) / (cd**2 + u**2) ** power
            return val * np.log(u) ** log_power if log_power else val
        return fold_sum(lam, summand, self._phi_terms(h, cd, power, 1.0, log_power))

    def density(self, theta, n, lam):
        theta, lam, st, cd, pref = self._setup(theta, n, lam)
        return pref * self._sum(lam, theta[1], cd, 1)

    def gradient(self, theta, n, lam):
        theta, lam, st, cd, pref = self._setup(theta, n, lam)
        kappa, h, s = theta
        s0 = self._sum(lam, h, cd, 1)
        f = pref * s0
        d_kappa = pref * (-2 * kappa * st.delta**2) * self._sum(lam, h, cd, 2)
        dlogc = fou_constant(h, 1) / fou_constant(h)
        d_h = (dlogc + 2 * math.log(st.delta)) * f + pref * (-2.0) * self._sum(lam, h, cd, 1, 1)
        return np.stack([d_kappa, d_h, f / s])

    def hessian(self, theta, n, lam):
        theta = self.check_theta(theta)
        lam = np.asarray(lam, dtype=float)
        return _fd_hessian(lambda t: self.gradient(t, n, lam), theta)

    def autocovariance_hessian(self, theta, n, nlags=None):
        theta = self.check_theta(theta)
        return _fd_hessian(lambda t: self.autocovariance_gradient(t, n, nlags), theta)

    def alpha_hint(self, theta, n):
        return max(0.0, 2 * theta[1] - 1)

    def rate_matrix(self, theta0, n):
        theta0 = self.check_theta(theta0)
        st = self.stage(n)
        r = (st.span / st.delta) ** -0.5
        return np.array([
            [st.span ** -0.5, 0.0, 0.0],
            [0.0, r, 0.0],
            [0.0, 2 * theta0[2] * r * math.log(1.0 / st.delta), r],
        ])

    @staticmethod
    def score_profile(H, lam):
        """``F_H(lam)``: the H-score of the limiting profile, i.e. ``d_H log f_H``."""
        f, df, _ = _fbm_all(H, np.asarray(lam, dtype=float))
        return df / f

    def limiting_fisher(self, theta):
        kappa, h, s = self.check_theta(theta)
        rule = panel_rule(1, 0.0)
        prof = self.score_profile(h, rule.nodes)
        ints = 2.0 * rule.integrate(np.stack([prof**2, prof, np.ones_like(prof)]))
        fisher = np.zeros((3, 3))
        fisher[0, 0] = 1.0 / (2 * kappa)
        fisher[1, 1] = ints[0] / (4 * math.pi)
        fisher[1, 2] = fisher[2, 1] = ints[1] / (4 * math.pi * s)
        fisher[2, 2] = ints[2] / (4 * math.pi * s**2)
        return fisher


# ---------------------------------------------------------------------------
# mildly integrated AR(1)
# ---------------------------------------------------------------------------

def power_rule(alpha):
    """``a_n = n^-alpha``."""
    def rule(n):
        return float(n) ** (-alpha)
    rule.alpha = alpha
    return rule


def constant_rule(a):
    def rule(n):
        return float(a)
    rule.alpha = 0.0
    return rule


class MildAR1(SpectralModel):
    """AR(1) with coefficient ``phi_n = 1 - c a_n`` and innovation variance ``sigma^2``."""

    name = "ar1_mild"
    param_names = ("c", "sigma_sq")

    def __init__(self, a_rule: Optional[Callable] = None, alpha=0.15):
        self.a_rule = a_rule if a_rule is not None else power_rule(alpha)

    def __repr__(self):
        alpha = getattr(self.a_rule, "alpha", None)
        return f"MildAR1(alpha={alpha})"

    def _check(self, theta):
        c, s = theta
        if not c > MARGIN:
            return "requires c > 0"
        if not s > 0:
            return "requires sigma^2 > 0"
        return None

    def stage(self, n):
        n = int(n)
        if n < 1:
            raise DomainError("sample size must be a positive integer")
        a = float(self.a_rule(n))
        if not (0.0 < a < 1.0):
            raise DomainError(f"a_n must lie in (0, 1), got {a}")
        if getattr(self.a_rule, "alpha", 1.0) > 0 and n * a <= 1.0:
            raise DomainError(f"mild integration requires n a_n > 1, got {n * a}")
        return ModelStage(n, a=a)

    def _check_stage(self, theta, n):
        a = self.stage(n).a
        if theta[0] * a >= 1.0 - MARGIN:
            raise ParameterError(
                f"ar1_mild: c a_n = {theta[0] * a:.6g} >= 1 is not stationary", theta)

    def phi(self, theta, n):
        theta = self.check_theta(theta)
        self._check_stage(theta, n)
        return 1.0 - theta[0] * self.stage(n).a

    def _setup(self, theta, n, lam):
        theta = self.check_theta(theta)
        self._check_stage(theta, n)
        lam = np.asarray(lam, dtype=float)
        a = self.stage(n).a
        phi = 1.0 - theta[0] * a
        denom = 1.0 - 2 * phi * np.cos(lam) + phi**2
        return theta, lam, a, phi, denom

    def density(self, theta, n, lam):
        theta, lam, a, phi, denom = self._setup(theta, n, lam)
        return theta[1] / TWO_PI / denom

    def gradient(self, theta, n, lam):
        theta, lam, a, phi, denom = self._setup(theta, n, lam)
        diff = phi - np.cos(lam)
        d_c = theta[1] / TWO_PI * 2 * a * diff / denom**2
        return np.stack([d_c, 1.0 / (TWO_PI * denom)])

    def hessian(self, theta, n, lam):
        theta, lam, a, phi, denom = self._setup(theta, n, lam)
        diff = phi - np.cos(lam)
        hess = np.zeros((2, 2) + lam.shape)
        hess[0, 0] = -theta[1] * a**2 / math.pi * (1.0 / denom**2 - 4 * diff**2 / denom**3)
        hess[0, 1] = hess[1, 0] = 2 * a * diff / (TWO_PI * denom**2)
        return hess

    # gamma_k = sigma^2 phi^k / (1 - phi^2)
    def _acf_logs(self, theta, n, nlags):
        theta = self.check_theta(theta)
        self._check_stage(theta, n)
        a = self.stage(n).a
        phi = 1.0 - theta[0] * a
        k = np.arange(n if nlags is None else nlags, dtype=float)
        gamma = theta[1] * phi**k / (1.0 - phi**2)
        dlog = k / phi + 2 * phi / (1 - phi**2)
        d2log = -k / phi**2 + 2 * (1 + phi**2) / (1 - phi**2) ** 2
        return theta, a, gamma, dlog, d2log

    def autocovariance(self, theta, n, nlags=None):
        return self._acf_logs(theta, n, nlags)[2]

    def autocovariance_gradient(self, theta, n, nlags=None):
        theta, a, gamma, dlog, _ = self._acf_logs(theta, n, nlags)
        return np.stack([-a * gamma * dlog, gamma / theta[1]])

    def autocovariance_hessian(self, theta, n, nlags=None):
        theta, a, gamma, dlog, d2log = self._acf_logs(theta, n, nlags)
        hess = np.zeros((2, 2, gamma.size))
        hess[0, 0] = a**2 * gamma * (dlog**2 + d2log)
        hess[0, 1] = hess[1, 0] = -a * gamma * dlog / theta[1]
        return hess

    def precision_matrix(self, theta, n):
        c, s = self.check_theta(theta)
        phi = self.phi(theta, n)
        main = np.full(n, 1 + phi**2)
        main[0] = main[-1] = 1.0
        if n == 1:
            main[0] = 1 - phi**2
        off = np.full(n - 1, -phi)
        return sparse.diags([off, main, off], [-1, 0, 1], format="csr") / s

    def rate_matrix(self, theta0, n):
        self.check_theta(theta0)
        a = self.stage(n).a
        return np.diag([(n * a) ** -0.5, n ** -0.5])

    def limiting_fisher(self, theta):
        c, s = self.check_theta(theta)
        return np.diag([1.0 / (2 * c), 1.0 / (2 * s**2)])

    def exact_loglik(self, theta, n, x, derivatives=True):
        """Stationary AR(1) Gaussian log-likelihood with (c, sigma^2) derivatives.

        ``x`` has shape ``(n,)`` or ``(paths, n)``; the tridiagonal precision
        matrix gives all quantities in O(n).
        """
        theta = self.check_theta(theta)
        self._check_stage(theta, n)
        a = self.stage(n).a
        c, s = theta
        phi = 1.0 - c * a
        x = np.asarray(x, dtype=float)
        x1 = x[..., 0] ** 2
        sq = np.sum(x[..., 1:] ** 2, axis=-1)
        lagged = np.sum(x[..., :-1] ** 2, axis=-1)
        cross = np.sum(x[..., 1:] * x[..., :-1], axis=-1)
        q = (1 - phi**2) * x1 + sq - 2 * phi * cross + phi**2 * lagged
        ll = -0.5 * n * math.log(TWO_PI * s) + 0.5 * math.log(1 - phi**2) - q / (2 * s)
        if not derivatives:
            return ll
        dq = -2 * phi * x1 - 2 * cross + 2 * phi * lagged
        d2q = 2 * (lagged - x1)
        dl_phi = -phi / (1 - phi**2) - dq / (2 * s)
        d2l_phi = -(1 + phi**2) / (1 - phi**2) ** 2 - d2q / (2 * s)
        dl_s = -n / (2 * s) + q / (2 * s**2)
        d2l_s = n / (2 * s**2) - q / s**3
        d2l_phi_s = dq / (2 * s**2)
        grad = np.stack([-a * dl_phi, dl_s], axis=-1)
        hess = np.empty(np.shape(ll) + (2, 2))
        hess[..., 0, 0] = a**2 * d2l_phi
        hess[..., 0, 1] = hess[..., 1, 0] = -a * d2l_phi_s
        hess[..., 1, 1] = d2l_s
        return ll, grad, hess


# ---------------------------------------------------------------------------
# white noise
# ---------------------------------------------------------------------------

class WhiteNoise(SpectralModel):
    """``f = sigma^2 / (2 pi)``; the baseline for trace and likelihood identities."""

    name = "white_noise"
    param_names = ("sigma_sq",)

    def _check(self, theta):
        return None if theta[0] > 0 else "requires sigma^2 > 0"

    def density(self, theta, n, lam):
        theta = self.check_theta(theta)
        return np.full(np.shape(lam), theta[0] / TWO_PI)

    def gradient(self, theta, n, lam):
        self.check_theta(theta)
        return np.full((1,) + np.shape(lam), 1.0 / TWO_PI)

    def hessian(self, theta, n, lam):
        self.check_theta(theta)
        return np.zeros((1, 1) + np.shape(lam))

    def autocovariance(self, theta, n, nlags=None):
        theta = self.check_theta(theta)
        gamma = np.zeros(n if nlags is None else nlags)
        gamma[0] = theta[0]
        return gamma

    def autocovariance_gradient(self, theta, n, nlags=None):
        self.check_theta(theta)
        grad = np.zeros((1, n if nlags is None else nlags))
        grad[0, 0] = 1.0
        return grad

    def autocovariance_hessian(self, theta, n, nlags=None):
        self.check_theta(theta)
        return np.zeros((1, 1, n if nlags is None else nlags))

    def precision_matrix(self, theta, n):
        (s,) = self.check_theta(theta)
        return sparse.identity(n, format="csr") / s

    def rate_matrix(self, theta0, n):
        self.check_theta(theta0)
        return np.array([[n ** -0.5]])

    def limiting_fisher(self, theta):
        (s,) = self.check_theta(theta)
        return np.array([[1.0 / (2 * s**2)]])

    def exact_loglik(self, theta, n, x, derivatives=True):
        (s,) = self.check_theta(theta)
        x = np.asarray(x, dtype=float)
        ss = np.sum(x**2, axis=-1)
        ll = -0.5 * n * math.log(TWO_PI * s) - ss / (2 * s)
        if not derivatives:
            return ll
        grad = (-n / (2 * s) + ss / (2 * s**2))[..., None]
        hess = (n / (2 * s**2) - ss / s**3)[..., None, None]
        return ll, grad, hess


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

def mixed_fbm_model(span=1.0) -> MixedFBM:
    return MixedFBM(span=span)


def fou_model(beta=0.5, span_constant=1.0, span_rule=None) -> FractionalOU:
    return FractionalOU(beta=beta, span_constant=span_constant, span_rule=span_rule)


def mildly_integrated_ar1_model(a_rule=None, alpha=0.15) -> MildAR1:
    return MildAR1(a_rule=a_rule, alpha=alpha)


def white_noise_model() -> WhiteNoise:
    return WhiteNoise()


MODEL_IDS = ("mixed_fbm", "fou", "ar1_mild", "white_noise")


def make_model(model_id: str, **params) -> SpectralModel:
    """Build a model from its string id and stage-rule parameters.

    ``ar1_mild`` accepts ``alpha`` (``a_n = n^-alpha``) or ``a`` (constant
    ``a_n``, i.e. a fixed stationary AR(1)); ``fou`` accepts ``beta`` and
    ``span_constant``; ``mixed_fbm`` accepts ``span``.
    """
    if model_id == "mixed_fbm":
        return MixedFBM(span=params.get("span", 1.0))
    if model_id == "fou":
        return FractionalOU(beta=params.get("beta", 0.5),
                            span_constant=params.get("span_constant", 1.0))
    if model_id == "ar1_mild":
        if "a" in params:
            return MildAR1(a_rule=constant_rule(params["a"]))
        return MildAR1(alpha=params.get("alpha", 0.15))
    if model_id == "white_noise":
        return WhiteNoise()
    raise UnsupportedModelError(f"unknown model id {model_id!r}")


# ---------------------------------------------------------------------------
# envelope tables for the trace-approximation machinery
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Membership:
    """Claim ``|h| + |lam h'| <= coef |lam|^(-exponent - eps) L(eps)`` on ``(0, pi)``."""

    label: str
    func: Callable
    coef: float
    exponent: float


@dataclass(frozen=True)
class EnvelopeTable:
    """Power-law envelopes of a symbol ``f = sum_i f_i`` and of ``1/f = sum_k fbar_k``.

    Index arrays have shape ``(m, q)`` and are 0-based: ``k_prime[i, k]`` is
    the column paired with row ``i`` when bounding the ``k``-th piece of
    ``1/f``.  Coefficients depend on ``n`` through :meth:`coefficients`, which
    returns ``(c, c_bar, d)``; ``d`` and ``beta`` describe the numerator
    symbol ``g`` and default to ``c`` and ``alpha`` (``g`` a derivative of
    ``f``).
    """

    model: str
    alpha: np.ndarray
    alpha_bar: np.ndarray
    coefficient_fn: Callable
    k_prime: np.ndarray
    k_ast: np.ndarray
    i_prime: Optional[np.ndarray] = None
    i_ast: Optional[np.ndarray] = None
    i_star: Optional[np.ndarray] = None
    k_star: Optional[np.ndarray] = None
    beta: Optional[np.ndarray] = None
    constant: float = 10.0
    slowly_varying: bool = False
    z: Optional[float] = None
    membership_fn: Optional[Callable] = None
    rate_norm_fn: Optional[Callable] = None
    exponent_fn: Optional[Callable] = None

    def __post_init__(self):
        alpha = np.atleast_2d(np.asarray(self.alpha, dtype=float))
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "alpha_bar", np.atleast_2d(np.asarray(self.alpha_bar, dtype=float)))
        rows = np.repeat(np.arange(alpha.shape[0])[:, None], alpha.shape[1], axis=1)
        for name in ("i_prime", "i_ast", "i_star"):
            if getattr(self, name) is None:
                object.__setattr__(self, name, rows.copy())
        if self.k_star is None:
            object.__setattr__(self, "k_star", np.asarray(self.k_ast))
        if self.beta is None:
            object.__setattr__(self, "beta", alpha)
        for name in ("k_prime", "k_ast", "k_star", "i_prime", "i_ast", "i_star"):
            arr = np.atleast_2d(np.asarray(getattr(self, name), dtype=int))
            object.__setattr__(self, name, arr)
        if self.alpha_bar.shape != alpha.shape:
            raise ValueError("alpha and alpha_bar must share the (m, q) shape")

    @property
    def m(self) -> int:
        return self.alpha.shape[0]

    @property
    def q(self) -> int:
        return self.alpha.shape[1]

    def coefficients(self, n):
        c, c_bar, *rest = self.coefficient_fn(n)
        c = np.atleast_2d(np.asarray(c, dtype=float))
        c_bar = np.atleast_2d(np.asarray(c_bar, dtype=float))
        d = np.atleast_2d(np.asarray(rest[0], dtype=float)) if rest else c
        return c, c_bar, d

    def L(self, eps):
        """Slowly varying factor; logarithmic tables use ``(1/(e eps^3)) v pi^eps``."""
        if self.slowly_varying:
            return self.constant * max(1.0 / (math.e * eps**3), math.pi**eps)
        return self.constant

    def memberships(self, n):
        return [] if self.membership_fn is None else self.membership_fn(n)

    def rate_norm(self, n):
        return None if self.rate_norm_fn is None else self.rate_norm_fn(n)

    def exponents_at(self, theta):
        """``(alpha, alpha_bar)`` at a nearby parameter, for continuity checks."""
        if self.exponent_fn is None:
            return self.alpha, self.alpha_bar
        a, ab = self.exponent_fn(theta)
        return np.atleast_2d(a), np.atleast_2d(ab)


def _spectral_norm(model, theta):
    return lambda n: float(np.linalg.norm(model.rate_matrix(theta, n), 2))


def _grid_piece(fn):
    # restrict symbol evaluators to the positive half-line used by the audits
    return lambda lam: fn(np.asarray(lam, dtype=float))


def _ar1_table(model, theta, eta, constant):
    c, s = model.check_theta(theta)
    # z > 1/2 + eta/2 keeps the interpolation exponent 2(1 - z) below 1 - eta
    z = 0.5 + eta

    def exps(th):
        return np.array([[0.0, 2.0, 2 * (1 - z)]]), np.array([[0.0, 2.0, 2.0]])

    def coef(n):
        # the density carries 1/(2 pi), so the coefficients do too
        ca = c * model.stage(n).a
        w = s / TWO_PI
        return ([[w * ca**-2, w, w * ca ** (-2 * z)]], [[w * ca**-2, w, w]])

    def members(n):
        cc, cb = [np.ravel(x) for x in coef(n)]
        phi = model.phi(theta, n)
        f = _grid_piece(lambda lam: model.density(theta, n, lam))
        inv1 = lambda lam: np.full(np.shape(lam), TWO_PI * (1 - phi) ** 2 / s)
        inv2 = lambda lam: 4 * TWO_PI * phi * np.sin(lam / 2) ** 2 / s
        alpha, alpha_bar = exps(theta)
        out = [Membership(f"f in G1(c_1{k + 1})", f, cc[k], alpha[0, k]) for k in range(3)]
        out.append(Membership("1/f piece 1", inv1, 1.0 / cb[0], -alpha_bar[0, 0]))
        out.append(Membership("1/f piece 2", inv2, 1.0 / cb[1], -alpha_bar[0, 1]))
        return out

    alpha, alpha_bar = exps(theta)
    return EnvelopeTable(
        model=model.name, alpha=alpha, alpha_bar=alpha_bar, coefficient_fn=coef,
        k_prime=[[0, 1, 1]], k_ast=[[0, 2, 2]], constant=constant, z=z,
        membership_fn=members, rate_norm_fn=_spectral_norm(model, theta), exponent_fn=exps)


def _fou_table(model, theta, eta, constant):
    kappa, h, s = model.check_theta(theta)
    # z > H + eta/2 keeps the interpolation exponent 2H + 1 - 2z below 1 - eta
    z = h + eta

    def exps(th):
        hh = th[1]
        return (np.array([[2 * hh - 1, 2 * hh + 1, 2 * hh + 1 - 2 * z]]),
                np.array([[2 * hh - 1, 2 * hh + 1, 2 * hh + 1]]))

    def coef(n):
        delta = model.stage(n).delta
        base = s * fou_constant(h)
        logs = abs(math.log(delta)) ** 3
        c1 = base / (kappa**2 * delta ** (2 - 2 * h))
        c2 = base * delta ** (2 * h)
        c3 = base / kappa ** (2 * z) * delta ** (1 - 3 * z + 2 * h * z)
        return ([[c1 * logs, c2 * logs, c3 * logs]], [[c1, c2, c2]])

    def members(n):
        cc, cb = [np.ravel(x) for x in coef(n)]
        delta = model.stage(n).delta
        cd2 = (kappa * delta) ** 2
        f = _grid_piece(lambda lam: model.density(theta, n, lam))
        inv1 = lambda lam: cd2 / (cd2 + lam**2) / model.density(theta, n, lam)
        inv2 = lambda lam: lam**2 / (cd2 + lam**2) / model.density(theta, n, lam)
        alpha, alpha_bar = exps(theta)
        out = [Membership(f"f in G1(c_1{k + 1})", f, cc[k], alpha[0, k]) for k in range(3)]
        out.append(Membership("1/f piece 1", inv1, 1.0 / cb[0], -alpha_bar[0, 0]))
        out.append(Membership("1/f piece 2", inv2, 1.0 / cb[1], -alpha_bar[0, 1]))
        return out

    alpha, alpha_bar = exps(theta)
    return EnvelopeTable(
        model=model.name, alpha=alpha, alpha_bar=alpha_bar, coefficient_fn=coef,
        k_prime=[[0, 1, 1]], k_ast=[[0, 2, 2]], constant=constant, slowly_varying=True,
        z=z, membership_fn=members, rate_norm_fn=_spectral_norm(model, theta), exponent_fn=exps)


def _mixed_fbm_table(model, theta, eta, constant):
    h1, s1, h2, s2 = model.check_theta(theta)

    def exps(th):
        a = np.array([[2 * th[0] - 1], [2 * th[2] - 1]])
        return a, a.copy()

    def coef(n):
        delta = model.stage(n).delta
        c = [[fbm_constant(h1) * s1 * delta ** (2 * h1)], [fbm_constant(h2) * s2 * delta ** (2 * h2)]]
        return c, c

    def members(n):
        delta = model.stage(n).delta
        logd = math.log(1.0 / delta)
        (c1,), (c2,) = coef(n)[0]
        out = []
        for i, (h, s, ci) in enumerate(((h1, s1, c1), (h2, s2, c2))):
            scale = delta ** (2 * h)
            piece = (lambda lam, h=h, s=s, sc=scale: s * sc * fbm_increment_density(h, lam))
            d_h = (lambda lam, h=h, s=s, sc=scale: s * sc * (
                fbm_increment_density_dH(h, lam) - 2 * logd * fbm_increment_density(h, lam)))
            d_s = (lambda lam, h=h, sc=scale: sc * fbm_increment_density(h, lam))
            grad_coef = fbm_constant(h) * max(s, 1.0) * delta ** (2 * h) * logd
            out.append(Membership(f"f_{i + 1} in G1(c_{i + 1}1)", piece, ci, 2 * h - 1))
            out.append(Membership(f"d_H f_{i + 1}", d_h, grad_coef, 2 * h - 1))
            out.append(Membership(f"d_sigma f_{i + 1}", d_s, grad_coef / max(s, 1.0), 2 * h - 1))
            inv = lambda lam: 1.0 / model.density(theta, n, lam)
            out.append(Membership(f"1/f in G1(1/cbar_{i + 1}1)", inv, 1.0 / ci, 1 - 2 * h))
        return out

    alpha, alpha_bar = exps(theta)
    return EnvelopeTable(
        model=model.name, alpha=alpha, alpha_bar=alpha_bar, coefficient_fn=coef,
        k_prime=[[0], [0]], k_ast=[[0], [0]], constant=constant, slowly_varying=True,
        membership_fn=members, rate_norm_fn=_spectral_norm(model, theta), exponent_fn=exps)


def _white_noise_table(model, theta, eta, constant):
    (s,) = model.check_theta(theta)

    def coef(n):
        return [[s / TWO_PI]], [[s / TWO_PI]]

    def members(n):
        f = lambda lam: np.full(np.shape(lam), s / TWO_PI)
        inv = lambda lam: np.full(np.shape(lam), TWO_PI / s)
        return [Membership("f", f, s / TWO_PI, 0.0), Membership("1/f", inv, TWO_PI / s, 0.0)]

    return EnvelopeTable(
        model=model.name, alpha=[[0.0]], alpha_bar=[[0.0]], coefficient_fn=coef,
        k_prime=[[0]], k_ast=[[0]], constant=constant, membership_fn=members,
        rate_norm_fn=_spectral_norm(model, theta))


_TABLES = {
    "ar1_mild": _ar1_table,
    "fou": _fou_table,
    "mixed_fbm": _mixed_fbm_table,
    "white_noise": _white_noise_table,
}


def envelope_table_for(model: SpectralModel, theta, eta=0.05, constant=10.0) -> EnvelopeTable:
    """Envelope table of ``model`` at ``theta``.

    ``eta`` sets the interpolation exponent ``z`` (``1/2 + eta/10`` for the
    AR(1) family, ``H + eta/10`` for fOU); ``constant`` is the multiplier in
    the slowly varying factor ``L``.
    """
    builder = _TABLES.get(getattr(model, "name", None))
    if builder is None:
        raise UnsupportedModelError(f"no envelope table for model {getattr(model, 'name', model)!r}")
    return builder(model, theta, eta, constant)
