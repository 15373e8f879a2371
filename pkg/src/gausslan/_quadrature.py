"""Low-level quadrature and lattice-sum helpers.

Two primitives live here:

* ``fold_sum`` evaluates periodized sums ``sum_k phi(|lam + 2 pi k|)`` for
  summands with power-log tails, using an explicit window plus an
  Euler-Maclaurin tail in closed form.
* ``PanelRule`` is a fixed composite Gauss-Legendre rule on ``(0, pi]`` with
  geometric refinement toward the origin, so that integrable power-law poles
  ``|lam|^-alpha`` and oscillating factors ``cos(k lam)`` are both resolved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

TWO_PI = 2.0 * math.pi

#: explicit window of the periodization sums
FOLD_WINDOW = 200
#: innermost geometric breakpoint of the panel rules
STUB = 1e-12


@lru_cache(maxsize=None)
def gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


# ---------------------------------------------------------------------------
# periodization sums
# ---------------------------------------------------------------------------

def _power_log_integral(u0, s, j):
    """int_{u0}^inf u^-s log(u)^j du for j in {0, 1, 2}, s > 1."""
    a = s - 1.0
    lg = np.log(u0)
    base = u0 ** (-a)
    if j == 0:
        return base / a
    if j == 1:
        return base * (lg / a + 1.0 / a**2)
    if j == 2:
        return base * (lg**2 / a + 2.0 * lg / a**2 + 2.0 / a**3)
    raise ValueError("log power must be 0, 1 or 2")


def _power_log(u, s, j):
    return u ** (-s) * np.log(u) ** j if j else u ** (-s)


def _power_log_deriv(u, s, j):
    lg = np.log(u)
    if j == 0:
        return -s * u ** (-s - 1.0)
    return u ** (-s - 1.0) * (j * lg ** (j - 1) - s * lg**j)


def _half_tail(b, s, j, window):
    """sum_{k > window} g(2 pi k + b), g(u) = u^-s log(u)^j (Euler-Maclaurin)."""
    u0 = TWO_PI * (window + 1) + b
    return (_power_log_integral(u0, s, j) / TWO_PI
            + 0.5 * _power_log(u0, s, j)
            - TWO_PI * _power_log_deriv(u0, s, j) / 12.0)


def power_log_tail(lam, s, j=0, window=FOLD_WINDOW):
    """sum over |k| > window of |lam + 2 pi k|^-s log|lam + 2 pi k|^j."""
    lam = np.asarray(lam, dtype=float)
    return _half_tail(lam, s, j, window) + _half_tail(-lam, s, j, window)


def fold_sum(lam, summand, tail_terms, window=FOLD_WINDOW):
    """Periodized sum of ``summand(u)`` over ``u = |lam + 2 pi k|``.

    ``summand`` must accept a 2-D array of ``u`` values.  Its large-``u``
    behaviour is described by ``tail_terms``, a list of ``(coef, s, j)``
    meaning ``coef * u^-s * log(u)^j``; the terms must capture the summand to
    relative accuracy far below the target beyond ``u = 2 pi window``.
    """
    lam = np.asarray(lam, dtype=float)
    k = np.arange(-window, window + 1, dtype=float)
    u = np.abs(lam[..., None] + TWO_PI * k)
    total = summand(u).sum(axis=-1)
    for coef, s, j in tail_terms:
        total = total + coef * power_log_tail(lam, s, j, window)
    return total


# ---------------------------------------------------------------------------
# composite rules on (0, pi]
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PanelRule:
    """Quadrature nodes/weights on (0, pi] with a power-law stub at the origin.

    The first node is the innermost breakpoint ``e0``; its weight integrates
    ``f(e0) (lam/e0)^-alpha`` over ``(0, e0)`` exactly.
    """

    nodes: np.ndarray
    weights: np.ndarray
    alpha: float

    @property
    def size(self) -> int:
        return self.nodes.size

    def integrate(self, values):
        """int_0^pi values(lam) dlam along the last axis."""
        return np.asarray(values) @ self.weights

    def cosine_moments(self, values, nlags, chunk=2048):
        """2 int_0^pi cos(k lam) values(lam) dlam for k = 0..nlags-1."""
        values = np.asarray(values, dtype=float)
        weighted = values * self.weights
        k = np.arange(nlags, dtype=float)
        out = np.zeros(values.shape[:-1] + (nlags,))
        for start in range(0, self.size, chunk):
            stop = min(start + chunk, self.size)
            c = np.cos(np.outer(self.nodes[start:stop], k))
            out += weighted[..., start:stop] @ c
        return 2.0 * out


def geometric_edges(stub=STUB):
    levels = math.ceil(math.log2(math.pi / stub))
    return math.pi * 2.0 ** -np.arange(levels, -1, -1, dtype=float)


@lru_cache(maxsize=64)
def _panel_layout(max_freq: int, order: int, budget: float, stub: float):
    edges = geometric_edges(stub)
    x, w = gauss_legendre(order)
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        pieces = max(1, math.ceil((b - a) * max(max_freq, 1) / budget))
        sub = np.linspace(a, b, pieces + 1)
        mid = 0.5 * (sub[1:] + sub[:-1])
        half = 0.5 * (sub[1:] - sub[:-1])
        nodes.append((mid[:, None] + half[:, None] * x).ravel())
        weights.append((half[:, None] * w).ravel())
    e0 = edges[0]
    nodes = np.concatenate([[e0], *nodes])
    weights = np.concatenate([[0.0], *weights])
    nodes.setflags(write=False)
    return nodes, weights


def panel_rule(max_freq: int, alpha: float = 0.0, order: int = 20,
               budget: float = 6.0, stub: float = STUB) -> PanelRule:
    """Composite rule resolving ``cos(max_freq * lam)`` and a pole ``lam^-alpha``.

    Every geometric interval ``[a, 2a]`` is split into equal sub-panels whose
    width times ``max_freq`` stays below ``budget`` radians.  The node layout
    does not depend on ``alpha``; only the stub weight does, so the rule is
    smooth in any parameter that moves the pole exponent.
    """
    if alpha >= 1.0:
        raise ValueError("alpha must be < 1 for an integrable pole")
    nodes, base = _panel_layout(int(max_freq), order, float(budget), float(stub))
    weights = base.copy()
    weights[0] = nodes[0] / (1.0 - alpha)
    weights.setflags(write=False)
    return PanelRule(nodes, weights, float(alpha))
