import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import linalg, optimize

from gausslan import (DomainError, InvalidTableError, SymbolError, delta_rates, envelope_table_for,
                      fourier_coefficients, half_norm_squared, make_model, mixed_fbm_model,
                      sup_ratio_bounded_density, trace_product, whittle_integral)
from gausslan.spectral_models import EnvelopeTable, fbm_increment_density
from gausslan.toeplitz import (AutocovarianceSequence, ToeplitzMatrix, build, log_grid,
                               solve_ratio_program, validate_table)

from conftest import fgn_acf

TWO_PI = 2 * math.pi


def ar1_symbol(phi, s=1.0):
    return lambda lam: s / TWO_PI / (1 - 2 * phi * np.cos(lam) + phi**2)


def fit_slope(ns, values):
    return np.polyfit(np.log(ns), np.log(values), 1)[0]


# -- Fourier coefficients ----------------------------------------------------------

def test_constant_symbol_coefficients():
    acf = fourier_coefficients(lambda lam: np.full_like(lam, 1 / TWO_PI), 4)
    assert np.allclose(acf.gamma, [1, 0, 0, 0], atol=1e-14)


def test_ar1_coefficients_oracle():
    acf = fourier_coefficients(ar1_symbol(0.5), 65)
    assert np.max(np.abs(acf.gamma - 4 / 3 * 0.5 ** np.arange(65))) <= 1e-8


def test_fgn_oracle_at_half_is_white():
    assert np.allclose(fgn_acf(0.5, np.arange(10)), np.eye(10)[0])
    acf = fourier_coefficients(lambda lam: fbm_increment_density(0.5, lam), 10)
    assert np.allclose(acf.gamma, np.eye(10)[0], atol=1e-10)


def test_fgn_coefficients_long_memory():
    acf = fourier_coefficients(lambda lam: fbm_increment_density(0.7, lam), 65, alpha_hint=0.4)
    assert np.max(np.abs(acf.gamma - fgn_acf(0.7, np.arange(65)))) <= 1e-8


def test_autocovariance_invariants():
    acf = fourier_coefficients(lambda lam: fbm_increment_density(0.3, lam), 32)
    assert acf.gamma[0] > 0
    assert np.all(np.abs(acf.gamma) <= acf.gamma[0])
    assert acf.error >= 0


def test_non_integrable_pole_rejected():
    with pytest.raises(DomainError):
        fourier_coefficients(ar1_symbol(0.5), 8, alpha_hint=1.0)


def test_tighter_tolerance_never_increases_error():
    sym = lambda lam: fbm_increment_density(0.8, lam)
    errors = [fourier_coefficients(sym, 64, alpha_hint=0.6, tol=tol).error
              for tol in (1e-4, 1e-6, 1e-8, 1e-10)]
    assert all(b <= a for a, b in zip(errors, errors[1:]))


def test_autocovariance_csv(tmp_path):
    path = tmp_path / "acf.csv"
    AutocovarianceSequence(np.array([1.0, 0.5]), 1e-12).to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "# schema=1"
    assert lines[1] == "lag,gamma,abs_error"
    assert lines[2].startswith("0,1.0,")


# -- Toeplitz matrices ------------------------------------------------------------------

def test_build_examples():
    white = make_model("white_noise")
    assert np.allclose(build(white.autocovariance([2.0], 3), 3).dense, 2 * np.eye(3))
    tm = build(ar1_symbol(0.5), 2)
    assert np.allclose(tm.dense, [[4 / 3, 2 / 3], [2 / 3, 4 / 3]], atol=1e-12)
    model = mixed_fbm_model()
    theta = [0.1, 1.0, 0.2, 1.0]
    chol = build(model.autocovariance(theta, 128), 128).cholesky()
    assert np.all(np.diag(chol) > 0)


def test_toeplitz_symmetric_exactly():
    tm = build(ar1_symbol(0.3), 20)
    assert np.array_equal(tm.dense, tm.dense.T)


def test_cholesky_failure_reports_pivot():
    with pytest.raises(SymbolError, match="pivot"):
        ToeplitzMatrix([1.0, 2.0, 0.0]).cholesky()


def test_solve_logdet_inverse_consistent():
    tm = build(ar1_symbol(0.6, 2.0), 16)
    dense = tm.dense
    assert tm.logdet() == pytest.approx(np.linalg.slogdet(dense)[1], rel=1e-12)
    assert np.allclose(tm.inverse() @ dense, np.eye(16), atol=1e-10)
    rhs = np.arange(16.0)
    assert np.allclose(dense @ tm.solve(rhs), rhs)
    assert np.allclose(tm.cholesky() @ tm.whiten(rhs), rhs)


# -- traces and Whittle integrals ---------------------------------------------------------

@pytest.mark.parametrize("n", [8, 64, 256])
def test_trace_identity(n):
    f = ar1_symbol(0.7)
    assert abs(trace_product([(f, f)], n) - n) <= 1e-9 * n
    assert abs(trace_product([(f, f), (f, f)], n) - n) <= 1e-9 * n


def test_trace_product_against_closed_form():
    model = make_model("ar1_mild", a=0.5)
    theta, n = np.array([1.0, 1.0]), 8
    f = lambda lam: model.density(theta, n, lam)
    g = lambda lam: model.gradient(theta, n, lam)[0]

    def acf(c):
        phi = 1 - 0.5 * c
        return phi ** np.arange(n) / (1 - phi**2)

    h = 1e-6
    dacf = (acf(1 + h) - acf(1 - h)) / (2 * h)
    oracle = np.trace(linalg.toeplitz(dacf) @ np.linalg.inv(linalg.toeplitz(acf(1.0))))
    assert trace_product([(g, f)], n) == pytest.approx(oracle, rel=1e-7)


def test_whittle_integral_examples():
    f = ar1_symbol(0.4)
    assert whittle_integral([(f, f)]) == pytest.approx(1.0, rel=1e-12)
    s = 2.5
    white = make_model("white_noise")
    wf = lambda lam: white.density([s], 1, lam)
    wg = lambda lam: white.gradient([s], 1, lam)[0]
    assert whittle_integral([(wg, wf)]) == pytest.approx(1 / s, rel=1e-12)
    with pytest.raises(DomainError):
        whittle_integral([(f, f)], alpha_hint=1.2)


def test_whittle_vs_trace_convergence():
    model = make_model("ar1_mild", a=0.5)
    theta = np.array([1.0, 1.0])
    ns = [64, 128, 256, 512, 1024]
    f = lambda lam: model.density(theta, 64, lam)
    g = lambda lam: model.gradient(theta, 64, lam)[0]
    limit = whittle_integral([(g, f), (g, f)])
    errors = [abs(trace_product([(g, f), (g, f)], n) / n - limit) for n in ns]
    assert fit_slope(ns, errors) <= -0.8


# -- trace-theorem rates ----------------------------------------------------------------

def _flat_table(eps_gap=-0.5):
    ones = lambda n: ([[1.0, 1.0]], [[1.0, 1.0]])
    return EnvelopeTable(model="test", alpha=[[0.0, 0.0]], alpha_bar=[[-eps_gap, -eps_gap]],
                         coefficient_fn=ones, k_prime=[[0, 1]], k_ast=[[0, 1]])


def test_delta_rates_trivial_table():
    table = _flat_table()
    assert validate_table(table, 0.05) == []
    for n in (16, 1024):
        b = delta_rates(table, n, 0.1, 0.05)
        assert b.delta_n == pytest.approx(2 * n**0.1)
        assert b.delta_ast_n == pytest.approx(2 * n**0.1)
        assert b.delta_star_n == pytest.approx(2 * n**0.1)
        assert np.all(b.R == 1)


def test_delta_rates_ar1_arithmetic():
    model = make_model("ar1_mild", alpha=0.15)
    table = envelope_table_for(model, [1.0, 1.0], eta=0.05)
    n, eps = 1024, 0.1
    b = delta_rates(table, n, eps, 0.05)
    ca = n**-0.15
    z = 0.5 + 0.05  # interpolation exponent chosen as 1/2 + eta
    R = ca**-2
    assert np.allclose(b.R, R)
    assert b.delta_n == pytest.approx(3 * (R * n) ** eps, rel=1e-12)
    assert b.delta_ast_n == pytest.approx(n**eps * (1 + 2 * ca ** (-2 * z)), rel=1e-12)
    assert b.delta_star_n == pytest.approx(n**eps * (1 + 2 * ca ** (-2 * z)), rel=1e-12)


def test_delta_rates_invalid_table():
    # gap 0 against alpha_bar >= 1 - eta in every column leaves no admissible k2
    table = EnvelopeTable(model="test", alpha=[[0.97]], alpha_bar=[[0.97]],
                          coefficient_fn=lambda n: ([[1.0]], [[1.0]]),
                          k_prime=[[0]], k_ast=[[0]])
    assert validate_table(table, 0.05)
    with pytest.raises(InvalidTableError):
        delta_rates(table, 64, 0.1, 0.05)


def test_mixed_fbm_delta_star_growth():
    theta = [0.1, 1.0, 0.2, 1.0]
    table = envelope_table_for(mixed_fbm_model(), theta, eta=0.05)
    ns = [256, 512, 1024, 2048, 4096]
    stars = [delta_rates(table, n, 0.01, 0.05).delta_star_n for n in ns]
    assert fit_slope(ns, stars) <= 2 * 0.05


@given(st.integers(4, 300), st.floats(0.0, 0.5), st.floats(0.01, 0.5), st.floats(0.01, 0.5))
def test_delta_star_at_least_one(n, eps, eta, c):
    model = make_model("ar1_mild", alpha=0.15)
    table = envelope_table_for(model, [1.0, 1.0], eta=0.05)
    b = delta_rates(table, max(n, 8), eps, eta)
    assert b.delta_star_n >= 1
    assert all(math.isfinite(v) for v in (b.delta_n, b.delta_ast_n, b.delta_star_n))
    small = delta_rates(_flat_table(), n, eps, eta)
    assert small.delta_star_n >= 1


# -- operator norms ---------------------------------------------------------------------

def test_half_norm_examples():
    f = ar1_symbol(0.5)
    assert half_norm_squared(f, f, 32) == pytest.approx(1.0, rel=1e-10)
    assert half_norm_squared(lambda lam: 2 * f(lam), f, 32) == pytest.approx(2.0, rel=1e-10)


@given(st.floats(1e-3, 1e3))
def test_half_norm_scale_invariant(c):
    g = lambda lam: fbm_increment_density(0.3, lam)
    f = ar1_symbol(0.5)
    base = half_norm_squared(g, f, 24)
    scaled = half_norm_squared(lambda lam: c * g(lam), lambda lam: c * f(lam), 24)
    assert scaled == pytest.approx(base, rel=1e-10)


def test_half_norm_fgn_growth():
    g = lambda lam: fbm_increment_density(0.2, lam)
    f = lambda lam: fbm_increment_density(0.4, lam)
    ns = [64, 128, 256, 512, 1024]
    norms = [half_norm_squared(g, f, n) for n in ns]
    # (beta - alpha)_+ / (1 - alpha_+) = 0 here
    assert fit_slope(ns, norms) <= 0.0 + 0.05


# -- bounded-density fractional program ------------------------------------------------------

def lp_oracle(G, F, widths, cap):
    """Charnes-Cooper linear program for max G.h / F.h s.t. 0 <= h <= cap, widths.h = 1."""
    m = G.size
    # variables (y, s): maximize G.y; F.y = 1; widths.y - s = 0; y - cap s <= 0
    cost = -np.concatenate([G, [0.0]])
    a_eq = np.vstack([np.concatenate([F, [0.0]]), np.concatenate([widths, [-1.0]])])
    a_ub = np.hstack([np.eye(m), -cap * np.ones((m, 1))])
    res = optimize.linprog(cost, A_ub=a_ub, b_ub=np.zeros(m), A_eq=a_eq, b_eq=[1.0, 0.0],
                           bounds=[(0, None)] * (m + 1), method="highs")
    assert res.success
    return -res.fun


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_ratio_program_matches_linear_program(seed):
    rng = np.random.default_rng(seed)
    edges = np.linspace(0, math.pi, 2049)
    widths = np.diff(edges)
    G = rng.random(2048) * widths
    F = (rng.random(2048) + 0.1) * widths
    cap = 20.0
    value = sup_ratio_bounded_density(G, F, cap, edges)
    assert value == pytest.approx(lp_oracle(G, F, widths, cap), rel=1e-9)


def test_ratio_program_level_set_search():
    # exhaustive search over greedy level sets sorted by g - t f at the optimal t
    rng = np.random.default_rng(5)
    edges = np.linspace(0, math.pi, 65)
    widths = np.diff(edges)
    G, F = rng.random(64) * widths, (rng.random(64) + 0.2) * widths
    cap = 4.0
    res = solve_ratio_program(G, F, cap, edges)
    t = res.value
    order = np.argsort(-(G - t * F) / widths)
    best = 0.0
    for start in range(64):
        h = np.zeros(64)
        mass = 1.0
        for j in order[start:]:
            take = min(cap * widths[j], mass)
            h[j] = take / widths[j]
            mass -= take
            if mass <= 0:
                break
        if mass <= 1e-12:
            best = max(best, h @ G / (h @ F))
    assert res.value == pytest.approx(best, rel=1e-12)


def test_ratio_program_identity_and_errors():
    f = lambda lam: lam**-0.5
    assert sup_ratio_bounded_density(f, f, 10.0, log_grid(2**10)) == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(DomainError):
        sup_ratio_bounded_density(f, f, 0.1, log_grid(2**10))


@given(st.floats(0.5, 50.0), st.floats(1.01, 4.0), st.integers(0, 100))
def test_ratio_program_monotone_and_above_uniform(cap, factor, seed):
    rng = np.random.default_rng(seed)
    edges = np.linspace(0, math.pi, 257)
    widths = np.diff(edges)
    G, F = rng.random(256) * widths, (rng.random(256) + 0.1) * widths
    low = sup_ratio_bounded_density(G, F, cap, edges)
    high = sup_ratio_bounded_density(G, F, cap * factor, edges)
    assert high >= low * (1 - 1e-12)
    assert low >= G.sum() / F.sum() * (1 - 1e-12)


def test_ratio_program_counterexample_growth():
    edges = log_grid()
    g = lambda lam: lam ** (-2 / 3)
    f = lambda lam: lam ** (-1 / 2)
    ns = [2**k for k in range(4, 11)]
    values = [sup_ratio_bounded_density(g, f, n, edges) for n in ns]
    assert fit_slope(ns, values) == pytest.approx(1 / 3, abs=0.05)
