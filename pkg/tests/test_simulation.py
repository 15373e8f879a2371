import json
import math

import numpy as np
import pytest

from gausslan import SimulationPlan, make_model, run_monte_carlo, sample_path, sample_paths
from gausslan import simulation
from gausslan.simulation import read_path, replication_seed, write_path

from conftest import MODEL_CASES


def test_white_noise_moments():
    n = 10**5
    x = sample_path(make_model("white_noise"), [1.0], n, seed=1)
    assert abs(x.mean()) <= 4 / math.sqrt(n)
    assert abs(x.var() - 1) <= 4 * math.sqrt(2) / math.sqrt(n)


@pytest.mark.parametrize("sampler", ["cholesky", "circulant"])
def test_ar1_lag_one_autocorrelation(sampler):
    model = make_model("ar1_mild", a=0.5)
    x = sample_paths(model, [1.0, 1.0], 1024, 200, seed=2, sampler=sampler).paths
    rho = np.sum(x[:, 1:] * x[:, :-1], axis=1) / np.sum(x**2, axis=1)
    assert abs(rho.mean() - 0.5) <= 4 * rho.std(ddof=1) / math.sqrt(200) + 2 / 1024


def _lag_cov(x, lags=5):
    return np.stack([np.mean(x[:, : x.shape[1] - k] * x[:, k:], axis=1) for k in range(lags)], axis=1)


@pytest.mark.parametrize("model_id", sorted(MODEL_CASES))
def test_samplers_agree(model_id):
    params, theta = MODEL_CASES[model_id]
    model = make_model(model_id, **params)
    a = _lag_cov(sample_paths(model, theta, 256, 200, seed=3, sampler="cholesky").paths)
    b = _lag_cov(sample_paths(model, theta, 256, 200, seed=4, sampler="circulant").paths)
    se = np.sqrt(a.var(axis=0, ddof=1) / 200 + b.var(axis=0, ddof=1) / 200)
    assert np.all(np.abs(a.mean(axis=0) - b.mean(axis=0)) <= 4 * se)


def _covariance_check(model, theta, n, sampler, seed):
    reps = 2 * 10**5
    x = sample_paths(model, theta, n, reps, seed=seed, sampler=sampler)
    target = np.array([[model.autocovariance(theta, n)[abs(i - j)] for j in range(n)] for i in range(n)])
    prods = x.paths[:, :, None] * x.paths[:, None, :]
    se = prods.std(axis=0, ddof=1) / math.sqrt(reps)
    assert np.all(np.abs(prods.mean(axis=0) - target) <= 4 * se)
    return x


@pytest.mark.parametrize("model_id", sorted(MODEL_CASES))
@pytest.mark.parametrize("sampler", ["cholesky", "circulant"])
def test_exact_covariance_small_n(model_id, sampler):
    params, theta = MODEL_CASES[model_id]
    n = 4 if model_id != "ar1_mild" else 3
    _covariance_check(make_model(model_id, **params), np.array(theta), n, sampler, seed=5)


def test_circulant_fallback(monkeypatch, caplog):
    monkeypatch.setattr(simulation, "MAX_EMBEDDING_FACTOR", 0)
    simulation._circulant_root.cache_clear()
    model = make_model("ar1_mild", a=0.5)
    batch = _covariance_check(model, np.array([1.0, 1.0]), 4, "circulant", seed=6)
    assert batch.fallback and batch.sampler == "cholesky"
    assert "using cholesky" in caplog.text
    simulation._circulant_root.cache_clear()


def test_determinism_and_seeds():
    model = make_model("fou")
    a = sample_paths(model, [1.0, 0.3, 1.0], 64, 3, seed=99).paths
    b = sample_paths(model, [1.0, 0.3, 1.0], 64, 3, seed=99).paths
    assert np.array_equal(a, b)
    assert not np.array_equal(a, sample_paths(model, [1.0, 0.3, 1.0], 64, 3, seed=98).paths)
    assert replication_seed(12, 5) == 12 ^ 5
    assert replication_seed(2**64 - 1, 1) == 2**64 - 2


def test_unknown_sampler():
    with pytest.raises(ValueError):
        sample_path(make_model("white_noise"), [1.0], 8, 0, sampler="fft")
    with pytest.raises(ValueError):
        SimulationPlan("white_noise", [1.0], [8], replications=0)


def test_path_round_trip(tmp_path):
    x = np.random.default_rng(0).standard_normal(17)
    stem = str(tmp_path / "p")
    write_path(x, stem, {"model": "white_noise", "n": 17, "seed": 0, "theta": [1.0]})
    assert np.array_equal(read_path(stem), x)
    assert (tmp_path / "p.f64").read_bytes() == x.astype("<f8").tobytes()
    assert json.loads((tmp_path / "p.json").read_text())["n"] == 17


def _stats(path, n, r, seed):
    return {"ss": float(np.sum(path**2))}


def test_monte_carlo_reproducible_and_order_free():
    plan = SimulationPlan("ar1_mild", [1.0, 1.0], [32, 64], replications=5, seed=17,
                          model_params={"alpha": 0.15})
    one = run_monte_carlo(plan, _stats)
    again = run_monte_carlo(plan, _stats)
    plan.workers = 3
    many = run_monte_carlo(plan, _stats)
    assert one == again == many
    assert [(rec["n"], rec["r"]) for rec in one] == [(n, r) for n in (32, 64) for r in range(5)]
    single = SimulationPlan("ar1_mild", [1.0, 1.0], [32], replications=1, seed=17,
                            model_params={"alpha": 0.15})
    first = run_monte_carlo(single, lambda p, **kw: {"path": p.tolist()})
    model = make_model("ar1_mild", alpha=0.15)
    assert first[0]["path"] == sample_path(model, [1.0, 1.0], 32, replication_seed(17, 0)).tolist()


def test_monte_carlo_failures_recorded():
    plan = SimulationPlan("white_noise", [1.0], [8], replications=3, seed=1)

    def flaky(path, n, r, seed):
        if r == 1:
            raise RuntimeError("boom")
        return {"ok": True}

    records = run_monte_carlo(plan, flaky)
    assert [rec["failed"] for rec in records] == [False, True, False]
    assert "boom" in records[1]["error"]


def test_monte_carlo_sweep_size():
    plan = SimulationPlan("ar1_mild", [1.0, 1.0], [256], replications=400, seed=2,
                          model_params={"alpha": 0.15})
    records = run_monte_carlo(plan, _stats)
    assert len(records) == 400 and not any(rec["failed"] for rec in records)
