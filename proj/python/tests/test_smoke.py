import json
import math

import numpy as np
import pytest

import mlmc_mvsde as mv

OU = {"a": 1.0, "b": 0.5, "sigma": 1.0, "x0": 1.0, "T": 1.0, "epsilon": 0.25}


def test_builtin_model_and_errors():
    m = mv.builtin_model("meanfield_ou", OU)
    assert m.d == 1 and m.epsilon == 0.25
    assert m.mean_oracle(1.0) == pytest.approx(math.exp(-1.0), rel=1e-15)
    assert "meanfield_ou" in mv.builtin_model_names()
    with pytest.raises(mv.ConfigError):
        mv.builtin_model("meanfield_ou", {k: v for k, v in OU.items() if k != "b"})
    with pytest.raises(ValueError):
        mv.builtin_model("zero", {"x0": 1.0, "T": 1.0, "epsilon": 2.0})


def test_simulate_path_is_reproducible():
    m = mv.builtin_model("meanfield_ou", OU)
    a = mv.simulate_path(m, 16, 32, seed=5, record_every=4)
    b = mv.simulate_path(m, 16, 32, seed=5, record_every=4)
    assert a["times"] == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert a["rng_draws"] == 16 * 32
    np.testing.assert_array_equal(a["clouds"][-1], b["clouds"][-1])
    assert a["clouds"][-1].shape == (32, 1)


def test_zero_noise_matches_ode_limit():
    m = mv.builtin_model("meanfield_ou", OU).with_epsilon(0.0)
    path = mv.simulate_path(m, 8, 4, seed=1)
    z = mv.ode_limit(m, 8)
    assert np.all(path["clouds"][-1][:, 0] == z[-1][0])


def test_wasserstein():
    assert mv.wasserstein2(np.array([0.0, 1.0]), np.array([1.0, 2.0])) == pytest.approx(1.0)
    assert mv.moment_w2(np.array([[3.0, 4.0]])) == pytest.approx(5.0)
    with pytest.raises(ValueError):
        mv.wasserstein2(np.zeros((2, 1)), np.zeros((2, 2)))


def test_loglog_fit():
    fit = mv.loglog_fit([1, 2, 4], [1, 4, 16])
    assert fit["slope"] == pytest.approx(2.0)
    assert fit["r_squared"] == pytest.approx(1.0)


def test_mlmc_estimate_small():
    m = mv.builtin_model("meanfield_ou", OU)
    rep = mv.mlmc_estimate(m, 0.01, m_particles=16, seed=3, pilot_samples=8)
    assert abs(rep["estimate"] - math.exp(-1.0)) < 0.05
    assert rep["total_cost"] == sum(lv["rng_cost"] for lv in rep["per_level"])


def test_coupled_variance_at_zero_epsilon():
    m = mv.builtin_model("meanfield_ou", OU).with_epsilon(0.0)
    rows = mv.coupled_variance_study(m, 1, 3, m_particles=8, replications=10, seed=2)
    assert [r["level"] for r in rows] == [1, 2, 3]
    assert all(r["var_diff"] <= 1e-25 for r in rows)


def test_run_and_validate(tmp_path):
    cfg = {
        "experiment": "strong-error",
        "model": {"name": "meanfield_ou", "params": OU},
        "grid": {"h_list": [0.25, 0.125], "m_particles": 8, "replications": 5},
        "seed": 9,
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    code, msg = mv.validate(str(path))
    assert code == 0, msg
    code, _, err = mv.run(str(path), output_dir=str(tmp_path / "out"))
    assert code == 0, err
    assert (tmp_path / "out" / "strong-error.csv").read_text().startswith("h,steps,mse")
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({**cfg, "grid": {"h_list": [0.25]}}))
    assert mv.validate(str(bad))[0] == 2
