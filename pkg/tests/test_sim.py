import csv
import io

import numpy as np
import pytest
from scipy.stats import chi2

from robustkf import sim
from robustkf.model import LtiModel
from robustkf.sim import (SimConfig, SimulationDivergedError, StepSizeError,
                          propagate_covariance, simulate_filter)
from robustkf.verify import oracle_covariance
from conftest import scalar_model, solved_case


def _design(name):
    case, sol = solved_case(name)
    Q, R = sol.effective_noise()
    return case.model, sol.K, Q, R


def test_noiseless_perfectly_initialized_filter_has_no_error():
    model, K, Q, R = _design("cwh-cont-c2")
    cfg = SimConfig(horizon=2.0, n_runs=3, x0_true=(1, 2, 3, 0, 0, 0), xhat0=(1, 2, 3, 0, 0, 0))
    res = simulate_filter(model, K, np.zeros_like(Q), np.zeros_like(R), cfg)
    assert np.all(res.mean_error == 0.0)
    assert np.all(res.sample_cov_diag == 0.0)


def test_seed_determinism_and_batch_independence(monkeypatch):
    model, K, Q, R = _design("cwh-disc-c2")
    cfg = SimConfig(horizon=300, n_runs=7, seed=11)
    a = simulate_filter(model, K, Q, R, cfg)
    b = simulate_filter(model, K, Q, R, cfg)
    assert np.array_equal(a.mean_error, b.mean_error)
    assert np.array_equal(a.sample_cov_diag, b.sample_cov_diag)
    monkeypatch.setattr(sim, "RUN_BATCH", 2)
    monkeypatch.setattr(sim, "STEP_CHUNK", 37)
    c = simulate_filter(model, K, Q, R, cfg)
    assert np.allclose(a.mean_error, c.mean_error, rtol=1e-12, atol=1e-15)
    assert np.allclose(a.sample_cov_diag, c.sample_cov_diag, rtol=1e-10, atol=1e-15)


def test_run_count_changes_samples_not_grid():
    model, K, Q, R = _design("cwh-cont-c2")
    one = simulate_filter(model, K, Q, R, SimConfig(horizon=1.0, n_runs=1, seed=7))
    many = simulate_filter(model, K, Q, R, SimConfig(horizon=1.0, n_runs=20, seed=7))
    assert np.array_equal(one.time_grid, many.time_grid)
    assert not np.array_equal(one.mean_error, many.mean_error)
    assert np.all(one.sample_cov_diag == 0.0)


@pytest.mark.parametrize("name", ["cwh-cont-c2", "cwh-disc-c1"])
def test_covariance_recursion_fixed_point(name):
    model, K, Q, R = _design(name)
    S = oracle_covariance(model, K, Q, R)
    traj = propagate_covariance(model, K, Q, R, S, horizon=50 if model.is_discrete else 0.5)
    assert np.max(np.abs(traj.sigma - S)) < 1e-8


def test_noiseless_open_loop_contracts():
    model = LtiModel([[-0.5, 1.0], [0.0, -1.0]], np.eye(2), np.eye(2))
    traj = propagate_covariance(model, np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)),
                                np.eye(2), horizon=20.0)
    tr = traj.trace
    assert np.all(np.diff(tr) <= 0)
    assert tr[-1] < 1e-6


def test_cwh_case2_recursion_reaches_budget():
    model, K, Q, R = _design("cwh-cont-c2")
    traj = propagate_covariance(model, K, Q, R, np.eye(6), horizon=200.0)
    assert traj.trace[-1] <= 0.1 + 1e-3


def test_discrete_recursion_reaches_oracle():
    model, K, Q, R = _design("cwh-disc-c2")
    S = oracle_covariance(model, K, Q, R)
    traj = propagate_covariance(model, K, Q, R, np.eye(6), horizon=20000)
    assert np.allclose(traj.final, S, atol=1e-9)


def test_unstable_gain_diverges_at_start():
    with pytest.raises(SimulationDivergedError) as err:
        simulate_filter(scalar_model(1.0), [[0.5]], [[1.0]], [[1.0]], SimConfig(horizon=1.0))
    assert err.value.time == 0.0


def test_large_step_is_rejected():
    model, K, Q, R = _design("cwh-cont-c2")
    with pytest.raises(StepSizeError):
        propagate_covariance(model, K, Q, R, np.eye(6), horizon=200.0, dt=1.0)


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(dt=0.0)
    with pytest.raises(ValueError):
        SimConfig(n_runs=0)
    with pytest.raises(ValueError):
        SimConfig(sigma0=-np.eye(2))


def test_scalar_sample_variance_in_chi2_band():
    model = scalar_model(-1.0)
    K, Q, R = [[1.0]], [[1.0]], [[1.0]]
    n = 400
    res = simulate_filter(model, K, Q, R, SimConfig(horizon=5.0, n_runs=n, seed=3))
    ratio = res.sample_cov_diag[-1, 0] / res.predicted_cov_diag[-1, 0]
    lo, hi = chi2.ppf([0.005, 0.995], n - 1) / (n - 1)
    assert lo <= ratio <= hi


def test_csv_layout():
    model, K, Q, R = _design("cwh-cont-c2")
    res = simulate_filter(model, K, Q, R, SimConfig(horizon=0.05, n_runs=4, seed=1))
    rows = list(csv.reader(io.StringIO(res.to_csv())))
    header = rows[0]
    assert header[0] == "time"
    assert header[1:7] == [f"mean_e_{i}" for i in range(1, 7)]
    assert header[7:13] == [f"std_e_{i}" for i in range(1, 7)]
    assert header[13:] == [f"pred_std_{i}" for i in range(1, 7)]
    assert len(rows) == 1 + len(res.time_grid)
    assert float(rows[-1][0]) == pytest.approx(0.05)
    assert all(float(v) >= 0 for row in rows[1:] for v in row[7:])


def test_per_run_store():
    model, K, Q, R = _design("cwh-disc-c2")
    res = simulate_filter(model, K, Q, R, SimConfig(horizon=10, n_runs=3, keep_runs=True))
    assert res.per_run_errors.shape == (3, 11, 6)
    assert np.allclose(res.per_run_errors.mean(axis=0), res.mean_error)
