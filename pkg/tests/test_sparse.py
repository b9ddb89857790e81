import csv
import io
import json

import numpy as np
import pytest

from robustkf.design import DesignSolution, DesignSpec, TraceBound, design_robust_filter
from robustkf.model import LtiModel
from robustkf.solver import SolverStatus
from robustkf.sparse import (PruningRejectedError, prune_sensors, reweighted_l1,
                             sparse_design)
from robustkf.verify import care_lyapunov_steady_state, verify_solution
from conftest import scalar_model, solved_case


def _synthetic(zeta, K):
    zeta = np.asarray(zeta, dtype=float)
    with np.errstate(divide="ignore"):
        R = np.diag(np.where(zeta > 0, 1.0 / np.where(zeta > 0, zeta, 1), np.inf))
    return DesignSolution(K=np.asarray(K, dtype=float), eta=np.ones(1), zeta=zeta,
                          Q=np.eye(1), R=R, sigma_inf=np.eye(1), objective=0.0,
                          solver_status=SolverStatus.OPTIMAL)


_TWO_SENSORS = LtiModel([[-1.0]], [[1.0]], [[1.0], [1.0]])


def test_threshold_pruning_zeroes_column():
    sol = _synthetic([0.0, 5.0], [[0.3, 0.7]])
    res = prune_sensors(_TWO_SENSORS, sol, DesignSpec(TraceBound(10.0)), threshold=1e-6)
    assert res.active_sensors == (1,)
    assert res.inactive_sensors == (0,)
    assert np.array_equal(res.pruned_gain, [[0.0, 0.7]])
    assert res.sparsity_level == 1
    # oracle: (a - k) = -1.7, variance (1 + 0.7^2 / 5) / (2 * 1.7)
    assert res.oracle_trace == pytest.approx((1 + 0.49 / 5) / 3.4, rel=1e-12)


def test_pruning_without_inactive_sensors_is_a_no_op():
    sol = _synthetic([2.0, 5.0], [[0.3, 0.7]])
    res = prune_sensors(_TWO_SENSORS, sol, DesignSpec(TraceBound(10.0)), threshold=1e-6)
    assert res.active_sensors == (0, 1)
    assert np.array_equal(res.pruned_gain, sol.K)


def test_f16_sparse_drops_alpha_and_q():
    case, sol = solved_case("f16-sparse")
    assert sol.inactive_sensors == (2, 3)
    res = prune_sensors(case.model, sol, case.spec)
    assert res.active_sensors == (0, 1, 4)
    assert res.warnings == []
    assert np.all(res.pruned_gain[:, [2, 3]] == 0.0)
    assert np.linalg.norm(sol.K[:, [2, 3]]) <= 1e-8 * np.linalg.norm(sol.K)
    Q, R = sol.effective_noise()
    R = R.copy()
    R[[2, 3], [2, 3]] = np.inf
    S = care_lyapunov_steady_state(case.model, res.pruned_gain, Q, R)
    assert np.trace(S) <= 0.1 + 1e-4
    assert res.oracle_trace == pytest.approx(np.trace(S), rel=1e-12)


def test_pruned_filter_reverifies():
    case, sol = solved_case("f16-sparse")
    res = prune_sensors(case.model, sol, case.spec)
    pruned = DesignSolution(**{**sol.__dict__, "K": res.pruned_gain})
    rep = verify_solution(case.model, pruned, case.spec)
    assert rep.passed, rep.failures


def test_overaggressive_pruning_rejected():
    case, sol = solved_case("f16-sparse")
    with pytest.raises(PruningRejectedError) as err:
        prune_sensors(case.model, sol, case.spec, threshold=10 * sol.zeta.max())
    assert err.value.sensors == (0, 1, 2, 3, 4)


def test_l1_is_at_least_as_sparse_as_l2():
    _, l2 = solved_case("f16-c1")
    _, l1 = solved_case("f16-sparse")
    assert len(l1.inactive_sensors) >= len(l2.inactive_sensors)


def test_single_needed_sensor_stays_active():
    sol = sparse_design(scalar_model(1.0), DesignSpec(TraceBound(1.0)))
    assert sol.active_sensors == (0,)


def test_duplicated_sensor_splits_single_sensor_optimum():
    plant = LtiModel([[1.0]], [[1.0]], [[1.0], [1.0]])
    single = sparse_design(scalar_model(1.0), DesignSpec(TraceBound(1.0)))
    dup = sparse_design(plant, DesignSpec(TraceBound(1.0)))
    assert dup.zeta.sum() == pytest.approx(single.zeta[0], rel=1e-2)
    assert dup.objective == pytest.approx(single.objective, rel=1e-2)


def test_reweighting_on_already_sparse_problem():
    sol, res = reweighted_l1(scalar_model(1.0), DesignSpec(TraceBound(1.0)))
    assert len(res.zeta_history) == 2
    assert sol.active_sensors == (0,)


def test_reweighting_shrinks_active_set_monotonically():
    case, plain = solved_case("f16-sparse")
    sol, res = reweighted_l1(case.model, case.spec)
    sizes = [int(np.sum(z >= 1e-8 * z.max())) for z in res.zeta_history]
    assert all(b <= a for a, b in zip(sizes, sizes[1:]))
    assert set(res.active_sensors) <= set(plain.active_sensors)
    assert len(res.zeta_history) <= 6
    assert not any("grew" in w for w in res.warnings)


def test_infinite_epsilon_reproduces_plain_l1():
    case, plain = solved_case("f16-sparse")
    sol, res = reweighted_l1(case.model, case.spec, max_iters=2, eps_reweight=np.inf)
    assert sol.objective == pytest.approx(plain.objective, rel=1e-6)
    assert sol.inactive_sensors == plain.inactive_sensors


def test_sparsity_result_serialization():
    case, sol = solved_case("f16-sparse")
    res = prune_sensors(case.model, sol, case.spec)
    doc = json.loads(res.to_json())
    assert doc["inactive_sensors"] == [2, 3] and doc["sparsity_level"] == 2
    rows = list(csv.reader(io.StringIO(res.history_csv())))
    assert rows[0] == ["iteration"] + [f"zeta_{j}" for j in range(1, 6)]
    assert len(rows) == 1 + len(res.zeta_history)
    assert [float(v) for v in rows[1][1:]] == list(sol.zeta)


def test_sparse_design_forces_l1():
    case, _ = solved_case("f16-c1")
    sol = sparse_design(case.model, case.spec)
    assert sol.inactive_sensors == (2, 3)
    assert design_robust_filter(case.model, case.spec).inactive_sensors == ()
