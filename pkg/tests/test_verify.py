import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from robustkf.cases import benchmark_case
from robustkf.model import LtiModel, spectral_radius
from robustkf.verify import (DivergenceError, InfiniteNoiseError, StabilityError,
                             care_lyapunov_steady_state, care_steady_state, dare_steady_state,
                             joseph_fixed_point, lyapunov_residual, noise_outer,
                             solve_lyapunov_kron, verify_solution)
from conftest import scalar_model, solved_case

# scalar DARE, a=0.5, b=c=q=r=1: the prior solves s^2 - s/4 - 1 = 0
DARE_PRIOR = (0.25 + np.sqrt(0.0625 + 4.0)) / 2.0
DARE_POSTERIOR = DARE_PRIOR / (DARE_PRIOR + 1.0)


def test_joseph_scalar_open_loop():
    m = scalar_model(0.5, discrete=True)
    S = joseph_fixed_point(m, [[0.0]], [[0.75]], [[1.0]])
    assert S[0, 0] == pytest.approx(1.0, rel=1e-12)


def test_joseph_unit_gain_returns_r(rng):
    A = rng.normal(size=(3, 3))
    m = LtiModel(A, np.eye(3), np.eye(3), domain="discrete", sample_time=1.0)
    R = np.diag([0.1, 0.2, 0.3])
    S = joseph_fixed_point(m, np.eye(3), np.eye(3), R)
    assert np.allclose(S, R, atol=1e-15)


def test_scalar_dare_root():
    m = scalar_model(0.5, discrete=True)
    post, K = dare_steady_state(m, [[1.0]], [[1.0]])
    assert post[0, 0] == pytest.approx(DARE_POSTERIOR, rel=1e-10)
    assert K[0, 0] == pytest.approx(DARE_POSTERIOR, rel=1e-10)
    S = joseph_fixed_point(m, K, [[1.0]], [[1.0]])
    assert S[0, 0] == pytest.approx(DARE_POSTERIOR, rel=1e-10)


def test_dare_static_fusion():
    m = LtiModel(np.zeros((2, 2)), np.eye(2), np.eye(2), domain="discrete", sample_time=1.0)
    Q, R = np.diag([1.0, 3.0]), np.diag([2.0, 0.5])
    post, _ = dare_steady_state(m, Q, R)
    q, r = np.diag(Q), np.diag(R)
    assert np.allclose(post, np.diag(q * r / (q + r)), atol=1e-14)


def test_dare_without_process_noise_converges_to_zero():
    m = LtiModel([[0.5, 0.1], [0.0, 0.8]], np.eye(2), np.eye(2), domain="discrete",
                 sample_time=1.0)
    post, _ = dare_steady_state(m, np.zeros((2, 2)), np.eye(2))
    assert np.linalg.norm(post) < 1e-10


def test_continuous_scalar_lyapunov():
    S = care_lyapunov_steady_state(scalar_model(-1.0), [[0.0]], [[2.0]], [[1.0]])
    assert S[0, 0] == pytest.approx(1.0, rel=1e-12)


def test_continuous_unit_decay_halves_noise(rng):
    A = rng.normal(size=(3, 3))
    m = LtiModel(A, np.eye(3), np.eye(3))
    K = A + np.eye(3)
    Q, R = np.diag([1.0, 2.0, 3.0]), np.diag([0.5, 0.5, 4.0])
    M = K @ R @ K.T + Q
    S = care_lyapunov_steady_state(m, K, Q, R)
    assert np.allclose(S, M / 2, rtol=1e-10, atol=1e-12)


def test_scalar_care_closed_form():
    # 2 a s - s^2 / r + q = 0  =>  s = r (a + sqrt(a^2 + q / r))
    S, K = care_steady_state(scalar_model(1.0), [[1.0]], [[1.0]])
    assert S[0, 0] == pytest.approx(1.0 + np.sqrt(2.0), rel=1e-10)
    assert K[0, 0] == pytest.approx(1.0 + np.sqrt(2.0), rel=1e-10)


def test_kron_lyapunov_matches_scipy(rng):
    from scipy.linalg import solve_continuous_lyapunov
    F = rng.normal(size=(5, 5)) - 4 * np.eye(5)
    G = rng.normal(size=(5, 5))
    M = G @ G.T
    assert np.allclose(solve_lyapunov_kron(F, M), solve_continuous_lyapunov(F, -M), atol=1e-10)


def test_unstable_gain_is_reported():
    with pytest.raises(DivergenceError) as err:
        joseph_fixed_point(scalar_model(2.0, discrete=True), [[0.0]], [[1.0]], [[1.0]])
    assert err.value.spectral_radius == pytest.approx(2.0)
    with pytest.raises(StabilityError):
        care_lyapunov_steady_state(scalar_model(1.0), [[0.5]], [[1.0]], [[1.0]])


def test_infinite_noise_needs_zero_column():
    G = np.array([[1.0, 0.0], [0.0, 0.0]])
    out = noise_outer(G, np.diag([2.0, np.inf]))
    assert np.array_equal(out, np.diag([2.0, 0.0]))
    with pytest.raises(InfiniteNoiseError):
        noise_outer(G, np.diag([np.inf, 1.0]))


@st.composite
def stable_discrete_problem(draw):
    n = draw(st.integers(1, 4))
    p = draw(st.integers(1, 3))
    A = draw(arrays(float, (n, n), elements=st.floats(-1, 1)))
    A = 0.9 * A / max(1.0, spectral_radius(A) + 1e-3)
    C = draw(arrays(float, (p, n), elements=st.floats(-1, 1)))
    K = draw(arrays(float, (n, p), elements=st.floats(-0.3, 0.3)))
    q = draw(arrays(float, (n,), elements=st.floats(0.05, 2)))
    r = draw(arrays(float, (p,), elements=st.floats(0.05, 2)))
    model = LtiModel(A, np.eye(n), C, domain="discrete", sample_time=1.0)
    return model, K, np.diag(q), np.diag(r)


@settings(max_examples=60, deadline=None)
@given(stable_discrete_problem())
def test_riccati_sandwich_and_residual(problem):
    model, K, Q, R = problem
    if spectral_radius((np.eye(model.n) - K @ model.C) @ model.A) >= 0.999:
        return
    S = joseph_fixed_point(model, K, Q, R)
    opt, _ = dare_steady_state(model, Q, R)
    assert np.trace(opt) <= np.trace(S) + 1e-9
    assert lyapunov_residual(model, K, Q, R, S) <= 1e-8 * (1 + np.linalg.norm(S))


@settings(max_examples=60, deadline=None)
@given(stable_discrete_problem())
def test_doubling_q_never_lowers_trace(problem):
    model, K, Q, R = problem
    if spectral_radius((np.eye(model.n) - K @ model.C) @ model.A) >= 0.999:
        return
    base = np.trace(joseph_fixed_point(model, K, Q, R))
    assert np.trace(joseph_fixed_point(model, K, 2 * Q, R)) >= base - 1e-12


def test_cwh_case1_report_passes():
    case, sol = solved_case("cwh-cont-c1")
    rep = verify_solution(case.model, sol, case.spec)
    assert rep.passed, rep.failures
    assert rep.trace_margin >= -1e-4
    assert rep.relaxation_gap >= -1e-6
    assert all(v >= -1e-7 * rep.lmi_block_norm[k] for k, v in rep.lmi_min_eig.items())


def test_f16_case2_filter_is_stable():
    case, sol = solved_case("f16-c2")
    rep = verify_solution(case.model, sol, case.spec)
    assert rep.stable and rep.stability_measure < 0


def test_corrupted_gain_degrades_report():
    case, sol = solved_case("cwh-cont-c1")
    good = verify_solution(case.model, sol, case.spec)
    bad_sol = type(sol)(**{**sol.__dict__, "K": sol.K + 10 * np.random.default_rng(0).normal(size=sol.K.shape)})
    bad = verify_solution(case.model, bad_sol, case.spec)
    assert (not bad.passed) or bad.trace_margin < good.trace_margin


def test_report_json_has_nulls_when_unstable():
    case, sol = solved_case("cwh-cont-c1")
    bad_sol = type(sol)(**{**sol.__dict__, "K": np.zeros_like(sol.K)})
    rep = verify_solution(case.model, bad_sol, case.spec)
    assert not rep.stable and not rep.passed
    doc = json.loads(rep.to_json())
    assert doc["oracle_trace"] is None and doc["passed"] is False


def test_reports_for_discrete_case():
    case, sol = solved_case("cwh-disc-c2")
    rep = verify_solution(case.model, sol, case.spec)
    assert rep.passed, rep.failures
    assert rep.stability_measure < 1.0
    assert rep.riccati_trace <= rep.oracle_trace + 1e-6
