"""Non-SDP checks that a designed filter delivers the claimed accuracy.

All covariances reported here are posterior (post-measurement-update)
quantities in discrete time.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np
import scipy.linalg as sla

from .conic import ConicProgram
from .design import DesignSolution, DesignSpec, ExactCovariance, build_program
from .model import LtiModel, spectral_abscissa, spectral_radius

FIXED_POINT_TOL = 1e-12
FIXED_POINT_MAX_ITER = 100_000
LMI_RESIDUAL_RTOL = 1e-7
TRACE_TOL = 1e-4
RICCATI_TOL = 1e-6
LYAP_COND_WARN = 1e12


class DivergenceError(RuntimeError):
    def __init__(self, message: str, spectral_radius: float):
        super().__init__(message)
        self.spectral_radius = spectral_radius


class ConvergenceError(RuntimeError):
    pass


class StabilityError(RuntimeError):
    def __init__(self, message: str, abscissa: float):
        super().__init__(message)
        self.abscissa = abscissa


class InfiniteNoiseError(ValueError):
    pass


def noise_outer(G: np.ndarray, cov: np.ndarray, zero_tol: float = 0.0) -> np.ndarray:
    """``G cov G^T`` where ``cov`` may carry infinite diagonal entries.

    An infinite variance is admissible only on a channel whose column of ``G``
    vanishes (norm <= ``zero_tol``); that channel then contributes nothing.
    """
    cov = np.asarray(cov, dtype=float)
    if np.all(np.isfinite(cov)):
        return G @ cov @ G.T
    d = np.diag(cov)
    if _has_off_diagonal(cov):
        raise InfiniteNoiseError("infinite entries are only supported in diagonal covariances")
    out = np.zeros((G.shape[0], G.shape[0]))
    for j, v in enumerate(d):
        g = G[:, j]
        if np.isinf(v):
            if np.linalg.norm(g) > zero_tol:
                raise InfiniteNoiseError(
                    f"channel {j} has infinite variance but a nonzero gain column")
            continue
        out += v * np.outer(g, g)
    return out


def joseph_fixed_point(model: LtiModel, K, Q, R, tol: float = FIXED_POINT_TOL,
                       max_iter: int = FIXED_POINT_MAX_ITER) -> np.ndarray:
    """Steady-state posterior covariance of a fixed-gain discrete filter.

    Iterates ``S <- (I-KC)(A S A' + B Q B')(I-KC)' + K R K'`` from ``S = 0``.
    The recursion is affine, ``S <- Phi S Phi' + M``, so iterates are produced
    by doubling (``S_2k = S_k + Phi^k S_k Phi^k'``); ``max_iter`` counts
    recursion steps, not doublings.
    """
    A, B, C = model.A, model.B, model.C
    K = np.asarray(K, dtype=float)
    IKC = np.eye(model.n) - K @ C
    Phi = IKC @ A
    rho = spectral_radius(Phi)
    if rho >= 1.0:
        raise DivergenceError(f"(I-KC)A has spectral radius {rho:.6f} >= 1", rho)
    M = noise_outer(IKC @ B, Q) + noise_outer(K, R)
    M = 0.5 * (M + M.T)
    S = M.copy()          # one step from S = 0
    P = Phi.copy()        # Phi^k with k the number of steps taken
    steps = 1
    while True:
        S_next = S + P @ S @ P.T
        S_next = 0.5 * (S_next + S_next.T)
        delta = np.linalg.norm(S_next - S)
        S, P, steps = S_next, P @ P, 2 * steps
        if delta < tol * (1.0 + np.linalg.norm(S)):
            return S
        if steps >= max_iter:
            raise ConvergenceError(
                f"fixed point not reached within {max_iter} steps (last change {delta:.3e})")


def _has_off_diagonal(M: np.ndarray) -> bool:
    return bool(np.any(M[~np.eye(M.shape[0], dtype=bool)] != 0.0))


def _active_rows(C: np.ndarray, R: np.ndarray):
    R = np.asarray(R, dtype=float)
    d = np.diag(R)
    active = np.flatnonzero(np.isfinite(d))
    if active.size < d.size:
        if _has_off_diagonal(R):
            raise InfiniteNoiseError("infinite entries are only supported in diagonal R")
        return active, C[active], np.diag(d[active])
    return active, C, R


def dare_steady_state(model: LtiModel, Q, R, tol: float = FIXED_POINT_TOL,
                      max_iter: int = FIXED_POINT_MAX_ITER) -> tuple[np.ndarray, np.ndarray]:
    """Optimal steady-state posterior covariance and gain for noise (Q, R).

    Runs the Kalman recursion (predict, then measurement update) to its fixed
    point.  Sensors with infinite variance are dropped; their gain columns are
    zero.
    """
    A, B = model.A, model.B
    active, C, Ra = _active_rows(model.C, R)
    BQB = noise_outer(B, Q)
    n = model.n
    prior = BQB.copy()
    for _ in range(max_iter):
        S = C @ prior @ C.T + Ra
        try:
            gain = sla.solve(S, C @ prior, assume_a="pos").T
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError("innovation covariance is singular") from exc
        IKC = np.eye(n) - gain @ C
        post = IKC @ prior @ IKC.T + gain @ Ra @ gain.T
        post = 0.5 * (post + post.T)
        nxt = A @ post @ A.T + BQB
        nxt = 0.5 * (nxt + nxt.T)
        if np.linalg.norm(nxt - prior) < tol * (1.0 + np.linalg.norm(prior)):
            K = np.zeros((n, model.p))
            K[:, active] = gain
            return post, K
        prior = nxt
    raise ConvergenceError(f"Riccati recursion did not converge in {max_iter} iterations")


def care_steady_state(model: LtiModel, Q, R) -> tuple[np.ndarray, np.ndarray]:
    """Kalman-Bucy optimal covariance and gain (continuous Riccati solution)."""
    active, C, Ra = _active_rows(model.C, R)
    BQB = noise_outer(model.B, Q)
    S = sla.solve_continuous_are(model.A.T, C.T, BQB, Ra)
    S = 0.5 * (S + S.T)
    K = np.zeros((model.n, model.p))
    K[:, active] = sla.solve(Ra, C @ S, assume_a="pos").T
    return S, K


def solve_lyapunov_kron(F: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Solve ``F S + S F' + M = 0`` by Kronecker vectorization with one step
    of iterative refinement."""
    n = F.shape[0]
    I = np.eye(n)
    L = np.kron(I, F) + np.kron(F, I)
    cond = np.linalg.cond(L)
    if cond > LYAP_COND_WARN:
        warnings.warn(f"Lyapunov operator is ill-conditioned (cond {cond:.2e})", RuntimeWarning)
    rhs = -M.reshape(-1, order="F")
    lu = sla.lu_factor(L)
    x = sla.lu_solve(lu, rhs)
    x += sla.lu_solve(lu, rhs - L @ x)
    S = x.reshape(n, n, order="F")
    return 0.5 * (S + S.T)


def care_lyapunov_steady_state(model: LtiModel, K, Q, R) -> np.ndarray:
    """Steady-state covariance of a fixed-gain continuous filter.

    Solves ``(A-KC) S + S (A-KC)' + K R K' + B Q B' = 0``.
    """
    K = np.asarray(K, dtype=float)
    F = model.A - K @ model.C
    alpha = spectral_abscissa(F)
    if alpha >= 0.0:
        raise StabilityError(f"A-KC is not Hurwitz (max real eigenvalue {alpha:.3e})", alpha)
    M = noise_outer(K, R) + noise_outer(model.B, Q)
    M = 0.5 * (M + M.T)
    return solve_lyapunov_kron(F, M)


def lyapunov_residual(model: LtiModel, K, Q, R, S) -> float:
    """Frobenius residual of the steady-state equation at ``S`` (either domain)."""
    K = np.asarray(K, dtype=float)
    if model.is_discrete:
        IKC = np.eye(model.n) - K @ model.C
        rhs = (IKC @ model.A @ S @ model.A.T @ IKC.T + noise_outer(IKC @ model.B, Q)
               + noise_outer(K, R))
        return float(np.linalg.norm(S - rhs))
    F = model.A - K @ model.C
    res = F @ S + S @ F.T + noise_outer(K, R) + noise_outer(model.B, Q)
    return float(np.linalg.norm(res))


def check_lmi_residual(program: ConicProgram, assignment: Mapping[str, Any]) -> dict[str, float]:
    """Minimum eigenvalue of every PSD block at ``assignment``."""
    return {name: float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])
            for name, M in program.block_values(assignment).items()}


def lmi_block_norms(program: ConicProgram, assignment: Mapping[str, Any]) -> dict[str, float]:
    return {name: float(np.linalg.norm(M)) for name, M in program.block_values(assignment).items()}


@dataclass
class VerificationReport:
    oracle_sigma: np.ndarray
    oracle_trace: float
    trace_budget: float
    trace_margin: float
    stable: bool
    stability_measure: float
    lmi_min_eig: dict[str, float]
    lmi_block_norm: dict[str, float]
    riccati_trace: float
    recovered_trace: float
    fixed_point_residual: float
    form: str = "posterior"
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def relaxation_gap(self) -> float:
        """tr(recovered Sigma) - tr(oracle Sigma); nonnegative up to tolerance."""
        return self.recovered_trace - self.oracle_trace

    def to_dict(self) -> dict:
        def num(x):
            return float(x) if np.isfinite(x) else None
        return {
            "passed": self.passed,
            "failures": list(self.failures),
            "form": self.form,
            "stable": self.stable,
            "stability_measure": num(self.stability_measure),
            "oracle_trace": num(self.oracle_trace),
            "trace_budget": self.trace_budget,
            "trace_margin": num(self.trace_margin),
            "recovered_trace": num(self.recovered_trace),
            "relaxation_gap": num(self.relaxation_gap),
            "riccati_trace": num(self.riccati_trace),
            "fixed_point_residual": num(self.fixed_point_residual),
            "lmi_min_eig": self.lmi_min_eig,
            "lmi_block_norm": self.lmi_block_norm,
            "oracle_sigma": [[num(v) for v in row] for row in self.oracle_sigma],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def oracle_covariance(model: LtiModel, K, Q, R) -> np.ndarray:
    if model.is_discrete:
        return joseph_fixed_point(model, K, Q, R)
    return care_lyapunov_steady_state(model, K, Q, R)


def riccati_covariance(model: LtiModel, Q, R) -> np.ndarray:
    if model.is_discrete:
        return dare_steady_state(model, Q, R)[0]
    return care_steady_state(model, Q, R)[0]


def verify_solution(model: LtiModel, solution: DesignSolution, spec: DesignSpec,
                    trace_tol: float = TRACE_TOL) -> VerificationReport:
    """Re-derive the steady-state error of ``solution`` without the SDP.

    Uses the noise levels certified by the LMI (raw precisions, see
    :meth:`DesignSolution.effective_noise`).
    """
    Q, R = solution.effective_noise()
    K = solution.K
    failures: list[str] = []
    n = model.n
    if model.is_discrete:
        measure = spectral_radius((np.eye(n) - K @ model.C) @ model.A)
        stable = measure < 1.0
    else:
        measure = spectral_abscissa(model.A - K @ model.C)
        stable = measure < 0.0
    budget = spec.target.trace_budget
    if stable:
        sigma = oracle_covariance(model, K, Q, R)
        tr = float(np.trace(sigma))
        residual = lyapunov_residual(model, K, Q, R, sigma)
    else:
        failures.append("filter error dynamics are unstable")
        sigma = np.full((n, n), np.inf)
        tr = np.inf
        residual = np.inf
    margin = budget - tr
    if not margin >= -trace_tol:
        failures.append(f"trace budget exceeded: tr={tr:.6g} > {budget:.6g}")
    if isinstance(spec.target, ExactCovariance) and stable:
        excess = np.linalg.eigvalsh(sigma - spec.target.sigma)[-1]
        if excess > trace_tol:
            failures.append(f"oracle covariance exceeds the specified one by {excess:.3e}")

    program = solution.program
    assignment = solution.assignment
    if program is None or assignment is None:
        program = build_program(model, spec)
        assignment = None
    mins: dict[str, float] = {}
    norms: dict[str, float] = {}
    if assignment is not None:
        mins = check_lmi_residual(program, assignment)
        norms = lmi_block_norms(program, assignment)
        for name, v in mins.items():
            if v < -LMI_RESIDUAL_RTOL * norms[name]:
                failures.append(f"LMI block {name} violated (min eig {v:.3e})")

    try:
        ric = float(np.trace(riccati_covariance(model, Q, R)))
    except (ConvergenceError, np.linalg.LinAlgError, ValueError) as exc:
        ric = np.nan
        failures.append(f"Riccati oracle failed: {exc}")
    if stable and np.isfinite(ric) and ric > tr + RICCATI_TOL:
        failures.append(f"Riccati trace {ric:.6g} exceeds fixed-gain trace {tr:.6g}")

    return VerificationReport(
        oracle_sigma=sigma, oracle_trace=tr, trace_budget=budget, trace_margin=margin,
        stable=bool(stable), stability_measure=float(measure), lmi_min_eig=mins,
        lmi_block_norm=norms, riccati_trace=ric,
        recovered_trace=float(np.trace(solution.sigma_inf)),
        fixed_point_residual=residual, failures=failures,
    )
