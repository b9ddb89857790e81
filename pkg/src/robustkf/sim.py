"""Monte-Carlo and deterministic error-covariance simulation of a designed
filter.

Continuous-time models are simulated with Euler-Maruyama.  Process noise
enters as increments ``B dW`` with ``Cov(dW) = Q dt``; white measurement noise
is sampled per step with covariance ``R / dt`` so the innovation statistics
match the Kalman-Bucy design.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .model import LtiModel, spectral_abscissa, spectral_radius
from .verify import noise_outer

RUN_BATCH = 500
STEP_CHUNK = 512


class SimulationDivergedError(RuntimeError):
    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


class StepSizeError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    """``horizon`` is seconds for continuous models and steps for discrete ones.

    ``x0_true=None`` draws each run's initial state from N(xhat0, sigma0).
    """

    horizon: float = 200.0
    dt: float = 0.01
    n_runs: int = 1000
    seed: int = 0
    x0_true: tuple[float, ...] | None = None
    xhat0: tuple[float, ...] | None = None
    sigma0: np.ndarray | None = field(default=None, compare=False)
    keep_runs: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.sigma0 is not None:
            s = np.asarray(self.sigma0, dtype=float)
            if np.linalg.eigvalsh(0.5 * (s + s.T))[0] < -1e-12 * max(1.0, np.linalg.norm(s)):
                raise ValueError("sigma0 must be positive semidefinite")


@dataclass
class CovarianceTrajectory:
    time: np.ndarray
    sigma: np.ndarray  # (steps + 1, n, n)

    @property
    def final(self) -> np.ndarray:
        return self.sigma[-1]

    @property
    def trace(self) -> np.ndarray:
        return np.trace(self.sigma, axis1=1, axis2=2)


@dataclass
class SimResult:
    time_grid: np.ndarray
    mean_error: np.ndarray
    sample_cov_diag: np.ndarray
    predicted_cov_diag: np.ndarray
    n_runs: int
    per_run_errors: np.ndarray | None = None

    def tail(self, fraction: float = 0.25) -> slice:
        k = len(self.time_grid)
        return slice(k - max(1, int(round(fraction * k))), k)

    def steady_state_std(self, fraction: float = 0.25) -> tuple[np.ndarray, np.ndarray]:
        """Sample and predicted per-component std averaged (as variances) over
        the final ``fraction`` of the horizon."""
        sl = self.tail(fraction)
        return (np.sqrt(self.sample_cov_diag[sl].mean(axis=0)),
                np.sqrt(self.predicted_cov_diag[sl].mean(axis=0)))

    def tail_mean_error_norm(self, fraction: float = 0.25) -> float:
        """RMS over the final ``fraction`` of ``||mean_error(t)||``."""
        sl = self.tail(fraction)
        return float(np.sqrt(np.mean(np.sum(self.mean_error[sl] ** 2, axis=1))))

    def to_csv(self) -> str:
        n = self.mean_error.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time"] + [f"mean_e_{i + 1}" for i in range(n)]
                   + [f"std_e_{i + 1}" for i in range(n)] + [f"pred_std_{i + 1}" for i in range(n)])
        std = np.sqrt(self.sample_cov_diag)
        pstd = np.sqrt(self.predicted_cov_diag)
        for k, t in enumerate(self.time_grid):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in self.mean_error[k]]
                       + [repr(float(v)) for v in std[k]] + [repr(float(v)) for v in pstd[k]])
        return buf.getvalue()


def _factor(cov: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Matrix L with L L' = cov, infinite variances on unused channels set to 0."""
    cov = np.array(cov, dtype=float)
    d = np.diag(cov).copy()
    bad = ~np.isfinite(d)
    if np.any(bad):
        noise_outer(G, cov)  # raises unless the channels are unused
        cov[bad, :] = 0.0
        cov[:, bad] = 0.0
    w, V = np.linalg.eigh(0.5 * (cov + cov.T))
    return V * np.sqrt(np.clip(w, 0.0, None))


def _steps(model: LtiModel, horizon: float, dt: float) -> tuple[int, float]:
    if model.is_discrete:
        return int(round(horizon)), float(model.sample_time)
    return int(round(horizon / dt)), float(dt)


def propagate_covariance(model: LtiModel, K, Q, R, sigma0, horizon: float,
                         dt: float = 0.01) -> CovarianceTrajectory:
    """Error covariance of the fixed-gain filter over time.

    Discrete: posterior Joseph recursion, ``horizon`` steps.  Continuous: RK4
    on ``dS/dt = F S + S F' + K R K' + B Q B'`` with ``F = A - KC``.
    """
    K = np.asarray(K, dtype=float)
    n = model.n
    S = np.array(sigma0, dtype=float).reshape(n, n)
    steps, h = _steps(model, horizon, dt)
    out = np.empty((steps + 1, n, n))
    out[0] = S
    limit = 1e12 * (1.0 + np.trace(S))
    if model.is_discrete:
        IKC = np.eye(n) - K @ model.C
        Phi = IKC @ model.A
        M = noise_outer(IKC @ model.B, Q) + noise_outer(K, R)
        for k in range(steps):
            S = Phi @ S @ Phi.T + M
            S = 0.5 * (S + S.T)
            out[k + 1] = S
    else:
        F = model.A - K @ model.C
        M = noise_outer(K, R) + noise_outer(model.B, Q)
        M = 0.5 * (M + M.T)

        def f(X):
            return F @ X + X @ F.T + M

        for k in range(steps):
            k1 = f(S)
            k2 = f(S + 0.5 * h * k1)
            k3 = f(S + 0.5 * h * k2)
            k4 = f(S + h * k3)
            S = S + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            S = 0.5 * (S + S.T)
            tr = np.trace(S)
            if not np.isfinite(tr) or tr > limit:
                raise StepSizeError(f"covariance blew up at t={(k + 1) * h:.4g}; reduce dt")
            out[k + 1] = S
    return CovarianceTrajectory(np.arange(steps + 1) * h, out)


def _check_stable(model: LtiModel, K: np.ndarray) -> None:
    if model.is_discrete:
        rho = spectral_radius((np.eye(model.n) - K @ model.C) @ model.A)
        if rho >= 1.0:
            raise SimulationDivergedError(f"(I-KC)A has spectral radius {rho:.4f}", 0.0)
    else:
        a = spectral_abscissa(model.A - K @ model.C)
        if a >= 0.0:
            raise SimulationDivergedError(f"A-KC has eigenvalue real part {a:.3e}", 0.0)


def simulate_filter(model: LtiModel, K, Q, R, config: SimConfig) -> SimResult:
    """Monte-Carlo simulation of plant and filter; statistics of e = x - xhat.

    Each run owns three generators (initial state, process noise, measurement
    noise) spawned from ``config.seed``, so results do not depend on how runs
    are batched or how time steps are chunked.
    """
    K = np.asarray(K, dtype=float)
    _check_stable(model, K)
    n, m, p = model.n, model.m, model.p
    A, B, C = model.A, model.B, model.C
    steps, h = _steps(model, config.horizon, config.dt)
    Lq = _factor(Q, (np.eye(n) - K @ C) @ B if model.is_discrete else B)
    Lr = _factor(R, K)
    sigma0 = np.eye(n) if config.sigma0 is None else np.asarray(config.sigma0, dtype=float)
    L0 = _factor(sigma0, np.eye(n))
    xhat0 = np.zeros(n) if config.xhat0 is None else np.asarray(config.xhat0, dtype=float)

    if model.is_discrete:
        proc = (B @ Lq).T            # row-vector convention: x @ M.T
        meas = Lr.T
    else:
        proc = (np.sqrt(h) * B @ Lq).T
        meas = (Lr / np.sqrt(h)).T
    At, Ct, Kt = A.T, C.T, K.T

    sum1 = np.zeros((steps + 1, n))
    sum2 = np.zeros((steps + 1, n))
    runs = np.empty((config.n_runs, steps + 1, n)) if config.keep_runs else None
    seqs = np.random.SeedSequence(config.seed).spawn(config.n_runs)

    for b0 in range(0, config.n_runs, RUN_BATCH):
        streams = [[np.random.default_rng(c) for c in s.spawn(3)]
                   for s in seqs[b0:b0 + RUN_BATCH]]
        nb = len(streams)
        if config.x0_true is None:
            x = xhat0 + np.stack([g[0].standard_normal(n) for g in streams]) @ L0.T
        else:
            x = np.tile(np.asarray(config.x0_true, dtype=float), (nb, 1))
        xh = np.tile(xhat0, (nb, 1))
        e = x - xh
        sum1[0] += e.sum(axis=0)
        sum2[0] += (e * e).sum(axis=0)
        if runs is not None:
            runs[b0:b0 + nb, 0] = e
        k = 0
        while k < steps:
            L = min(STEP_CHUNK, steps - k)
            W = np.stack([g[1].standard_normal((L, m)) for g in streams], axis=1) @ proc
            V = np.stack([g[2].standard_normal((L, p)) for g in streams], axis=1) @ meas
            for i in range(L):
                if model.is_discrete:
                    x = x @ At + W[i]
                    y = x @ Ct + V[i]
                    prior = xh @ At
                    xh = prior + (y - prior @ Ct) @ Kt
                else:
                    y = x @ Ct + V[i]
                    x = x + h * (x @ At) + W[i]
                    xh = xh + h * (xh @ At + (y - xh @ Ct) @ Kt)
                e = x - xh
                s = e.sum(axis=0)
                if not np.all(np.isfinite(s)):
                    t = (k + i + 1) * h
                    raise SimulationDivergedError(f"non-finite state at t={t:.6g}", t)
                sum1[k + i + 1] += s
                sum2[k + i + 1] += (e * e).sum(axis=0)
                if runs is not None:
                    runs[b0:b0 + nb, k + i + 1] = e
            k += L

    N = config.n_runs
    mean = sum1 / N
    if N > 1:
        var = np.clip((sum2 - N * mean**2) / (N - 1), 0.0, None)
    else:
        var = np.zeros_like(mean)
    pred = propagate_covariance(model, K, Q, R, sigma0, config.horizon, config.dt)
    pdiag = np.diagonal(pred.sigma, axis1=1, axis2=2).copy()
    return SimResult(pred.time, mean, var, pdiag, N, runs)
