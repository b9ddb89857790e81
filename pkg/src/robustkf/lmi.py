"""The four filter-synthesis programs.

Each builder returns a :class:`~robustkf.conic.ConicProgram` whose objective is
``||Wq eta||_2 + gamma ||Wr zeta||_lam`` where ``eta`` and ``zeta`` are the
process and sensor precisions (inverse variances, Q^-1 = diag(eta),
R^-1 = diag(zeta)).

* ``build_thm1``: discrete time, fixed steady-state covariance Sigma.
* ``build_cor1``: discrete time, trace budget tr(Sigma) <= theta, with the
  congruence Z = Sigma^-1, W = Z K.
* ``build_thm2``: continuous time, fixed Sigma.
* ``build_cor2``: continuous time, trace budget.
"""

from __future__ import annotations

import numpy as np

from .conic import (Affine, ConicProgram, ProgramBuilder, ProgramError, RecoveryMap,
                    VarKind, diag, sym, symmetric_bmat, trace)
from .model import LtiModel, is_spd, psd_sqrt, symmetrize

SUPPORTED_NORMS = (1, 2)


class UnsupportedNormError(ValueError):
    pass


class DomainError(ValueError):
    pass


def psd_margin(A: np.ndarray) -> float:
    """Strictness margin for blocks whose inverse is needed at recovery."""
    return 1e-9 * (1.0 + np.linalg.norm(A))


def _weight_vector(weight, k: int, name: str) -> np.ndarray:
    if weight is None:
        return np.ones(k)
    w = np.asarray(weight, dtype=float)
    if w.ndim == 2:
        if w.shape != (k, k) or np.count_nonzero(w - np.diag(np.diag(w))):
            raise ValueError(f"{name} must be a {k}x{k} diagonal matrix")
        w = np.diag(w)
    if w.shape != (k,):
        raise ValueError(f"{name} must have {k} diagonal entries, got shape {w.shape}")
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise ValueError(f"{name} diagonal entries must be finite and > 0")
    return w


def _check_norm(lam) -> int:
    if lam not in SUPPORTED_NORMS:
        raise UnsupportedNormError(
            f"norm order {lam!r} is not supported; use 1 (sparsity) or 2 (degradation margin)")
    return int(lam)


def norm_epigraph(builder: ProgramBuilder, name: str, v: Affine, lam, weight) -> Affine:
    """Cost term equal to ``||diag(weight) v||_lam`` at the optimum.

    For ``lam == 2`` a scalar ``t_<name>`` with ``t >= ||W v||_2`` is added and
    ``t`` is returned.  For ``lam == 1`` the weighted sum is returned directly,
    which is exact because ``v`` is constrained nonnegative by the callers.
    """
    lam = _check_norm(lam)
    w = _weight_vector(weight, v.shape[0], f"weight for {name}")
    if lam == 1:
        return w.reshape(1, -1) @ v
    t = builder.variable(f"t_{name}", (), VarKind.SCALAR)
    builder.soc(f"epigraph_{name}", t, np.diag(w) @ v)
    return t


def _precisions(builder: ProgramBuilder, m: int, p: int, eta_max, zeta_max):
    eta = builder.variable("eta", (m,), VarKind.VECTOR)
    zeta = builder.variable("zeta", (p,), VarKind.VECTOR)
    builder.nonneg("eta_nonneg", eta)
    builder.nonneg("zeta_nonneg", zeta)
    for vec, bound, label, k in ((eta, eta_max, "eta", m), (zeta, zeta_max, "zeta", p)):
        if bound is None:
            continue
        b = np.broadcast_to(np.asarray(bound, dtype=float), (k,))
        if np.any(b <= 0):
            raise ValueError(f"{label} upper bounds must be positive")
        builder.nonneg(f"{label}_upper", b.reshape(-1, 1) - vec)
    return eta, zeta


def _objective(builder, eta, zeta, gamma, lam, wq, wr) -> None:
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    builder.add_cost(norm_epigraph(builder, "eta", eta, 2, wq))
    builder.add_cost(float(gamma) * norm_epigraph(builder, "zeta", zeta, lam, wr))


def _check_sigma(sigma, n: int) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (n, n):
        raise ValueError(f"sigma_inf must be {n}x{n}, got {sigma.shape}")
    try:
        sigma = symmetrize(sigma, "sigma_inf")
    except ValueError as exc:
        raise ProgramError(str(exc)) from exc
    if not is_spd(sigma):
        raise ProgramError("sigma_inf must be symmetric positive definite")
    return sigma


def _require(model: LtiModel, discrete: bool) -> None:
    if model.is_discrete != discrete:
        want = "discrete" if discrete else "continuous"
        raise DomainError(f"this program needs a {want}-time model, got {model.domain.value}")


def _check_theta(theta) -> float:
    if not np.isfinite(theta) or not theta > 0:
        raise ProgramError("trace budget theta must be positive")
    return float(theta)


def build_thm1(model: LtiModel, sigma_inf, gamma: float = 1.0, lam=2, wq=None, wr=None,
               eta_max=None, zeta_max=None) -> ConicProgram:
    """Discrete time, exact steady-state covariance ``sigma_inf``.

    The single LMI is the Schur complement of the posterior Joseph fixed point
    relaxed to ``Sigma >= (I-KC)(A Sigma A' + B Q B')(I-KC)' + K R K'``.
    """
    _require(model, discrete=True)
    A, B, C = model.A, model.B, model.C
    n, m, p = model.n, model.m, model.p
    sigma = _check_sigma(sigma_inf, n)
    root = psd_sqrt(sigma)

    pb = ProgramBuilder("thm1")
    K = pb.variable("K", (n, p), VarKind.FULL)
    eta, zeta = _precisions(pb, m, p, eta_max, zeta_max)
    IKC = Affine(np.eye(n)) - K @ C
    block = symmetric_bmat([
        [sigma, IKC @ (A @ root), IKC @ B, K],
        [None, np.eye(n), None, None],
        [None, None, diag(eta), None],
        [None, None, None, diag(zeta)],
    ])
    pb.psd("joseph_lmi", block)
    _objective(pb, eta, zeta, gamma, lam, wq, wr)
    pb.metadata.update(domain="discrete", target="exact", lam=lam, gamma=gamma)
    return pb.build(RecoveryMap(gain="K", sigma=sigma))


def build_cor1(model: LtiModel, theta: float, gamma: float = 1.0, lam=2, wq=None, wr=None,
               eta_max=None, zeta_max=None) -> ConicProgram:
    """Discrete time, trace budget ``tr(Sigma) <= theta``.

    Recovery: ``K = Z^-1 W`` and ``Sigma = Z^-1``.
    """
    _require(model, discrete=True)
    theta = _check_theta(theta)
    A, B, C = model.A, model.B, model.C
    n, m, p = model.n, model.m, model.p

    pb = ProgramBuilder("cor1")
    W = pb.variable("W", (n, p), VarKind.FULL)
    eta, zeta = _precisions(pb, m, p, eta_max, zeta_max)
    Z = pb.variable("Z", (n, n), VarKind.SYMMETRIC)
    X = pb.variable("X", (n, n), VarKind.SYMMETRIC)
    ZWC = Z - W @ C
    pb.psd("joseph_lmi", symmetric_bmat([
        [Z, ZWC @ A, ZWC @ B, W],
        [None, Z, None, None],
        [None, None, diag(eta), None],
        [None, None, None, diag(zeta)],
    ]))
    _trace_budget(pb, X, Z, theta, n, psd_margin(A))
    _objective(pb, eta, zeta, gamma, lam, wq, wr)
    pb.metadata.update(domain="discrete", target="trace", theta=theta, lam=lam, gamma=gamma)
    return pb.build(RecoveryMap(gain="W", congruence="Z"))


def build_thm2(model: LtiModel, sigma_inf, gamma: float = 1.0, lam=2, wq=None, wr=None,
               eta_max=None, zeta_max=None) -> ConicProgram:
    """Continuous time, exact steady-state covariance ``sigma_inf``.

    The constraint block is negative semidefinite; it is stored negated.
    """
    _require(model, discrete=False)
    A, B, C = model.A, model.B, model.C
    n, m, p = model.n, model.m, model.p
    sigma = _check_sigma(sigma_inf, n)

    pb = ProgramBuilder("thm2")
    K = pb.variable("K", (n, p), VarKind.FULL)
    eta, zeta = _precisions(pb, m, p, eta_max, zeta_max)
    closed = (Affine(A) - K @ C) @ sigma
    nsd = symmetric_bmat([
        [sym(closed), B, K],
        [None, -diag(eta), None],
        [None, None, -diag(zeta)],
    ])
    pb.psd("lyapunov_lmi", -nsd)
    _objective(pb, eta, zeta, gamma, lam, wq, wr)
    pb.metadata.update(domain="continuous", target="exact", lam=lam, gamma=gamma)
    return pb.build(RecoveryMap(gain="K", sigma=sigma))


def build_cor2(model: LtiModel, theta: float, gamma: float = 1.0, lam=2, wq=None, wr=None,
               eta_max=None, zeta_max=None) -> ConicProgram:
    """Continuous time, trace budget ``tr(Sigma) <= theta``."""
    _require(model, discrete=False)
    theta = _check_theta(theta)
    A, B, C = model.A, model.B, model.C
    n, m, p = model.n, model.m, model.p

    pb = ProgramBuilder("cor2")
    W = pb.variable("W", (n, p), VarKind.FULL)
    eta, zeta = _precisions(pb, m, p, eta_max, zeta_max)
    Z = pb.variable("Z", (n, n), VarKind.SYMMETRIC)
    X = pb.variable("X", (n, n), VarKind.SYMMETRIC)
    nsd = symmetric_bmat([
        [sym(Z @ A - W @ C), Z @ B, W],
        [None, -diag(eta), None],
        [None, None, -diag(zeta)],
    ])
    pb.psd("lyapunov_lmi", -nsd)
    _trace_budget(pb, X, Z, theta, n, psd_margin(A))
    _objective(pb, eta, zeta, gamma, lam, wq, wr)
    pb.metadata.update(domain="continuous", target="trace", theta=theta, lam=lam, gamma=gamma)
    return pb.build(RecoveryMap(gain="W", congruence="Z"))


def _trace_budget(pb: ProgramBuilder, X: Affine, Z: Affine, theta: float, n: int,
                  margin: float) -> None:
    # [X I; I Z] >= 0 with Z > 0 is X >= Z^-1; tr(X) <= theta bounds tr(Z^-1).
    pb.psd("trace_epigraph", symmetric_bmat([[X, np.eye(n)], [None, Z]]))
    pb.psd("Z_positive", Z, margin=margin)
    pb.nonneg("trace_budget", theta - trace(X))
