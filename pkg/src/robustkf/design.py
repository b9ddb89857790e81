"""End-to-end filter synthesis: pick the program, solve it, recover K, Q, R."""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Union

import numpy as np
import scipy.linalg as sla

from . import lmi
from .conic import ConicProgram
from .model import LtiModel, is_spd, symmetrize, validate_model
from .solver import SolveResult, SolverOptions, SolverStatus, solve

INACTIVE_RTOL = 1e-8
Z_COND_WARN = 1e10


@dataclass(frozen=True)
class ExactCovariance:
    sigma: np.ndarray

    def __post_init__(self):
        sigma = symmetrize(np.asarray(self.sigma, dtype=float), "sigma")
        if not is_spd(sigma):
            raise ValueError("ExactCovariance target must be symmetric positive definite")
        object.__setattr__(self, "sigma", sigma)

    @property
    def trace_budget(self) -> float:
        return float(np.trace(self.sigma))


@dataclass(frozen=True)
class TraceBound:
    theta: float

    def __post_init__(self):
        if not np.isfinite(self.theta) or not self.theta > 0:
            raise ValueError("trace bound theta must be positive")

    @property
    def trace_budget(self) -> float:
        return float(self.theta)


Target = Union[ExactCovariance, TraceBound]


@dataclass(frozen=True)
class DesignSpec:
    """Performance target, cost tradeoff and optional precision caps.

    ``wq`` and ``wr`` are the diagonals of the internal weights (``None`` means
    identity).  ``eta_max`` / ``zeta_max`` are optional upper bounds on the
    precisions, i.e. lower bounds on the tolerated variances.
    """

    target: Target
    gamma: float = 1.0
    lam: int = 2
    wq: tuple[float, ...] | None = None
    wr: tuple[float, ...] | None = None
    eta_max: tuple[float, ...] | float | None = None
    zeta_max: tuple[float, ...] | float | None = None
    solver_options: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.lam not in lmi.SUPPORTED_NORMS:
            raise lmi.UnsupportedNormError(
                f"norm order {self.lam!r} is not supported; use 1 or 2")
        for name in ("wq", "wr"):
            w = getattr(self, name)
            if w is None:
                continue
            w = np.asarray(w, dtype=float)
            if w.ndim == 2:
                w = np.diag(w)
            if np.any(w <= 0):
                raise ValueError(f"{name} entries must be positive")
            object.__setattr__(self, name, tuple(float(x) for x in w))

    def with_overrides(self, **changes) -> "DesignSpec":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})

    def to_dict(self) -> dict:
        t = self.target
        target = ({"type": "trace", "theta": t.theta} if isinstance(t, TraceBound)
                  else {"type": "exact", "sigma": t.sigma.tolist()})
        return {
            "target": target, "gamma": self.gamma, "lambda": self.lam,
            "wq": None if self.wq is None else list(self.wq),
            "wr": None if self.wr is None else list(self.wr),
            "eta_max": _listify(self.eta_max), "zeta_max": _listify(self.zeta_max),
            "solver": asdict(self.solver_options),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DesignSpec":
        tgt = data.get("target")
        if tgt is None and "theta" in data:
            tgt = {"type": "trace", "theta": data["theta"]}
        if tgt is None:
            raise ValueError("design spec needs a 'target' (or 'theta')")
        if tgt.get("type", "trace") == "trace":
            target: Target = TraceBound(float(tgt["theta"]))
        else:
            target = ExactCovariance(np.array(tgt["sigma"], dtype=float))
        options = SolverOptions(**data.get("solver", {}))
        return cls(target=target, gamma=float(data.get("gamma", 1.0)),
                   lam=int(data.get("lambda", data.get("lam", 2))),
                   wq=data.get("wq"), wr=data.get("wr"),
                   eta_max=data.get("eta_max"), zeta_max=data.get("zeta_max"),
                   solver_options=options)


def _listify(v):
    if v is None:
        return None
    a = np.asarray(v, dtype=float)
    return float(a) if a.ndim == 0 else a.tolist()


class DesignError(RuntimeError):
    status = SolverStatus.NUMERICAL_FAILURE


class InfeasibleDesignError(DesignError):
    status = SolverStatus.INFEASIBLE

    def __init__(self, message: str, certificate_norm: float | None = None):
        super().__init__(message)
        self.certificate_norm = certificate_norm


class NumericalFailureError(DesignError):
    def __init__(self, message: str, condition: float | None = None,
                 status: SolverStatus = SolverStatus.NUMERICAL_FAILURE):
        super().__init__(message)
        self.condition = condition
        self.status = status


class UnobservableModelError(DesignError):
    pass


@dataclass(eq=False)
class DesignSolution:
    K: np.ndarray
    eta: np.ndarray
    zeta: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    sigma_inf: np.ndarray
    objective: float
    solver_status: SolverStatus
    iterations: int = 0
    solve_time: float = 0.0
    program_name: str = ""
    inactive_process: tuple[int, ...] = ()
    inactive_sensors: tuple[int, ...] = ()
    warnings: list[str] = field(default_factory=list)
    assignment: dict[str, Any] | None = None
    program: ConicProgram | None = None

    @property
    def active_sensors(self) -> tuple[int, ...]:
        return tuple(j for j in range(self.zeta.size) if j not in self.inactive_sensors)

    def effective_noise(self) -> tuple[np.ndarray, np.ndarray]:
        """(Q, R) from the raw precisions, without inactive flagging.

        Entries with nonpositive precision are infinite.  This is the noise
        level the solved LMI certifies, so the oracles use it.
        """
        return _inverse_diag(self.eta), _inverse_diag(self.zeta)

    def to_dict(self) -> dict:
        return {
            "program": self.program_name,
            "solver_status": self.solver_status.value,
            "objective": self.objective,
            "iterations": self.iterations,
            "solve_time": self.solve_time,
            "K": self.K.tolist(),
            "eta": self.eta.tolist(),
            "zeta": self.zeta.tolist(),
            "Q": _matrix_with_nulls(self.Q),
            "R": _matrix_with_nulls(self.R),
            "sigma_inf": self.sigma_inf.tolist(),
            "inactive_process": list(self.inactive_process),
            "inactive_sensors": list(self.inactive_sensors),
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "DesignSolution":
        def mat(key):
            return np.array([[np.inf if v is None else v for v in row] for row in data[key]],
                            dtype=float)
        return cls(
            K=np.array(data["K"], dtype=float), eta=np.array(data["eta"], dtype=float),
            zeta=np.array(data["zeta"], dtype=float), Q=mat("Q"), R=mat("R"),
            sigma_inf=np.array(data["sigma_inf"], dtype=float),
            objective=float(data["objective"]),
            solver_status=SolverStatus(data["solver_status"]),
            iterations=int(data.get("iterations", 0)),
            solve_time=float(data.get("solve_time", 0.0)),
            program_name=data.get("program", ""),
            inactive_process=tuple(data.get("inactive_process", ())),
            inactive_sensors=tuple(data.get("inactive_sensors", ())),
            warnings=list(data.get("warnings", ())),
        )


def _matrix_with_nulls(M: np.ndarray) -> list:
    return [[None if not np.isfinite(v) else float(v) for v in row] for row in M]


def _inverse_diag(prec: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        inv = np.where(prec > 0, 1.0 / np.where(prec > 0, prec, 1.0), np.inf)
    return np.diag(inv)


def flag_inactive(prec: np.ndarray, rtol: float = INACTIVE_RTOL) -> tuple[int, ...]:
    """Indices whose precision is below ``rtol * max(prec)``."""
    top = float(np.max(prec)) if prec.size else 0.0
    if top <= 0:
        return tuple(range(prec.size))
    return tuple(int(i) for i in np.flatnonzero(prec < rtol * top))


def build_program(model: LtiModel, spec: DesignSpec) -> ConicProgram:
    """Select and build the program matching the model domain and the target."""
    kwargs = dict(gamma=spec.gamma, lam=spec.lam, wq=spec.wq, wr=spec.wr,
                  eta_max=spec.eta_max, zeta_max=spec.zeta_max)
    exact = isinstance(spec.target, ExactCovariance)
    if model.is_discrete:
        if exact:
            return lmi.build_thm1(model, spec.target.sigma, **kwargs)
        return lmi.build_cor1(model, spec.target.theta, **kwargs)
    if exact:
        return lmi.build_thm2(model, spec.target.sigma, **kwargs)
    return lmi.build_cor2(model, spec.target.theta, **kwargs)


def recover(program: ConicProgram, result: SolveResult) -> DesignSolution:
    """Apply the program's recovery map to a successful solve."""
    rec = program.recovery
    values = result.values
    notes: list[str] = []
    eta = np.clip(np.asarray(values[rec.eta], dtype=float), 0.0, None)
    zeta = np.clip(np.asarray(values[rec.zeta], dtype=float), 0.0, None)
    gain = np.asarray(values[rec.gain], dtype=float)
    if rec.congruence is None:
        K = gain
        sigma = rec.sigma
    else:
        Z = symmetrize(np.asarray(values[rec.congruence], dtype=float), "Z")
        w = np.linalg.eigvalsh(Z)
        cond = float(w[-1] / w[0]) if w[0] > 0 else np.inf
        try:
            factor = sla.cho_factor(Z)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailureError(
                f"Z is not positive definite (condition estimate {cond:.3e})", cond) from exc
        if cond > Z_COND_WARN:
            notes.append(f"Z is ill-conditioned (condition number {cond:.3e})")
        K = sla.cho_solve(factor, gain)
        sigma = sla.cho_solve(factor, np.eye(Z.shape[0]))
        sigma = 0.5 * (sigma + sigma.T)
    inactive_q = flag_inactive(eta)
    inactive_r = flag_inactive(zeta)
    Q = _inverse_diag(np.where(np.isin(np.arange(eta.size), inactive_q), 0.0, eta))
    R = _inverse_diag(np.where(np.isin(np.arange(zeta.size), inactive_r), 0.0, zeta))
    if result.status is SolverStatus.NEAR_OPTIMAL:
        notes.append("solver stopped short of its tolerances; solution is near-optimal")
    return DesignSolution(
        K=K, eta=eta, zeta=zeta, Q=Q, R=R, sigma_inf=np.array(sigma, dtype=float),
        objective=result.objective, solver_status=result.status,
        iterations=result.iterations, solve_time=result.solve_time,
        program_name=program.name, inactive_process=inactive_q, inactive_sensors=inactive_r,
        warnings=notes, assignment=values, program=program,
    )


def design_robust_filter(model: LtiModel, spec: DesignSpec) -> DesignSolution:
    """Jointly compute the filter gain and the largest tolerable noise levels.

    Raises :class:`InfeasibleDesignError` when the target cannot be met and
    :class:`NumericalFailureError` when the solver or the recovery breaks down.
    """
    report = validate_model(model)
    if not report.observable:
        raise UnobservableModelError(
            f"(C, A) is not observable (rank {report.observability_rank} < {model.n})")
    program = build_program(model, spec)
    result = solve(program, spec.solver_options)
    if result.status is SolverStatus.INFEASIBLE:
        hint = (" ; an exact covariance target is often too strict, try a trace bound"
                if isinstance(spec.target, ExactCovariance) else "")
        raise InfeasibleDesignError(
            f"{program.name}: performance target is infeasible{hint}", result.certificate_norm)
    if not result.status.ok:
        raise NumericalFailureError(
            f"{program.name}: solver returned {result.status.value} ({result.raw_status})",
            status=result.status)
    solution = recover(program, result)
    for note in solution.warnings:
        warnings.warn(note, RuntimeWarning, stacklevel=2)
    return solution
