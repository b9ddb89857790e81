"""Sparse sensing: l1 sensor-precision designs, reweighting, and pruning."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .design import (DesignError, DesignSolution, DesignSpec, design_robust_filter,
                     flag_inactive)
from .model import LtiModel
from .verify import TRACE_TOL, oracle_covariance

log = logging.getLogger(__name__)

COLUMN_RTOL = 1e-8


class PruningRejectedError(RuntimeError):
    def __init__(self, message: str, sensors: tuple[int, ...], oracle_trace: float):
        super().__init__(message)
        self.sensors = sensors
        self.oracle_trace = oracle_trace


@dataclass
class SparsityResult:
    active_sensors: tuple[int, ...]
    pruned_gain: np.ndarray
    zeta_history: list[np.ndarray] = field(default_factory=list)
    oracle_trace: float | None = None
    warnings: list[str] = field(default_factory=list)

    @property
    def n_sensors(self) -> int:
        return self.pruned_gain.shape[1]

    @property
    def inactive_sensors(self) -> tuple[int, ...]:
        return tuple(j for j in range(self.n_sensors) if j not in self.active_sensors)

    @property
    def sparsity_level(self) -> int:
        return len(self.inactive_sensors)

    def to_dict(self) -> dict:
        return {
            "active_sensors": list(self.active_sensors),
            "inactive_sensors": list(self.inactive_sensors),
            "sparsity_level": self.sparsity_level,
            "pruned_gain": self.pruned_gain.tolist(),
            "oracle_trace": self.oracle_trace,
            "zeta_history": [z.tolist() for z in self.zeta_history],
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def history_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["iteration"] + [f"zeta_{j + 1}" for j in range(self.n_sensors)])
        for i, z in enumerate(self.zeta_history):
            writer.writerow([i] + [repr(float(v)) for v in z])
        return buf.getvalue()


def sparse_design(model: LtiModel, spec: DesignSpec) -> DesignSolution:
    """Design with the l1 norm on the sensor precisions."""
    return design_robust_filter(model, replace(spec, lam=1))


def prune_sensors(model: LtiModel, solution: DesignSolution, spec: DesignSpec,
                  threshold: float | None = None,
                  trace_tol: float = TRACE_TOL) -> SparsityResult:
    """Drop sensors with precision below ``threshold`` and re-verify.

    The default threshold is the inactive level used by the design
    (1e-8 of the largest precision).  The gain columns of dropped sensors are
    zeroed and the steady-state covariance of the pruned filter is recomputed;
    if it no longer meets the trace budget, :class:`PruningRejectedError` is
    raised.
    """
    zeta = np.asarray(solution.zeta, dtype=float)
    if threshold is None:
        inactive = set(flag_inactive(zeta))
    else:
        inactive = {int(j) for j in np.flatnonzero(zeta < threshold)}
    active = tuple(j for j in range(zeta.size) if j not in inactive)
    K = solution.K.copy()
    K[:, sorted(inactive)] = 0.0
    if not inactive:
        return SparsityResult(active, K, [zeta.copy()], None)

    Q, R = solution.effective_noise()
    R = R.copy()
    R[sorted(inactive), sorted(inactive)] = np.inf
    dropped = tuple(sorted(inactive))
    try:
        sigma = oracle_covariance(model, K, Q, R)
    except (RuntimeError, ValueError) as exc:
        raise PruningRejectedError(f"pruning sensors {list(dropped)} destabilizes the filter: "
                                   f"{exc}", dropped, np.inf) from exc
    tr = float(np.trace(sigma))
    budget = spec.target.trace_budget
    if tr > budget + trace_tol:
        raise PruningRejectedError(
            f"pruning sensors {list(dropped)} raises tr(Sigma) to {tr:.6g} > {budget:.6g}",
            dropped, tr)
    col = np.linalg.norm(solution.K[:, sorted(inactive)], axis=0)
    notes = []
    big = col > COLUMN_RTOL * max(np.linalg.norm(solution.K), 1e-300)
    if np.any(big):
        notes.append("pruned columns were not numerically zero: "
                     + ", ".join(f"{j}:{c:.2e}" for j, c in zip(dropped, col) if c > 0))
    return SparsityResult(active, K, [zeta.copy()], tr, notes)


def reweighted_l1(model: LtiModel, spec: DesignSpec, max_iters: int = 8,
                  eps_reweight: float | None = None) -> tuple[DesignSolution, SparsityResult]:
    """Iteratively reweighted l1 on the sensor precisions.

    Each pass solves the l1 design with sensor weights ``w_i / (zeta_i + eps)``,
    rescaled so the weighted cost of the previous iterate equals its plain
    weighted cost (keeps the process/sensor tradeoff set by ``gamma``).  Stops
    once the inactive set repeats or after ``max_iters`` solves.
    """
    base = np.ones(model.p) if spec.wr is None else np.asarray(spec.wr, dtype=float)
    spec = replace(spec, lam=1)
    solution = design_robust_filter(model, spec)
    history = [solution.zeta.copy()]
    notes: list[str] = []
    eps = eps_reweight if eps_reweight is not None else 1e-6 * float(np.max(solution.zeta))
    prev_set = solution.inactive_sensors
    for it in range(1, max_iters):
        zeta = solution.zeta
        if np.isinf(eps):
            w = base.copy()
        else:
            w = base / (zeta + eps)
            plain, weighted = base @ zeta, w @ zeta
            if weighted > 0:
                w *= plain / weighted
        try:
            nxt = design_robust_filter(model, replace(spec, wr=tuple(w)))
        except DesignError as exc:
            notes.append(f"iteration {it} failed ({exc}); keeping the last feasible iterate")
            log.warning(notes[-1])
            break
        history.append(nxt.zeta.copy())
        if len(nxt.inactive_sensors) < len(prev_set):
            notes.append(f"active set grew at iteration {it}")
        solution = nxt
        if nxt.inactive_sensors == prev_set:
            break
        prev_set = nxt.inactive_sensors
    K = solution.K.copy()
    K[:, list(solution.inactive_sensors)] = 0.0
    result = SparsityResult(solution.active_sensors, K, history, None, notes)
    return solution, result
