"""Interior-point backend for :class:`~robustkf.conic.ConicProgram`.

Programs are compiled to the standard form used by ``cvxopt.solvers.conelp``::

    minimize c'x  s.t.  G x + s = h,  A x = b,  s in (R+^l x Q^q1 x ... x S^s1 x ...)
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

from .conic import Affine, ConicProgram


class SolverStatus(str, Enum):
    OPTIMAL = "Optimal"
    NEAR_OPTIMAL = "NearOptimal"
    INFEASIBLE = "Infeasible"
    NUMERICAL_FAILURE = "NumericalFailure"
    ITERATION_LIMIT = "IterationLimit"

    @property
    def ok(self) -> bool:
        return self in (SolverStatus.OPTIMAL, SolverStatus.NEAR_OPTIMAL)


@dataclass(frozen=True)
class SolverOptions:
    abstol: float = 1e-8
    reltol: float = 1e-8
    feastol: float = 1e-8
    max_iters: int = 200
    # residual level below which a stalled solve is still reported NearOptimal
    near_optimal_tol: float = 1e-6
    refinement: int = 2
    verbose: bool = False


@dataclass
class SolveResult:
    status: SolverStatus
    values: dict[str, Any] | None
    objective: float
    iterations: int
    solve_time: float
    primal_residual: float
    dual_residual: float
    gap: float
    relative_gap: float
    certificate_norm: float | None = None
    raw_status: str = ""
    info: dict = field(default_factory=dict)


@dataclass
class CompiledProgram:
    c: np.ndarray
    G: np.ndarray
    h: np.ndarray
    dims: dict
    A: np.ndarray
    b: np.ndarray
    offset: float


def _columns(expr: Affine, offsets: dict[str, slice], nx: int, order: str) -> tuple:
    """Rows of ``vec(expr) = const + M x`` with vec in the given memory order."""
    r, c = expr.shape
    M = np.zeros((r * c, nx))
    for name, coef in expr.coef.items():
        M[:, offsets[name]] = coef.reshape(r * c, -1) if order == "C" else \
            coef.transpose(1, 0, 2).reshape(r * c, -1)
    const = expr.const.ravel(order=order)
    return const, M


def compile_program(program: ConicProgram) -> CompiledProgram:
    offsets = program.offsets()
    nx = program.n_scalars
    obj_const, obj_row = _columns(program.objective, offsets, nx, "C")

    G_parts, h_parts = [], []
    eq_G, eq_h = [], []
    n_lin = 0
    for lc in program.linear_constraints:
        const, M = _columns(lc.expr, offsets, nx, "C")
        if lc.equality:
            eq_G.append(M)
            eq_h.append(-const)
        else:
            G_parts.append(-M)
            h_parts.append(const)
            n_lin += const.size
    q_dims = []
    for soc in program.soc_constraints:
        ct, Mt = _columns(soc.t, offsets, nx, "C")
        cv, Mv = _columns(soc.v, offsets, nx, "C")
        G_parts.append(-np.vstack([Mt, Mv]))
        h_parts.append(np.concatenate([ct, cv]))
        q_dims.append(1 + cv.size)
    s_dims = []
    for blk in program.psd_blocks:
        k = blk.expr.shape[0]
        shifted = blk.expr - blk.margin * np.eye(k)
        const, M = _columns(shifted, offsets, nx, "F")
        G_parts.append(-M)
        h_parts.append(const)
        s_dims.append(k)
    G = np.vstack(G_parts) if G_parts else np.zeros((0, nx))
    h = np.concatenate(h_parts) if h_parts else np.zeros(0)
    A = np.vstack(eq_G) if eq_G else np.zeros((0, nx))
    b = np.concatenate(eq_h) if eq_h else np.zeros(0)
    return CompiledProgram(obj_row[0], G, h, {"l": n_lin, "q": q_dims, "s": s_dims},
                           A, b, float(obj_const[0]))


def solve(program: ConicProgram, options: SolverOptions | None = None) -> SolveResult:
    """Solve ``program``; the status is reported, never raised."""
    import cvxopt
    from cvxopt import solvers

    options = options or SolverOptions()
    cp = compile_program(program)
    opts = {
        "abstol": options.abstol, "reltol": options.reltol, "feastol": options.feastol,
        "maxiters": options.max_iters, "refinement": options.refinement,
        "show_progress": options.verbose,
    }
    args = [cvxopt.matrix(cp.c), cvxopt.matrix(cp.G), cvxopt.matrix(cp.h), cp.dims]
    if cp.A.shape[0]:
        args += [cvxopt.matrix(cp.A), cvxopt.matrix(cp.b)]
    t0 = time.perf_counter()
    try:
        sol = solvers.conelp(*args, options=opts)
    except (ArithmeticError, ValueError) as exc:
        return SolveResult(SolverStatus.NUMERICAL_FAILURE, None, np.nan, 0,
                           time.perf_counter() - t0, np.inf, np.inf, np.inf, np.inf,
                           raw_status=f"exception: {exc}")
    elapsed = time.perf_counter() - t0

    raw = sol["status"]
    pres = _num(sol.get("primal infeasibility"))
    dres = _num(sol.get("dual infeasibility"))
    gap = _num(sol.get("gap"))
    rgap = _num(sol.get("relative gap"))
    iters = int(sol.get("iterations", 0))
    cert = None
    if raw == "optimal":
        status = SolverStatus.OPTIMAL
    elif raw == "primal infeasible":
        status = SolverStatus.INFEASIBLE
        cert = _num(sol.get("residual as primal infeasibility certificate"))
    elif raw == "dual infeasible":
        status = SolverStatus.NUMERICAL_FAILURE
        cert = _num(sol.get("residual as dual infeasibility certificate"))
    else:
        tol = options.near_optimal_tol
        small_gap = (np.isfinite(rgap) and rgap <= tol) or (np.isfinite(gap) and gap <= tol)
        if sol.get("x") is not None and max(pres, dres) <= tol and small_gap:
            status = SolverStatus.NEAR_OPTIMAL
        elif iters >= options.max_iters:
            status = SolverStatus.ITERATION_LIMIT
        else:
            status = SolverStatus.NUMERICAL_FAILURE

    values = None
    objective = np.nan
    if status.ok:
        x = np.array(sol["x"]).ravel()
        values = program.unpack_vector(x)
        objective = float(cp.c @ x + cp.offset)
    return SolveResult(status, values, objective, iters, elapsed, pres, dres, gap, rgap,
                       certificate_norm=cert, raw_status=raw)


def _num(value) -> float:
    return float("nan") if value is None else float(value)
