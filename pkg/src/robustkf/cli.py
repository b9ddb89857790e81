"""Command-line front end.

Exit codes: 0 success, 1 verification failed (or simulation did not meet its
convergence checks), 2 infeasible, 3 numerical failure (solver or recovery),
4 I/O, parse, usage or model-validation error, 5 simulation diverged.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import tomli

from .cases import CASE_NAMES, UnknownCaseError, benchmark_case
from .design import (DesignError, DesignSolution, DesignSpec, InfeasibleDesignError,
                     TraceBound, UnobservableModelError, design_robust_filter)
from .lmi import UnsupportedNormError
from .model import LtiModel, ModelError, load_model
from .sim import SimConfig, SimulationDivergedError, StepSizeError, simulate_filter
from .sparse import PruningRejectedError, prune_sensors
from .verify import verify_solution

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_INFEASIBLE = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4
EXIT_DIVERGED = 5

SIM_STD_RTOL = 0.15
SIM_MIN_RUNS_FOR_COHERENCE = 100

SUMMARY_FIELDS = ["case", "status", "objective", "trace", "margin", "active_sensors",
                  "inactive_sensors"]


class UsageError(Exception):
    pass


@dataclass
class Job:
    label: str
    model: LtiModel
    spec: DesignSpec


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())
    except ValueError as exc:
        raise UsageError(f"cannot parse number list {text!r}") from exc


def _read_document(path: str) -> dict:
    p = Path(path)
    text = p.read_text()
    return tomli.loads(text) if p.suffix.lower() == ".toml" else json.loads(text)


def _bounds(items: list[str] | None) -> dict:
    out = {}
    for item in items or []:
        key, _, vals = item.partition("=")
        key = key.strip().lower()
        if key in ("eta", "eta_max"):
            out["eta_max"] = _floats(vals)
        elif key in ("zeta", "zeta_max"):
            out["zeta_max"] = _floats(vals)
        else:
            raise UsageError(f"--bounds expects eta=... or zeta=..., got {item!r}")
    return {k: (v[0] if len(v) == 1 else v) for k, v in out.items()}


def resolve_job(args, case: str | None = None, theta: float | None = None,
                gamma: float | None = None) -> Job:
    """Model and spec from case defaults < spec file < command-line flags."""
    case = case or args.case
    if case and args.model:
        raise UsageError("give either --case or --model, not both")
    spec: DesignSpec | None = None
    if case:
        bc = benchmark_case(case)
        model, spec, label = bc.model, bc.spec, case
    elif args.model:
        model = load_model(args.model)
        label = Path(args.model).stem
    else:
        raise UsageError("one of --case or --model is required")
    if args.spec:
        doc = _read_document(args.spec)
        if "theta" in doc and "target" not in doc:
            doc["target"] = {"type": "trace", "theta": doc.pop("theta")}
        if "lam" in doc:
            doc["lambda"] = doc.pop("lam")
        if spec is not None:
            base = spec.to_dict()
            base.update(doc)
            doc = base
        spec = DesignSpec.from_dict(doc)
    theta = theta if theta is not None else args.theta
    if spec is None:
        if theta is None:
            raise UsageError("--model needs --spec or --theta")
        spec = DesignSpec(target=TraceBound(theta))
    overrides = dict(
        gamma=gamma if gamma is not None else args.gamma,
        lam=args.lam,
        wq=_floats(args.wq) if args.wq else None,
        wr=_floats(args.wr) if args.wr else None,
        **_bounds(args.bounds),
    )
    if theta is not None:
        overrides["target"] = TraceBound(theta)
    return Job(label, model, spec.with_overrides(**overrides))


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get("ROBUSTKF_OUT") or "robustkf-out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _formats(args) -> set[str]:
    fmts = {f.strip() for f in (args.format or "json,csv").split(",") if f.strip()}
    if not fmts <= {"json", "csv"}:
        raise UsageError(f"--format accepts json and/or csv, got {args.format!r}")
    return fmts


def _labels(model: LtiModel, idx) -> str:
    names = model.sensor_labels or tuple(f"y{j + 1}" for j in range(model.p))
    return ";".join(names[j] for j in idx)


def design_and_verify(job: Job) -> tuple[DesignSolution, object, object]:
    solution = design_robust_filter(job.model, job.spec)
    report = verify_solution(job.model, solution, job.spec)
    sparsity = None
    if job.spec.lam == 1 and solution.inactive_sensors:
        sparsity = prune_sensors(job.model, solution, job.spec)
    return solution, report, sparsity


def summary_row(job: Job, solution: DesignSolution, report) -> dict:
    return {
        "case": job.label,
        "status": solution.solver_status.value,
        "objective": repr(solution.objective),
        "trace": repr(report.oracle_trace),
        "margin": repr(report.trace_margin),
        "active_sensors": len(solution.active_sensors),
        "inactive_sensors": _labels(job.model, solution.inactive_sensors),
    }


def _write_csv(path: Path, rows: list[dict], fields: list[str]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, restval="", lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def cmd_design(args) -> int:
    job = resolve_job(args)
    out = _out_dir(args)
    fmts = _formats(args)
    solution, report, sparsity = design_and_verify(job)
    if "json" in fmts:
        (out / "solution.json").write_text(solution.to_json())
        (out / "verification.json").write_text(report.to_json())
        if sparsity is not None:
            (out / "sparsity.json").write_text(sparsity.to_json())
    if "csv" in fmts:
        _write_csv(out / "summary.csv", [summary_row(job, solution, report)], SUMMARY_FIELDS)
    _print_report(job, solution, report)
    return EXIT_OK if report.passed else EXIT_VERIFY_FAILED


def _print_report(job, solution, report) -> None:
    checks = [
        ("solver status", solution.solver_status.value, solution.solver_status.ok),
        ("filter stable", f"{report.stability_measure:.6g}", report.stable),
        ("trace budget", f"{report.oracle_trace:.6g} <= {report.trace_budget:.6g}",
         report.trace_margin >= -1e-4),
        ("Riccati bound", f"{report.riccati_trace:.6g}",
         not any("Riccati" in f for f in report.failures)),
    ] + [(f"LMI {k}", f"min eig {v:.3e}", not any(k in f for f in report.failures))
         for k, v in report.lmi_min_eig.items()]
    print(f"{job.label}: objective {solution.objective:.6g}")
    for name, value, ok in checks:
        print(f"  [{'PASS' if ok else 'FAIL'}] {name:<26} {value}")
    if solution.inactive_sensors:
        print(f"  inactive sensors: {_labels(job.model, solution.inactive_sensors)}")


def cmd_verify(args) -> int:
    job = resolve_job(args)
    out = _out_dir(args)
    if args.solution:
        solution = DesignSolution.from_dict(json.loads(Path(args.solution).read_text()))
    else:
        solution = design_robust_filter(job.model, job.spec)
    report = verify_solution(job.model, solution, job.spec)
    (out / "verification.json").write_text(report.to_json())
    _print_report(job, solution, report)
    return EXIT_OK if report.passed else EXIT_VERIFY_FAILED


def cmd_simulate(args) -> int:
    job = resolve_job(args)
    out = _out_dir(args)
    if args.solution:
        solution = DesignSolution.from_dict(json.loads(Path(args.solution).read_text()))
    else:
        solution = design_robust_filter(job.model, job.spec)
    Q, R = solution.effective_noise()
    horizon = args.horizon
    if job.model.is_discrete:
        horizon = round(horizon / job.model.sample_time)
    config = SimConfig(horizon=horizon, dt=args.dt, n_runs=args.runs, seed=args.seed)
    result = simulate_filter(job.model, solution.K, Q, R, config)
    (out / "sim.csv").write_text(result.to_csv())
    sample_std, pred_std = result.steady_state_std()
    rel = np.abs(sample_std / pred_std - 1.0)
    summary = {
        "case": job.label, "runs": args.runs, "seed": args.seed,
        "final_predicted_trace": float(result.predicted_cov_diag[-1].sum()),
        "steady_sample_std": sample_std.tolist(), "steady_predicted_std": pred_std.tolist(),
        "max_relative_std_error": float(rel.max()),
        "tail_mean_error_norm": result.tail_mean_error_norm(),
    }
    budget = job.spec.target.trace_budget
    converged = summary["final_predicted_trace"] <= budget + 1e-3
    if args.runs >= SIM_MIN_RUNS_FOR_COHERENCE:
        converged = converged and bool(rel.max() <= SIM_STD_RTOL)
    summary["converged"] = converged
    (out / "sim_summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary, indent=2))
    return EXIT_OK if converged else EXIT_VERIFY_FAILED


def _sweep_point(args_dict: dict, index: int, case, theta, gamma) -> dict:
    args = argparse.Namespace(**args_dict)
    row = {"index": index, "case": case or "", "theta": theta, "gamma": gamma}
    try:
        job = resolve_job(args, case=case, theta=theta, gamma=gamma)
        row["case"] = job.label
        solution, report, _ = design_and_verify(job)
        row.update(summary_row(job, solution, report))
        qn = job.model.noise_labels or [f"w{i + 1}" for i in range(job.model.m)]
        rn = job.model.sensor_labels or [f"y{j + 1}" for j in range(job.model.p)]
        row.update({f"Q_{k}": _fmt(v) for k, v in zip(qn, np.diag(solution.Q))})
        row.update({f"R_{k}": _fmt(v) for k, v in zip(rn, np.diag(solution.R))})
        row["error"] = "; ".join(report.failures)
    except DesignError as exc:
        row["status"] = exc.status.value
        row["error"] = str(exc)
    except (ValueError, UsageError, KeyError, OSError, RuntimeError) as exc:
        row["status"] = "Error"
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def _fmt(v: float) -> str:
    return "inf" if not np.isfinite(v) else repr(float(v))


def _grid_axis(text: str | None) -> list:
    if text is None:
        return [None]
    return list(_floats(text))


def cmd_sweep(args) -> int:
    if args.case is not None and args.model:
        raise UsageError("give either --case or --model, not both")
    if args.case is None and not args.model:
        raise UsageError("sweep needs --case (comma list) or --model")
    cases = [None] if args.case is None else [c.strip() for c in args.case.split(",") if c.strip()]
    thetas = _grid_axis(args.theta)
    gammas = _grid_axis(args.gamma)
    grid = [(c, t, g) for c in cases for t in thetas for g in gammas]
    if not grid:
        raise UsageError("empty sweep grid; give --case, --theta and/or --gamma as comma lists")
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    out = _out_dir(args)
    base = vars(args).copy()
    base.pop("func", None)
    base.update(case=None, theta=None, gamma=None)
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_sweep_point, base, i, *pt) for i, pt in enumerate(grid)]
            rows = [f.result() for f in futures]
    else:
        rows = [_sweep_point(base, i, *pt) for i, pt in enumerate(grid)]
    fields = ["index", "case", "theta", "gamma"] + SUMMARY_FIELDS[1:]
    for r in rows:
        fields += [k for k in r if k not in fields and k != "error"]
    _write_csv(out / "sweep.csv", rows, fields + ["error"])
    for r in rows:
        print(f"{r['index']:>3} {r['case']:<14} theta={r['theta']} gamma={r['gamma']} "
              f"{r.get('status', '')} objective={r.get('objective', '')}")
    return EXIT_OK


def cmd_list_cases(args) -> int:
    for name in CASE_NAMES:
        print(f"{name:<14} {benchmark_case(name).description}")
    return EXIT_OK


def _common(p: argparse.ArgumentParser, grid: bool = False) -> None:
    num = str if grid else float
    suffix = " (comma list spans the grid)" if grid else ""
    p.add_argument("--case", help="built-in case name" + suffix)
    p.add_argument("--model", help="model file (.json or .toml)")
    p.add_argument("--spec", help="design spec file (.json or .toml)")
    p.add_argument("--theta", type=num, help="trace budget tr(Sigma) <= theta" + suffix)
    p.add_argument("--gamma", type=num, help="sensor/process tradeoff weight" + suffix)
    p.add_argument("--lambda", dest="lam", type=int, choices=(1, 2),
                   help="norm on sensor precisions")
    p.add_argument("--wq", help="process-noise weights, comma list")
    p.add_argument("--wr", help="sensor-noise weights, comma list")
    p.add_argument("--bounds", action="append",
                   help="precision caps, eta=V[,V..] or zeta=V[,V..] (repeatable)")
    p.add_argument("--out", help="output directory (default $ROBUSTKF_OUT or ./robustkf-out)")
    p.add_argument("--format", help="json,csv (default both)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--runs", type=int, default=1000)
    p.add_argument("--jobs", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robustkf",
        description="Kalman filter gain and noise-robustness margins from convex programs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("design", help="design, verify and write solution artifacts")
    _common(p)
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("verify", help="verify a solution with the non-SDP oracles")
    _common(p)
    p.add_argument("--solution", help="solution.json from a previous design run")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("simulate", help="Monte-Carlo simulation, writes sim.csv")
    _common(p)
    p.add_argument("--solution", help="solution.json from a previous design run")
    p.add_argument("--horizon", type=float, default=200.0, help="seconds")
    p.add_argument("--dt", type=float, default=0.01, help="integration step (continuous)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="grid over cases, theta and gamma, writes sweep.csv")
    _common(p, grid=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("list-cases", help="list built-in cases")
    p.set_defaults(func=cmd_list_cases)
    return parser


def _fail(code: int, exc: BaseException) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("certificate_norm", "condition", "time", "sensors"):
        if getattr(exc, attr, None) is not None:
            payload[attr] = getattr(exc, attr)
    print(json.dumps(payload, default=str), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_IO
    try:
        return args.func(args)
    except InfeasibleDesignError as exc:
        return _fail(EXIT_INFEASIBLE, exc)
    except UnobservableModelError as exc:
        return _fail(EXIT_IO, exc)
    except (DesignError, PruningRejectedError) as exc:
        return _fail(EXIT_NUMERICAL, exc)
    except (SimulationDivergedError, StepSizeError) as exc:
        return _fail(EXIT_DIVERGED, exc)
    except (OSError, ModelError, UsageError, UnknownCaseError, UnsupportedNormError,
            json.JSONDecodeError, tomli.TOMLDecodeError, ValueError, KeyError) as exc:
        return _fail(EXIT_IO, exc)


if __name__ == "__main__":
    sys.exit(main())
