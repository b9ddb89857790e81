"""Built-in benchmark models: Clohessy-Wiltshire-Hill relative orbital motion
and linearized F-16 longitudinal dynamics, plus the seven named design cases
used by the CLI's ``--case`` flag."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Domain, LtiModel, tustin_discretize

# Mean motion of a LEO target; taken as the numeric value rather than derived.
OMEGA_LEO = 0.00113
SAMPLE_TIME = 0.01
TRACE_BUDGET = 0.1

F16_TRIM_STATE = (1000.0, -3.02e-3, -3.02e-3, 0.0)
F16_TRIM_INPUT = (6041.2, -1.38)


def cwh_model(omega_ref: float = OMEGA_LEO) -> LtiModel:
    """CWH relative motion with full-state measurement, noise entering through
    the thrust channels (state order x, y, z, xdot, ydot, zdot)."""
    if not omega_ref > 0:
        raise ValueError("omega_ref must be positive")
    w = float(omega_ref)
    A = np.zeros((6, 6))
    A[0, 3] = A[1, 4] = A[2, 5] = 1.0
    A[3, 0] = 3.0 * w**2
    A[3, 4] = 2.0 * w
    A[4, 3] = -2.0 * w
    A[5, 2] = -(w**2)
    B = np.zeros((6, 3))
    B[3, 0] = B[4, 1] = B[5, 2] = 1.0
    return LtiModel(
        A=A, B=B, C=np.eye(6), domain=Domain.CONTINUOUS,
        state_labels=("x", "y", "z", "xdot", "ydot", "zdot"),
        noise_labels=("w_Fx", "w_Fy", "w_Fz"),
        sensor_labels=("n_x", "n_y", "n_z", "n_xdot", "n_ydot", "n_zdot"),
        metadata={"omega_ref": w},
    )


def f16_model() -> LtiModel:
    """F-16 longitudinal model, states [V, alpha, theta, q] and measurements
    [udot, wdot, alpha, q, qbar]."""
    A = [
        [-1.8969e-2, -0.4052, -32.17, 0.8915],
        [-6.4397e-5, -1.6176, 0.0, 0.9325],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, -2.3683, 0.0, -1.9696],
    ]
    B = np.array([
        [1, 0, 0, 0],
        [0, 1, 0, 0],
        [0, 0, 0, 1],
    ], dtype=float).T
    C = [
        [-0.0191, -5.2893, -32.17, 3.7071],
        [-0.0643, -1.6176, 0.0971, 932.5332],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [1.7578, 0.0, 0.0, 0.0],
    ]
    return LtiModel(
        A=A, B=B, C=C, domain=Domain.CONTINUOUS,
        state_labels=("V", "alpha", "theta", "q"),
        noise_labels=("w_V", "w_alpha", "w_q"),
        sensor_labels=("udot", "wdot", "alpha", "q", "qbar"),
        metadata={"trim_state": F16_TRIM_STATE, "trim_input": F16_TRIM_INPUT},
    )


@dataclass(frozen=True)
class BenchmarkCase:
    name: str
    model: LtiModel
    spec: "DesignSpec"  # noqa: F821
    description: str = ""


CASE_NAMES = ("cwh-cont-c1", "cwh-cont-c2", "cwh-disc-c1", "cwh-disc-c2",
              "f16-c1", "f16-c2", "f16-sparse")

CWH_WQ = (1.0, 100.0, 10.0)
CWH_WR = (100.0, 10.0, 1.0, 100.0, 10.0, 1.0)
F16_WQ = (1.0, 10.0, 1.0)
F16_WR = (1.0, 1.0, 0.1, 1.0, 1.0)


class UnknownCaseError(KeyError):
    def __init__(self, name: str):
        super().__init__(f"unknown case {name!r}; valid names: {', '.join(CASE_NAMES)}")
        self.name = name

    def __str__(self) -> str:
        return self.args[0]


def benchmark_case(name: str) -> BenchmarkCase:
    """Model and design specification of one named experiment."""
    from .design import DesignSpec, TraceBound

    if name not in CASE_NAMES:
        raise UnknownCaseError(name)
    target = TraceBound(TRACE_BUDGET)
    if name.startswith("cwh"):
        model = cwh_model()
        if "-disc-" in name:
            model = tustin_discretize(model, SAMPLE_TIME)
        weighted = name.endswith("c2")
        spec = DesignSpec(target=target, gamma=1.0, lam=2,
                          wq=CWH_WQ if weighted else None, wr=CWH_WR if weighted else None)
        desc = ("CWH " + ("discrete (Tustin, Ts=0.01 s)" if "-disc-" in name else "continuous")
                + (", internal weights" if weighted else ", equal weights"))
        return BenchmarkCase(name, model, spec, desc)
    model = f16_model()
    if name == "f16-c1":
        spec = DesignSpec(target=target, gamma=1.0, lam=2)
        desc = "F-16 longitudinal, equal weights"
    elif name == "f16-c2":
        spec = DesignSpec(target=target, gamma=1.0, lam=2, wq=F16_WQ, wr=F16_WR)
        desc = "F-16 longitudinal, internal weights"
    else:
        spec = DesignSpec(target=target, gamma=1.0, lam=1)
        desc = "F-16 longitudinal, l1 sensor precision (sparse sensing)"
    return BenchmarkCase(name, model, spec, desc)
