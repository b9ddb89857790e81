"""Linear time-invariant models, structural checks, Tustin discretization and
small symmetric-matrix helpers shared by the rest of the package."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import tomli

RANK_RTOL = 1e-9
SYM_RTOL = 1e-10


class ModelError(ValueError):
    """Raised for malformed models; ``matrix`` names the offending field."""

    def __init__(self, message: str, matrix: str | None = None):
        super().__init__(message)
        self.matrix = matrix


class DiscretizationError(ValueError):
    def __init__(self, message: str, smallest_singular_value: float):
        super().__init__(message)
        self.smallest_singular_value = smallest_singular_value


class NotPSDError(ValueError):
    def __init__(self, message: str, eigenvalue: float):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class Domain(str, Enum):
    CONTINUOUS = "continuous"
    DISCRETE = "discrete"


def _as_matrix(value, name: str) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except ValueError as exc:  # ragged nested lists
        raise ModelError(f"{name} is not a rectangular array", name) from exc
    if arr.ndim != 2:
        raise ModelError(f"{name} must be 2-D, got ndim={arr.ndim}", name)
    if not np.all(np.isfinite(arr)):
        raise ModelError(f"{name} has non-finite entries", name)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LtiModel:
    """State-space triple (A, B, C) driven by process noise through B.

    Matrices are stored as read-only float arrays. ``sample_time`` is required
    for discrete models and must be ``None`` for continuous ones.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    domain: Domain = Domain.CONTINUOUS
    sample_time: float | None = None
    state_labels: tuple[str, ...] | None = None
    noise_labels: tuple[str, ...] | None = None
    sensor_labels: tuple[str, ...] | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        C = _as_matrix(self.C, "C")
        if A.shape[0] != A.shape[1]:
            raise ModelError(f"A must be square, got {A.shape}", "A")
        n = A.shape[0]
        if B.shape[0] != n:
            raise ModelError(f"B must have {n} rows, got {B.shape}", "B")
        if C.shape[1] != n:
            raise ModelError(f"C must have {n} columns, got {C.shape}", "C")
        domain = Domain(self.domain)
        if domain is Domain.DISCRETE:
            if self.sample_time is None or not self.sample_time > 0:
                raise ModelError("discrete model needs sample_time > 0", "sample_time")
        elif self.sample_time is not None:
            raise ModelError("continuous model must not carry sample_time", "sample_time")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "domain", domain)
        for attr, size in (("state_labels", n), ("noise_labels", B.shape[1]),
                           ("sensor_labels", C.shape[0])):
            labels = getattr(self, attr)
            if labels is None:
                continue
            labels = tuple(str(s) for s in labels)
            if len(labels) != size:
                raise ModelError(f"{attr} has {len(labels)} entries, expected {size}", attr)
            object.__setattr__(self, attr, labels)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    @property
    def is_discrete(self) -> bool:
        return self.domain is Domain.DISCRETE

    def to_dict(self) -> dict:
        out = {
            "domain": self.domain.value,
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
        }
        if self.sample_time is not None:
            out["sample_time"] = self.sample_time
        for attr in ("state_labels", "noise_labels", "sensor_labels"):
            if getattr(self, attr) is not None:
                out[attr] = list(getattr(self, attr))
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "LtiModel":
        missing = [k for k in ("domain", "A", "B", "C") if k not in data]
        if missing:
            raise ModelError(f"model document missing keys {missing}", missing[0])
        for key in ("A", "B", "C"):
            rows = data[key]
            if not isinstance(rows, list) or not all(isinstance(r, list) for r in rows):
                raise ModelError(f"{key} must be a list of rows", key)
            if len({len(r) for r in rows}) > 1:
                raise ModelError(f"{key} is ragged", key)
        try:
            domain = Domain(data["domain"])
        except ValueError as exc:
            raise ModelError(f"unknown domain {data['domain']!r}", "domain") from exc
        return cls(
            A=data["A"], B=data["B"], C=data["C"], domain=domain,
            sample_time=data.get("sample_time"),
            state_labels=data.get("state_labels"),
            noise_labels=data.get("noise_labels"),
            sensor_labels=data.get("sensor_labels"),
        )

    def same_matrices(self, other: "LtiModel") -> bool:
        return (self.domain == other.domain and self.sample_time == other.sample_time
                and np.array_equal(self.A, other.A) and np.array_equal(self.B, other.B)
                and np.array_equal(self.C, other.C))


def load_model(path: str | Path) -> LtiModel:
    """Read a model from a ``.json`` or ``.toml`` file."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        data = tomli.loads(text)
    else:
        data = json.loads(text)
    return LtiModel.from_dict(data)


def save_model(model: LtiModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2))


@dataclass(frozen=True)
class ValidationReport:
    controllable: bool
    observable: bool
    controllability_rank: int
    observability_rank: int


def numerical_rank(M: np.ndarray, rtol: float = RANK_RTOL) -> int:
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def controllability_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    blocks = [B]
    for _ in range(A.shape[0] - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def observability_matrix(C: np.ndarray, A: np.ndarray) -> np.ndarray:
    return controllability_matrix(A.T, C.T).T


def validate_model(model: LtiModel) -> ValidationReport:
    """Structural controllability of (A, B) and observability of (C, A)."""
    n = model.n
    rc = numerical_rank(controllability_matrix(model.A, model.B))
    ro = numerical_rank(observability_matrix(model.C, model.A))
    return ValidationReport(rc == n, ro == n, rc, ro)


def tustin_discretize(model: LtiModel, Ts: float) -> LtiModel:
    """Bilinear (Tustin) map of a continuous model.

    A_d = (I - Ts/2 A)^-1 (I + Ts/2 A),  B_d = (I - Ts/2 A)^-1 B Ts,  C_d = C.
    """
    if model.is_discrete:
        raise ModelError("tustin_discretize expects a continuous model", "domain")
    if not Ts > 0:
        raise ModelError("Ts must be positive", "sample_time")
    n = model.n
    I = np.eye(n)
    left = I - 0.5 * Ts * model.A
    smin = np.linalg.svd(left, compute_uv=False)[-1]
    if smin < 1e-12 * max(1.0, np.linalg.norm(left, 2)):
        raise DiscretizationError(
            f"I - (Ts/2)A is singular (smallest singular value {smin:.3e})", smin)
    Ad = np.linalg.solve(left, I + 0.5 * Ts * model.A)
    Bd = np.linalg.solve(left, model.B) * Ts
    return LtiModel(
        A=Ad, B=Bd, C=model.C, domain=Domain.DISCRETE, sample_time=float(Ts),
        state_labels=model.state_labels, noise_labels=model.noise_labels,
        sensor_labels=model.sensor_labels, metadata=dict(model.metadata),
    )


def symmetrize(M: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Return (M + M^T)/2, refusing inputs that are not symmetric to tolerance."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got shape {M.shape}")
    scale = np.linalg.norm(M)
    if np.linalg.norm(M - M.T) > SYM_RTOL * scale:
        raise ValueError(f"{name} is not symmetric")
    return 0.5 * (M + M.T)


def psd_sqrt(M: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix via eigendecomposition.

    Eigenvalues in [-eps, 0) with eps = 1e-10 ||M||_F are clipped to zero;
    anything more negative raises :class:`NotPSDError`.
    """
    S = symmetrize(M)
    w, V = np.linalg.eigh(S)
    eps = SYM_RTOL * np.linalg.norm(S)
    if w.size and w[0] < -eps:
        raise NotPSDError(f"matrix has negative eigenvalue {w[0]:.3e}", float(w[0]))
    w = np.clip(w, 0.0, None)
    root = (V * np.sqrt(w)) @ V.T
    return 0.5 * (root + root.T)


def is_spd(M: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(symmetrize(M))
    except (np.linalg.LinAlgError, ValueError):
        return False
    return True


def spectral_radius(M: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(M)))) if M.size else 0.0


def spectral_abscissa(M: np.ndarray) -> float:
    return float(np.max(np.linalg.eigvals(M).real)) if M.size else -np.inf
