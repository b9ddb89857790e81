"""Solver-agnostic conic programs built from affine matrix expressions.

A decision variable owns a flat block of scalars; an :class:`Affine` is a
constant matrix plus, per variable, a coefficient tensor of shape
``(rows, cols, variable.size)``.  Products with constant matrices, transposes
and block assembly are closed over this representation, which is all the
filter-synthesis LMIs need.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping

import numpy as np


class VarKind(str, Enum):
    FULL = "full-matrix"
    SYMMETRIC = "symmetric"
    VECTOR = "diagonal-vector"
    SCALAR = "scalar"


class ProgramError(ValueError):
    pass


@dataclass(frozen=True)
class Variable:
    name: str
    shape: tuple[int, ...]
    kind: VarKind

    @property
    def size(self) -> int:
        if self.kind is VarKind.FULL:
            return self.shape[0] * self.shape[1]
        if self.kind is VarKind.SYMMETRIC:
            n = self.shape[0]
            return n * (n + 1) // 2
        if self.kind is VarKind.VECTOR:
            return self.shape[0]
        return 1

    def expr(self) -> "Affine":
        """The variable as an affine expression (vectors become columns)."""
        k = self.size
        if self.kind is VarKind.FULL:
            r, c = self.shape
            coef = np.eye(k).reshape(r, c, k)
        elif self.kind is VarKind.SYMMETRIC:
            n = self.shape[0]
            coef = np.zeros((n, n, k))
            for idx, (i, j) in enumerate(zip(*np.triu_indices(n))):
                coef[i, j, idx] = 1.0
                coef[j, i, idx] = 1.0
        elif self.kind is VarKind.VECTOR:
            coef = np.eye(k).reshape(k, 1, k)
        else:
            coef = np.ones((1, 1, 1))
        return Affine(np.zeros(coef.shape[:2]), {self.name: coef})

    def pack(self, value) -> np.ndarray:
        value = np.asarray(value, dtype=float)
        if self.kind is VarKind.FULL:
            return value.reshape(self.shape).ravel()
        if self.kind is VarKind.SYMMETRIC:
            value = value.reshape(self.shape)
            return value[np.triu_indices(self.shape[0])]
        return value.reshape(self.size)

    def unpack(self, flat: np.ndarray):
        flat = np.asarray(flat, dtype=float)
        if self.kind is VarKind.FULL:
            return flat.reshape(self.shape).copy()
        if self.kind is VarKind.SYMMETRIC:
            n = self.shape[0]
            out = np.zeros((n, n))
            out[np.triu_indices(n)] = flat
            return out + np.triu(out, 1).T
        if self.kind is VarKind.VECTOR:
            return flat.copy()
        return float(flat[0])


def _const(value) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    return arr


class Affine:
    """Matrix-valued affine function of named decision variables."""

    __array_ufunc__ = None  # let numpy defer to __rmatmul__ / __radd__

    def __init__(self, const, coef: Mapping[str, np.ndarray] | None = None):
        self.const = _const(const)
        self.coef = dict(coef or {})
        for name, c in self.coef.items():
            if c.shape[:2] != self.const.shape:
                raise ProgramError(f"coefficient of {name} has shape {c.shape}, "
                                   f"expected {self.const.shape} leading dims")

    @classmethod
    def lift(cls, value) -> "Affine":
        return value if isinstance(value, Affine) else cls(value)

    @property
    def shape(self) -> tuple[int, int]:
        return self.const.shape

    @property
    def variables(self) -> set[str]:
        return set(self.coef)

    def _combine(self, other, sign: float) -> "Affine":
        other = Affine.lift(other)
        if other.shape != self.shape:
            raise ProgramError(f"shape mismatch {self.shape} vs {other.shape}")
        coef = {k: v.copy() for k, v in self.coef.items()}
        for k, v in other.coef.items():
            coef[k] = coef[k] + sign * v if k in coef else sign * v
        return Affine(self.const + sign * other.const, coef)

    def __add__(self, other):
        return self._combine(other, 1.0)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __rsub__(self, other):
        return Affine.lift(other)._combine(self, -1.0)

    def __neg__(self):
        return Affine(-self.const, {k: -v for k, v in self.coef.items()})

    def __mul__(self, scalar: float):
        scalar = float(scalar)
        return Affine(scalar * self.const, {k: scalar * v for k, v in self.coef.items()})

    __rmul__ = __mul__

    def __matmul__(self, right):
        if isinstance(right, Affine):
            raise ProgramError("product of two affine expressions is not affine")
        right = _const(right)
        return Affine(self.const @ right,
                      {k: np.einsum("ijv,jk->ikv", v, right) for k, v in self.coef.items()})

    def __rmatmul__(self, left):
        left = _const(left)
        return Affine(left @ self.const,
                      {k: np.einsum("ij,jkv->ikv", left, v) for k, v in self.coef.items()})

    @property
    def T(self) -> "Affine":
        return Affine(self.const.T, {k: v.transpose(1, 0, 2) for k, v in self.coef.items()})

    def evaluate(self, flat_values: Mapping[str, np.ndarray]) -> np.ndarray:
        out = self.const.copy()
        for k, v in self.coef.items():
            out += v @ flat_values[k]
        return out

    def depends_on(self) -> np.ndarray:
        """Boolean pattern of entries that depend on any variable."""
        mask = np.zeros(self.shape, dtype=bool)
        for v in self.coef.values():
            mask |= np.any(v != 0.0, axis=2)
        return mask


def diag(vec: Affine) -> Affine:
    """Square diagonal matrix from a column expression."""
    k = vec.shape[0]
    if vec.shape[1] != 1:
        raise ProgramError("diag expects a column expression")
    const = np.diag(vec.const[:, 0])
    coef = {}
    for name, c in vec.coef.items():
        out = np.zeros((k, k, c.shape[2]))
        out[np.arange(k), np.arange(k), :] = c[:, 0, :]
        coef[name] = out
    return Affine(const, coef)


def trace(expr: Affine) -> Affine:
    r, c = expr.shape
    if r != c:
        raise ProgramError("trace of a non-square expression")
    return Affine(np.trace(expr.const), {k: np.trace(v, axis1=0, axis2=1).reshape(1, 1, -1)
                                         for k, v in expr.coef.items()})


def sym(expr: Affine) -> Affine:
    """expr + expr^T (exactly symmetric in floating point)."""
    return expr + expr.T


def bmat(rows: list[list[Any]]) -> Affine:
    """Assemble a block matrix; ``None`` entries become zeros of inferred size."""
    heights = []
    for row in rows:
        h = {Affine.lift(b).shape[0] for b in row if b is not None}
        if len(h) != 1:
            raise ProgramError(f"inconsistent block heights {h}")
        heights.append(h.pop())
    widths = []
    for j in range(len(rows[0])):
        w = {Affine.lift(row[j]).shape[1] for row in rows if row[j] is not None}
        if len(w) != 1:
            raise ProgramError(f"inconsistent block widths {w}")
        widths.append(w.pop())
    blocks = [[Affine.lift(b) if b is not None else Affine(np.zeros((heights[i], widths[j])))
               for j, b in enumerate(row)] for i, row in enumerate(rows)]
    const = np.block([[b.const for b in row] for row in blocks])
    names = set().union(*(b.variables for row in blocks for b in row))
    coef = {}
    for name in names:
        parts = []
        size = next(b.coef[name].shape[2] for row in blocks for b in row if name in b.coef)
        for row in blocks:
            parts.append([b.coef[name] if name in b.coef
                          else np.zeros(b.shape + (size,)) for b in row])
        coef[name] = np.concatenate([np.concatenate(r, axis=1) for r in parts], axis=0)
    return Affine(const, coef)


def symmetric_bmat(upper: list[list[Any]]) -> Affine:
    """Symmetric block matrix from its upper triangle.

    ``upper[i][j]`` is read for ``j >= i``; the lower triangle is filled with
    transposes, so the result is symmetric by construction.
    """
    k = len(upper)
    rows = [[None] * k for _ in range(k)]
    for i in range(k):
        for j in range(i, k):
            rows[i][j] = upper[i][j]
            if j > i and upper[i][j] is not None:
                rows[j][i] = Affine.lift(upper[i][j]).T
    # None blocks in the lower triangle need explicit sizes.
    sizes = []
    for i in range(k):
        s = Affine.lift(upper[i][i]).shape[0] if upper[i][i] is not None else None
        if s is None:
            raise ProgramError("diagonal blocks of a symmetric block matrix are required")
        sizes.append(s)
    for i in range(k):
        for j in range(k):
            if rows[i][j] is None:
                rows[i][j] = np.zeros((sizes[i], sizes[j]))
    return bmat(rows)


@dataclass(frozen=True, eq=False)
class PsdBlock:
    """``expr >= margin * I`` in the semidefinite order."""

    name: str
    expr: Affine
    margin: float = 0.0


@dataclass(frozen=True, eq=False)
class SocConstraint:
    """``t >= ||v||_2`` with t a 1x1 and v a column expression."""

    name: str
    t: Affine
    v: Affine


@dataclass(frozen=True, eq=False)
class LinearConstraint:
    """Elementwise ``expr >= 0`` (or ``== 0`` when ``equality``)."""

    name: str
    expr: Affine
    equality: bool = False


@dataclass(frozen=True)
class RecoveryMap:
    """How engineering quantities are read off a solver assignment.

    ``gain`` names the gain-like variable (K directly, or W with K = Z^-1 W
    when ``congruence`` names Z).  ``sigma`` holds a fixed covariance target;
    otherwise the covariance is Z^-1.
    """

    gain: str
    eta: str = "eta"
    zeta: str = "zeta"
    congruence: str | None = None
    sigma: np.ndarray | None = field(default=None, compare=False)

    def referenced(self) -> set[str]:
        names = {self.gain, self.eta, self.zeta}
        if self.congruence:
            names.add(self.congruence)
        return names


@dataclass(frozen=True, eq=False)
class ConicProgram:
    name: str
    variables: tuple[Variable, ...]
    psd_blocks: tuple[PsdBlock, ...]
    soc_constraints: tuple[SocConstraint, ...]
    linear_constraints: tuple[LinearConstraint, ...]
    objective: Affine
    recovery: RecoveryMap
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise ProgramError(f"duplicate variable declarations in {names}")
        declared = set(names)
        for expr, label in self._expressions():
            unknown = expr.variables - declared
            if unknown:
                raise ProgramError(f"{label} references undeclared {sorted(unknown)}")
        for blk in self.psd_blocks:
            r, c = blk.expr.shape
            if r != c:
                raise ProgramError(f"PSD block {blk.name} is not square")
            if not _exactly_symmetric(blk.expr):
                raise ProgramError(f"PSD block {blk.name} is not symmetric")
        if self.objective.shape != (1, 1):
            raise ProgramError("objective must be scalar")
        missing = self.recovery.referenced() - declared
        if missing:
            raise ProgramError(f"recovery map references undeclared {sorted(missing)}")

    def _expressions(self) -> Iterable[tuple[Affine, str]]:
        for b in self.psd_blocks:
            yield b.expr, f"PSD block {b.name}"
        for s in self.soc_constraints:
            yield s.t, f"SOC {s.name}"
            yield s.v, f"SOC {s.name}"
        for lc in self.linear_constraints:
            yield lc.expr, f"linear {lc.name}"
        yield self.objective, "objective"

    def variable(self, name: str) -> Variable:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    @property
    def n_scalars(self) -> int:
        return sum(v.size for v in self.variables)

    def offsets(self) -> dict[str, slice]:
        out, start = {}, 0
        for v in self.variables:
            out[v.name] = slice(start, start + v.size)
            start += v.size
        return out

    def flatten(self, assignment: Mapping[str, Any]) -> dict[str, np.ndarray]:
        missing = {v.name for v in self.variables} - set(assignment)
        if missing:
            raise ProgramError(f"assignment misses {sorted(missing)}")
        return {v.name: v.pack(assignment[v.name]) for v in self.variables}

    def unpack_vector(self, x: np.ndarray) -> dict[str, Any]:
        offs = self.offsets()
        return {v.name: v.unpack(x[offs[v.name]]) for v in self.variables}

    def objective_value(self, assignment: Mapping[str, Any]) -> float:
        return float(self.objective.evaluate(self.flatten(assignment))[0, 0])

    def block_values(self, assignment: Mapping[str, Any]) -> dict[str, np.ndarray]:
        """Each PSD block (margin not subtracted) evaluated at ``assignment``."""
        flat = self.flatten(assignment)
        return {b.name: b.expr.evaluate(flat) for b in self.psd_blocks}

    def to_debug_dict(self) -> dict:
        return {
            "name": self.name,
            "variables": [{"name": v.name, "shape": list(v.shape), "structure": v.kind.value,
                           "scalars": v.size} for v in self.variables],
            "psd_blocks": [{"name": b.name, "size": b.expr.shape[0], "margin": b.margin,
                            "pattern": ["".join("x" if f else "." for f in row)
                                        for row in b.expr.depends_on()]}
                           for b in self.psd_blocks],
            "soc_constraints": [{"name": s.name, "dim": 1 + s.v.shape[0]}
                                for s in self.soc_constraints],
            "linear_constraints": [{"name": lc.name, "rows": lc.expr.shape[0],
                                    "equality": lc.equality}
                                   for lc in self.linear_constraints],
            "objective": {name: np.asarray(c).ravel().tolist()
                          for name, c in self.objective.coef.items()},
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_debug_dict(), indent=2, default=str)


def _exactly_symmetric(expr: Affine) -> bool:
    if not np.array_equal(expr.const, expr.const.T):
        return False
    return all(np.array_equal(c, c.transpose(1, 0, 2)) for c in expr.coef.values())


class ProgramBuilder:
    """Mutable accumulator that freezes into a :class:`ConicProgram`."""

    def __init__(self, name: str):
        self.name = name
        self._variables: dict[str, Variable] = {}
        self._psd: list[PsdBlock] = []
        self._soc: list[SocConstraint] = []
        self._lin: list[LinearConstraint] = []
        self._cost: Affine = Affine(0.0)
        self.metadata: dict = {}

    def variable(self, name: str, shape: tuple[int, ...], kind: VarKind) -> Affine:
        if name in self._variables:
            raise ProgramError(f"variable {name} declared twice")
        var = Variable(name, tuple(shape), VarKind(kind))
        self._variables[name] = var
        return var.expr()

    def psd(self, name: str, expr: Affine, margin: float = 0.0) -> None:
        self._psd.append(PsdBlock(name, expr, float(margin)))

    def soc(self, name: str, t: Affine, v: Affine) -> None:
        self._soc.append(SocConstraint(name, Affine.lift(t), Affine.lift(v)))

    def nonneg(self, name: str, expr: Affine) -> None:
        self._lin.append(LinearConstraint(name, Affine.lift(expr)))

    def equal(self, name: str, expr: Affine) -> None:
        self._lin.append(LinearConstraint(name, Affine.lift(expr), equality=True))

    def add_cost(self, term: Affine) -> None:
        self._cost = self._cost + term

    def build(self, recovery: RecoveryMap) -> ConicProgram:
        return ConicProgram(
            name=self.name,
            variables=tuple(self._variables.values()),
            psd_blocks=tuple(self._psd),
            soc_constraints=tuple(self._soc),
            linear_constraints=tuple(self._lin),
            objective=self._cost,
            recovery=recovery,
            metadata=dict(self.metadata),
        )
