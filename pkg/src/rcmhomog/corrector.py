"""Periodic-cell correctors, effective matrices and the martingale part of the walk.

The corrector chi_i on a torus solves

    sum_{y ~ x} w(x, y) (chi_i(y) - chi_i(x) + e_i . (y - x)) = 0,

so that x -> x_i + chi_i(x) is L^omega-harmonic. The effective matrix is the
cell average of the local energy of that harmonic coordinate, normalised so
that constant conductances c give 2c I.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .environment import ConductanceField, LatticeField
from .errors import ValidationError
from .serialize import read_array, write_array
from .solvers import DEFAULT_MAXITER, DEFAULT_TOL, pcg
from .walk import Trajectory


@dataclass(frozen=True, eq=False)
class CorrectorField:
    chi: LatticeField
    axis: int
    residual: float
    iterations: int

    def save(self, path):
        header = {"type": "CorrectorField", "box": self.chi.box.to_header(), "axis": self.axis,
                  "residual": self.residual, "iterations": self.iterations}
        return write_array(path, header, self.chi.values)

    @classmethod
    def load(cls, path) -> "CorrectorField":
        from .environment import BoxSpec

        h, a = read_array(path)
        return cls(LatticeField(BoxSpec.from_header(h["box"]), a), h["axis"], h["residual"], h["iterations"])


@dataclass(frozen=True, eq=False)
class EffectiveMatrix:
    matrix: np.ndarray
    cell: int
    n_env: int = 1
    stderr: np.ndarray | None = None

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if m.shape[0] != m.shape[1]:
            raise ValidationError("effective matrix must be square")
        object.__setattr__(self, "matrix", m)
        se = np.zeros_like(m) if self.stderr is None else np.atleast_2d(np.asarray(self.stderr, dtype=float))
        object.__setattr__(self, "stderr", se)

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    def quadratic(self, xi) -> float:
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        return float(xi @ self.matrix @ xi)

    def save(self, path):
        header = {"type": "EffectiveMatrix", "cell": self.cell, "n_env": self.n_env,
                  "stderr": self.stderr.tolist()}
        return write_array(path, header, self.matrix)

    @classmethod
    def load(cls, path) -> "EffectiveMatrix":
        h, a = read_array(path)
        return cls(a, h["cell"], h["n_env"], np.asarray(h["stderr"]))


def _require_torus(field: ConductanceField):
    if not field.box.periodic:
        raise ValidationError("correctors are defined on periodic cells only")


def corrector_rhs(field: ConductanceField, i: int) -> np.ndarray:
    """Divergence of the weights along axis i: w(x, x+e_i) - w(x-e_i, x)."""
    w = field.weights[i]
    return w - np.roll(w, 1, axis=i)


def solve_corrector(field: ConductanceField, i: int, tol: float = DEFAULT_TOL,
                    maxiter: int = DEFAULT_MAXITER) -> CorrectorField:
    """Zero-mean periodic corrector in direction ``i`` by Jacobi-preconditioned CG."""
    _require_torus(field)
    if not 0 <= i < field.d:
        raise ValidationError(f"axis {i} out of range")
    A = -field.generator_matrix()
    b = corrector_rhs(field, i).ravel()
    res = pcg(A, b, tol=tol, maxiter=maxiter, zero_mean=True)
    chi = LatticeField(field.box, res.x.reshape(field.box.shape))
    return CorrectorField(chi, i, res.residual, res.iterations)


def solve_correctors(field: ConductanceField, tol: float = DEFAULT_TOL) -> list[CorrectorField]:
    return [solve_corrector(field, i, tol) for i in range(field.d)]


def _combined(correctors: Sequence[CorrectorField], xi) -> np.ndarray:
    return sum(float(c) * k.chi.values for c, k in zip(xi, correctors))


def local_energy(field: ConductanceField, correctors: Sequence[CorrectorField], xi) -> np.ndarray:
    """sum_{y~x} w(x,y) (xi.(y-x) + chi_xi(y) - chi_xi(x))^2 at every site x."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    chi = _combined(correctors, xi)
    out = np.zeros(field.box.shape)
    for i in range(field.d):
        w = field.weights[i]
        g = xi[i] + np.roll(chi, -1, axis=i) - chi  # increment along edge x -> x+e_i
        e = w * g * g
        out += e + np.roll(e, 1, axis=i)
    return out


def dirichlet_energy(field: ConductanceField, chi: np.ndarray, i: int) -> float:
    """sum over edges of w (grad chi + e_i . grad x)^2."""
    total = 0.0
    for j in range(field.d):
        g = np.roll(chi, -1, axis=j) - chi + (1.0 if j == i else 0.0)
        total += float(np.sum(field.weights[j] * g * g))
    return total


def effective_matrix(field: ConductanceField, correctors: Sequence[CorrectorField]) -> EffectiveMatrix:
    """Single-cell estimate assembled from the quadratic form by polarization."""
    _require_torus(field)
    axes = sorted(c.axis for c in correctors)
    if axes != list(range(field.d)):
        raise ValidationError(f"need one corrector per axis, got axes {axes}")
    correctors = sorted(correctors, key=lambda c: c.axis)
    d = field.d
    eye = np.eye(d)

    def q(xi):
        return float(np.mean(local_energy(field, correctors, xi)))

    A = np.empty((d, d))
    for i in range(d):
        A[i, i] = q(eye[i])
    for i, j in itertools.combinations(range(d), 2):
        A[i, j] = A[j, i] = 0.25 * (q(eye[i] + eye[j]) - q(eye[i] - eye[j]))
    return EffectiveMatrix(A, cell=field.box.n, n_env=1)


def average_effective_matrices(mats: Sequence[EffectiveMatrix]) -> EffectiveMatrix:
    stack = np.stack([m.matrix for m in mats])
    n = len(mats)
    se = np.std(stack, axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(stack[0])
    return EffectiveMatrix(np.sum(stack, axis=0) / n, cell=mats[0].cell, n_env=n, stderr=se)


@dataclass(frozen=True, eq=False)
class MartingalePath:
    """M and its bracket at the breakpoints ``[0, t_1, ..., t_n, T]``."""

    times: np.ndarray
    M: np.ndarray
    bracket: np.ndarray
    horizon: float

    @property
    def jumps(self) -> np.ndarray:
        return np.diff(self.M)

    def bracket_at(self, t: float) -> float:
        return float(np.interp(t, self.times, self.bracket))


def corrector_martingale(traj: Trajectory, field: ConductanceField, correctors: Sequence[CorrectorField],
                         xi) -> MartingalePath:
    """M_t = xi.X_t + chi_xi(X_t) - chi_xi(X_0) and its predictable bracket."""
    _require_torus(field)
    d = field.d
    if len(traj.start) != d or len(correctors) != d:
        raise ValidationError("trajectory, field and correctors disagree on dimension")
    if any(c.chi.box != field.box for c in correctors):
        raise ValidationError("correctors were solved on a different cell")
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    correctors = sorted(correctors, key=lambda c: c.axis)
    chi = _combined(correctors, xi)
    V = local_energy(field, correctors, xi)
    box = field.box
    times, sites = traj.path()
    idx = tuple(((sites[:, k] - box.lo) % box.n) for k in range(d))
    chi_path = chi[idx]
    M = sites @ xi + chi_path - chi_path[0]
    rate = V[idx]
    bp = np.concatenate([times, [traj.horizon]])
    bracket = np.concatenate([[0.0], np.cumsum(rate * np.diff(bp))])
    M = np.concatenate([M, [M[-1]]])
    return MartingalePath(bp, M, bracket, traj.horizon)


@dataclass(frozen=True)
class MartingaleDiagnostics:
    n: int
    p: float
    T: float
    L2p: float
    L2p_stderr: float
    sigma_hat: float
    bracket_l1: float
    bracket_l1_stderr: float


def martingale_diagnostics(paths: Sequence[MartingalePath], p: float) -> MartingaleDiagnostics:
    """Monte-Carlo jump functional L_{2p}(T) and L1 spread of the normalised bracket."""
    if len(paths) == 0:
        raise ValidationError("empty path collection")
    if p <= 1:
        raise ValidationError("p must exceed 1")
    T = paths[0].horizon
    if any(not math.isclose(pth.horizon, T) for pth in paths):
        raise ValidationError("all paths must share the horizon")
    n = len(paths)
    jump_sums = np.array([np.sum(np.abs(pth.jumps) ** (2 * p)) for pth in paths]) / T**p
    br = np.array([pth.bracket[-1] / T for pth in paths])
    sigma = float(np.mean(br))
    dev = np.abs(br - sigma)

    def se(a):
        return float(np.std(a, ddof=1) / math.sqrt(n)) if n > 1 else 0.0

    return MartingaleDiagnostics(n, p, T, float(np.mean(jump_sums)), se(jump_sums), sigma,
                                 float(np.mean(dev)), se(dev))
