"""Discrete versus homogenized parabolic and elliptic problems.

The discrete solution at macroscopic point (t, x) is
u_eps(t, x) = u(t / eps^2, floor(x / eps)) where du/ds = L u and
u(0, z) = f(eps z); by symmetry of the kernel it equals
sum_z f(eps z) p_{t/eps^2}(floor(x/eps), z).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp
from scipy import integrate
from scipy.special import gamma

from .distance import RateParams, psi_rate
from .environment import BoxSpec, ConductanceField, EnvironmentLaw, safe_radius, sample_environment
from .errors import ValidationError
from .kernel import (KERNEL_TOL, TOL_BOUNDARY, green_function, heat_kernel, heat_kernels_batch,
                     resolvent_by_time_quadrature, _matrix)
from .parallel import chunk_ranges, ordered_map
from .solvers import pcg
from .walk import simulate_walk, walk_rng


class Estimate(NamedTuple):
    value: float
    stderr: float


@dataclass(frozen=True)
class InitialData:
    """Gaussian bump A exp(-|x - x0|^2 / (2 s^2)) with closed-form Sobolev norms."""

    amplitude: float
    center: tuple[float, ...]
    width: float
    kind: str = "gaussian_bump"

    def __post_init__(self):
        if self.width <= 0 or self.amplitude == 0:
            raise ValidationError("bump needs width > 0 and non-zero amplitude")
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))

    @classmethod
    def gaussian_bump(cls, amplitude: float, center, width: float) -> "InitialData":
        return cls(amplitude, center, width)

    @property
    def d(self) -> int:
        return len(self.center)

    @property
    def m(self) -> int:
        """Derivative order entering the regularity norm."""
        return self.d // 2 + 3

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        r2 = np.sum((x - np.asarray(self.center)) ** 2, axis=-1)
        return self.amplitude * np.exp(-0.5 * r2 / self.width**2)

    def on_lattice(self, box: BoxSpec, eps: float) -> np.ndarray:
        """f(eps z) at every site z of ``box``."""
        pts = np.stack(box.coords(), axis=-1) * eps
        return self(pts)

    def sup(self) -> float:
        return abs(self.amplitude)

    def l2_norm(self) -> float:
        return abs(self.amplitude) * (math.pi * self.width**2) ** (self.d / 4)

    def grad_sup(self) -> list[float]:
        """||d f / d x_j||_inf, identical along every axis."""
        return [abs(self.amplitude) * math.exp(-0.5) / self.width] * self.d

    def deriv_l2(self, m: int | None = None) -> list[float]:
        """||d^m f / d x_j^m||_2 via Plancherel in the differentiated variable."""
        m = self.m if m is None else m
        s = self.width
        one = math.sqrt(gamma(m + 0.5) * s ** (1 - 2 * m))
        rest = (math.pi * s * s) ** ((self.d - 1) / 4)
        return [abs(self.amplitude) * one * rest] * self.d


def lattice_site(x, eps: float) -> np.ndarray:
    return np.floor(np.atleast_1d(np.asarray(x, dtype=float)) / eps + 1e-12).astype(np.int64)


def solve_dpe(field: ConductanceField, f: InitialData, eps: float, t: float, x, method: str = "kernel",
              n_paths: int = 10_000, seed: int = 0, tol: float = KERNEL_TOL,
              tol_boundary: float = TOL_BOUNDARY) -> Estimate:
    """Quenched u_eps(t, x): exact kernel sum or walk Monte Carlo."""
    if t <= 0 or eps <= 0:
        raise ValidationError("need t > 0 and eps > 0")
    z0 = lattice_site(x, eps)
    s = t / eps**2
    if method == "kernel":
        p = heat_kernel(field, z0, s, tol=tol, tol_boundary=tol_boundary)
        return Estimate(float(np.sum(p.values * f.on_lattice(field.box, eps))), 0.0)
    if method == "mc":
        vals = np.empty(n_paths)
        for k in range(n_paths):
            tr = simulate_walk(field, z0, s, walk_rng(seed, field.index or 0, k), record=False)
            vals[k] = f(eps * tr.endpoint.astype(float))
        return Estimate(float(np.mean(vals)), float(np.std(vals, ddof=1) / math.sqrt(n_paths)))
    raise ValidationError(f"unknown method {method!r}")


def parabolic_box(law: EnvironmentLaw, d: int, eps: float, t: float, x) -> BoxSpec:
    z0 = lattice_site(x, eps)
    return BoxSpec.centered(d, safe_radius(d, law.beta, t / eps**2, z0))


def averaged_solution(law: EnvironmentLaw, f: InitialData, eps: float, t: float, x, n_env: int, seed: int,
                      box: BoxSpec | None = None, threads=None, chunk: int = 32,
                      tol: float = KERNEL_TOL, tol_boundary: float = TOL_BOUNDARY,
                      antithetic: bool = False) -> Estimate:
    """Environment average of the exact-kernel u_eps(t, x) over ``n_env`` environments.

    Plain sampling uses environments 0..n_env-1. With ``antithetic=True`` the
    same number of solves is spent on n_env/2 pairs (environment k and its
    mirror), which cancels the part of u_eps that is linear in the weights;
    the standard error then comes from the pair means.
    """
    if n_env < 2:
        raise ValidationError("need n_env >= 2")
    if antithetic and (n_env % 2 or n_env < 4):
        raise ValidationError("antithetic sampling needs an even n_env >= 4")
    box = box or parabolic_box(law, f.d, eps, t, x)
    z0 = lattice_site(x, eps)
    fl = f.on_lattice(box, eps)
    s = t / eps**2
    n_draw = n_env // 2 if antithetic else n_env

    def work(idx):
        fields = [sample_environment(law, box, seed, i) for i in idx]
        if antithetic:
            fields += [sample_environment(law, box, seed, i, mirror=True) for i in idx]
        k = heat_kernels_batch(fields, z0, s, tol=tol, tol_boundary=tol_boundary)
        v = np.sum(k * fl, axis=tuple(range(1, box.d + 1)))
        return 0.5 * (v[:len(idx)] + v[len(idx):]) if antithetic else v

    chunk = max(chunk // 2, 1) if antithetic else chunk
    vals = np.concatenate(ordered_map(work, chunk_ranges(n_draw, chunk), threads))
    return Estimate(float(np.sum(vals) / n_draw), float(np.std(vals, ddof=1) / math.sqrt(n_draw)))


def solve_cpe(A, f: InitialData, t: float, x) -> float:
    """Homogenized solution: the bump convolved with N(0, t A)."""
    A = _matrix(A)
    if t < 0:
        raise ValidationError("t must be non-negative")
    d = f.d
    if A.shape != (d, d):
        raise ValidationError("effective matrix dimension does not match the data")
    y = np.atleast_1d(np.asarray(x, dtype=float)) - np.asarray(f.center)
    S = f.width**2 * np.eye(d) + t * A
    q = y @ np.linalg.solve(S, y)
    return float(f.amplitude * f.width**d / math.sqrt(np.linalg.det(S)) * math.exp(-0.5 * q))


def solve_dee(field: ConductanceField, f: InitialData, eps: float, x, tol: float = 1e-12,
              tol_boundary: float = TOL_BOUNDARY) -> float:
    """Quenched v_eps(x) from (eps^2 - L) v = eps^2 f(eps .), Dirichlet on the killing layer."""
    if eps <= 0:
        raise ValidationError("eps must be positive")
    box = field.box
    z0 = lattice_site(x, eps)
    # boundary check: exit probability before the exponential killing time
    green_function(field, eps, z0, tol=tol, tol_boundary=tol_boundary)
    N = box.n_sites
    M = (eps**2 * sp.identity(N, format="csr") - field.generator_matrix()).tocsr()
    b = eps**2 * f.on_lattice(box, eps).ravel()
    if box.periodic:
        v = pcg(M, b, tol=tol).x
    else:
        inner = np.flatnonzero(~box.boundary_mask().ravel())
        v = np.zeros(N)
        v[inner] = pcg(M[inner][:, inner], b[inner], tol=tol).x
    return float(v.reshape(box.shape)[box.index(z0)])


def dee_by_time_quadrature(field: ConductanceField, f: InitialData, eps: float, x, **kw) -> float:
    """v_eps(x) as int_0^inf e^{-t} u_eps(t, x) dt over exact parabolic solutions."""
    z0 = lattice_site(x, eps)
    r = resolvent_by_time_quadrature(field, eps, z0, **kw)
    return float(np.sum(r.values * f.on_lattice(field.box, eps)))


def elliptic_box(law: EnvironmentLaw, d: int, eps: float, x) -> BoxSpec:
    z0 = lattice_site(x, eps)
    R = int(math.ceil(np.max(np.abs(z0)) + 30.0 * math.sqrt(law.beta / law.alpha) / eps + 16))
    return BoxSpec.centered(d, R)


def averaged_elliptic(law: EnvironmentLaw, f: InitialData, eps: float, x, n_env: int, seed: int,
                      box: BoxSpec | None = None, threads=None, antithetic: bool = False) -> Estimate:
    """Environment average of v_eps(x); ``antithetic`` pairs as in :func:`averaged_solution`."""
    if n_env < 2:
        raise ValidationError("need n_env >= 2")
    if antithetic and (n_env % 2 or n_env < 4):
        raise ValidationError("antithetic sampling needs an even n_env >= 4")
    box = box or elliptic_box(law, f.d, eps, x)
    n_draw = n_env // 2 if antithetic else n_env

    def one(i):
        v = solve_dee(sample_environment(law, box, seed, i), f, eps, x)
        if antithetic:
            v = 0.5 * (v + solve_dee(sample_environment(law, box, seed, i, mirror=True), f, eps, x))
        return v

    def work(idx):
        return [one(i) for i in idx]

    vals = np.concatenate(ordered_map(work, chunk_ranges(n_draw, 16), threads))
    return Estimate(float(np.sum(vals) / n_draw), float(np.std(vals, ddof=1) / math.sqrt(n_draw)))


def solve_cee(A, f: InitialData, x) -> float:
    """Homogenized elliptic solution int_0^inf e^{-t} ubar(t, x) dt."""
    val, _ = integrate.quad(lambda t: math.exp(-t) * solve_cpe(A, f, t, x), 0.0, np.inf,
                            epsabs=1e-13, epsrel=1e-12, limit=400)
    return float(val)


BOUND_KINDS = ("parabolic", "kernel", "elliptic", "green")


def bound_rhs(kind: str, *, eps: float, C: float, d: int, q: float = 0.0, delta: float = 0.1,
              t: float | None = None, x=None, c: float | None = None, f: InitialData | None = None) -> float:
    """Right-hand sides of the homogenization error bounds with caller-supplied constants.

    ``parabolic``: sum_j ||d_j f||_inf eps + C (t + sqrt t)(||f||_2 + sum_j ||d_j^m f||_2) Psi(eps^2/t)
    ``kernel``:    C t^{-d/2} Psi(eps^2/t)^{1/(d+3)} exp(-c (|x|^2/t ^ |x|/eps))
    ``elliptic``:  sum_j ||d_j f||_inf eps + C (||f||_2 + sum_j ||d_j^m f||_2) Psi(eps^2)
    ``green``:     C |x|^{2-d} [Psi(eps^2/|x|^2)^{1/(d+3)} e^{-c|x|} + e^{-c|x|/eps}]
                   (d = 1: C [eps^{1/8} e^{-c|x|} + e^{-c|x|/eps}])
    """
    if kind not in BOUND_KINDS:
        raise ValidationError(f"unknown bound kind {kind!r}; expected one of {BOUND_KINDS}")
    if eps <= 0:
        raise ValidationError("eps must be positive")
    rp = RateParams(d=d, q=q, delta=delta)

    def need(name, val):
        if val is None:
            raise ValidationError(f"bound {kind!r} requires parameter {name!r}")
        return val

    if kind in ("parabolic", "elliptic"):
        f = need("f", f)
        lattice = sum(f.grad_sup()) * eps
        norms = f.l2_norm() + sum(f.deriv_l2())
        if kind == "parabolic":
            t = need("t", t)
            return lattice + C * (t + math.sqrt(t)) * norms * psi_rate(min(eps**2 / t, 1.0), rp)
        return lattice + C * norms * psi_rate(min(eps**2, 1.0), rp)

    c = need("c", c)
    r = float(np.linalg.norm(np.atleast_1d(np.asarray(need("x", x), dtype=float))))
    if kind == "kernel":
        t = need("t", t)
        psi = psi_rate(min(eps**2 / t, 1.0), rp) ** (1.0 / (d + 3))
        return C / t ** (d / 2) * psi * math.exp(-c * min(r * r / t, r / eps))
    if r == 0:
        raise ValidationError("green bound needs x != 0")
    if d == 1:
        return C * (eps**0.125 * math.exp(-c * r) + math.exp(-c * r / eps))
    psi = psi_rate(min(eps**2 / r**2, 1.0), rp) ** (1.0 / (d + 3))
    return C / r ** (d - 2) * (psi * math.exp(-c * r) + math.exp(-c * r / eps))


@dataclass(frozen=True)
class RateSeries:
    points: tuple[tuple[float, float, float], ...]
    slope: float
    intercept: float
    slope_stderr: float

    def predict(self, eps: float) -> float:
        return math.exp(self.intercept) * eps**self.slope


def rate_fit(series: Sequence[Sequence[float]], floor_factor: float = 5.0) -> RateSeries:
    """Weighted least squares of log(error) on log(eps).

    Entries are ``(eps, error, stderr)`` or ``(eps, error, stderr, floor)``;
    the floor defaults to the stderr. Points within ``floor_factor`` of their
    floor are refused rather than fitted.
    """
    pts = [tuple(float(v) for v in p) for p in series]
    if len(pts) < 3:
        raise ValidationError(f"rate fit needs at least 3 points, got {len(pts)}")
    eps = np.array([p[0] for p in pts])
    if np.any(np.diff(eps) >= 0):
        raise ValidationError("eps must be strictly decreasing")
    err = np.array([p[1] for p in pts])
    se = np.array([p[2] for p in pts])
    floor = np.array([p[3] if len(p) > 3 else p[2] for p in pts])
    bad = [i for i in range(len(pts)) if not (err[i] > 0 and err[i] >= floor_factor * floor[i])]
    if bad:
        raise ValidationError(f"points {bad} are not above {floor_factor}x their stochastic floor")
    X = np.column_stack([np.ones_like(eps), np.log(eps)])
    y = np.log(err)
    rel = se / err
    if np.all(rel > 0):
        w = 1.0 / rel**2
    else:
        w = np.ones_like(y)
    Xw = X * np.sqrt(w)[:, None]
    yw = y * np.sqrt(w)
    beta, *_ = np.linalg.lstsq(Xw, yw, rcond=None)
    cov = np.linalg.inv(Xw.T @ Xw)
    if not np.all(rel > 0):
        dof = max(len(y) - 2, 1)
        resid = yw - Xw @ beta
        cov = cov * float(resid @ resid) / dof
    return RateSeries(tuple(pts[i][:3] for i in range(len(pts))), float(beta[1]), float(beta[0]),
                      float(math.sqrt(max(cov[1, 1], 0.0))))
