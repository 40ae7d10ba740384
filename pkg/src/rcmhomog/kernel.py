"""Quenched and averaged heat kernels, Green functions and their continuum limits.

Heat kernels are computed by uniformization: with ``Lam = 2 d beta`` and the
stochastic matrix ``P = I + L/Lam``,

    p_t(x0, .) = sum_k Poisson(k; Lam t) P^k delta_{x0},

truncated at the first ``K`` whose Poisson tail is below ``tol``. On absorbing
boxes the outer layer kills mass; the killed mass is accumulated and must stay
below ``tol_boundary``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy import integrate, special, stats

from .environment import BoxSpec, ConductanceField, EnvironmentLaw, LatticeField, sample_environment
from .errors import BoundaryMassError, ValidationError
from .parallel import chunk_ranges, ordered_map
from .solvers import pcg

TOL_BOUNDARY = 1e-10
KERNEL_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class HeatKernelSlice:
    field: LatticeField
    source: tuple[int, ...]
    t: float
    truncation: float  # Poisson tail mass dropped by the series
    boundary_loss: float

    @property
    def values(self) -> np.ndarray:
        return self.field.values

    @property
    def box(self) -> BoxSpec:
        return self.field.box

    def at(self, x) -> float:
        return self.field.at(x)


@dataclass(frozen=True, eq=False)
class GreenSlice:
    field: LatticeField
    source: tuple[int, ...]
    eps: float
    residual: float
    iterations: int
    boundary_loss: float

    @property
    def values(self) -> np.ndarray:
        return self.field.values

    def at(self, x) -> float:
        return self.field.at(x)


def poisson_truncation(mu: float, tol: float) -> int:
    """Smallest K with P[Poisson(mu) > K] <= tol."""
    if mu == 0:
        return 0
    k0 = int(math.ceil(mu + 10.0 * math.sqrt(mu) + 50))
    while stats.poisson.sf(k0, mu) > tol:
        k0 *= 2
    sf = stats.poisson.sf(np.arange(k0 + 1), mu)
    return int(np.argmax(sf <= tol))


def uniformization_rate(field: ConductanceField) -> float:
    return 2.0 * field.d * field.beta


def _transition(field: ConductanceField, lam: float) -> sp.csr_matrix:
    L = field.generator_matrix()
    return (sp.identity(L.shape[0], format="csr") + L / lam).tocsr()


def _uniformize(P, v0, mus, kill, tol):
    """Evaluate sum_k Pois(k; mu_j) P^k v0 for each mu_j.

    ``v0`` may hold several stacked problems (block-diagonal ``P``); mass
    accounting is returned per time for the whole vector. Returns
    ``(out, lost, tails)`` with ``out`` of shape ``(len(mus), len(v0))``.
    """
    mus = np.asarray(mus, dtype=float)
    K = max(poisson_truncation(m, tol) for m in mus)
    tails = np.array([stats.poisson.sf(K, m) if m > 0 else 0.0 for m in mus])
    pos = mus > 0
    logmu = np.where(pos, np.log(np.where(pos, mus, 1.0)), 0.0)
    out = np.zeros((len(mus), v0.size))
    lost = np.zeros(len(mus))
    m0 = v0.sum()
    v = v0.astype(float).copy()
    single = len(mus) == 1
    for k in range(K + 1):
        w = np.where(pos, np.exp(k * logmu - mus - special.gammaln(k + 1.0)), 1.0 if k == 0 else 0.0)
        if single:
            out[0] += w[0] * v
        else:
            act = np.flatnonzero(w > 1e-25)
            if act.size:
                out[act] += np.outer(w[act], v)
        lost += w * (m0 - v.sum())
        if k < K:
            v = P @ v
            if kill is not None:
                v[kill] = 0.0
    return out, lost, tails


def _delta(box: BoxSpec, x0) -> np.ndarray:
    v = np.zeros(box.n_sites)
    v[box.flat_index(x0)] = 1.0
    return v


def heat_kernel(field: ConductanceField, x0, t: float, tol: float = KERNEL_TOL,
                tol_boundary: float = TOL_BOUNDARY) -> HeatKernelSlice:
    """p_t^omega(x0, .) on the box of ``field``."""
    return heat_kernel_series(field, x0, [t], tol=tol, tol_boundary=tol_boundary)[0]


def heat_kernel_series(field: ConductanceField, x0, times: Sequence[float], tol: float = KERNEL_TOL,
                       tol_boundary: float = TOL_BOUNDARY) -> list[HeatKernelSlice]:
    """Kernels from ``x0`` at several times, sharing one sweep of powers of P."""
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise ValidationError("times must be non-negative")
    box = field.box
    if not box.periodic and box.boundary_mask()[box.index(x0)]:
        raise ValidationError(f"source {tuple(x0)} lies on the killing layer")
    lam = uniformization_rate(field)
    kill = np.flatnonzero(box.boundary_mask().ravel()) if not box.periodic else None
    out, lost, tails = _uniformize(_transition(field, lam), _delta(box, x0), lam * times, kill, tol)
    src = tuple(int(c) for c in np.atleast_1d(x0))
    slices = []
    for j, t in enumerate(times):
        if lost[j] > tol_boundary:
            raise BoundaryMassError(lost[j], tol_boundary)
        vals = np.clip(out[j], 0.0, None).reshape(box.shape)
        slices.append(HeatKernelSlice(LatticeField(box, vals), src, float(t), float(tails[j]), float(max(lost[j], 0.0))))
    return slices


def evolve(field: ConductanceField, u0: LatticeField, t: float, tol: float = KERNEL_TOL,
           tol_boundary: float = TOL_BOUNDARY) -> LatticeField:
    """Solve du/dt = L u with u(0) = u0; ``u0`` must be non-negative for the mass check."""
    if u0.box != field.box:
        raise ValidationError("initial data and field live on different boxes")
    if np.any(u0.values < 0):
        raise ValidationError("evolve tracks boundary mass and needs non-negative data")
    box = field.box
    lam = uniformization_rate(field)
    kill = np.flatnonzero(box.boundary_mask().ravel()) if not box.periodic else None
    v0 = np.array(u0.values, dtype=float).ravel()
    if kill is not None:
        v0[kill] = 0.0
    out, lost, _ = _uniformize(_transition(field, lam), v0, [lam * t], kill, tol)
    if lost[0] > tol_boundary * max(1.0, v0.sum()):
        raise BoundaryMassError(lost[0], tol_boundary)
    return LatticeField(box, out[0].reshape(box.shape))


def heat_kernels_batch(fields: Sequence[ConductanceField], x0, t: float, tol: float = KERNEL_TOL,
                       tol_boundary: float = TOL_BOUNDARY) -> np.ndarray:
    """Kernels ``p_t(x0, .)`` for several environments on one box, as ``(n, *shape)``.

    The environments are stacked into one block-diagonal transition matrix;
    all must share the box and the uniformization rate.
    """
    box = fields[0].box
    lam = max(uniformization_rate(f) for f in fields)
    if any(f.box != box for f in fields):
        raise ValidationError("batched kernels need a common box")
    n, N = len(fields), box.n_sites
    P = sp.block_diag([_transition(f, lam) for f in fields], format="csr")
    v0 = np.tile(_delta(box, x0), n)
    kill = None
    if not box.periodic:
        kill = np.flatnonzero(np.tile(box.boundary_mask().ravel(), n))
    out, lost, _ = _uniformize(P, v0, [lam * t], kill, tol)
    vals = np.clip(out[0], 0.0, None).reshape(n, N)
    per_env_lost = 1.0 - vals.sum(axis=1) - stats.poisson.sf(poisson_truncation(lam * t, tol), lam * t)
    worst = max(float(per_env_lost.max()), 0.0)
    if worst > tol_boundary:
        raise BoundaryMassError(worst, tol_boundary)
    return vals.reshape(n, *box.shape)


def averaged_kernel(law: EnvironmentLaw, box: BoxSpec, x0, t: float, n_env: int, master_seed: int,
                    tol: float = KERNEL_TOL, tol_boundary: float = TOL_BOUNDARY, threads=None,
                    chunk: int = 32, antithetic: bool = False) -> tuple[LatticeField, LatticeField]:
    """Monte-Carlo mean of p_t^omega(x0, .) over environments, with sitewise stderr.

    Plain sampling uses environments ``0..n_env-1``. ``antithetic=True`` spends
    the same ``n_env`` solves on pairs (environment k and its mirror), and the
    stderr is computed from the pair means.
    """
    if n_env < 2:
        raise ValidationError("averaged_kernel needs n_env >= 2")
    if antithetic and (n_env % 2 or n_env < 4):
        raise ValidationError("antithetic sampling needs an even n_env >= 4")
    n_draw = n_env // 2 if antithetic else n_env

    def work(idx):
        fields = [sample_environment(law, box, master_seed, i) for i in idx]
        if antithetic:
            fields += [sample_environment(law, box, master_seed, i, mirror=True) for i in idx]
        k = heat_kernels_batch(fields, x0, t, tol=tol, tol_boundary=tol_boundary)
        return 0.5 * (k[:len(idx)] + k[len(idx):]) if antithetic else k

    chunk = max(chunk // 2, 1) if antithetic else chunk
    stack = np.concatenate(ordered_map(work, chunk_ranges(n_draw, chunk), threads), axis=0)
    mean = np.sum(stack, axis=0) / n_draw  # numpy sums pairwise along a contiguous axis
    dev = stack - mean
    var = np.sum(dev * dev, axis=0) / (n_draw - 1)
    return LatticeField(box, mean), LatticeField(box, np.sqrt(var / n_draw))


def discrete_gradient(f: LatticeField, i: int) -> LatticeField:
    """Forward difference f(x + e_i) - f(x).

    On absorbing boxes the result lives on the box shrunk by one layer; on a
    torus it wraps.
    """
    box = f.box
    if not 0 <= i < box.d:
        raise ValidationError(f"axis {i} out of range for d={box.d}")
    v = f.values
    g = np.roll(v, -1, axis=i) - v
    if box.periodic:
        return LatticeField(box, g)
    inner = tuple(slice(1, -1) for _ in range(box.d))
    return LatticeField(box.shrink(1), g[inner])


def _matrix(A) -> np.ndarray:
    m = getattr(A, "matrix", A)
    m = np.atleast_2d(np.asarray(m, dtype=float))
    return m


def homogenized_kernel(A, t: float, x) -> float:
    """Gaussian kernel of (1/2) div(A grad): covariance ``t A``."""
    A = _matrix(A)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = A.shape[0]
    if t <= 0:
        raise ValidationError("t must be positive")
    det = np.linalg.det(A)
    if det <= 0 or not np.isfinite(det):
        raise ValidationError("effective matrix is singular or not positive definite")
    q = x @ np.linalg.solve(A, x)
    return float((2 * math.pi * t) ** (-d / 2) / math.sqrt(det) * math.exp(-q / (2 * t)))


def homogenized_kernel_gradient(A, t: float, x) -> np.ndarray:
    A = _matrix(A)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return -homogenized_kernel(A, t, x) * np.linalg.solve(A, x) / t


def carne_distance(t: float, r) -> np.ndarray:
    """D_t(r) = r asinh(r/t) + t (sqrt(1 + r^2/t^2) - 1)."""
    r = np.abs(np.asarray(r, dtype=float))
    z = r / t
    return r * np.arcsinh(z) + t * (np.sqrt(1.0 + z * z) - 1.0)


def carne_bound(t: float, x, cbar: float, C: float, d: int) -> float:
    """Sub-Gaussian envelope C / (1 v t^{d/2}) exp(-D_{cbar t}(|x|))."""
    if t <= 0 or cbar <= 0:
        raise ValidationError("t and cbar must be positive")
    r = float(np.linalg.norm(np.atleast_1d(np.asarray(x, dtype=float))))
    return float(C / max(1.0, t ** (d / 2)) * math.exp(-carne_distance(cbar * t, r)))


def _carne_ratio(s: HeatKernelSlice, cbar: float) -> np.ndarray:
    box = s.box
    src = np.asarray(s.source, dtype=float)
    r = np.sqrt(sum((c - x) ** 2 for c, x in zip(box.coords(), src)))
    scale = max(1.0, s.t ** (box.d / 2))
    with np.errstate(over="ignore"):
        return s.values * scale * np.exp(carne_distance(cbar * s.t, r))


def fit_carne_constant(slices: Sequence[HeatKernelSlice], cbar: float) -> float:
    """Smallest C putting every calibration kernel under the envelope."""
    return float(max(np.nanmax(_carne_ratio(s, cbar)) for s in slices))


def carne_violations(s: HeatKernelSlice, cbar: float, C: float) -> int:
    """Number of sites where a kernel exceeds the frozen envelope."""
    return int(np.sum(_carne_ratio(s, cbar) > C * (1 + 1e-12)))


def green_function(field: ConductanceField, eps: float, x0, tol: float = 1e-12,
                   tol_boundary: float = TOL_BOUNDARY) -> GreenSlice:
    """Solve (eps^2 - L) G(x0, .) = 1_{x0}; Dirichlet on the outer layer of absorbing boxes."""
    if eps <= 0:
        raise ValidationError("eps must be positive")
    box = field.box
    N = box.n_sites
    M = (eps**2 * sp.identity(N, format="csr") - field.generator_matrix()).tocsr()
    b = _delta(box, x0)
    if box.periodic:
        res = pcg(M, b, tol=tol)
        g = res.x
    else:
        inner = np.flatnonzero(~box.boundary_mask().ravel())
        if b[inner].sum() != 1.0:
            raise ValidationError(f"source {tuple(x0)} lies on the killing layer")
        res = pcg(M[inner][:, inner], b[inner], tol=tol)
        g = np.zeros(N)
        g[inner] = res.x
    lost = max(0.0, 1.0 - eps**2 * g.sum())
    if not box.periodic and lost > tol_boundary:
        raise BoundaryMassError(lost, tol_boundary)
    src = tuple(int(c) for c in np.atleast_1d(x0))
    return GreenSlice(LatticeField(box, g.reshape(box.shape)), src, eps, res.residual, res.iterations, lost)


def green_closed_form_1d(eps: float, x) -> np.ndarray:
    """Green function of eps^2 - Laplacian on Z with unit weights."""
    a = eps**2 + 2.0
    r = (a - math.sqrt(a * a - 4.0)) / 2.0
    return r ** np.abs(np.asarray(x)) / (a - 2.0 * r)


def homogenized_green(A, x, method: str = "quad") -> float:
    """Green function of 1 - (1/2) div(A grad) at ``x``.

    ``quad`` integrates e^{-t} pbar_t(0, x) over t (substituting t = s^2);
    ``closed`` is the one-dimensional exponential formula.
    """
    A = _matrix(A)
    d = A.shape[0]
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if d >= 2 and not np.any(x):
        raise ValidationError("homogenized Green function diverges at x = 0 for d >= 2")
    if method == "closed":
        if d != 1:
            raise ValidationError("closed form only available in d = 1")
        s2 = float(A[0, 0])
        return float((2 * s2) ** -0.5 * math.exp(-abs(x[0]) * math.sqrt(2 / s2)))

    def integrand(s):
        if s == 0.0:
            return 0.0
        t = s * s
        return 2.0 * s * math.exp(-t) * homogenized_kernel(A, t, x)

    val, _ = integrate.quad(integrand, 0.0, np.inf, epsabs=1e-13, epsrel=1e-12, limit=400)
    return float(val)


def _laplace_nodes(t_max: float, panels: int, order: int):
    """Composite Gauss-Legendre nodes/weights for int_0^t_max, graded towards 0."""
    edges = np.concatenate([[0.0], np.geomspace(1e-6, t_max, panels)])
    xg, wg = np.polynomial.legendre.leggauss(order)
    a, b = edges[:-1, None], edges[1:, None]
    nodes = (0.5 * (b - a) * xg + 0.5 * (b + a)).ravel()
    weights = (0.5 * (b - a) * wg).ravel()
    return nodes, weights


def resolvent_by_time_quadrature(field: ConductanceField, eps: float, x0, tol: float = KERNEL_TOL,
                                 tol_boundary: float = TOL_BOUNDARY, t_max: float = 40.0,
                                 panels: int = 80, order: int = 12) -> LatticeField:
    """int_0^inf e^{-t} p_{t/eps^2}(x0, .) dt by quadrature over heat kernels.

    Equals eps^2 G_eps(x0, .) exactly; the tail beyond ``t_max`` is below
    e^{-t_max}. Boundary loss is checked after weighting by e^{-t}.
    """
    box = field.box
    nodes, weights = _laplace_nodes(t_max, panels, order)
    lam = uniformization_rate(field)
    kill = np.flatnonzero(box.boundary_mask().ravel()) if not box.periodic else None
    out, lost, _ = _uniformize(_transition(field, lam), _delta(box, x0), lam * nodes / eps**2, kill, tol)
    wt = weights * np.exp(-nodes)
    weighted_loss = float(wt @ np.maximum(lost, 0.0))
    if weighted_loss > tol_boundary:
        raise BoundaryMassError(weighted_loss, tol_boundary)
    return LatticeField(box, (wt @ out).reshape(box.shape))
