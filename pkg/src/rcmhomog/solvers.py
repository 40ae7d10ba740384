"""Jacobi-preconditioned conjugate gradient for weighted graph Laplacians."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError

DEFAULT_TOL = 1e-10
DEFAULT_MAXITER = 1_000_000


@dataclass
class CGResult:
    x: np.ndarray
    residual: float  # relative: ||b - A x|| / ||b||
    iterations: int


def pcg(A, b, *, tol=DEFAULT_TOL, maxiter=DEFAULT_MAXITER, diag=None, zero_mean=False,
        project_every=100, raise_on_fail=True) -> CGResult:
    """Solve ``A x = b`` for symmetric positive (semi)definite sparse ``A``.

    With ``zero_mean=True`` the system is taken to be singular with the
    constants as kernel; ``b`` is projected to mean zero and the iterate is
    re-projected every ``project_every`` iterations and on exit.
    """
    b = np.asarray(b, dtype=float)
    if zero_mean:
        b = b - b.mean()
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b)
    if bnorm == 0.0:
        return CGResult(x, 0.0, 0)
    if diag is None:
        diag = A.diagonal()
    minv = 1.0 / diag

    it = 0
    prev = np.inf
    while it < maxiter:
        # (re)start from the true residual; the recursive one drifts at tight tol
        r = b - A @ x
        res = np.linalg.norm(r) / bnorm
        if res <= tol or res > 0.5 * prev:
            break
        prev = res
        z = minv * r
        p = z.copy()
        rz = r @ z
        while it < maxiter:
            Ap = A @ p
            alpha = rz / (p @ Ap)
            x += alpha * p
            r -= alpha * Ap
            it += 1
            if zero_mean and it % project_every == 0:
                x -= x.mean()
                r = b - A @ x
            if np.linalg.norm(r) / bnorm <= 0.5 * tol:
                break
            z = minv * r
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new

    if zero_mean:
        x -= x.mean()
    res = np.linalg.norm(b - A @ x) / bnorm
    if res > tol and raise_on_fail:
        raise ConvergenceError(res, it)
    return CGResult(x, float(res), it)
