"""One-dimensional probability distances between empirical laws and Gaussians.

All distances against a centred Gaussian of variance ``sigma2`` are computed
in closed form from the piecewise-constant empirical CDF: no quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import ValidationError


@dataclass(frozen=True, eq=False)
class EmpiricalDistribution:
    values: np.ndarray

    def __post_init__(self):
        v = np.sort(np.asarray(self.values, dtype=float).ravel())
        if v.size < 1:
            raise ValidationError("empirical distribution needs at least one sample")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.size

    def mean(self) -> float:
        return float(np.mean(self.values))

    def var(self) -> float:
        return float(np.var(self.values, ddof=1)) if self.n > 1 else 0.0

    def scaled(self, c: float) -> "EmpiricalDistribution":
        return EmpiricalDistribution(self.values * c)


def _as_dist(x) -> EmpiricalDistribution:
    return x if isinstance(x, EmpiricalDistribution) else EmpiricalDistribution(x)


def _check_sigma(sigma2):
    if not sigma2 > 0:
        raise ValidationError("sigma2 must be positive")
    return math.sqrt(sigma2)


def kolmogorov_to_gaussian(samples, sigma2: float = 1.0) -> float:
    """sup_x |F_n(x) - Phi_sigma(x)|, attained at the sample points."""
    s = _as_dist(samples)
    sig = _check_sigma(sigma2)
    n = s.n
    phi = ndtr(s.values / sig)
    k = np.arange(1, n + 1)
    return float(max(np.max(np.abs(k / n - phi)), np.max(np.abs((k - 1) / n - phi))))


def _lower_integral(x, sig):
    """int_{-inf}^x Phi_sigma = x Phi(x) + sigma^2 phi(x); accurate for x <= 0."""
    z = x / sig
    return x * ndtr(z) + sig * np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)


def _upper_integral(x, sig):
    """int_x^{inf} (1 - Phi_sigma) = sigma^2 phi(x) - x (1 - Phi(x)); accurate for x >= 0."""
    z = x / sig
    return sig * np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi) - x * ndtr(-z)


def _int_phi(a, b, sig):
    """int_a^b Phi_sigma for finite a <= b, choosing the cancellation-free side."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    left = _lower_integral(b, sig) - _lower_integral(a, sig)
    right = (b - a) - (_upper_integral(a, sig) - _upper_integral(b, sig))
    return np.where(0.5 * (a + b) <= 0, left, right)


def kantorovich_to_gaussian(samples, sigma2: float = 1.0) -> float:
    """int |F_n(x) - Phi_sigma(x)| dx, exactly.

    On ``[x_(k), x_(k+1))`` the empirical CDF equals ``c = k/n``; the integral
    of ``|c - Phi|`` splits at the crossing ``sigma * Phi^{-1}(c)``.
    """
    s = _as_dist(samples)
    sig = _check_sigma(sigma2)
    x = s.values
    n = s.n
    total = _lower_integral(x[0], sig) + _upper_integral(x[-1], sig)
    if n == 1:
        return float(total)
    a, b = x[:-1], x[1:]
    c = np.arange(1, n) / n
    q = sig * ndtri(c)
    m = np.clip(q, a, b)
    # below the crossing Phi < c, above it Phi > c
    below = c * (m - a) - _int_phi(a, m, sig)
    above = _int_phi(m, b, sig) - c * (b - m)
    return float(total + np.sum(below + above))


def kantorovich_pair(a, b) -> float:
    """Wasserstein-1 distance between two empirical laws of equal size."""
    a, b = _as_dist(a), _as_dist(b)
    if a.n != b.n:
        raise ValidationError(f"sample sizes differ ({a.n} vs {b.n})")
    return float(np.mean(np.abs(a.values - b.values)))


def k_kantorovich_lower_bound(samples, sigma2: float, k: float, freqs) -> float:
    """Lower bound on the k-Kantorovich distance to N(0, sigma2).

    Tests against cos(lx)/l and sin(lx)/l for every frequency l <= k, whose
    Gaussian expectations are exp(-l^2 sigma2 / 2) and 0.
    """
    s = _as_dist(samples)
    _check_sigma(sigma2)
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    if freqs.size == 0:
        raise ValidationError("frequency grid is empty")
    if k <= 0 or np.any(freqs <= 0) or np.any(freqs > k):
        raise ValidationError("frequencies must lie in (0, k]")
    best = 0.0
    for lam in freqs:
        arg = lam * s.values
        c = abs(np.mean(np.cos(arg)) - math.exp(-0.5 * lam * lam * sigma2)) / lam
        si = abs(np.mean(np.sin(arg))) / lam
        best = max(best, c, si)
    return float(best)


def w1_bias_floor(n: int, sigma2: float = 1.0) -> float:
    """Typical size of W1(F_n, F) for n samples from the target itself."""
    return 0.8 * math.sqrt(sigma2) / math.sqrt(n)


def kantorovich_stderr(samples, sigma2: float, n_boot: int = 200, seed: int = 0) -> float:
    """Bootstrap standard error of :func:`kantorovich_to_gaussian`."""
    s = _as_dist(samples)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0xB007])))
    vals = np.empty(n_boot)
    for b in range(n_boot):
        vals[b] = kantorovich_to_gaussian(rng.choice(s.values, size=s.n, replace=True), sigma2)
    return float(np.std(vals, ddof=1))


@dataclass(frozen=True)
class RateParams:
    d: int
    q: float = 0.0
    delta: float = 0.1

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValidationError("d must be a positive integer")
        if self.q < 0 or self.delta <= 0:
            raise ValidationError("need q >= 0 and delta > 0")


def log_plus(x: float) -> float:
    return max(math.log(x), 1.0)


def psi_rate(u: float, params: RateParams) -> float:
    """Dimension-dependent rate function on (0, 1]."""
    if not 0 < u <= 1:
        raise ValidationError(f"u must lie in (0, 1], got {u}")
    if params.d == 1:
        return u**0.25
    if params.d == 2:
        return log_plus(1.0 / u) ** params.q * u**0.25
    return u ** (0.5 - params.delta)
