"""Synthetic martingales with known jump and bracket functionals.

Each model has an exactly samplable value at time 1 and closed-form values
of L_{2p} = E[sum |jump|^{2p}] and ||<M>_1 - 1||_1, so the two terms of the
martingale CLT bounds can be dialled independently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .distance import EmpiricalDistribution, kantorovich_to_gaussian, w1_bias_floor
from .errors import ValidationError

MODEL_KINDS = ("time_changed_bm", "compensated_poisson", "random_variance")


@dataclass(frozen=True)
class MartingaleModel:
    kind: str
    param: float

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValidationError(f"unknown martingale model {self.kind!r}")
        ok = {
            "time_changed_bm": self.param >= 0,
            "compensated_poisson": self.param > 0,
            "random_variance": 0 <= self.param < 1,
        }[self.kind]
        if not ok:
            raise ValidationError(f"invalid parameter {self.param} for {self.kind}")

    def jump_functional(self, p: float) -> float:
        if self.kind == "compensated_poisson":
            return self.param ** (1.0 - p)  # lam jumps of size lam^{-1/2} on average
        return 0.0

    def bracket_l1(self) -> float:
        if self.kind == "compensated_poisson":
            return 0.0
        return self.param


@dataclass(frozen=True, eq=False)
class CltDiagnostics:
    n: int
    endpoints: EmpiricalDistribution
    L2p: float
    bracket_l1: float
    p: float
    model: MartingaleModel | None = None


def _rng(seed, tag):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, tag])))


def simulate_model(model: MartingaleModel, n: int, seed: int, p: float = 2.0) -> CltDiagnostics:
    """Draw ``n`` exact samples of M_1 together with the model's exact functionals."""
    if n < 1:
        raise ValidationError("n must be positive")
    if p <= 1:
        raise ValidationError("p must exceed 1")
    rng = _rng(seed, 0x3C17)
    a = model.param
    if model.kind == "time_changed_bm":
        x = math.sqrt(1.0 + a) * rng.standard_normal(n)
    elif model.kind == "compensated_poisson":
        x = (rng.poisson(a, n) - a) / math.sqrt(a)
    else:
        v = np.where(rng.random(n) < 0.5, 1.0 - a, 1.0 + a)
        x = np.sqrt(v) * rng.standard_normal(n)
    return CltDiagnostics(n, EmpiricalDistribution(x), model.jump_functional(p), model.bracket_l1(), p, model)


def clt_rhs(diag: CltDiagnostics, Cp: float, k: float = math.inf) -> tuple[float, float]:
    """Right-hand sides of the Kantorovich and k-Kantorovich martingale CLT bounds."""
    if Cp <= 0:
        raise ValidationError("Cp must be positive")
    L, v, p = diag.L2p, diag.bracket_l1, diag.p
    jump = Cp * L ** (1.0 / (2 * p + 1))
    rhs_l1 = jump + 2.0 * math.sqrt(v)
    if math.isinf(k):
        return rhs_l1, math.inf
    rhs_l1k = jump + 0.5 * k * L ** (1.0 / p) + max(k, 1.0) * v
    return rhs_l1, rhs_l1k


def measured_l1(diag: CltDiagnostics) -> tuple[float, float]:
    """Kantorovich distance of the endpoints to N(0,1) and its n^{-1/2} bias floor."""
    return kantorovich_to_gaussian(diag.endpoints, 1.0), w1_bias_floor(diag.n, 1.0)


def fit_cp(diag: CltDiagnostics) -> float:
    """Jump-term constant making the Kantorovich bound tight on a calibration model."""
    if diag.L2p <= 0:
        raise ValidationError("calibration model must have a non-zero jump functional")
    l1, floor = measured_l1(diag)
    excess = max(l1 - floor - 2.0 * math.sqrt(diag.bracket_l1), 0.0)
    return excess / diag.L2p ** (1.0 / (2 * diag.p + 1))


def optimality_probe(eps: float, n: int, seed: int) -> tuple[float, float, float]:
    """Cosine test of the time-changed Brownian motion B_{(1+eps)s} against B_1.

    Returns the exact gap exp(-1/2) - exp(-(1+eps)/2), its Monte-Carlo
    estimate |mean cos(M_1) - exp(-1/2)| and the estimate's standard error.
    """
    if eps < 0 or n < 2:
        raise ValidationError("need eps >= 0 and n >= 2")
    gap = math.exp(-0.5) - math.exp(-0.5 * (1.0 + eps))
    c = np.cos(math.sqrt(1.0 + eps) * _rng(seed, 0x0971).standard_normal(n))
    est = abs(float(np.mean(c)) - math.exp(-0.5))
    return gap, est, float(np.std(c, ddof=1) / math.sqrt(n))
