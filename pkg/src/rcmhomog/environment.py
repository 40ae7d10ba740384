"""Lattice boxes, i.i.d. conductance environments and the generator L^omega.

A box is a finite piece of Z^d, either *absorbing* (the outermost layer of
sites is a killing boundary and edges leaving the box carry zero weight) or
*periodic* (a torus). Weights are stored per site and axis: ``weights[i][x]``
is the conductance of the edge ``x -> x + e_i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ValidationError
from .serialize import read_array, write_array

ABSORBING = "absorbing"
PERIODIC = "periodic"


@dataclass(frozen=True)
class BoxSpec:
    """Cubic box of ``n`` sites per axis with lowest coordinate ``lo``.

    Use :meth:`centered` for the ``[-R, R]^d`` boxes and :meth:`torus` for
    periodic cells of arbitrary (possibly even) side length.
    """

    d: int
    n: int
    mode: str = ABSORBING
    lo: int = 0

    def __post_init__(self):
        if not 1 <= self.d <= 3:
            raise ValidationError(f"dimension d must be 1, 2 or 3, got {self.d}")
        if self.mode not in (ABSORBING, PERIODIC):
            raise ValidationError(f"unknown boundary mode {self.mode!r}")
        if self.n < 3:
            raise ValidationError(f"box needs at least 3 sites per axis, got {self.n}")

    @classmethod
    def centered(cls, d: int, R: int, mode: str = ABSORBING) -> "BoxSpec":
        if R < 1:
            raise ValidationError(f"half-width R must be >= 1, got {R}")
        return cls(d=d, n=2 * R + 1, mode=mode, lo=-R)

    @classmethod
    def torus(cls, d: int, L: int) -> "BoxSpec":
        return cls(d=d, n=L, mode=PERIODIC, lo=-(L // 2))

    @property
    def R(self) -> int:
        return -self.lo

    @property
    def hi(self) -> int:
        return self.lo + self.n - 1

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def n_sites(self) -> int:
        return self.n**self.d

    @property
    def periodic(self) -> bool:
        return self.mode == PERIODIC

    def index(self, x) -> tuple[int, ...]:
        """Array index of site ``x`` (wrapped in periodic mode)."""
        x = np.atleast_1d(np.asarray(x, dtype=np.int64))
        if x.shape != (self.d,):
            raise ValidationError(f"site {tuple(x)} has wrong dimension for d={self.d}")
        idx = x - self.lo
        if self.periodic:
            idx = idx % self.n
        elif np.any(idx < 0) or np.any(idx >= self.n):
            raise ValidationError(f"site {tuple(x)} outside box [{self.lo}, {self.hi}]^{self.d}")
        return tuple(int(i) for i in idx)

    def flat_index(self, x) -> int:
        return int(np.ravel_multi_index(self.index(x), self.shape))

    def contains(self, x) -> bool:
        x = np.atleast_1d(np.asarray(x))
        return bool(np.all(x >= self.lo) and np.all(x <= self.hi))

    def coords(self) -> list[np.ndarray]:
        """Coordinate arrays (``indexing='ij'``) for every axis."""
        axis = np.arange(self.lo, self.lo + self.n)
        return list(np.meshgrid(*([axis] * self.d), indexing="ij"))

    def boundary_mask(self) -> np.ndarray:
        """Sites on the outer layer; all False on a torus."""
        mask = np.zeros(self.shape, dtype=bool)
        if self.periodic:
            return mask
        for i in range(self.d):
            sl = [slice(None)] * self.d
            sl[i] = 0
            mask[tuple(sl)] = True
            sl[i] = -1
            mask[tuple(sl)] = True
        return mask

    def shrink(self, k: int = 1) -> "BoxSpec":
        return BoxSpec(d=self.d, n=self.n - 2 * k, mode=self.mode, lo=self.lo + k)

    def to_header(self) -> dict:
        return {"d": self.d, "n": self.n, "mode": self.mode, "lo": self.lo, "R": self.R}

    @classmethod
    def from_header(cls, h: dict) -> "BoxSpec":
        return cls(d=h["d"], n=h["n"], mode=h["mode"], lo=h["lo"])


def safe_radius(d: int, beta: float, T: float, start=None) -> int:
    """Half-width making a boundary exit before time ``T`` negligible (< 1e-10).

    Chernoff bound on the number of jumps of a walk dominated by rate 2*d*beta.
    """
    s = 0 if start is None else int(np.max(np.abs(np.atleast_1d(start))))
    return int(math.ceil(s + 8.0 * math.sqrt(2.0 * d * beta * T) + 16))


@dataclass(frozen=True)
class EnvironmentLaw:
    """Law of a single conductance.

    ``two_point(alpha, beta, p)`` puts mass ``p`` on ``beta`` and ``1 - p`` on
    ``alpha``.
    """

    kind: str
    params: tuple[float, ...]

    def __post_init__(self):
        k, p = self.kind, self.params
        if k == "constant":
            ok = len(p) == 1 and p[0] > 0
        elif k == "uniform":
            ok = len(p) == 2 and 0 < p[0] <= p[1]
        elif k == "two_point":
            ok = len(p) == 3 and 0 < p[0] <= p[1] and 0.0 <= p[2] <= 1.0
        else:
            raise ValidationError(f"unknown law kind {k!r}")
        if not ok or not all(math.isfinite(v) for v in p):
            raise ValidationError(f"invalid parameters {p} for law {k!r}")

    @classmethod
    def constant(cls, c: float) -> "EnvironmentLaw":
        return cls("constant", (float(c),))

    @classmethod
    def uniform(cls, alpha: float, beta: float) -> "EnvironmentLaw":
        return cls("uniform", (float(alpha), float(beta)))

    @classmethod
    def two_point(cls, alpha: float, beta: float, p: float = 0.5) -> "EnvironmentLaw":
        return cls("two_point", (float(alpha), float(beta), float(p)))

    @classmethod
    def parse(cls, text: str) -> "EnvironmentLaw":
        """Parse ``kind(a, b, ...)`` as written in config files."""
        text = text.strip()
        if "(" not in text or not text.endswith(")"):
            raise ValidationError(f"cannot parse law {text!r}; expected e.g. two_point(1,4,0.5)")
        kind, _, rest = text.partition("(")
        try:
            args = tuple(float(a) for a in rest[:-1].split(",") if a.strip())
        except ValueError as exc:
            raise ValidationError(f"cannot parse law {text!r}") from exc
        return cls(kind.strip(), args)

    def __str__(self) -> str:
        return f"{self.kind}({','.join(repr(v) for v in self.params)})"

    @property
    def alpha(self) -> float:
        return self.params[0]

    @property
    def beta(self) -> float:
        return self.params[0] if self.kind == "constant" else self.params[1]

    def mean(self) -> float:
        if self.kind == "constant":
            return self.alpha
        if self.kind == "uniform":
            return 0.5 * (self.alpha + self.beta)
        a, b, p = self.params
        return (1 - p) * a + p * b

    def mean_inverse(self) -> float:
        if self.kind == "constant":
            return 1.0 / self.alpha
        if self.kind == "uniform":
            a, b = self.params
            return math.log(b / a) / (b - a) if b > a else 1.0 / a
        a, b, p = self.params
        return (1 - p) / a + p / b

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.kind == "constant":
            return np.full(size, self.alpha)
        return self.from_uniform(rng.random(size))

    def from_uniform(self, u: np.ndarray) -> np.ndarray:
        """Inverse-CDF transform of uniforms on [0, 1)."""
        u = np.asarray(u, dtype=float)
        if self.kind == "constant":
            return np.full(u.shape, self.alpha)
        if self.kind == "uniform":
            a, b = self.params
            return a + (b - a) * u
        a, b, p = self.params
        return np.where(u < p, b, a)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return (x >= self.alpha).astype(float)
        if self.kind == "uniform":
            a, b = self.params
            if b == a:
                return (x >= a).astype(float)
            return np.clip((x - a) / (b - a), 0.0, 1.0)
        a, b, p = self.params
        return np.where(x < a, 0.0, np.where(x < b, 1 - p, 1.0))


def environment_rng(master_seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for environment ``index``; edge rank is the draw position."""
    if master_seed < 0 or index < 0:
        raise ValidationError("seeds and indices must be non-negative")
    return np.random.Generator(np.random.Philox(key=np.array([master_seed, index], dtype=np.uint64)))


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LatticeField:
    """One real value per site of ``box``."""

    box: BoxSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.box.shape:
            raise ValidationError(f"values of shape {v.shape} do not match box {self.box.shape}")
        object.__setattr__(self, "values", _readonly(v))

    def at(self, x) -> float:
        return float(self.values[self.box.index(x)])

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def total(self) -> float:
        return float(np.sum(self.values))

    def save(self, path, **extra):
        return write_array(path, {"type": "LatticeField", "box": self.box.to_header(), **extra}, self.values)

    @classmethod
    def load(cls, path) -> "LatticeField":
        h, a = read_array(path)
        return cls(BoxSpec.from_header(h["box"]), a)


@dataclass(frozen=True, eq=False)
class ConductanceField:
    """Realized conductances on a box; ``weights`` has shape ``(d, *box.shape)``."""

    box: BoxSpec
    weights: np.ndarray
    law: EnvironmentLaw | None = None
    seed: int | None = None
    index: int | None = None
    _cache: dict = dc_field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.shape != (self.box.d, *self.box.shape):
            raise ValidationError(f"weights shape {w.shape} does not match box")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValidationError("conductances must be finite and non-negative")
        if not self.box.periodic:
            for i in range(self.box.d):
                sl = [i] + [slice(None)] * self.box.d
                sl[1 + i] = -1
                w[tuple(sl)] = 0.0
        object.__setattr__(self, "weights", _readonly(w))

    @property
    def d(self) -> int:
        return self.box.d

    @property
    def beta(self) -> float:
        """Upper ellipticity bound: from the law when known, else the largest weight."""
        return self.law.beta if self.law is not None else float(self.weights.max())

    @property
    def alpha(self) -> float:
        if self.law is not None:
            return self.law.alpha
        w = self.weights[self.weights > 0]
        return float(w.min())

    def edge(self, x, i: int) -> float:
        """Weight of the edge ``x -> x + e_i``."""
        return float(self.weights[(i, *self.box.index(x))])

    def total_rate(self) -> np.ndarray:
        """Sum of the conductances of the edges at each site."""
        w = self.weights
        r = np.zeros(self.box.shape)
        for i in range(self.d):
            r += w[i] + np.roll(w[i], 1, axis=i)
        return r

    def generator_matrix(self) -> sp.csr_matrix:
        """Sparse matrix of L^omega on all box sites (cached)."""
        if "L" not in self._cache:
            self._cache["L"] = _assemble_generator(self)
        return self._cache["L"]

    def save(self, path):
        header = {
            "type": "ConductanceField",
            "box": self.box.to_header(),
            "law": str(self.law) if self.law else None,
            "seed": self.seed,
            "index": self.index,
        }
        return write_array(path, header, self.weights)

    @classmethod
    def load(cls, path) -> "ConductanceField":
        h, a = read_array(path)
        law = EnvironmentLaw.parse(h["law"]) if h.get("law") else None
        return cls(BoxSpec.from_header(h["box"]), a, law=law, seed=h.get("seed"), index=h.get("index"))


def _assemble_generator(field: ConductanceField) -> sp.csr_matrix:
    box = field.box
    N = box.n_sites
    flat = np.arange(N).reshape(box.shape)
    rows, cols, vals = [], [], []
    for i in range(box.d):
        nbr = np.roll(flat, -1, axis=i)
        w = field.weights[i].ravel()
        keep = w > 0
        a, b, w = flat.ravel()[keep], nbr.ravel()[keep], w[keep]
        rows += [a, b]
        cols += [b, a]
        vals += [w, w]
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    A = sp.coo_matrix((vals, (rows, cols)), shape=(N, N)).tocsr()
    deg = np.asarray(A.sum(axis=1)).ravel()
    return (A - sp.diags(deg)).tocsr()


def sample_environment(law: EnvironmentLaw, box: BoxSpec, master_seed: int, index: int,
                       mirror: bool = False) -> ConductanceField:
    """Draw i.i.d. conductances for environment ``index`` of stream ``master_seed``.

    Edge of rank ``flat_site * d + axis`` takes the draw at that position of
    the Philox stream keyed by ``(master_seed, index)``. ``mirror=True`` maps
    every uniform u to 1 - u: the antithetic partner, with the same law.
    """
    rng = environment_rng(master_seed, index)
    u = rng.random((*box.shape, box.d))
    w = law.from_uniform(1.0 - u if mirror else u)
    w = np.moveaxis(w, -1, 0)
    return ConductanceField(box, w, law=law, seed=master_seed, index=index)


def constant_field(box: BoxSpec, c: float) -> ConductanceField:
    return ConductanceField(box, np.full((box.d, *box.shape), float(c)), law=EnvironmentLaw.constant(c))


def apply_generator(field: ConductanceField, f: LatticeField) -> LatticeField:
    """L f(x) = sum over neighbours y of w(x,y) (f(y) - f(x))."""
    if f.box != field.box:
        raise ValidationError("field and function live on different boxes")
    v = f.values
    out = np.zeros_like(v)
    for i in range(field.d):
        w = field.weights[i]
        out += w * (np.roll(v, -1, axis=i) - v)
        out += np.roll(w, 1, axis=i) * (np.roll(v, 1, axis=i) - v)
    return LatticeField(f.box, out)


def translate(field: ConductanceField, x: Sequence[int]) -> ConductanceField:
    """Shifted environment (theta_x w)_{y,z} = w_{x+y, x+z} on a torus."""
    if not field.box.periodic:
        raise ValidationError("translation is only defined on periodic boxes")
    x = np.atleast_1d(np.asarray(x, dtype=int))
    if x.shape != (field.d,):
        raise ValidationError("shift has wrong dimension")
    w = field.weights
    axes = tuple(range(1, field.d + 1))
    shifted = np.roll(w, tuple(int(-s) for s in x), axis=axes)
    return ConductanceField(field.box, shifted, law=field.law, seed=field.seed, index=field.index)
