"""Variable-speed random walk among conductances.

At site x the walk waits an exponential time of rate sum_y w(x, y) and then
jumps to neighbour y with probability proportional to w(x, y). Positions are
unwrapped: on a torus the walk lives on Z^d and reads weights modulo the cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .distance import EmpiricalDistribution
from .environment import BoxSpec, ConductanceField, EnvironmentLaw, safe_radius, sample_environment
from .errors import BoundaryExitError, ValidationError
from .parallel import chunk_ranges, concat, ordered_map

_OK, _EXIT = 0, 1


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Piecewise-constant path: ``sites[k]`` is occupied from ``times[k]`` on."""

    start: tuple[int, ...]
    times: np.ndarray  # jump times, strictly increasing, all <= horizon
    sites: np.ndarray  # (n_jumps, d) unwrapped positions after each jump
    horizon: float

    @property
    def n_jumps(self) -> int:
        return len(self.times)

    @property
    def endpoint(self) -> np.ndarray:
        return self.sites[-1] if len(self.sites) else np.asarray(self.start)

    def position(self, t: float) -> np.ndarray:
        k = int(np.searchsorted(self.times, t, side="right"))
        return self.sites[k - 1] if k else np.asarray(self.start)

    def path(self) -> tuple[np.ndarray, np.ndarray]:
        """Breakpoints ``[0, t_1, ..., t_n]`` and the sites occupied from each."""
        times = np.concatenate([[0.0], self.times])
        sites = np.vstack([np.asarray(self.start)[None, :], self.sites.reshape(-1, len(self.start))])
        return times, sites


def walk_rng(master_seed: int, env_index: int, path_index: int = 0) -> np.random.Generator:
    """Stream owned by one (environment, path) pair."""
    ss = np.random.SeedSequence([master_seed, 0x57A1C, env_index, path_index])
    return np.random.Generator(np.random.PCG64(ss))


def _tables(field: ConductanceField):
    """Per-site neighbour indices, rates and unit moves, plus the killing layer."""
    box = field.box
    d = box.d
    flat = np.arange(box.n_sites).reshape(box.shape)
    nbr = np.empty((box.n_sites, 2 * d), dtype=np.int64)
    rate = np.empty((box.n_sites, 2 * d))
    moves = np.zeros((2 * d, d), dtype=np.int64)
    for i in range(d):
        w = field.weights[i]
        nbr[:, 2 * i] = np.roll(flat, -1, axis=i).ravel()
        rate[:, 2 * i] = w.ravel()
        nbr[:, 2 * i + 1] = np.roll(flat, 1, axis=i).ravel()
        rate[:, 2 * i + 1] = np.roll(w, 1, axis=i).ravel()
        moves[2 * i, i] = 1
        moves[2 * i + 1, i] = -1
    stop = box.boundary_mask().ravel()
    return nbr, rate, moves, stop


@numba.njit(cache=True, nogil=True)
def _run(nbr, rate, moves, stop, start, T, rng, record):
    d = moves.shape[1]
    m = nbr.shape[1]
    x = start
    disp = np.zeros(d, dtype=np.int64)
    t = 0.0
    n = 0
    times = [0.0]
    sites = [0]
    times.pop()
    sites.pop()
    status = 0
    while True:
        total = 0.0
        for j in range(m):
            total += rate[x, j]
        if total <= 0.0:
            break
        t += rng.exponential(1.0 / total)
        if t > T:
            break
        u = rng.random() * total
        j = 0
        acc = rate[x, 0]
        while acc <= u and j < m - 1:
            j += 1
            acc += rate[x, j]
        x = nbr[x, j]
        for k in range(d):
            disp[k] += moves[j, k]
        n += 1
        if record:
            times.append(t)
            sites.append(j)
        if stop[x]:
            status = 1
            break
    return status, x, disp, n, np.array(times), np.array(sites, dtype=np.int64)


def simulate_walk(field: ConductanceField, start, T: float, rng: np.random.Generator,
                  record: bool = True, _tabs=None) -> Trajectory:
    """Exact event-driven simulation up to time ``T``.

    With ``record=False`` only the endpoint is kept (``times`` empty,
    ``sites`` holding the single final position).
    """
    box = field.box
    start = np.atleast_1d(np.asarray(start, dtype=np.int64))
    if T < 0:
        raise ValidationError("horizon T must be non-negative")
    if not box.periodic and (not box.contains(start) or box.boundary_mask()[box.index(start)]):
        raise ValidationError(f"start {tuple(start)} must lie strictly inside the box")
    nbr, rate, moves, stop = _tabs if _tabs is not None else _tables(field)
    status, _, disp, n, times, jumps = _run(nbr, rate, moves, stop, box.flat_index(start), float(T), rng, record)
    if status == _EXIT:
        raise BoundaryExitError(
            f"walk from {tuple(start)} reached the box boundary before T={T}; enlarge R (now {box.R})"
        )
    if record:
        sites = start[None, :] + np.cumsum(moves[jumps], axis=0) if n else np.zeros((0, box.d), np.int64)
        return Trajectory(tuple(int(s) for s in start), times, sites, float(T))
    return Trajectory(tuple(int(s) for s in start), np.empty(0), (start + disp)[None, :], float(T))


def walk_endpoints(field: ConductanceField, start, T: float, n: int, master_seed: int,
                   env_index: int = 0) -> np.ndarray:
    """Endpoints of ``n`` independent quenched walks, shape ``(n, d)``."""
    tabs = _tables(field)
    out = np.empty((n, field.d), dtype=np.int64)
    for k in range(n):
        tr = simulate_walk(field, start, T, walk_rng(master_seed, env_index, k), record=False, _tabs=tabs)
        out[k] = tr.endpoint
    return out


def _unit(xi, d):
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if xi.shape != (d,) or not math.isclose(float(np.linalg.norm(xi)), 1.0, rel_tol=1e-12):
        raise ValidationError("xi must be a unit vector of dimension d")
    return xi


def annealed_projection_samples(law: EnvironmentLaw, box: BoxSpec | None, T: float, xi, n: int,
                                master_seed: int, threads=None, chunk: int = 1000) -> EmpiricalDistribution:
    """Sorted draws of xi . X_T / sqrt(T), each from a fresh environment and walk.

    Path ``i`` uses environment ``i`` of ``master_seed`` and its own walk stream.
    ``box=None`` sizes an absorbing box with :func:`safe_radius`.
    """
    if n < 1:
        raise ValidationError("need n >= 1 samples")
    if T <= 0:
        raise ValidationError("T must be positive")
    if box is None:
        d = len(np.atleast_1d(xi))
        box = BoxSpec.centered(d, safe_radius(d, law.beta, T))
    xi = _unit(xi, box.d)
    origin = np.zeros(box.d, dtype=np.int64)
    scale = 1.0 / math.sqrt(T)

    def work(idx):
        vals = []
        for i in idx:
            field = sample_environment(law, box, master_seed, i)
            tr = simulate_walk(field, origin, T, walk_rng(master_seed, i), record=False)
            vals.append(float(tr.endpoint @ xi) * scale)
        return vals

    vals = concat(ordered_map(work, chunk_ranges(n, chunk), threads))
    return EmpiricalDistribution(np.asarray(vals))
