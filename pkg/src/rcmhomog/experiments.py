"""Batch experiments driven by :class:`ExperimentConfig`.

Every experiment returns a list of :class:`Record` rows with the frozen
column set :data:`COLUMNS`. Rows carry no timing information so that reruns
are byte-identical; wall times are collected separately for the manifest.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .config import ExperimentConfig
from .corrector import average_effective_matrices, effective_matrix, solve_correctors
from .distance import (RateParams, k_kantorovich_lower_bound, kantorovich_stderr, kantorovich_to_gaussian,
                       kolmogorov_to_gaussian, psi_rate, w1_bias_floor)
from .environment import BoxSpec, EnvironmentLaw, constant_field, safe_radius, sample_environment
from .errors import ValidationError
from .homog import (InitialData, averaged_elliptic, averaged_solution, elliptic_box, rate_fit, solve_cee,
                    solve_cpe)
from .kernel import (averaged_kernel, discrete_gradient, green_closed_form_1d, green_function, homogenized_kernel,
                     resolvent_by_time_quadrature)
from .mclt import MartingaleModel, fit_cp, measured_l1, clt_rhs, optimality_probe, simulate_model
from .parallel import chunk_ranges, ordered_map
from .walk import annealed_projection_samples

COLUMNS = ("experiment", "quantity", "d", "law", "eps", "t", "x", "estimate", "stderr", "n_env", "seed",
           "wall_time")


@dataclass
class Record:
    experiment: str
    quantity: str
    d: int
    law: str
    eps: float | None
    t: float | None
    x: list[float] | None
    estimate: float
    stderr: float | None
    n_env: int | None
    seed: int
    wall_time: None = None  # timings live in the manifest

    def as_dict(self) -> dict:
        out = {c: getattr(self, c) for c in COLUMNS}
        for key in ("estimate", "stderr", "eps", "t"):
            if out[key] is not None:
                out[key] = float(out[key])
        if out["x"] is not None:
            out["x"] = [float(v) for v in out["x"]]
        return out


class Run:
    """Accumulates records and per-step wall times for one experiment."""

    def __init__(self, cfg: ExperimentConfig, threads: int | None):
        self.cfg = cfg
        self.threads = threads
        self.records: list[Record] = []
        self.timings: list[dict] = []
        self.notes: list[str] = []
        self._t0 = time.perf_counter()

    def add(self, quantity, estimate, stderr=None, *, d, law, eps=None, t=None, x=None, n_env=None):
        if x is not None:
            x = [float(v) for v in np.atleast_1d(x)]
        self.records.append(Record(self.cfg.experiment, quantity, int(d), str(law), eps, t, x, estimate, stderr,
                                   n_env, self.cfg.master_seed))

    def lap(self, label: str):
        now = time.perf_counter()
        self.timings.append({"step": label, "seconds": now - self._t0})
        self._t0 = now


def _dimension(cfg: ExperimentConfig, allowed=(1, 2, 3)) -> int:
    d = cfg.integer("d", 1)
    if d not in allowed:
        raise ValidationError(f"parameter 'd' must be one of {allowed} for {cfg.experiment}, got {d}")
    return d


def _abar(cfg: ExperimentConfig, law: EnvironmentLaw, d: int) -> float:
    """Scalar effective coefficient: config value, else the exact 1-d harmonic mean."""
    if "abar" in cfg.raw:
        return cfg.real("abar", positive=True)
    if d == 1 or law.kind == "constant":
        return 2.0 / law.mean_inverse()
    raise ValidationError("parameter 'abar' is required for d >= 2 with a random law "
                          "(run effective-matrix first)")


def _bump(cfg: ExperimentConfig, d: int) -> InitialData:
    center = cfg.reals("center", [0.0] * d)
    if len(center) != d:
        raise ValidationError(f"parameter 'center' needs {d} entries")
    return InitialData.gaussian_bump(cfg.real("amplitude", 1.0), center, cfg.real("width", 1.0, positive=True))


def _point(cfg: ExperimentConfig, d: int, key: str = "x") -> list[float]:
    x = cfg.reals(key, [0.0] * d)
    if len(x) != d:
        raise ValidationError(f"parameter {key!r} needs {d} entries")
    return x


def _decreasing(cfg, key, values):
    if any(b >= a for a, b in zip(values, values[1:])):
        raise ValidationError(f"parameter {key!r} must be strictly decreasing, got {values}")
    return values


def env_check(run: Run):
    cfg = run.cfg
    law, d = cfg.law(), _dimension(cfg)
    mode = cfg.text("mode", "absorbing", choices=("absorbing", "periodic"))
    R = cfg.integer("R", 16, minimum=1)
    n_env = cfg.integer("n_env", 8, minimum=2)
    box = BoxSpec.centered(d, R, mode)
    ones = np.ones(box.n_sites)

    def work(idx):
        rows = []
        for i in idx:
            f = sample_environment(law, box, cfg.master_seed, i)
            w = f.weights[f.weights > 0] if not box.periodic else f.weights.ravel()
            L = f.generator_matrix()
            rows.append((w.min(), w.max(), w.mean(), np.abs(L @ ones).max(), abs(L - L.T).max()))
        return rows

    rows = np.array([r for part in ordered_map(work, chunk_ranges(n_env, 4), run.threads) for r in part])
    kw = dict(d=d, law=law, n_env=n_env)
    run.add("weight_min", rows[:, 0].min(), **kw)
    run.add("weight_max", rows[:, 1].max(), **kw)
    run.add("weight_mean", rows[:, 2].mean(), rows[:, 2].std(ddof=1) / math.sqrt(n_env), **kw)
    run.add("law_mean", law.mean(), 0.0, **kw)
    run.add("generator_row_sum_max", rows[:, 3].max(), **kw)
    run.add("generator_asymmetry_max", rows[:, 4].max(), **kw)
    run.lap("environments")


def walk_var(run: Run):
    cfg = run.cfg
    law, d = cfg.law(), _dimension(cfg)
    xi = _point(cfg, d, "xi") if "xi" in cfg.raw else [1.0] + [0.0] * (d - 1)
    n = cfg.integer("n_paths", 10_000, minimum=2)
    for T in cfg.reals("T", positive=True):
        s = annealed_projection_samples(law, None, T, xi, n, cfg.master_seed, threads=run.threads)
        v = s.values
        dev2 = (v - v.mean()) ** 2
        kw = dict(d=d, law=law, t=T, x=xi, n_env=n)
        run.add("mean", v.mean(), v.std(ddof=1) / math.sqrt(n), **kw)
        run.add("variance_over_T", v.var(ddof=1), dev2.std(ddof=1) / math.sqrt(n), **kw)
        run.lap(f"T={T:g}")


def effective_matrix_exp(run: Run):
    cfg = run.cfg
    law, d = cfg.law(), _dimension(cfg)
    L = cfg.integer("L", 64, minimum=3)
    n_env = cfg.integer("n_env", 10, minimum=2)
    tol = cfg.real("tol", 1e-10, positive=True)
    box = BoxSpec.torus(d, L)

    def work(idx):
        out = []
        for i in idx:
            f = sample_environment(law, box, cfg.master_seed, i)
            out.append(effective_matrix(f, solve_correctors(f, tol)))
        return out

    mats = [m for part in ordered_map(work, chunk_ranges(n_env, 4), run.threads) for m in part]
    A = average_effective_matrices(mats)
    for i in range(d):
        for j in range(i, d):
            run.add(f"A_{i}{j}", A.matrix[i, j], A.stderr[i, j], d=d, law=law, n_env=n_env)
    if d == 1:
        run.add("harmonic_mean_oracle", 2.0 / law.mean_inverse(), 0.0, d=d, law=law, n_env=n_env)
    run.lap("correctors")


def clt_rate(run: Run):
    cfg = run.cfg
    law, d = cfg.law(), _dimension(cfg)
    xi = _point(cfg, d, "xi") if "xi" in cfg.raw else [1.0] + [0.0] * (d - 1)
    sigma2 = cfg.real("sigma2", positive=True) if "sigma2" in cfg.raw else _abar(cfg, law, d)
    n = cfg.integer("n_paths", 10_000, minimum=2)
    k = cfg.real("k", 1.0, positive=True)
    n_boot = cfg.integer("n_boot", 200, minimum=2)
    rp = RateParams(d, cfg.real("q", 0.0), cfg.real("delta", 0.1, positive=True))
    times = cfg.reals("T", positive=True)
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValidationError(f"parameter 'T' must be strictly increasing, got {times}")
    freqs = np.linspace(k / 20, k, 20)
    C = None
    for T in times:
        s = annealed_projection_samples(law, None, T, xi, n, cfg.master_seed, threads=run.threads)
        l1 = kantorovich_to_gaussian(s, sigma2)
        kw = dict(d=d, law=law, t=T, x=xi, n_env=n)
        run.add("kantorovich", l1, kantorovich_stderr(s, sigma2, n_boot, cfg.master_seed), **kw)
        run.add("kolmogorov", kolmogorov_to_gaussian(s, sigma2), **kw)
        run.add("k_kantorovich_lower", k_kantorovich_lower_bound(s, sigma2, k, freqs), **kw)
        run.add("bias_floor", w1_bias_floor(n, sigma2), **kw)
        psi = psi_rate(min(1.0 / T, 1.0), rp)
        if C is None:
            C = l1 / psi  # fitted at the first horizon, then frozen
        run.add("psi_envelope", C * psi, **kw)
        run.lap(f"T={T:g}")


def mclt_probe(run: Run):
    cfg = run.cfg
    n = cfg.integer("n", 1_000_000, minimum=2)
    for eps in cfg.reals("eps", [0.1, 0.01, 0.001]):
        gap, est, se = optimality_probe(eps, n, cfg.master_seed)
        run.add("analytic_gap", gap, 0.0, d=1, law="time_changed_bm", eps=eps, n_env=n)
        run.add("mc_gap", est, se, d=1, law="time_changed_bm", eps=eps, n_env=n)
    run.lap("probe")
    lams = cfg.reals("poisson_lambda", [], positive=True) if "poisson_lambda" in cfg.raw else []
    vas = cfg.reals("variance_a", []) if "variance_a" in cfg.raw else []
    if not lams and not vas:
        return
    p = cfg.real("p", 2.0)
    n_model = cfg.integer("n_model", 1_000_000, minimum=2)
    calib = MartingaleModel("compensated_poisson", cfg.real("cp_lambda", 100.0, positive=True))
    Cp = fit_cp(simulate_model(calib, n_model, cfg.master_seed, p))
    run.add("cp", Cp, d=1, law=f"compensated_poisson({calib.param:g})", n_env=n_model)
    models = [MartingaleModel("compensated_poisson", a) for a in lams]
    models += [MartingaleModel("random_variance", a) for a in vas]
    for m in models:
        diag = simulate_model(m, n_model, cfg.master_seed, p)
        l1, floor = measured_l1(diag)
        name = f"{m.kind}({m.param:g})"
        run.add("l1_floor_corrected", l1 - floor, d=1, law=name, n_env=n_model)
        run.add("rhs_l1", clt_rhs(diag, Cp)[0], d=1, law=name, n_env=n_model)
    run.lap("models")


def kernel_compare(run: Run):
    cfg = run.cfg
    law, d = cfg.law(), _dimension(cfg, (1,))
    abar = _abar(cfg, law, d)
    t = cfg.real("t", 1.0, positive=True)
    x_max = cfg.real("x_max", 2.0, positive=True)
    n_env = cfg.integer("n_env", 200, minimum=4)
    anti = cfg.boolean("antithetic", True)
    eps_list = _decreasing(cfg, "eps", cfg.reals("eps", positive=True))
    for eps in eps_list:
        s = t / eps**2
        box = BoxSpec.centered(1, safe_radius(1, law.beta, s))
        q, se = averaged_kernel(law, box, [0], s, n_env, cfg.master_seed, threads=run.threads, antithetic=anti)
        err, err_se, at = sup_kernel_error(q.values, se.values, box.lo, eps, t, abar, x_max)
        run.add("sup_error", err, err_se, d=d, law=law, eps=eps, t=t, x=[at], n_env=n_env)
        run.lap(f"eps={eps:g}")
    if "gradient_times" in cfg.raw:
        times = cfg.reals("gradient_times", positive=True)
        box = BoxSpec.centered(1, safe_radius(1, law.beta, max(times)))
        for tg in times:
            g, g_se, at = max_kernel_gradient(law, box, tg, n_env, cfg.master_seed, run.threads, anti)
            run.add("max_gradient", g, g_se, d=d, law=law, t=tg, x=[at], n_env=n_env)
            run.lap(f"gradient t={tg:g}")


def sup_kernel_error(q, se, lo, eps, t, abar, x_max, per_cell: int = 41):
    """sup over |x| <= x_max of |eps^{-1} q(floor(x/eps)) - pbar_t(0, x)| in d = 1.

    On each lattice cell the rescaled kernel is constant, so the supremum is
    searched on a grid of ``per_cell`` points per cell (cell ends included).
    Returns the value, the stderr of the kernel entry attaining it, and x.
    """
    best = (-1.0, 0.0, 0.0)
    zmax = int(math.floor(x_max / eps))
    for z in range(-zmax - 1, zmax + 1):
        a, b = max(z * eps, -x_max), min((z + 1) * eps, x_max)
        if a > b:
            continue
        xs = np.linspace(a, b, per_cell)
        pb = np.array([homogenized_kernel(abar, t, [x]) for x in xs])
        e = np.abs(q[z - lo] / eps - pb)
        i = int(np.argmax(e))
        if e[i] > best[0]:
            best = (float(e[i]), float(se[z - lo] / eps), float(xs[i]))
    return best


def max_kernel_gradient(law, box, t, n_env, seed, threads=None, antithetic=True, drop: int = 2):
    """max_x |grad q_t(x)| over central sites (``drop`` boundary layers removed)."""
    q, se = averaged_kernel(law, box, [0], t, n_env, seed, threads=threads, antithetic=antithetic)
    g = discrete_gradient(q, 0)
    vals = g.values[drop:-drop] if drop else g.values
    i = int(np.argmax(np.abs(vals)))
    site = g.box.lo + drop + i
    # stderr of the difference bounded by the sum of the two entries' stderrs
    j = site - box.lo
    return float(abs(vals[i])), float(se.values[j] + se.values[j + 1]), float(site)


def homog_rate(run: Run):
    cfg = run.cfg
    law, d = cfg.law(), _dimension(cfg)
    abar = _abar(cfg, law, d)
    f = _bump(cfg, d)
    t = cfg.real("t", 1.0, positive=True)
    x = _point(cfg, d)
    n_env = cfg.integer("n_env", 200, minimum=4)
    anti = cfg.boolean("antithetic", True)
    eps_list = _decreasing(cfg, "eps", cfg.reals("eps", positive=True))
    rp = RateParams(d, cfg.real("q", 0.0), cfg.real("delta", 0.1, positive=True))
    ubar = solve_cpe(abar * np.eye(d), f, t, x)
    series, C = [], None
    for eps in eps_list:
        est = averaged_solution(law, f, eps, t, x, n_env, cfg.master_seed, threads=run.threads, antithetic=anti)
        err = est.value - ubar
        psi = psi_rate(min(eps**2 / t, 1.0), rp)
        if C is None:
            C = abs(err) / psi  # fitted at the largest eps, then frozen
        kw = dict(d=d, law=law, eps=eps, t=t, x=x, n_env=n_env)
        run.add("mean_solution", est.value, est.stderr, **kw)
        run.add("homogenized", ubar, 0.0, **kw)
        run.add("error", err, est.stderr, **kw)
        run.add("envelope", C * psi, **kw)
        series.append((eps, abs(err), est.stderr))
        run.lap(f"eps={eps:g}")
    _fit(run, series, d=d, law=law, t=t, x=x, n_env=n_env)


def elliptic_rate(run: Run):
    cfg = run.cfg
    law, d = cfg.law(), _dimension(cfg)
    abar = _abar(cfg, law, d)
    f = _bump(cfg, d)
    x = _point(cfg, d)
    n_env = cfg.integer("n_env", 100, minimum=4)
    anti = cfg.boolean("antithetic", True)
    eps_list = _decreasing(cfg, "eps", cfg.reals("eps", positive=True))
    rp = RateParams(d, cfg.real("q", 0.0), cfg.real("delta", 0.1, positive=True))
    vbar = solve_cee(abar * np.eye(d), f, x)
    series, C = [], None
    for eps in eps_list:
        est = averaged_elliptic(law, f, eps, x, n_env, cfg.master_seed, threads=run.threads, antithetic=anti)
        err = est.value - vbar
        psi = psi_rate(min(eps**2, 1.0), rp)
        if C is None:
            C = abs(err) / psi
        kw = dict(d=d, law=law, eps=eps, x=x, n_env=n_env)
        run.add("mean_solution", est.value, est.stderr, **kw)
        run.add("homogenized", vbar, 0.0, **kw)
        run.add("error", err, est.stderr, **kw)
        run.add("envelope", C * psi, **kw)
        series.append((eps, abs(err), est.stderr))
        run.lap(f"eps={eps:g}")
    _fit(run, series, d=d, law=law, x=x, n_env=n_env)


def _fit(run: Run, series, **kw):
    if len(series) < 3:
        return
    try:
        fit = rate_fit(series)
    except ValidationError as exc:
        run.notes.append(f"rate fit refused: {exc}")
        return
    run.add("rate_slope", fit.slope, fit.slope_stderr, **kw)


def tridiagonal_green(eps: float, R: int) -> np.ndarray:
    """(eps^2 - Laplacian) G = 1_0 on {-R..R} with zero Dirichlet data outside, ω ≡ 1."""
    n = 2 * R - 1  # interior sites; the outer layer is the killing boundary
    ab = np.zeros((3, n))
    ab[0, 1:] = -1.0
    ab[1, :] = eps**2 + 2.0
    ab[2, :-1] = -1.0
    b = np.zeros(n)
    b[R - 1] = 1.0
    g = np.zeros(2 * R + 1)
    g[1:-1] = solve_banded((1, 1), ab, b)
    return g


def green_check(run: Run):
    cfg = run.cfg
    law, d = cfg.law("law", "constant(1)"), _dimension(cfg)
    tol = cfg.real("tol", 1e-12, positive=True)
    for eps in cfg.reals("eps", positive=True):
        box = elliptic_box(law, d, eps, [0.0] * d)
        field = constant_field(box, law.alpha) if law.kind == "constant" else \
            sample_environment(law, box, cfg.master_seed, 0)
        origin = [0] * d
        G = green_function(field, eps, origin, tol=tol)
        kw = dict(d=d, law=law, eps=eps, n_env=1)
        run.add("mass_defect", abs(1.0 - eps**2 * float(np.sum(G.values))), **kw)
        run.add("cg_residual", G.residual, **kw)
        if d == 1 and law.kind == "constant" and law.alpha == 1.0:
            oracle = tridiagonal_green(eps, box.R)
            run.add("max_deviation_tridiagonal", float(np.max(np.abs(G.values - oracle))), **kw)
            xs = np.arange(box.lo, box.hi + 1)
            inner = np.abs(xs) <= box.R // 2  # the closed form ignores the far-away killing layer
            run.add("max_deviation_closed_form",
                    float(np.max(np.abs(G.values[inner] - green_closed_form_1d(eps, xs[inner])))), **kw)
        r = resolvent_by_time_quadrature(field, eps, origin)
        run.add("quadrature_identity", float(np.max(np.abs(r.values - eps**2 * G.values))), **kw)
        run.lap(f"eps={eps:g}")


EXPERIMENT_FUNCS = {
    "env-check": env_check,
    "walk-var": walk_var,
    "effective-matrix": effective_matrix_exp,
    "clt-rate": clt_rate,
    "mclt-probe": mclt_probe,
    "kernel-compare": kernel_compare,
    "homog-rate": homog_rate,
    "elliptic-rate": elliptic_rate,
    "green-check": green_check,
}


_COMMON = {"master_seed", "experiment", "output_dir"}
KNOWN_KEYS = {
    "env-check": {"law", "d", "mode", "R", "n_env"},
    "walk-var": {"law", "d", "xi", "n_paths", "T"},
    "effective-matrix": {"law", "d", "L", "n_env", "tol"},
    "clt-rate": {"law", "d", "xi", "sigma2", "abar", "n_paths", "k", "n_boot", "q", "delta", "T"},
    "mclt-probe": {"n", "eps", "poisson_lambda", "variance_a", "p", "n_model", "cp_lambda"},
    "kernel-compare": {"law", "d", "abar", "t", "x_max", "n_env", "antithetic", "eps", "gradient_times"},
    "homog-rate": {"law", "d", "abar", "amplitude", "center", "width", "t", "x", "n_env", "antithetic", "eps",
                   "q", "delta"},
    "elliptic-rate": {"law", "d", "abar", "amplitude", "center", "width", "x", "n_env", "antithetic", "eps",
                      "q", "delta"},
    "green-check": {"law", "d", "tol", "eps"},
}


def run_experiment(cfg: ExperimentConfig, threads: int | None = None) -> Run:
    unknown = sorted(set(cfg.raw) - KNOWN_KEYS[cfg.experiment] - _COMMON)
    if unknown:
        raise ValidationError(f"unknown parameters for {cfg.experiment}: {', '.join(unknown)}")
    run = Run(cfg, threads)
    EXPERIMENT_FUNCS[cfg.experiment](run)
    return run
