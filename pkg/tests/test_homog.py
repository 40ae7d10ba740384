import math

import numpy as np
import pytest
from scipy import integrate, special

from rcmhomog.environment import BoxSpec, EnvironmentLaw, constant_field, sample_environment
from rcmhomog.errors import ValidationError
from rcmhomog.homog import (InitialData, averaged_elliptic, averaged_solution, bound_rhs, dee_by_time_quadrature,
                            parabolic_box, rate_fit, solve_cee, solve_cpe, solve_dee, solve_dpe)
from rcmhomog.kernel import homogenized_green

TWO = EnvironmentLaw.two_point(1, 4, 0.5)
BUMP = InitialData.gaussian_bump(1.0, [0.0], 1.0)
FLAT = InitialData.gaussian_bump(1.0, [0.0], 1e9)  # f = 1 to ~1e-13 on the boxes used here


def test_bump_norms_against_quadrature():
    f = InitialData.gaussian_bump(1.5, [0.3], 0.7)
    l2 = math.sqrt(integrate.quad(lambda x: f([x]) ** 2, -np.inf, np.inf)[0])
    assert f.l2_norm() == pytest.approx(l2, rel=1e-10)
    xs = np.linspace(-5, 5, 200001)
    g = np.gradient(f(xs[:, None]), xs)
    assert f.grad_sup()[0] == pytest.approx(np.max(np.abs(g)), rel=1e-6)
    # third derivative of exp(-y^2/2s^2) is (3y/s^4 - y^3/s^6) exp(...)
    s = 0.7
    d3 = lambda x: 1.5 * (3 * (x - 0.3) / s**4 - (x - 0.3) ** 3 / s**6) * math.exp(-0.5 * (x - 0.3) ** 2 / s**2)
    assert f.m == 3
    assert f.deriv_l2()[0] == pytest.approx(math.sqrt(integrate.quad(lambda x: d3(x) ** 2, -np.inf, np.inf)[0]),
                                            rel=1e-9)
    with pytest.raises(ValidationError):
        InitialData.gaussian_bump(1.0, [0.0], 0.0)


def test_dpe_small_time_returns_initial_data():
    field = sample_environment(TWO, BoxSpec.centered(1, 60), 0, 0)
    x = [0.37]
    u = solve_dpe(field, BUMP, 0.1, 1e-6, x).value
    assert abs(u - BUMP([0.3])) < 1e-4


def test_dpe_skellam_convolution_oracle():
    eps, t = 0.1, 1.0
    s = t / eps**2
    field = constant_field(parabolic_box(EnvironmentLaw.constant(1.0), 1, eps, t, [0.0]), 1.0)
    k = np.arange(-400, 401)
    oracle = float(np.sum(special.ive(np.abs(k), 2 * s) * BUMP(eps * k[:, None])))
    assert abs(solve_dpe(field, BUMP, eps, t, [0.0]).value - oracle) < 1e-6


def test_dpe_kernel_and_mc_agree():
    field = constant_field(BoxSpec.centered(1, 60), 1.0)
    exact = solve_dpe(field, BUMP, 0.5, 1.0, [0.0]).value
    mc = solve_dpe(field, BUMP, 0.5, 1.0, [0.0], method="mc", n_paths=20_000, seed=3)
    assert abs(mc.value - exact) < 3 * mc.stderr
    with pytest.raises(ValidationError):
        solve_dpe(field, BUMP, 0.5, 1.0, [0.0], method="pde")


def test_dpe_conserves_constants():
    field = sample_environment(TWO, BoxSpec.centered(2, 40), 1, 0)
    assert solve_dpe(field, InitialData.gaussian_bump(1.0, [0.0, 0.0], 1e9), 0.5, 1.0, [0.2, -0.1]).value == \
        pytest.approx(1.0, abs=1e-9)


def test_averaged_solution_constant_law():
    law = EnvironmentLaw.constant(1.0)
    box = parabolic_box(law, 1, 0.2, 1.0, [0.0])
    est = averaged_solution(law, BUMP, 0.2, 1.0, [0.0], 6, 0, box=box)
    assert est.stderr == 0.0
    assert est.value == pytest.approx(solve_dpe(constant_field(box, 1.0), BUMP, 0.2, 1.0, [0.0]).value, abs=1e-14)


def test_averaged_solution_reflection():
    a = averaged_solution(TWO, BUMP, 0.2, 1.0, [0.6], 400, 4)
    b = averaged_solution(TWO, BUMP, 0.2, 1.0, [-0.6], 400, 5)
    assert abs(a.value - b.value) < 4 * math.hypot(a.stderr, b.stderr)


@pytest.mark.parametrize("anti", [False, True])
def test_averaged_solution_reproducible_across_seeds(anti):
    a = averaged_solution(TWO, BUMP, 0.1, 1.0, [0.0], 2000, 1, antithetic=anti)
    b = averaged_solution(TWO, BUMP, 0.1, 1.0, [0.0], 2000, 2, antithetic=anti)
    assert abs(a.value - b.value) < 3 * math.hypot(a.stderr, b.stderr)


def test_antithetic_reduces_stderr_and_validates():
    plain = averaged_solution(TWO, BUMP, 0.2, 1.0, [0.0], 400, 6)
    anti = averaged_solution(TWO, BUMP, 0.2, 1.0, [0.0], 400, 6, antithetic=True)
    assert anti.stderr < 0.5 * plain.stderr
    assert abs(anti.value - plain.value) < 3 * math.hypot(anti.stderr, plain.stderr)
    with pytest.raises(ValidationError):
        averaged_solution(TWO, BUMP, 0.2, 1.0, [0.0], 5, 6, antithetic=True)
    with pytest.raises(ValidationError):
        averaged_solution(TWO, BUMP, 0.2, 1.0, [0.0], 1, 6)


def test_averaged_solution_thread_independent():
    a = averaged_solution(TWO, BUMP, 0.25, 1.0, [0.0], 64, 7, threads=1, chunk=8)
    b = averaged_solution(TWO, BUMP, 0.25, 1.0, [0.0], 64, 7, threads=4, chunk=8)
    assert a == b


def test_cpe_closed_form():
    assert solve_cpe(2.0, BUMP, 1.0, [0.0]) == pytest.approx(1 / math.sqrt(3), abs=1e-12)
    assert solve_cpe(2.0, BUMP, 0.0, [0.4]) == pytest.approx(BUMP([0.4]))
    # Gauss-Hermite expectation of f(x + sqrt(2 t) N)
    z, w = np.polynomial.hermite_e.hermegauss(80)
    gh = float(np.sum(w * BUMP((0.5 + math.sqrt(2.0) * z)[:, None])) / math.sqrt(2 * math.pi))
    assert solve_cpe(2.0, BUMP, 1.0, [0.5]) == pytest.approx(gh, abs=1e-12)


def test_cpe_solves_heat_equation():
    h = 1e-3
    u = lambda t, x: solve_cpe(2.0, BUMP, t, [x])
    ut = (u(1 + h, 0.5) - u(1 - h, 0.5)) / (2 * h)
    uxx = (u(1, 0.5 + h) - 2 * u(1, 0.5) + u(1, 0.5 - h)) / h**2
    assert abs(ut - uxx) < 1e-5 * abs(ut)


def test_cpe_anisotropic_matches_product():
    f = InitialData.gaussian_bump(2.0, [0.0, 0.0], 0.8)
    A = np.diag([1.0, 3.0])
    one = lambda a, y: 0.8 / math.sqrt(0.64 + a) * math.exp(-0.5 * y * y / (0.64 + a))
    assert solve_cpe(A, f, 1.0, [0.3, -0.2]) == pytest.approx(2.0 * one(1.0, 0.3) * one(3.0, -0.2), rel=1e-12)
    with pytest.raises(ValidationError):
        solve_cpe(np.eye(3), f, 1.0, [0, 0])


def test_dee_constant_and_maximum_principle():
    field = sample_environment(TWO, BoxSpec.centered(1, 400), 2, 0)
    assert solve_dee(field, FLAT, 0.2, [0.0]) == pytest.approx(1.0, abs=1e-9)
    v = solve_dee(field, BUMP, 0.2, [0.3])
    assert 0 < v <= BUMP.sup()


def test_dee_quadrature_matches_direct():
    field = constant_field(BoxSpec.centered(1, 400), 1.0)
    direct = solve_dee(field, BUMP, 0.2, [0.0])
    assert abs(dee_by_time_quadrature(field, BUMP, 0.2, [0.0]) - direct) < 1e-6


def test_cee_against_green_convolution():
    # homogenized resolvent: convolve f with the homogenized Green function
    conv = integrate.quad(lambda y: homogenized_green(2.0, [0.4 - y], method="closed") * BUMP([y]),
                          -np.inf, np.inf, epsabs=1e-12)[0]
    assert solve_cee(2.0, BUMP, [0.4]) == pytest.approx(conv, abs=1e-9)


def test_averaged_elliptic_constant_law():
    law = EnvironmentLaw.constant(1.0)
    est = averaged_elliptic(law, BUMP, 0.25, [0.0], 4, 0)
    assert est.stderr == 0.0
    anti = averaged_elliptic(TWO, BUMP, 0.25, [0.0], 8, 0, antithetic=True)
    assert anti.stderr > 0


def test_bound_parabolic_sqrt_scaling():
    kw = dict(C=1.0, d=1, t=1.0, f=BUMP)
    eps = 1e-8
    ratio = bound_rhs("parabolic", eps=eps, **kw) / bound_rhs("parabolic", eps=eps / 4, **kw)
    assert ratio == pytest.approx(2.0, rel=1e-2)
    assert bound_rhs("parabolic", eps=1e-12, **kw) < 1e-2


def test_bound_kernel_exponent_d3():
    kw = dict(C=1.0, d=3, delta=0.1, t=1.0, x=[0.0, 0.0, 0.0], c=1.0)
    a, b = bound_rhs("kernel", eps=1e-2, **kw), bound_rhs("kernel", eps=1e-4, **kw)
    slope = math.log(a / b) / math.log(100)
    assert slope == pytest.approx((1 - 2 * 0.1) / 6, rel=1e-12)


def test_bound_other_kinds():
    e = bound_rhs("elliptic", eps=0.1, C=1.0, d=1, f=BUMP)
    assert e > bound_rhs("elliptic", eps=0.05, C=1.0, d=1, f=BUMP) > 0
    g1 = bound_rhs("green", eps=0.1, C=1.0, d=1, x=[1.0], c=1.0)
    assert g1 == pytest.approx(0.1**0.125 * math.exp(-1) + math.exp(-10))
    assert bound_rhs("green", eps=0.1, C=1.0, d=3, x=[1.0, 0, 0], c=1.0) > 0
    with pytest.raises(ValidationError):
        bound_rhs("parabolic", eps=0.1, C=1.0, d=1, f=BUMP)
    with pytest.raises(ValidationError):
        bound_rhs("thm1", eps=0.1, C=1.0, d=1)
    with pytest.raises(ValidationError):
        bound_rhs("green", eps=0.1, C=1.0, d=1, x=[0.0], c=1.0)


def test_rate_fit_exact_series():
    eps = [0.2, 0.1, 0.05, 0.025]
    r = rate_fit([(e, e, 0.0) for e in eps])
    assert abs(r.slope - 1) < 1e-12
    r = rate_fit([(e, math.sqrt(e), 1e-6) for e in eps])
    assert r.slope == pytest.approx(0.5, abs=1e-12)
    assert r.predict(0.1) == pytest.approx(math.sqrt(0.1))


def test_rate_fit_noisy_series():
    rng = np.random.default_rng(0)
    eps = np.array([0.2, 0.1, 0.05, 0.025, 0.0125])
    slopes = []
    for _ in range(200):
        err = np.sqrt(eps) * (1 + 0.05 * rng.standard_normal(eps.size))
        slopes.append(rate_fit([(e, v, 0.05 * v) for e, v in zip(eps, err)]).slope)
    assert np.all(np.abs(np.array(slopes) - 0.5) < 0.1)


def test_rate_fit_refusals():
    with pytest.raises(ValidationError, match="at least 3"):
        rate_fit([(0.2, 1, 0), (0.1, 0.5, 0)])
    with pytest.raises(ValidationError, match="decreasing"):
        rate_fit([(0.1, 1, 0), (0.2, 0.5, 0), (0.05, 0.2, 0)])
    with pytest.raises(ValidationError, match=r"\[2\]"):
        rate_fit([(0.2, 1, 0.01), (0.1, 0.5, 0.01), (0.05, 0.02, 0.01)])
