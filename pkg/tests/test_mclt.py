import math

import numpy as np
import pytest

from rcmhomog.distance import k_kantorovich_lower_bound, kolmogorov_to_gaussian
from rcmhomog.errors import ValidationError
from rcmhomog.mclt import (MartingaleModel, clt_rhs, fit_cp, measured_l1, optimality_probe, simulate_model)


def test_model_validation():
    for kind, a in [("time_changed_bm", -0.1), ("compensated_poisson", 0.0), ("random_variance", 1.0), ("levy", 1.0)]:
        with pytest.raises(ValidationError):
            MartingaleModel(kind, a)


def test_time_changed_bm_functionals():
    d = simulate_model(MartingaleModel("time_changed_bm", 0.1), 1000, 0)
    assert d.bracket_l1 == 0.1
    assert d.L2p == 0.0
    assert simulate_model(MartingaleModel("time_changed_bm", 0.7), 10, 0, p=3).L2p == 0.0


def test_compensated_poisson_functionals():
    d = simulate_model(MartingaleModel("compensated_poisson", 100), 1000, 0, p=2)
    assert d.L2p == 0.01
    assert d.bracket_l1 == 0.0
    # jumps of size lam^{-1/2} on a grid: all endpoints lie on it
    v = d.endpoints.values * 10 + 100
    assert np.allclose(v, np.round(v))


def test_random_variance_moments():
    d = simulate_model(MartingaleModel("random_variance", 0.5), 200_000, 1)
    assert d.bracket_l1 == 0.5 and d.L2p == 0.0
    assert abs(d.endpoints.var() - 1.0) < 0.02
    # E M^4 = 3 E V^2 = 3 (1 + a^2)
    m4 = np.mean(d.endpoints.values**4)
    assert abs(m4 - 3.75) < 0.1


def test_simulation_deterministic():
    m = MartingaleModel("random_variance", 0.3)
    assert np.array_equal(simulate_model(m, 50, 9).endpoints.values, simulate_model(m, 50, 9).endpoints.values)


def test_clt_rhs_examples():
    d = simulate_model(MartingaleModel("time_changed_bm", 0.1), 10, 0)
    r1, rk = clt_rhs(d, 1.0, k=1.0)
    assert r1 == pytest.approx(2 * math.sqrt(0.1))
    assert rk == pytest.approx(0.1)
    assert clt_rhs(d, 1.0)[1] == math.inf
    with pytest.raises(ValidationError):
        clt_rhs(d, 0.0)


def test_clt_rhs_monotone():
    base = simulate_model(MartingaleModel("compensated_poisson", 100), 10, 0)
    prev = None
    for lam in (1e4, 1e3, 1e2, 1e1):  # L grows as lam falls
        d = simulate_model(MartingaleModel("compensated_poisson", lam), 10, 0)
        cur = clt_rhs(d, 1.5, k=2.0)
        if prev:
            assert cur[0] >= prev[0] and cur[1] >= prev[1]
        prev = cur
    prev = None
    for a in (0.0, 0.1, 0.3, 0.9):
        cur = clt_rhs(simulate_model(MartingaleModel("random_variance", a), 10, 0), 1.5, k=2.0)
        if prev:
            assert cur[0] >= prev[0] and cur[1] >= prev[1]
        prev = cur
    assert base.L2p > 0


def test_fit_cp_requires_jumps():
    with pytest.raises(ValidationError):
        fit_cp(simulate_model(MartingaleModel("time_changed_bm", 0.1), 10, 0))
    cp = fit_cp(simulate_model(MartingaleModel("compensated_poisson", 100), 100_000, 2))
    assert cp > 0


def test_optimality_probe():
    assert optimality_probe(0.0, 10, 0)[0] == 0.0
    gap, est, se = optimality_probe(0.1, 1_000_000, 3)
    assert gap == pytest.approx(0.029581, abs=1e-6)
    assert abs(est - gap) < 3 * se
    # the gap behaves like exp(-1/2) eps / 2 for small eps
    for eps in (1e-1, 1e-2, 1e-3):
        assert 0.9 < optimality_probe(eps, 2, 0)[0] / (math.exp(-0.5) * eps / 2) < 1
    with pytest.raises(ValidationError):
        optimality_probe(-1, 10, 0)


def test_k_kantorovich_exceeds_probe_gap():
    n = 400_000
    d = simulate_model(MartingaleModel("time_changed_bm", 0.1), n, 4)
    lb = k_kantorovich_lower_bound(d.endpoints, 1.0, 1.0, [1.0])
    gap, _, se = optimality_probe(0.1, n, 4)
    assert lb >= gap - 3 * se


def test_kolmogorov_decreases_with_lambda():
    vals = [kolmogorov_to_gaussian(simulate_model(MartingaleModel("compensated_poisson", lam), 200_000, 5).endpoints)
            for lam in (1e2, 1e3, 1e4)]
    assert vals[0] > vals[1] > vals[2]


def test_measured_l1_reports_floor():
    d = simulate_model(MartingaleModel("time_changed_bm", 0.0), 10_000, 6)
    l1, floor = measured_l1(d)
    assert floor == pytest.approx(0.008)
    assert l1 < 5 * floor
