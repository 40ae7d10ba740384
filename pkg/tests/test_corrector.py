import math

import numpy as np
import pytest

from rcmhomog.corrector import (CorrectorField, EffectiveMatrix, MartingalePath, corrector_martingale,
                                corrector_rhs, dirichlet_energy, effective_matrix, martingale_diagnostics,
                                solve_corrector, solve_correctors)
from rcmhomog.environment import (BoxSpec, ConductanceField, EnvironmentLaw, apply_generator, constant_field,
                                  LatticeField, sample_environment, translate)
from rcmhomog.errors import ValidationError
from rcmhomog.walk import simulate_walk, walk_rng


def alternating_ring(L=64):
    box = BoxSpec.torus(1, L)
    w = np.where(np.arange(L) % 2 == 0, 1.0, 2.0)[None, :]
    return ConductanceField(box, w)


def test_constant_field_has_zero_corrector():
    field = constant_field(BoxSpec.torus(2, 8), 1.7)
    for c in solve_correctors(field):
        assert np.abs(c.chi.values).max() < 1e-10


def test_constant_effective_matrix():
    field = constant_field(BoxSpec.torus(2, 8), 1.7)
    A = effective_matrix(field, solve_correctors(field)).matrix
    assert np.allclose(A, 3.4 * np.eye(2), atol=1e-10)


def test_alternating_ring_gradients_and_matrix():
    field = alternating_ring()
    c = solve_corrector(field, 0)
    grad = np.roll(c.chi.values, -1) - c.chi.values
    w = field.weights[0]
    # exact 1-d corrector: grad chi = (harmonic mean) / w - 1
    assert np.allclose(grad, (4.0 / 3.0) / w - 1.0, atol=1e-9)
    assert np.allclose(grad[w == 1.0], 1 / 3)
    A = effective_matrix(field, [c]).matrix[0, 0]
    assert abs(A - 8.0 / 3.0) < 1e-8


def test_corrector_solves_its_equation():
    field = sample_environment(EnvironmentLaw.uniform(1, 4), BoxSpec.torus(2, 12), 4, 0)
    for i in range(2):
        c = solve_corrector(field, i, tol=1e-10)
        assert abs(c.chi.values.mean()) < 1e-10
        res = -apply_generator(field, c.chi).values - corrector_rhs(field, i)
        assert np.linalg.norm(res) <= 1e-9 * np.linalg.norm(corrector_rhs(field, i))
        assert c.residual <= 1e-10


def test_corrector_minimises_dirichlet_energy():
    field = sample_environment(EnvironmentLaw.two_point(1, 4, 0.5), BoxSpec.torus(2, 10), 5, 0)
    c = solve_corrector(field, 0, tol=1e-12)
    e0 = dirichlet_energy(field, c.chi.values, 0)
    rng = np.random.default_rng(0)
    for _ in range(10):
        pert = rng.normal(scale=0.1, size=field.box.shape)
        assert dirichlet_energy(field, c.chi.values + pert, 0) - e0 >= -10 * 1e-12


def test_effective_matrix_bounds_and_symmetry():
    law = EnvironmentLaw.uniform(1, 4)
    field = sample_environment(law, BoxSpec.torus(2, 16), 6, 0)
    A = effective_matrix(field, solve_correctors(field))
    assert np.allclose(A.matrix, A.matrix.T)
    for xi in ([1, 0], [0, 1], [2 ** -0.5, 2 ** -0.5], [2 ** -0.5, -(2 ** -0.5)]):
        q = A.quadratic(xi)
        assert 2 * law.alpha - 1e-6 <= q <= 2 * law.beta + 1e-6
    assert np.all(np.linalg.eigvalsh(A.matrix) > 0)


def test_effective_matrix_translation_invariant():
    field = sample_environment(EnvironmentLaw.uniform(1, 4), BoxSpec.torus(2, 10), 8, 0)
    moved = translate(field, [3, -2])
    A = effective_matrix(field, solve_correctors(field)).matrix
    B = effective_matrix(moved, solve_correctors(moved)).matrix
    assert np.allclose(A, B, atol=1e-8)


def test_effective_matrix_needs_all_axes():
    field = constant_field(BoxSpec.torus(2, 6), 1.0)
    with pytest.raises(ValidationError):
        effective_matrix(field, [solve_corrector(field, 0)])


def test_corrector_requires_torus():
    with pytest.raises(ValidationError):
        solve_corrector(constant_field(BoxSpec.centered(1, 4), 1.0), 0)


def test_martingale_constant_field():
    field = constant_field(BoxSpec.torus(1, 16), 1.0)
    chis = solve_correctors(field)
    tr = simulate_walk(field, [0], 30.0, walk_rng(1, 0))
    m = corrector_martingale(tr, field, chis, [1.0])
    _, sites = tr.path()
    assert np.allclose(m.M[:-1], sites[:, 0], atol=1e-9)
    assert np.allclose(np.diff(m.bracket) / np.diff(m.times), 2.0)
    assert m.bracket[-1] / 30.0 == pytest.approx(2.0)


def test_martingale_bracket_monotone_and_jump_times():
    field = sample_environment(EnvironmentLaw.uniform(1, 4), BoxSpec.torus(2, 8), 2, 0)
    chis = solve_correctors(field)
    tr = simulate_walk(field, [0, 0], 25.0, walk_rng(2, 0))
    m = corrector_martingale(tr, field, chis, [0.6, 0.8])
    assert m.bracket[0] == 0.0
    assert np.all(np.diff(m.bracket) >= 0)
    # M only moves at the trajectory's jump times
    moved = np.flatnonzero(np.abs(m.jumps) > 0)
    assert set(m.times[moved + 1]).issubset(set(tr.times))


def test_martingale_property_on_average():
    # E[M_T] = 0 over walks in a fixed periodic environment
    field = sample_environment(EnvironmentLaw.two_point(1, 4, 0.5), BoxSpec.torus(1, 32), 3, 0)
    chis = solve_correctors(field)
    ends = np.array([corrector_martingale(simulate_walk(field, [0], 50.0, walk_rng(3, 0, k)), field, chis,
                                          [1.0]).M[-1] for k in range(4000)])
    assert abs(ends.mean()) < 3 * ends.std(ddof=1) / math.sqrt(ends.size)


def test_diagnostics_continuous_paths():
    t = np.linspace(0, 2, 5)
    p = MartingalePath(t, np.zeros(5), 2 * t, 2.0)
    d = martingale_diagnostics([p, p], 2.0)
    assert d.L2p == 0.0
    assert d.bracket_l1 == 0.0


def test_diagnostics_fixed_jumps():
    h, N, T = 0.5, 6, 3.0
    t = np.concatenate([[0.0], np.linspace(0.1, 2.9, N), [T]])
    M = np.concatenate([[0.0], h * np.arange(1, N + 1), [h * N]])
    p = MartingalePath(t, M, t, T)
    d = martingale_diagnostics([p, p, p], 2.0)
    assert d.L2p == pytest.approx(N * h**4 / T**2)


def test_diagnostics_validation():
    with pytest.raises(ValidationError):
        martingale_diagnostics([], 2.0)
    p = MartingalePath(np.array([0.0, 1.0]), np.zeros(2), np.zeros(2), 1.0)
    with pytest.raises(ValidationError):
        martingale_diagnostics([p], 1.0)


def test_serialization_roundtrip(tmp_path):
    field = sample_environment(EnvironmentLaw.uniform(1, 2), BoxSpec.torus(1, 16), 1, 0)
    c = solve_corrector(field, 0)
    back = CorrectorField.load(c.save(tmp_path / "chi.bin"))
    assert np.array_equal(back.chi.values, c.chi.values)
    A = EffectiveMatrix(np.array([[3.0, 0.1], [0.1, 2.0]]), cell=16, n_env=4, stderr=np.full((2, 2), 0.01))
    B = EffectiveMatrix.load(A.save(tmp_path / "A.bin"))
    assert np.array_equal(A.matrix, B.matrix) and np.array_equal(A.stderr, B.stderr) and B.n_env == 4
