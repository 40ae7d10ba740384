import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rcmhomog.environment import (BoxSpec, ConductanceField, EnvironmentLaw, LatticeField, apply_generator,
                                  constant_field, safe_radius, sample_environment, translate)
from rcmhomog.errors import ValidationError


def test_box_geometry():
    box = BoxSpec.centered(2, 3)
    assert box.shape == (7, 7)
    assert box.n_sites == 49
    assert box.index([-3, 3]) == (0, 6)
    with pytest.raises(ValidationError):
        box.index([4, 0])
    assert box.boundary_mask().sum() == 49 - 25


def test_periodic_box_wraps():
    box = BoxSpec.centered(1, 2, "periodic")
    # coordinate R + 1 is identified with -R
    assert box.index([3]) == box.index([-2])
    assert not box.boundary_mask().any()
    assert BoxSpec.torus(1, 8).n == 8


@pytest.mark.parametrize("kw", [dict(d=0, n=5), dict(d=4, n=5), dict(d=1, n=2), dict(d=1, n=5, mode="open")])
def test_box_validation(kw):
    with pytest.raises(ValidationError):
        BoxSpec(**kw)


def test_law_parse_roundtrip():
    law = EnvironmentLaw.parse("two_point(1, 4, 0.5)")
    assert law == EnvironmentLaw.two_point(1, 4, 0.5)
    assert EnvironmentLaw.parse(str(law)) == law
    assert law.mean() == 2.5
    assert law.mean_inverse() == pytest.approx(0.625)


@pytest.mark.parametrize("text", ["gamma(1,2)", "uniform(4,1)", "two_point(1,4,2)", "constant(0)", "uniform 1 4"])
def test_law_rejects_bad_input(text):
    with pytest.raises(ValidationError):
        EnvironmentLaw.parse(text)


def test_constant_law_gives_constant_weights():
    box = BoxSpec.centered(2, 5, "periodic")
    f = sample_environment(EnvironmentLaw.constant(2.0), box, 1, 0)
    assert np.all(f.weights == 2.0)


def test_uniform_weights_in_range():
    box = BoxSpec.centered(1, 100)
    f = sample_environment(EnvironmentLaw.uniform(1, 4), box, 3, 0)
    w = f.weights[0][:-1]  # the last edge leaves the absorbing box
    assert w.size == 200
    assert w.min() >= 1 and w.max() <= 4


def test_sampling_is_deterministic_and_index_dependent():
    law, box = EnvironmentLaw.uniform(1, 4), BoxSpec.centered(2, 6)
    a = sample_environment(law, box, 11, 3)
    b = sample_environment(law, box, 11, 3)
    c = sample_environment(law, box, 11, 4)
    assert np.array_equal(a.weights, b.weights)
    assert not np.array_equal(a.weights, c.weights)


def test_two_point_frequency():
    box = BoxSpec.torus(1, 20000)
    w = sample_environment(EnvironmentLaw.two_point(1, 4, 0.3), box, 5, 0).weights
    frac = np.mean(w == 4.0)
    assert abs(frac - 0.3) < 4 * np.sqrt(0.3 * 0.7 / w.size)


def test_mirror_has_same_law_and_flips_two_point():
    box = BoxSpec.torus(1, 1000)
    law = EnvironmentLaw.two_point(1, 4, 0.5)
    a = sample_environment(law, box, 2, 0).weights
    b = sample_environment(law, box, 2, 0, mirror=True).weights
    assert np.all((a == 1) ^ (b == 1))


def test_weights_are_read_only():
    f = sample_environment(EnvironmentLaw.uniform(1, 2), BoxSpec.centered(1, 4), 0, 0)
    with pytest.raises(ValueError):
        f.weights[0, 0] = 5.0


def test_generator_matches_definition():
    box = BoxSpec.centered(1, 3)
    w = np.array([[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 0.0]])
    field = ConductanceField(box, w)
    f = LatticeField(box, np.arange(7.0) ** 2)
    Lf = apply_generator(field, f).values
    v = f.values
    expected = np.zeros(7)
    for x in range(7):
        if x + 1 < 7:
            expected[x] += w[0, x] * (v[x + 1] - v[x])
        if x - 1 >= 0:
            expected[x] += w[0, x - 1] * (v[x - 1] - v[x])
    assert np.allclose(Lf, expected)
    # the sparse matrix agrees with the stencil
    assert np.allclose(field.generator_matrix() @ v, expected)


def test_generator_kills_constants_and_is_symmetric():
    for mode in ("absorbing", "periodic"):
        box = BoxSpec.centered(2, 4, mode)
        field = sample_environment(EnvironmentLaw.uniform(1, 3), box, 7, 1)
        L = field.generator_matrix()
        assert np.abs(L @ np.ones(box.n_sites)).max() < 1e-12
        assert abs(L - L.T).max() == 0.0


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_generator_linear(seed, a, b):
    box = BoxSpec.centered(2, 3, "periodic")
    field = sample_environment(EnvironmentLaw.uniform(1, 4), box, seed, 0)
    rng = np.random.default_rng(seed)
    f, g = rng.normal(size=box.shape), rng.normal(size=box.shape)
    lhs = apply_generator(field, LatticeField(box, a * f + b * g)).values
    rhs = a * apply_generator(field, LatticeField(box, f)).values + b * apply_generator(field, LatticeField(box, g)).values
    assert np.allclose(lhs, rhs, atol=1e-10)


def test_generator_box_mismatch():
    field = constant_field(BoxSpec.centered(1, 3), 1.0)
    with pytest.raises(ValidationError):
        apply_generator(field, LatticeField(BoxSpec.centered(1, 4), np.zeros(9)))


def test_translate_periodic():
    box = BoxSpec.torus(2, 6)
    field = sample_environment(EnvironmentLaw.uniform(1, 2), box, 1, 0)
    moved = translate(field, [1, 2])
    # edge (x, x+e_i) of the moved field is edge (x+z, x+z+e_i) of the original
    assert moved.weights[0][box.index([0, 0])] == field.weights[0][box.index([1, 2])]


def test_safe_radius_formula():
    assert safe_radius(1, 4.0, 100.0) == int(np.ceil(8 * np.sqrt(800) + 16))


def test_field_save_load(tmp_path):
    field = sample_environment(EnvironmentLaw.two_point(1, 4, 0.5), BoxSpec.centered(2, 3), 9, 2)
    path = field.save(tmp_path / "f.bin")
    back = ConductanceField.load(path)
    assert back.box == field.box
    assert np.array_equal(back.weights, field.weights)
    assert (back.seed, back.index) == (9, 2)
