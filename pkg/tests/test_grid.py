import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from quasiflow.grid import (DirichletError, Domain, Field, build_grid, field_from_csv, field_to_csv,
                            gradient_field, integrate, norm_W1p, reflect_field)


def test_interval_spacing_and_count():
    g = build_grid(Domain.interval(0, 1), 10)
    assert g.h == pytest.approx(0.1)
    assert g.n_interior == 9


def test_disk_interior_count(disk64):
    ref = math.pi / 4 * 63 ** 2
    assert abs(disk64.n_interior / ref - 1) <= 0.02


def test_rectangle_interior_count():
    g = build_grid(Domain.rectangle(-1, 1, -1, 1), 16)
    assert g.n_interior == 15 * 15


@pytest.mark.parametrize("res", [8, 17, 64, 101])
def test_disk_interior_strictly_inside(res):
    g = build_grid(Domain.disk(1.3), res)
    assert np.all(g.radius[g.interior] < 1.3)


def test_resolution_floor():
    with pytest.raises(ValueError):
        build_grid(Domain.interval(0, 1), 7)


def test_domain_parsing_and_symmetry():
    assert Domain.parse("disk(1)") == Domain.disk(1)
    assert Domain.parse("rectangle(-1, 1, 0, 2)").symmetric_in_x1
    assert not Domain.parse("interval(0,1)").symmetric_in_x1
    assert Domain.parse("interval(-2,2)").symmetric_in_x1
    for bad in ("disk(0)", "sphere(1)", "interval(1,0)", "disk"):
        with pytest.raises(ValueError):
            Domain.parse(bad)


def test_field_rejects_boundary_values_and_nan(unit_interval):
    v = np.ones(unit_interval.shape)
    with pytest.raises(DirichletError):
        Field(unit_interval, v)
    v = np.zeros(unit_interval.shape)
    v[3] = np.nan
    with pytest.raises(ValueError):
        Field(unit_interval, v)


def test_gradient_of_linear_field_on_rectangle():
    g = build_grid(Domain.rectangle(-1, 1, -1, 1), 32)
    u = Field.from_function(g, lambda x, y: x)
    mag = gradient_field(u).magnitude
    m = g.interior
    central = m & np.roll(m, 1, 0) & np.roll(m, -1, 0) & np.roll(m, 1, 1) & np.roll(m, -1, 1)
    np.testing.assert_allclose(mag[central], 1.0, atol=1e-12)


def test_gradient_of_zero_and_constants(disk64):
    assert not gradient_field(disk64.zeros()).magnitude.any()
    g = build_grid(Domain.interval(0, 1), 16)
    assert not gradient_field(g.zeros()).components.any()


def test_gradient_of_sine_vanishes_at_midpoint(unit_interval):
    u = Field.from_function(unit_interval, lambda x: np.sin(np.pi * x))
    assert gradient_field(u).magnitude[64] < 1e-3


def test_magnitude_is_euclidean_norm(disk64):
    u = Field.from_function(disk64, lambda x, y: np.sin(3 * x) * np.cos(2 * y))
    gf = gradient_field(u)
    np.testing.assert_allclose(gf.magnitude, np.hypot(*gf.components))


def test_integrate_examples(unit_interval, disk64):
    h = unit_interval.h
    assert abs(integrate(np.ones(unit_interval.shape), unit_interval) - 1) <= h
    assert abs(integrate(unit_interval.coords[0], unit_interval) - 0.5) <= h
    assert abs(integrate(np.ones(disk64.shape), disk64) / math.pi - 1) <= 0.03


@given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 2 ** 31))
def test_integrate_is_linear(a, b, seed):
    g = build_grid(Domain.disk(1), 24)
    r = np.random.default_rng(seed)
    g1, g2 = r.standard_normal(g.shape), r.standard_normal(g.shape)
    lhs = integrate(a * g1 + b * g2, g)
    rhs = a * integrate(g1, g) + b * integrate(g2, g)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_norm_W1p_examples():
    g = build_grid(Domain.interval(0, 1), 256)
    assert norm_W1p(g.zeros(), 2) == 0
    # u = x1 is not a Dirichlet field; use its interior restriction, the boundary layer is O(h)
    u = Field.from_function(g, lambda x: x)
    assert abs(norm_W1p(u, 2) / math.sqrt(4 / 3) - 1) <= 0.02
    with pytest.raises(ValueError):
        norm_W1p(u, 1.0)


@given(st.floats(1.1, 4.0), st.floats(0.1, 3.0))
def test_norm_W1p_properties(p, scale):
    g = build_grid(Domain.disk(1), 20)
    u = Field.from_function(g, lambda x, y: np.cos(x + 2 * y) * (1 - x * x - y * y))
    grad_only = integrate(gradient_field(u).magnitude ** p, g) ** (1 / p)
    assert norm_W1p(u, p) >= grad_only
    assert norm_W1p(scale * u, p) == pytest.approx(scale * norm_W1p(u, p), rel=1e-12)


def test_reflection_examples():
    g = build_grid(Domain.interval(-1, 1), 64)
    u = Field.from_function(g, lambda x: 1 - x * x)
    np.testing.assert_allclose(reflect_field(u, 0).values, u.values, atol=1e-14)
    v = Field.from_function(g, lambda x: x + 1)
    r = reflect_field(v, 0).values
    m = g.interior
    np.testing.assert_allclose(r[m], 1 - g.coords[0][m], atol=1e-14)
    w = Field.from_function(g, lambda x: np.cos(3 * x) + x)
    i_half, i_zero = 16, 32  # x = -0.5 and x = 0
    assert reflect_field(w, -0.25).values[i_half] == pytest.approx(w.values[i_zero], abs=1e-14)


def test_reflection_lambda_range():
    g = build_grid(Domain.interval(-1, 1), 16)
    with pytest.raises(ValueError):
        reflect_field(g.zeros(), 0.1)
    with pytest.raises(ValueError):
        reflect_field(g.zeros(), -1.5)


@given(st.integers(0, 2 ** 31))
def test_reflection_at_zero_is_involution(seed):
    g = build_grid(Domain.disk(1), 32)
    r = np.random.default_rng(seed)
    u = Field(g, np.where(g.interior, r.random(g.shape), 0.0))
    twice = reflect_field(reflect_field(u, 0.0), 0.0)
    np.testing.assert_allclose(twice.values, u.values, atol=1e-12)


def test_field_csv_round_trip(tmp_path, disk64):
    u = Field.from_function(disk64, lambda x, y: np.exp(x) * (1 - x * x - y * y))
    field_to_csv(u, tmp_path / "u.csv", t=0.5)
    head = (tmp_path / "u.csv").read_text().splitlines()[:2]
    assert head[0].startswith("# domain=disk(1) h=") and "t=0.5" in head[0]
    assert head[1] == "x1,x2,value"
    back = field_from_csv(disk64, tmp_path / "u.csv")
    np.testing.assert_array_equal(back.values, u.values)
