import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from quasiflow.coefficients import coefficient, nonlinearity
from quasiflow.grid import Domain, Field, build_grid, integrate
from quasiflow.operators import (RegularizationParams, energy, energy_directional_derivative,
                                 energy_gradient, hessian, residual)
from quasiflow.stationary import exact_p_torsion

CONST, QUAD = coefficient("const"), coefficient("quadratic")
ZERO = nonlinearity("zero", n=1, p=2)
EXACT = RegularizationParams(0.0)


def sine(g):
    return Field.from_function(g, lambda x: np.sin(np.pi * x))


def random_pair(g, seed, positive=False):
    r = np.random.default_rng(seed)
    x, y = g.coords
    c = r.standard_normal(6)
    bump = (1 - x * x - y * y)
    u = bump * (c[0] + c[1] * x + c[2] * y * y + 0.5 * np.sin(c[3] * x + c[4] * y))
    phi = bump * np.cos(c[5] + 2 * x - y)
    if positive:
        u = np.abs(u) + bump
    return Field(g, np.where(g.interior, u, 0)), Field(g, np.where(g.interior, phi, 0))


# frozen regression values at resolution 128
def test_energy_of_sine_mode(unit_interval):
    E = energy(sine(unit_interval), CONST, ZERO, EXACT)
    assert abs(E / (math.pi ** 2 / 4) - 1) <= 0.01
    assert E == pytest.approx(2.467277240695029, rel=1e-12)


def test_energy_with_quadratic_diffusivity(unit_interval):
    E = energy(sine(unit_interval), QUAD, ZERO, EXACT)
    assert abs(E / (5 * math.pi ** 2 / 16) - 1) <= 0.01
    assert E == pytest.approx(3.084003663646764, rel=1e-12)


@pytest.mark.parametrize("model, p", [("zero", 2), ("power:3", 3), ("constant:2", 1.5)])
def test_energy_of_zero(disk64, model, p):
    reg = RegularizationParams.default_for(disk64)
    assert energy(disk64.zeros(), QUAD, nonlinearity(model, p=p), reg) == 0


def test_directional_derivative_examples(unit_interval, disk64):
    u = sine(unit_interval)
    d = energy_directional_derivative(u, u, CONST, ZERO, EXACT)
    assert abs(d / (math.pi ** 2 / 2) - 1) <= 0.01
    assert d == pytest.approx(4.934554481390057, rel=1e-12)
    nm = nonlinearity("power:2", p=1.5)
    _, phi = random_pair(disk64, 3)
    reg = RegularizationParams.default_for(disk64)
    assert energy_directional_derivative(disk64.zeros(), phi, QUAD, nm, reg) == 0


def test_residual_of_sine_at_midpoint(unit_interval):
    r = residual(sine(unit_interval), CONST, ZERO, EXACT)
    assert abs(r.values[64] / math.pi ** 2 - 1) <= 0.01
    assert r.values[64] == pytest.approx(9.869108962779137, rel=1e-12)


def test_residual_is_five_point_laplacian():
    g = build_grid(Domain.rectangle(-1, 1, -1, 1), 16)
    r = np.random.default_rng(0)
    u = Field(g, np.where(g.interior, r.random(g.shape), 0))
    v = u.values
    lap = np.zeros_like(v)
    lap[1:-1, 1:-1] = (4 * v[1:-1, 1:-1] - v[2:, 1:-1] - v[:-2, 1:-1]
                       - v[1:-1, 2:] - v[1:-1, :-2]) / g.h ** 2
    res = residual(u, CONST, nonlinearity("zero", p=2), EXACT).values
    np.testing.assert_allclose(res[g.interior], lap[g.interior], rtol=1e-12, atol=1e-9)


def test_zero_is_stationary_iff_f0_vanishes(disk64):
    reg = RegularizationParams.default_for(disk64)
    for model in ("zero", "power:3", "power:2"):
        assert not residual(disk64.zeros(), QUAD, nonlinearity(model, p=1.5), reg).values.any()
    r = residual(disk64.zeros(), CONST, nonlinearity("constant:1", p=1.5), reg)
    assert np.all(r.values[disk64.interior] == -1)


def _torsion_residuals(p=3.0):
    out = []
    for N in (32, 64, 128):
        g = build_grid(Domain.disk(1), N)
        z = exact_p_torsion(g, p)
        r = residual(z, CONST, nonlinearity("constant:1", p=p), RegularizationParams.default_for(g))
        a = np.abs(r.values)
        annulus = g.interior & (g.radius > 0.1) & (g.radius < 0.8)
        centre = a[g.radius < 0.5 * g.h].max()
        out.append((a[annulus].max(), centre))
    return out


def test_torsion_residual_first_order_away_from_centre():
    annulus = [a for a, _ in _torsion_residuals()]
    for coarse, fine in zip(annulus, annulus[1:]):
        assert fine <= coarse / 1.8


def test_torsion_residual_at_centre_is_scale_invariant():
    # u ~ r^(3/2) at the origin for p = 3: the local truncation error does not shrink with h
    centre = [c for _, c in _torsion_residuals()]
    np.testing.assert_allclose(centre, centre[0], rtol=1e-2)
    assert centre[0] == pytest.approx(0.0758, rel=1e-2)


@pytest.mark.parametrize("seed", range(20))
def test_directional_derivative_matches_finite_differences(seed):
    g = build_grid(Domain.disk(1), 24)
    p = [1.5, 2.0, 3.0, 2.5][seed % 4]
    cm = [CONST, QUAD][seed % 2]
    nm = nonlinearity(["power:3", "constant:1", "zero", "power:2"][seed % 4], p=p)
    reg = RegularizationParams(1e-3)
    u, phi = random_pair(g, seed, positive=True)
    t = 1e-5
    fd = (energy(u + t * phi, cm, nm, reg) - energy(u - t * phi, cm, nm, reg)) / (2 * t)
    d = energy_directional_derivative(u, phi, cm, nm, reg)
    assert abs(d - fd) <= 1e-4 * (1 + abs(d))


@given(st.integers(0, 2 ** 31), st.floats(1.2, 4.0))
def test_residual_energy_duality(seed, p):
    g = build_grid(Domain.disk(1), 20)
    u, phi = random_pair(g, seed, positive=True)
    nm = nonlinearity("power:2", p=p)
    reg = RegularizationParams(1e-4)
    lhs = integrate(residual(u, QUAD, nm, reg).values * phi.values, g)
    rhs = energy_directional_derivative(u, phi, QUAD, nm, reg)
    assert abs(lhs - rhs) <= 1e-10 * max(abs(rhs), 1e-300) + 1e-14


def test_residual_independent_of_eps_at_p2(disk64):
    u, _ = random_pair(disk64, 7)
    nm = nonlinearity("power:3", p=2)
    a = residual(u, QUAD, nm, RegularizationParams(0.0)).values
    b = residual(u, QUAD, nm, RegularizationParams(0.3)).values
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_residual_continuous_in_eps(disk64):
    u, _ = random_pair(disk64, 9, positive=True)
    nm = nonlinearity("power:2", p=1.5)
    base = residual(u, CONST, nm, RegularizationParams(1e-4)).values
    gaps = [np.abs(residual(u, CONST, nm, RegularizationParams(1e-4 + d)).values - base).max()
            for d in (1e-3, 1e-5, 1e-7)]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-4


def test_eps_zero_only_for_p2(disk64):
    with pytest.raises(ValueError):
        energy(disk64.zeros(), CONST, nonlinearity("zero", p=3), RegularizationParams(0.0))
    with pytest.raises(ValueError):
        RegularizationParams(-1.0)
    assert RegularizationParams.default_for(disk64).eps == pytest.approx(64e-6)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_hessian_matches_gradient_differences(p):
    g = build_grid(Domain.disk(1), 16)
    u, phi = random_pair(g, 11, positive=True)
    nm = nonlinearity("power:3", p=p)
    reg = RegularizationParams(1e-2)
    H = hessian(u, QUAD, nm, reg)
    t = 1e-6
    fd = (energy_gradient(u + t * phi, QUAD, nm, reg) - energy_gradient(u - t * phi, QUAD, nm, reg)) / (2 * t)
    hv = H @ phi.interior_values
    assert np.abs(hv - fd).max() <= 1e-5 * (1 + np.abs(hv).max())
    np.testing.assert_allclose((H - H.T).toarray(), 0, atol=1e-9 * abs(H).max())
