import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from semikin.grid import PhaseGrid, PositionGrid
from semikin.hartree import SolverError
from semikin.kernels import force_field, make_kernel
from semikin.transport import w2
from semikin.vlasov import (KineticDensity, classical_density, classical_lebesgue_norm, classical_moment,
                            from_function, kinetic_interpolation_ratio, point_mass, vevolve, vstep)


def gaussian(x0, v0, sx, sv):
    return lambda x, v: np.exp(-(x - x0) ** 2 / (2 * sx**2) - (v - v0) ** 2 / (2 * sv**2))


def test_x_uniform_free_invariant():
    pg = PhaseGrid(PositionGrid(1, 3.0, 32), 7.0, 112)
    f0 = from_function(lambda x, v: np.exp(-v**2) + 0 * x, pg)
    fT, _ = vevolve(f0, make_kernel("zero", grid=pg.pos), 0.5, 0.05)
    assert np.abs(fT.values - f0.values).max() <= 1e-13 * f0.values.max()


def test_free_characteristics():
    pg = PhaseGrid(PositionGrid(1, 8.0, 512), 4.0, 64)
    g = gaussian(4.0, 0.0, 0.5, 0.5)
    f0 = from_function(g, pg, normalize=False)
    fT, _ = vevolve(f0, make_kernel("zero", grid=pg.pos), 0.5, 1e-2)
    X, V = pg.mesh
    assert np.abs(fT.values - g(X - 0.5 * V, V)).max() <= 1e-6


def test_one_step_matches_rk4_particles():
    L, dt, n = 4.0, 0.1, 10_000
    pg = PhaseGrid(PositionGrid(1, L, 32), 4.0, 32)
    f0 = from_function(gaussian(2.0, 0.3, 0.4, 0.4), pg)
    k = make_kernel("smooth-cosine", sign=-1, grid=pg.pos)
    f1 = vstep(f0, k, dt)

    rng = np.random.default_rng(7)
    x, v = rng.normal(2.0, 0.4, n), rng.normal(0.3, 0.4, n)
    E = force_field(k, classical_density(f0).values)[0]
    c, m = np.fft.fft(E) / E.size, np.fft.fftfreq(E.size, 1 / E.size)

    def rhs(x, v):
        return v, (np.exp(2j * np.pi * np.outer(x, m) / L) @ c).real

    k1 = rhs(x, v)
    k2 = rhs(x + dt / 2 * k1[0], v + dt / 2 * k1[1])
    k3 = rhs(x + dt / 2 * k2[0], v + dt / 2 * k2[1])
    k4 = rhs(x + dt * k3[0], v + dt * k3[1])
    x = x + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    v = v + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    dx = pg.pos.dx
    H, _, _ = np.histogram2d((x + dx / 2) % L - dx / 2, v,
                             bins=[np.r_[pg.pos.nodes - dx / 2, L - dx / 2],
                                   np.r_[pg.xi - pg.dxi / 2, pg.xi[-1] + pg.dxi / 2]])
    particles = KineticDensity(pg, H / n / pg.cell)
    assert w2(f1, particles).value <= 5 * dx


def test_T_zero_identity():
    pg = PhaseGrid(PositionGrid(1, 4.0, 32), 4.0, 32)
    f0 = from_function(gaussian(2.0, 0.0, 0.4, 0.4), pg)
    fT, series = vevolve(f0, make_kernel("smooth-cosine", grid=pg.pos), 0.0, 1e-3)
    assert np.array_equal(fT.values, f0.values) and len(series) == 1


def test_free_flow_moments():
    pg = PhaseGrid(PositionGrid(1, 4.0, 64), 4.0, 64)
    f0 = from_function(gaussian(2.0, 0.2, 0.4, 0.4), pg)
    _, series = vevolve(f0, make_kernel("zero", grid=pg.pos), 0.5, 1e-2, 0.1)
    for n in ("M0", "M2", "M4"):
        assert series.drift(n, relative=False) <= 1e-8


def test_uniform_square():
    pg = PhaseGrid(PositionGrid(1, 4.0, 256), 2.0, 256)
    f = from_function(lambda x, v: ((x >= 0) & (x < 1) & (v >= 0) & (v < 1)).astype(float), pg, normalize=False)
    assert classical_moment(f, 0) == pytest.approx(1.0, abs=1e-14)
    for n in (1, 2, 4):
        # left-endpoint rectangle rule: first-order in the cell size
        assert abs(classical_moment(f, n) - 1 / (n + 1)) <= pg.dxi
    rho = classical_density(f).values
    inside = (pg.pos.nodes >= 0) & (pg.pos.nodes < 1)
    assert np.allclose(rho[inside], 1.0, atol=1e-14) and not np.any(rho[~inside])
    for r in (1, 2, 4, math.inf):
        assert classical_lebesgue_norm(f, r) == pytest.approx(1.0, rel=1e-13)


def test_gaussian_moments():
    sv = 0.5
    pg = PhaseGrid(PositionGrid(1, 4.0, 32), 4.0, 128)
    f = from_function(gaussian(2.0, 0.0, 0.4, sv), pg)
    for n, dfact in [(0, 1), (2, 1), (4, 3), (6, 15)]:
        assert abs(classical_moment(f, n) - dfact * sv**n) <= 1e-8


def test_point_mass():
    pg = PhaseGrid(PositionGrid(1, 4.0, 32), 2.0, 32)
    f = point_mass(pg, 1.0, 0.5)
    assert f.mass == pytest.approx(1.0, abs=1e-14) and np.count_nonzero(f.values) == 1
    with pytest.raises(ValueError):
        point_mass(pg, 1.0, 5.0)


def test_negative_data_rejected():
    pg = PhaseGrid(PositionGrid(1, 4.0, 16), 2.0, 16)
    f = KineticDensity(pg, -np.ones(pg.shape))
    with pytest.raises(SolverError):
        vstep(f, make_kernel("zero", grid=pg.pos), 1e-3)


def test_boundary_mass_guard():
    pg = PhaseGrid(PositionGrid(1, 4.0, 32), 1.0, 16)
    f0 = from_function(gaussian(2.0, 0.0, 0.4, 0.6), pg)
    with pytest.raises(SolverError):
        vevolve(f0, make_kernel("zero", grid=pg.pos), 0.1, 1e-2)


def test_conservation_smooth_scenario():
    pg = PhaseGrid(PositionGrid(1, 4.0, 64), 4.0, 64)
    f0 = from_function(gaussian(2.0, 0.3, 0.4, 0.4), pg)
    fT, series = vevolve(f0, make_kernel("smooth-cosine", sign=-1, grid=pg.pos), 0.5, 1e-2, 0.1)
    assert abs(series.array("M0")[-1] - 1) <= 1e-8
    assert series.array("Lrinf").max() <= series.array("Lrinf")[0] * (1 + 1e-6)
    assert series.drift("energy") <= 1e-5
    assert fT.values.min() >= 0


@given(st.floats(0.5, 2.0), st.floats(0.5, 2.0), st.sampled_from([2, 4]), st.sampled_from([2.0, 4.0, math.inf]))
def test_kinetic_ratio_scale_invariant(sigma, lam, n, r):
    base = PhaseGrid(PositionGrid(1, 16.0, 128), 8.0, 128)
    g = gaussian(8.0, 0.0, 0.6, 0.6)
    # f(x/sigma, xi/lambda) sampled on the correspondingly rescaled grid
    scaled = PhaseGrid(PositionGrid(1, 16.0 * sigma, 128), 8.0 * lam, 128)
    f = from_function(g, base, normalize=False)
    fs = KineticDensity(scaled, f.values.copy())
    assert abs(kinetic_interpolation_ratio(fs, n, r) - kinetic_interpolation_ratio(f, n, r)) <= 1e-8
