import math

import numpy as np
import pytest

from semikin import hartree as qh
from semikin.audits import random_symbol, toeplitz_trial
from semikin.grid import GridError, PhaseGrid, PositionGrid
from semikin.phasespace import (CoherentFamily, coherent_husimi, coherent_moment2, coherent_state,
                                coherent_wigner, husimi, husimi_projection, isotropic_husimi,
                                isotropic_wigner, toeplitz_quantize, wigner)
from semikin.vlasov import KineticDensity, classical_density, classical_lebesgue_norm, point_mass


def _full_box(state, Nx=None, Nxi=None):
    g = state.grid
    p_max = math.pi * state.hbar * g.N / g.L
    return PhaseGrid(PositionGrid(g.d, g.L, Nx or g.N), p_max, Nxi or 2 * g.N)


def _packets(hbar, g, centers, weights):
    fam = CoherentFamily(hbar, g)
    psi = np.array([fam.orbital(x, xi) for x, xi in centers])
    return qh.MixedState(hbar, g, weights, qh.orthonormalize(psi, g))


def test_profile_normalized():
    g = PositionGrid(1, 8.0, 512)
    fam = CoherentFamily(2.0**-5, g)
    psi = fam.orbital([4.0], [0.0])
    assert abs(np.sum(np.abs(psi) ** 2) * g.dx - 1) <= 1e-12
    assert np.abs(psi.imag).max() == 0 and np.allclose(psi, psi[::-1][np.r_[-1, 0:g.N - 1]])


@pytest.mark.parametrize("d,N", [(1, 128), (2, 64)])
def test_coherent_wigner_closed_form(d, N):
    hbar = 2.0**-4 if d == 1 else 2.0**-5
    g = PositionGrid(d, 8.0 if d == 1 else 4.0, N)
    fam = CoherentFamily(hbar, g)
    s = coherent_state(fam, [g.L / 2 + 0.2] * d, [0.4] * d)
    pg = _full_box(s, Nx=N if d == 1 else 16, Nxi=N)
    f = wigner(s, pg)
    exact = coherent_wigner(fam, pg, s.meta["x0"], s.meta["xi0"])
    assert np.abs(f.values - exact).max() <= 1e-8


def test_wigner_linear():
    hbar = 2.0**-4
    g = PositionGrid(1, 8.0, 128)
    s = _packets(hbar, g, [([3.0], [0.5]), ([5.0], [-0.5])], [0.3, 0.7])
    pg = _full_box(s)
    parts = [wigner(qh.MixedState(hbar, g, [1.0], s.orbitals[j]), pg).values for j in range(2)]
    assert np.abs(wigner(s, pg).values - (0.3 * parts[0] + 0.7 * parts[1])).max() <= 1e-12


def test_wigner_identities():
    hbar = 2.0**-4
    g = PositionGrid(1, 8.0, 128)
    s = _packets(hbar, g, [([3.0], [0.5]), ([4.6], [-0.8])], [0.55, 0.45])
    pg = _full_box(s)
    f = wigner(s, pg)
    assert abs(f.values.sum() * pg.cell - 1) <= 1e-9
    assert abs(math.sqrt(np.sum(f.values**2) * pg.cell) - qh.rescaled_schatten_norm(s, 2)) <= 1e-8
    assert np.abs(classical_density(f).values - qh.spatial_density(s).values).max() <= 1e-8


def test_wigner_on_coarser_position_grid():
    hbar = 2.0**-4
    g = PositionGrid(1, 8.0, 256)
    s = _packets(hbar, g, [([3.5], [0.3])], [1.0])
    fine = wigner(s, _full_box(s, Nx=256, Nxi=256))
    coarse = wigner(s, _full_box(s, Nx=64, Nxi=256))
    assert np.abs(coarse.values - fine.values[::4]).max() <= 1e-12


def test_wigner_resolution_errors():
    hbar = 2.0**-4
    g = PositionGrid(1, 8.0, 64)
    s = _packets(hbar, g, [([4.0], [0.0])], [1.0])
    p_max = math.pi * hbar * g.N / g.L
    with pytest.raises(GridError, match="refine the state grid"):
        wigner(s, PhaseGrid(g, 2 * p_max, 64))
    with pytest.raises(GridError, match="Nxi >="):
        wigner(s, PhaseGrid(g, p_max, 8))
    with pytest.raises(GridError):
        wigner(s, PhaseGrid(PositionGrid(1, 8.0, 48), p_max, 64))


def test_husimi_of_coherent_state():
    hbar = 2.0**-4
    g = PositionGrid(1, 8.0, 128)
    fam = CoherentFamily(hbar, g)
    s = coherent_state(fam, 4.0, 0.5)
    pg = _full_box(s)
    fh = husimi(wigner(s, pg), hbar)
    exact = coherent_husimi(fam, pg, s.meta["x0"], s.meta["xi0"])
    assert np.abs(fh.values - exact).max() <= 1e-8 * exact.max()
    assert abs(fh.mass - 1) <= 1e-9


def test_isotropic_gaussian_smoothing():
    hbar = 2.0**-4
    pg = PhaseGrid(PositionGrid(1, 8.0, 128), 3.0, 192)
    f = KineticDensity(pg, isotropic_wigner(hbar, pg, 4.0, 0.2), signed=True)
    fh = husimi(f, hbar)
    assert np.abs(fh.values - isotropic_husimi(hbar, pg, 4.0, 0.2)).max() <= 1e-8


def test_husimi_zero_and_mass(rng):
    pg = PhaseGrid(PositionGrid(1, 8.0, 64), 3.0, 96)
    z = husimi(KineticDensity(pg, np.zeros(pg.shape), signed=True), 0.05)
    assert not np.any(z.values)
    g = PositionGrid(1, 8.0, 128)
    for trial in range(3):
        centers = [([rng.uniform(2.5, 5.5)], [rng.uniform(-1, 1)]) for _ in range(3)]
        w = rng.random(3) + 0.1
        s = _packets(2.0**-4, g, centers, w / w.sum())
        f = wigner(s, _full_box(s))
        assert abs(husimi(f, s.hbar).mass - f.mass) <= 1e-9


def test_husimi_rejects_coarse_velocity_grid():
    pg = PhaseGrid(PositionGrid(1, 8.0, 64), 3.0, 16)
    with pytest.raises(GridError):
        husimi(KineticDensity(pg, np.zeros(pg.shape)), 2.0**-6)


def test_husimi_projection_agrees():
    hbar = 2.0**-4
    g = PositionGrid(1, 8.0, 128)
    s = _packets(hbar, g, [([3.0], [0.5]), ([5.0], [-0.5])], [0.4, 0.6])
    pg = _full_box(s, Nx=64)
    a = husimi(wigner(s, pg), hbar)
    b = husimi_projection(s, pg)
    assert np.abs(a.values - b.values).max() <= 1e-8 * b.values.max()


def test_coherent_state_at_center():
    hbar = 2.0**-5
    g = PositionGrid(2, 4.0, 64)
    fam = CoherentFamily(hbar, g)
    s = coherent_state(fam, [2.0, 2.0], [0.0, 0.0])
    assert np.abs(s.orbitals.imag).max() <= 1e-15
    assert abs(np.sum(np.abs(s.orbitals) ** 2) * g.cell - 1) <= 1e-12
    # the profile e^{-pi u^2/2} carries momentum variance hbar/4 per axis
    assert qh.velocity_moment(s, 2) == pytest.approx(2 * hbar / 4, rel=1e-10)
    assert coherent_moment2(fam, [0.0, 0.0]) == pytest.approx(2 * hbar / 4, rel=1e-14)


def test_coherent_state_snaps_and_fits():
    hbar = 2.0**-5
    g = PositionGrid(1, 4.0, 64)
    s = coherent_state(CoherentFamily(hbar, g), 2.0, 0.3333)
    step = 2 * np.pi * hbar / g.L
    assert abs(s.meta["xi0"][0] / step - round(s.meta["xi0"][0] / step)) <= 1e-12
    with pytest.raises(qh.StateError):
        coherent_state(CoherentFamily(0.5, g), 2.0, 0.0)


def test_toeplitz_point_mass_is_coherent():
    hbar = 2.0**-4
    pg = PhaseGrid(PositionGrid(1, 8.0, 64), 3.0, 64)
    fam = CoherentFamily(hbar, PositionGrid(1, 8.0, 128))
    mu = point_mass(pg, 4.0, 0.5)
    s = toeplitz_quantize(fam, mu)
    ref = coherent_state(fam, 4.0, pg.xi[np.argmax(mu.values.sum(axis=0))])
    assert s.rank == 1
    assert abs(abs(np.vdot(s.orbitals[0], ref.orbitals[0]) * fam.grid.dx) - 1) <= 1e-12


def test_toeplitz_validation(rng):
    pg = PhaseGrid(PositionGrid(1, 8.0, 32), 3.0, 32)
    fam = CoherentFamily(2.0**-4, PositionGrid(1, 8.0, 64))
    mu = random_symbol(rng, pg)
    with pytest.raises(qh.StateError):
        toeplitz_quantize(fam, KineticDensity(pg, -mu.values))
    with pytest.raises(qh.StateError):
        toeplitz_quantize(fam, KineticDensity(pg, 2 * mu.values))
    with pytest.raises(GridError):
        toeplitz_quantize(CoherentFamily(2.0**-4, PositionGrid(1, 8.0, 48)), mu)


@pytest.mark.parametrize("hbar", [2.0**-3, 2.0**-5])
def test_toeplitz_norm_chain(rng, hbar):
    """``||W(OP mu)||_r <= ||mu||_r`` and ``||OP mu||_r <= ||mu||_r`` for r >= 2."""
    for trial in range(3):
        s, mu = toeplitz_trial(rng, hbar)
        fw = wigner(s, mu.grid, check_resolution=False)
        for r in (2.0, 4.0, math.inf):
            m = classical_lebesgue_norm(mu, r)
            assert classical_lebesgue_norm(fw, r) <= m * (1 + 1e-6)
            assert qh.rescaled_schatten_norm(s, r) <= m * (1 + 1e-6)


def test_toeplitz_weak_convergence():
    """``int int (W(OP mu) - mu) phi`` decays at least like sqrt(hbar) for smooth test functions."""
    rng = np.random.default_rng(11)
    # the symbol grid must resolve sqrt(hbar) for the quadrature of W(OP mu) to be meaningful
    pg = PhaseGrid(PositionGrid(1, 8.0, 64), 3.0, 128)
    mu = random_symbol(rng, pg, blobs=2)
    X, V = pg.mesh
    tests = [np.cos(2 * np.pi * X / 8.0) * np.exp(-V**2),
             np.exp(-((X - 4) ** 2)) * V,
             np.sin(4 * np.pi * X / 8.0) * np.exp(-(V - 0.3) ** 2 / 0.5)]
    errs = []
    hbars = [2.0**-k for k in range(4, 8)]
    for hbar in hbars:
        N = 64 * max(1, 2 ** math.ceil(math.log2(8.0 * 3.0 / (math.pi * hbar) / 64)))
        s = toeplitz_quantize(CoherentFamily(hbar, PositionGrid(1, 8.0, N)), mu, j_max=2048, rel_cut=1e-9)
        fw = wigner(s, pg, check_resolution=False)
        errs.append(max(abs(np.sum((fw.values - mu.values) * t) * pg.cell) for t in tests))
    C = errs[0] / math.sqrt(hbars[0])
    for hb, e in zip(hbars, errs):
        assert e <= 1.01 * C * math.sqrt(hb)
