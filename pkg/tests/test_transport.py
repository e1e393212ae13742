import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import linprog

from semikin.audits import toeplitz_trial
from semikin.grid import PhaseGrid, PositionGrid
from semikin.hartree import SpatialDensity
from semikin.phasespace import CoherentFamily, coherent_state
from semikin.transport import (DiscreteMeasure, TransportError, marginal_measure, marginal_x, neg_sobolev,
                               to_measure, w2, wh_bracket)
from semikin.vlasov import KineticDensity, from_function, point_mass

from conftest import band_limited


def random_measure(rng, n, dim=1, period=math.inf, uniform=False):
    w = np.full(n, 1.0 / n) if uniform else rng.random(n) + 0.05
    return DiscreteMeasure(rng.uniform(0, 1, (n, dim)), w / w.sum(), [period] * dim)


def lp_oracle(a: DiscreteMeasure, b: DiscreteMeasure) -> float:
    """Independent LP (HiGHS) over all couplings."""
    n, m = a.size, b.size
    C = np.zeros((n, m))
    for i, per in enumerate(a.period):
        diff = a.points[:, i, None] - b.points[None, :, i]
        if math.isfinite(per):
            diff = np.minimum(np.abs(diff) % per, per - np.abs(diff) % per)
        C += diff**2
    A = np.vstack([np.kron(np.eye(n), np.ones(m)), np.kron(np.ones(n), np.eye(m))])
    res = linprog(C.ravel(), A_eq=A, b_eq=np.r_[a.weights, b.weights], bounds=(0, None), method="highs")
    return math.sqrt(max(res.fun, 0.0))


def permutation_oracle(a: DiscreteMeasure, b: DiscreteMeasure) -> float:
    """Uniform equal-size measures: the optimum is attained at a permutation."""
    C = ((a.points[:, None, :] - b.points[None, :, :]) ** 2).sum(-1)
    best = min(C[np.arange(a.size), list(p)].sum() for p in itertools.permutations(range(a.size)))
    return math.sqrt(best / a.size)


def test_identical_is_zero():
    g = PositionGrid(1, 2.0, 64)
    rho = SpatialDensity(g, band_limited(np.random.default_rng(0), g, 4, positive=True))
    assert w2(rho, rho).value <= 1e-10


def test_two_diracs_torus_distance():
    pg = PhaseGrid(PositionGrid(1, 4.0, 32), 2.0, 32)
    a, b = point_mass(pg, 0.5, 0.0), point_mass(pg, 3.75, 1.0)
    # x separation wraps around the torus: 0.75; xi separation 1
    assert w2(a, b).value == pytest.approx(math.sqrt(0.75**2 + 1.0), abs=1e-12)


def test_forced_coupling():
    mu = DiscreteMeasure([[0.0], [1.0]], [0.5, 0.5], [math.inf])
    nu = DiscreteMeasure([[0.5]], [1.0], [math.inf])
    assert w2(mu, nu).value == pytest.approx(0.5, abs=1e-14)


@pytest.mark.parametrize("seed", range(10))
def test_exact_matches_lp_oracle(seed):
    rng = np.random.default_rng(seed)
    a = random_measure(rng, int(rng.integers(2, 13)), dim=2, period=1.0)
    b = random_measure(rng, int(rng.integers(2, 13)), dim=2, period=1.0)
    res = w2(a, b, "exact")
    assert abs(res.value - lp_oracle(a, b)) <= 1e-9
    assert np.abs(res.plan.sum(1) - a.weights).max() <= 1e-9
    assert np.abs(res.plan.sum(0) - b.weights).max() <= 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_exact_matches_permutation_enumeration(seed):
    rng = np.random.default_rng(100 + seed)
    a = random_measure(rng, 7, dim=2, uniform=True)
    b = random_measure(rng, 7, dim=2, uniform=True)
    assert abs(w2(a, b, "exact").value - permutation_oracle(a, b)) <= 1e-9


@given(st.integers(0, 2**31 - 1))
def test_symmetry_and_triangle(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (random_measure(rng, int(rng.integers(2, 20)), dim=2, period=1.0) for _ in range(3))
    ab, ba = w2(a, b).value, w2(b, a).value
    assert abs(ab - ba) <= 1e-9
    assert ab <= w2(a, c).value + w2(c, b).value + 1e-9
    assert ab >= 0


def test_entropic_close_to_exact():
    rng = np.random.default_rng(3)
    g = PositionGrid(2, 1.0, 16)
    f0 = SpatialDensity(g, band_limited(rng, g, 2, positive=True))
    f1 = SpatialDensity(g, band_limited(rng, g, 2, positive=True))
    f1.values *= f0.values.sum() / f1.values.sum()
    ex = w2(f0, f1, "exact")
    en = w2(f0, f1, "entropic")
    diam = math.sqrt(2) * g.L / 2
    assert abs(en.value - ex.value) <= 3 * math.sqrt(en.eps) * diam
    assert np.abs(en.plan.sum(1) - to_measure(f0).weights / to_measure(f0).mass).sum() <= 1e-6


def test_translation():
    g = PositionGrid(1, 8.0, 128)
    x = g.nodes
    base = np.exp(-((x - 3.0) ** 2) / 0.3)
    shift = 11
    a, b = SpatialDensity(g, base), SpatialDensity(g, np.roll(base, shift))
    assert w2(a, b).value == pytest.approx(shift * g.dx, abs=1e-9)


def test_mass_mismatch_and_negative():
    g = PositionGrid(1, 1.0, 16)
    with pytest.raises(TransportError):
        w2(SpatialDensity(g, np.ones(16)), SpatialDensity(g, 2 * np.ones(16)))
    with pytest.raises(TransportError):
        w2(SpatialDensity(g, -np.ones(16)), SpatialDensity(g, np.ones(16)))


def test_neg_sobolev_oracles(rng):
    g = PositionGrid(1, 3.0, 64)
    eps = 0.01
    x = g.nodes
    rho = band_limited(rng, g, 3, positive=True)
    assert neg_sobolev(SpatialDensity(g, rho), rho) == 0.0
    pert = rho + eps * np.cos(2 * np.pi * x / g.L)
    expect = eps * g.L**1.5 / (2 * math.sqrt(2) * np.pi)
    assert abs(neg_sobolev(SpatialDensity(g, pert), SpatialDensity(g, rho)) - expect) <= 1e-12

    for d, N in [(1, 64), (2, 32)]:
        g = PositionGrid(d, 2.0, N)
        r0, r1 = band_limited(rng, g, 5, positive=True), band_limited(rng, g, 5, positive=True)
        r1 *= r0.sum() / r1.sum()
        diff = np.fft.fftn(r0 - r1)
        k2 = g.k2.copy()
        k2.flat[0] = 1.0
        u = np.fft.ifftn(-diff / k2).real          # Delta^{-1} (r0 - r1)
        grad = [np.fft.ifftn(1j * k * np.fft.fftn(u)).real for k in g.wavenumbers]
        phys = math.sqrt(sum(np.sum(gi**2) for gi in grad) * g.cell)
        assert abs(neg_sobolev(SpatialDensity(g, r0), SpatialDensity(g, r1)) - phys) <= 1e-10


def test_neg_sobolev_requires_equal_mass():
    g = PositionGrid(1, 1.0, 16)
    with pytest.raises(TransportError):
        neg_sobolev(SpatialDensity(g, np.ones(16)), SpatialDensity(g, 2 * np.ones(16)))


def test_marginals():
    pg = PhaseGrid(PositionGrid(1, 4.0, 16), 2.0, 16)
    f = from_function(lambda x, v: np.exp(-((x - 2) ** 2) - v**2), pg)
    g = from_function(lambda x, v: np.exp(-((x - 2) ** 2) - (v - 0.5) ** 2 / 0.3), pg)
    assert w2(marginal_x(f), marginal_x(g)).value <= 1e-6 < w2(f, g).value
    m = marginal_measure(to_measure(f), 1)
    assert m.points.shape[1] == 1 and m.mass == pytest.approx(1.0)


def test_bracket_for_toeplitz_symbol():
    from semikin.harness import RunConfig, bracket

    rng = np.random.default_rng(5)
    hbar = 2.0**-4
    state, mu = toeplitz_trial(rng, hbar, Nx=64, Nxi=64, Xi=3.0)
    cfg = RunConfig.from_dict({"grid": {"L": 8.0, "N": 64, "Nxi": 64, "Xi": 3.0},
                               "transport": {"bin": [64, 64]}})
    _, br, _ = bracket(mu, state, cfg, symbol=mu)
    floor = math.sqrt(hbar)
    assert br.lower >= floor
    assert br.upper == pytest.approx(math.sqrt(2 * hbar), abs=1e-12)
    assert br.lower <= br.upper and br.width <= 3 * floor


def test_oversized_support_refused_before_allocation():
    rng = np.random.default_rng(0)
    a = random_measure(rng, 7000, dim=2)
    b = random_measure(rng, 7000, dim=2)
    with pytest.raises(TransportError, match="limited to"):
        w2(a, b)


def test_bracket_translated_state():
    hbar = 2.0**-6
    L = 8.0
    pg = PhaseGrid(PositionGrid(1, L, 256), 2.0, 128)
    fam = CoherentFamily(hbar, PositionGrid(1, L, 512))
    f = point_mass(pg, 2.0, 0.0)
    far = coherent_state(fam, 2.0 + L / 4, 0.0)
    br = wh_bracket(f, far)
    assert br.lower >= 10 * math.sqrt(hbar)
    assert abs(br.lower - L / 4) <= 3 * math.sqrt(hbar)
    assert not br.has_upper
