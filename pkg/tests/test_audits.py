import json
import math

import numpy as np
import pytest
from scipy.optimize import linprog

from semikin import audits
from semikin import hartree as qh
from semikin.grid import PositionGrid
from semikin.phasespace import CoherentFamily, coherent_state
from semikin.transport import DiscreteMeasure, marginal_measure, w2

from conftest import random_state


def test_exponents_header():
    ex = audits.interpolation_exponents(1, math.inf, 2)
    assert ex["p_conj"] == pytest.approx(1.5) and ex["theta"] == pytest.approx(2 / 3)
    rep = audits.audit_quantum_interpolation(trials=2, seed=0)
    assert rep.header["p_conj"] == pytest.approx(1.5) and rep.header["theta"] == pytest.approx(2 / 3)


def test_weighted_exponents():
    ex = audits.interpolation_exponents(1, math.inf, 4, 2)
    # alpha' = (n/k)' p' = 2 * 1.25 and theta_k = (1 - k/n) theta
    assert ex["alpha_conj"] == pytest.approx(2.5)
    assert ex["theta_k"] == pytest.approx(0.5 * ex["theta"])
    assert audits.interpolation_exponents(1, math.inf, 4, 4)["theta_k"] == 0.0


def test_coherent_family_ratio_is_hbar_independent():
    ratios = []
    for k in range(3, 8):
        hbar = 2.0**-k
        L = 32 * math.sqrt(2 * math.pi * hbar)
        s = coherent_state(CoherentFamily(hbar, PositionGrid(1, L, 256)), L / 2, 0.0)
        ratios.append(audits.interpolation_ratio(s, 2, math.inf)[2])
    assert max(ratios) / min(ratios) - 1 <= 0.05


def test_plane_wave_closed_form():
    L, hbar, m = 3.0, 0.05, 2
    s = qh.plane_wave_state(PositionGrid(1, L, 64), hbar, [[m]])
    h = 2 * math.pi * hbar
    p, theta = 3.0, 2 / 3
    lhs = L ** (1 / p - 1)
    rhs = (h * m / L) ** (2 * (1 - theta)) * (1 / h) ** theta
    got = audits.interpolation_ratio(s, 2, math.inf)
    assert got[0] == pytest.approx(lhs, rel=1e-12) and got[1] == pytest.approx(rhs, rel=1e-12)
    # hand quadrature of the uniform density
    rho = np.full(64, 1 / L)
    assert got[0] == pytest.approx((np.sum(rho**3) * L / 64) ** (1 / 3), rel=1e-12)


def test_equality_endpoint_and_reduction():
    rep = audits.audit_weighted_interpolation(trials=12, seed=3, params={"n": 4, "k": 2})
    assert rep.extra["equality_max_error"] <= 1e-9
    a = audits.audit_weighted_interpolation(trials=12, seed=3, params={"n": 2, "k": 0})
    b = audits.audit_quantum_interpolation(trials=12, seed=3, params={"n": 2})
    assert [r["hash"] for r in a.records] == [r["hash"] for r in b.records]
    for ra, rb in zip(a.records, b.records):
        assert abs(ra["ratio"] - rb["ratio"]) <= 1e-12


def test_rho_k_matches_dense_operator(rng):
    g = PositionGrid(1, 2.0, 32)
    for trial in range(3):
        s = random_state(rng, g, 0.05, 3)
        psi = s.orbitals.reshape(3, -1)
        R = (psi.T * s.weights) @ psi.conj() * g.cell
        F = np.fft.fft(np.eye(32), norm="ortho")
        p = 2 * np.pi * s.hbar * g.modes / g.L
        for k in (2, 4):
            P = F.conj().T @ np.diag(p ** (k // 2)) @ F
            dense = np.real(np.diag(P @ R @ P.conj().T)) / g.cell
            assert np.abs(qh.momentum_weighted_density(s, k) - dense).max() <= 1e-8 * max(1.0, dense.max())


def test_dilation_invariance():
    for a, b in audits.dilation_pairs(pairs=10, seed=1):
        assert abs(a - b) <= 1e-6 * a


def test_bucket_uniformity_small():
    rep = audits.audit_quantum_interpolation(trials=30, seed=5)
    assert rep.extra["bucket_uniform_3x"]
    assert set(rep.bucket_max()) == set(audits.AUDIT_HBARS)


def test_h1_w2_trivial_and_translation():
    rep = audits.audit_h1_w2(trials=16, seed=2)
    assert rep.violations == 0
    same = [r for r in rep.records if r["kind"] == 3]
    assert all(r["lhs"] == 0 and r["rhs"] == 0 for r in same)
    # a rolled density is a translation: W2 equals the shift
    g = PositionGrid(1, 1.0, 64)
    r0 = audits.random_smooth_density(np.random.default_rng(0), g)
    d0, d1 = qh.SpatialDensity(g, r0), qh.SpatialDensity(g, np.roll(r0, 5))
    assert w2(d0, d1).value <= 5 * g.dx + 1e-9


def _lp(a, b):
    n, m = a.size, b.size
    C = np.zeros((n, m))
    for i, per in enumerate(a.period):
        diff = np.abs(a.points[:, i, None] - b.points[None, :, i])
        if math.isfinite(per):
            diff = np.minimum(diff % per, per - diff % per)
        C += diff**2
    A = np.vstack([np.kron(np.eye(n), np.ones(m)), np.kron(np.ones(n), np.eye(m))])
    return math.sqrt(max(linprog(C.ravel(), A_eq=A, b_eq=np.r_[a.weights, b.weights], method="highs").fun, 0))


def test_projection_cases():
    rep = audits.audit_projection_w2(trials=16, seed=4, max_points=40)
    assert rep.violations == 0
    for r in rep.records:
        if r["kind"] == 2:
            assert r["lhs"] == 0 and r["rhs"] == 0
        if r["kind"] == 1:
            assert r["lhs"] <= 1e-12 < r["rhs"]
    rng = np.random.default_rng(9)
    for _ in range(5):
        f0 = audits.random_sparse_measure(rng, 20, 4.0)
        f1 = audits.random_sparse_measure(rng, 20, 4.0)
        assert abs(w2(f0, f1).value - _lp(f0, f1)) <= 1e-9
        m0, m1 = marginal_measure(f0, 1), marginal_measure(f1, 1)
        assert abs(w2(m0, m1).value - _lp(m0, m1)) <= 1e-9


def test_reports_are_deterministic(tmp_path):
    a = audits.audit_quantum_interpolation(trials=6, seed=42).to_dict()
    b = audits.audit_quantum_interpolation(trials=6, seed=42).to_dict()
    assert a == b
    rep = audits.audit_h1_w2(trials=4, seed=1)
    path = tmp_path / "h1.json"
    rep.to_json(path)
    data = json.loads(path.read_text())
    assert data["name"] == "h1_w2" and data["trials"] == 4 and data["violations"] == 0


def test_moment_propagation_free_flow():
    sc = audits.MomentScenario(name="free", family="zero", T=0.2, stride=0.1, L=12.0, Nx=48, Nxi=56,
                               p_needed=4.0)
    rep = audits.audit_moment_propagation(sc, hbars=(2.0**-3, 2.0**-4), workers=1)
    for r in rep.records:
        assert r["finite"] and abs(r["ratio"] - 1) <= 1e-12
    assert rep.extra["max_growth"] <= 1 + 1e-12
