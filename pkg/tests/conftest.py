import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def band_limited(rng, grid, mmax, positive=False):
    """Random real field made of modes with ``|m_i| <= mmax``."""
    coeffs = np.zeros(grid.shape, dtype=complex)
    idx = [np.r_[0:mmax + 1, grid.N - mmax:grid.N]] * grid.d
    sub = np.ix_(*idx)
    coeffs[sub] = rng.normal(size=coeffs[sub].shape) + 1j * rng.normal(size=coeffs[sub].shape)
    field = np.fft.ifftn(coeffs).real
    field /= np.abs(field).max()
    if positive:
        field = 1.5 + field
    return field


def random_state(rng, grid, hbar, rank, mmax=None):
    """Rank-``rank`` state with band-limited orthonormal orbitals and random weights."""
    from semikin.hartree import MixedState, orthonormalize

    mmax = grid.N // 4 if mmax is None else mmax
    coeffs = np.zeros((rank,) + grid.shape, dtype=complex)
    idx = (slice(None),) + tuple(np.r_[0:mmax + 1, grid.N - mmax:grid.N] for _ in range(grid.d))
    sub = np.ix_(np.arange(rank), *idx[1:])
    coeffs[sub] = rng.normal(size=coeffs[sub].shape) + 1j * rng.normal(size=coeffs[sub].shape)
    orbitals = orthonormalize(np.fft.ifftn(coeffs, axes=tuple(range(1, grid.d + 1))), grid)
    w = rng.random(rank) + 0.1
    return MixedState(hbar, grid, w / w.sum(), orbitals)


def dense_weighted_schatten(state, axis, n, p):
    """Rescaled ``L^p`` Schatten norm of ``p_axis^n rho`` from a dense matrix SVD."""
    g = state.grid
    N, d = g.N, g.d
    psi = state.orbitals.reshape(state.rank, -1)
    R = (psi.T * state.weights) @ psi.conj() * g.cell
    # p_axis^n as a dense matrix through the unitary DFT
    pk = (2 * np.pi * state.hbar * g.mode_mesh[axis] / g.L).reshape(-1) ** n
    eye = np.eye(N**d).reshape((N**d,) + g.shape)
    F = np.fft.fftn(eye, axes=tuple(range(1, d + 1)), norm="ortho").reshape(N**d, N**d).T
    P = F.conj().T @ (pk[:, None] * F)
    sigma = np.linalg.svd(P @ R, compute_uv=False)
    q = 2 * p
    h = 2 * np.pi * state.hbar
    return h ** (-d * (1 - 1 / q)) * np.sum(sigma**q) ** (1 / q)


# --- acceptance verdicts ---------------------------------------------------------

VERDICTS: dict = {}


def record(criterion: str, check: str, ok: bool, detail: str = "") -> bool:
    """Register one sub-check of an acceptance criterion for the end-of-run summary."""
    VERDICTS.setdefault(criterion, []).append((check, bool(ok), detail))
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(VERDICTS):
        checks = VERDICTS[crit]
        ok = all(c[1] for c in checks)
        tr.write_line(f"{crit} {'PASS' if ok else 'FAIL'}: " + "; ".join(
            f"{name} {'ok' if good else 'FAILED'} ({detail})" for name, good, detail in checks))
