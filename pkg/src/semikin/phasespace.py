"""Wigner and Husimi transforms, coherent states and Töplitz quantization.

Conventions (``h = 2 pi hbar``):

* Wigner: ``f(x, xi) = h^{-d} int r(x + y/2, x - y/2) e^{-2 i pi y.xi / h} dy``.
* Husimi: ``f * G`` with ``G(z) = (pi hbar)^{-d} e^{-|z|^2 / hbar}`` on ``R^{2d}``.
* Coherent state: ``phi_{x,xi}(y) = h^{-d/4} phi((y - x)/sqrt(h)) e^{2 i pi y.xi / h}``.

The default profile is ``phi_a(u) = (2a)^{d/4} e^{-pi a |u|^2}`` with ``a = 1/2``.
Its Wigner transform is the anisotropic Gaussian
``(2/h)^d exp(-(2 pi a/h)|x - x0|^2 - (2 pi/(a h))|xi - xi0|^2)``: position
variance ``hbar/(2a)``, momentum variance ``a hbar/2`` per axis. The symmetric
choice ``a = 1`` has Wigner transform exactly ``G``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.ndimage import convolve1d

from .grid import GridError, PhaseGrid, PositionGrid, spectral_upsample2x
from .hartree import MixedState, StateError
from .vlasov import KineticDensity

BAND_TOL = 1e-15       # lags y with |r| below this (relative) are dropped
RESOLVE_TOL = 1e-10    # lags that must be resolved by the xi spacing
HUSIMI_RADIUS = 6.0    # truncation radius in units of sqrt(hbar)
CLIP_FLOOR = -10 * RESOLVE_TOL  # aliasing from lags left unresolved by design stays below this


class TransformError(RuntimeError):
    pass


class ToeplitzRankError(RuntimeError):
    def __init__(self, rank, j_max, tail):
        super().__init__(f"Töplitz state has rank {rank} > J_max = {j_max} "
                         f"(spectral mass beyond J_max: {tail:.3e})")
        self.rank, self.j_max, self.tail = rank, j_max, tail


def gaussian_profile(a: float = 0.5) -> Callable:
    def phi(*u):
        d = len(u)
        return (2 * a) ** (d / 4) * np.exp(-np.pi * a * sum(ui**2 for ui in u))
    phi.a = a
    return phi


@dataclass(frozen=True, eq=False)
class CoherentFamily:
    hbar: float
    grid: PositionGrid
    a: float = 0.5
    profile: Callable | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.hbar > 0:
            raise ValueError("hbar must be positive")
        if self.profile is None:
            object.__setattr__(self, "profile", gaussian_profile(self.a))

    @property
    def h(self) -> float:
        return 2 * np.pi * self.hbar

    @property
    def is_gaussian(self) -> bool:
        return getattr(self.profile, "a", None) is not None

    def snap(self, xi0) -> tuple[np.ndarray, float]:
        """Nearest lattice momentum ``h n / L`` and the snap distance."""
        xi0 = np.broadcast_to(np.asarray(xi0, dtype=float), (self.grid.d,))
        step = self.h / self.grid.L
        snapped = np.round(xi0 / step) * step
        return snapped, float(np.linalg.norm(snapped - xi0))

    def envelope(self, x0) -> np.ndarray:
        """``h^{-d/4} phi((y - x0)/sqrt(h))`` at the nearest periodic image."""
        g = self.grid
        x0 = np.broadcast_to(np.asarray(x0, dtype=float), (g.d,))
        u = [g.periodic_delta(m, c) / math.sqrt(self.h) for m, c in zip(g.mesh, x0)]
        return self.h ** (-g.d / 4) * self.profile(*u)

    def tail(self) -> float:
        """Relative profile amplitude at the antipode of the packet center."""
        far = self.grid.L / (2 * math.sqrt(self.h))
        u = [np.array(far)] + [np.array(0.0)] * (self.grid.d - 1)
        return float(abs(self.profile(*u)) / abs(self.profile(*([np.array(0.0)] * self.grid.d))))

    def orbital(self, x0, xi0) -> np.ndarray:
        xi0 = np.broadcast_to(np.asarray(xi0, dtype=float), (self.grid.d,))
        phase = sum(m * p for m, p in zip(self.grid.mesh, xi0))
        psi = self.envelope(x0) * np.exp(2j * np.pi * phase / self.h)
        return psi / math.sqrt(np.sum(np.abs(psi) ** 2) * self.grid.cell)


def coherent_state(family: CoherentFamily, x0, xi0, tail_tol: float = 1e-12) -> MixedState:
    """Rank-one state ``|phi_{x0, xi0}><phi_{x0, xi0}|`` with ``xi0`` snapped to the lattice."""
    tail = family.tail()
    if tail > tail_tol:
        raise StateError(f"coherent state does not fit the box: periodization tail {tail:.2e}")
    xi_s, dist = family.snap(xi0)
    state = MixedState(family.hbar, family.grid, [1.0], family.orbital(x0, xi_s))
    state.meta.update(x0=np.broadcast_to(np.asarray(x0, float), (family.grid.d,)).tolist(),
                      xi0=xi_s.tolist(), snap=dist)
    return state


# --- Wigner ------------------------------------------------------------------

def _refinement(state: MixedState, pg: PhaseGrid) -> int:
    sg, pgp = state.grid, pg.pos
    if sg.d != pgp.d or not math.isclose(sg.L, pgp.L) or sg.N % pgp.N:
        raise GridError("state grid must equal or refine the phase grid's position grid")
    return sg.N // pgp.N


def _zero_extend(u: np.ndarray, d: int) -> np.ndarray:
    # one period of zeros on each side: the torus state is read as a field on R^d
    pad = [(0, 0)] + [(s // 2, s // 2) for s in u.shape[1:]]
    return np.pad(u, pad)


def _lag_indices(centers: np.ndarray, lags: np.ndarray, M: int, d: int, ax: int, sign: int):
    # indices into the zero-extended array (offset M // 2 = N)
    idx = centers[:, None] + sign * lags[None, :] + M // 2
    shape = [1] * (2 * d)
    shape[ax], shape[d + ax] = idx.shape
    return idx.reshape(shape)


def _lag_correlation(u: np.ndarray, weights, centers, lags, d: int) -> np.ndarray:
    """``r[x, k] = sum_j w_j u_j[c + k] conj(u_j[c - k])`` on the doubled grid.

    ``u`` is the zero-extended upsampled orbital array (length ``4N`` per axis).
    ``centers`` is one index array shared by all axes, or a list with one per axis.
    """
    M = u.shape[1] // 2
    per_axis = centers if isinstance(centers, list) else [centers] * d
    plus = tuple(_lag_indices(per_axis[ax], lags, M, d, ax, +1) for ax in range(d))
    minus = tuple(_lag_indices(per_axis[ax], lags, M, d, ax, -1) for ax in range(d))
    out = 0
    for w, uj in zip(weights, u):
        out = out + w * uj[plus] * np.conj(uj[minus])
    return out


def lag_band(state: MixedState, pg: PhaseGrid, tol: float = BAND_TOL) -> tuple[int, float]:
    """Lag extent of the operator kernel around the phase-grid positions.

    Returns the largest lag index (state-grid cells, any axis) whose relative
    weight exceeds ``tol``, and the lag length beyond which the weight stays
    below ``RESOLVE_TOL`` (used for the xi-resolution check).
    """
    ratio = _refinement(state, pg)
    sg, d = state.grid, state.grid.d
    u = _zero_extend(spectral_upsample2x(state.orbitals, sg), d)
    centers = 2 * ratio * np.arange(pg.pos.N)
    N = sg.N
    prof = np.zeros(N)
    if d == 1:
        chunk = max(1, 2**22 // (pg.pos.N * state.rank))
        lags = np.arange(N)
        for start in range(0, N, chunk):
            part = lags[start:start + chunk]
            prof[part] = np.abs(_lag_correlation(u, state.weights, centers, part, 1)).max(axis=0)
    else:
        full = np.arange(-N + 1, N)
        chunk = max(1, 2**22 // (pg.pos.N**2 * full.size * state.rank))
        P = np.zeros((full.size, full.size))
        for start in range(0, full.size, chunk):
            part = full[start:start + chunk]
            r = _corr_2d(u, state.weights, centers, part, full)
            P[start:start + part.size] = np.abs(r).max(axis=(0, 1))
        idx = np.abs(full)
        for k in range(N):
            prof[k] = max(P[idx == k].max(), P[:, idx == k].max())
    prof /= prof.max() if prof.max() > 0 else 1.0

    def reach(t):
        above = np.nonzero(prof > t)[0]
        return int(above.max()) if above.size else 0
    return reach(tol), reach(RESOLVE_TOL) * sg.dx


def _corr_2d(u, weights, centers, lags0, lags1):
    # r[x0, x1, k0, k1] for d = 2 on the zero-extended array
    off = u.shape[1] // 4
    i0 = (centers[:, None] + lags0[None, :] + off)[:, None, :, None]
    i1 = (centers[:, None] + lags1[None, :] + off)[None, :, None, :]
    m0 = (centers[:, None] - lags0[None, :] + off)[:, None, :, None]
    m1 = (centers[:, None] - lags1[None, :] + off)[None, :, None, :]
    out = 0
    for w, uj in zip(weights, u):
        out = out + w * uj[i0, i1] * np.conj(uj[m0, m1])
    return out


def wigner(state: MixedState, pg: PhaseGrid, check_resolution: bool = True) -> KineticDensity:
    """Discrete Wigner transform evaluated directly at the phase-grid velocities."""
    ratio = _refinement(state, pg)
    sg, d, h = state.grid, state.grid.d, state.h
    p_max = math.pi * state.hbar * sg.N / sg.L
    if pg.Xi > p_max * (1 + 1e-12):
        raise GridError(f"velocity box Xi = {pg.Xi} exceeds the resolved momentum {p_max:.4g}; "
                        f"refine the state grid to N >= {math.ceil(pg.Xi * sg.L / (math.pi * state.hbar))}")
    kb, reach = lag_band(state, pg)
    if check_resolution and reach > 0 and pg.dxi > h / reach:
        need = math.ceil(2 * pg.Xi * reach / h)
        need += need % 2
        raise GridError(f"velocity spacing {pg.dxi:.4g} aliases lags up to {reach:.4g}; "
                        f"use Nxi >= {need}")
    lags = np.arange(-kb, kb + 1)
    u = _zero_extend(spectral_upsample2x(state.orbitals, sg), d)
    centers = 2 * ratio * np.arange(pg.pos.N)
    E = np.exp(-2j * np.pi * np.outer(lags * sg.dx, pg.xi) / h)
    values = np.empty(pg.shape, dtype=complex)
    # blocks of the first position axis keep the lag array near 2^22 entries
    per_row = lags.size**d * pg.pos.N ** (d - 1)
    block = max(1, 2**22 // per_row)
    for start in range(0, pg.pos.N, block):
        rows = slice(start, min(start + block, pg.pos.N))
        if d == 1:
            r = _lag_correlation(u, state.weights, centers[rows], lags, 1)
        else:
            r = _lag_correlation(u, state.weights, [centers[rows]] + [centers] * (d - 1), lags, d)
        # non-uniform DFT over the lag axes, one axis at a time
        out = r
        for ax in range(d):
            out = np.moveaxis(np.tensordot(out, E, axes=([d + ax], [0])), -1, d + ax)
        values[rows] = out
    values *= sg.dx**d / h**d
    resid = np.abs(values.imag).max()
    if resid > 1e-9 * max(1.0, np.abs(values.real).max()):
        raise TransformError(f"Wigner transform has imaginary residue {resid:.2e}")
    return KineticDensity(pg, values.real.copy(), signed=True, t=state.t)


# --- Husimi ------------------------------------------------------------------

def husimi_kernel(hbar: float, d: int):
    """``G(z) = (pi hbar)^{-d} e^{-|z|^2/hbar}`` on ``R^{2d}``."""
    def G(*z):
        return (np.pi * hbar) ** (-d) * np.exp(-sum(c**2 for c in z) / hbar)
    return G


def husimi(f_w: KineticDensity, hbar: float) -> KineticDensity:
    """Husimi transform: Gaussian smoothing of a Wigner function by ``G``."""
    pg = f_w.grid
    d = pg.d
    if pg.dxi > math.sqrt(2 * hbar):
        raise GridError(f"velocity spacing {pg.dxi:.3g} cannot resolve the smoothing width "
                        f"{math.sqrt(hbar / 2):.3g}")
    # periodic x-convolution with variance hbar/2 per axis
    pos = pg.pos
    mult = np.exp(-hbar * pos.k2 / 4)
    axes = pg.x_axes
    F = np.fft.fftn(f_w.values, axes=axes)
    values = np.fft.ifftn(F * mult.reshape(pos.shape + (1,) * d), axes=axes).real
    # truncated discrete kernel in xi, renormalized so the sum of weights is one
    radius = int(math.ceil(HUSIMI_RADIUS * math.sqrt(hbar) / pg.dxi))
    m = np.arange(-radius, radius + 1) * pg.dxi
    w = np.exp(-m**2 / hbar)
    w /= w.sum()
    for ax in pg.xi_axes:
        values = convolve1d(values, w, axis=ax, mode="constant", cval=0.0)
    worst = values.min()
    if worst < CLIP_FLOOR * max(1.0, values.max()):
        raise TransformError(f"Husimi transform has negative value {worst:.3e} (aliasing?)")
    values = np.where(values < 0, 0.0, values)
    return KineticDensity(pg, values, signed=False, t=f_w.t)


def husimi_projection(state: MixedState, pg: PhaseGrid, family: CoherentFamily | None = None
                      ) -> KineticDensity:
    """``h^{-d} sum_j lambda_j |<phi_z, psi_j>|^2`` with the symmetric (a = 1) profile.

    An independent route to the Husimi transform; cost grows like
    ``Nx^d N^d Nxi^d`` so it is meant for small grids.
    """
    if family is None:
        family = CoherentFamily(state.hbar, state.grid, a=1.0)
    ratio = _refinement(state, pg)
    sg, d, h = state.grid, state.grid.d, state.h
    if d != 1:
        raise NotImplementedError("husimi_projection is implemented for d = 1")
    E = np.exp(-2j * np.pi * np.outer(sg.nodes, pg.xi) / h)
    out = np.zeros(pg.shape)
    for i, x in enumerate(pg.pos.nodes):
        env = family.envelope([x])
        amp = (state.orbitals * env) @ E * sg.cell
        out[i] = np.tensordot(state.weights, np.abs(amp) ** 2, axes=1) / h**d
    return KineticDensity(pg, out, t=state.t)


# --- closed forms ------------------------------------------------------------

def _phase_offsets(pg: PhaseGrid, x0, xi0):
    d = pg.d
    x0 = np.broadcast_to(np.asarray(x0, float), (d,))
    xi0 = np.broadcast_to(np.asarray(xi0, float), (d,))
    mesh = pg.mesh
    dx = [pg.pos.periodic_delta(mesh[i], x0[i]) for i in range(d)]
    dxi = [mesh[d + i] - xi0[i] for i in range(d)]
    return dx, dxi


def coherent_wigner(family: CoherentFamily, pg: PhaseGrid, x0, xi0) -> np.ndarray:
    """Exact Wigner transform of a Gaussian coherent state."""
    a, h, d = family.profile.a, family.h, pg.d
    dx, dxi = _phase_offsets(pg, x0, xi0)
    q = (2 * np.pi * a / h) * sum(c**2 for c in dx) + (2 * np.pi / (a * h)) * sum(c**2 for c in dxi)
    return (2 / h) ** d * np.exp(-q)


def coherent_husimi(family: CoherentFamily, pg: PhaseGrid, x0, xi0) -> np.ndarray:
    """Exact Husimi transform of a Gaussian coherent state (variances add)."""
    a, hb, d = family.profile.a, family.hbar, pg.d
    vx, vxi = hb / (2 * a) + hb / 2, a * hb / 2 + hb / 2
    dx, dxi = _phase_offsets(pg, x0, xi0)
    q = sum(c**2 for c in dx) / (2 * vx) + sum(c**2 for c in dxi) / (2 * vxi)
    return (4 * np.pi**2 * vx * vxi) ** (-d / 2) * np.exp(-q)


def isotropic_wigner(hbar: float, pg: PhaseGrid, x0, xi0) -> np.ndarray:
    """``h^{-d} e^{-(pi/h)|z - z0|^2}``, the symmetric Gaussian with variance ``hbar`` per axis."""
    h = 2 * np.pi * hbar
    dx, dxi = _phase_offsets(pg, x0, xi0)
    return h ** (-pg.d) * np.exp(-(np.pi / h) * (sum(c**2 for c in dx) + sum(c**2 for c in dxi)))


def isotropic_husimi(hbar: float, pg: PhaseGrid, x0, xi0) -> np.ndarray:
    """``(3 pi hbar)^{-d} e^{-|z - z0|^2/(3 hbar)}``: the smoothing of :func:`isotropic_wigner` by ``G``."""
    dx, dxi = _phase_offsets(pg, x0, xi0)
    return (3 * np.pi * hbar) ** (-pg.d) * np.exp(-(sum(c**2 for c in dx) + sum(c**2 for c in dxi)) / (3 * hbar))


def coherent_moment2(family: CoherentFamily, xi0) -> float:
    """``Tr(|p|^2 rho)`` for a Gaussian coherent state at momentum ``xi0``."""
    xi0 = np.broadcast_to(np.asarray(xi0, float), (family.grid.d,))
    return float(np.sum(xi0**2) + family.grid.d * family.profile.a * family.hbar / 2)


# --- Töplitz quantization ----------------------------------------------------

@dataclass
class ToeplitzReport:
    cells: int
    rank: int
    trace: float
    dropped: float
    max_snap: float


def toeplitz_quantize(family: CoherentFamily, mu: KineticDensity, j_max: int = 512,
                      rel_cut: float = 1e-12, env_tol: float = 1e-9) -> MixedState:
    """``OP(mu) = sum_cells mu(cell) |phi_{x,xi}><phi_{x,xi}|`` in diagonal rank-J form.

    Velocities are snapped to the momentum lattice. The operator kernel is
    accumulated only on the union of the packet supports, one position column
    at a time (all velocities of a column share the same envelope), then
    diagonalized. Eigenvalues below ``rel_cut`` times the largest are dropped.
    """
    pg, sg = mu.grid, family.grid
    if mu.values.min() < 0:
        raise StateError("Töplitz symbol must be nonnegative")
    mass = mu.values * pg.cell
    total = mass.sum()
    if abs(total - 1) > 1e-9:
        raise StateError(f"Töplitz symbol has mass {total:.12f}, expected 1")
    ratio = sg.N // pg.pos.N
    if sg.N % pg.pos.N or sg.d != pg.d or not math.isclose(sg.L, pg.pos.L):
        raise GridError("state grid must equal or refine the symbol's position grid")
    tail = family.tail()
    if tail > 1e-12:
        raise StateError(f"coherent states do not fit the box: periodization tail {tail:.2e}")
    d, h = sg.d, family.h
    active = mass > 1e-14
    cells = int(active.sum())
    if cells == 0:
        raise StateError("Töplitz symbol has no cell above the mass threshold")
    step = h / sg.L
    xi_snapped = np.round(pg.xi / step) * step
    used = active.reshape((-1,) + (pg.Nxi,) * d).any(axis=0)
    snaps = np.abs(xi_snapped - pg.xi)
    max_snap = max(float(snaps[used.any(axis=tuple(j for j in range(d) if j != i))].max())
                   for i in range(d))
    report_meta = {"cells": cells, "max_snap": max_snap}

    if cells == 1:
        idx = np.argwhere(active)[0]
        x0 = [pg.pos.nodes[i] for i in idx[:d]]
        xi0 = [pg.xi[i] for i in idx[d:]]
        state = coherent_state(family, x0, xi0)
        state.meta.update(toeplitz=dict(report_meta, rank=1, trace=1.0, dropped=0.0))
        return state

    env_cut = env_tol * family.h ** (-d / 4) * abs(family.profile(*([np.array(0.0)] * d)))
    cols = np.argwhere(active.reshape(pg.pos.shape + (-1,)).any(axis=-1))
    # support of each column's envelope on the state grid
    supports = []
    for c in cols:
        x0 = [pg.pos.nodes[i] for i in c]
        env = family.envelope(x0)
        supports.append((c, x0, env, np.flatnonzero(np.abs(env).ravel() > env_cut)))
    S = np.unique(np.concatenate([s[3] for s in supports]))
    pos_of = np.full(sg.N**d, -1)
    pos_of[S] = np.arange(S.size)
    R = np.zeros((S.size, S.size), dtype=complex)
    flat_mesh = [m.ravel() for m in sg.mesh]
    norm2_cache = {}
    for c, x0, env, sup in supports:
        colmass = mass[tuple(c)]
        xi_idx = np.argwhere(colmass > 1e-14)
        w = colmass[tuple(xi_idx.T)]
        xis = np.stack([xi_snapped[xi_idx[:, i]] for i in range(d)], axis=1)
        y = [fm[sup] for fm in flat_mesh]
        phase = np.exp(2j * np.pi * sum(np.outer(y[i], xis[:, i]) for i in range(d)) / h)
        # discrete normalization of each packet (identical for all velocities of a column)
        key = tuple(c)
        if key not in norm2_cache:
            norm2_cache[key] = float(np.sum(np.abs(env) ** 2) * sg.cell)
        e = env.ravel()[sup] / math.sqrt(norm2_cache[key])
        A = e[:, None] * phase
        block = (A * w) @ A.conj().T
        loc = pos_of[sup]
        R[np.ix_(loc, loc)] += block
    R *= sg.cell
    R = 0.5 * (R + R.conj().T)
    lam, vec = np.linalg.eigh(R)
    lam, vec = lam[::-1], vec[:, ::-1]
    trace = float(lam.sum())
    if abs(trace - 1) > 1e-9:
        raise StateError(f"Töplitz trace {trace:.12f} deviates from 1")
    if lam[-1] < -1e-10 * lam[0]:
        raise StateError(f"Töplitz operator not positive: eigenvalue {lam[-1]:.2e}")
    keep = lam > rel_cut * lam[0]
    rank = int(keep.sum())
    if rank > j_max:
        raise ToeplitzRankError(rank, j_max, float(lam[j_max:][lam[j_max:] > 0].sum()))
    dropped = float(lam[~keep][lam[~keep] > 0].sum())
    orbitals = np.zeros((rank, sg.N**d), dtype=complex)
    orbitals[:, S] = vec[:, keep].T / math.sqrt(sg.cell)
    weights = lam[keep] / lam[keep].sum()
    state = MixedState(family.hbar, sg, weights, orbitals.reshape((rank,) + sg.shape))
    state.meta.update(toeplitz=dict(report_meta, rank=rank, trace=trace, dropped=dropped))
    return state
