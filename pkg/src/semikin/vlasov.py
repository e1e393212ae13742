"""Semi-Lagrangian Vlasov solver and classical phase-space diagnostics.

Advection uses cubic B-spline interpolation written as an FFT multiplier:
shifting samples by ``S`` cells multiplies mode ``k`` by
``B_S(k) / B_0(k)`` with ``B_S(k) = sum_n beta3(n - S) e^{-2 i pi k n / M}``.
The zero mode is untouched, so every shift conserves mass exactly. The
velocity direction is zero-extended by padding to twice its length.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .diagnostics import DiagnosticsSeries
from .grid import PhaseGrid
from .hartree import SolverError, SpatialDensity, _step_count
from .kernels import InteractionKernel, force_field, interaction_energy

log = logging.getLogger(__name__)

BOUNDARY_TOL = 1e-10
CLIP_TOL = 1e-8
OVERSHOOT = 1e-6


@dataclass(eq=False)
class KineticDensity:
    grid: PhaseGrid
    values: np.ndarray
    signed: bool = False
    t: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values of shape {self.values.shape} do not match phase grid {self.grid.shape}")

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.grid.cell)

    def copy(self, values=None, t=None) -> "KineticDensity":
        return KineticDensity(self.grid, self.values.copy() if values is None else values,
                              self.signed, self.t if t is None else t)


def from_function(fn, grid: PhaseGrid, normalize: bool = True) -> KineticDensity:
    """Sample ``fn(*x_axes, *xi_axes)`` on the phase grid."""
    values = np.asarray(fn(*grid.mesh), dtype=float)
    f = KineticDensity(grid, values)
    if normalize:
        f.values /= f.mass
    return f


def point_mass(grid: PhaseGrid, x0, xi0) -> KineticDensity:
    """Unit mass concentrated in the phase cell nearest to ``(x0, xi0)``."""
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (grid.d,))
    xi0 = np.broadcast_to(np.asarray(xi0, dtype=float), (grid.d,))
    ix = [int(round(v / grid.pos.dx)) % grid.pos.N for v in x0]
    ixi = [int(round((v + grid.Xi) / grid.dxi)) for v in xi0]
    if any(not 0 <= i < grid.Nxi for i in ixi):
        raise ValueError("xi0 lies outside the velocity box")
    values = np.zeros(grid.shape)
    values[tuple(ix + ixi)] = 1.0 / grid.cell
    return KineticDensity(grid, values)


# --- spline shift ------------------------------------------------------------

def _beta3(u):
    u = np.abs(u)
    return np.where(u < 1, 2 / 3 - u**2 + u**3 / 2, np.where(u < 2, (2 - u) ** 3 / 6, 0.0))


def spline_shift_symbol(shift, M: int) -> np.ndarray:
    """Real-FFT multiplier for ``g(j) <- g(j - shift)`` on an ``M``-periodic line.

    ``shift`` may be an array; the result has shape ``shift.shape + (M//2 + 1,)``.
    """
    shift = np.asarray(shift, dtype=float)[..., None]
    k = np.arange(M // 2 + 1)
    base = np.floor(shift)
    frac = shift - base
    unit = np.exp(-2j * np.pi * k / M)
    acc = np.zeros(shift.shape[:-1] + (k.size,), dtype=complex)
    for off in (-1, 0, 1, 2):
        acc += _beta3(off - frac) * unit**off
    b0 = (4 + 2 * np.cos(2 * np.pi * k / M)) / 6
    return acc * np.exp(-2j * np.pi * np.outer(base.ravel(), k).reshape(acc.shape) / M) / b0


def _apply_symbol(values: np.ndarray, axis: int, sym: np.ndarray) -> np.ndarray:
    moved = np.moveaxis(values, axis, -1)
    M = moved.shape[-1]
    out = np.fft.irfft(np.fft.rfft(moved, axis=-1) * sym, n=M, axis=-1)
    return np.moveaxis(out, -1, axis)


def _shift_along(values: np.ndarray, axis: int, shift: np.ndarray) -> np.ndarray:
    """Periodic spline shift along ``axis``; ``shift`` broadcasts against ``values``
    with the target axis removed."""
    return _apply_symbol(values, axis, spline_shift_symbol(shift, values.shape[axis]))


def _drop(arr: np.ndarray, axis: int) -> np.ndarray:
    return np.take(arr, 0, axis=axis)


def _x_symbols(grid: PhaseGrid, tau: float) -> list[np.ndarray]:
    d = grid.d
    out = []
    for i in range(d):
        # the shift along x_i depends on xi_i only; keep singleton axes for broadcasting
        shape = [1] * (2 * d)
        shape[d + i] = grid.Nxi
        shift = (grid.xi * tau / grid.pos.dx).reshape(shape)
        out.append(spline_shift_symbol(_drop(shift, i), grid.pos.N))
    return out


def advect_x(f: np.ndarray, grid: PhaseGrid, tau: float, symbols=None) -> np.ndarray:
    """``f(x, xi) <- f(x - xi tau, xi)`` periodically in each position axis."""
    if symbols is None:
        symbols = _x_symbols(grid, tau)
    for i, sym in enumerate(symbols):
        f = _apply_symbol(f, i, sym)
    return f


def advect_xi(f: np.ndarray, grid: PhaseGrid, E: np.ndarray, tau: float) -> np.ndarray:
    """``f(x, xi) <- f(x, xi - E(x) tau)`` with zero extension outside the box."""
    d, n = grid.d, grid.Nxi
    for i in range(d):
        ax = d + i
        pad = [(0, 0)] * (2 * d)
        pad[ax] = (0, n)
        g = np.pad(f, pad)
        shift = (E[i] * tau / grid.dxi).reshape(grid.pos.shape + (1,) * d)
        shift = _drop(np.broadcast_to(shift, g.shape), ax)
        g = _shift_along(g, ax, shift)
        f = np.take(g, np.arange(n), axis=ax)
    return f


# --- diagnostics -------------------------------------------------------------

def classical_density(f: KineticDensity) -> SpatialDensity:
    g = f.grid
    return SpatialDensity(g.pos, f.values.sum(axis=g.xi_axes) * g.dxi**g.d)


def classical_moment(f: KineticDensity, n: int) -> float:
    if int(n) != n or n < 0:
        raise ValueError("n must be a nonnegative integer")
    w = f.grid.speed2() ** (n / 2) if n else 1.0
    return float(np.sum(f.values * w) * f.grid.cell)


def classical_lebesgue_norm(f: KineticDensity, r: float) -> float:
    if r < 1:
        raise ValueError("r must be >= 1")
    a = np.abs(f.values)
    if math.isinf(r):
        return float(a.max())
    return float((np.sum(a**r) * f.grid.cell) ** (1 / r))


def classical_energy(f: KineticDensity, kernel: InteractionKernel) -> float:
    return classical_moment(f, 2) + interaction_energy(kernel, classical_density(f).values)


def boundary_mass(f: KineticDensity) -> float:
    return float(np.abs(f.values[f.grid.boundary_mask()]).sum() * f.grid.cell)


def kinetic_interpolation_ratio(f: KineticDensity, n: float, r: float) -> float:
    """``||rho_f||_{L^p} / (M_n^{1-theta} ||f||_r^theta)`` with ``p' = r' + d/n``
    and ``theta = r'/p'`` (primes denote Hölder conjugates, ``r > 1``)."""
    if not r > 1:
        raise ValueError("r must exceed 1")
    d = f.grid.d
    rp = 1.0 if math.isinf(r) else r / (r - 1)
    pp = rp + d / n
    theta = rp / pp
    p = pp / (pp - 1)
    rho = classical_density(f).values
    lhs = (np.sum(np.abs(rho) ** p) * f.grid.pos.cell) ** (1 / p)
    return float(lhs / (classical_moment(f, n) ** (1 - theta) * classical_lebesgue_norm(f, r) ** theta))


def classical_observers(kernel: InteractionKernel) -> dict:
    return {
        "M0": lambda f: classical_moment(f, 0),
        "M2": lambda f: classical_moment(f, 2),
        "M4": lambda f: classical_moment(f, 4),
        "energy": lambda f: classical_energy(f, kernel),
        "Lr1": lambda f: classical_lebesgue_norm(f, 1),
        "Lr2": lambda f: classical_lebesgue_norm(f, 2),
        "Lrinf": lambda f: classical_lebesgue_norm(f, math.inf),
        "rho_sup": lambda f: float(classical_density(f).values.max()),
    }


# --- stepping ----------------------------------------------------------------

class _VlasovStepper:
    def __init__(self, f0: KineticDensity, kernel: InteractionKernel, dt: float):
        if kernel.grid != f0.grid.pos:
            raise SolverError("kernel and phase grid use different position grids")
        if not dt > 0:
            raise SolverError("dt must be positive")
        if f0.signed or f0.values.min() < 0:
            raise SolverError("Vlasov data must be nonnegative")
        self.kernel, self.dt, self.grid = kernel, dt, f0.grid
        self.fmax = float(f0.values.max())
        self.clipped = 0.0
        self.half = _x_symbols(self.grid, dt / 2)
        self.full = _x_symbols(self.grid, dt)

    def _clip(self, f, t):
        neg = f < 0
        if neg.any():
            lost = float(-f[neg].sum() * self.grid.cell)
            if lost > CLIP_TOL:
                raise SolverError(f"clipped mass {lost:.2e} exceeds {CLIP_TOL:.0e} at t = {t:.4g}")
            self.clipped += lost
            f = np.where(neg, 0.0, f)
        return f

    def advance(self, f: np.ndarray, nsteps: int, t0: float) -> np.ndarray:
        g, dt = self.grid, self.dt
        f = advect_x(f, g, dt / 2, self.half)
        for i in range(nsteps):
            rho = f.sum(axis=g.xi_axes) * g.dxi**g.d
            E = force_field(self.kernel, rho)
            f = advect_xi(f, g, E, dt)
            f = advect_x(f, g, dt, self.full) if i < nsteps - 1 else advect_x(f, g, dt / 2, self.half)
            f = self._clip(f, t0 + (i + 1) * dt)
        if not np.all(np.isfinite(f)):
            raise SolverError(f"non-finite values near t = {t0 + nsteps * dt:.4g}")
        if f.max() > self.fmax * (1 + OVERSHOOT):
            raise SolverError(f"maximum principle violated: {f.max():.6g} > {self.fmax:.6g}")
        return f

    def check_boundary(self, f: KineticDensity):
        b = boundary_mass(f)
        if b > BOUNDARY_TOL * max(f.mass, 1e-300):
            raise SolverError(f"velocity-boundary mass {b:.2e} exceeds tolerance at t = {f.t:.4g}")


def vstep(f: KineticDensity, kernel: InteractionKernel, dt: float) -> KineticDensity:
    stepper = _VlasovStepper(f, kernel, dt)
    out = f.copy(stepper.advance(f.values, 1, f.t), t=f.t + dt)
    stepper.check_boundary(out)
    if stepper.clipped:
        log.debug("clipped mass %.3e", stepper.clipped)
    return out


def vevolve(f: KineticDensity, kernel: InteractionKernel, T: float, dt: float,
            stride: float | None = None, observers: dict | None = None):
    """Vlasov counterpart of :func:`semikin.hartree.evolve`."""
    if T < 0:
        raise SolverError("T must be nonnegative")
    if observers is None:
        observers = classical_observers(kernel)
    nsteps = _step_count(T, dt) if T > 0 else 0
    stride = T if stride is None or stride <= 0 or T == 0 else stride
    per_obs = _step_count(stride, dt, "stride") if nsteps else 0
    if nsteps and nsteps % per_obs:
        raise SolverError("observation stride must divide T")

    series = DiagnosticsSeries(meta={"engine": "vlasov", "dt": dt})
    stepper = _VlasovStepper(f, kernel, dt)
    stepper.check_boundary(f)
    series.record(f.t, {k: fn(f) for k, fn in observers.items()})
    t0 = f.t
    values = f.values
    for block in range(nsteps // per_obs if nsteps else 0):
        values = stepper.advance(values, per_obs, t0 + block * per_obs * dt)
        f = f.copy(values, t=t0 + (block + 1) * per_obs * dt)
        stepper.check_boundary(f)
        series.record(f.t, {k: fn(f) for k, fn in observers.items()})
    series.meta["clipped_mass"] = stepper.clipped
    if stepper.clipped:
        log.info("vevolve clipped a total mass of %.3e", stepper.clipped)
    return f, series
