"""Mixed-state Hartree dynamics and quantum diagnostics.

A density operator is held in finite-rank form ``sum_j lambda_j |psi_j><psi_j|``
with orthonormal orbitals sampled on a :class:`~semikin.grid.PositionGrid`.
The momentum operator ``-i hbar grad`` acts on Fourier mode ``m`` as
multiplication by ``h m / L`` (``h = 2 pi hbar``), and the Hamiltonian is
``|p|^2 / 2 + K * rho``.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import DiagnosticsSeries
from .grid import PositionGrid
from .kernels import InteractionKernel, interaction_energy, potential


class StateError(ValueError):
    pass


class SolverError(RuntimeError):
    pass


class SeamMassError(RuntimeError):
    """Density reaches the periodic seam, so torus and whole-space moments disagree."""


SEAM_TOL = 1e-10
GRAM_ABORT = 1e-6


@dataclass(eq=False)
class SpatialDensity:
    grid: PositionGrid
    values: np.ndarray

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.grid.cell)


@dataclass(eq=False)
class MixedState:
    hbar: float
    grid: PositionGrid
    weights: np.ndarray
    orbitals: np.ndarray
    t: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        self.orbitals = np.asarray(self.orbitals, dtype=complex)
        if self.orbitals.ndim == self.grid.d:
            self.orbitals = self.orbitals[None]
        if self.orbitals.shape != (self.weights.size,) + self.grid.shape:
            raise StateError(
                f"orbitals of shape {self.orbitals.shape} do not match "
                f"{self.weights.size} weights on grid {self.grid.shape}")
        if not self.hbar > 0:
            raise StateError("hbar must be positive")
        if np.any(self.weights < 0):
            raise StateError("weights must be nonnegative")
        if abs(self.weights.sum() - 1) > 1e-10:
            raise StateError(f"weights sum to {self.weights.sum():.12f}, expected 1")
        drift = gram_drift(self)
        if drift > 1e-8:
            raise StateError(f"orbitals are not orthonormal (Gram error {drift:.2e})")

    @property
    def h(self) -> float:
        return 2 * np.pi * self.hbar

    @property
    def rank(self) -> int:
        return self.weights.size

    def replace(self, orbitals=None, t=None) -> "MixedState":
        new = object.__new__(MixedState)
        new.hbar, new.grid, new.weights = self.hbar, self.grid, self.weights
        new.orbitals = self.orbitals if orbitals is None else orbitals
        new.t = self.t if t is None else t
        new.meta = dict(self.meta)
        return new


def gram_matrix(state: MixedState) -> np.ndarray:
    psi = state.orbitals.reshape(state.rank, -1)
    return (psi.conj() @ psi.T) * state.grid.cell


def gram_drift(state: MixedState) -> float:
    g = gram_matrix(state)
    return float(np.abs(g - np.eye(len(g))).max())


def orthonormalize(orbitals: np.ndarray, grid: PositionGrid) -> np.ndarray:
    """Gram-Schmidt (via QR) in the quadrature inner product."""
    J = orbitals.shape[0]
    flat = orbitals.reshape(J, -1).T * np.sqrt(grid.cell)
    q, r = np.linalg.qr(flat)
    q = q * np.sign(np.diag(r).real + (np.diag(r).real == 0))
    return (q.T / np.sqrt(grid.cell)).reshape(orbitals.shape)


def plane_wave_state(grid: PositionGrid, hbar: float, modes, weights=None) -> MixedState:
    """Mixture of plane waves ``L^{-d/2} exp(2 i pi m.x / L)``."""
    modes = np.atleast_2d(np.asarray(modes, dtype=float))
    if modes.shape[1] != grid.d:
        modes = modes.T
    orbitals = []
    for m in modes:
        phase = sum(mi * x for mi, x in zip(m, grid.mesh))
        orbitals.append(np.exp(2j * np.pi * phase / grid.L) / grid.L ** (grid.d / 2))
    if weights is None:
        weights = np.full(len(modes), 1.0 / len(modes))
    return MixedState(hbar, grid, weights, np.array(orbitals))


# --- momentum representation -------------------------------------------------

def momenta(grid: PositionGrid, hbar: float) -> tuple[np.ndarray, ...]:
    """Momentum eigenvalues ``h m_i / L`` on the mode mesh."""
    h = 2 * np.pi * hbar
    return tuple(h * m / grid.L for m in grid.mode_mesh)


def _spectra(state: MixedState) -> np.ndarray:
    axes = tuple(range(1, state.grid.d + 1))
    return np.fft.fftn(state.orbitals, axes=axes)


def momentum_probabilities(state: MixedState) -> np.ndarray:
    """Per-orbital momentum distribution on the lattice; each slice sums to 1."""
    norm = state.grid.cell / state.grid.N**state.grid.d
    return np.abs(_spectra(state)) ** 2 * norm


def momentum_distribution(state: MixedState) -> np.ndarray:
    return np.tensordot(state.weights, momentum_probabilities(state), axes=1)


# --- densities ---------------------------------------------------------------

def spatial_density(state: MixedState) -> SpatialDensity:
    rho = np.tensordot(state.weights, np.abs(state.orbitals) ** 2, axes=1)
    return SpatialDensity(state.grid, rho)


def _multi_indices(d: int, q: int):
    # multisets of q axes with their multinomial multiplicity
    for counts in itertools.product(range(q + 1), repeat=d):
        if sum(counts) == q:
            mult = math.factorial(q)
            for c in counts:
                mult //= math.factorial(c)
            yield counts, mult


def momentum_weighted_density(state: MixedState, k: int) -> np.ndarray:
    """``rho_k = sum_j lambda_j |p^{k/2} psi_j|^2`` (tensor norm over axis tuples)."""
    if k < 0 or k % 2:
        raise ValueError("k must be a nonnegative even integer")
    if k == 0:
        return spatial_density(state).values
    grid = state.grid
    spectra = _spectra(state)
    p = momenta(grid, state.hbar)
    axes = tuple(range(1, grid.d + 1))
    out = np.zeros(grid.shape)
    for counts, mult in _multi_indices(grid.d, k // 2):
        symbol = np.ones(grid.shape)
        for pi, c in zip(p, counts):
            symbol = symbol * pi**c
        field_ = np.fft.ifftn(spectra * symbol, axes=axes)
        out += mult * np.tensordot(state.weights, np.abs(field_) ** 2, axes=1)
    return out


def density_sup(state: MixedState) -> float:
    return float(spatial_density(state).values.max())


# --- moments and norms -------------------------------------------------------

def _check_even(n, name="n"):
    if int(n) != n or n < 0 or int(n) % 2:
        raise ValueError(f"{name} must be a nonnegative even integer, got {n}")


def velocity_moment(state: MixedState, n: int) -> float:
    """``M_n = Tr(|p|^n rho)`` by Parseval on the momentum lattice."""
    _check_even(n)
    dist = momentum_distribution(state)
    if n == 0:
        return float(dist.sum())
    p2 = sum(pi**2 for pi in momenta(state.grid, state.hbar))
    return float(np.sum(p2 ** (n // 2) * dist))


def check_seam(density: np.ndarray, grid: PositionGrid, tol: float = SEAM_TOL) -> float:
    mass = float(density[grid.seam_mask()].sum() * grid.cell)
    if mass > tol:
        raise SeamMassError(f"mass {mass:.2e} within L/8 of the periodic seam exceeds {tol:.0e}")
    return mass


def space_moment(state: MixedState, k: int) -> float:
    """``N_k = int rho |x - x_c|^k dx`` measured from the box center."""
    _check_even(k, "k")
    rho = spatial_density(state).values
    check_seam(rho, state.grid)
    if k == 0:
        return float(rho.sum() * state.grid.cell)
    r2 = sum(x**2 for x in state.grid.displacement())
    return float(np.sum(rho * r2 ** (k // 2)) * state.grid.cell)


def _conj_exponent(r: float) -> float:
    """``1/r'`` for the Hölder conjugate ``r'`` (0 when r = 1, 1 when r = inf)."""
    return 1.0 if math.isinf(r) else 1.0 - 1.0 / r


def schatten_from_singular_values(sigma: np.ndarray, r: float, h: float, d: int) -> float:
    scale = h ** (-d * _conj_exponent(r))
    sigma = np.asarray(sigma, dtype=float)
    if math.isinf(r):
        return float(scale * sigma.max())
    return float(scale * np.sum(sigma**r) ** (1.0 / r))


def rescaled_schatten_norm(state: MixedState, r: float) -> float:
    """``h^{-d/r'} (Tr rho^r)^{1/r}`` from the known spectrum ``lambda_j``."""
    if r < 1:
        raise ValueError("Schatten exponent must be >= 1")
    return schatten_from_singular_values(state.weights, r, state.h, state.grid.d)


def operator_spectrum(state: MixedState) -> np.ndarray:
    """Nonzero spectrum of ``sum_j lambda_j |psi_j><psi_j|`` measured from the orbitals.

    Equal to the weights while the orbitals stay orthonormal; the eigenvalues
    of ``L^{1/2} G L^{1/2}`` (``G`` the Gram matrix) expose any loss of unitarity.
    """
    s = np.sqrt(state.weights)
    M = s[:, None] * gram_matrix(state) * s[None, :]
    return np.clip(np.linalg.eigvalsh(0.5 * (M + M.conj().T)), 0, None)[::-1]


def measured_schatten_norm(state: MixedState, r: float) -> float:
    return schatten_from_singular_values(operator_spectrum(state), r, state.h, state.grid.d)


def weighted_schatten_norm(state: MixedState, axis: int, n: int, p: float) -> float:
    """Rescaled Schatten-``2p`` norm of ``p_axis^n rho`` (``axis`` is 0-based).

    The singular values of ``sum_j lambda_j |chi_j><psi_j|`` with
    ``chi_j = p_axis^n psi_j`` are the square roots of the eigenvalues of the
    ``J x J`` matrix ``lambda_j lambda_k <chi_j, chi_k>``.
    """
    if not 0 <= axis < state.grid.d:
        raise ValueError(f"axis must be in [0, {state.grid.d})")
    q = 2 * p
    if q < 2:
        raise ValueError("Schatten index 2p must be >= 2")
    spectra = _spectra(state).reshape(state.rank, -1)
    mult = momenta(state.grid, state.hbar)[axis].reshape(-1) ** n
    chi = spectra * mult
    norm = state.grid.cell / state.grid.N**state.grid.d
    inner = (chi.conj() @ chi.T) * norm
    lam = state.weights
    M = lam[:, None] * lam[None, :] * inner
    herm = np.abs(M - M.conj().T).max()
    scale = max(np.abs(M).max(), 1e-300)
    if herm > 1e-10 * scale:
        raise SolverError(f"weighted Gram matrix is not Hermitian ({herm:.2e})")
    ev = np.linalg.eigvalsh(0.5 * (M + M.conj().T))
    if ev.min() < -1e-10 * scale:
        raise SolverError(f"weighted Gram matrix is not PSD (min eigenvalue {ev.min():.2e})")
    sigma = np.sqrt(np.clip(ev, 0, None))
    return schatten_from_singular_values(sigma, q, state.h, state.grid.d)


def total_energy(state: MixedState, kernel: InteractionKernel) -> float:
    """``M_2 + int rho V``."""
    return velocity_moment(state, 2) + interaction_energy(kernel, spatial_density(state).values)


def quantum_observers(kernel: InteractionKernel, space_moments: bool = True) -> dict:
    obs = {
        "M0": lambda s: velocity_moment(s, 0),
        "M2": lambda s: velocity_moment(s, 2),
        "M4": lambda s: velocity_moment(s, 4),
        "energy": lambda s: total_energy(s, kernel),
        "Lr1": lambda s: measured_schatten_norm(s, 1),
        "Lr2": lambda s: measured_schatten_norm(s, 2),
        "Lrinf": lambda s: measured_schatten_norm(s, math.inf),
        "rho_sup": density_sup,
        "gram": gram_drift,
    }
    if space_moments:
        obs["N2"] = lambda s: space_moment(s, 2)
    return obs


# --- time stepping -----------------------------------------------------------

class _Propagator:
    """Strang split-step propagator with merged kinetic half steps."""

    def __init__(self, state: MixedState, kernel: InteractionKernel, dt: float):
        if kernel.grid != state.grid:
            raise SolverError("kernel and state live on different grids")
        if not dt > 0:
            raise SolverError("dt must be positive")
        self.state, self.kernel, self.dt = state, kernel, dt
        p2 = sum(pi**2 for pi in momenta(state.grid, state.hbar))
        self.half = np.exp(-1j * dt * p2 / (4 * state.hbar))
        self.full = self.half**2
        self.axes = tuple(range(1, state.grid.d + 1))

    def advance(self, psi: np.ndarray, nsteps: int) -> np.ndarray:
        hbar, dt, lam = self.state.hbar, self.dt, self.state.weights
        spec = np.fft.fftn(psi, axes=self.axes) * self.half
        for i in range(nsteps):
            psi = np.fft.ifftn(spec, axes=self.axes)
            if not self.kernel.is_zero:
                rho = np.tensordot(lam, np.abs(psi) ** 2, axes=1)
                V = potential(self.kernel, rho)
                psi = psi * np.exp(-1j * dt * V / hbar)
            spec = np.fft.fftn(psi, axes=self.axes)
            spec *= self.full if i < nsteps - 1 else self.half
        psi = np.fft.ifftn(spec, axes=self.axes)
        if not np.all(np.isfinite(psi)):
            raise SolverError(f"non-finite orbital values near t = {self.state.t + nsteps * dt:.4g}")
        return psi


def populated_momentum(state: MixedState, tol: float = 1e-12) -> float:
    dist = momentum_distribution(state)
    pabs = np.sqrt(sum(pi**2 for pi in momenta(state.grid, state.hbar)))
    mask = dist > tol * dist.max()
    return float(pabs[mask].max())


def _resolution_warning(state: MixedState, dt: float) -> None:
    xi_eff = populated_momentum(state)
    if dt * xi_eff > state.grid.dx:
        warnings.warn(
            f"dt * max populated momentum = {dt * xi_eff:.3g} exceeds dx = {state.grid.dx:.3g}",
            RuntimeWarning, stacklevel=3)


def step(state: MixedState, kernel: InteractionKernel, dt: float) -> MixedState:
    """One Strang step: half kinetic, potential kick with mid-step density, half kinetic."""
    _resolution_warning(state, dt)
    psi = _Propagator(state, kernel, dt).advance(state.orbitals, 1)
    return state.replace(orbitals=psi, t=state.t + dt)


def _step_count(T: float, dt: float, what: str = "T") -> int:
    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-9 * max(1.0, abs(T)):
        raise SolverError(f"{what} = {T} is not a whole number of steps dt = {dt}")
    return n


def evolve(state: MixedState, kernel: InteractionKernel, T: float, dt: float,
           stride: float | None = None, observers: dict | None = None):
    """Propagate to ``t + T`` recording ``observers`` every ``stride`` time units.

    Returns ``(final_state, DiagnosticsSeries)``. Orbitals are never
    re-orthonormalized; the Gram drift is checked at each observation and the
    run aborts if it exceeds ``1e-6``.
    """
    if T < 0:
        raise SolverError("T must be nonnegative")
    if observers is None:
        observers = quantum_observers(kernel)
    nsteps = _step_count(T, dt) if T > 0 else 0
    stride = T if stride is None or stride <= 0 or T == 0 else stride
    per_obs = _step_count(stride, dt, "stride") if nsteps else 0
    if nsteps and nsteps % per_obs:
        raise SolverError("observation stride must divide T")

    series = DiagnosticsSeries(meta={"engine": "hartree", "dt": dt, "hbar": state.hbar})
    worst_gram = 0.0

    def observe(s):
        nonlocal worst_gram
        g = gram_drift(s)
        worst_gram = max(worst_gram, g)
        if g > GRAM_ABORT:
            raise SolverError(f"Gram drift {g:.2e} exceeds {GRAM_ABORT:.0e} at t = {s.t:.4g}")
        series.record(s.t, {name: fn(s) for name, fn in observers.items()})

    observe(state)
    if nsteps:
        _resolution_warning(state, dt)
        prop = _Propagator(state, kernel, dt)
        psi = state.orbitals
        t0 = state.t
        for block in range(nsteps // per_obs):
            psi = prop.advance(psi, per_obs)
            state = state.replace(orbitals=psi, t=t0 + (block + 1) * per_obs * dt)
            observe(state)
    series.meta["gram_drift"] = worst_gram
    return state, series
