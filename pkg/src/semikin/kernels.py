"""Pair interaction kernels as torus Fourier multipliers.

Symbols use the continuous convention ``K_hat(m) = int K(x) e^{-2 i pi m.x/L} dx``
so that ``(K * rho)_hat = K_hat * rho_hat`` and ``V = L^{-d} sum_m K_hat rho_hat e^{...}``.
The zero mode is always removed (mean-zero gauge): it shifts ``V`` by a constant
and leaves the force untouched.

Families
--------
``zero``
    No interaction.
``smooth-cosine``
    ``K(x) = sign * L^{-d} sum_i cos(2 pi x_i / L)``; ``K_hat(+-e_i) = sign / 2``.
``gaussian``
    ``K(x) = sign * exp(-|x|^2 / (2 width^2))``, periodized.
``power-law``
    ``K(x) = sign / |x|^a`` with ``a in (-2, d)``, ``a != 0``, via the periodized
    Riesz symbol.
``log``
    ``d = 2`` only: ``K(x) = sign * ln|x| / (2 pi)``, symbol ``-sign / (4 pi^2 |m/L|^2)``.
``coulomb``
    Green's function of ``-Laplacian`` times ``sign`` in any dimension
    (``-|x|/2`` for ``d = 1``, ``-ln|x|/(2 pi)`` for ``d = 2``); ``sign=+1`` is repulsive.

Singular families accept ``eps_reg`` and are multiplied by the mollifier
``exp(-(eps_reg |k|)^2)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma

from .grid import PositionGrid

FAMILIES = ("zero", "smooth-cosine", "gaussian", "power-law", "log", "coulomb")


class KernelError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class InteractionKernel:
    family: str
    sign: int
    a: float | None
    eps_reg: float
    grid: PositionGrid
    symbol: np.ndarray = field(repr=False)
    width: float = 1.0

    def __post_init__(self):
        self.symbol.setflags(write=False)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.symbol)


def riesz_constant(d: int, a: float) -> float:
    """``c`` in ``FT(|x|^{-a})(k) = c |k|^{a-d}`` (angular frequency)."""
    return 2.0 ** (d - a) * np.pi ** (d / 2) * gamma((d - a) / 2) / gamma(a / 2)


def default_eps_reg(family: str, a: float | None, grid: PositionGrid) -> float:
    if family == "power-law" and a is not None and a >= grid.d - 1:
        return 2 * grid.dx
    return 0.0


def make_kernel(family: str, sign: int = 1, a: float | None = None, eps_reg: float | None = None,
                grid: PositionGrid | None = None, width: float = 1.0) -> InteractionKernel:
    if grid is None:
        raise KernelError("a PositionGrid is required")
    if family not in FAMILIES:
        raise KernelError(f"unknown kernel family {family!r}; expected one of {FAMILIES}")
    if sign not in (1, -1):
        raise KernelError("sign must be +1 or -1")
    if eps_reg is None:
        eps_reg = default_eps_reg(family, a, grid)
    if eps_reg < 0:
        raise KernelError("eps_reg must be >= 0")

    d = grid.d
    k2 = grid.k2
    kabs = np.sqrt(k2)
    nonzero = k2 > 0
    sym = np.zeros(grid.shape)

    if family == "zero":
        pass
    elif family == "smooth-cosine":
        # modes +-e_i are exactly those with sum |m_i| == 1
        sym[sum(np.abs(m) for m in grid.mode_mesh) == 1] = 0.5
    elif family == "gaussian":
        if width <= 0 or width > grid.L / 12:
            raise KernelError("gaussian width must lie in (0, L/12] to be periodizable")
        sym = (2 * np.pi * width**2) ** (d / 2) * np.exp(-0.5 * width**2 * k2)
    elif family == "power-law":
        if a is None or not (-2 < a < d) or a == 0:
            raise KernelError(f"power-law exponent must lie in (-2, {d}) and be nonzero, got {a}")
        sym[nonzero] = riesz_constant(d, a) * kabs[nonzero] ** (a - d)
    elif family == "log":
        if d != 2:
            raise KernelError("log kernel is only defined for d = 2")
        sym[nonzero] = -1.0 / k2[nonzero]
    elif family == "coulomb":
        sym[nonzero] = 1.0 / k2[nonzero]

    if eps_reg > 0 and family in ("power-law", "log", "coulomb"):
        sym = sym * np.exp(-((eps_reg * kabs) ** 2))
    sym = sign * sym
    sym.flat[0] = 0.0
    return InteractionKernel(family, sign, a, float(eps_reg), grid, sym, width)


def _rho_values(kernel: InteractionKernel, rho) -> np.ndarray:
    values = np.asarray(getattr(rho, "values", rho))
    grid = getattr(rho, "grid", None)
    if grid is not None and grid != kernel.grid:
        raise KernelError("density grid does not match kernel grid")
    if values.shape != kernel.grid.shape:
        raise KernelError(f"density shape {values.shape} does not match kernel grid {kernel.grid.shape}")
    return values


def _real(field_: np.ndarray, what: str) -> np.ndarray:
    scale = max(1.0, float(np.abs(field_).max()))
    resid = float(np.abs(field_.imag).max())
    if resid > 1e-12 * scale:
        raise KernelError(f"{what} has imaginary residue {resid:.2e}")
    return field_.real


def potential(kernel: InteractionKernel, rho) -> np.ndarray:
    """Mean-field potential ``V = K * rho``."""
    values = _rho_values(kernel, rho)
    if kernel.is_zero:
        return np.zeros(kernel.grid.shape)
    grid = kernel.grid
    return _real(grid.ifft(kernel.symbol * grid.fft(values)), "potential")


def _derivative_symbols(grid: PositionGrid) -> list[np.ndarray]:
    # i k_i with the unpaired Nyquist mode removed so odd derivatives stay real
    out = []
    for k, m in zip(grid.wavenumbers, grid.mode_mesh):
        out.append(np.where(m == -grid.N // 2, 0.0, 1j * k))
    return out


def force_field(kernel: InteractionKernel, rho) -> np.ndarray:
    """Force ``E = -grad(K * rho)``; returns an array of shape ``(d,) + grid.shape``."""
    values = _rho_values(kernel, rho)
    grid = kernel.grid
    if kernel.is_zero:
        return np.zeros((grid.d,) + grid.shape)
    vhat = kernel.symbol * grid.fft(values)
    return np.stack([_real(grid.ifft(-ik * vhat), "force field") for ik in _derivative_symbols(grid)])


def interaction_energy(kernel: InteractionKernel, rho) -> float:
    """``int rho (K * rho) dx`` evaluated in physical space."""
    values = _rho_values(kernel, rho)
    return float(np.sum(values * potential(kernel, values)) * kernel.grid.cell)


def interaction_energy_symbol(kernel: InteractionKernel, rho) -> float:
    """Same quantity as :func:`interaction_energy` via Plancherel."""
    values = _rho_values(kernel, rho)
    rhat = kernel.grid.fft(values)
    return float(np.sum(kernel.symbol * np.abs(rhat) ** 2).real / kernel.grid.L**kernel.grid.d)
