"""Periodic position grids, phase-space grids and spectral helpers.

Every field in the package lives on one of two descriptors:

* :class:`PositionGrid` -- the torus ``[0, L)^d`` sampled at ``x_j = j L / N``.
* :class:`PhaseGrid` -- a position grid times a uniform velocity box
  ``[-Xi, Xi)^d``; arrays are laid out as ``(x_1..x_d, xi_1..xi_d)``.

Fourier modes follow the FFT ordering of :func:`numpy.fft.fftfreq`; mode ``m``
is the plane wave ``exp(2 i pi m.x / L)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


class GridError(ValueError):
    """Invalid grid parameters or a field that does not fit its grid."""


@dataclass(frozen=True)
class PositionGrid:
    d: int
    L: float
    N: int

    def __post_init__(self):
        if self.d not in (1, 2):
            raise GridError(f"d must be 1 or 2, got {self.d}")
        if self.N < 8 or self.N % 2:
            raise GridError(f"N must be even and >= 8, got {self.N}")
        if not self.L > 0:
            raise GridError(f"L must be positive, got {self.L}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.d

    @property
    def dx(self) -> float:
        return self.L / self.N

    @property
    def cell(self) -> float:
        return self.dx**self.d

    @property
    def center(self) -> float:
        return self.L / 2

    @cached_property
    def nodes(self) -> np.ndarray:
        return np.arange(self.N) * self.dx

    @cached_property
    def mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.nodes] * self.d), indexing="ij"))

    @cached_property
    def modes(self) -> np.ndarray:
        """Integer Fourier modes in FFT order."""
        return np.fft.fftfreq(self.N, 1.0 / self.N)

    @cached_property
    def mode_mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.modes] * self.d), indexing="ij"))

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Angular wavenumbers ``2 pi m_i / L`` on the mode mesh."""
        return tuple(2 * np.pi * m / self.L for m in self.mode_mesh)

    @cached_property
    def k2(self) -> np.ndarray:
        return sum(k**2 for k in self.wavenumbers)

    def displacement(self) -> tuple[np.ndarray, ...]:
        """Per-axis displacement of every node from the box center."""
        return tuple(x - self.center for x in self.mesh)

    def seam_mask(self) -> np.ndarray:
        """Nodes within ``L/8`` of the periodic seam along any axis."""
        band = self.L / 8
        mask = np.zeros(self.shape, dtype=bool)
        for x in self.mesh:
            mask |= (x < band) | (x >= self.L - band)
        return mask

    def refine(self, factor: int) -> "PositionGrid":
        return PositionGrid(self.d, self.L, self.N * factor)

    def periodic_delta(self, a, b):
        """Shortest signed periodic displacement ``a - b`` along each axis."""
        diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        return diff - self.L * np.round(diff / self.L)

    def fft(self, values: np.ndarray) -> np.ndarray:
        """Continuous-convention Fourier coefficients ``int g(x) e^{-2i pi m.x/L} dx``."""
        axes = tuple(range(-self.d, 0))
        return np.fft.fftn(values, axes=axes) * self.cell

    def ifft(self, coeffs: np.ndarray) -> np.ndarray:
        axes = tuple(range(-self.d, 0))
        return np.fft.ifftn(coeffs, axes=axes) / self.cell


@dataclass(frozen=True)
class PhaseGrid:
    pos: PositionGrid
    Xi: float
    Nxi: int

    def __post_init__(self):
        if self.Nxi < 8 or self.Nxi % 2:
            raise GridError(f"Nxi must be even and >= 8, got {self.Nxi}")
        if not self.Xi > 0:
            raise GridError(f"Xi must be positive, got {self.Xi}")
        object.__setattr__(self, "_cell", self.pos.cell * self.dxi**self.d)

    @property
    def d(self) -> int:
        return self.pos.d

    @property
    def dxi(self) -> float:
        return 2 * self.Xi / self.Nxi

    @property
    def cell(self) -> float:
        return self._cell

    @property
    def shape(self) -> tuple[int, ...]:
        return self.pos.shape + (self.Nxi,) * self.d

    @cached_property
    def xi(self) -> np.ndarray:
        return -self.Xi + np.arange(self.Nxi) * self.dxi

    @cached_property
    def mesh(self) -> tuple[np.ndarray, ...]:
        """``2d`` arrays: positions first, then velocities."""
        axes = [self.pos.nodes] * self.d + [self.xi] * self.d
        return tuple(np.meshgrid(*axes, indexing="ij"))

    @property
    def x_axes(self) -> tuple[int, ...]:
        return tuple(range(self.d))

    @property
    def xi_axes(self) -> tuple[int, ...]:
        return tuple(range(self.d, 2 * self.d))

    def speed2(self) -> np.ndarray:
        """``|xi|^2`` broadcast against the velocity axes."""
        out = 0.0
        for i in range(self.d):
            shape = [1] * self.d + [1] * self.d
            shape[self.d + i] = self.Nxi
            out = out + (self.xi**2).reshape(shape)
        return out

    def boundary_mask(self, layers: int = 2) -> np.ndarray:
        """Cells in the outermost ``layers`` velocity rows along any axis."""
        mask = np.zeros(self.shape, dtype=bool)
        idx = np.arange(self.Nxi)
        edge = (idx < layers) | (idx >= self.Nxi - layers)
        for i in range(self.d):
            shape = [1] * (2 * self.d)
            shape[self.d + i] = self.Nxi
            mask |= edge.reshape(shape)
        return mask


def integrate(values, grid) -> float:
    """Rectangle-rule quadrature of ``values`` over ``grid``."""
    values = np.asarray(values)
    if values.shape != grid.shape:
        raise GridError(f"field of shape {values.shape} does not match grid {grid.shape}")
    return values.sum() * grid.cell


def _pad_axis(F: np.ndarray, axis: int, N: int) -> np.ndarray:
    # Zero-pad the spectrum along one axis to length 2N, splitting the Nyquist mode.
    F = np.moveaxis(F, axis, 0)
    out = np.zeros((2 * N,) + F.shape[1:], dtype=complex)
    h = N // 2
    out[:h] = F[:h]
    out[h] = 0.5 * F[h]
    out[-h] = 0.5 * F[h]
    out[-h + 1 :] = F[h + 1 :]
    return np.moveaxis(out, 0, axis)


def spectral_upsample2x(values, grid: PositionGrid) -> np.ndarray:
    """Trigonometric interpolation of a periodic field onto the ``2N`` grid.

    The last ``grid.d`` axes are spatial; any leading axes (for example an
    orbital index) are carried along.
    """
    values = np.asarray(values)
    if values.shape[-grid.d :] != grid.shape:
        raise GridError(f"field of shape {values.shape} does not match grid {grid.shape}")
    axes = tuple(range(values.ndim - grid.d, values.ndim))
    F = np.fft.fftn(values, axes=axes)
    for ax in axes:
        F = _pad_axis(F, ax, grid.N)
    return np.fft.ifftn(F, axes=axes) * 2**grid.d
