"""Wigner and Husimi transforms of a coherent state.

Builds a wave packet, checks the transform identities numerically and compares
against the Gaussian closed forms that follow from the profile.
"""
import math

import numpy as np

from semikin import hartree as qh
from semikin.grid import PhaseGrid, PositionGrid
from semikin.phasespace import CoherentFamily, coherent_husimi, coherent_state, coherent_wigner, husimi, wigner
from semikin.vlasov import classical_density

hbar = 2.0**-5
grid = PositionGrid(1, 8.0, 256)
family = CoherentFamily(hbar, grid)
state = coherent_state(family, 4.0, 0.5)
pg = PhaseGrid(grid, math.pi * hbar * grid.N / grid.L, 512)

f = wigner(state, pg)
fh = husimi(f, hbar)
x0, xi0 = state.meta["x0"], state.meta["xi0"]

print(f"hbar = {hbar}, packet at x0 = {x0[0]:.4f}, xi0 = {xi0[0]:.4f}")
print(f"Wigner mass        {f.mass:.12f}")
print(f"||W||_L2 - ||rho||_S2 = {math.sqrt(np.sum(f.values**2) * pg.cell) - qh.rescaled_schatten_norm(state, 2):.2e}")
print(f"xi-marginal error  {np.abs(classical_density(f).values - qh.spatial_density(state).values).max():.2e}")
print(f"closed-form Wigner error {np.abs(f.values - coherent_wigner(family, pg, x0, xi0)).max():.2e}")
print(f"closed-form Husimi error {np.abs(fh.values - coherent_husimi(family, pg, x0, xi0)).max():.2e}")
print(f"M2 = {qh.velocity_moment(state, 2):.8f}  (xi0^2 + hbar/4 = {xi0[0]**2 + hbar / 4:.8f})")
print(f"min Wigner {f.values.min():.2e}, min Husimi {fh.values.min():.2e}")
