"""Semiclassical Hartree/Vlasov comparison toolkit."""
from .grid import GridError, PhaseGrid, PositionGrid
from .hartree import MixedState, SpatialDensity, evolve
from .kernels import InteractionKernel, make_kernel
from .phasespace import CoherentFamily, coherent_state, husimi, toeplitz_quantize, wigner
from .transport import w2, wh_bracket
from .vlasov import KineticDensity, vevolve

__version__ = "0.1.0"

__all__ = [
    "CoherentFamily", "GridError", "InteractionKernel", "KineticDensity", "MixedState", "PhaseGrid",
    "PositionGrid", "SpatialDensity", "coherent_state", "evolve", "husimi", "make_kernel",
    "toeplitz_quantize", "vevolve", "w2", "wh_bracket", "wigner",
]
