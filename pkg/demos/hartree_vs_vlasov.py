"""One Hartree run against its Vlasov limit with a smooth attractive kernel.

The Töplitz quantization of a Gaussian phase-space density is evolved with
Hartree, the density itself with Vlasov, and the two are compared through the
Husimi transform at the final time.
"""
import math

from semikin import hartree as qh
from semikin.harness import RunConfig, bracket, initial_density, initial_state
from semikin.vlasov import classical_moment, vevolve

cfg = RunConfig.from_dict({
    "grid": {"L": 8.0, "N": 64, "Nxi": 64, "Xi": 4.0},
    "init": {"profile": "gaussian", "sx": 0.6, "sxi": 0.5},
    "hartree": {"T": 0.5, "dt": 0.002},
    "observe": {"stride": 0.25},
    "transport": {"bin": [48, 48]},
})
f0 = initial_density(cfg)
fT, vseries = vevolve(f0, cfg.make_kernel(cfg.position_grid()), cfg.vlasov_T, cfg.vlasov_dt, cfg.observe.stride)
print(f"Vlasov: M2 {classical_moment(f0, 2):.6f} -> {classical_moment(fT, 2):.6f}, "
      f"energy drift {vseries.drift('energy'):.2e}")
for hbar in (2.0**-4, 2.0**-5, 2.0**-6):
    state = initial_state(cfg, hbar, f0)
    kernel = cfg.make_kernel(state.grid)
    stateT, series = qh.evolve(state, kernel, cfg.hartree.T, cfg.hartree.dt, cfg.observe.stride,
                               qh.quantum_observers(kernel, space_moments=False))
    res, br, _ = bracket(fT, stateT, cfg)
    print(f"hbar {hbar:.5f}: rank {state.rank:4d}  W2(f, Husimi) {res.value:.5f}  "
          f"W2/sqrt(hbar) {res.value / math.sqrt(hbar):.4f}  lower bound {br.lower:.5f}  "
          f"energy drift {series.drift('energy'):.1e}")
