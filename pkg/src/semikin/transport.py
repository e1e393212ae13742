"""Quadratic Wasserstein distances, the homogeneous H^{-1} norm and the
semiclassical bracket.

Costs use the shortest periodic displacement in position coordinates and the
Euclidean distance in velocity coordinates.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .grid import PhaseGrid, PositionGrid
from .hartree import MixedState, SpatialDensity
from .vlasov import KineticDensity

EXACT_MAX_SUPPORT = 4000
ENTROPIC_MAX_SUPPORT = 6000
SPARSE_TOL = 1e-12


class TransportError(RuntimeError):
    pass


@dataclass
class DiscreteMeasure:
    """Weighted point cloud; ``period[i]`` is the period of coordinate ``i`` (``inf`` if none)."""
    points: np.ndarray
    weights: np.ndarray
    period: np.ndarray
    dropped: float = 0.0
    spacing: float = 0.0

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        self.period = np.broadcast_to(np.asarray(self.period, dtype=float), (self.points.shape[1],)).copy()
        if self.points.shape[0] != self.weights.size:
            raise ValueError("points and weights disagree in length")

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    @property
    def size(self) -> int:
        return self.weights.size


@dataclass
class TransportResult:
    value: float
    method: str
    plan: np.ndarray | None = field(default=None, repr=False)
    iters: int = 0
    eps: float = 0.0
    feasibility_gap: float = 0.0
    dropped: float = 0.0


@dataclass
class WhBracket:
    lower: float
    upper: float
    hbar: float
    w2_husimi: float
    w2_symbol: float | None = None

    @property
    def has_upper(self) -> bool:
        return math.isfinite(self.upper)

    @property
    def width(self) -> float:
        return self.upper - self.lower


def to_measure(density, tol: float = SPARSE_TOL) -> DiscreteMeasure:
    """Support points of a gridded density, dropping cells below ``tol`` of the maximum."""
    if isinstance(density, DiscreteMeasure):
        return density
    grid = density.grid
    values = np.asarray(density.values)
    if values.min() < -1e-12 * max(values.max(), 1e-300):
        raise TransportError("transport inputs must be nonnegative")
    values = np.clip(values, 0, None)
    keep = values > tol * values.max()
    mass = values * grid.cell
    total = mass.sum()
    dropped = float(mass[~keep].sum())
    if isinstance(grid, PhaseGrid):
        pos, d = grid.pos, grid.d
        period = [pos.L] * d + [math.inf] * d
        spacing = max(pos.dx, grid.dxi)
    else:
        period = [grid.L] * grid.d
        spacing = grid.dx
    coords = np.stack([m[keep] for m in grid.mesh], axis=1)
    w = mass[keep]
    return DiscreteMeasure(coords, w * (total / w.sum()), period, dropped, spacing)


def cost_matrix(a: DiscreteMeasure, b: DiscreteMeasure) -> np.ndarray:
    if a.points.shape[1] != b.points.shape[1] or not np.array_equal(a.period, b.period):
        raise TransportError("measures live on different spaces")
    C = np.zeros((a.size, b.size))
    for i, per in enumerate(a.period):
        diff = a.points[:, i, None] - b.points[None, :, i]
        if math.isfinite(per):
            diff = diff - per * np.round(diff / per)
        C += diff**2
    return C


def _check_masses(a: DiscreteMeasure, b: DiscreteMeasure):
    if abs(a.mass - b.mass) > 1e-6 * max(a.mass, b.mass):
        raise TransportError(f"mass mismatch: {a.mass:.9g} vs {b.mass:.9g}")
    return a.weights / a.mass, b.weights / b.mass


def _pot():
    # POT probes every installed deep-learning backend on import; none are used here
    for name in ("PYTORCH", "JAX", "TENSORFLOW", "CUPY"):
        os.environ.setdefault(f"POT_BACKEND_DISABLE_{name}", "1")
    import ot
    return ot


def _exact(a, b, wa, wb, C) -> TransportResult:
    if max(a.size, b.size) > EXACT_MAX_SUPPORT:
        raise TransportError(f"exact transport limited to {EXACT_MAX_SUPPORT} support points, "
                             f"got {a.size} x {b.size}")
    ot = _pot()
    plan, log = ot.emd(wa, wb, C, numItermax=10_000_000, log=True)
    if log.get("warning"):
        raise TransportError(f"network simplex did not converge: {log['warning']}")
    primal = float(np.sum(plan * C))
    # simplex potentials pick up rounding along tree paths; a double c-transform
    # makes them feasible, so the gap below certifies the primal value
    v = (C - log["u"][:, None]).min(axis=0)
    u = (C - v[None, :]).min(axis=1)
    dual = float(wa @ u + wb @ v)
    infeas = float(max(0.0, (u[:, None] + v[None, :] - C).max()))
    gap = abs(primal - dual) + infeas
    # relative to the optimum, with an absolute floor for (near-)coincident measures
    if gap > 1e-9 * primal + 1e-14 * max(C.max(), 1.0):
        raise TransportError(f"primal-dual gap {gap:.2e} exceeds tolerance")
    marg = max(np.abs(plan.sum(1) - wa).max(), np.abs(plan.sum(0) - wb).max())
    if marg > 1e-9:
        raise TransportError(f"plan marginals off by {marg:.2e}")
    return TransportResult(math.sqrt(max(primal, 0.0)), "exact", plan, int(log.get("iterations", 0) or 0),
                           0.0, gap)


def sinkhorn_log(wa, wb, C, eps_final, eps_start=None, tol=1e-8, max_iter=100_000):
    """Log-domain Sinkhorn with geometric annealing of ``eps``.

    Returns ``(plan, f, g, iterations, eps, marginal_error)``; ``f, g`` are
    the dual potentials at the final ``eps``.
    """
    la, lb = np.log(wa), np.log(wb)
    if eps_start is None:
        eps_start = max(C.max(), eps_final)
    f = np.zeros(wa.size)
    g = np.zeros(wb.size)
    eps = eps_start
    it = 0
    while True:
        # iterate at this eps until the row marginal is accurate enough
        target = tol if eps <= eps_final else max(tol, 1e-3)
        while True:
            f = -eps * logsumexp((g[None, :] - C) / eps + lb[None, :], axis=1)
            g = -eps * logsumexp((f[:, None] - C) / eps + la[:, None], axis=0)
            it += 1
            if it % 10 == 0 or it >= max_iter:
                logP = (f[:, None] + g[None, :] - C) / eps + la[:, None] + lb[None, :]
                err = float(np.abs(np.exp(logsumexp(logP, axis=1)) - wa).sum())
                if err < target:
                    break
                if it >= max_iter:
                    raise TransportError(f"Sinkhorn did not converge in {max_iter} iterations "
                                         f"(marginal error {err:.2e} at eps = {eps:.2e})")
        if eps <= eps_final:
            break
        eps = max(eps / 2, eps_final)
    plan = np.exp((f[:, None] + g[None, :] - C) / eps + la[:, None] + lb[None, :])
    return plan, f, g, it, eps, err


def sinkhorn_symmetric(w, C, eps_final, tol=1e-10, max_iter=100_000):
    """Potential of ``OT_eps(w, w)`` by the averaged symmetric fixed point, annealed in ``eps``."""
    lw = np.log(w)
    f = np.zeros(w.size)
    eps = max(C.max(), eps_final)
    it = 0
    while True:
        while True:
            new = -eps * logsumexp((f[None, :] - C) / eps + lw[None, :], axis=1)
            change = float(np.abs(new - f).max())
            f = 0.5 * (f + new)
            it += 1
            if change < tol * max(eps, 1e-300) or it >= max_iter:
                break
        if it >= max_iter:
            raise TransportError(f"symmetric Sinkhorn did not converge in {max_iter} iterations")
        if eps <= eps_final:
            return f, it
        eps = max(eps / 2, eps_final)


def _entropic(a, b, wa, wb, C, eps=None) -> TransportResult:
    if max(a.size, b.size) > ENTROPIC_MAX_SUPPORT:
        raise TransportError(f"entropic transport limited to {ENTROPIC_MAX_SUPPORT} support points")
    if eps is None:
        spacing = max(a.spacing, b.spacing)
        if spacing <= 0:
            raise TransportError("entropic mode needs eps or gridded inputs")
        eps = spacing**2 / 4
    plan, f, g, it, eps, err = sinkhorn_log(wa, wb, C, eps)
    ab = wa @ f + wb @ g
    fa, ia = sinkhorn_symmetric(wa, cost_matrix(a, a), eps)
    fb, ib = sinkhorn_symmetric(wb, cost_matrix(b, b), eps)
    # Sinkhorn divergence: OT(a, b) - OT(a, a)/2 - OT(b, b)/2 with OT(w, w) = 2 <w, f_w>
    div = ab - wa @ fa - wb @ fb
    return TransportResult(math.sqrt(max(div, 0.0)), "entropic", plan, it + ia + ib, eps, err)


def w2(mu, nu, mode: str = "auto", eps: float | None = None) -> TransportResult:
    """Quadratic Wasserstein distance between two densities of the same kind."""
    a, b = to_measure(mu), to_measure(nu)
    wa, wb = _check_masses(a, b)
    dropped = a.dropped + b.dropped
    if a.size == b.size and np.array_equal(a.points, b.points) and np.array_equal(wa, wb):
        # identical measures: the diagonal coupling is optimal
        return TransportResult(0.0, "identical", None, dropped=dropped)
    if a.size == 1 or b.size == 1:
        # the coupling to a single point is unique
        C = cost_matrix(a, b)
        plan = np.outer(wa, wb)
        res = TransportResult(math.sqrt(float(np.sum(plan * C))), "exact", plan)
    else:
        if mode == "auto":
            mode = "exact" if max(a.size, b.size) <= EXACT_MAX_SUPPORT else "entropic"
        limit = {"exact": EXACT_MAX_SUPPORT, "entropic": ENTROPIC_MAX_SUPPORT}.get(mode)
        if limit is not None and max(a.size, b.size) > limit:
            # refuse before allocating the cost matrix
            raise TransportError(f"{mode} transport limited to {limit} support points, "
                                 f"got {a.size} x {b.size}; coarsen or bin the inputs")
        C = cost_matrix(a, b)
        if mode == "exact":
            res = _exact(a, b, wa, wb, C)
        elif mode == "entropic":
            res = _entropic(a, b, wa, wb, C, eps)
        else:
            raise ValueError(f"unknown transport mode {mode!r}")
    res.dropped = dropped
    return res


def neg_sobolev(rho0, rho1, r: int = 2) -> float:
    """``||rho0 - rho1||_{H^{-1}}`` on the torus (``r = 2`` only)."""
    if r != 2:
        raise ValueError("only r = 2 is implemented")
    grid0 = getattr(rho0, "grid", None)
    grid1 = getattr(rho1, "grid", None)
    if grid0 is not None and grid1 is not None and grid0 != grid1:
        raise TransportError("densities live on different grids")
    grid: PositionGrid = grid0 or grid1
    if grid is None:
        raise TransportError("neg_sobolev needs at least one gridded density")
    a = np.asarray(getattr(rho0, "values", rho0), dtype=float)
    b = np.asarray(getattr(rho1, "values", rho1), dtype=float)
    ma, mb = a.sum() * grid.cell, b.sum() * grid.cell
    if abs(ma - mb) > 1e-9 * max(abs(ma), abs(mb), 1e-300):
        raise TransportError(f"unequal masses {ma:.12g} and {mb:.12g}")
    diff = grid.fft(a - b)
    k2 = grid.k2
    nz = k2 > 0
    return float(math.sqrt(np.sum(np.abs(diff[nz]) ** 2 / k2[nz]) / grid.L**grid.d))


def marginal_x(f: KineticDensity) -> SpatialDensity:
    g = f.grid
    return SpatialDensity(g.pos, f.values.sum(axis=g.xi_axes) * g.dxi**g.d)


def marginal_measure(m: DiscreteMeasure, d: int) -> DiscreteMeasure:
    """Position marginal of a phase-space point cloud (first ``d`` coordinates)."""
    return DiscreteMeasure(m.points[:, :d], m.weights, m.period[:d], m.dropped, m.spacing)


def wh_bracket(f: KineticDensity, state: MixedState, symbol_mu: KineticDensity | None = None,
               mode: str = "auto", husimi_f: KineticDensity | None = None) -> WhBracket:
    """Certified bounds for the semiclassical pseudo-distance between ``f`` and ``state``.

    ``husimi_f`` may pass a precomputed Husimi transform of ``state`` on ``f.grid``.
    """
    from .phasespace import husimi, wigner

    d, hbar = f.grid.d, state.hbar
    floor = math.sqrt(d * hbar)
    if husimi_f is None:
        husimi_f = husimi(wigner(state, f.grid), hbar)
    wh = w2(f, husimi_f, mode).value
    lower = max(floor, math.sqrt(max(0.0, wh**2 - d * hbar)))
    if symbol_mu is not None:
        ws = w2(f, symbol_mu, mode).value
        upper = ws + math.sqrt(2 * d * hbar)
    else:
        ws, upper = None, math.inf
    return WhBracket(lower, upper, hbar, wh, ws)
