"""Run configuration, the ħ-sweep experiment and its report."""
from __future__ import annotations

import concurrent.futures as cf
import copy
import datetime as _dt
import hashlib
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import hartree as qh
from .checkpoint import write_checkpoint
from .grid import GridError, PhaseGrid, PositionGrid
from .kernels import FAMILIES, make_kernel
from .phasespace import CoherentFamily, coherent_state, husimi, lag_band, toeplitz_quantize, wigner
from .transport import (ENTROPIC_MAX_SUPPORT, EXACT_MAX_SUPPORT, DiscreteMeasure, WhBracket, to_measure,
                        w2)
from .vlasov import KineticDensity, classical_observers, from_function, point_mass, vevolve

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    pass


# --- configuration -----------------------------------------------------------

@dataclass
class GridSpec:
    d: int = 1
    L: float = 16.0
    N: int = 256
    Nxi: int = 256
    Xi: float = 8.0


@dataclass
class KernelSpec:
    family: str = "smooth-cosine"
    sign: int = -1
    a: float | None = None
    eps_reg: float | None = None
    width: float = 1.0


@dataclass
class HartreeSpec:
    dt: float = 1e-3
    T: float = 1.0
    hbar: list = field(default_factory=lambda: [2.0**-k for k in range(4, 10)])
    rank: int = 1024
    p_max: float | None = None


@dataclass
class VlasovSpec:
    dt: float | None = None
    T: float | None = None
    Nxi: int | None = None
    Xi: float | None = None


@dataclass
class InitSpec:
    profile: str = "point"
    x0: float | None = None
    xi0: float = 0.0
    sx: float = 1.0
    sxi: float = 1.0
    toeplitz: bool = True


@dataclass
class ObserveSpec:
    stride: float = 0.1


@dataclass
class TransportSpec:
    mode: str = "auto"
    bin: list | None = None


PROFILES = ("point", "gaussian", "bump")

SCENARIOS = {
    "default": {},
    "smooth": {},
    "singular": {"kernel": {"family": "power-law", "a": 0.5, "sign": -1}},
    "free": {"kernel": {"family": "zero", "sign": 1}},
}

SLOPE_WINDOWS = {"zero": (0.45, 0.55), "power-law": (0.35, 0.7)}
DEFAULT_SLOPE_WINDOW = (0.4, 0.65)
ENERGY_DRIFT_MAX = 1e-5
SCHATTEN_DRIFT_MAX = 1e-10


@dataclass
class RunConfig:
    scenario: str = "default"
    seed: int = 0
    output: str = "out"
    workers: int | None = None
    grid: GridSpec = field(default_factory=GridSpec)
    kernel: KernelSpec = field(default_factory=KernelSpec)
    hartree: HartreeSpec = field(default_factory=HartreeSpec)
    vlasov: VlasovSpec = field(default_factory=VlasovSpec)
    init: InitSpec = field(default_factory=InitSpec)
    observe: ObserveSpec = field(default_factory=ObserveSpec)
    transport: TransportSpec = field(default_factory=TransportSpec)

    # resolved views -------------------------------------------------------
    @property
    def hbars(self) -> list[float]:
        return sorted(self.hartree.hbar, reverse=True)

    @property
    def vlasov_dt(self) -> float:
        return self.vlasov.dt if self.vlasov.dt is not None else self.hartree.dt

    @property
    def vlasov_T(self) -> float:
        return self.vlasov.T if self.vlasov.T is not None else self.hartree.T

    def position_grid(self) -> PositionGrid:
        return PositionGrid(self.grid.d, self.grid.L, self.grid.N)

    def phase_grid(self) -> PhaseGrid:
        return PhaseGrid(self.position_grid(), self.grid.Xi, self.grid.Nxi)

    def eps_reg(self) -> float | None:
        k = self.kernel
        if k.eps_reg is not None:
            return k.eps_reg
        if k.family == "power-law" and k.a is not None and k.a >= self.grid.d - 1:
            # held fixed across hbar: twice the phase-grid spacing
            return 2 * self.grid.L / self.grid.N
        return None

    def make_kernel(self, grid: PositionGrid):
        k = self.kernel
        return make_kernel(k.family, k.sign, k.a, self.eps_reg(), grid, k.width)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    # parsing --------------------------------------------------------------
    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = copy.deepcopy(data)
        name = data.get("scenario", "default")
        if name not in SCENARIOS:
            raise ConfigError(f"unknown scenario {name!r}; expected one of {sorted(SCENARIOS)}")
        merged = copy.deepcopy(SCENARIOS[name])
        for key, val in data.items():
            if isinstance(val, dict) and isinstance(merged.get(key), dict):
                merged[key].update(val)
            else:
                merged[key] = val
        for key in ("Nxi", "Xi"):
            g, v = merged.get("grid", {}), merged.get("vlasov", {})
            if isinstance(g, dict) and isinstance(v, dict) and key in g and key in v and g[key] != v[key]:
                raise ConfigError(f"grid.{key} and vlasov.{key} disagree")
        sections = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, val in merged.items():
            if key not in sections:
                raise ConfigError(f"unknown config key {key!r}")
            default = sections[key].default_factory() if callable(sections[key].default_factory) else None
            if is_section(default):
                if not isinstance(val, dict):
                    raise ConfigError(f"[{key}] must be a table")
                known = {f.name for f in fields(default)}
                extra = set(val) - known
                if extra:
                    raise ConfigError(f"unknown keys in [{key}]: {sorted(extra)}")
                kwargs[key] = type(default)(**val)
            else:
                kwargs[key] = val
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def from_toml(cls, path) -> "RunConfig":
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        return cls.from_dict(data)

    def validate(self) -> None:
        g, h, v = self.grid, self.hartree, self.vlasov
        if isinstance(h.hbar, (int, float)):
            h.hbar = [float(h.hbar)]
        if not h.hbar or any(not (isinstance(x, (int, float)) and x > 0) for x in h.hbar):
            raise ConfigError("hartree.hbar must be a positive number or list of positive numbers")
        h.hbar = [float(x) for x in h.hbar]
        # [vlasov] Nxi / Xi override the grid section; conflicting values are rejected
        for key in ("Nxi", "Xi"):
            val = getattr(v, key)
            if val is not None:
                setattr(g, key, val)
        if g.d not in (1, 2):
            raise ConfigError("grid.d must be 1 or 2")
        if g.N < 8 or g.Nxi < 8 or g.Nxi % 2:
            raise ConfigError("grid.N must be >= 8 and grid.Nxi even and >= 8")
        if not (g.L > 0 and g.Xi > 0):
            raise ConfigError("grid.L and grid.Xi must be positive")
        for name, dt, T in (("hartree", h.dt, h.T), ("vlasov", self.vlasov_dt, self.vlasov_T)):
            if not dt > 0 or T < 0:
                raise ConfigError(f"{name}.dt must be positive and {name}.T nonnegative")
            if T > 0 and abs(round(T / dt) * dt - T) > 1e-9 * T:
                raise ConfigError(f"{name}.T = {T} is not a whole number of steps {dt}")
        s = self.observe.stride
        if s < 0 or (s > 0 and h.T > 0 and abs(round(h.T / s) * s - h.T) > 1e-9 * h.T):
            raise ConfigError("observe.stride must divide hartree.T")
        if s > 0 and abs(round(s / h.dt) * h.dt - s) > 1e-9 * s:
            raise ConfigError("observe.stride must be a whole number of steps")
        k = self.kernel
        if k.family not in FAMILIES:
            raise ConfigError(f"kernel.family must be one of {FAMILIES}")
        if k.sign not in (1, -1):
            raise ConfigError("kernel.sign must be +1 or -1")
        if k.family == "power-law" and k.a is None:
            raise ConfigError("power-law kernels need kernel.a")
        if self.init.profile not in PROFILES:
            raise ConfigError(f"init.profile must be one of {PROFILES}")
        if not self.init.toeplitz and self.init.profile != "point":
            raise ConfigError("init.toeplitz = false is only meaningful for the point profile")
        if abs(self.init.xi0) >= g.Xi:
            raise ConfigError("init.xi0 lies outside the velocity box")
        t = self.transport
        if t.mode not in ("auto", "exact", "entropic"):
            raise ConfigError("transport.mode must be auto, exact or entropic")
        if t.bin is not None and (len(t.bin) != 2 or min(t.bin) < 2):
            raise ConfigError("transport.bin must be [Nx, Nxi] with entries >= 2")
        limit = EXACT_MAX_SUPPORT if t.mode == "exact" else ENTROPIC_MAX_SUPPORT
        support = self.support_estimate()
        if support > limit:
            raise ConfigError(f"initial data has about {support} phase-space support points, above the "
                              f"{t.mode} transport limit {limit}; set transport.bin")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def support_estimate(self) -> int:
        if self.transport.bin is not None:
            return int(self.transport.bin[0] ** self.grid.d * self.transport.bin[1] ** self.grid.d)
        if self.init.profile == "point":
            return 1
        vals = initial_density(self).values
        return int(np.count_nonzero(vals > 1e-12 * vals.max()))


def is_section(obj) -> bool:
    return obj is not None and hasattr(obj, "__dataclass_fields__")


# --- initial data ------------------------------------------------------------

def _bump(u):
    out = np.zeros_like(u)
    m = np.abs(u) < 1
    out[m] = np.exp(-1 / (1 - u[m] ** 2))
    return out


def initial_density(cfg: RunConfig) -> KineticDensity:
    pg = cfg.phase_grid()
    d, ini = pg.d, cfg.init
    x0 = np.full(d, pg.pos.center) if ini.x0 is None else np.full(d, float(ini.x0))
    xi0 = np.full(d, float(ini.xi0))
    if ini.profile == "point":
        return point_mass(pg, x0, xi0)

    def fn(*m):
        xs, xis = m[:d], m[d:]
        ux = [pg.pos.periodic_delta(xs[i], x0[i]) / ini.sx for i in range(d)]
        uxi = [(xis[i] - xi0[i]) / ini.sxi for i in range(d)]
        if ini.profile == "gaussian":
            return np.exp(-0.5 * (sum(u**2 for u in ux) + sum(u**2 for u in uxi)))
        out = np.ones(pg.shape)
        for u in ux + uxi:
            out = out * _bump(u)
        return out
    return from_function(fn, pg)


def state_grid(cfg: RunConfig, hbar: float) -> PositionGrid:
    """Refinement ``N 2^m`` of the phase grid whose momentum lattice reaches ``p_max``."""
    p_need = cfg.hartree.p_max if cfg.hartree.p_max is not None else cfg.grid.Xi
    N = cfg.grid.N
    while math.pi * hbar * N / cfg.grid.L < p_need * (1 - 1e-12):
        N *= 2
    return PositionGrid(cfg.grid.d, cfg.grid.L, N)


def initial_state(cfg: RunConfig, hbar: float, f0: KineticDensity | None = None) -> qh.MixedState:
    grid = state_grid(cfg, hbar)
    fam = CoherentFamily(hbar, grid)
    if not cfg.init.toeplitz:
        x0 = np.full(grid.d, grid.center) if cfg.init.x0 is None else np.full(grid.d, float(cfg.init.x0))
        return coherent_state(fam, x0, np.full(grid.d, float(cfg.init.xi0)))
    if f0 is None:
        f0 = initial_density(cfg)
    return toeplitz_quantize(fam, f0, j_max=cfg.hartree.rank)


# --- distances ---------------------------------------------------------------

def distance_grid(state: qh.MixedState, L: float, N_base: int) -> PhaseGrid:
    """Phase grid fine enough for the Wigner and Husimi transforms of ``state``."""
    sg, hbar = state.grid, state.hbar
    root = math.sqrt(hbar)
    p_pop = qh.populated_momentum(state, 1e-14)
    # x-frequencies of the Wigner function reach 2 p_pop / h cycles per unit length
    dx_max = min(root / 2, state.h / (4.5 * max(p_pop, 1e-300)))
    N = N_base
    while L / N > dx_max and N < sg.N:
        N *= 2
    pos = PositionGrid(sg.d, L, N)
    p_max = math.pi * hbar * sg.N / L
    Xi = min(p_max, p_pop + 8 * root)
    _, reach = lag_band(state, PhaseGrid(pos, Xi, 8))
    # the discrete xi-smoothing is a trapezoid sum over a Gaussian of width sqrt(hbar/2)
    # times a Wigner function oscillating at up to reach/h; keep a margin beyond both
    dxi = 1.0 / (reach / state.h + 3.0 / root)
    Nxi = max(8, math.ceil(2 * Xi / dxi))
    Nxi += Nxi % 2
    return PhaseGrid(pos, Xi, Nxi)


def bin_measure(m: DiscreteMeasure, L: float, Xi: float, nx: int, nxi: int, d: int) -> DiscreteMeasure:
    """Aggregate a phase-space point cloud onto the centres of a coarse grid."""
    dx, dxi = L / nx, 2 * Xi / nxi
    ix = np.mod(np.round(m.points[:, :d] / dx).astype(int), nx)
    ixi = np.clip(np.floor((m.points[:, d:] + Xi) / dxi).astype(int), 0, nxi - 1)
    keys = np.concatenate([ix, ixi], axis=1)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    w = np.zeros(len(uniq))
    np.add.at(w, inv.reshape(-1), m.weights)
    pts = np.concatenate([uniq[:, :d] * dx, -Xi + (uniq[:, d:] + 0.5) * dxi], axis=1)
    return DiscreteMeasure(pts, w, m.period, m.dropped, max(dx, dxi))


def phase_distance(f: KineticDensity, g: KineticDensity, cfg: RunConfig):
    a, b = to_measure(f), to_measure(g)
    if cfg.transport.bin is not None:
        nx, nxi = cfg.transport.bin
        Xi = max(f.grid.Xi, g.grid.Xi)
        a = bin_measure(a, cfg.grid.L, Xi, nx, nxi, cfg.grid.d)
        b = bin_measure(b, cfg.grid.L, Xi, nx, nxi, cfg.grid.d)
    return w2(a, b, cfg.transport.mode)


def bracket(f: KineticDensity, state: qh.MixedState, cfg: RunConfig, symbol: KineticDensity | None = None):
    """``(w2(f, husimi), WhBracket)`` with the Husimi transform on a resolving grid."""
    pg = distance_grid(state, cfg.grid.L, cfg.grid.N)
    hus = husimi(wigner(state, pg), state.hbar)
    res = phase_distance(f, hus, cfg)
    d, hbar = cfg.grid.d, state.hbar
    floor = math.sqrt(d * hbar)
    lower = max(floor, math.sqrt(max(0.0, res.value**2 - d * hbar)))
    if symbol is not None:
        ws = phase_distance(f, symbol, cfg).value
        br = WhBracket(lower, ws + math.sqrt(2 * d * hbar), hbar, res.value, ws)
    else:
        br = WhBracket(lower, math.inf, hbar, res.value, None)
    return res, br, pg


# --- sweep -------------------------------------------------------------------

def _run_vlasov(cfg: RunConfig, f0: KineticDensity):
    kernel = cfg.make_kernel(cfg.position_grid())
    fT, series = vevolve(f0, kernel, cfg.vlasov_T, cfg.vlasov_dt, cfg.observe.stride,
                         classical_observers(kernel))
    monitors = {
        "energy_drift": series.drift("energy"),
        "mass_drift": series.drift("M0"),
        "lr2_drift": series.drift("Lr2"),
        "clipped_mass": float(series.meta.get("clipped_mass", 0.0)),
        "sup_M4": float(series.array("M4").max()),
    }
    return fT, series, monitors


def run_row(cfg: RunConfig, hbar: float, f0: KineticDensity, fT: KineticDensity, out_dir: str | None = None,
            index: int = 0) -> dict:
    row = {"hbar": hbar, "status": "ok"}
    started = time.perf_counter()
    try:
        state0 = initial_state(cfg, hbar, f0)
        kernel = cfg.make_kernel(state0.grid)
        row.update(rank=state0.rank, N_state=state0.grid.N)
        _, br0, _ = bracket(f0, state0, cfg, f0 if cfg.init.toeplitz else None)
        stateT, series = qh.evolve(state0, kernel, cfg.hartree.T, cfg.hartree.dt, cfg.observe.stride,
                                   qh.quantum_observers(kernel))
        res, br, pg = bracket(fT, stateT, cfg)
        schatten = max(series.drift(k) for k in ("Lr1", "Lr2", "Lrinf"))
        row.update(
            w2=res.value, transport=res.method, feasibility_gap=res.feasibility_gap, dropped_mass=res.dropped,
            wh_lo=br.lower, wh_hi=br.upper if br.has_upper else None,
            w2_init=br0.w2_husimi, wh_init_lo=br0.lower, wh_init_hi=br0.upper if br0.has_upper else None,
            sup_M4=float(series.array("M4").max()), M4_0=float(series.array("M4")[0]),
            sup_rho=float(series.array("rho_sup").max()),
            energy_drift=series.drift("energy"), schatten_drift=schatten,
            mass_drift=series.drift("M0"), gram_drift=float(series.meta["gram_drift"]),
            distance_grid={"N": pg.pos.N, "Nxi": pg.Nxi, "Xi": pg.Xi},
        )
        row["valid"] = bool(row["energy_drift"] <= ENERGY_DRIFT_MAX and schatten <= SCHATTEN_DRIFT_MAX
                            and math.isfinite(res.value))
        if out_dir is not None:
            n = len(series)
            for name, val in (("w2", res.value), ("wh_lo", br.lower), ("wh_hi", br.upper)):
                series.columns.setdefault(name, [math.nan] * n)[-1] = val
            series.write_csv(os.path.join(out_dir, f"series_hartree_{index}.csv"))
            write_checkpoint(os.path.join(out_dir, f"state_{index}_final.ckpt"), stateT)
    except Exception as exc:  # a failed row is reported, not fatal
        row.update(status="failed", valid=False, error=f"{type(exc).__name__}: {exc}")
    row["_elapsed"] = time.perf_counter() - started
    return row


def _worker_count(cfg: RunConfig, rows: int) -> int:
    cap = int(os.environ.get("SEMIKIN_THREADS", os.cpu_count() or 1))
    want = cfg.workers if cfg.workers is not None else cap
    return max(1, min(want, cap, rows))


def regression(hbars, values, level: float = 0.95) -> dict | None:
    """Least-squares fit of ``log value`` against ``log hbar`` with a confidence band on the slope."""
    from scipy import stats

    x, y = np.log(np.asarray(hbars, float)), np.log(np.asarray(values, float))
    n = x.size
    if n < 4:
        return None
    res = stats.linregress(x, y)
    q = stats.t.ppf(0.5 + level / 2, n - 2)
    return {"slope": float(res.slope), "intercept": float(res.intercept), "stderr": float(res.stderr),
            "band": [float(res.slope - q * res.stderr), float(res.slope + q * res.stderr)],
            "level": level, "r2": float(res.rvalue**2), "n": n}


@dataclass
class SweepReport:
    rows: list
    regression: dict | None
    vlasov: dict
    meta: dict
    timestamps: dict = field(default_factory=dict)

    def monotone(self, band: float = 0.2) -> bool:
        """W2 nonincreasing as hbar decreases, up to a relative noise band."""
        vals = [r["w2"] for r in self.rows if r.get("valid")]
        return all(b <= a * (1 + band) for a, b in zip(vals, vals[1:]))

    def slope_window(self) -> tuple[float, float]:
        return SLOPE_WINDOWS.get(self.meta["config"]["kernel"]["family"], DEFAULT_SLOPE_WINDOW)

    def check(self) -> dict:
        """Acceptance thresholds: slope window and conservation monitors on every row."""
        lo, hi = self.slope_window()
        slope = self.regression["slope"] if self.regression else math.nan
        out = {
            "rows_valid": all(r.get("valid") for r in self.rows),
            "slope_in_window": bool(lo <= slope <= hi),
            "vlasov_energy": self.vlasov["energy_drift"] <= ENERGY_DRIFT_MAX,
        }
        out["passed"] = all(out.values())
        return out

    def to_dict(self, timestamps: bool = True) -> dict:
        d = asdict(self)
        if not timestamps:
            d.pop("timestamps")
        return d

    def to_json(self, timestamps: bool = True) -> str:
        return json.dumps(self.to_dict(timestamps), indent=2, sort_keys=True, default=_json_default)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


def versions() -> dict:
    import scipy

    from . import __version__
    out = {"semikin": __version__, "numpy": np.__version__, "scipy": scipy.__version__}
    try:
        from importlib.metadata import version
        out["pot"] = version("POT")
    except Exception:
        out["pot"] = None
    return out


def run_sweep(cfg: RunConfig, out_dir: str | None = None) -> SweepReport:
    """Paired Vlasov/Hartree experiment over the configured ħ list."""
    hbars = cfg.hbars
    if len(hbars) < 4 or hbars[0] / hbars[-1] < 4 * (1 - 1e-12):
        raise ConfigError("a sweep needs at least 4 hbar values spanning 2 octaves")
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    t0 = time.perf_counter()
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    f0 = initial_density(cfg)
    fT, vseries, vmon = _run_vlasov(cfg, f0)
    if out_dir is not None:
        vseries.write_csv(os.path.join(out_dir, "series_vlasov.csv"))
        write_checkpoint(os.path.join(out_dir, "vlasov_final.ckpt"), fT)
    workers = _worker_count(cfg, len(hbars))
    if workers == 1:
        rows = [run_row(cfg, hb, f0, fT, out_dir, i) for i, hb in enumerate(hbars)]
    else:
        with cf.ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(run_row, cfg, hb, f0, fT, out_dir, i) for i, hb in enumerate(hbars)]
            rows = [fu.result() for fu in futs]
    elapsed = {str(r["hbar"]): r.pop("_elapsed") for r in rows}
    good = [r for r in rows if r.get("valid")]
    reg = regression([r["hbar"] for r in good], [r["w2"] for r in good]) if len(good) >= 4 else None
    meta = {"config": cfg.to_dict(), "config_hash": cfg.digest(), "versions": versions()}
    stamps = {"started": started, "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
              "elapsed": time.perf_counter() - t0, "row_elapsed": elapsed, "workers": workers}
    report = SweepReport(rows, reg, vmon, meta, stamps)
    if out_dir is not None:
        report.write(os.path.join(out_dir, "sweep.json"))
    return report
