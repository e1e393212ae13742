"""Command-line entry point: ``semikin {simulate,sweep,compare,audit,report}``."""
from __future__ import annotations

import argparse
import csv
import glob
import json
import os
import sys

from . import hartree as qh
from .checkpoint import CheckpointError, read_checkpoint, read_header, write_checkpoint
from .harness import ConfigError, RunConfig, bracket, initial_density, initial_state, phase_distance, run_sweep
from .vlasov import KineticDensity, classical_observers, vevolve

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3

SWEEP_CSV = ("hbar", "w2", "wh_lo", "wh_hi", "w2_init", "sup_M4", "sup_rho", "energy_drift",
             "schatten_drift", "valid")
AUDIT_CSV = ("trial", "hbar", "lhs", "rhs", "ratio", "margin")


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, default=float))


def cmd_simulate(args) -> int:
    cfg = RunConfig.from_toml(args.config)
    out = args.out or cfg.output
    os.makedirs(out, exist_ok=True)
    f0 = initial_density(cfg)
    if args.engine == "vlasov":
        kernel = cfg.make_kernel(cfg.position_grid())
        write_checkpoint(os.path.join(out, "vlasov_initial.ckpt"), f0)
        fT, series = vevolve(f0, kernel, cfg.vlasov_T, cfg.vlasov_dt, cfg.observe.stride,
                             classical_observers(kernel))
        write_checkpoint(os.path.join(out, "vlasov_final.ckpt"), fT)
        name = "vlasov"
    else:
        hbar = cfg.hbars[0]
        state = initial_state(cfg, hbar, f0)
        kernel = cfg.make_kernel(state.grid)
        write_checkpoint(os.path.join(out, "hartree_initial.ckpt"), state)
        stateT, series = qh.evolve(state, kernel, cfg.hartree.T, cfg.hartree.dt, cfg.observe.stride,
                                   qh.quantum_observers(kernel))
        write_checkpoint(os.path.join(out, "hartree_final.ckpt"), stateT)
        name = "hartree"
    series.write_csv(os.path.join(out, f"series_{name}.csv"))
    with open(os.path.join(out, f"series_{name}.json"), "w") as fh:
        json.dump(series.to_dict(), fh, indent=2, sort_keys=True, default=float)
    _emit({"engine": name, "steps": len(series), "t_final": series.times[-1], "output": out})
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = RunConfig.from_toml(args.config)
    out = args.out or cfg.output
    report = run_sweep(cfg, out)
    verdict = report.check()
    _emit({"regression": report.regression, "rows": len(report.rows), "check": verdict,
           "output": os.path.join(out, "sweep.json")})
    if args.check and not verdict["passed"]:
        print("acceptance thresholds not met", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def cmd_compare(args) -> int:
    a, b = read_checkpoint(args.a), read_checkpoint(args.b)
    cfg = RunConfig()
    if isinstance(a, qh.MixedState) and isinstance(b, KineticDensity):
        a, b = b, a
    if isinstance(a, KineticDensity) and isinstance(b, qh.MixedState):
        cfg.grid.L, cfg.grid.N, cfg.grid.d = a.grid.pos.L, a.grid.pos.N, a.grid.d
        res, br, _ = bracket(a, b, cfg)
        _emit({"w2": res.value, "wh_lo": br.lower, "wh_hi": None if not br.has_upper else br.upper})
        return EXIT_OK
    if isinstance(a, qh.MixedState) and isinstance(b, qh.MixedState):
        # both sides through their Husimi transforms
        from .harness import distance_grid
        from .phasespace import husimi, wigner
        fa = husimi(wigner(a, distance_grid(a, a.grid.L, a.grid.N)), a.hbar)
        fb = husimi(wigner(b, distance_grid(b, b.grid.L, b.grid.N)), b.hbar)
        res = phase_distance(fa, fb, cfg)
    elif type(a) is type(b):
        from .transport import w2
        res = w2(a, b, cfg.transport.mode)
    else:
        raise CheckpointError(f"cannot compare {type(a).__name__} with {type(b).__name__}")
    _emit({"w2": res.value, "method": res.method, "feasibility_gap": res.feasibility_gap})
    return EXIT_OK


def cmd_audit(args) -> int:
    from . import audits

    params = json.loads(args.params) if args.params else None
    if args.name == "moment_propagation":
        sc = audits.MomentScenario(**(params or {}))
        rep = audits.audit_moment_propagation(sc)
    elif args.name in ("quantum_interpolation", "weighted_interpolation"):
        rep = audits.AUDITS[args.name](args.trials, args.seed, params, toeplitz_every=args.toeplitz_every)
    elif args.name in audits.AUDITS:
        rep = audits.AUDITS[args.name](args.trials, args.seed)
    else:
        raise ConfigError(f"unknown audit {args.name!r}; expected one of "
                          f"{sorted(list(audits.AUDITS) + ['moment_propagation'])}")
    if args.out:
        os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
        rep.to_json(args.out)
    summary = {"name": rep.name, "trials": rep.trials, "max_ratio": rep.max_ratio,
               "violations": rep.violations, "worst_margin": rep.worst_margin, **rep.extra}
    _emit(summary)
    if args.check:
        ok = rep.violations == 0 and rep.extra.get("bucket_uniform_3x", True)
        if not ok:
            print("audit thresholds not met", file=sys.stderr)
            return EXIT_CHECK
    return EXIT_OK


def _write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow(["" if r.get(c) is None else r.get(c) for c in columns])


def cmd_report(args) -> int:
    src = args.inp
    if not os.path.isdir(src):
        raise ConfigError(f"{src} is not a directory")
    listing = []
    for path in sorted(glob.glob(os.path.join(src, "*.ckpt"))):
        head = read_header(path)
        listing.append({"file": os.path.basename(path), "kind": head["kind"], "dims": head["dims"],
                        "hbar": head.get("hbar"), "t": head.get("t")})
    written = []
    for path in sorted(glob.glob(os.path.join(src, "*.json"))):
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError:
                continue
        stem = os.path.splitext(path)[0]
        if isinstance(data, dict) and "rows" in data and "regression" in data:
            _write_csv(stem + "_rows.csv", SWEEP_CSV, data["rows"])
            written.append(stem + "_rows.csv")
        elif isinstance(data, dict) and "records" in data:
            _write_csv(stem + "_records.csv", AUDIT_CSV, data["records"])
            written.append(stem + "_records.csv")
    _emit({"checkpoints": listing, "csv": written})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="semikin", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one evolution")
    s.add_argument("--config", required=True)
    s.add_argument("--engine", choices=("hartree", "vlasov"), default="hartree")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_simulate)

    s = sub.add_parser("sweep", help="paired Vlasov/Hartree experiment over hbar")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.add_argument("--check", action="store_true", help="exit 3 when acceptance thresholds fail")
    s.set_defaults(fn=cmd_sweep)

    s = sub.add_parser("compare", help="distance between two checkpoints")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.set_defaults(fn=cmd_compare)

    s = sub.add_parser("audit", help="randomized inequality audits")
    s.add_argument("--name", required=True)
    s.add_argument("--trials", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--params", help="JSON object of audit parameters")
    s.add_argument("--toeplitz-every", type=int, default=5)
    s.add_argument("--out", help="JSON report path")
    s.add_argument("--check", action="store_true")
    s.set_defaults(fn=cmd_audit)

    s = sub.add_parser("report", help="CSV plot data and checkpoint headers from a run directory")
    s.add_argument("--in", dest="inp", required=True)
    s.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.fn(args)
    except (ConfigError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
