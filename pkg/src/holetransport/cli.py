"""Command-line entry point.

Exit codes: 0 success, 2 usage/config error, 3 data-file error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bohm, experiments
from .core import ConfigError, NumericalFailure, RunConfig, load_config
from .holechain import (
    DegenerateDarkState,
    HoleChainModel,
    chain_couplings_from_schedule,
    chain_hamiltonian,
    even_odd_pulse_schedule,
    multisite_dark_state,
    propagate_chain,
)
from .tdse import FrameStore, FrameStoreError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("holetransport")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def parse_grid(spec: str):
    """'name=start:stop:count' -> (name, values)."""
    try:
        name, rng = spec.split("=", 1)
        start, stop, count = rng.split(":")
        start, stop, count = float(start), float(stop), int(count)
    except ValueError:
        raise UsageError(f"malformed grid spec {spec!r}; expected name=start:stop:count") from None
    if count < 1 or not name:
        raise UsageError(f"malformed grid spec {spec!r}; count must be >= 1")
    return name.strip(), np.linspace(start, stop, count)


_OVERRIDES = {
    "symmetry": "symmetry", "alpha_as": "alpha_as", "hole_site": "hole_site", "t_delay": "t_delay",
    "d_min": "d_min", "d_max": "d_max", "t_ramp": "t_ramp", "t_hold": "t_hold", "points": "points_per_axis",
    "dt": "dt", "seed": "seed",
}


def effective_config(args) -> RunConfig:
    """defaults < config file < command-line flags."""
    if args.config is not None:
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        try:
            cfg = load_config(path)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from None
    else:
        cfg = RunConfig()
    kw = {}
    for attr, key in _OVERRIDES.items():
        v = getattr(args, attr, None)
        if v is not None:
            kw[key] = v
    return cfg.with_overrides(**kw) if kw else cfg


def echo_block(cfg: RunConfig, **extra) -> dict:
    out = {"config": cfg.to_dict(), "config_hash": cfg.config_hash()}
    out.update(extra)
    return out


def _hash_dict(d: dict) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def _add_config_flags(p):
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--symmetry", choices=["fermionic", "bosonic"])
    p.add_argument("--alpha-as", dest="alpha_as", type=float, help="scaled scattering length alpha*a_s")
    p.add_argument("--hole-site", dest="hole_site", type=int, choices=[1, 2, 3])
    p.add_argument("--t-delay", dest="t_delay", type=float)
    p.add_argument("--d-min", dest="d_min", type=float)
    p.add_argument("--d-max", dest="d_max", type=float)
    p.add_argument("--t-ramp", dest="t_ramp", type=float)
    p.add_argument("--t-hold", dest="t_hold", type=float)
    p.add_argument("--points", type=int, help="grid points per axis")
    p.add_argument("--dt", type=float)
    p.add_argument("--seed", type=int)


def _add_pool_flags(p):
    p.add_argument("--grid", action="append", default=[], metavar="NAME=START:STOP:COUNT")
    p.add_argument("--workers", type=int, default=None,
                   help=f"worker processes (default ${experiments.WORKERS_ENV} or 1)")
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--summary", help="optional JSON summary")


def _workers(args) -> int:
    w = args.workers if args.workers is not None else experiments.default_workers()
    if w < 1:
        raise UsageError("--workers must be >= 1")
    return w


def _grids(args, allowed) -> dict:
    out = {}
    for spec in args.grid:
        name, values = parse_grid(spec)
        if name not in allowed:
            raise UsageError(f"grid axis {name!r} not supported here; choose from {sorted(allowed)}")
        if name in out:
            raise UsageError(f"grid axis {name!r} given twice")
        out[name] = values
    return out


def _write_table(table, args, echo):
    table.to_csv(args.out, echo)
    if args.summary:
        table.to_json(args.summary, echo)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_transport(args) -> int:
    cfg = effective_config(args)
    rep = experiments.run_transport(cfg, frames_path=args.frames)
    out = Path(args.out) if args.out else Path(f"report_{cfg.config_hash()}.json")
    rep.to_json(out, with_trace=args.trace)
    for key, val in rep.fidelities.items():
        print(f"{key} {val:.6f}")
    if not rep.fidelities:
        print("no fidelities: final traps closer than the localization threshold")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = effective_config(args)
    grids = _grids(args, experiments.SWEEP_AXES)
    if not grids:
        raise UsageError("sweep needs at least one --grid")
    table = experiments.sweep_fidelity(list(grids.items()), cfg, _workers(args))
    _write_table(table, args, echo_block(cfg, axes={k: v.tolist() for k, v in grids.items()}))
    return EXIT_OK


def cmd_diode(args) -> int:
    cfg = effective_config(args)
    grids = _grids(args, {"alpha_as"})
    values = grids.get("alpha_as", np.linspace(0.0, 0.03, 13))
    table = experiments.diode_scan(values, cfg, _workers(args))
    _write_table(table, args, echo_block(cfg, alpha_as=values.tolist()))
    best = max(table.rows, key=lambda r: np.nan_to_num(r["F_D"], nan=-1))
    print(f"max F_D {best['F_D']:.6f} at alpha_as {best['alpha_as']:.6g}")
    return EXIT_OK


def cmd_transistor(args) -> int:
    cfg = effective_config(args)
    row = experiments.transistor_eval(cfg, _workers(args))
    out = dict(row, **echo_block(cfg))
    Path(args.out).write_text(json.dumps(out, indent=2, sort_keys=True))
    print(f"F_T {row['F_T']:.6f}")
    return EXIT_OK if not row["error"] else EXIT_NUMERIC


def cmd_jitter(args) -> int:
    cfg = effective_config(args)
    grids = _grids(args, {"A_s", "omega_s"})
    amps = grids.get("A_s", np.array([0.3]))
    omegas = grids.get("omega_s", np.array([0.1]))
    table = experiments.jitter_robustness(amps, omegas, cfg, _workers(args))
    _write_table(table, args, echo_block(cfg, A_s=amps.tolist(), omega_s=omegas.tolist()))
    return EXIT_OK


def cmd_bohm(args) -> int:
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    if args.stride < 1:
        raise UsageError("--stride must be >= 1")
    try:
        frames = FrameStore.open(args.frames)
    except FileNotFoundError:
        raise FrameStoreError(f"frame store not found: {args.frames}") from None
    if frames.count < 2:
        raise FrameStoreError(f"{args.frames}: needs at least two frames")
    psi0 = frames.wavefunction(0)
    init = bohm.sample_initial(psi0, args.count, args.seed)
    ens = bohm.integrate_trajectories(frames, init, seed=args.seed)
    stats = bohm.ensemble_statistics(ens, frames.wavefunction(frames.count - 1))
    echo = {"frames": str(args.frames), "count": args.count, "seed": args.seed, "n": frames.grid.points_per_axis,
            "x_min": frames.grid.x_min, "x_max": frames.grid.x_max, "frame_dt": frames.frame_dt,
            "frame_count": frames.count, "symmetry": frames.symmetry.value}
    echo["config_hash"] = _hash_dict(echo)
    ens.to_csv(args.out, stride=args.stride, comment="config: " + json.dumps(echo, sort_keys=True))
    if args.stats:
        bohm.statistics_json(stats, args.stats, {"config": echo})
    print(f"tv_distance {stats['tv_distance']:.4f} flagged {sum(v for k, v in stats['flag_counts'].items() if k != 'ok')}")
    return EXIT_OK


def cmd_chain(args) -> int:
    n = args.sites
    if n < 3 or n % 2 == 0:
        raise UsageError(f"--sites must be odd and >= 3, got {n}")
    if args.step <= 0 or args.trials < 1:
        raise UsageError("--step must be positive and --trials >= 1")
    if args.verify_darkstate:
        rng = np.random.default_rng(args.seed)
        worst = 0.0
        for _ in range(args.trials):
            m = HoleChainModel(n, tuple(rng.uniform(0.01, 1.0, n - 1)))
            d = multisite_dark_state(m)
            worst = max(worst, float(np.linalg.norm(chain_hamiltonian(m) @ d)))
        print(f"dark-state residual {worst:.3e}")
        return EXIT_OK
    if args.from_schedule:
        if n != 3:
            raise UsageError("--from-schedule needs --sites 3")
        cfg = effective_config(args)
        couplings = chain_couplings_from_schedule(cfg.schedule)
        total = cfg.schedule.total_time
        echo = echo_block(cfg, sites=n, dt=args.step)
    else:
        couplings = even_odd_pulse_schedule(n, args.jpeak, args.width, args.delay, args.total)
        total = args.total
        echo = {"sites": n, "jpeak": args.jpeak, "width": args.width, "delay": args.delay,
                "total": args.total, "dt": args.step}
        echo["config_hash"] = _hash_dict(echo)
    series = propagate_chain(couplings, total, dt=args.step, n=n)
    if args.out:
        series.to_csv(args.out, comment="config: " + json.dumps(echo, sort_keys=True))
    resid = series.dark_residual()
    print(f"site {n} population {series.populations[-1, -1]:.10f}")
    print(f"max dark-state residual {resid:.3e}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="holetransport", description="Adiabatic hole transport in triple-well traps")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("transport", help="single TDSE transport run")
    _add_config_flags(t)
    t.add_argument("--frames", help="write frame store here")
    t.add_argument("--out", help="report JSON (default report_<hash>.json)")
    t.add_argument("--trace", action="store_true", help="include diagnostic time series in the report")
    t.set_defaults(func=cmd_transport)

    for name, fn, help_ in (("sweep", cmd_sweep, "fidelity map over t_delay / d_min / alpha_as"),
                            ("diode", cmd_diode, "diode scan over alpha_as"),
                            ("jitter", cmd_jitter, "transistor fidelity under trap jitter")):
        s = sub.add_parser(name, help=help_)
        _add_config_flags(s)
        _add_pool_flags(s)
        s.set_defaults(func=fn)

    tr = sub.add_parser("transistor", help="transistor fidelity for one configuration")
    _add_config_flags(tr)
    tr.add_argument("--workers", type=int, default=None)
    tr.add_argument("--out", required=True, help="output JSON")
    tr.set_defaults(func=cmd_transistor)

    b = sub.add_parser("bohm", help="Bohmian trajectories from a frame store")
    b.add_argument("--frames", required=True)
    b.add_argument("--count", type=int, default=4000)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True, help="trajectory CSV")
    b.add_argument("--stats", help="statistics JSON")
    b.add_argument("--stride", type=int, default=1, help="write every k-th frame")
    b.set_defaults(func=cmd_bohm)

    c = sub.add_parser("chain", help="n-site hole chain driven by even/odd pulses")
    c.add_argument("--sites", type=int, default=5)
    c.add_argument("--jpeak", type=float, default=0.2)
    c.add_argument("--width", type=float, default=80.0)
    c.add_argument("--delay", type=float, default=60.0)
    c.add_argument("--total", type=float, default=400.0)
    c.add_argument("--step", type=float, default=0.05, help="RK4 time step")
    c.add_argument("--out", help="site-population CSV")
    c.add_argument("--from-schedule", action="store_true", help="use trap-schedule couplings (3 sites)")
    c.add_argument("--config", help="JSON run configuration (with --from-schedule)")
    c.add_argument("--verify-darkstate", action="store_true")
    c.add_argument("--trials", type=int, default=1000)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_chain)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, DegenerateDarkState) as exc:
        key = f" [{exc.key}]" if isinstance(exc, ConfigError) else ""
        print(f"error{key}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        if isinstance(exc, FrameStoreError):
            print(f"data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
