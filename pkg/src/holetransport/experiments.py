"""Transport studies built on the TDSE: fidelity maps, diode, transistor, jitter."""
from __future__ import annotations

import csv
import itertools
import json
import logging
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import NumericalFailure, RunConfig, Symmetry, trap_positions
from .tdse import Grid2D, RunReport, evolve, localized_hole_state

log = logging.getLogger(__name__)

WORKERS_ENV = "HOLETRANSPORT_WORKERS"
SWEEP_AXES = {"t_delay": "1/omega_x", "d_min": "1/alpha", "alpha_as": "dimensionless"}


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            log.warning("ignoring non-integer %s=%r", WORKERS_ENV, raw)
    return 1


def run_transport(config: RunConfig, frames_path=None) -> RunReport:
    """Prepare the localized hole state, evolve it and tag the report with the config."""
    grid = Grid2D.from_spec(config.grid)
    grid.check_covers(config.schedule.d_max)
    sigma = config.grid.sigma_delta_cells * grid.dx
    sym = config.params.symmetry
    psi0 = localized_hole_state(config.hole_site, trap_positions(config.schedule, 0.0), sym, grid)
    try:
        _, frames, report = evolve(psi0, config.schedule, config.params, grid, frames_path=frames_path,
                                   sigma_delta=sigma, hole_site=config.hole_site)
    except NumericalFailure as exc:
        raise NumericalFailure(f"{exc} [config {config.config_hash()}]") from exc
    if frames is not None:
        del frames  # release the memmap; caller reopens if needed
    report.config_hash = config.config_hash()
    report.seed = config.seed
    report.echo = config.to_dict()
    return report


# ---------------------------------------------------------------------------
# tables
# ---------------------------------------------------------------------------

@dataclass
class Table:
    """Rows in fixed grid order; columns carry units for the CSV header."""

    columns: list
    units: dict
    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def column(self, name) -> np.ndarray:
        return np.array([r.get(name, np.nan) for r in self.rows], dtype=float)

    def to_csv(self, path, echo: Optional[dict] = None):
        with open(path, "w", newline="") as fh:
            if echo is not None:
                fh.write("# config: " + json.dumps(echo, sort_keys=True) + "\n")
            w = csv.writer(fh)
            w.writerow([f"{c} [{self.units.get(c, '-')}]" for c in self.columns])
            for r in self.rows:
                w.writerow([_fmt(r.get(c)) for c in self.columns])

    def summary(self, echo: Optional[dict] = None) -> dict:
        out = dict(self.meta)
        out["rows"] = len(self.rows)
        out["failed_rows"] = sum(1 for r in self.rows if r.get("error"))
        if echo is not None:
            out["config"] = echo
        return out

    def to_json(self, path, echo: Optional[dict] = None):
        with open(path, "w") as fh:
            json.dump(self.summary(echo), fh, indent=2, sort_keys=True)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _run_row(job):
    """Worker entry: never raises, failures go into the row."""
    label, cfg = job
    row = dict(label)
    try:
        rep = run_transport(cfg)
        row.update(rep.fidelities)
        row.update(max_middle_population=rep.max_middle_population,
                   counterdiagonal_population=rep.counterdiagonal_population,
                   norm_drift=rep.norm_drift, symmetry_error=rep.symmetry_error,
                   config_hash=rep.config_hash, error="")
    except Exception as exc:  # per-row failure, sweep continues
        row["error"] = f"{type(exc).__name__}: {exc}"
        row["config_hash"] = cfg.config_hash()
    return row


def run_jobs(jobs: Sequence, workers: int = 1, fn: Callable = _run_row) -> list:
    """Map fn over jobs on a bounded pool; output order follows job order."""
    workers = max(1, min(int(workers), len(jobs) or 1))
    if workers == 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def _meta(kind, started, workers):
    return {"kind": kind, "wall_clock_s": round(time.time() - started, 3), "workers": workers,
            "python": platform.python_version(), "numpy": np.__version__}


_DIAG = ["max_middle_population", "counterdiagonal_population", "norm_drift", "symmetry_error", "config_hash", "error"]
_DIAG_UNITS = {"max_middle_population": "probability", "counterdiagonal_population": "probability",
               "norm_drift": "dimensionless", "symmetry_error": "dimensionless", "config_hash": "-", "error": "-"}


def sweep_fidelity(axes: Sequence, base: RunConfig, workers: int = 1) -> Table:
    """One transport run per point of the product grid over (name, values) axes."""
    if not 1 <= len(axes) <= 2:
        raise ValueError("sweep needs one or two axes")
    for name, values in axes:
        if name not in SWEEP_AXES:
            raise ValueError(f"cannot sweep {name!r}; choose from {sorted(SWEEP_AXES)}")
        if len(values) < 1:
            raise ValueError(f"axis {name} is empty")
    started = time.time()
    names = [a[0] for a in axes]
    jobs = []
    for combo in itertools.product(*[a[1] for a in axes]):
        label = {n: float(v) for n, v in zip(names, combo)}
        jobs.append((label, base.with_overrides(**label)))
    rows = run_jobs(jobs, workers)
    h = base.hole_site
    fcols = [f"F_{h}to{j}" for j in (1, 2, 3)]
    units = {n: SWEEP_AXES[n] for n in names} | {c: "probability" for c in fcols} | _DIAG_UNITS
    return Table(names + fcols + _DIAG, units, rows, _meta("sweep", started, workers))


def diode_fidelity(f13: float, f31: float) -> float:
    return f13 * (1.0 - f31)


def transistor_fidelity(f13_fermi: float, f13_bose: float) -> float:
    return f13_fermi * (1.0 - f13_bose)


def diode_scan(as_values: Sequence[float], base: RunConfig, workers: int = 1) -> Table:
    """Bosonic runs with the hole starting left and right under one schedule."""
    if base.params.symmetry is not Symmetry.BOSONIC:
        base = base.with_overrides(symmetry=Symmetry.BOSONIC.value)
    started = time.time()
    jobs = []
    for a in as_values:
        for hole in (1, 3):
            jobs.append(({"alpha_as": float(a), "hole_site": hole},
                         base.with_overrides(alpha_as=float(a), hole_site=hole)))
    raw = run_jobs(jobs, workers)
    rows = []
    for left, right in zip(raw[::2], raw[1::2]):
        row = {"alpha_as": left["alpha_as"]}
        row["F_1to3"] = left.get("F_1to3", np.nan)
        row["F_3to1"] = right.get("F_3to1", np.nan)
        row["F_3to2"] = right.get("F_3to2", np.nan)
        row["F_D"] = diode_fidelity(row["F_1to3"], row["F_3to1"])
        row["error"] = "; ".join(e for e in (left["error"], right["error"]) if e)
        rows.append(row)
    cols = ["alpha_as", "F_1to3", "F_3to1", "F_3to2", "F_D", "error"]
    units = {"alpha_as": "dimensionless", "F_1to3": "probability", "F_3to1": "probability",
             "F_3to2": "probability", "F_D": "probability", "error": "-"}
    return Table(cols, units, rows, _meta("diode", started, workers))


def _transistor_jobs(cfg: RunConfig, label: dict):
    return [(dict(label, symmetry=s.value), cfg.with_overrides(symmetry=s.value, hole_site=1))
            for s in (Symmetry.FERMIONIC, Symmetry.BOSONIC)]


def _combine_transistor(label, fermi, bose) -> dict:
    row = dict(label)
    row["F13_fermionic"] = fermi.get("F_1to3", np.nan)
    row["F13_bosonic"] = bose.get("F_1to3", np.nan)
    row["F_T"] = transistor_fidelity(row["F13_fermionic"], row["F13_bosonic"])
    row["error"] = "; ".join(e for e in (fermi["error"], bose["error"]) if e)
    return row


def transistor_eval(base: RunConfig, workers: int = 1) -> dict:
    """Same schedule in both exchange sectors; F_T = F13^F (1 - F13^B)."""
    fermi, bose = run_jobs(_transistor_jobs(base, {}), workers)
    row = _combine_transistor({"alpha_as": base.params.alpha_as}, fermi, bose)
    row["config_hash"] = base.config_hash()
    return row


def jitter_robustness(amplitudes: Sequence[float], omegas: Sequence[float], base: RunConfig,
                      workers: int = 1) -> Table:
    started = time.time()
    jobs, labels = [], []
    for a, w in itertools.product(amplitudes, omegas):
        label = {"A_s": float(a), "omega_s": float(w)}
        cfg = base.with_overrides(jitter={"A_s": float(a), "omega_s": float(w)})
        labels.append(label)
        jobs.extend(_transistor_jobs(cfg, label))
    raw = run_jobs(jobs, workers)
    rows = [_combine_transistor(lab, f, b) for lab, f, b in zip(labels, raw[::2], raw[1::2])]
    cols = ["A_s", "omega_s", "F13_fermionic", "F13_bosonic", "F_T", "error"]
    units = {"A_s": "1/alpha", "omega_s": "omega_x", "F13_fermionic": "probability",
             "F13_bosonic": "probability", "F_T": "probability", "error": "-"}
    return Table(cols, units, rows, _meta("jitter", started, workers))
