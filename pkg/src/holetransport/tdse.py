"""Two-atom Schrodinger dynamics on a 2D configuration-space grid.

The state psi(x1, x2) is stored as an (n, n) complex array indexed [i1, i2],
so exchanging the atoms is a transpose.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.fft as sfft

from .core import (
    NumericalFailure,
    GridSpec,
    PhysicalParams,
    Symmetry,
    TrapLayout,
    TrapSchedule,
    fft_friendly,
    interaction_strength,
    potential_value,
    trap_positions,
)

log = logging.getLogger(__name__)

MIN_SEPARATION = 8.0


class FrameStoreError(ValueError):
    pass


@dataclass(frozen=True)
class Grid2D:
    x_min: float = -16.0
    x_max: float = 16.0
    points_per_axis: int = 256
    dt: float = 0.005
    frame_stride: int = 100

    def __post_init__(self):
        if not fft_friendly(self.points_per_axis):
            raise ValueError("points_per_axis must be 2^k or 3*2^k")
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")
        if self.dt <= 0 or self.frame_stride < 1:
            raise ValueError("dt must be positive and frame_stride >= 1")

    @classmethod
    def from_spec(cls, spec: GridSpec) -> "Grid2D":
        return cls(spec.x_min, spec.x_max, int(spec.points_per_axis), spec.dt, int(spec.frame_stride))

    @property
    def dx(self) -> float:
        # periodic grid: x_max is identified with x_min
        return (self.x_max - self.x_min) / self.points_per_axis

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.points_per_axis)

    @property
    def k(self) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.points_per_axis, d=self.dx)

    def check_covers(self, d_max: float, margin: float = 5.0):
        if self.x_max < d_max + margin or self.x_min > -d_max - margin:
            raise ValueError(f"grid [{self.x_min}, {self.x_max}] does not cover traps at +-{d_max} with margin {margin}")
        if self.dx > 0.2:
            raise ValueError(f"grid spacing {self.dx:.3f} exceeds 0.2")


@dataclass
class Wavefunction2D:
    amplitudes: np.ndarray
    grid: Grid2D
    symmetry: Symmetry
    t: float = 0.0

    def norm(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real * self.grid.dx**2)

    def density(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def symmetry_error(self) -> float:
        return symmetry_error(self.amplitudes, self.symmetry)

    def copy(self) -> "Wavefunction2D":
        return Wavefunction2D(self.amplitudes.copy(), self.grid, self.symmetry, self.t)


def symmetry_error(psi: np.ndarray, symmetry: Symmetry) -> float:
    """Relative L2 violation of psi(x2, x1) = -/+ psi(x1, x2)."""
    diff = psi - symmetry.sign * psi.T
    return float(np.linalg.norm(diff) / np.linalg.norm(psi))


def single_atom_ground(x, center: float = 0.0):
    """Isolated-well ground state pi^(-1/4) exp(-(x - center)^2 / 2)."""
    x = np.asarray(x, dtype=float)
    return np.pi**-0.25 * np.exp(-0.5 * (x - center) ** 2)


# Occupied traps (0-based) for each hole site, ordered as (atom-1 trap, atom-2 trap)
# in the first product term.
_OCCUPIED = {1: (1, 2), 2: (2, 0), 3: (0, 1)}


def _pair_state(orbitals, a, b, sign) -> np.ndarray:
    fa, fb = orbitals[a], orbitals[b]
    return (np.multiply.outer(fa, fb) + sign * np.multiply.outer(fb, fa)) / math.sqrt(2.0)


def localized_hole_state(hole_site: int, layout: TrapLayout, symmetry: Symmetry, grid: Grid2D,
                         check_separation: bool = True) -> Wavefunction2D:
    """Two atoms in the traps not labelled ``hole_site``, (anti)symmetrized and grid-normalized."""
    symmetry = Symmetry(symmetry)
    if hole_site not in _OCCUPIED:
        raise ValueError("hole_site must be 1, 2 or 3")
    if len(layout.centers) != 3:
        raise ValueError("localized hole states need a three-trap layout")
    if check_separation and min(layout.distances) < MIN_SEPARATION:
        raise ValueError(f"traps overlap: distances {layout.distances} below {MIN_SEPARATION}")
    x = grid.x
    orbitals = [single_atom_ground(x, c) for c in layout.centers]
    psi = _pair_state(orbitals, *_OCCUPIED[hole_site], symmetry.sign).astype(complex)
    psi /= math.sqrt(np.vdot(psi, psi).real * grid.dx**2)
    return Wavefunction2D(psi, grid, symmetry)


def _orthonormal_orbitals(layout: TrapLayout, grid: Grid2D):
    """Lowdin-orthonormalized trap ground states (Wannier-like when traps overlap)."""
    x = grid.x
    phi = np.array([single_atom_ground(x, c) for c in layout.centers])
    s = phi @ phi.T * grid.dx
    w, v = np.linalg.eigh(s)
    s_inv_half = v @ np.diag(w**-0.5) @ v.T
    return s_inv_half @ phi


def hole_populations(psi: Wavefunction2D, layout: TrapLayout) -> np.ndarray:
    """Populations of the three hole states built from orthonormalized trap orbitals."""
    orb = _orthonormal_orbitals(layout, psi.grid)
    dx2 = psi.grid.dx**2
    # M[a, b] = <w_a(x1) w_b(x2) | psi>
    m = orb @ psi.amplitudes @ orb.T * dx2
    s = psi.symmetry.sign
    out = np.empty(3)
    for site, (a, b) in _OCCUPIED.items():
        amp = (m[a, b] + s * m[b, a]) / math.sqrt(2.0)
        out[site - 1] = abs(amp) ** 2
    return out


def fidelity(final: Wavefunction2D, target_hole_site: int, layout: TrapLayout,
             symmetry: Optional[Symmetry] = None) -> float:
    """|<target | final>|^2 with the target built on the same grid."""
    symmetry = final.symmetry if symmetry is None else Symmetry(symmetry)
    if symmetry is not final.symmetry:
        raise ValueError("fermionic and bosonic states are orthogonal by parity; symmetry mismatch")
    target = localized_hole_state(target_hole_site, layout, symmetry, final.grid)
    ov = np.vdot(target.amplitudes, final.amplitudes) * final.grid.dx**2
    return float(min(abs(ov) ** 2, 1.0))


def counterdiagonal_population(psi: Wavefunction2D, band_halfwidth: float = 1.0) -> float:
    """Probability within |x1 + x2| <= band_halfwidth."""
    if band_halfwidth <= 0:
        raise ValueError("band_halfwidth must be positive")
    x = psi.grid.x
    dx = psi.grid.dx
    # sums x1 + x2 sit on a lattice of spacing dx; a one-cell ramp at the band edge
    # gives half weight to points exactly on it (trapezoid rule)
    w = np.clip((band_halfwidth - np.abs(x[:, None] + x[None, :])) / dx + 0.5, 0.0, 1.0)
    return float(np.sum(psi.density() * w) * dx**2)


def boundary_population(psi: Wavefunction2D, fraction: float = 0.05) -> float:
    """Probability within the outer ``fraction`` of the domain along either axis."""
    x = psi.grid.x
    width = fraction * (psi.grid.x_max - psi.grid.x_min)
    edge = (x < psi.grid.x_min + width) | (x > psi.grid.x_max - width)
    mask = edge[:, None] | edge[None, :]
    return float(np.sum(psi.density()[mask]) * psi.grid.dx**2)


def contact_kernel(grid: Grid2D, g: float, sigma: Optional[float] = None) -> np.ndarray:
    """Grid representation of g*delta(x1 - x2).

    ``sigma=0`` (default) puts g/dx on the diagonal cells only, which is exactly
    inert on antisymmetric states. ``sigma > 0`` uses a normalized Gaussian of that
    width in x1 - x2 instead.
    """
    sigma = 0.0 if sigma is None else sigma
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return np.diag(np.full(grid.points_per_axis, g / grid.dx))
    x = grid.x
    r = x[:, None] - x[None, :]
    return g * np.exp(-0.5 * (r / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))


# ---------------------------------------------------------------------------
# frame store
# ---------------------------------------------------------------------------

MAGIC = b"QHWF"
VERSION = 1
_HEADER = struct.Struct("<4sIIddIdB")
_SYM_CODE = {Symmetry.FERMIONIC: 0, Symmetry.BOSONIC: 1}


class FrameWriter:
    """Streams frames to a QHWF file and patches frame_count on close."""

    def __init__(self, path, grid: Grid2D, frame_dt: float, symmetry: Symmetry):
        self.path = Path(path)
        self.grid = grid
        self.frame_dt = frame_dt
        self.symmetry = Symmetry(symmetry)
        self.count = 0
        self._fh = open(self.path, "wb")
        self._fh.write(self._header())

    def _header(self) -> bytes:
        g = self.grid
        return _HEADER.pack(MAGIC, VERSION, g.points_per_axis, g.x_min, g.x_max, self.count,
                            self.frame_dt, _SYM_CODE[self.symmetry])

    def write(self, psi: np.ndarray):
        self._fh.write(np.ascontiguousarray(psi, dtype="<c16").tobytes())
        self.count += 1

    def close(self):
        if self._fh.closed:
            return
        self._fh.seek(0)
        self._fh.write(self._header())
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class FrameStore:
    """Read-only view of a QHWF file; frames are memory-mapped."""

    path: Path
    grid: Grid2D
    frame_dt: float
    symmetry: Symmetry
    frames: np.ndarray

    @property
    def count(self) -> int:
        return self.frames.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.frame_dt * np.arange(self.count)

    def wavefunction(self, k: int) -> Wavefunction2D:
        return Wavefunction2D(np.array(self.frames[k]), self.grid, self.symmetry, k * self.frame_dt)

    @classmethod
    def open(cls, path) -> "FrameStore":
        path = Path(path)
        with open(path, "rb") as fh:
            raw = fh.read(_HEADER.size)
        if len(raw) < _HEADER.size:
            raise FrameStoreError(f"{path}: truncated header")
        magic, version, n, x_min, x_max, count, frame_dt, sym = _HEADER.unpack(raw)
        if magic != MAGIC:
            raise FrameStoreError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise FrameStoreError(f"{path}: unsupported version {version}")
        if sym not in (0, 1):
            raise FrameStoreError(f"{path}: bad symmetry code {sym}")
        expected = _HEADER.size + count * n * n * 16
        if path.stat().st_size < expected:
            raise FrameStoreError(f"{path}: file shorter than {count} frames")
        frames = np.memmap(path, dtype="<c16", mode="r", offset=_HEADER.size, shape=(count, n, n))
        # dt and stride are not part of the format; frame_dt carries the timing
        grid = Grid2D(x_min, x_max, n, dt=frame_dt if frame_dt > 0 else 1.0, frame_stride=1)
        symmetry = Symmetry.FERMIONIC if sym == 0 else Symmetry.BOSONIC
        return cls(path, grid, frame_dt, symmetry, frames)


# ---------------------------------------------------------------------------
# propagation
# ---------------------------------------------------------------------------

@dataclass
class RunReport:
    fidelities: dict = field(default_factory=dict)
    max_middle_population: float = 0.0
    counterdiagonal_population: float = 0.0
    norm_drift: float = 0.0
    symmetry_error: float = 0.0
    boundary_population: float = 0.0
    leakage_warning: bool = False
    config_hash: str = ""
    seed: int = 0
    trace: dict = field(default_factory=dict)
    echo: dict = field(default_factory=dict)

    def fidelity(self, i: int, j: int) -> float:
        return self.fidelities[f"F_{i}to{j}"]

    def to_dict(self, with_trace: bool = False) -> dict:
        d = dataclasses.asdict(self)
        if not with_trace:
            d.pop("trace")
        return d

    def to_json(self, path, with_trace: bool = False):
        with open(path, "w") as fh:
            json.dump(self.to_dict(with_trace), fh, indent=2, sort_keys=True)


def _potential_1d(x, schedule: TrapSchedule, t: float) -> np.ndarray:
    t = min(max(t, 0.0), schedule.total_time)
    return potential_value(x, trap_positions(schedule, t))


def evolve(initial: Wavefunction2D, schedule: TrapSchedule, params: PhysicalParams, grid: Optional[Grid2D] = None,
           frames_path=None, sigma_delta: Optional[float] = None, t_final: Optional[float] = None,
           hole_site: Optional[int] = None, band_halfwidth: float = 1.0):
    """Strang split-step propagation of ``initial`` through ``schedule``.

    Each step applies exp(-i dt/2 V(t_mid)) exp(-i dt K) exp(-i dt/2 V(t_mid)).
    The two potential half-steps of consecutive steps are fused into one
    multiplication; the state is completed to a full step before every stored
    frame. Diagnostics are sampled at frame times.

    Returns ``(final, frames, report)`` where ``frames`` is an open
    :class:`FrameStore` when ``frames_path`` is given, otherwise None.
    """
    grid = initial.grid if grid is None else grid
    if grid.points_per_axis != initial.grid.points_per_axis:
        raise ValueError("initial state does not live on the propagation grid")
    if grid.dt > 0.01:
        raise ValueError("dt must not exceed 0.01")
    sym = initial.symmetry
    if abs(initial.norm() - 1.0) > 1e-8:
        raise ValueError(f"initial state not normalized (norm={initial.norm()})")
    if initial.symmetry_error() > 1e-10:
        raise ValueError("initial state violates its exchange symmetry")

    T = schedule.total_time if t_final is None else t_final
    dt = grid.dt
    n_steps = int(round((T - initial.t) / dt))
    x = grid.x
    dx2 = grid.dx**2

    k = grid.k
    ek = np.exp(-0.5j * dt * k**2)
    kinetic = np.multiply.outer(ek, ek)
    g = interaction_strength(params)
    contact = None
    if g != 0.0:
        contact = np.exp(-0.5j * dt * contact_kernel(grid, g, sigma_delta))

    contact_full = None if contact is None else contact * contact

    def phase(v1d, fused):
        # fused=True covers two potential half-steps: v1d is their summed potential
        e = np.exp(-0.5j * dt * v1d)
        out = np.multiply.outer(e, e)
        if contact is not None:
            out *= contact_full if fused else contact
        return out

    psi = initial.amplitudes.astype(complex, copy=True)
    t0 = initial.t
    stride = grid.frame_stride

    writer = None
    if frames_path is not None:
        writer = FrameWriter(frames_path, grid, stride * dt, sym)
        writer.write(psi)

    trace = {"t": [], "norm": [], "p1": [], "p2": [], "p3": [], "counterdiag": [], "sym_err": []}
    boundary_max = 0.0

    def sample(t_now, amps):
        nonlocal boundary_max
        wf = Wavefunction2D(amps, grid, sym, t_now)
        layout = trap_positions(schedule, min(t_now, schedule.total_time))
        pops = hole_populations(wf, layout)
        nrm = wf.norm()
        trace["t"].append(t_now)
        trace["norm"].append(nrm)
        trace["p1"].append(pops[0])
        trace["p2"].append(pops[1])
        trace["p3"].append(pops[2])
        trace["counterdiag"].append(counterdiagonal_population(wf, band_halfwidth))
        trace["sym_err"].append(wf.symmetry_error())
        boundary_max = max(boundary_max, boundary_population(wf))
        if abs(nrm - 1.0) > 1e-6:
            raise NumericalFailure(f"norm drift {nrm - 1.0:.3e} at t={t_now:.3f}")

    sample(t0, psi)
    pending = None  # potential half-step still owed to the state
    for step in range(n_steps):
        t_mid = t0 + (step + 0.5) * dt
        v = _potential_1d(x, schedule, t_mid)
        if pending is None:
            psi *= phase(v, False)
        else:
            psi *= phase(v + pending, True)
        psi = sfft.ifft2(sfft.fft2(psi, overwrite_x=True) * kinetic, overwrite_x=True)
        pending = v
        if (step + 1) % stride == 0 or step + 1 == n_steps:
            psi *= phase(pending, False)
            pending = None
            t_now = t0 + (step + 1) * dt
            if (step + 1) % stride == 0:
                if writer is not None:
                    writer.write(psi)
                sample(t_now, psi)
            elif trace["t"][-1] != t_now:
                sample(t_now, psi)

    t_end = t0 + n_steps * dt
    if writer is not None:
        writer.close()
    final = Wavefunction2D(psi, grid, sym, t_end)

    report = RunReport()
    norms = np.array(trace["norm"])
    report.norm_drift = float(np.max(np.abs(norms - 1.0)))
    report.symmetry_error = float(max(trace["sym_err"]))
    report.counterdiagonal_population = float(max(trace["counterdiag"]))
    report.max_middle_population = float(max(trace["p2"]))
    report.boundary_population = boundary_max
    report.leakage_warning = boundary_max > 1e-6
    if report.leakage_warning:
        log.warning("boundary density %.2e exceeds 1e-6; results may be affected by wraparound", boundary_max)
    report.trace = trace
    end_layout = trap_positions(schedule, min(t_end, schedule.total_time))
    if min(end_layout.distances) >= MIN_SEPARATION:
        for j in (1, 2, 3):
            f = fidelity(final, j, end_layout)
            key = f"F_{hole_site}to{j}" if hole_site is not None else f"F_to{j}"
            report.fidelities[key] = f
    frames = FrameStore.open(frames_path) if frames_path is not None else None
    return final, frames, report


def energy(psi: Wavefunction2D, layout: TrapLayout, params: PhysicalParams, sigma_delta: Optional[float] = None) -> float:
    """<psi|H|psi> with the spectral kinetic energy."""
    grid = psi.grid
    a = psi.amplitudes
    k = grid.k
    ksq = 0.5 * (k[:, None] ** 2 + k[None, :] ** 2)
    ak = sfft.fft2(a)
    kin = float(np.sum(ksq * np.abs(ak) ** 2).real) / a.size * grid.dx**2
    v = potential_value(grid.x, layout)
    vtot = v[:, None] + v[None, :]
    g = interaction_strength(params)
    if g != 0.0:
        vtot = vtot + contact_kernel(grid, g, sigma_delta)
    pot = float(np.sum(vtot * np.abs(a) ** 2)) * grid.dx**2
    return (kin + pot) / psi.norm()


def imaginary_time_relax(initial: Wavefunction2D, layout: TrapLayout, params: PhysicalParams, steps: int = 200,
                         dtau: float = 0.01, sigma_delta: Optional[float] = None):
    """Normalized imaginary-time split-step with exchange projection every step.

    Returns ``(state, energies)`` with one energy per iteration (first entry is
    the input energy).
    """
    grid = initial.grid
    sym = initial.symmetry
    k = grid.k
    ek = np.exp(-0.5 * dtau * k**2)
    kinetic = np.multiply.outer(ek, ek)
    v = potential_value(grid.x, layout)
    ev = np.exp(-0.5 * dtau * v)
    half = np.multiply.outer(ev, ev)
    g = interaction_strength(params)
    if g != 0.0:
        half = half * np.exp(-0.5 * dtau * contact_kernel(grid, g, sigma_delta))
    psi = initial.amplitudes.astype(complex, copy=True)
    energies = [energy(initial, layout, params, sigma_delta)]
    for _ in range(steps):
        psi *= half
        psi = sfft.ifft2(sfft.fft2(psi) * kinetic)
        psi *= half
        psi = 0.5 * (psi + sym.sign * psi.T)
        psi /= math.sqrt(np.vdot(psi, psi).real * grid.dx**2)
        wf = Wavefunction2D(psi, grid, sym, initial.t)
        err = wf.symmetry_error()
        if err > 1e-8:
            raise RuntimeError(f"symmetry collapse during relaxation (error {err:.2e})")
        energies.append(energy(wf, layout, params, sigma_delta))
    return Wavefunction2D(psi, grid, sym, initial.t), energies
