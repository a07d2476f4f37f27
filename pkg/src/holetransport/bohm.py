"""Bohmian trajectories post-processed from stored TDSE frames.

Velocities come from v_i = Im(d_i psi / psi) (hbar = m = 1), evaluated with
centered differences on the grid and bilinear interpolation between cells.
Trajectories never feed back into the wavefunction.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .tdse import FrameStore, Grid2D, Wavefunction2D

DENSITY_FLOOR = 1e-12
MAX_HALVINGS = 8
NODE_FRACTION = 1e-6


class SamplerFailure(RuntimeError):
    pass


class LowDensity(ArithmeticError):
    """Raised when the velocity is requested where |psi|^2 is below the floor."""


class Flag(IntEnum):
    OK = 0
    LOW_DENSITY_CLIPPED = 1
    LEFT_DOMAIN = 2


# ---------------------------------------------------------------------------
# grid interpolation helpers
# ---------------------------------------------------------------------------

def _corners(grid: Grid2D, pos: np.ndarray):
    n = grid.points_per_axis
    f = (pos - grid.x_min) / grid.dx
    i0 = np.floor(f).astype(np.int64)
    w = f - i0
    i0 %= n
    i1 = (i0 + 1) % n
    return i0, i1, w


def bilinear(field_: np.ndarray, grid: Grid2D, pos: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of a periodic (n, n) field at positions (..., 2)."""
    pos = np.asarray(pos, dtype=float)
    i0, i1, w = _corners(grid, pos.reshape(-1, 2))
    a, b = i0[:, 0], i0[:, 1]
    c, d = i1[:, 0], i1[:, 1]
    wx, wy = w[:, 0], w[:, 1]
    out = ((1 - wx) * (1 - wy) * field_[a, b] + wx * (1 - wy) * field_[c, b]
           + (1 - wx) * wy * field_[a, d] + wx * wy * field_[c, d])
    return out.reshape(pos.shape[:-1])


@dataclass
class VelocityField:
    """Per-frame velocity components and density on the grid."""

    v1: np.ndarray
    v2: np.ndarray
    rho: np.ndarray

    @classmethod
    def from_amplitudes(cls, psi: np.ndarray, dx: float, density_floor: float = DENSITY_FLOOR):
        rho = np.abs(psi) ** 2
        d1 = (np.roll(psi, -1, axis=0) - np.roll(psi, 1, axis=0)) / (2 * dx)
        d2 = (np.roll(psi, -1, axis=1) - np.roll(psi, 1, axis=1)) / (2 * dx)
        safe = np.where(rho > density_floor, rho, 1.0)
        cpsi = np.conj(psi)
        # Im(d psi / psi) = Im(conj(psi) d psi) / |psi|^2
        v1 = np.where(rho > density_floor, (cpsi * d1).imag / safe, 0.0)
        v2 = np.where(rho > density_floor, (cpsi * d2).imag / safe, 0.0)
        return cls(v1, v2, rho)

    def at(self, grid: Grid2D, pos: np.ndarray):
        v = np.stack([bilinear(self.v1, grid, pos), bilinear(self.v2, grid, pos)], axis=-1)
        return v, bilinear(self.rho, grid, pos)


def velocity_field(psi: Wavefunction2D, at, density_floor: float = DENSITY_FLOOR) -> np.ndarray:
    """Bohmian velocity (v1, v2) at one or more configuration-space points."""
    vf = VelocityField.from_amplitudes(psi.amplitudes, psi.grid.dx, density_floor)
    at = np.asarray(at, dtype=float)
    v, rho = vf.at(psi.grid, at)
    if np.any(rho <= density_floor):
        raise LowDensity(f"|psi|^2 below {density_floor:g} at {np.count_nonzero(rho <= density_floor)} point(s)")
    return v


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def sample_initial(psi0: Wavefunction2D, count: int, seed: int, batch: int = 65536,
                   min_acceptance: float = 1e-4) -> np.ndarray:
    """Draw `count` points distributed as |psi0|^2 by rejection sampling.

    Proposals are uniform over the periodic domain and accepted with probability
    rho(x)/max(rho), rho being the bilinear interpolant of |psi0|^2.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    g = psi0.grid
    rho = psi0.density()
    top = float(rho.max())
    if top <= 0:
        raise SamplerFailure("state has zero density everywhere")
    rng = np.random.default_rng(seed)
    span = g.x_max - g.x_min - g.dx
    out = np.empty((0, 2))
    proposed = accepted = 0
    while len(out) < count:
        prop = g.x_min + span * rng.random((batch, 2))
        u = rng.random(batch)
        keep = u * top < bilinear(rho, g, prop)
        proposed += batch
        accepted += int(keep.sum())
        if proposed >= 10 * batch and accepted / proposed < min_acceptance:
            raise SamplerFailure(f"acceptance rate {accepted / proposed:.2e} below {min_acceptance:g}")
        out = np.concatenate([out, prop[keep]])
    if proposed and accepted / proposed < min_acceptance:
        raise SamplerFailure(f"acceptance rate {accepted / proposed:.2e} below {min_acceptance:g}")
    return out[:count]


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------

@dataclass
class TrajectoryEnsemble:
    seed: Optional[int]
    times: np.ndarray          # (F,)
    positions: np.ndarray      # (N, F, 2)
    speeds: np.ndarray         # (N, F), instantaneous |v| at frame times
    flags: np.ndarray          # (N,), Flag values
    substeps: np.ndarray = field(default=None)  # (N,) total substeps used
    warning: Optional[str] = None

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    def flag_counts(self) -> dict:
        return {f.name.lower().replace("_", "-"): int(np.sum(self.flags == f)) for f in Flag}

    def to_csv(self, path, stride: int = 1, comment: Optional[str] = None):
        """Columns trajectory_id, t, x1, x2, speed, flag; every `stride`-th frame plus the last."""
        idx = np.arange(0, len(self.times), stride)
        if idx[-1] != len(self.times) - 1:
            idx = np.append(idx, len(self.times) - 1)
        names = [Flag(f).name.lower().replace("_", "-") for f in self.flags]
        with open(path, "w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            w = csv.writer(fh)
            w.writerow(["trajectory_id", "t", "x1", "x2", "speed", "flag"])
            for j in range(self.count):
                for k in idx:
                    x1, x2 = self.positions[j, k]
                    w.writerow([j, f"{self.times[k]:.6f}", f"{x1:.10e}", f"{x2:.10e}",
                                f"{self.speeds[j, k]:.10e}", names[j]])


def _rk4_interval(pos, fa, fb, grid, h, m, floor):
    """m RK4 substeps across one frame interval; velocity blended linearly in time."""
    def vel(p, s):
        va, ra = fa.at(grid, p)
        vb, rb = fb.at(grid, p)
        return (1 - s)[:, None] * va + s[:, None] * vb, (1 - s) * ra + s * rb

    sub = h / m
    p = pos.copy()
    low = np.zeros(len(p), bool)
    big = np.zeros(len(p), bool)
    for j in range(m):
        s0 = np.full(len(p), j / m)
        k1, r1 = vel(p, s0)
        k2, r2 = vel(p + 0.5 * sub * k1, s0 + 0.5 / m)
        k3, r3 = vel(p + 0.5 * sub * k2, s0 + 0.5 / m)
        k4, r4 = vel(p + sub * k3, s0 + 1.0 / m)
        step = sub / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        low |= (np.minimum(np.minimum(r1, r2), np.minimum(r3, r4)) <= floor)
        big |= np.max(np.abs(step), axis=1) > 0.5 * grid.dx
        p = p + step
    return p, low, big


def integrate_trajectories(frames: FrameStore, initial: np.ndarray, seed: Optional[int] = None,
                           start: int = 0, stop: Optional[int] = None,
                           density_floor: float = DENSITY_FLOOR, max_flagged: float = 0.01) -> TrajectoryEnsemble:
    """Integrate x' = v(x, t) through the stored frames [start, stop].

    Each frame interval uses a per-trajectory power-of-two number of RK4 substeps,
    chosen so that no substep moves more than half a cell. A trajectory whose
    substeps run into |psi|^2 <= density_floor is refined up to MAX_HALVINGS
    times; if that does not help it is frozen for the interval and flagged.
    """
    stop = frames.count - 1 if stop is None else stop
    if frames.frame_dt > 0.5 + 1e-12:
        raise ValueError(f"frame spacing {frames.frame_dt} exceeds 0.5")
    if not 0 <= start < stop < frames.count:
        raise ValueError("need at least two frames in [start, stop]")
    g = frames.grid
    h = frames.frame_dt
    pos = np.array(initial, dtype=float).reshape(-1, 2)
    n = len(pos)
    nf = stop - start + 1
    traj = np.empty((n, nf, 2))
    speeds = np.empty((n, nf))
    flags = np.zeros(n, dtype=np.int8)
    frozen = np.zeros(n, bool)
    used = np.zeros(n, dtype=np.int64)
    lo, hi = g.x_min, g.x_max - g.dx

    fb = VelocityField.from_amplitudes(np.asarray(frames.frames[start]), g.dx, density_floor)
    for k in range(nf):
        traj[:, k] = pos
        v0, _ = fb.at(g, pos)
        speeds[:, k] = np.hypot(v0[:, 0], v0[:, 1])
        if k == nf - 1:
            break
        fa = fb
        fb = VelocityField.from_amplitudes(np.asarray(frames.frames[start + k + 1]), g.dx, density_floor)
        vb, _ = fb.at(g, pos)
        vmax = np.maximum(speeds[:, k], np.hypot(vb[:, 0], vb[:, 1]))
        need = np.maximum(1.0, vmax * h / (0.5 * g.dx))
        m = (2 ** np.ceil(np.log2(need))).astype(np.int64)
        todo = np.flatnonzero(~frozen)
        tries = 0
        while todo.size:
            new_todo = []
            for mm in np.unique(m[todo]):
                grp = todo[m[todo] == mm]
                p, low, big = _rk4_interval(pos[grp], fa, fb, g, h, int(mm), density_floor)
                bad = low | big
                good = grp[~bad]
                pos[good] = p[~bad]
                used[good] += mm
                if tries < MAX_HALVINGS:
                    new_todo.append(grp[bad])
                else:
                    # give up: hold position rather than jump across a node
                    clip = grp[bad & low]
                    flags[clip] = np.maximum(flags[clip], Flag.LOW_DENSITY_CLIPPED)
                    keep = grp[bad & ~low]
                    pos[keep] = p[bad & ~low]
                    used[grp[bad]] += mm
            todo = np.concatenate(new_todo) if new_todo else np.empty(0, np.int64)
            m[todo] *= 2
            tries += 1
        out = np.any((pos < lo) | (pos > hi), axis=1) & ~frozen
        if out.any():
            pos[out] = np.clip(pos[out], lo, hi)
            flags[out] = Flag.LEFT_DOMAIN
            frozen |= out

    ens = TrajectoryEnsemble(seed, frames.times[start:stop + 1].copy(), traj, speeds, flags, used)
    frac = float(np.mean(flags != Flag.OK)) if n else 0.0
    if frac > max_flagged:
        ens.warning = f"{frac:.1%} of trajectories flagged (limit {max_flagged:.0%})"
        warnings.warn(ens.warning, RuntimeWarning, stacklevel=2)
    return ens


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

def occupied_extent(density: np.ndarray, grid: Grid2D, tol: float = 1e-6):
    """Symmetric box [-L, L] holding every cell with density above tol * max."""
    x = grid.x
    mask = density > tol * density.max()
    ii, jj = np.nonzero(mask)
    reach = max(np.abs(x[ii]).max(), np.abs(x[jj]).max()) + grid.dx
    return (-float(reach), float(reach))


def coarse_tv(positions: np.ndarray, density: np.ndarray, grid: Grid2D, cells: int = 8, extent=None) -> float:
    """Total-variation distance between sample histogram and grid density on cells x cells."""
    positions = np.asarray(positions).reshape(-1, 2)
    if extent is None:
        extent = occupied_extent(density, grid)
    edges = np.linspace(extent[0], extent[1], cells + 1)
    x = grid.x
    # assign grid cells to coarse cells; mass outside the box goes to an overflow bin
    bx = np.clip(np.searchsorted(edges, x, side="right") - 1, -1, cells)
    bx = np.where((x < extent[0]) | (x >= extent[1]), cells, bx)
    p = np.zeros((cells + 1, cells + 1))
    np.add.at(p, (bx[:, None], bx[None, :]), density)
    p /= p.sum()
    # samples use the same cell convention: sample position x belongs to grid cell round((x - x_min)/dx)
    idx = np.rint((positions - grid.x_min) / grid.dx).astype(int) % grid.points_per_axis
    sb = bx[idx]
    q = np.zeros_like(p)
    np.add.at(q, (sb[:, 0], sb[:, 1]), 1.0)
    q /= max(len(positions), 1)
    return 0.5 * float(np.abs(p - q).sum())


def crossing_times(ens: TrajectoryEnsemble, band_halfwidth: float = 1.0) -> np.ndarray:
    """First frame time each trajectory enters |x1 + x2| <= band (nan if never)."""
    inside = np.abs(ens.positions[..., 0] + ens.positions[..., 1]) <= band_halfwidth
    first = np.argmax(inside, axis=1)
    return np.where(inside.any(axis=1), ens.times[first], np.nan)


def min_pair_distance(ens: TrajectoryEnsemble, k: int) -> float:
    tree = cKDTree(ens.positions[:, k])
    d, _ = tree.query(ens.positions[:, k], k=2)
    return float(d[:, 1].min())


def ensemble_statistics(ens: TrajectoryEnsemble, psi_final: Wavefunction2D, cells: int = 8,
                        band_halfwidth: float = 1.0, extent=None, speed_factor: float = 5.0) -> dict:
    if ens.count == 0:
        raise ValueError("empty ensemble")
    g = psi_final.grid
    rho = psi_final.density()
    final = ens.positions[:, -1]
    tv = coarse_tv(final, rho * g.dx**2, g, cells, extent)
    max_speed = ens.speeds.max(axis=1)
    median = float(np.median(ens.speeds))
    inside = np.abs(ens.positions[..., 0] + ens.positions[..., 1]) <= band_halfwidth
    crossers = inside.any(axis=1)
    band_speed = np.where(inside, ens.speeds, 0.0).max(axis=1)
    fast = band_speed >= speed_factor * median
    node = bilinear(rho, g, final) < NODE_FRACTION * rho.max()
    return {
        "count": ens.count,
        "seed": ens.seed,
        "tv_distance": tv,
        "cells": cells,
        "median_speed": median,
        "max_speeds": max_speed,
        "crossing_times": crossing_times(ens, band_halfwidth),
        "crossers": int(crossers.sum()),
        "fast_crossers": int((fast & crossers).sum()),
        "fast_crosser_fraction": float((fast & crossers).sum() / crossers.sum()) if crossers.any() else float("nan"),
        "terminated_in_nodes": int(node.sum()),
        "flag_counts": ens.flag_counts(),
        "warning": ens.warning,
    }


def statistics_json(stats: dict, path, extra: Optional[dict] = None):
    def conv(v):
        if isinstance(v, np.ndarray):
            return [None if (isinstance(a, float) and math.isnan(a)) else a for a in v.tolist()]
        if isinstance(v, float) and math.isnan(v):
            return None
        return v

    out = {k: conv(v) for k, v in stats.items()}
    if extra:
        out.update(extra)
    Path(path).write_text(json.dumps(out, indent=2))
