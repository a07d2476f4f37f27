"""Three-state hole model: Hamiltonian, dark state and amplitude propagation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import NumericalFailure, TrapSchedule, tunneling_rate


def hole_hamiltonian3(j1: float, j2: float) -> np.ndarray:
    """Hole Hamiltonian (hbar = 1) in the basis {hole left, middle, right}."""
    if j1 < 0 or j2 < 0:
        raise ValueError("tunneling rates must be non-negative")
    h = np.zeros((3, 3))
    h[0, 1] = h[1, 0] = -j1
    h[1, 2] = h[2, 1] = -j2
    return h


def mixing_angle(j1, j2):
    """Theta with tan(Theta) = j1 / j2, well defined when j2 vanishes."""
    return np.arctan2(j1, j2)


def dark_state(theta: float) -> np.ndarray:
    return np.array([math.cos(theta), 0.0, -math.sin(theta)], dtype=complex)


def schedule_couplings(schedule: TrapSchedule) -> Callable[[float], np.ndarray]:
    """Hole tunneling rates (J1, J2) as a function of time for ``schedule``."""

    def couplings(t):
        d1, d2 = schedule.distances(t)
        return np.array([tunneling_rate(d1), tunneling_rate(d2)])

    return couplings


def tridiagonal(couplings) -> np.ndarray:
    j = np.asarray(couplings, dtype=float)
    return -(np.diag(j, 1) + np.diag(j, -1))


def rk4_propagate(couplings: Callable[[float], np.ndarray], c0, t0: float, t1: float, dt: float,
                  norm_tol: float = 1e-8):
    """Integrate i dc/dt = H(t) c for a tridiagonal zero-diagonal H with classical RK4.

    Returns ``(times, amplitudes, couplings_at_times)``.
    """
    n_steps = max(1, int(math.ceil((t1 - t0) / dt - 1e-9)))
    h = (t1 - t0) / n_steps
    c = np.array(c0, dtype=complex)
    times = t0 + h * np.arange(n_steps + 1)
    amps = np.empty((n_steps + 1, c.size), dtype=complex)
    js = np.empty((n_steps + 1, c.size - 1))
    amps[0] = c
    j_now = np.asarray(couplings(t0), dtype=float)
    js[0] = j_now

    def rhs(jv, v):
        # -i H v with H_{i,i+1} = -J_i
        out = np.zeros_like(v)
        out[:-1] += jv * v[1:]
        out[1:] += jv * v[:-1]
        return 1j * out

    n0 = np.vdot(c, c).real
    for s in range(n_steps):
        t = times[s]
        j_mid = np.asarray(couplings(t + 0.5 * h), dtype=float)
        j_end = np.asarray(couplings(t + h), dtype=float)
        k1 = rhs(j_now, c)
        k2 = rhs(j_mid, c + 0.5 * h * k1)
        k3 = rhs(j_mid, c + 0.5 * h * k2)
        k4 = rhs(j_end, c + h * k3)
        c = c + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        amps[s + 1] = c
        js[s + 1] = j_end
        j_now = j_end
        drift = abs(np.vdot(c, c).real - n0)
        if drift > norm_tol:
            raise NumericalFailure(f"norm drift {drift:.2e} at t={t + h:.3f}")
    return times, amps, js


@dataclass
class AmplitudeSeries:
    times: np.ndarray
    amplitudes: np.ndarray
    j1: np.ndarray
    j2: np.ndarray

    @property
    def populations(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    @property
    def theta(self) -> np.ndarray:
        return mixing_angle(self.j1, self.j2)

    @property
    def final(self) -> np.ndarray:
        return self.amplitudes[-1]

    def norm_drift(self) -> float:
        return float(np.max(np.abs(np.sum(self.populations, axis=1) - 1.0)))

    def dark_overlap(self) -> np.ndarray:
        d = np.stack([np.cos(self.theta), np.zeros_like(self.theta), -np.sin(self.theta)], axis=1)
        return np.abs(np.sum(d * self.amplitudes, axis=1)) ** 2

    def to_csv(self, path):
        p = self.populations
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "p1", "p2", "p3", "J1", "J2", "theta"])
            for i, t in enumerate(self.times):
                w.writerow([f"{t:.6f}", *(f"{v:.12e}" for v in p[i]),
                            f"{self.j1[i]:.12e}", f"{self.j2[i]:.12e}", f"{self.theta[i]:.12e}"])


def propagate_amplitudes(schedule: TrapSchedule, dt: float = 0.05, initial=None) -> AmplitudeSeries:
    """Hole amplitudes under the tunneling rates produced by ``schedule``."""
    couplings = schedule_couplings(schedule)
    j_max = tunneling_rate(schedule.d_min - (abs(schedule.jitter.amplitude) if schedule.jitter else 0.0))
    if dt * j_max > 0.05:
        raise ValueError(f"dt={dt} too coarse for J_max={j_max:.3g} (need dt*J_max <= 0.05)")
    c0 = np.array([1.0, 0.0, 0.0], dtype=complex) if initial is None else np.asarray(initial, dtype=complex)
    times, amps, js = rk4_propagate(couplings, c0, 0.0, schedule.total_time, dt)
    return AmplitudeSeries(times, amps, js[:, 0], js[:, 1])


def adiabaticity_margin(schedule: TrapSchedule, samples: int = 20001) -> float:
    """J_max * t_delay with J_max^2 = max(J1)^2 + max(J2)^2 over the schedule."""
    t = np.linspace(0.0, schedule.total_time, samples)
    d1, d2 = schedule.distances(t)
    j1 = max(float(np.max(tunneling_rate(d1))), tunneling_rate(np.min(d1)))
    j2 = max(float(np.max(tunneling_rate(d2))), tunneling_rate(np.min(d2)))
    return math.hypot(j1, j2) * schedule.t_delay
