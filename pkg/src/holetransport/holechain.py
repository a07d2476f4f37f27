"""Single hole on an n-site chain (n odd): Hubbard Hamiltonian, multi-site dark state, transfer."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import TrapSchedule, tunneling_rate
from .threelevel import rk4_propagate, schedule_couplings, tridiagonal


class DegenerateDarkState(ValueError):
    pass


@dataclass(frozen=True)
class HoleChainModel:
    n: int
    couplings: tuple

    def __post_init__(self):
        if self.n < 3 or self.n % 2 == 0:
            raise ValueError(f"chain length must be odd and >= 3, got {self.n}")
        j = tuple(float(v) for v in self.couplings)
        if len(j) != self.n - 1:
            raise ValueError(f"need {self.n - 1} couplings, got {len(j)}")
        if any(v < 0 for v in j):
            raise ValueError("couplings must be non-negative")
        object.__setattr__(self, "couplings", j)

    @classmethod
    def from_distances(cls, distances) -> "HoleChainModel":
        d = list(distances)
        return cls(len(d) + 1, tuple(tunneling_rate(x) for x in d))


def chain_hamiltonian(model: HoleChainModel) -> np.ndarray:
    return tridiagonal(model.couplings)


def dark_state_coefficients(couplings) -> np.ndarray:
    """Unnormalized zero-energy eigenvector; nonzero only on odd sites (1-based).

    Site 2m-1 carries (-1)^(m+1) * prod_{j=1}^{m-1} J_{2m-2j-1} * prod_{j=0}^{(n-1)/2-m} J_{2m+2j},
    with empty products equal to 1.
    """
    J = np.asarray(couplings, dtype=float)
    n = J.size + 1
    half = (n - 1) // 2
    out = np.zeros(n)
    for m in range(1, half + 2):
        left = 1.0
        for j in range(1, m):
            left *= J[2 * m - 2 * j - 1 - 1]
        right = 1.0
        for j in range(0, half - m + 1):
            right *= J[2 * m + 2 * j - 1]
        out[2 * m - 2] = (-1) ** (m + 1) * left * right
    return out


def multisite_dark_state(model: HoleChainModel) -> np.ndarray:
    c = dark_state_coefficients(model.couplings)
    nrm = np.linalg.norm(c)
    if nrm == 0.0:
        raise DegenerateDarkState(f"dark-state coefficients vanish for couplings {model.couplings}")
    return c / nrm


@dataclass
class PulseSchedule:
    """Two Gaussian coupling envelopes: even-index couplings first, odd-index ``delay`` later."""

    n: int
    j_peak: float
    width: float
    delay: float
    total: float

    @property
    def even_center(self) -> float:
        return 0.5 * (self.total - self.delay)

    @property
    def odd_center(self) -> float:
        return self.even_center + self.delay

    def __call__(self, t: float) -> np.ndarray:
        idx = np.arange(1, self.n)
        even = self.j_peak * math.exp(-(((t - self.even_center) / self.width) ** 2))
        odd = self.j_peak * math.exp(-(((t - self.odd_center) / self.width) ** 2))
        return np.where(idx % 2 == 0, even, odd)

    def reversed(self) -> Callable[[float], np.ndarray]:
        return lambda t: self(self.total - t)

    def to_json(self) -> str:
        return json.dumps({"n": self.n, "J_peak": self.j_peak, "width": self.width, "delay": self.delay,
                           "total": self.total, "even_center": self.even_center,
                           "odd_center": self.odd_center, "envelope": "J_peak*exp(-((t-center)/width)^2)"})


def even_odd_pulse_schedule(n: int, J_peak: float, width: float, delay: float, total: float) -> PulseSchedule:
    if n < 3 or n % 2 == 0:
        raise ValueError("n must be odd and >= 3")
    if not total > delay + width:
        raise ValueError("total must exceed delay + width")
    return PulseSchedule(n, J_peak, width, delay, total)


def chain_couplings_from_schedule(schedule: TrapSchedule) -> Callable[[float], np.ndarray]:
    return schedule_couplings(schedule)


@dataclass
class ChainSeries:
    times: np.ndarray
    amplitudes: np.ndarray
    couplings: np.ndarray

    @property
    def populations(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def dark_overlap(self) -> np.ndarray:
        out = np.empty(len(self.times))
        for i, j in enumerate(self.couplings):
            c = dark_state_coefficients(j)
            nrm = np.linalg.norm(c)
            out[i] = abs(np.vdot(c / nrm, self.amplitudes[i])) ** 2 if nrm > 0 else np.nan
        return out

    def dark_residual(self) -> float:
        """max_t ||H(t) D(t)|| over times where the dark state is defined."""
        worst = 0.0
        for j in self.couplings:
            c = dark_state_coefficients(j)
            nrm = np.linalg.norm(c)
            if nrm > 0:
                h = chain_hamiltonian(HoleChainModel(len(j) + 1, tuple(j)))
                worst = max(worst, float(np.linalg.norm(h @ c) / nrm))
        return worst

    def to_csv(self, path, comment: Optional[str] = None):
        n = self.amplitudes.shape[1]
        overlap = self.dark_overlap()
        with open(path, "w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            w = csv.writer(fh)
            w.writerow(["t", *(f"p{i + 1}" for i in range(n)), "dark_overlap"])
            for i, t in enumerate(self.times):
                w.writerow([f"{t:.6f}", *(f"{v:.12e}" for v in self.populations[i]), f"{overlap[i]:.12e}"])


def propagate_chain(couplings: Callable[[float], np.ndarray], t_final: float, dt: float = 0.05,
                    initial=None, n: Optional[int] = None) -> ChainSeries:
    """Hole amplitudes on the chain; starts on site 1 unless ``initial`` is given."""
    if initial is None:
        if n is None:
            n = len(np.atleast_1d(couplings(0.0))) + 1
        initial = np.zeros(n, dtype=complex)
        initial[0] = 1.0
    times, amps, js = rk4_propagate(couplings, initial, 0.0, t_final, dt)
    return ChainSeries(times, amps, js)
