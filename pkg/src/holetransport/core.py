"""Physical parameters, trap schedules and the analytic formulas shared by every module.

Units throughout: hbar = m = omega_x = 1, so alpha = sqrt(m omega_x / hbar) = 1.
Lengths are in 1/alpha, times in 1/omega_x, energies in hbar*omega_x.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

import numpy as np
from scipy.special import erfc


class Symmetry(str, enum.Enum):
    """Exchange symmetry of the two-atom spatial wavefunction."""

    FERMIONIC = "fermionic"
    BOSONIC = "bosonic"

    @property
    def sign(self) -> int:
        # psi(x2, x1) = sign * psi(x1, x2)
        return -1 if self is Symmetry.FERMIONIC else 1


class RampShape(str, enum.Enum):
    LINEAR = "linear"
    SIN_SQUARED = "sin_squared"


class FirstMover(str, enum.Enum):
    RIGHT = "right"
    LEFT = "left"


class NumericalFailure(RuntimeError):
    """Propagation lost norm or otherwise broke down."""


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class PhysicalParams:
    omega_ratio: float = 24.0
    alpha_as: float = 0.0
    symmetry: Symmetry = Symmetry.FERMIONIC

    def __post_init__(self):
        if not self.omega_ratio > 0:
            raise ConfigError("omega_ratio", "must be positive")
        object.__setattr__(self, "symmetry", Symmetry(self.symmetry))


@dataclass(frozen=True)
class Jitter:
    amplitude: float
    omega: float


@dataclass(frozen=True)
class TrapLayout:
    centers: tuple

    def __post_init__(self):
        c = tuple(float(v) for v in self.centers)
        if len(c) < 2 or any(b <= a for a, b in zip(c, c[1:])):
            raise ValueError(f"trap centers must be strictly increasing, got {c}")
        object.__setattr__(self, "centers", c)

    @property
    def distances(self) -> tuple:
        c = self.centers
        return tuple(b - a for a, b in zip(c, c[1:]))

    def mirrored(self) -> "TrapLayout":
        return TrapLayout(tuple(-x for x in reversed(self.centers)))


@dataclass(frozen=True)
class TrapSchedule:
    """Approach sequence of the two outer traps towards the static middle trap.

    The ``first_mover`` trap starts its ramp at ``t_pre``, the other one
    ``t_delay`` later. Each ramp goes d_max -> d_min in ``t_ramp``, holds for
    ``t_hold`` and returns in ``t_ramp``.
    """

    d_max: float = 9.0
    d_min: float = 1.5
    t_delay: float = 120.0
    t_ramp: float = 400.0
    t_hold: float = 100.15
    t_pre: float = 10.0
    t_post: float = 10.0
    ramp_shape: RampShape = RampShape.SIN_SQUARED
    first_mover: FirstMover = FirstMover.RIGHT
    jitter: Optional[Jitter] = None

    def __post_init__(self):
        object.__setattr__(self, "ramp_shape", RampShape(self.ramp_shape))
        object.__setattr__(self, "first_mover", FirstMover(self.first_mover))
        if isinstance(self.jitter, Mapping):
            object.__setattr__(self, "jitter", Jitter(**self.jitter))
        if not self.d_min < self.d_max:
            raise ConfigError("d_min", f"must be below d_max ({self.d_min} >= {self.d_max})")
        if self.d_min <= 0:
            raise ConfigError("d_min", "must be positive")
        for name in ("t_delay", "t_ramp", "t_hold", "t_pre", "t_post"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ConfigError(name, "durations must be finite and >= 0")

    @property
    def total_time(self) -> float:
        return self.t_pre + self.t_delay + 2 * self.t_ramp + self.t_hold + self.t_post

    def mirrored(self) -> "TrapSchedule":
        other = FirstMover.LEFT if self.first_mover is FirstMover.RIGHT else FirstMover.RIGHT
        return dataclasses.replace(self, first_mover=other)

    def _profile(self, t, start):
        """Distance of one mover whose approach begins at ``start``."""
        t = np.asarray(t, dtype=float)
        span = self.d_max - self.d_min
        if self.t_ramp > 0:
            u_in = np.clip((t - start) / self.t_ramp, 0.0, 1.0)
            u_out = np.clip((t - start - self.t_ramp - self.t_hold) / self.t_ramp, 0.0, 1.0)
        else:
            u_in = (t >= start).astype(float)
            u_out = (t >= start + self.t_hold).astype(float)
        if self.ramp_shape is RampShape.SIN_SQUARED:
            s_in, s_out = np.sin(0.5 * np.pi * u_in) ** 2, np.sin(0.5 * np.pi * u_out) ** 2
        else:
            s_in, s_out = u_in, u_out
        return self.d_max - span * (s_in - s_out)

    def distances(self, t):
        """Inter-trap distances (d_left, d_right) at time(s) ``t``, jitter included."""
        first = self.t_pre
        second = self.t_pre + self.t_delay
        if self.first_mover is FirstMover.RIGHT:
            d1, d2 = self._profile(t, second), self._profile(t, first)
        else:
            d1, d2 = self._profile(t, first), self._profile(t, second)
        if self.jitter is not None:
            shake = self.jitter.amplitude * np.cos(self.jitter.omega * np.asarray(t, dtype=float))
            d1, d2 = d1 + shake, d2 + shake
        return d1, d2


def trap_positions(schedule: TrapSchedule, t: float) -> TrapLayout:
    """Trap centers (left, middle, right) at time ``t``; middle stays at 0."""
    T = schedule.total_time
    if not (0.0 <= t <= T * (1 + 1e-12)):
        raise ValueError(f"t={t} outside schedule range [0, {T}]")
    d1, d2 = schedule.distances(t)
    return TrapLayout((-float(d1), 0.0, float(d2)))


def potential_value(x, layout: TrapLayout):
    """Truncated harmonic potential 0.5 * min_i (x - x_i)^2."""
    x = np.asarray(x, dtype=float)
    sq = np.min([(x - c) ** 2 for c in layout.centers], axis=0)
    return 0.5 * sq


def tunneling_rate(scaled_distance):
    """Tunneling rate J/omega_x between ground states of two truncated harmonic wells.

    Evaluated in the form multiplied through by exp(-2 d^2), which is stable
    for large separations where the textbook form overflows.
    """
    d = np.asarray(scaled_distance, dtype=float)
    if np.any(d <= 0):
        raise ValueError("scaled distance must be positive")
    d2 = d * d
    num = np.exp(-d2) * (1.0 + d * erfc(d)) - np.exp(-2.0 * d2)
    den = -np.expm1(-2.0 * d2)
    out = 2.0 * d * num / (math.sqrt(math.pi) * den)
    return float(out) if out.ndim == 0 else out


def interaction_strength(params: PhysicalParams) -> float:
    """1D contact coupling g = 2 (alpha a_s)(omega_p/omega_x)."""
    return 2.0 * params.alpha_as * params.omega_ratio


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

_SCHEDULE_KEYS = ("d_max", "d_min", "t_delay", "t_ramp", "t_hold", "t_pre", "t_post")


@dataclass(frozen=True)
class GridSpec:
    x_min: float = -16.0
    x_max: float = 16.0
    points_per_axis: int = 256
    dt: float = 0.005
    frame_stride: int = 100
    sigma_delta_cells: float = 0.0


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce one transport run."""

    schedule: TrapSchedule = field(default_factory=TrapSchedule)
    params: PhysicalParams = field(default_factory=PhysicalParams)
    grid: GridSpec = field(default_factory=GridSpec)
    hole_site: int = 1
    seed: int = 0

    def to_dict(self) -> dict:
        s = self.schedule
        out = {k: getattr(s, k) for k in _SCHEDULE_KEYS}
        out["ramp_shape"] = s.ramp_shape.value
        out["first_mover"] = s.first_mover.value
        out["jitter"] = None if s.jitter is None else {"A_s": s.jitter.amplitude, "omega_s": s.jitter.omega}
        out["omega_ratio"] = self.params.omega_ratio
        out["alpha_as"] = self.params.alpha_as
        out["symmetry"] = self.params.symmetry.value
        out["hole_site"] = self.hole_site
        out["seed"] = self.seed
        out["grid"] = dataclasses.asdict(self.grid)
        return out

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_overrides(self, **kw) -> "RunConfig":
        d = self.to_dict()
        for k, v in kw.items():
            if k in ("points_per_axis", "dt", "frame_stride", "x_min", "x_max", "sigma_delta_cells"):
                d["grid"][k] = v
            else:
                d[k] = v
        return RunConfig.from_dict(d)

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "RunConfig":
        known = set(_SCHEDULE_KEYS) | {"ramp_shape", "first_mover", "jitter", "omega_ratio",
                                       "alpha_as", "symmetry", "hole_site", "seed", "grid"}
        for key in raw:
            if key not in known:
                raise ConfigError(key, "unknown key")

        def num(key, default):
            v = raw.get(key, default)
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(key, f"expected a number, got {v!r}")
            return float(v)

        sched_kw = {k: num(k, getattr(TrapSchedule, k)) for k in _SCHEDULE_KEYS}
        try:
            sched_kw["ramp_shape"] = RampShape(raw.get("ramp_shape", RampShape.SIN_SQUARED.value))
        except ValueError:
            raise ConfigError("ramp_shape", f"unknown shape {raw.get('ramp_shape')!r}") from None
        try:
            sched_kw["first_mover"] = FirstMover(raw.get("first_mover", FirstMover.RIGHT.value))
        except ValueError:
            raise ConfigError("first_mover", f"unknown value {raw.get('first_mover')!r}") from None
        jit = raw.get("jitter")
        if jit is not None:
            if not isinstance(jit, Mapping) or set(jit) - {"A_s", "omega_s"}:
                raise ConfigError("jitter", "expected {A_s, omega_s}")
            try:
                sched_kw["jitter"] = Jitter(float(jit.get("A_s", 0.0)), float(jit.get("omega_s", 0.0)))
            except (TypeError, ValueError):
                raise ConfigError("jitter", "A_s and omega_s must be numbers") from None
        schedule = TrapSchedule(**sched_kw)

        try:
            symmetry = Symmetry(str(raw.get("symmetry", Symmetry.FERMIONIC.value)).lower())
        except ValueError:
            raise ConfigError("symmetry", f"unknown symmetry {raw.get('symmetry')!r}") from None
        params = PhysicalParams(num("omega_ratio", 24.0), num("alpha_as", 0.0), symmetry)

        g = dict(raw.get("grid") or {})
        try:
            grid = GridSpec(**{**dataclasses.asdict(GridSpec()), **g})
        except TypeError as exc:
            raise ConfigError("grid", str(exc)) from None
        if not fft_friendly(int(grid.points_per_axis)):
            raise ConfigError("grid", "points_per_axis must be 2^k or 3*2^k")

        hole = raw.get("hole_site", 1)
        if hole not in (1, 2, 3):
            raise ConfigError("hole_site", "must be 1, 2 or 3")
        seed = raw.get("seed", 0)
        if not isinstance(seed, int):
            raise ConfigError("seed", "must be an integer")
        return cls(schedule, params, grid, int(hole), seed)


def fft_friendly(n: int) -> bool:
    """True for 2^k or 3*2^k (k >= 3)."""
    if n % 3 == 0:
        n //= 3
    return n >= 8 and n & (n - 1) == 0


def load_config(path) -> RunConfig:
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, Mapping):
        raise ConfigError("<root>", "config must be a JSON object")
    return RunConfig.from_dict(raw)
