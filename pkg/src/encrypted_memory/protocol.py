"""Field schedules Omega(t, z) = s(t) * K(z) and the local phase functionals."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .disorder import KeyProfile, constant_key, section_key
from .grid import UNITS

DEM_CONTROL = "dem_control"
EIT_CONTROL = "eit_control_uniform"
EIT_ENCRYPT = "eit_switch_encrypt"
EIT_DECRYPT = "eit_switch_decrypt"

# One-sided limits at gate discontinuities are taken this far inside a step.
_EDGE = 1e-9


@dataclass(frozen=True)
class ProbeSpec:
    """Incident envelope Omega_p0 * exp(-((t - t_p) / kappa)**2)."""

    peak_time: float
    duration: float
    amplitude: float = 0.01

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("probe duration kappa must be positive")
        if not self.amplitude > 0:
            raise ValueError("probe amplitude must be positive")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.amplitude * np.exp(-(((t - self.peak_time) / self.duration) ** 2)) + 0j

    def energy(self) -> float:
        """Integral of |Omega_p|^2 over all time."""
        return self.amplitude**2 * self.duration * math.sqrt(math.pi / 2.0)

    def spectrum(self, omega):
        """Fourier amplitude (real, even) of the envelope at angular frequency omega."""
        omega = np.asarray(omega, dtype=float)
        return self.amplitude * self.duration * math.sqrt(math.pi) * np.exp(-((self.duration * omega) ** 2) / 4.0)


# --- gates ---------------------------------------------------------------

@dataclass(frozen=True)
class StepGate:
    """``before`` for t < t_flip, ``after`` for t >= t_flip (abrupt)."""

    t_flip: float
    before: float = 1.0
    after: float = -1.0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t < self.t_flip, self.before, self.after).astype(float)

    @property
    def breakpoints(self):
        return (self.t_flip,)


@dataclass(frozen=True)
class WindowGate:
    """Flat-top pulse on [start, end] with tanh edges of width ``ramp``.

    Edge centres sit ``inset`` ramp-widths inside the window and the gate is
    exactly zero outside it (the cut-off step is below 3.4e-4 at inset 4).
    """

    start: float
    end: float
    ramp: float = 1.0
    inset: float = 4.0

    def __post_init__(self):
        if not self.end > self.start:
            raise ValueError("window end must follow start")
        if self.end - self.start <= 2 * self.inset * self.ramp:
            raise ValueError("window too short for its ramps")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        a = self.start + self.inset * self.ramp
        b = self.end - self.inset * self.ramp
        g = 0.5 * (np.tanh((t - a) / self.ramp) - np.tanh((t - b) / self.ramp))
        return np.where((t >= self.start) & (t <= self.end), g, 0.0)

    def area(self) -> float:
        """Integral of the gate over the window (closed form)."""
        w = self.ramp
        a = self.start + self.inset * w
        b = self.end - self.inset * w

        def prim(x):
            # antiderivative of 0.5 * (tanh((x-a)/w) - tanh((x-b)/w))
            return 0.5 * w * (_logcosh((x - a) / w) - _logcosh((x - b) / w))

        return prim(self.end) - prim(self.start)

    @property
    def breakpoints(self):
        return (self.start, self.end)


def _logcosh(x):
    x = abs(x)
    return x + math.log1p(math.exp(-2 * x)) - math.log(2.0)


@dataclass(frozen=True)
class OffOnGate:
    """1 before t_off, 0 during storage, 1 again after t_on (tanh ramps centred on the edges)."""

    t_off: float
    t_on: float
    ramp: float = 1.0

    def __post_init__(self):
        if not self.t_on > self.t_off:
            raise ValueError("t_on must follow t_off")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.ramp == 0:
            return np.where((t >= self.t_off) & (t < self.t_on), 0.0, 1.0)
        return 1.0 - 0.5 * (np.tanh((t - self.t_off) / self.ramp) - np.tanh((t - self.t_on) / self.ramp))

    @property
    def breakpoints(self):
        return (self.t_off, self.t_on) if self.ramp == 0 else ()


@dataclass(frozen=True)
class ConstantGate:
    value: float = 1.0

    def __call__(self, t):
        return np.full(np.shape(t), self.value, dtype=float)

    @property
    def breakpoints(self):
        return ()


@dataclass(frozen=True)
class FieldSchedule:
    """One field contribution s(t) * K(z) on a given transition."""

    gate: object
    key: KeyProfile
    label: str

    def stage_gates(self, t) -> np.ndarray:
        """Gate values at (start+, midpoint, end-) of every step of grid ``t``."""
        t = np.asarray(t, dtype=float)
        h = np.diff(t)
        out = np.empty((t.size - 1, 3))
        out[:, 0] = self.gate(t[:-1] + _EDGE * h)
        out[:, 1] = self.gate(t[:-1] + 0.5 * h)
        out[:, 2] = self.gate(t[1:] - _EDGE * h)
        return out

    def gate_integral(self, t) -> np.ndarray:
        """Cumulative trapezoid of s(t) on the nodes of ``t`` (one-sided at jumps)."""
        g = self.stage_gates(t)
        cells = 0.5 * (g[:, 0] + g[:, 2]) * np.diff(np.asarray(t, dtype=float))
        return np.concatenate([[0.0], np.cumsum(cells)])

    def field(self, t) -> np.ndarray:
        """Omega(t, z) sampled on the nodes (shape nt x nz)."""
        return np.outer(self.gate(t), self.key.samples)


def build_dem_schedule(key: KeyProfile, t_i: float, window=(0.0, math.inf)) -> FieldSchedule:
    """Control for disordered echo memory: +K(z) before t_i, -K(z) from t_i on."""
    lo, hi = window
    if not (lo <= t_i <= hi):
        raise ValueError(f"inversion time {t_i} outside simulation window [{lo}, {hi}]")
    return FieldSchedule(StepGate(t_i, 1.0, -1.0), key, DEM_CONTROL)


def build_dem_schedules(encrypt_key: KeyProfile, t_i: float, decrypt_key: Optional[KeyProfile] = None,
                        window=(0.0, math.inf)) -> tuple[FieldSchedule, ...]:
    """Encryption key before t_i, arbitrary decryption key after.

    ``decrypt_key=None`` means the correct key (the inverse of the encryption
    key), which reduces to :func:`build_dem_schedule`.
    """
    if decrypt_key is None:
        return (build_dem_schedule(encrypt_key, t_i, window),)
    lo, hi = window
    if not (lo <= t_i <= hi):
        raise ValueError(f"inversion time {t_i} outside simulation window [{lo}, {hi}]")
    if not encrypt_key.same_grid(decrypt_key):
        raise ValueError("encryption and decryption keys must share the medium grid")
    return (
        FieldSchedule(StepGate(t_i, 1.0, 0.0), encrypt_key, DEM_CONTROL),
        FieldSchedule(StepGate(t_i, 0.0, 1.0), decrypt_key, DEM_CONTROL),
    )


@dataclass(frozen=True)
class EITSchedules:
    control: FieldSchedule
    encrypt: Optional[FieldSchedule]
    decrypt: Optional[FieldSchedule]

    @property
    def switches(self) -> tuple[FieldSchedule, ...]:
        return tuple(s for s in (self.encrypt, self.decrypt) if s is not None)

    def __iter__(self):
        yield self.control
        yield from self.switches


def build_eit_schedules(control: float, t_off: float, t_on: float, encrypt_key: Optional[KeyProfile],
                        decrypt_key: Optional[KeyProfile], grid_z,
                        encrypt_window=(60.0, 80.0), decrypt_window=(90.0, 110.0),
                        ramp: float = 1.0) -> EITSchedules:
    """Uniform control with off/on gating plus optional encrypt/decrypt switch pulses.

    Passing ``None`` for a key omits that pulse (encrypt-only or decrypt-only
    trials).
    """
    if not t_on > t_off:
        raise ValueError("t_on must follow t_off")
    (e0, e1), (d0, d1) = encrypt_window, decrypt_window
    if not (t_off <= e0 < e1 <= d0 < d1 <= t_on):
        raise ValueError(
            f"windows must satisfy t_off <= encrypt < decrypt <= t_on; got t_off={t_off}, "
            f"encrypt={encrypt_window}, decrypt={decrypt_window}, t_on={t_on}"
        )
    ctrl = FieldSchedule(OffOnGate(t_off, t_on, ramp), constant_key(grid_z, control, "uniform_control"), EIT_CONTROL)
    enc = None if encrypt_key is None else FieldSchedule(WindowGate(e0, e1, ramp), encrypt_key, EIT_ENCRYPT)
    dec = None if decrypt_key is None else FieldSchedule(WindowGate(d0, d1, ramp), decrypt_key, EIT_DECRYPT)
    return EITSchedules(ctrl, enc, dec)


def invert_key(schedule: FieldSchedule) -> FieldSchedule:
    """Negate the key samples; applying it twice gives back the original samples."""
    return replace(schedule, key=schedule.key.inverted())


def shift_key(key: KeyProfile, delta: float) -> KeyProfile:
    """Decryption key read from the master at the key's own offset plus ``delta``."""
    master = key.master if key.master is not None else key
    return section_key(master, key.section_offset + delta, key.span, grid_z=key.z)


def _phase(schedules: Sequence[FieldSchedule], t_grid, t: float, t0: float) -> np.ndarray:
    t_grid = np.asarray(t_grid, dtype=float)
    total = np.zeros(schedules[0].key.samples.shape)
    for s in schedules:
        cum = s.gate_integral(t_grid)
        area = np.interp(t, t_grid, cum) - np.interp(t0, t_grid, cum)
        total = total + 0.5 * area * s.key.samples
    return total


def phase_theta(schedules, t: float, t_grid) -> np.ndarray:
    """theta(t, z) = 1/2 int_0^t Omega_c dt' (trapezoid on ``t_grid``)."""
    schedules = _as_tuple(schedules)
    if not (t_grid[0] - 1e-12 <= t <= t_grid[-1] + 1e-12):
        raise ValueError("t outside the time grid")
    return _phase(schedules, t_grid, t, float(t_grid[0]))


def phase_phi(switches, t: float, t_grid, t_off: float) -> np.ndarray:
    """phi(t, z) = 1/2 int_{t_off}^t Omega_s dt' (trapezoid on ``t_grid``)."""
    switches = _as_tuple(switches)
    if t < t_off:
        raise ValueError("phi is defined for t >= t_off")
    return _phase(switches, t_grid, t, t_off)


def _as_tuple(schedules) -> tuple[FieldSchedule, ...]:
    if isinstance(schedules, FieldSchedule):
        return (schedules,)
    out = tuple(schedules)
    if not out:
        raise ValueError("need at least one schedule")
    return out


def dump_schedule_csv(schedule: FieldSchedule, t, path) -> Path:
    path = Path(path)
    g = schedule.gate(np.asarray(t, dtype=float))
    lines = [f"# label={schedule.label}", f"# key={schedule.key.label}", f"# units={UNITS}", "t,gate"]
    lines += [f"{a:.17g},{b:.17g}" for a, b in zip(t, g)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
