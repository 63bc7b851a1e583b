"""Four-level N scheme: EIT storage with a disordered switching field.

The probe is stored as a ground-state spin wave by switching the uniform
control off at ``t_off``. During storage a switching field on |2>-|4> rotates
rho21 into rho41 by the local angle phi(z); a matched decryption pulse
rotates it back before the control returns at ``t_on``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from typing import Mapping, Optional

import numpy as np

from .disorder import KeyProfile
from .dynamics_lambda import (
    SimResult, _result, _run, check_resolution, key_digest, key_strength,
)
from .grid import UNITS, SpaceTimeGrid, piecewise_time
from .metrics import energy
from .protocol import EITSchedules, ProbeSpec, build_eit_schedules
from .solver import AtomicState, BlochParams, merge_invariants

DEFAULT_PEAK_TIME = 32.0
# Rotation angle per step inside switch windows, relative to the key strength.
SWITCH_STEP = 0.03


@dataclass(frozen=True)
class NConfig:
    """One EIT storage run with optional encryption and decryption pulses.

    A ``None`` key omits that pulse. Windows are (start, end) pairs in tau.
    """

    params: BlochParams
    probe: ProbeSpec
    control: float
    t_off: float
    t_on: float
    grid: SpaceTimeGrid
    encrypt_key: Optional[KeyProfile] = None
    decrypt_key: Optional[KeyProfile] = None
    encrypt_window: tuple = (60.0, 80.0)
    decrypt_window: tuple = (90.0, 110.0)
    ramp: float = 1.0
    snapshot_times: tuple = ()

    def __post_init__(self):
        if not self.probe.duration > 1.0:
            raise ValueError("EIT storage needs a narrowband probe: kappa > 1/Gamma")
        if self.probe.amplitude > 0.1:
            raise ValueError("probe is not weak: amplitude must be <= 0.1 Gamma")
        if self.control <= 0:
            raise ValueError("control Rabi frequency must be positive")
        self.schedules  # validates window ordering
        for w in (self.encrypt_window, self.decrypt_window):
            for edge in w:
                self.grid.index_of(edge)
        keys = [k for k in (self.encrypt_key, self.decrypt_key) if k is not None]
        for k in keys:
            if k.z.size != self.grid.nz:
                raise ValueError("switch key and medium grid have different sizes")
        rate = max(self.control, 1.0 / self.probe.duration, self.params.gamma)
        check_resolution(self.grid, rate, keys)
        for k, w in ((self.encrypt_key, self.encrypt_window), (self.decrypt_key, self.decrypt_window)):
            if k is None:
                continue
            m = (self.grid.t >= w[0]) & (self.grid.t <= w[1])
            sub = SpaceTimeGrid(self.grid.z, self.grid.t[m])
            check_resolution(sub, key_strength(k))
        object.__setattr__(self, "snapshot_times", tuple(float(s) for s in self.snapshot_times))

    @property
    def schedules(self) -> EITSchedules:
        return build_eit_schedules(self.control, self.t_off, self.t_on, self.encrypt_key, self.decrypt_key,
                                   self.grid.z, self.encrypt_window, self.decrypt_window, self.ramp)

    @property
    def retrieval_start(self) -> float:
        """Output is counted as retrieved after the decryption window closes."""
        return float(self.decrypt_window[1])

    def describe(self) -> dict:
        def key(k):
            return None if k is None else {**k.header(), "sha256": key_digest(k)}

        return {
            "scheme": "n",
            "optical_depth": self.params.optical_depth,
            "gamma": self.params.gamma,
            "gamma4": self.params.gamma4,
            "branching_31": self.params.branching_31,
            "branching_41": self.params.branching_41,
            "ground_dephasing": self.params.ground_dephasing,
            "probe": {"peak_time": self.probe.peak_time, "duration": self.probe.duration,
                      "amplitude": self.probe.amplitude},
            "control": self.control,
            "t_off": self.t_off,
            "t_on": self.t_on,
            "ramp": self.ramp,
            "encrypt_window": list(self.encrypt_window),
            "decrypt_window": list(self.decrypt_window),
            "encrypt_key": key(self.encrypt_key),
            "decrypt_key": key(self.decrypt_key),
            "grid": self.grid.describe(),
            "snapshot_times": list(self.snapshot_times),
            "units": UNITS,
        }


def eit_time_grid(t_end: float, coarse_dt: float, fine_dt: float, windows) -> np.ndarray:
    """Coarse steps outside the switch windows, ``fine_dt`` inside them.

    Windows of equal length get node sets that are translates of each other.
    """
    edges = sorted(windows)
    segs, cur = [], 0.0
    for a, b in edges:
        if a < cur:
            raise ValueError("windows overlap")
        if a > cur:
            segs.append((cur, a, coarse_dt))
        segs.append((a, b, fine_dt))
        cur = b
    if t_end <= cur:
        raise ValueError("t_end must follow the last window")
    segs.append((cur, t_end, coarse_dt))
    return piecewise_time(segs)


def eit_config(optical_depth: float, grid_z, encrypt_key: Optional[KeyProfile] = None,
               decrypt_key: Optional[KeyProfile] = None, control: float = 5.0, duration: float = 10.0,
               peak_time: float = DEFAULT_PEAK_TIME, amplitude: float = 0.01, t_off: float = 50.0,
               t_on: float = 120.0, t_end: float = 200.0, encrypt_window=(60.0, 80.0),
               decrypt_window=(90.0, 110.0), ramp: float = 1.0, coarse_dt: float = 0.02,
               fine_dt: Optional[float] = None, switch_strength: Optional[float] = None,
               snapshot_times=(), **bloch) -> NConfig:
    """NConfig on a time grid refined inside both switch windows.

    ``fine_dt`` defaults to ``0.03 / (2 D_s)`` so that the local rotation per
    step stays near 0.03 rad at typical key values. The grid is the same
    whether or not keys are given, so baseline and encrypted runs share it.
    """
    params = BlochParams(optical_depth, **bloch)
    keys = [k for k in (encrypt_key, decrypt_key) if k is not None]
    if switch_strength is None:
        switch_strength = max([key_strength(k) for k in keys], default=30.0)
    if fine_dt is None:
        fine_dt = SWITCH_STEP / (2.0 * switch_strength)
    t = eit_time_grid(t_end, coarse_dt, fine_dt, [tuple(encrypt_window), tuple(decrypt_window)])
    grid = SpaceTimeGrid(np.asarray(grid_z, dtype=float), t)
    return NConfig(params, ProbeSpec(peak_time, duration, amplitude), control, t_off, t_on, grid,
                   encrypt_key, decrypt_key, tuple(encrypt_window), tuple(decrypt_window), ramp,
                   tuple(snapshot_times))


def simulate_eit_encrypted(config: NConfig, reference_se: Optional[float] = None) -> SimResult:
    """Slow-light entry, storage, switching and retrieval of one probe pulse."""
    return simulate_eit_trials(config, {"run": (config.encrypt_key, config.decrypt_key)}, reference_se)["run"]


def _ident(key):
    return None if key is None else key_digest(key)


def simulate_eit_trials(config: NConfig, trials: Mapping[str, tuple], reference_se: Optional[float] = None,
                        ) -> dict[str, SimResult]:
    """Run several (encrypt_key, decrypt_key) pairs sharing common stages.

    All trials share the run up to the encryption window; trials with the
    same encryption key share it up to the decryption window. Each result is
    bit-identical to a separate :func:`simulate_eit_encrypted` call.
    """
    g = config.grid
    t = g.t
    ie = g.index_of(config.encrypt_window[0])
    idd = g.index_of(config.decrypt_window[0])
    inp = config.probe(t)
    snap_t = config.snapshot_times

    def cfg(enc, dec):
        return replace(config, encrypt_key=enc, decrypt_key=dec)

    t0 = time.perf_counter()
    state = AtomicState.ground(g.nz, 4)
    first = _run(state, g.z, t[: ie + 1], config.probe, config.params,
                 [cfg(None, None).schedules.control], (), snap_t)
    wall0 = time.perf_counter() - t0
    middles = {}
    results = {}
    for name, (enc, dec) in trials.items():
        c = cfg(enc, dec)
        sch = c.schedules
        tag = _ident(enc)
        t1 = time.perf_counter()
        if tag not in middles:
            s = state.copy()
            mid = _run(s, g.z, t[ie: idd + 1], config.probe, config.params, [sch.control],
                       [sch.encrypt] if sch.encrypt is not None else [], snap_t)
            middles[tag] = (s, mid, time.perf_counter() - t1)
        s_mid, mid, wall_mid = middles[tag]
        t2 = time.perf_counter()
        s = s_mid.copy()
        last = _run(s, g.z, t[idd:], config.probe, config.params, [sch.control], list(sch.switches), snap_t)
        out = np.concatenate([first.output[:-1], mid.output[:-1], last.output])
        snaps = {**first.snapshots, **mid.snapshots, **last.snapshots}
        inv = merge_invariants(first.invariants, mid.invariants, last.invariants)
        wall = wall0 + wall_mid + time.perf_counter() - t2
        results[name] = _result(c, t, inp, out, snaps, inv, s, c.retrieval_start, wall, reference_se)
    return results


def spinwave_rotation_check(reference: AtomicState, state: AtomicState, relative: bool = True) -> float:
    """Deviation of |rho21|^2 + |rho41|^2 from the reference |rho21|^2.

    ``reference`` is the spin wave before any switching. The absolute residual
    is max over z; with ``relative`` it is divided by max_z |rho21_ref|^2.
    """
    if reference.n_levels != 4 or state.n_levels != 4:
        raise ValueError("rotation check needs four-level states")
    ref = np.abs(reference.rho(2, 1)) ** 2
    now = np.abs(state.rho(2, 1)) ** 2 + np.abs(state.rho(4, 1)) ** 2
    res = float(np.max(np.abs(now - ref)))
    if relative:
        scale = float(np.max(ref))
        if scale <= 0:
            raise ValueError("reference spin wave is empty")
        res /= scale
    return res


def rotated_spinwave(reference: AtomicState, phi):
    """Predicted (rho21, rho41) after a pure rotation by phi(z): cos and i*sin."""
    r21 = reference.rho(2, 1)
    return r21 * np.cos(phi), 1j * r21 * np.sin(phi)


def group_delay(optical_depth: float, control: float, gamma: float = 1.0) -> float:
    """Slow-light delay xi Gamma / Omega_c^2 of the transparency window."""
    return optical_depth * gamma / control**2


def relative_l2(t, a, b, t_start: Optional[float] = None) -> float:
    """||a - b|| / ||b|| over t >= t_start (trapezoid)."""
    ref = energy(t, b, t_start)
    if ref <= 0:
        raise ValueError("reference envelope carries no energy")
    return math.sqrt(energy(t, np.asarray(a) - np.asarray(b), t_start) / ref)
