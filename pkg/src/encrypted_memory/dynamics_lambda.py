"""Three-level Lambda scheme: disordered echo memory.

A disordered control field ``K(z)`` splits the probe absorption line; flipping
its sign at ``t_i`` rephases the stored coherence and an echo leaves the
medium near ``2 t_i - t_p``.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from ._version import __version__
from .disorder import KeyProfile
from .grid import UNITS, SpaceTimeGrid, uniform_time
from .metrics import MetricsBundle, evaluate
from .protocol import ConstantGate, FieldSchedule, ProbeSpec, StepGate, build_dem_schedule, DEM_CONTROL
from .solver import AtomicState, BlochParams, Propagation, merge_invariants, propagate

# Largest step relative to the fastest time scale max(D, 1/kappa).
STEP_FACTOR = 0.1
DEFAULT_PEAK_TIME = 0.15


def key_strength(key: KeyProfile) -> float:
    """Characteristic Rabi frequency of a key: D when known, else the rms value."""
    if key.spec is not None:
        return key.spec.strength
    return float(np.sqrt(np.mean(key.samples**2)))


def check_resolution(grid: SpaceTimeGrid, rate: float, keys: Sequence[KeyProfile] = ()) -> None:
    """Reject grids that under-resolve ``rate`` in time or any key's sigma in z."""
    dt_max = STEP_FACTOR / rate if rate > 0 else math.inf
    if grid.max_dt > dt_max * (1 + 1e-9):
        steps = int(math.ceil((grid.t[-1] - grid.t[0]) / dt_max))
        raise ValueError(
            f"time step {grid.max_dt:g} exceeds {STEP_FACTOR}/{rate:g} = {dt_max:g}; use at least {steps} steps"
        )
    for k in keys:
        if k.spec is None:
            continue
        sigma = k.spec.correlation_length
        if grid.dz > sigma / 10 * (1 + 1e-9):
            need = int(math.ceil(10 * grid.length / sigma)) + 1
            raise ValueError(f"dz={grid.dz:g} > sigma/10 for key {k.label!r}; use at least {need} z nodes")


def key_digest(key: KeyProfile) -> str:
    return hashlib.sha256(np.ascontiguousarray(key.samples).tobytes()).hexdigest()


def config_hash(description: Mapping) -> str:
    blob = json.dumps(description, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class LambdaConfig:
    """One echo-memory run.

    ``encrypt_key`` drives |2>-|3> for t < t_i. After t_i the control is
    ``decrypt_key``, or the inverted encryption key when that is None.
    """

    params: BlochParams
    probe: ProbeSpec
    encrypt_key: KeyProfile
    t_i: float
    grid: SpaceTimeGrid
    decrypt_key: Optional[KeyProfile] = None
    snapshot_times: tuple = ()

    def __post_init__(self):
        if not self.encrypt_key.z.size == self.grid.nz:
            raise ValueError("key and medium grid have different sizes")
        if self.decrypt_key is not None and not self.decrypt_key.same_grid(self.encrypt_key):
            raise ValueError("decryption key must share the medium grid")
        if self.probe.amplitude > 0.1:
            raise ValueError("probe is not weak: amplitude must be <= 0.1 Gamma")
        self.grid.index_of(self.t_i)
        keys = [k for k in (self.encrypt_key, self.decrypt_key) if k is not None]
        rate = max([1.0 / self.probe.duration, self.params.gamma, self.params.eta(self.grid.length)]
                   + [key_strength(k) for k in keys])
        check_resolution(self.grid, rate, keys)
        object.__setattr__(self, "snapshot_times", tuple(float(s) for s in self.snapshot_times))

    @property
    def decrypt_profile(self) -> KeyProfile:
        return self.encrypt_key.inverted() if self.decrypt_key is None else self.decrypt_key

    def describe(self) -> dict:
        return {
            "scheme": "lambda",
            "optical_depth": self.params.optical_depth,
            "gamma": self.params.gamma,
            "branching_31": self.params.branching_31,
            "ground_dephasing": self.params.ground_dephasing,
            "probe": {"peak_time": self.probe.peak_time, "duration": self.probe.duration,
                      "amplitude": self.probe.amplitude},
            "t_i": self.t_i,
            "grid": self.grid.describe(),
            "encrypt_key": {**self.encrypt_key.header(), "sha256": key_digest(self.encrypt_key)},
            "decrypt_key": None if self.decrypt_key is None else
            {**self.decrypt_key.header(), "sha256": key_digest(self.decrypt_key)},
            "snapshot_times": list(self.snapshot_times),
            "units": UNITS,
        }


def dem_config(optical_depth: float, key: KeyProfile, t_i: float = 0.22, duration: float = 5e-3,
               peak_time: float = DEFAULT_PEAK_TIME, amplitude: float = 0.01, t_end: Optional[float] = None,
               dt: Optional[float] = None, decrypt_key: Optional[KeyProfile] = None, snapshot_times=(),
               **bloch) -> LambdaConfig:
    """LambdaConfig with the step and window chosen from the physical scales.

    The window runs to the echo time ``2 t_i - t_p`` plus a margin long enough
    for the echo tail; the step is ``0.1 / max(D, 1/kappa, Gamma, xi Gamma / 2)``.
    """
    params = BlochParams(optical_depth, **bloch)
    d = max([key_strength(key)] + ([key_strength(decrypt_key)] if decrypt_key is not None else []))
    # eta couples every slice to the field absorbed upstream; without a control
    # field it is the fastest rate in the system.
    rate = max(d, 1.0 / duration, params.gamma, params.eta(float(key.z[-1] - key.z[0])))
    if dt is None:
        dt = STEP_FACTOR / rate
    if t_end is None:
        t_end = 2 * t_i - peak_time + max(0.1, 20 * duration, 20.0 / d if d > 0 else 0.0)
    t = uniform_time(t_end, dt, breakpoints=(t_i,))
    grid = SpaceTimeGrid(key.z, t)
    return LambdaConfig(params, ProbeSpec(peak_time, duration, amplitude), key, t_i, grid,
                        decrypt_key, tuple(snapshot_times))


@dataclass
class SimResult:
    t: np.ndarray
    input: np.ndarray
    output: np.ndarray
    metrics: MetricsBundle
    manifest: dict
    invariants: dict
    final_state: AtomicState
    snapshots: dict = field(default_factory=dict)

    def coherences(self, t: float):
        return snapshot_coherences(self, t)


def _run(state, z, t, probe, params, control=(), switch=(), snapshot_times=()) -> Propagation:
    inside = [s for s in snapshot_times if t[0] - 1e-12 <= s <= t[-1] + 1e-12]
    res = propagate(state, z, t, probe, params, control, switch, inside)
    if res.nan_step is not None:
        raise FloatingPointError(
            f"non-finite density matrix at step {res.nan_step} (t={t[res.nan_step]:.6g}); reduce the time step"
        )
    return res


def _result(config, t, inp, out, snaps, inv, state, t_ret, wall, reference_se=None, extra=None) -> SimResult:
    desc = config.describe()
    if extra:
        desc.update(extra)
    manifest = {
        "config": desc,
        "config_hash": config_hash(desc),
        "version": __version__,
        "wall_time_s": wall,
        "units": UNITS,
    }
    return SimResult(t, inp, out, evaluate(t, inp, out, t_ret, reference_se), manifest, inv, state, snaps)


def simulate_dem(config: LambdaConfig, reference_se: Optional[float] = None) -> SimResult:
    """Store, encrypt and retrieve one probe pulse."""
    return simulate_dem_branches(config, [config.decrypt_key], reference_se)[0]


def simulate_dem_branches(config: LambdaConfig, decrypt_keys: Sequence[Optional[KeyProfile]],
                          reference_se: Optional[float] = None) -> list[SimResult]:
    """Share the storage stage up to t_i and branch into several decryption keys.

    ``None`` in ``decrypt_keys`` selects the correct key. Every branch is
    bit-identical to a separate :func:`simulate_dem` call.
    """
    start = time.perf_counter()
    g = config.grid
    i = g.index_of(config.t_i)
    t = g.t
    enc = FieldSchedule(ConstantGate(1.0), config.encrypt_key, DEM_CONTROL)
    state = AtomicState.ground(g.nz, 3)
    head = _run(state, g.z, t[: i + 1], config.probe, config.params, [enc], snapshot_times=config.snapshot_times)
    inp = config.probe(t)
    shared = time.perf_counter() - start
    results = []
    for dk in decrypt_keys:
        t0 = time.perf_counter()
        prof = config.encrypt_key.inverted() if dk is None else dk
        if not prof.same_grid(config.encrypt_key):
            raise ValueError("decryption key must share the medium grid")
        check_resolution(g, key_strength(prof), [prof])
        s = state.copy()
        dec = FieldSchedule(ConstantGate(1.0), prof, DEM_CONTROL)
        tail = _run(s, g.z, t[i:], config.probe, config.params, [dec], snapshot_times=config.snapshot_times)
        out = np.concatenate([head.output[:-1], tail.output])
        snaps = {**head.snapshots, **tail.snapshots}
        inv = merge_invariants(head.invariants, tail.invariants)
        branch_cfg = config if dk is config.decrypt_key else _with_decrypt(config, dk)
        wall = shared + time.perf_counter() - t0
        results.append(_result(branch_cfg, t, inp, out, snaps, inv, s, config.t_i, wall, reference_se))
    return results


def _with_decrypt(config: LambdaConfig, key: Optional[KeyProfile]) -> LambdaConfig:
    return replace(config, decrypt_key=key)


def snapshot_coherences(source, t: Optional[float] = None):
    """(rho21(z), rho31(z)) from a SimResult snapshot at ``t`` or from an AtomicState."""
    if isinstance(source, AtomicState):
        state = source
    else:
        if t is None:
            raise ValueError("a snapshot time is needed for a SimResult")
        key = min(source.snapshots, key=lambda s: abs(s - t), default=None)
        if key is None or abs(key - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"no snapshot recorded at t={t}")
        state = source.snapshots[key]
    return state.rho(2, 1).copy(), state.rho(3, 1).copy()


def step_schedule(config: LambdaConfig) -> tuple[FieldSchedule, ...]:
    """Control schedules equivalent to the branched run (for phase functionals)."""
    if config.decrypt_key is None:
        return (build_dem_schedule(config.encrypt_key, config.t_i),)
    return (
        FieldSchedule(StepGate(config.t_i, 1.0, 0.0), config.encrypt_key, DEM_CONTROL),
        FieldSchedule(StepGate(config.t_i, 0.0, 1.0), config.decrypt_key, DEM_CONTROL),
    )
