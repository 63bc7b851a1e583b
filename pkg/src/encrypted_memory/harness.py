"""Ensembles and attack experiments: key tests, fidelity maps, shift sweeps, brute force.

Every random key is drawn from a seed derived from the master seed and the
integer coordinates of the trial, so results do not depend on execution
order or on the number of workers.
"""

from __future__ import annotations

import math
import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .disorder import CorrelationSpec, KeyProfile, constant_key, generate_key, rms_gradient_key, section_key
from .dynamics_lambda import dem_config, simulate_dem_branches
from .dynamics_n import eit_config, simulate_eit_trials
from .grid import uniform_z
from .protocol import shift_key
from .solver import invariants_ok

SCHEMES = ("lambda", "n")
ATTACKS = ("none", "wrong_key", "gradient_key", "shift_sweep", "brute_force")

# Seed-stream tags, one per experiment kind.
KEYTEST, HEATMAP, SHIFT, BRUTE = 1, 2, 3, 4


def cell_seed(master_seed: int, *coords: int) -> int:
    """64-bit seed from the master seed and integer trial coordinates."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(c) for c in coords))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class LambdaSettings:
    duration: float = 5e-3
    t_i: float = 0.22
    peak_time: float = 0.15
    amplitude: float = 0.01
    points_per_sigma: int = 20
    t_end: Optional[float] = None
    dt: Optional[float] = None


@dataclass(frozen=True)
class NSettings:
    control: float = 5.0
    duration: float = 10.0
    peak_time: float = 32.0
    amplitude: float = 0.01
    t_off: float = 50.0
    t_on: float = 120.0
    t_end: float = 200.0
    encrypt_window: tuple = (60.0, 80.0)
    decrypt_window: tuple = (90.0, 110.0)
    ramp: float = 1.0
    coarse_dt: float = 0.02
    fine_dt: Optional[float] = None
    points_per_sigma: int = 10
    gamma4: float = 0.0


@dataclass(frozen=True)
class ExperimentPlan:
    """Parameter grid and attack mode for one experiment.

    ``strengths`` are D_c for the Lambda scheme and D_s for the N scheme.
    """

    scheme: str = "lambda"
    optical_depths: tuple = (600.0,)
    strengths: tuple = (1000.0,)
    correlation_lengths: tuple = (0.01,)
    shifts: tuple = (0.0,)
    realizations: int = 1
    attack: str = "none"
    n_keys: int = 0
    master_seed: int = 0
    master_length: Optional[float] = None
    success_threshold: float = 0.5
    workers: int = 1
    lam: LambdaSettings = field(default_factory=LambdaSettings)
    eit: NSettings = field(default_factory=NSettings)

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.attack not in ATTACKS:
            raise ValueError(f"attack must be one of {ATTACKS}")
        if self.realizations < 1:
            raise ValueError("realizations must be >= 1")
        if self.n_keys < 0:
            raise ValueError("n_keys must be >= 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        for name in ("optical_depths", "strengths", "correlation_lengths", "shifts"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
            if not getattr(self, name):
                raise ValueError(f"{name} must not be empty")
        if any(s <= 0 or s > 1.0 for s in self.correlation_lengths):
            raise ValueError("correlation lengths must lie in (0, L]")
        if any(d < 0 for d in self.shifts):
            raise ValueError("shifts must be non-negative")
        if self.master_length is not None and self.master_length < 1.0 + max(self.shifts):
            raise ValueError("master key must be at least L + max shift long")

    @property
    def points_per_sigma(self) -> int:
        return self.lam.points_per_sigma if self.scheme == "lambda" else self.eit.points_per_sigma


# --- building blocks -----------------------------------------------------

def _medium(plan: ExperimentPlan, sigma: float):
    return uniform_z(1.0, plan.points_per_sigma, sigma)


def _master_key(plan, strength, sigma, seed, length) -> KeyProfile:
    """Master key on the medium spacing, at least ``length`` long."""
    dz = _medium(plan, sigma)[1]
    n = int(math.ceil(length / dz - 1e-9))
    return generate_key(np.arange(n + 1) * dz, CorrelationSpec(strength, sigma), seed)


def _lambda_branches(plan, xi, key, decrypt_keys, reference_se=None):
    s = plan.lam
    cfg = dem_config(xi, key, t_i=s.t_i, duration=s.duration, peak_time=s.peak_time, amplitude=s.amplitude,
                     t_end=s.t_end, dt=s.dt)
    return simulate_dem_branches(cfg, decrypt_keys, reference_se)


def _eit_trials(plan, xi, z, strength, trials, reference_se=None):
    s = plan.eit
    cfg = eit_config(xi, z, control=s.control, duration=s.duration, peak_time=s.peak_time,
                     amplitude=s.amplitude, t_off=s.t_off, t_on=s.t_on, t_end=s.t_end,
                     encrypt_window=s.encrypt_window, decrypt_window=s.decrypt_window, ramp=s.ramp,
                     coarse_dt=s.coarse_dt, fine_dt=s.fine_dt, switch_strength=strength, gamma4=s.gamma4)
    return simulate_eit_trials(cfg, trials, reference_se)


def _pool(workers: int):
    return ProcessPoolExecutor(max_workers=workers, mp_context=mp.get_context("spawn"))


def _map(fn, tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with _pool(min(workers, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


def _mean_se(values):
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    err = float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else math.nan
    return float(np.mean(v)), err


# --- key tests -------------------------------------------------------------

@dataclass
class KeytestReport:
    scheme: str
    t: np.ndarray
    input: np.ndarray
    traces: dict
    reference: str

    def normalized_se(self, name: str) -> float:
        return self.traces[name].metrics.normalized_se

    def table(self):
        cols = ["trial", "fidelity", "storage_efficiency", "normalized_se", "best_delay"]
        rows = [(n, r.metrics.fidelity, r.metrics.storage_efficiency, r.metrics.normalized_se,
                 r.metrics.best_delay) for n, r in self.traces.items()]
        return cols, rows


def keytest_keys(plan: ExperimentPlan, zero_keys: bool = False):
    """Encryption key plus the wrong and gradient keys of the key test."""
    d, sigma = plan.strengths[0], plan.correlation_lengths[0]
    z = _medium(plan, sigma)
    if zero_keys:
        zero = constant_key(z, 0.0, "zero")
        return zero, zero, zero
    key1 = generate_key(z, CorrelationSpec(d, sigma), cell_seed(plan.master_seed, KEYTEST, 0))
    key2 = generate_key(z, CorrelationSpec(d, sigma), cell_seed(plan.master_seed, KEYTEST, 1))
    key3 = rms_gradient_key(z, d)
    return key1, key2, key3


def run_keytest_suite(plan: ExperimentPlan, zero_keys: bool = False) -> KeytestReport:
    """Correct key, independent wrong key and gradient key (plus EIT baselines).

    Normalized SE is relative to the correct-key run for the Lambda scheme and
    to the unencrypted EIT run for the N scheme.
    """
    key1, key2, key3 = keytest_keys(plan, zero_keys)
    xi = plan.optical_depths[0]
    if plan.scheme == "lambda":
        res = _lambda_branches(plan, xi, key1, [None, key2, key3])
        ref = res[0].metrics.storage_efficiency
        traces = dict(zip(("key1", "key2", "key3"), res))
        reference = "key1"
    else:
        trials = {
            "baseline": (None, None),
            "key1": (key1, key1.inverted()),
            "key2": (key1, key2),
            "key3": (key1, key3),
            "encrypt_only": (key1, None),
            "decrypt_only": (None, key1.inverted()),
        }
        traces = _eit_trials(plan, xi, key1.z, plan.strengths[0], trials)
        ref = traces["baseline"].metrics.storage_efficiency
        reference = "baseline"
    for r in traces.values():
        r.metrics.normalized_se = r.metrics.storage_efficiency / ref if ref > 0 else math.nan
    first = next(iter(traces.values()))
    return KeytestReport(plan.scheme, first.t, first.input, traces, reference)


# --- fidelity map ------------------------------------------------------------

@dataclass
class HeatmapTable:
    optical_depths: tuple
    strengths: tuple
    mean_fidelity: np.ndarray
    stderr_fidelity: np.ndarray
    mean_se: np.ndarray
    stderr_se: np.ndarray
    completed: np.ndarray
    failures: list
    duration: float
    invariant_violations: int = 0

    def covered(self) -> np.ndarray:
        return np.array([[d * self.duration >= 1.0 - 1e-12 for d in self.strengths] for _ in self.optical_depths])

    def table(self):
        cols = ["xi", "D", "D_kappa", "mean_F", "stderr_F", "mean_SE", "stderr_SE", "n"]
        rows = []
        for i, xi in enumerate(self.optical_depths):
            for j, d in enumerate(self.strengths):
                rows.append((xi, d, d * self.duration, self.mean_fidelity[i, j], self.stderr_fidelity[i, j],
                             self.mean_se[i, j], self.stderr_se[i, j], int(self.completed[i, j])))
        return cols, rows


def _heatmap_task(args):
    plan, i, j, r = args
    xi, d = plan.optical_depths[i], plan.strengths[j]
    sigma = plan.correlation_lengths[0]
    try:
        key = generate_key(_medium(plan, sigma), CorrelationSpec(d, sigma), cell_seed(plan.master_seed, HEATMAP, i, j, r))
        res = _lambda_branches(plan, xi, key, [None])[0]
        if not invariants_ok(res.invariants):
            return i, j, r, res.metrics.fidelity, res.metrics.storage_efficiency, "invariant violation"
        return i, j, r, res.metrics.fidelity, res.metrics.storage_efficiency, None
    except Exception as exc:  # recorded per cell, not fatal
        return i, j, r, math.nan, math.nan, f"{type(exc).__name__}: {exc}"


def run_heatmap(plan: ExperimentPlan) -> HeatmapTable:
    """Mean fidelity and SE over the (xi, D) grid, ``realizations`` keys per cell."""
    if plan.scheme != "lambda":
        raise ValueError("fidelity maps are defined for the Lambda scheme")
    ni, nj = len(plan.optical_depths), len(plan.strengths)
    tasks = [(plan, i, j, r) for i in range(ni) for j in range(nj) for r in range(plan.realizations)]
    done = _map(_heatmap_task, tasks, plan.workers)
    f = np.full((ni, nj, plan.realizations), np.nan)
    se = np.full_like(f, np.nan)
    failures = []
    for i, j, r, fv, sv, err in done:
        f[i, j, r], se[i, j, r] = fv, sv
        if err:
            failures.append({"xi": plan.optical_depths[i], "D": plan.strengths[j], "realization": r, "error": err})
    mf, ef, ms, es = (np.full((ni, nj), np.nan) for _ in range(4))
    n = np.zeros((ni, nj), dtype=int)
    for i in range(ni):
        for j in range(nj):
            ok = np.isfinite(f[i, j])
            n[i, j] = ok.sum()
            mf[i, j], ef[i, j] = _mean_se(f[i, j][ok])
            ms[i, j], es[i, j] = _mean_se(se[i, j][ok])
    bad = sum(1 for f_ in failures if f_["error"] == "invariant violation")
    return HeatmapTable(plan.optical_depths, plan.strengths, mf, ef, ms, es, n, failures, plan.lam.duration, bad)


# --- shift sweep -------------------------------------------------------------

@dataclass
class ShiftCurve:
    sigma: float
    shifts: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    raw_se: np.ndarray

    @property
    def window_width(self) -> float:
        """Shift at which the normalized SE first falls to one half (linear interpolation)."""
        return half_max_width(self.shifts, self.mean)

    @property
    def tail_level(self) -> float:
        return float(self.mean[-1])


@dataclass
class ShiftSweep:
    curves: list
    scheme: str
    invariant_violations: int = 0

    def table(self):
        cols = ["sigma", "delta", "mean_normalized_se", "stderr", "window_width"]
        rows = [(c.sigma, d, m, e, c.window_width) for c in self.curves
                for d, m, e in zip(c.shifts, c.mean, c.stderr)]
        return cols, rows


def half_max_width(shifts, values) -> float:
    x = np.asarray(shifts, dtype=float)
    y = np.asarray(values, dtype=float)
    for k in range(1, x.size):
        if y[k] <= 0.5:
            y0, y1 = y[k - 1], y[k]
            if y0 == y1:
                return float(x[k])
            return float(x[k - 1] + (y0 - 0.5) * (x[k] - x[k - 1]) / (y0 - y1))
    return math.inf


def _shift_task(args):
    plan, s_idx, r = args
    sigma = plan.correlation_lengths[s_idx]
    d = plan.strengths[0]
    xi = plan.optical_depths[0]
    alpha = plan.master_length or 1.0 + max(plan.shifts) + 10 * sigma
    master = _master_key(plan, d, sigma, cell_seed(plan.master_seed, SHIFT, s_idx, r), alpha)
    z = _medium(plan, sigma)
    enc = section_key(master, 0.0, 1.0, grid_z=z)
    decs = [shift_key(enc, delta) for delta in plan.shifts]
    if plan.scheme == "lambda":
        res = _lambda_branches(plan, xi, enc, [k.inverted() for k in decs])
    else:
        trials = {f"d{k}": (enc, dk.inverted()) for k, dk in enumerate(decs)}
        out = _eit_trials(plan, xi, z, d, trials)
        res = [out[f"d{k}"] for k in range(len(decs))]
    bad = sum(not invariants_ok(x.invariants) for x in res)
    return s_idx, r, [x.metrics.storage_efficiency for x in res], bad


def run_shift_sweep(plan: ExperimentPlan) -> ShiftSweep:
    """Normalized SE against decryption-key shift for each correlation length.

    Each curve is divided by its ensemble mean at the first shift (delta = 0).
    """
    if plan.shifts[0] != 0.0:
        raise ValueError("the first shift must be 0 (normalization point)")
    tasks = [(plan, s, r) for s in range(len(plan.correlation_lengths)) for r in range(plan.realizations)]
    done = _map(_shift_task, tasks, plan.workers)
    curves = []
    for s_idx, sigma in enumerate(plan.correlation_lengths):
        raw = np.array([v for si, r, v, _ in sorted(done, key=lambda x: (x[0], x[1])) if si == s_idx])
        ref = raw[:, 0].mean()
        norm = raw / ref
        m = norm.mean(axis=0)
        e = norm.std(axis=0, ddof=1) / math.sqrt(norm.shape[0]) if norm.shape[0] > 1 else np.full(m.shape, np.nan)
        curves.append(ShiftCurve(sigma, np.array(plan.shifts), m, e, raw))
    return ShiftSweep(curves, plan.scheme, sum(x[3] for x in done))


# --- brute force ---------------------------------------------------------------

@dataclass
class AttackReport:
    threshold: float
    correct_se: float
    normalized_se: np.ndarray
    invariant_violations: int = 0

    @property
    def n_keys(self) -> int:
        return int(self.normalized_se.size)

    @property
    def successes(self) -> int:
        return int(np.sum(self.normalized_se >= self.threshold))

    @property
    def max_normalized_se(self) -> float:
        return float(self.normalized_se.max()) if self.normalized_se.size else math.nan

    def table(self):
        cols = ["attack_key", "normalized_se", "success"]
        rows = [(k, v, bool(v >= self.threshold)) for k, v in enumerate(self.normalized_se)]
        return cols, rows

    def summary(self) -> dict:
        return {
            "n_keys": self.n_keys,
            "successes": self.successes,
            "threshold": self.threshold,
            "max_normalized_se": self.max_normalized_se,
            "median_normalized_se": float(np.median(self.normalized_se)) if self.n_keys else math.nan,
            "correct_se": self.correct_se,
        }


def brute_force_encryption_key(plan: ExperimentPlan) -> KeyProfile:
    sigma = plan.correlation_lengths[0]
    return generate_key(_medium(plan, sigma), CorrelationSpec(plan.strengths[0], sigma),
                        cell_seed(plan.master_seed, BRUTE, 0))


def _brute_task(args):
    plan, lo, hi, explicit = args
    d, sigma, xi = plan.strengths[0], plan.correlation_lengths[0], plan.optical_depths[0]
    z = _medium(plan, sigma)
    enc = brute_force_encryption_key(plan)
    if explicit is not None:
        attacks = list(explicit[lo:hi])
    else:
        spec = CorrelationSpec(d, sigma)
        attacks = [generate_key(z, spec, cell_seed(plan.master_seed, BRUTE, 1, k)) for k in range(lo, hi)]
    if plan.scheme == "lambda":
        res = _lambda_branches(plan, xi, enc, [None] + attacks)
    else:
        trials = {"correct": (enc, enc.inverted())}
        trials.update({f"a{k}": (enc, a) for k, a in enumerate(attacks)})
        out = _eit_trials(plan, xi, z, d, trials)
        res = [out["correct"]] + [out[f"a{k}"] for k in range(len(attacks))]
    bad = sum(not invariants_ok(x.invariants) for x in res)
    return lo, [x.metrics.storage_efficiency for x in res], bad


def run_brute_force(plan: ExperimentPlan, n_keys: Optional[int] = None,
                    attack_keys: Optional[Sequence[KeyProfile]] = None) -> AttackReport:
    """Try ``n_keys`` fresh random keys against one fixed encryption key.

    Success means reaching ``success_threshold`` of the correct-key SE.
    ``attack_keys`` replaces the random keys, e.g. to run the correct key
    through the attack path as a control.
    """
    n = len(attack_keys) if attack_keys is not None else (plan.n_keys if n_keys is None else n_keys)
    if n < 0:
        raise ValueError("n_keys must be >= 0")
    if n == 0:
        return AttackReport(plan.success_threshold, math.nan, np.zeros(0))
    explicit = None if attack_keys is None else tuple(attack_keys)
    chunks = max(1, min(plan.workers, n))
    bounds = np.linspace(0, n, chunks + 1).astype(int)
    tasks = [(plan, int(a), int(b), explicit) for a, b in zip(bounds[:-1], bounds[1:])]
    done = sorted(_map(_brute_task, tasks, plan.workers), key=lambda x: x[0])
    correct = done[0][1][0]
    attacks = np.concatenate([np.asarray(v[1:]) for _, v, _ in done])
    return AttackReport(plan.success_threshold, correct, attacks / correct, sum(b for _, _, b in done))
