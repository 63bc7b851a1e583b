import math

import numpy as np
import pytest

from encrypted_memory import (
    CorrelationSpec, ExperimentPlan, LambdaSettings, NSettings, cell_seed, dem_config, generate_key,
    run_brute_force, run_heatmap, run_keytest_suite, run_shift_sweep, simulate_dem, uniform_z,
)
from encrypted_memory.dynamics_n import relative_l2
from encrypted_memory.harness import HEATMAP, brute_force_encryption_key, half_max_width

SMALL = dict(correlation_lengths=(0.05,), lam=LambdaSettings(points_per_sigma=10))
# 10 points per sigma at sigma = L/100: enough independent cells for the key tests
FINE = dict(correlation_lengths=(0.01,), lam=LambdaSettings(points_per_sigma=10))
SHORT_N = NSettings(control=3.0, duration=1.2, peak_time=3.0, t_off=5.0, t_on=42.0, t_end=60.0,
                    encrypt_window=(16.0, 26.0), decrypt_window=(28.0, 38.0))


def test_cell_seed():
    a = cell_seed(7, 2, 0, 1, 3)
    assert a == cell_seed(7, 2, 0, 1, 3)
    assert len({cell_seed(7, 2, 0, 1, r) for r in range(100)}) == 100
    assert a != cell_seed(8, 2, 0, 1, 3)
    assert a != cell_seed(7, 2, 1, 0, 3)
    assert 0 <= a < 2**64


def test_plan_validation():
    with pytest.raises(ValueError):
        ExperimentPlan(realizations=0)
    with pytest.raises(ValueError):
        ExperimentPlan(scheme="v")
    with pytest.raises(ValueError):
        ExperimentPlan(shifts=(0.0, 0.5), master_length=1.2)
    with pytest.raises(ValueError):
        ExperimentPlan(correlation_lengths=(2.0,))


def test_single_cell_heatmap_equals_direct_call():
    plan = ExperimentPlan(optical_depths=(300.0,), strengths=(1000.0,), master_seed=5, **SMALL)
    table = run_heatmap(plan)
    key = generate_key(uniform_z(1.0, 10, 0.05), CorrelationSpec(1000.0, 0.05), cell_seed(5, HEATMAP, 0, 0, 0))
    direct = simulate_dem(dem_config(300.0, key))
    assert table.mean_fidelity[0, 0] == direct.metrics.fidelity
    assert table.mean_se[0, 0] == direct.metrics.storage_efficiency
    assert table.completed[0, 0] == 1 and not table.failures
    cols, rows = table.table()
    assert len(rows) == 1 and rows[0][2] == pytest.approx(5.0)


def test_heatmap_records_failures_without_aborting():
    plan = ExperimentPlan(optical_depths=(300.0,), strengths=(1000.0, 5.0), **SMALL)
    table = run_heatmap(plan)
    assert table.completed[0, 0] == 1
    assert table.covered().tolist() == [[True, False]]
    assert np.isfinite(table.mean_fidelity[0, 1]) or table.failures


def test_error_bars_shrink_with_realizations():
    base = dict(optical_depths=(300.0,), strengths=(400.0,), master_seed=3, **SMALL)
    few = run_heatmap(ExperimentPlan(realizations=8, **base))
    many = run_heatmap(ExperimentPlan(realizations=32, **base))
    e8, e32 = few.stderr_fidelity[0, 0], many.stderr_fidelity[0, 0]
    assert e32 < e8
    # both estimate the same spread: stderr * sqrt(N) agrees within sampling noise
    assert 0.5 < (e8 * math.sqrt(8)) / (e32 * math.sqrt(32)) < 2.0


def test_brute_force_empty_and_control():
    plan = ExperimentPlan(optical_depths=(300.0,), strengths=(1000.0,), attack="brute_force", **SMALL)
    empty = run_brute_force(plan, n_keys=0)
    assert empty.n_keys == 0 and empty.successes == 0
    enc = brute_force_encryption_key(plan)
    ctrl = run_brute_force(plan, attack_keys=[enc.inverted()])
    assert ctrl.successes == 1
    assert ctrl.normalized_se[0] == pytest.approx(1.0, abs=1e-12)


def test_brute_force_worker_count_independent():
    plan = ExperimentPlan(optical_depths=(300.0,), strengths=(1000.0,), attack="brute_force", n_keys=4,
                          master_seed=11, **SMALL)
    one = run_brute_force(plan)
    two = run_brute_force(ExperimentPlan(**{**plan.__dict__, "workers": 2}))
    assert np.array_equal(one.normalized_se, two.normalized_se)
    assert one.successes == 0
    assert one.summary()["n_keys"] == 4


def test_shift_sweep_normalization_and_width():
    plan = ExperimentPlan(optical_depths=(300.0,), strengths=(1000.0,), shifts=(0.0, 0.001, 0.004, 0.1),
                          realizations=2, attack="shift_sweep", **FINE)
    sweep = run_shift_sweep(plan)
    c = sweep.curves[0]
    assert c.mean[0] == pytest.approx(1.0, abs=1e-12)
    assert np.argmax(c.mean) == 0
    assert c.mean[-1] < 0.05  # 10 sigma away
    assert 0.0 < c.window_width < 0.004
    with pytest.raises(ValueError):
        run_shift_sweep(ExperimentPlan(shifts=(0.01, 0.0), **SMALL))


def test_half_max_width():
    assert half_max_width([0, 1, 2], [1.0, 0.6, 0.2]) == pytest.approx(1.25)
    assert half_max_width([0, 1], [1.0, 0.8]) == math.inf


def test_keytest_lambda_and_zero_keys():
    plan = ExperimentPlan(optical_depths=(600.0,), strengths=(1000.0,), attack="wrong_key", **FINE)
    rep = run_keytest_suite(plan)
    assert rep.traces["key1"].metrics.fidelity >= 0.9
    assert rep.normalized_se("key1") == 1.0
    assert rep.normalized_se("key2") < 0.05
    assert rep.normalized_se("key3") < 0.05
    key3 = rep.traces["key3"].manifest["config"]["decrypt_key"]
    assert key3["label"].startswith("gradient")
    # without disorder nothing rephases: only the free-induction tail of the
    # optically thick line remains, with no pulse-shaped echo at 2 t_i - t_p
    zero = run_keytest_suite(plan, zero_keys=True).traces["key1"]
    echo = 2 * 0.22 - 0.15
    near = lambda r: np.max(np.abs(r.output[np.abs(r.t - echo) < 0.025]))
    assert near(zero) < 0.25 * near(rep.traces["key1"])
    assert zero.metrics.fidelity < 0.5


def test_keytest_eit_and_zero_keys():
    plan = ExperimentPlan(scheme="n", optical_depths=(50.0,), strengths=(30.0,), correlation_lengths=(0.05,),
                          eit=SHORT_N)
    rep = run_keytest_suite(plan)
    base = rep.traces["baseline"]
    assert relative_l2(base.t, rep.traces["key1"].output, base.output, 38.0) < 0.01
    for name in ("key2", "key3", "encrypt_only", "decrypt_only"):
        assert rep.normalized_se(name) < 0.05, name
    zero = run_keytest_suite(plan, zero_keys=True)
    for name in ("key1", "key2", "key3", "encrypt_only", "decrypt_only"):
        assert np.array_equal(zero.traces[name].output, zero.traces["baseline"].output)
