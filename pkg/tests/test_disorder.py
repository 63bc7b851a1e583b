import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from encrypted_memory import (
    CorrelationSpec, constant_key, estimate_correlation, generate_key, generate_keys, gradient_key,
    load_key_csv, load_key_npz, save_key_csv, save_key_npz, section_key, uniform_z,
)
from encrypted_memory.protocol import shift_key

Z = uniform_z(1.0, 20, 0.01)


@pytest.fixture(scope="module")
def ensemble():
    spec = CorrelationSpec(1000.0, 0.01)
    return generate_keys(Z, spec, range(500))


def test_long_correlation_gives_near_constant_field():
    spec = CorrelationSpec(1.0, 10.0)
    for seed in range(5):
        k = generate_key(Z, spec, seed, allow_long_correlation=True)
        # derivative std is sqrt(2) D / sigma, so spread over L is ~0.14 D
        assert np.ptp(k.samples) < 0.5


def test_sigma_longer_than_span_rejected():
    with pytest.raises(ValueError, match="exceeds grid span"):
        generate_key(Z, CorrelationSpec(1.0, 10.0), 0)


def test_coarse_grid_rejected_with_node_count():
    with pytest.raises(ValueError, match="at least 1001 nodes"):
        generate_key(np.linspace(0, 1, 501), CorrelationSpec(1.0, 0.01), 0)


def test_variance_at_each_z(ensemble):
    data = np.stack([k.samples for k in ensemble])
    var = np.mean(data**2, axis=0)
    d2 = 1000.0**2
    # sample variance of 500 Gaussian draws has relative standard error sqrt(2/500)
    se = math.sqrt(2 / 500)
    assert np.max(np.abs(var / d2 - 1)) < 4.5 * se  # bonferroni bound over ~1000 nodes
    for idx in (0, Z.size // 2, Z.size - 1):
        assert abs(var[idx] / d2 - 1) < 0.10
    # stationarity: no trend along z beyond sampling error
    halves = var[: Z.size // 2].mean(), var[Z.size // 2:].mean()
    assert abs(halves[0] - halves[1]) / d2 < 0.05


def test_correlation_at_lag_sigma():
    keys = generate_keys(Z, CorrelationSpec(1.0, 0.01), range(500))
    est = estimate_correlation(keys, [0.01])
    assert abs(est.values[0] - math.exp(-1)) < 0.1 * math.exp(-1)


def test_estimator_lag0_and_lag3sigma():
    keys = generate_keys(Z, CorrelationSpec(2.0, 0.01), range(1000))
    est = estimate_correlation(keys, [0.0, 0.03])
    assert abs(est.values[0] / 4.0 - 1) < 0.05
    assert abs(est.values[1]) < 0.05 * 4.0


def test_estimator_on_duplicated_key_is_exact():
    k = generate_key(Z, CorrelationSpec(3.0, 0.01), 11)
    est = estimate_correlation([k, k], [0.0, 0.005, 0.02])
    s = k.samples
    for lag, v, e in zip([0, 10, 40], est.values, est.stderr):
        assert v == pytest.approx(np.mean(s[: s.size - lag] * s[lag:]), rel=1e-14)
        assert e == 0.0


def test_estimator_rejects_mismatch_and_single_key():
    a = generate_key(Z, CorrelationSpec(1.0, 0.01), 0)
    b = generate_key(uniform_z(1.0, 30, 0.01), CorrelationSpec(1.0, 0.01), 0)
    with pytest.raises(ValueError, match="mismatched"):
        estimate_correlation([a, b], [0.0])
    with pytest.raises(ValueError):
        estimate_correlation([a], [0.0])


def test_gaussian_marginals(ensemble):
    x = np.array([k.samples[Z.size // 2] for k in ensemble]) / 1000.0
    n = x.size
    assert abs(stats.skew(x)) < 3 * math.sqrt(6 / n)
    assert abs(stats.kurtosis(x)) < 3 * math.sqrt(24 / n)


def test_zero_mean(ensemble):
    m = np.array([k.samples.mean() for k in ensemble])
    # mean over L of a field with correlation length sigma has variance ~ D^2 sigma sqrt(pi) / L
    assert abs(m.mean()) < 3 * 1000 * math.sqrt(0.01 * math.sqrt(math.pi) / len(m))


def test_determinism_and_worker_independence():
    spec = CorrelationSpec(50.0, 0.02)
    one = generate_keys(uniform_z(1, 10, 0.02), spec, range(16), workers=1)
    four = generate_keys(uniform_z(1, 10, 0.02), spec, range(16), workers=4)
    for a, b in zip(one, four):
        assert np.array_equal(a.samples, b.samples)
    again = generate_key(uniform_z(1, 10, 0.02), spec, 3)
    assert np.array_equal(again.samples, one[3].samples)
    assert not np.array_equal(one[0].samples, one[1].samples)


def test_gradient_key():
    assert np.all(gradient_key(Z, 0.0).samples == 0.0)
    g = gradient_key(Z, 7.0)
    assert g.samples[-1] - g.samples[0] == pytest.approx(7.0)
    assert abs(g.samples.mean()) < 1e-12
    assert np.allclose(np.diff(g.samples, 2), 0.0, atol=1e-12)


def test_section_identity_and_grid():
    zm = np.arange(3001) * 0.0005
    master = generate_key(zm, CorrelationSpec(1.0, 0.01), 5)
    whole = section_key(master, 0.0, master.span)
    assert np.array_equal(whole.samples, master.samples)
    mid = section_key(master, 0.3, 1.0, grid_z=Z)
    assert mid.samples.size == Z.size
    assert mid.section_offset == pytest.approx(0.3)
    with pytest.raises(ValueError, match="outside master"):
        section_key(master, 0.6, 1.0)
    with pytest.raises(ValueError):
        section_key(master, -0.1, 1.0)


def test_sections_5_sigma_apart_are_nearly_independent():
    sigma = 0.01
    zm = np.arange(2201) * 0.0005
    num = den_a = den_b = 0.0
    for seed in range(200):
        m = generate_key(zm, CorrelationSpec(1.0, sigma), seed)
        a = section_key(m, 0.0, 1.0).samples
        b = section_key(m, 5 * sigma, 1.0).samples
        num += np.dot(a, b)
        den_a += np.dot(a, a)
        den_b += np.dot(b, b)
    assert abs(num / math.sqrt(den_a * den_b)) < 0.05


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 400), st.integers(-200, 200))
def test_shift_then_back(k0, dk):
    zm = np.arange(2001) * 0.001
    m = generate_key(zm, CorrelationSpec(1.0, 0.05), 1)
    base = section_key(m, k0 * 0.001, 1.0)
    if not 0 <= k0 + dk <= 1000:
        with pytest.raises(ValueError):
            shift_key(base, dk * 0.001)
        return
    there = shift_key(base, dk * 0.001)
    back = shift_key(there, -dk * 0.001)
    assert np.array_equal(back.samples, base.samples)
    assert np.array_equal(there.samples, m.samples[k0 + dk: k0 + dk + 1001])


@settings(max_examples=20, deadline=None)
@given(st.floats(-1e4, 1e4, allow_nan=False), st.integers(11, 400))
def test_gradient_properties(slope, n):
    z = np.linspace(0.0, 1.0, n)
    g = gradient_key(z, slope)
    assert g.samples[-1] - g.samples[0] == pytest.approx(slope, abs=1e-9 * (1 + abs(slope)))
    assert abs(g.samples.mean()) <= 1e-12 * (1 + abs(slope))


def test_inverted_is_involution():
    k = generate_key(Z, CorrelationSpec(1.0, 0.01), 2)
    assert np.array_equal(k.inverted().inverted().samples, k.samples)
    zero = constant_key(Z, 0.0)
    assert np.all(zero.inverted().samples == 0.0)


@pytest.mark.parametrize("fmt", ["csv", "npz"])
def test_key_persistence_round_trip(tmp_path, fmt):
    k = section_key(generate_key(np.arange(1501) * 0.001, CorrelationSpec(1000.0, 0.01), 2**63 + 5), 0.25, 1.0)
    save, load = (save_key_csv, load_key_csv) if fmt == "csv" else (save_key_npz, load_key_npz)
    back = load(save(k, tmp_path / f"key.{fmt}"))
    assert np.array_equal(back.samples, k.samples)
    assert np.array_equal(back.z, k.z)
    assert back.seed == k.seed
    assert back.spec == k.spec
    assert back.master_length == k.master_length
    assert back.section_offset == k.section_offset
