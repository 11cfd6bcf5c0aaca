import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cloakkey import channel
from cloakkey.entropy import (RUNNING_AVERAGE, DegenerateFit, EntropyConfig, LfsrSpec,
                              PhysicalBitGenerator, bias_zscore, classify_bits, fit_run_length,
                              lfsr_keystream, lfsr_whiten, run_length_histogram, sample_voltages)

from runlength_data import L1, L2


def reference_lfsr(width, taps, state_bits, n):
    """List-based Fibonacci register: stages[0] is stage 1, stages[-1] the output."""
    stages = list(state_bits)
    out = []
    for _ in range(n):
        out.append(stages[-1])
        fb = 0
        for t in taps:
            fb ^= stages[t - 1]
        stages = [fb] + stages[:-1]
    return out


def test_sample_voltages_deterministic():
    cfg = EntropyConfig(seed=11)
    assert np.array_equal(sample_voltages(1000, cfg), sample_voltages(1000, cfg))


def test_sample_moments():
    cfg = EntropyConfig(seed=3)
    v = sample_voltages(10**6, cfg)
    mean, sig = channel.mean_voltage(cfg.channel), channel.sigma_v(cfg.channel)
    assert abs(v.mean() - mean) < 5 * sig / 1e3
    assert v.std() == pytest.approx(sig, rel=0.01)


def test_sample_count_validated():
    with pytest.raises(ValueError):
        sample_voltages(0, EntropyConfig())


def test_config_validation():
    with pytest.raises(ValueError):
        EntropyConfig(sampling_window=0)
    with pytest.raises(ValueError):
        EntropyConfig(mean_reference_mode="median")


def test_classify_examples():
    assert classify_bits([3.0, 1.0, 2.5], 2.0).tolist() == [1, 0, 1]
    assert classify_bits([3.0, 2.0, 1.0], 2.0).tolist() == [1, 0]


def test_classify_balance():
    cfg = EntropyConfig(seed=5)
    bits = classify_bits(sample_voltages(10**6, cfg), channel.mean_voltage(cfg.channel))
    assert abs(bits.mean() - 0.5) < 3 / (2 * math.sqrt(10**6))


def test_lfsr_period_15():
    ks = lfsr_keystream(LfsrSpec(4, (4, 3), 0b0001), 45)
    assert ks[:15].tolist() == ks[15:30].tolist() == ks[30:45].tolist()
    for p in (1, 3, 5):
        assert ks[:15].tolist() != np.roll(ks[:15], p).tolist()
    assert ks[:15].sum() == 8  # m-sequence balance


def test_lfsr_matches_reference_register():
    spec = LfsrSpec(4, (4, 3), 0b0001)
    assert lfsr_keystream(spec, 40).tolist() == reference_lfsr(4, (4, 3), [1, 0, 0, 0], 40)
    spec32 = LfsrSpec()
    state = [(spec32.initial_state >> i) & 1 for i in range(32)]
    assert lfsr_keystream(spec32, 500).tolist() == reference_lfsr(32, spec32.taps, state, 500)


def test_lfsr_spec_validation():
    with pytest.raises(ValueError):
        LfsrSpec(4, (4, 3), 0)
    with pytest.raises(ValueError):
        LfsrSpec(4, (5,), 1)
    with pytest.raises(ValueError):
        LfsrSpec(4, (), 1)
    assert LfsrSpec.from_bits(4, (4, 3), [1, 0, 0, 0]).initial_state == 1


def test_whiten_zero_input_gives_keystream():
    spec = LfsrSpec(4, (4, 3), 1)
    assert lfsr_whiten(np.zeros(30, np.uint8), spec).tolist() == lfsr_keystream(spec, 30).tolist()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=300))
def test_whiten_involution(bits):
    arr = np.array(bits, np.uint8)
    out = lfsr_whiten(lfsr_whiten(arr))
    assert out.tolist() == bits


def test_histogram_examples():
    assert run_length_histogram([0, 1, 1, 0, 0, 0, 1]) == {1: 2, 2: 1, 3: 1}
    assert run_length_histogram([1] * 9) == {9: 1}
    with pytest.raises(ValueError):
        run_length_histogram([])


@settings(max_examples=80, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=400))
def test_histogram_partition_identity(bits):
    hist = run_length_histogram(bits)
    assert sum(k * n for k, n in hist.items()) == len(bits)


def test_fit_exact_model():
    hist = {k: 1e6 * 2.0**-k for k in range(1, 15)}
    fit = fit_run_length(hist)
    assert fit.eps == pytest.approx(0.0, abs=1e-9)
    assert fit.c == pytest.approx(1e6, rel=1e-9)


def test_fit_recovers_eps():
    eps = 0.03
    hist = {k: 5e5 * math.exp(-k * math.log(2) * (1 - eps)) for k in range(1, 20)}
    assert fit_run_length(hist).eps == pytest.approx(eps, abs=1e-9)


def test_fit_scale_equivariance():
    base = fit_run_length(L1)
    scaled = fit_run_length([(k, 10 * n) for k, n in L1])
    assert scaled.eps == pytest.approx(base.eps, abs=1e-12)
    assert scaled.c == pytest.approx(10 * base.c, rel=1e-9)


def test_fit_reference_fixture():
    fit = fit_run_length(L1 + L2)
    assert 310000 <= fit.c <= 330000
    assert -0.02 <= fit.eps <= 0.02
    # Frozen by an independent weighted least-squares evaluation.
    assert fit.c == pytest.approx(319358, rel=1e-4)
    assert fit.eps == pytest.approx(0.00026, abs=5e-5)


def test_fit_degenerate():
    with pytest.raises(DegenerateFit):
        fit_run_length({5: 100})
    with pytest.raises(DegenerateFit):
        fit_run_length({1: 10, 2: 5, 3: 0})


def test_generator_statistics():
    gen = PhysicalBitGenerator(EntropyConfig(seed=9))
    bits = gen.bits(10**6)
    assert abs(bias_zscore(bits)) < 3
    fit = fit_run_length(run_length_histogram(bits))
    assert abs(fit.eps) < 0.05


def test_generator_deterministic_and_streaming():
    a = PhysicalBitGenerator(EntropyConfig(seed=4), chunk=1000)
    b = PhysicalBitGenerator(EntropyConfig(seed=4), chunk=1000)
    assert np.array_equal(a.bits(5000), b.bits(5000))
    assert not np.array_equal(a.bits(5000), PhysicalBitGenerator(EntropyConfig(seed=5), chunk=1000).bits(5000))


def test_running_average_mode_balanced():
    gen = PhysicalBitGenerator(EntropyConfig(seed=2, mean_reference_mode=RUNNING_AVERAGE), lfsr=None)
    bits = gen.raw_bits(200_000)
    assert abs(bias_zscore(bits)) < 4


def test_adc_digitisation_drops_ties_only():
    cfg = EntropyConfig(seed=1, adc_bits=4)
    gen = PhysicalBitGenerator(cfg, lfsr=None)
    bits = gen.raw_bits(1000)
    assert bits.size == 1000
    assert gen.discarded == 0  # level centres never equal the analytic mean
