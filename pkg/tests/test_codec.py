import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cloakkey.codec import (MaryConfig, basis_bits_of, basis_index, basis_indices, basis_voltage,
                            candidate_levels, cyclic_distance, decode_sample, dequantize,
                            encode_sample, grid_index, grid_symbol, quantize, wrap)
from cloakkey.channel import ChannelParams, sigma_v
from cloakkey.errors import ConfigError

TOY = MaryConfig(256, 3.0)


def test_config_properties():
    c = MaryConfig(1024, 10.0)
    assert (c.m, c.v_max, c.adc_levels, c.adc_bits) == (10, 20.0, 2048, 11)
    assert c.basis_spacing == pytest.approx(20 / 1024)
    assert c.grid_step == c.lsb == pytest.approx(20 / 2048)
    assert (c.bit_level_zero, c.bit_level_one) == (0.0, 10.0)


@pytest.mark.parametrize("M", [0, 2, 3, 6, 100, 2**16])
def test_config_rejects_bad_m(M):
    with pytest.raises(ConfigError):
        MaryConfig(M)


def test_config_rejects_bad_bmax():
    with pytest.raises(ConfigError):
        MaryConfig(8, 0.0)


def test_basis_index_examples():
    assert basis_index([0, 0, 0]) == 0
    assert basis_index([1, 0, 1]) == 5
    assert basis_index([1] * 8) == 255
    with pytest.raises(ValueError):
        basis_index([1, 0], m=3)


def test_basis_indices_blocks():
    bits = np.array([0, 0, 0, 1, 0, 1, 1, 1, 1], np.uint8)
    assert basis_indices(bits, 3).tolist() == [0, 5, 7]
    with pytest.raises(ValueError):
        basis_indices(bits[:-1], 3)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 1023), min_size=1, max_size=50))
def test_basis_bits_round_trip(ks):
    assert basis_indices(basis_bits_of(ks, 10), 10).tolist() == ks


def test_basis_voltage_examples():
    assert basis_voltage(0, TOY) == 0.0
    assert basis_voltage(1, TOY) == pytest.approx(-2.98828125, abs=1e-15)
    assert basis_voltage(2, TOY) == pytest.approx(0.0234375, abs=1e-15)
    with pytest.raises(ValueError):
        basis_voltage(256, TOY)


def oracle_wrap(v, period):
    while v >= period:
        v -= period
    while v < 0:
        v += period
    return v


def test_wrap_examples():
    assert wrap(6.5, TOY) == pytest.approx(0.5)
    assert wrap(-0.5, TOY) == pytest.approx(5.5)
    assert wrap(3.0, TOY) == 3.0


@settings(max_examples=100, deadline=None)
@given(st.floats(-100, 100, allow_nan=False))
def test_wrap_matches_oracle(v):
    w = wrap(v, TOY)
    assert 0 <= w < TOY.v_max
    # compare cyclically: the oracle can land on the period itself for tiny negatives
    assert cyclic_distance(w, oracle_wrap(v, TOY.v_max), TOY) < 1e-9


def test_encode_examples():
    assert encode_sample(0, 0, 0.0, TOY) == 0
    # b_max sits exactly on the middle level of the 2M-level ADC.
    assert encode_sample(1, 0, 0.0, TOY) == 256
    # k=2 is two lattice steps up; a quarter step of noise stays on that level.
    assert encode_sample(0, 2, TOY.lsb / 4, TOY) == 2
    assert encode_sample(0, 1, 0.0, TOY) == 257


def test_quantize_bounds():
    assert quantize(0.0, TOY) == 0
    assert quantize(TOY.v_max - 1e-9, TOY) == 0  # nearest level is the wrapped zero
    assert quantize(TOY.v_max - 0.6 * TOY.lsb, TOY) == TOY.adc_levels - 1
    with pytest.raises(ValueError):
        quantize(float("nan"), TOY)
    with pytest.raises(ValueError):
        dequantize(TOY.adc_levels, TOY)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 6.0, exclude_max=True))
def test_quantization_error_bound(v):
    back = dequantize(quantize(v, TOY), TOY)
    assert cyclic_distance(back, v, TOY) <= TOY.lsb / 2 + 1e-12


@pytest.mark.parametrize("M", [4, 256, 1024])
def test_zero_noise_round_trip_exhaustive(M):
    cfg = MaryConfig(M, 10.0)
    k = np.tile(np.arange(M), 2)
    bits = np.repeat([0, 1], M)
    codes = encode_sample(bits, k, np.zeros(2 * M), cfg)
    assert np.array_equal(decode_sample(codes, k, cfg), bits)


def test_decode_tie_goes_to_zero():
    # residual of exactly b_max/2 is equidistant from both bit levels
    code = quantize(TOY.b_max / 2, TOY)
    assert dequantize(code, TOY) == pytest.approx(TOY.b_max / 2)
    assert decode_sample(code, 0, TOY) == 0
    code = quantize(1.5 * TOY.b_max, TOY)
    assert decode_sample(code, 0, TOY) == 0


def test_decode_anchor_noise_sample():
    cfg = MaryConfig(1024, 10.0)
    rng = np.random.default_rng(1)
    n = 200_000
    bits = rng.integers(0, 2, n)
    k = rng.integers(0, cfg.M, n)
    noise = rng.normal(0, sigma_v(ChannelParams()), n)
    assert np.array_equal(decode_sample(encode_sample(bits, k, noise, cfg), k, cfg), bits)


def test_lattice_bijection():
    """The 2M wrapped (bit, k) levels are exactly the 2M ADC levels, once each."""
    for M in (4, 256, 1024):
        cfg = MaryConfig(M, 10.0)
        volts, bits, ks = candidate_levels(cfg)
        codes = quantize(volts, cfg)
        assert sorted(codes.tolist()) == list(range(2 * M))
        assert np.allclose(dequantize(codes, cfg), volts, atol=1e-9)
        assert np.array_equal(grid_index(bits, ks, cfg), codes)
        b2, k2 = grid_symbol(codes, cfg)
        assert np.array_equal(b2, bits) and np.array_equal(k2, ks)


def test_neighbouring_levels_alternate_except_seams():
    M = 256
    cfg = MaryConfig(M, 10.0)
    bit_at = grid_symbol(np.arange(2 * M), cfg)[0]
    same = np.flatnonzero(bit_at == np.roll(bit_at, -1))
    assert same.tolist() == [M - 1, 2 * M - 1]


def test_same_bit_bases_two_apart_are_one_spacing_apart():
    M = 256
    cfg = MaryConfig(M, 10.0)
    k = np.arange(M - 2)
    d = cyclic_distance(wrap(basis_voltage(k, cfg), cfg), wrap(basis_voltage(k + 2, cfg), cfg), cfg)
    assert np.allclose(d, cfg.basis_spacing)


def test_adjacent_bases_are_not_one_spacing_apart():
    # The alternating map puts k and k+1 roughly b_max apart, not v_max/M.
    cfg = MaryConfig(256, 10.0)
    d = cyclic_distance(wrap(basis_voltage(0, cfg), cfg), wrap(basis_voltage(1, cfg), cfg), cfg)
    assert d == pytest.approx(cfg.b_max - cfg.b_max / cfg.M)


def test_bit0_image_is_half_the_lattice():
    cfg = MaryConfig(256, 10.0)
    v = wrap(basis_voltage(np.arange(256), cfg), cfg)
    codes = quantize(v, cfg)
    assert len(set(codes.tolist())) == 256
    assert np.allclose(dequantize(codes, cfg), v)
