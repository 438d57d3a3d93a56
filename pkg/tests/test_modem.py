"""Tests for the GMSK modulator and the demodulator blocks."""

import math

import numpy as np
import pytest
from pydantic import ValidationError
from scipy import signal

from ble_tag_telemetry.common import BitSequence, InvalidArgumentError, IqBuffer
from ble_tag_telemetry.modem import (
    DcBlocker,
    GmskParams,
    MatchedFilter,
    MuellerMullerRecovery,
    QuadratureDemodulator,
    TimingRecoveryParams,
    gaussian_taps,
    gmsk_modulate,
    matched_filter,
    mm_timing_recovery,
    quadrature_demod,
    remove_dc,
    slice_bits,
)

FS = 4.0e6


def tone(freq_hz: float, n: int = 4000) -> IqBuffer:
    return IqBuffer(np.exp(2j * math.pi * freq_hz * np.arange(n) / FS), FS)


def demodulate(iq: IqBuffer) -> BitSequence:
    """Discriminator, DC blocker, matched filter and timing loop in one shot."""
    soft = matched_filter(remove_dc(quadrature_demod(iq)))
    return slice_bits(mm_timing_recovery(soft))


class TestParams:
    """Test cases for modem parameter validation."""

    def test_defaults(self):
        params = GmskParams()
        assert params.deviation_hz == pytest.approx(250e3)
        assert params.sample_rate_hz == FS
        assert TimingRecoveryParams().effective_gain_omega == pytest.approx(0.25 * 0.175**2)
        assert TimingRecoveryParams().max_error == 1.0

    def test_invalid_values(self):
        with pytest.raises(ValidationError):
            GmskParams(bt=0.0)
        with pytest.raises(ValidationError):
            TimingRecoveryParams(gain_mu=1.5)

    def test_gaussian_taps_unit_gain(self):
        taps = gaussian_taps(GmskParams())
        assert taps.size == 17
        assert taps.sum() == pytest.approx(1.0)
        assert np.argmax(taps) == 8


class TestModulator:
    """Test cases for gmsk_modulate."""

    def test_constant_envelope_and_length(self):
        bits = BitSequence("01" * 32)
        iq = gmsk_modulate(bits, GmskParams(), FS)
        assert len(iq) == 64 * 4 + 16
        assert np.allclose(np.abs(iq.samples), 1.0)

    def test_all_ones_advance_quarter_turn_per_symbol(self):
        iq = gmsk_modulate(BitSequence("1" * 64), GmskParams())
        phase = np.unwrap(np.angle(iq.samples))
        steps = phase[24:200:4][1:] - phase[24:200:4][:-1]
        assert np.allclose(steps, math.pi / 2, atol=1e-9)

    def test_empty_bits(self):
        with pytest.raises(InvalidArgumentError):
            gmsk_modulate(BitSequence(""), GmskParams())

    def test_inconsistent_rate(self):
        with pytest.raises(InvalidArgumentError):
            gmsk_modulate(BitSequence("0101"), GmskParams(), 2.0e6)

    def test_spectrum_within_600_khz(self, random_bits):
        iq = gmsk_modulate(random_bits(8192), GmskParams())
        freqs, psd = signal.welch(
            iq.samples, fs=FS, nperseg=1024, detrend=False, return_onesided=False
        )
        inside = psd[np.abs(freqs) <= 600e3].sum()
        assert inside / psd.sum() >= 0.99


class TestQuadratureDemod:
    """Test cases for the discriminator."""

    def test_tone_at_deviation(self):
        soft = quadrature_demod(tone(250e3), GmskParams())
        assert soft.size == 3999
        assert np.allclose(soft, 1.0, atol=1e-6)

    def test_dc_tone(self):
        assert np.allclose(quadrature_demod(tone(0.0)), 0.0)

    @pytest.mark.parametrize("freq_hz", [-400e3, -250e3, -100e3, -25e3, 25e3, 100e3, 250e3, 400e3])
    def test_linear_up_to_400_khz(self, freq_hz):
        soft = quadrature_demod(tone(freq_hz))
        assert np.allclose(soft, freq_hz / 250e3, rtol=1e-3, atol=0.0)

    def test_loopback_signs(self, random_bits):
        bits = random_bits(200)
        soft = quadrature_demod(gmsk_modulate(bits, GmskParams()))
        # symbol k peaks at sample 4k + 2 after the 8-sample pulse delay
        centers = soft[4 * np.arange(bits.length) + 9]
        assert slice_bits(centers) == bits

    def test_streaming_matches_one_shot(self, random_bits):
        iq = gmsk_modulate(random_bits(100), GmskParams())
        demod = QuadratureDemodulator(GmskParams(), FS)
        parts = [demod.process(chunk) for chunk in np.array_split(iq.samples, 7)]
        assert np.allclose(np.concatenate(parts), quadrature_demod(iq))


class TestDcRemoval:
    """Test cases for remove_dc."""

    def test_constant_settles_within_one_window(self):
        out = remove_dc(np.full(300, 0.7), window=64)
        assert np.allclose(out[63:], 0.0)

    def test_zero_input(self):
        assert np.array_equal(remove_dc(np.zeros(100)), np.zeros(100))

    def test_offset_from_carrier_error_removed(self, random_bits):
        iq = gmsk_modulate(random_bits(400), GmskParams())
        shifted = iq.with_samples(
            iq.samples * np.exp(2j * math.pi * 30e3 * np.arange(len(iq)) / FS)
        )
        raw = quadrature_demod(shifted)
        assert np.mean(raw) == pytest.approx(0.12 + np.mean(quadrature_demod(iq)), abs=1e-9)
        # the offset is gone once the window has filled
        cleaned = remove_dc(raw)
        reference = remove_dc(quadrature_demod(iq))
        assert np.allclose(cleaned[1023:], reference[1023:], atol=1e-9)

    def test_default_window_spans_many_symbols(self):
        assert DcBlocker().window == 1024

    def test_offset_at_20_db_decodes_without_errors(self, rng):
        bits = BitSequence(rng.integers(0, 2, 256))
        iq = gmsk_modulate(bits, GmskParams())
        n = np.arange(len(iq))
        noise = (rng.standard_normal(n.size) + 1j * rng.standard_normal(n.size)) * math.sqrt(0.005)
        received = iq.with_samples(iq.samples * np.exp(2j * math.pi * 30e3 * n / FS) + noise)
        assert bits.to_string() in demodulate(received).to_string()

    def test_window_too_small(self):
        with pytest.raises(InvalidArgumentError):
            DcBlocker(8)

    def test_streaming_matches_one_shot(self, rng):
        soft = rng.standard_normal(1000) + 0.3
        blocker = DcBlocker(64)
        parts = [blocker.process(chunk) for chunk in np.array_split(soft, 9)]
        assert np.allclose(np.concatenate(parts), remove_dc(soft, 64))


class TestMatchedFilter:
    """Test cases for the one-symbol matched filter."""

    def test_boxcar_taps_and_delay(self):
        mf = MatchedFilter(4)
        assert np.allclose(mf.taps, 0.25)
        assert mf.delay == pytest.approx(1.5)

    def test_constant_passes_after_one_symbol(self):
        out = matched_filter(np.full(20, 0.8))
        assert np.allclose(out[:3], [0.2, 0.4, 0.6])
        assert np.allclose(out[3:], 0.8)

    def test_sums_phase_steps_over_a_symbol(self):
        soft = np.array([0.0, 1.0, 3.0, -2.0, 2.0, 0.5])
        assert matched_filter(soft)[5] == pytest.approx((3.0 - 2.0 + 2.0 + 0.5) / 4)

    def test_streaming_matches_one_shot(self, rng):
        soft = rng.standard_normal(500)
        mf = MatchedFilter()
        parts = [mf.process(chunk) for chunk in np.array_split(soft, 11)]
        assert np.allclose(np.concatenate(parts), matched_filter(soft))

    def test_reset_clears_history(self):
        mf = MatchedFilter()
        mf.process(np.ones(8))
        mf.reset()
        assert np.allclose(mf.process(np.zeros(4)), 0.0)

    def test_empty_and_invalid(self):
        assert matched_filter(np.zeros(0)).size == 0
        with pytest.raises(InvalidArgumentError):
            MatchedFilter(0)


class TestTimingRecovery:
    """Test cases for the Mueller-Muller loop."""

    def test_square_wave_recovers_symbols(self, random_bits):
        bits = random_bits(300)
        soft = np.repeat(bits.as_bipolar().astype(float), 4)
        recovered = slice_bits(mm_timing_recovery(soft, TimingRecoveryParams()))
        assert bits.to_string() in recovered.to_string()

    @pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
    def test_gmsk_loopback(self, seed):
        bits = BitSequence(np.random.default_rng(seed).integers(0, 2, 300))
        assert bits.to_string() in demodulate(gmsk_modulate(bits, GmskParams())).to_string()

    def test_one_symbol_per_four_samples(self, random_bits):
        soft = np.repeat(random_bits(200).as_bipolar().astype(float), 4)
        assert abs(mm_timing_recovery(soft).size - 200) <= 3

    def test_error_clamp_bounds_one_click(self):
        params = TimingRecoveryParams(acquisition_symbols=0)
        outputs = []
        for click in (10.0, 1.0e6):
            soft = np.ones(400)
            soft[40] = click
            outputs.append(mm_timing_recovery(soft, params))
        small, large = outputs
        assert small.size == large.size
        assert np.allclose(small[11:], large[11:])
        assert abs(small.size - 100) <= 2

    def test_unclamped_click_throws_the_phase(self):
        soft = np.ones(400)
        soft[40] = 1.0e6
        loose = TimingRecoveryParams(acquisition_symbols=0, max_error=1.0e9)
        assert mm_timing_recovery(soft, loose).size < 20

    def test_empty(self):
        assert mm_timing_recovery(np.zeros(0)).size == 0

    def test_streaming_matches_one_shot(self, random_bits):
        iq = gmsk_modulate(random_bits(200), GmskParams())
        soft = matched_filter(remove_dc(quadrature_demod(iq)))
        loop = MuellerMullerRecovery()
        parts = [loop.process(chunk) for chunk in np.array_split(soft, 13)]
        parts.append(loop.flush())
        assert np.allclose(np.concatenate(parts), mm_timing_recovery(soft))


class TestSlicer:
    """Test cases for slice_bits."""

    def test_signs(self):
        assert slice_bits(np.array([0.9, -0.2, 0.1])).to_string() == "101"

    def test_zero_maps_to_one(self):
        assert slice_bits(np.zeros(5)).to_string() == "11111"
