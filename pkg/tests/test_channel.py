"""Tests for the link budget and the channel impairment model."""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from ble_tag_telemetry.channel import (
    AntennaPattern,
    ChannelParams,
    LinkBudget,
    apply_channel,
    distance_for_rx_power,
    distance_for_snr,
    fractional_delay,
    fspl_db,
    noise_power_dbm,
    pattern_gain,
    resolve_levels,
    rx_power_dbm,
    rx_snr_db,
    wrap_degrees,
)
from ble_tag_telemetry.common import InvalidArgumentError, IqBuffer
from ble_tag_telemetry.modem import GmskParams, gmsk_modulate, quadrature_demod

FS = 4.0e6
BLE_CHANNEL_39_HZ = 2.48e9


@pytest.fixture
def gmsk_burst(random_bits):
    return gmsk_modulate(random_bits(280), GmskParams())


class TestAntennaPattern:
    """Test cases for pattern_gain."""

    def test_boresight(self):
        assert pattern_gain(AntennaPattern(), 0.0) == pytest.approx(16.0)

    def test_rolloff(self):
        pattern = AntennaPattern()
        assert pattern_gain(pattern, 28.0) == pytest.approx(4.0)
        assert pattern_gain(pattern, 14.0) == pytest.approx(13.0)
        assert pattern_gain(pattern, -14.0) == pytest.approx(13.0)

    def test_floor(self):
        assert pattern_gain(AntennaPattern(), 90.0) == pytest.approx(-4.0)
        assert pattern_gain(AntennaPattern(), -90.0) == pytest.approx(-4.0)

    def test_out_of_range(self):
        with pytest.raises(InvalidArgumentError):
            pattern_gain(AntennaPattern(), 200.0)

    def test_wrap(self):
        assert wrap_degrees(190.0) == pytest.approx(-170.0)
        assert wrap_degrees(-30.0) == pytest.approx(-30.0)


class TestLinkBudget:
    """Test cases for path loss and SNR."""

    def test_fspl(self):
        assert fspl_db(1.0, BLE_CHANNEL_39_HZ) == pytest.approx(40.3, abs=0.05)
        assert fspl_db(360.0, BLE_CHANNEL_39_HZ) == pytest.approx(91.5, abs=0.05)

    def test_fspl_invalid(self):
        with pytest.raises(InvalidArgumentError):
            fspl_db(0.0, BLE_CHANNEL_39_HZ)
        with pytest.raises(InvalidArgumentError):
            fspl_db(10.0, -1.0)

    def test_snr_at_360_m(self):
        budget = LinkBudget()
        expected = (
            8.0 + 0.0 + 16.0
            - fspl_db(360.0, budget.frequency_hz)
            - (-174.0 + 10.0 * math.log10(1.2e6) + 7.0)
        )
        snr = rx_snr_db(budget, AntennaPattern(), 360.0, 0.0)
        assert snr == pytest.approx(expected)
        assert snr == pytest.approx(38.7, abs=0.1)

    def test_floor_costs_sidelobe_level(self):
        budget, pattern = LinkBudget(), AntennaPattern()
        diff = rx_snr_db(budget, pattern, 100.0, 0.0) - rx_snr_db(budget, pattern, 100.0, 90.0)
        assert diff == pytest.approx(pattern.sidelobe_floor_db)

    def test_double_distance(self):
        budget = LinkBudget()
        drop = rx_snr_db(budget, None, 100.0) - rx_snr_db(budget, None, 200.0)
        assert drop == pytest.approx(20.0 * math.log10(2.0))

    def test_no_pattern_uses_budget_gain(self):
        budget = LinkBudget(rx_gain_dbi=10.0)
        assert rx_power_dbm(budget, None, 1.0) == pytest.approx(
            8.0 + 10.0 - fspl_db(1.0, budget.frequency_hz)
        )

    def test_inversions(self):
        budget, pattern = LinkBudget(), AntennaPattern()
        d = distance_for_snr(budget, pattern, 10.0)
        assert rx_snr_db(budget, pattern, d) == pytest.approx(10.0)
        d = distance_for_rx_power(budget, pattern, -70.0, 20.0)
        assert rx_power_dbm(budget, pattern, d, 20.0) == pytest.approx(-70.0)

    def test_squelch_gate_distance(self):
        budget = LinkBudget()
        gate = distance_for_rx_power(budget, AntennaPattern(), budget.rx_full_scale_dbm - 40.0)
        assert 375.0 < gate < 392.0

    def test_noise_power(self):
        assert noise_power_dbm(LinkBudget()) == pytest.approx(-174.0 + 60.79 + 7.0, abs=0.01)


class TestChannelParams:
    """Test cases for ChannelParams validation and level resolution."""

    def test_exactly_one_drive(self):
        with pytest.raises(ValidationError):
            ChannelParams()
        with pytest.raises(ValidationError):
            ChannelParams(snr_db=10.0, distance_m=50.0)

    def test_distance_levels(self):
        budget = LinkBudget()
        levels = resolve_levels(ChannelParams(distance_m=50.0), budget, AntennaPattern())
        rx = rx_power_dbm(budget, AntennaPattern(), 50.0)
        assert levels.signal_dbfs == pytest.approx(rx + 28.0)
        assert levels.snr_db == pytest.approx(rx - noise_power_dbm(budget))

    def test_snr_mode_keeps_input_level(self):
        levels = resolve_levels(ChannelParams(snr_db=12.0), input_dbfs=-3.0)
        assert levels.signal_dbfs == -3.0
        assert levels.noise_dbfs == -15.0
        pinned = resolve_levels(ChannelParams(snr_db=12.0, signal_level_dbfs=-20.0))
        assert pinned.signal_dbfs == -20.0


class TestApplyChannel:
    """Test cases for apply_channel."""

    def test_noiseless_identity(self, gmsk_burst):
        out = apply_channel(gmsk_burst, ChannelParams(snr_db=float("inf")))
        assert np.allclose(out.samples, gmsk_burst.samples, atol=1e-9)

    def test_measured_snr(self):
        n = 200_000
        clean = IqBuffer(np.exp(2j * math.pi * 100e3 * np.arange(n) / FS), FS)
        out = apply_channel(clean, ChannelParams(snr_db=20.0, rng_seed=11))
        noise = out.samples - clean.samples
        inband_noise = np.mean(np.abs(noise) ** 2) * LinkBudget().noise_bandwidth_hz / FS
        measured = 10.0 * math.log10(1.0 / inband_noise)
        assert measured == pytest.approx(20.0, abs=0.3)

    def test_seeded_noise_is_reproducible(self, gmsk_burst):
        params = ChannelParams(snr_db=5.0, rng_seed=3)
        a = apply_channel(gmsk_burst, params)
        b = apply_channel(gmsk_burst, params)
        assert np.array_equal(a.samples, b.samples)

    def test_carrier_offset_shows_as_dc(self):
        dc = IqBuffer(np.ones(4000, dtype=complex), FS)
        out = apply_channel(dc, ChannelParams(snr_db=float("inf"), cfo_hz=30e3))
        assert np.allclose(quadrature_demod(out), 30.0 / 250.0, atol=1e-9)

    def test_distance_mode_level(self, gmsk_burst):
        out = apply_channel(
            gmsk_burst, ChannelParams(distance_m=50.0, rng_seed=1), LinkBudget(), AntennaPattern()
        )
        expected = rx_power_dbm(LinkBudget(), AntennaPattern(), 50.0) + 28.0
        assert out.power_dbfs() == pytest.approx(expected, abs=0.5)

    def test_clock_offset_changes_length(self, gmsk_burst):
        out = apply_channel(
            gmsk_burst, ChannelParams(snr_db=float("inf"), sample_clock_offset=0.003)
        )
        assert len(out) == round(len(gmsk_burst) * 1.003)

    def test_negative_timing_offset_advances_burst(self, gmsk_burst):
        params = ChannelParams(snr_db=float("inf"), timing_offset_samples=-5.0)
        assert params.timing_offset_samples == -5.0
        out = apply_channel(gmsk_burst, params)
        assert len(out) == len(gmsk_burst)
        assert np.allclose(out.samples[:-5], gmsk_burst.samples[5:], atol=1e-9)
        assert np.all(out.samples[-5:] == 0)


class TestFractionalDelay:
    """Test cases for fractional_delay."""

    def test_whole_samples(self):
        x = np.arange(10, dtype=complex)
        out = fractional_delay(x, 3.0)
        assert out.size == 10
        assert np.array_equal(out[3:], x[:7])
        assert np.all(out[:3] == 0)

    def test_half_sample_on_slow_tone(self):
        n = np.arange(400)
        x = np.exp(2j * math.pi * 0.01 * n)
        out = fractional_delay(x, 0.5)
        expected = np.exp(2j * math.pi * 0.01 * (n - 0.5))
        assert np.allclose(out[40:-40], expected[40:-40], atol=5e-3)

    def test_negative_whole_samples_advance(self):
        x = np.arange(10, dtype=complex)
        out = fractional_delay(x, -3.0)
        assert out.size == 10
        assert np.array_equal(out[:7], x[3:])
        assert np.all(out[7:] == 0)

    def test_negative_fraction_on_slow_tone(self):
        n = np.arange(400)
        x = np.exp(2j * math.pi * 0.01 * n)
        out = fractional_delay(x, -2.5)
        expected = np.exp(2j * math.pi * 0.01 * (n + 2.5))
        assert np.allclose(out[40:-40], expected[40:-40], atol=5e-3)

    def test_advance_past_end_is_silence(self):
        out = fractional_delay(np.ones(4, dtype=complex), -9.0)
        assert np.array_equal(out, np.zeros(4))
