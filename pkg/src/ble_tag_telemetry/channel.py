# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""RF link model: free-space link budget, Yagi pattern, and the impairment channel."""

import logging
import math
from typing import NamedTuple, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import signal

from .common import SPEED_OF_LIGHT, InvalidArgumentError, IqBuffer

logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)

THERMAL_NOISE_DBM_HZ = -174.0
DELAY_HALF_TAPS = 16


class LinkBudget(BaseModel):
    """Transmit and receive chain in dB units.

    ``rx_gain_dbi`` applies only when no antenna pattern is given; with a pattern the
    pattern's boresight gain is used instead.
    """

    model_config = ConfigDict(frozen=True)

    tx_power_dbm: float = Field(default=8.0, allow_inf_nan=False)
    tx_gain_dbi: float = Field(default=0.0, allow_inf_nan=False)
    rx_gain_dbi: float = Field(default=16.0, allow_inf_nan=False)
    frequency_hz: float = Field(default=2.480e9, gt=0.0, allow_inf_nan=False)
    noise_figure_db: float = Field(default=7.0, allow_inf_nan=False)
    noise_bandwidth_hz: float = Field(default=1.2e6, gt=0.0, allow_inf_nan=False)
    rx_full_scale_dbm: float = Field(default=-28.0, allow_inf_nan=False)


class AntennaPattern(BaseModel):
    """Parabolic main lobe (in dB) over a flat sidelobe floor."""

    model_config = ConfigDict(frozen=True)

    boresight_gain_dbi: float = Field(default=16.0, allow_inf_nan=False)
    beamwidth_3db_deg: float = Field(default=28.0, gt=0.0, allow_inf_nan=False)
    sidelobe_floor_db: float = Field(default=20.0, ge=0.0, allow_inf_nan=False)


class ChannelParams(BaseModel):
    """Impairments for one pass through the channel.

    Exactly one of ``snr_db`` or ``distance_m`` (levels from the link budget) drives the
    signal and noise levels. In SNR mode the signal keeps its input level unless
    ``signal_level_dbfs`` pins it.
    """

    model_config = ConfigDict(frozen=True)

    snr_db: Optional[float] = None
    distance_m: Optional[float] = Field(default=None, gt=0.0)
    azimuth_deg: float = Field(default=0.0, ge=-180.0, le=180.0)
    cfo_hz: float = Field(default=0.0, allow_inf_nan=False)
    phase_rad: float = Field(default=0.0, allow_inf_nan=False)
    timing_offset_samples: float = Field(default=0.0, allow_inf_nan=False)
    sample_clock_offset: float = Field(default=0.0, gt=-0.01, lt=0.01)
    signal_level_dbfs: Optional[float] = Field(default=None, le=0.0, allow_inf_nan=False)
    rng_seed: int = 0

    @model_validator(mode="after")
    def _one_drive_mode(self) -> "ChannelParams":
        if (self.snr_db is None) == (self.distance_m is None):
            raise ValueError("exactly one of snr_db and distance_m must be set")
        if self.snr_db is not None and math.isnan(self.snr_db):
            raise ValueError("snr_db must not be NaN")
        return self


class ChannelLevels(NamedTuple):
    signal_dbfs: float
    snr_db: float
    noise_dbfs: float


def wrap_degrees(angle: float) -> float:
    """Wrap an angle into [-180, 180)."""
    return (angle + 180.0) % 360.0 - 180.0


def pattern_gain(pattern: AntennaPattern, azimuth_deg: float) -> float:
    if not -180.0 <= azimuth_deg <= 180.0:
        raise InvalidArgumentError(f"azimuth must be in -180..180, got {azimuth_deg}")
    rolloff = 12.0 * (azimuth_deg / pattern.beamwidth_3db_deg) ** 2
    return pattern.boresight_gain_dbi - min(rolloff, pattern.sidelobe_floor_db)


def fspl_db(distance_m: float, frequency_hz: float) -> float:
    """Free-space path loss: 20 log10(4 pi d f / c)."""
    if distance_m <= 0:
        raise InvalidArgumentError(f"distance must be positive, got {distance_m}")
    if frequency_hz <= 0:
        raise InvalidArgumentError(f"frequency must be positive, got {frequency_hz}")
    return (
        20.0 * math.log10(distance_m)
        + 20.0 * math.log10(frequency_hz)
        + 20.0 * math.log10(4.0 * math.pi / SPEED_OF_LIGHT)
    )


def noise_power_dbm(budget: LinkBudget) -> float:
    return (
        THERMAL_NOISE_DBM_HZ + 10.0 * math.log10(budget.noise_bandwidth_hz) + budget.noise_figure_db
    )


def _rx_gain(budget: LinkBudget, pattern: Optional[AntennaPattern], azimuth_deg: float) -> float:
    if pattern is None:
        return budget.rx_gain_dbi
    return pattern_gain(pattern, azimuth_deg)


def rx_power_dbm(
    budget: LinkBudget,
    pattern: Optional[AntennaPattern],
    distance_m: float,
    azimuth_deg: float = 0.0,
) -> float:
    return (
        budget.tx_power_dbm
        + budget.tx_gain_dbi
        + _rx_gain(budget, pattern, azimuth_deg)
        - fspl_db(distance_m, budget.frequency_hz)
    )


def rx_snr_db(
    budget: LinkBudget,
    pattern: Optional[AntennaPattern],
    distance_m: float,
    azimuth_deg: float = 0.0,
) -> float:
    return rx_power_dbm(budget, pattern, distance_m, azimuth_deg) - noise_power_dbm(budget)


def distance_for_rx_power(
    budget: LinkBudget,
    pattern: Optional[AntennaPattern],
    rx_power: float,
    azimuth_deg: float = 0.0,
) -> float:
    """Distance at which the received power falls to ``rx_power`` dBm."""
    at_one_metre = rx_power_dbm(budget, pattern, 1.0, azimuth_deg)
    return 10.0 ** ((at_one_metre - rx_power) / 20.0)


def distance_for_snr(
    budget: LinkBudget,
    pattern: Optional[AntennaPattern],
    snr_db: float,
    azimuth_deg: float = 0.0,
) -> float:
    return distance_for_rx_power(budget, pattern, snr_db + noise_power_dbm(budget), azimuth_deg)


def resolve_levels(
    params: ChannelParams,
    budget: Optional[LinkBudget] = None,
    pattern: Optional[AntennaPattern] = None,
    input_dbfs: float = 0.0,
) -> ChannelLevels:
    """Signal level (dBFS), SNR and in-band noise level the channel will produce."""
    budget = budget or LinkBudget()
    if params.distance_m is not None:
        rx_power = rx_power_dbm(budget, pattern, params.distance_m, params.azimuth_deg)
        noise = noise_power_dbm(budget)
        return ChannelLevels(
            signal_dbfs=rx_power - budget.rx_full_scale_dbm,
            snr_db=rx_power - noise,
            noise_dbfs=noise - budget.rx_full_scale_dbm,
        )
    assert params.snr_db is not None
    level = input_dbfs if params.signal_level_dbfs is None else params.signal_level_dbfs
    return ChannelLevels(signal_dbfs=level, snr_db=params.snr_db, noise_dbfs=level - params.snr_db)


def fractional_delay(samples: np.ndarray, delay: float) -> np.ndarray:
    """Shift by ``delay`` samples, later for positive and earlier for negative.

    The fraction uses a windowed sinc. Length is preserved and vacated samples are zero.
    """
    whole = int(math.floor(delay))
    frac = delay - whole
    out = np.asarray(samples, dtype=np.complex128)
    n = out.size
    if frac > 0:
        k = np.arange(2 * DELAY_HALF_TAPS + 1)
        taps = np.sinc(k - DELAY_HALF_TAPS - frac) * np.hamming(k.size)
        taps /= taps.sum()
        full = np.convolve(out, taps)
        out = full[DELAY_HALF_TAPS : DELAY_HALF_TAPS + n]
    shift = min(abs(whole), n)
    if whole > 0:
        out = np.concatenate((np.zeros(shift, dtype=np.complex128), out[: n - shift]))
    elif whole < 0:
        out = np.concatenate((out[shift:], np.zeros(shift, dtype=np.complex128)))
    return out


def _active_power(samples: np.ndarray) -> float:
    mag2 = np.abs(samples) ** 2
    peak = mag2.max(initial=0.0)
    if peak == 0.0:
        return 0.0
    active = mag2[mag2 > peak * 1e-6]
    return float(active.mean())


def apply_channel(
    iq: IqBuffer,
    params: ChannelParams,
    budget: Optional[LinkBudget] = None,
    pattern: Optional[AntennaPattern] = None,
) -> IqBuffer:
    """Clock offset, fractional delay, carrier offset, level scaling and AWGN, in that order.

    The signal power is measured over the samples where the burst is present, so
    silent padding around a frame does not dilute the SNR.
    """
    budget = budget or LinkBudget()
    fs = iq.sample_rate
    x = iq.samples.astype(np.complex128)

    if params.sample_clock_offset and x.size:
        n_out = int(round(x.size * (1.0 + params.sample_clock_offset)))
        x = signal.resample(x, n_out)
    if params.timing_offset_samples:
        x = fractional_delay(x, params.timing_offset_samples)
    if params.cfo_hz or params.phase_rad:
        t = np.arange(x.size) / fs
        x = x * np.exp(1j * (2.0 * math.pi * params.cfo_hz * t + params.phase_rad))

    power = _active_power(x)
    input_dbfs = 10.0 * math.log10(power) if power > 0.0 else 0.0
    levels = resolve_levels(params, budget, pattern, input_dbfs)
    if power > 0.0 and levels.signal_dbfs != input_dbfs:
        x = x * math.sqrt(10.0 ** (levels.signal_dbfs / 10.0) / power)

    if math.isfinite(levels.snr_db):
        inband = 10.0 ** (levels.noise_dbfs / 10.0)
        variance = inband * fs / budget.noise_bandwidth_hz
        rng = np.random.default_rng(params.rng_seed)
        noise = rng.standard_normal(x.size) + 1j * rng.standard_normal(x.size)
        x = x + noise * math.sqrt(variance / 2.0)

    logger.debug(
        f"channel: signal {levels.signal_dbfs:.1f} dBFS, SNR {levels.snr_db:.1f} dB, "
        f"cfo {params.cfo_hz:g} Hz, delay {params.timing_offset_samples:g} samples"
    )
    return IqBuffer(x, fs)
