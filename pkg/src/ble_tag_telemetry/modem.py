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
"""GMSK modulator and the demodulator chain.

The receive side runs discriminator, DC blocker, one-symbol matched filter and a
Mueller-Muller timing loop, each as a push-style stream processor.
"""

import logging
import math
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import signal

from .common import SYMBOL_RATE_HZ, BitSequence, InvalidArgumentError, IqBuffer

logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)

# 256 symbols at 4 sps: long against any run of equal bits, short against a frame
DEFAULT_DC_WINDOW = 1024


class GmskParams(BaseModel):
    """Gaussian frequency shaping for the BLE 1M PHY."""

    model_config = ConfigDict(frozen=True)

    samples_per_symbol: int = Field(default=4, ge=2)
    bt: float = Field(default=0.5, gt=0.0, le=1.0)
    modulation_index: float = Field(default=0.5, ge=0.25, le=1.0)
    gaussian_span_symbols: int = Field(default=4, ge=1)
    symbol_rate_hz: float = Field(default=SYMBOL_RATE_HZ, gt=0.0)

    @property
    def deviation_hz(self) -> float:
        """Peak frequency deviation: h * Rs / 2 (250 kHz for BLE 1M)."""
        return self.modulation_index * self.symbol_rate_hz / 2.0

    @property
    def sample_rate_hz(self) -> float:
        return self.symbol_rate_hz * self.samples_per_symbol


class TimingRecoveryParams(BaseModel):
    """Mueller-Muller loop settings; gain_omega defaults to gain_mu**2 / 4.

    The timing error is clamped to ``+/-max_error`` before the loop gains apply, so a
    single discriminator click cannot throw the sampling phase by more than
    ``gain_mu * max_error`` samples.
    """

    model_config = ConfigDict(frozen=True)

    gain_mu: float = Field(default=0.175, gt=0.0, lt=1.0)
    omega: float = Field(default=4.0, gt=1.0)
    omega_relative_limit: float = Field(default=0.005, ge=0.0, lt=1.0)
    gain_omega: Optional[float] = Field(default=None, ge=0.0)
    max_error: float = Field(default=1.0, gt=0.0)
    acquisition_symbols: int = Field(default=32, ge=0)

    @property
    def effective_gain_omega(self) -> float:
        if self.gain_omega is not None:
            return self.gain_omega
        return 0.25 * self.gain_mu * self.gain_mu


def gaussian_taps(params: GmskParams) -> np.ndarray:
    """Truncated Gaussian frequency pulse with unit DC gain."""
    sps = params.samples_per_symbol
    half = params.gaussian_span_symbols / 2.0
    t = np.arange(-half * sps, half * sps + 1) / sps
    sigma = math.sqrt(math.log(2.0)) / (2.0 * math.pi * params.bt)
    h = np.exp(-(t * t) / (2.0 * sigma * sigma))
    return h / h.sum()


def gmsk_modulate(
    bits: BitSequence, params: Optional[GmskParams] = None, sample_rate: Optional[float] = None
) -> IqBuffer:
    """Phase-continuous, unit-amplitude GMSK baseband for ``bits``.

    Output length is ``len(bits) * sps`` plus the Gaussian filter tail.
    """
    params = params or GmskParams()
    expected = params.sample_rate_hz
    sample_rate = expected if sample_rate is None else float(sample_rate)
    if abs(sample_rate - expected) > 1e-9 * expected:
        raise InvalidArgumentError(
            f"sample_rate {sample_rate:g} Hz does not equal symbol rate x sps ({expected:g} Hz)"
        )
    if bits.length == 0:
        raise InvalidArgumentError("cannot modulate an empty bit sequence")
    nrz = np.repeat(bits.as_bipolar().astype(np.float64), params.samples_per_symbol)
    freq = np.convolve(nrz, gaussian_taps(params))
    phase = np.cumsum(freq) * (math.pi * params.modulation_index / params.samples_per_symbol)
    return IqBuffer(np.exp(1j * phase), sample_rate)


class QuadratureDemodulator:
    """FM discriminator scaled so the nominal deviation maps to +/-1."""

    def __init__(self, params: GmskParams, sample_rate: float):
        self.gain = sample_rate / (2.0 * math.pi * params.deviation_hz)
        self._last: Optional[complex] = None

    def reset(self) -> None:
        self._last = None

    def process(self, samples: np.ndarray) -> np.ndarray:
        if samples.size == 0:
            return np.zeros(0)
        if self._last is None:
            x = samples
        else:
            x = np.concatenate(([self._last], samples))
        self._last = complex(samples[-1])
        return self.gain * np.angle(x[1:] * np.conj(x[:-1]))


def quadrature_demod(iq: IqBuffer, params: Optional[GmskParams] = None) -> np.ndarray:
    """Instantaneous frequency per sample; output is one shorter than the input."""
    demod = QuadratureDemodulator(params or GmskParams(), iq.sample_rate)
    return demod.process(iq.samples)


class DcBlocker:
    """Subtracts the mean of a trailing window (removes residual CFO).

    The window starts out filled with zeros, so the first samples of a stream pass
    almost unchanged and a constant input settles to zero after one window.
    """

    def __init__(self, window: int = DEFAULT_DC_WINDOW):
        if window < 16:
            raise InvalidArgumentError(f"DC window must be at least 16 samples, got {window}")
        self.window = window
        self.reset()

    def reset(self) -> None:
        self._history = np.zeros(self.window - 1)

    def process(self, soft: np.ndarray) -> np.ndarray:
        soft = np.asarray(soft, dtype=np.float64)
        if soft.size == 0:
            return soft
        ext = np.concatenate((self._history, soft))
        csum = np.concatenate(([0.0], np.cumsum(ext)))
        w = self.window
        mean = (csum[w:] - csum[:-w]) / w
        self._history = ext[-(w - 1) :]
        return soft - mean


def remove_dc(soft: np.ndarray, window: int = DEFAULT_DC_WINDOW) -> np.ndarray:
    return DcBlocker(window).process(np.asarray(soft, dtype=np.float64))


class MatchedFilter:
    """Moving average over one symbol ahead of the timing loop.

    Averaging discriminator output over a symbol sums the phase steps, so the
    output is the symbol's phase change and the f**2-shaped discriminator noise
    is cut before the slicer. Delay is ``(sps - 1) / 2`` samples.
    """

    def __init__(self, samples_per_symbol: int = 4):
        if samples_per_symbol < 1:
            raise InvalidArgumentError(
                f"samples per symbol must be positive, got {samples_per_symbol}"
            )
        self.taps = np.full(samples_per_symbol, 1.0 / samples_per_symbol)
        self.reset()

    @property
    def delay(self) -> float:
        return (self.taps.size - 1) / 2.0

    def reset(self) -> None:
        self._zi = np.zeros(self.taps.size - 1)

    def process(self, soft: np.ndarray) -> np.ndarray:
        soft = np.asarray(soft, dtype=np.float64)
        if soft.size == 0:
            return soft
        out, self._zi = signal.lfilter(self.taps, 1.0, soft, zi=self._zi)
        return out


def matched_filter(soft: np.ndarray, samples_per_symbol: int = 4) -> np.ndarray:
    return MatchedFilter(samples_per_symbol).process(soft)


def _decision(value: float) -> float:
    return 1.0 if value >= 0.0 else -1.0


class MuellerMullerRecovery:
    """Decision-directed symbol timing recovery with linear interpolation.

    After a reset the loop buffers ``2 * acquisition_symbols`` symbols and picks the
    starting sample phase from the second half of them (largest mean of ``|y|``
    clipped at 1). The first half is skipped because it usually holds noise from
    before the burst or the filter start-up. Tracking then uses the Mueller-Muller error
    ``d(y[n-1]) * y[n] - d(y[n]) * y[n-1]``, clamped to ``max_error``.
    """

    def __init__(self, params: Optional[TimingRecoveryParams] = None):
        self.params = params or TimingRecoveryParams()
        self.reset()

    def reset(self) -> None:
        p = self.params
        self._buf = np.zeros(0)
        self._pos = 0
        self._mu = 0.0
        self._omega = p.omega
        self._last: Optional[float] = None
        self._acquired = p.acquisition_symbols == 0

    @property
    def omega(self) -> float:
        return self._omega

    def _acquire(self, force: bool = False) -> bool:
        p = self.params
        nominal = p.omega
        span = p.acquisition_symbols
        needed = int(math.ceil(nominal * (2 * span + 1)))
        if self._buf.size < needed and not force:
            return False
        phases = max(1, int(round(nominal)))
        usable = self._buf.size - phases
        if usable <= 0:
            return False
        total = max(1, int(usable / nominal))
        count = min(span, total)
        first = max(0, min(span, total - span))
        symbols = np.arange(first, first + count)
        clipped = np.minimum(np.abs(self._buf), 1.0)
        energy = np.empty(phases)
        for ph in range(phases):
            picks = np.round(ph + symbols * nominal).astype(int)
            energy[ph] = np.mean(clipped[picks])
        best = int(np.argmax(energy))
        left, mid, right = energy[(best - 1) % phases], energy[best], energy[(best + 1) % phases]
        denom = left - 2.0 * mid + right
        delta = 0.5 * (left - right) / denom if denom < 0 else 0.0
        start = best + float(np.clip(delta, -0.5, 0.5))
        if start < 0:
            start += nominal
        self._pos = int(math.floor(start))
        self._mu = start - self._pos
        self._acquired = True
        logger.debug(f"timing acquired at sample phase {start:.2f}")
        return True

    def _run(self) -> np.ndarray:
        p = self.params
        gain_omega = p.effective_gain_omega
        limit = p.max_error
        lo = p.omega * (1.0 - p.omega_relative_limit)
        hi = p.omega * (1.0 + p.omega_relative_limit)
        buf = self._buf
        pos, mu, omega, last = self._pos, self._mu, self._omega, self._last
        out = []
        while pos + 1 < buf.size:
            y = buf[pos] * (1.0 - mu) + buf[pos + 1] * mu
            out.append(y)
            err = 0.0
            if last is not None:
                err = _decision(last) * y - _decision(y) * last
                err = min(max(err, -limit), limit)
            last = y
            omega = min(max(omega + gain_omega * err, lo), hi)
            mu += omega + p.gain_mu * err
            step = int(math.floor(mu))
            pos += step
            mu -= step
        consumed = min(pos, buf.size)
        self._buf = buf[consumed:]
        self._pos, self._mu, self._omega, self._last = pos - consumed, mu, omega, last
        return np.asarray(out, dtype=np.float64)

    def process(self, soft: np.ndarray) -> np.ndarray:
        soft = np.asarray(soft, dtype=np.float64)
        if soft.size:
            self._buf = np.concatenate((self._buf, soft))
        if not self._acquired and not self._acquire():
            return np.zeros(0)
        return self._run()

    def flush(self) -> np.ndarray:
        """Acquire on whatever is buffered (short bursts) and drain it."""
        if not self._acquired and not self._acquire(force=True):
            return np.zeros(0)
        return self._run()


def mm_timing_recovery(
    soft: np.ndarray, params: Optional[TimingRecoveryParams] = None
) -> np.ndarray:
    """One soft value per symbol from a soft-sample stream."""
    recovery = MuellerMullerRecovery(params)
    head = recovery.process(soft)
    return np.concatenate((head, recovery.flush()))


def slice_bits(soft_symbols: np.ndarray) -> BitSequence:
    """Sign slicer; zero maps to 1."""
    return BitSequence((np.asarray(soft_symbols) >= 0.0).astype(np.uint8))
