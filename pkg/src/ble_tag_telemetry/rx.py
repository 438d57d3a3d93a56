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
"""Receiver flowgraph: power squelch, frequency-translating FIR, GMSK demod, correlator.

Every block is a single-owner stream processor. Callers push buffers of any size and
state carries across calls; :class:`Receiver` chains the blocks and turns correlation
peaks into :class:`DetectionEvent` records.
"""

import bisect
import json
import logging
import math
from typing import Iterable, List, NamedTuple, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy import signal, stats

from .common import (
    CENTER_OFFSET_HZ,
    DEFAULT_THRESHOLD,
    DETECT_BITS,
    FRAME_BITS,
    SAMPLE_RATE_HZ,
    BitSequence,
    InvalidArgumentError,
    IqBuffer,
)
from .modem import (
    DcBlocker,
    GmskParams,
    MatchedFilter,
    MuellerMullerRecovery,
    QuadratureDemodulator,
    TimingRecoveryParams,
)
from .pncode import Codebook

logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)

# Largest block the correlator handles in one pass
CORRELATOR_CHUNK_BITS = 1 << 16


class SquelchParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    threshold_db: float = Field(default=-40.0, allow_inf_nan=False)
    averaging_alpha: float = Field(default=0.01, gt=0.0, le=1.0)
    hang_samples: int = Field(default=4096, ge=0)


class XlatingFirParams(BaseModel):
    """Mixer, Hamming windowed-sinc low-pass and decimator.

    The band edges are checked against the sample rate when the filter is built.
    """

    model_config = ConfigDict(frozen=True)

    center_offset_hz: float = Field(default=CENTER_OFFSET_HZ, allow_inf_nan=False)
    cutoff_hz: float = Field(default=750e3, gt=0.0, allow_inf_nan=False)
    transition_hz: float = Field(default=250e3, gt=0.0, allow_inf_nan=False)
    decimation: int = Field(default=1, ge=1)


class DetectorConfig(BaseModel):
    codebook: Codebook
    threshold: int = Field(default=DEFAULT_THRESHOLD, gt=128, le=DETECT_BITS)
    dedup_window_bits: int = Field(default=FRAME_BITS, ge=1)

    @field_validator("codebook")
    @classmethod
    def _non_empty(cls, codebook: Codebook) -> Codebook:
        if not codebook.entries:
            raise ValueError("codebook must contain at least one tag")
        return codebook


class DetectionEvent(BaseModel):
    """A correlation peak for one tag.

    ``sample_offset`` is the index just past the last bit of the detected sequence in
    the demodulated bit stream; ``input_sample`` is the same point mapped back to the
    receiver's input sample clock (accurate to ``Receiver.latency_samples``).
    """

    model_config = ConfigDict(frozen=True)

    tag_id: str
    score: int = Field(ge=0, le=DETECT_BITS)
    sample_offset: int = Field(ge=0)
    rssi_db_est: Optional[float] = None
    timestamp: float
    input_sample: Optional[int] = None

    def to_json_line(self) -> str:
        return json.dumps(
            {
                "tag_id": self.tag_id,
                "score": self.score,
                "sample_offset": self.sample_offset,
                "rssi_db": None if self.rssi_db_est is None else round(self.rssi_db_est, 3),
                "t_sec": self.timestamp,
            }
        )

    @classmethod
    def from_json_line(cls, line: str) -> "DetectionEvent":
        doc = json.loads(line)
        return cls(
            tag_id=doc["tag_id"],
            score=doc["score"],
            sample_offset=doc["sample_offset"],
            rssi_db_est=doc.get("rssi_db"),
            timestamp=doc["t_sec"],
        )


def events_to_jsonl(events: Iterable[DetectionEvent]) -> str:
    return "".join(event.to_json_line() + "\n" for event in events)


def events_from_jsonl(text: str) -> List[DetectionEvent]:
    return [DetectionEvent.from_json_line(line) for line in text.splitlines() if line.strip()]


def false_alarm_bound(threshold: int, length: int = DETECT_BITS) -> float:
    """P(score >= threshold) for one tag at one position when the bits are fair coin flips."""
    if not 0 <= threshold <= length:
        raise InvalidArgumentError(f"threshold must be in 0..{length}, got {threshold}")
    return float(stats.binom.sf(threshold - 1, length, 0.5))


class SquelchRun(NamedTuple):
    start: int
    samples: np.ndarray
    opens_segment: bool


class GatedIq(NamedTuple):
    """Compacted squelch output plus the (input start, length) of every passed run."""

    iq: IqBuffer
    segments: List[Tuple[int, int]]


class PowerSquelch:
    """Gates samples on an exponentially smoothed power estimate.

    Passed samples are never modified; a run that does not continue the previous one
    is flagged so downstream blocks can restart.
    """

    def __init__(self, params: Optional[SquelchParams] = None):
        self.params = params or SquelchParams()
        self._threshold = 10.0 ** (self.params.threshold_db / 10.0)
        self.reset()

    def reset(self) -> None:
        self._power = 0.0
        self._last_above: Optional[int] = None
        self._open = False
        self._position = 0

    @property
    def power_dbfs(self) -> float:
        return 10.0 * math.log10(self._power) if self._power > 0 else float("-inf")

    def process(self, samples: np.ndarray) -> List[SquelchRun]:
        samples = np.asarray(samples, dtype=np.complex128)
        n = samples.size
        if n == 0:
            return []
        alpha = self.params.averaging_alpha
        start = self._position
        power, _ = signal.lfilter(
            [alpha], [1.0, -(1.0 - alpha)], np.abs(samples) ** 2, zi=[(1.0 - alpha) * self._power]
        )
        self._power = float(power[-1])

        index = np.arange(start, start + n)
        seeded = np.where(power >= self._threshold, index, -1)
        if self._last_above is not None:
            seeded[0] = max(seeded[0], self._last_above)
        last_above = np.maximum.accumulate(seeded)
        passed = (last_above >= 0) & (index - last_above <= self.params.hang_samples)
        if last_above[-1] >= 0:
            self._last_above = int(last_above[-1])

        runs: List[SquelchRun] = []
        edges = np.flatnonzero(np.diff(passed.astype(np.int8))) + 1
        bounds = np.concatenate(([0], edges, [n]))
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            if not passed[lo]:
                continue
            opens = not (lo == 0 and self._open)
            if opens:
                logger.debug(f"squelch opened at sample {start + lo}")
            runs.append(SquelchRun(int(start + lo), samples[lo:hi], opens))
        self._open = bool(passed[-1])
        self._position += n
        return runs


def power_squelch(iq: IqBuffer, params: Optional[SquelchParams] = None) -> GatedIq:
    runs = PowerSquelch(params).process(iq.samples)
    segments: List[Tuple[int, int]] = []
    for run in runs:
        if run.opens_segment or not segments:
            segments.append((run.start, run.samples.size))
        else:
            first, length = segments[-1]
            segments[-1] = (first, length + run.samples.size)
    if runs:
        kept = np.concatenate([run.samples for run in runs])
    else:
        kept = np.zeros(0, dtype=np.complex128)
    return GatedIq(IqBuffer(kept, iq.sample_rate), segments)


class XlatingFir:
    """Shifts ``center_offset_hz`` to DC, low-pass filters and decimates.

    The mixer phase follows the absolute input sample index, so gaps in the input
    (squelched stretches) do not disturb it.
    """

    def __init__(
        self, params: Optional[XlatingFirParams] = None, sample_rate: float = SAMPLE_RATE_HZ
    ):
        self.params = params or XlatingFirParams()
        p = self.params
        nyquist = sample_rate / 2.0
        if p.cutoff_hz + p.transition_hz >= nyquist:
            raise InvalidArgumentError(
                f"cutoff {p.cutoff_hz:g} Hz + transition {p.transition_hz:g} Hz must stay below "
                f"Nyquist ({nyquist:g} Hz)"
            )
        if abs(p.center_offset_hz) >= nyquist:
            raise InvalidArgumentError(
                f"center offset {p.center_offset_hz:g} Hz is outside +/-{nyquist:g} Hz"
            )
        self.sample_rate = float(sample_rate)
        # Hamming main-lobe width is about 3.3 / N of the sample rate
        numtaps = int(math.ceil(3.3 * sample_rate / p.transition_hz)) | 1
        self.taps = signal.firwin(numtaps, p.cutoff_hz, window="hamming", fs=sample_rate)
        self.reset()

    @property
    def group_delay(self) -> int:
        """Filter delay in input samples."""
        return (self.taps.size - 1) // 2

    @property
    def output_rate(self) -> float:
        return self.sample_rate / self.params.decimation

    def reset(self) -> None:
        self._zi = np.zeros(self.taps.size - 1, dtype=np.complex128)
        self._skip = 0

    def process(self, samples: np.ndarray, start_index: int = 0) -> np.ndarray:
        samples = np.asarray(samples, dtype=np.complex128)
        if samples.size == 0:
            return samples
        t = (start_index + np.arange(samples.size)) / self.sample_rate
        mixed = samples * np.exp(-2j * math.pi * self.params.center_offset_hz * t)
        filtered, self._zi = signal.lfilter(self.taps, 1.0, mixed, zi=self._zi)
        d = self.params.decimation
        out = filtered[self._skip :: d]
        self._skip = (self._skip - samples.size) % d
        return out


def xlating_fir(iq: IqBuffer, params: Optional[XlatingFirParams] = None) -> IqBuffer:
    fir = XlatingFir(params, iq.sample_rate)
    return IqBuffer(fir.process(iq.samples), fir.output_rate)


class SlidingCorrelator:
    """Scores the trailing 256 bits against every codebook entry and picks peaks.

    Scores are computed a block at a time against the 255 bits carried over from the
    previous block. After :meth:`restart` (a new squelch segment) windows that reach
    back before the restart count only the bits that exist.
    """

    def __init__(self, config: DetectorConfig, bit_rate: float = 1.0e6):
        self.config = config
        self.bit_rate = bit_rate
        self.tag_ids = config.codebook.tag_ids
        self._codes = np.stack(
            [entry.code.as_bipolar().astype(np.float64) for entry in config.codebook.entries]
        )
        for tag_id, code in zip(self.tag_ids, self._codes):
            if code.size != DETECT_BITS:
                raise InvalidArgumentError(f"{tag_id}: code must be {DETECT_BITS} bits")
        self.reset()

    def reset(self) -> None:
        self._position = 0
        self._pending: List[Optional[Tuple[int, int]]] = [None] * len(self.tag_ids)
        self.restart()

    def restart(self) -> None:
        self._history = np.zeros(0)

    @property
    def position(self) -> int:
        """Number of bits consumed so far."""
        return self._position

    def scores(self, bits: Union[BitSequence, np.ndarray]) -> np.ndarray:
        """Consume ``bits`` and return the (n_bits, n_tags) agreement counts."""
        raw = bits.bits if isinstance(bits, BitSequence) else np.asarray(bits)
        new = raw.astype(np.float64) * 2.0 - 1.0
        out = np.zeros((new.size, len(self.tag_ids)), dtype=np.int64)
        for lo in range(0, new.size, CORRELATOR_CHUNK_BITS):
            chunk = new[lo : lo + CORRELATOR_CHUNK_BITS]
            out[lo : lo + chunk.size] = self._score_chunk(chunk)
        return out

    def _score_chunk(self, chunk: np.ndarray) -> np.ndarray:
        held = self._history.size
        pad = np.zeros(DETECT_BITS - 1 - held)
        ext = np.concatenate((pad, self._history, chunk))
        available = np.minimum(held + 1 + np.arange(chunk.size), DETECT_BITS)
        result = np.empty((chunk.size, len(self.tag_ids)), dtype=np.int64)
        for k, code in enumerate(self._codes):
            corr = np.rint(signal.correlate(ext, code, mode="valid")).astype(np.int64)
            result[:, k] = (available + corr) // 2
        self._history = ext[-(DETECT_BITS - 1) :][-(held + chunk.size) :]
        self._position += chunk.size
        return result

    def _event(self, k: int, end: int, score: int) -> DetectionEvent:
        return DetectionEvent(
            tag_id=self.tag_ids[k],
            score=score,
            sample_offset=end,
            timestamp=end / self.bit_rate,
        )

    def process(self, bits: Union[BitSequence, np.ndarray]) -> List[DetectionEvent]:
        first = self._position
        scores = self.scores(bits)
        threshold = self.config.threshold
        window = self.config.dedup_window_bits
        events: List[DetectionEvent] = []
        rows, cols = np.nonzero(scores >= threshold)
        for row, k in sorted(zip(rows.tolist(), cols.tolist())):
            end = first + row + 1
            score = int(scores[row, k])
            pending = self._pending[k]
            if pending is not None and end - pending[0] < window:
                if score > pending[1]:
                    self._pending[k] = (end, score)
                continue
            if pending is not None:
                events.append(self._event(k, *pending))
            self._pending[k] = (end, score)
        for k, pending in enumerate(self._pending):
            if pending is not None and self._position - pending[0] >= window:
                events.append(self._event(k, *pending))
                self._pending[k] = None
        events.sort(key=lambda e: (e.sample_offset, e.tag_id))
        return events

    def flush(self) -> List[DetectionEvent]:
        events = [self._event(k, *p) for k, p in enumerate(self._pending) if p is not None]
        self._pending = [None] * len(self.tag_ids)
        events.sort(key=lambda e: (e.sample_offset, e.tag_id))
        return events


def sliding_correlate(
    bits: Union[BitSequence, np.ndarray], config: DetectorConfig
) -> List[DetectionEvent]:
    correlator = SlidingCorrelator(config)
    return correlator.process(bits) + correlator.flush()


class _Segment(NamedTuple):
    bit_start: int
    input_start: int
    compact_start: int


class Receiver:
    """The complete receive chain as a push/flush stream processor.

    Each time the squelch re-opens, every block from the channel filter to the
    correlator history restarts, while bit offsets keep counting so events from
    one run stay strictly ordered.
    """

    def __init__(
        self,
        detector: DetectorConfig,
        squelch: Optional[SquelchParams] = None,
        fir: Optional[XlatingFirParams] = None,
        gmsk: Optional[GmskParams] = None,
        timing: Optional[TimingRecoveryParams] = None,
        sample_rate: float = SAMPLE_RATE_HZ,
    ):
        self.gmsk = gmsk or GmskParams()
        self.sample_rate = float(sample_rate)
        self.squelch = PowerSquelch(squelch)
        self.fir = XlatingFir(fir, self.sample_rate)
        expected = self.gmsk.sample_rate_hz
        if abs(self.fir.output_rate - expected) > 1e-9 * expected:
            raise InvalidArgumentError(
                f"input rate {self.sample_rate:g} Hz / decimation {self.fir.params.decimation} "
                f"does not give {self.gmsk.samples_per_symbol} samples per symbol"
            )
        self.timing = timing or TimingRecoveryParams(omega=float(self.gmsk.samples_per_symbol))
        self.demod = QuadratureDemodulator(self.gmsk, self.fir.output_rate)
        self.dc = DcBlocker()
        self.matched = MatchedFilter(self.gmsk.samples_per_symbol)
        self.clock = MuellerMullerRecovery(self.timing)
        self.correlator = SlidingCorrelator(detector, self.gmsk.symbol_rate_hz)
        self._input_per_bit = self.sample_rate / self.gmsk.symbol_rate_hz
        self._power_keep = int(
            (DETECT_BITS + detector.dedup_window_bits + 64) * self._input_per_bit
        )
        self.reset()

    def reset(self) -> None:
        self.squelch.reset()
        self.correlator.reset()
        self._restart_blocks()
        self._segments: List[_Segment] = []
        self._power = np.zeros(0)
        self._compact_end = 0
        self._consumed = 0

    def _restart_blocks(self) -> None:
        self.fir.reset()
        self.demod.reset()
        self.dc.reset()
        self.matched.reset()
        self.clock.reset()
        self.correlator.restart()

    @property
    def latency_samples(self) -> int:
        """Tolerance of ``DetectionEvent.input_sample`` in input samples."""
        return self.fir.group_delay + int(math.ceil(2 * self._input_per_bit + self.matched.delay))

    @property
    def consumed_samples(self) -> int:
        return self._consumed

    def push(self, iq: Union[IqBuffer, np.ndarray]) -> List[DetectionEvent]:
        if isinstance(iq, IqBuffer):
            if abs(iq.sample_rate - self.sample_rate) > 1e-9 * self.sample_rate:
                raise InvalidArgumentError(
                    f"buffer rate {iq.sample_rate:g} Hz does not match receiver rate "
                    f"{self.sample_rate:g} Hz"
                )
            samples = iq.samples
        else:
            samples = np.asarray(iq, dtype=np.complex128)
        self._consumed += samples.size
        events: List[DetectionEvent] = []
        for run in self.squelch.process(samples):
            if run.opens_segment:
                events.extend(self._close_segment())
                self._restart_blocks()
                self._segments.append(
                    _Segment(self.correlator.position, run.start, self._compact_end)
                )
            self._keep_power(run.samples)
            filtered = self.fir.process(run.samples, run.start)
            soft = self.matched.process(self.dc.process(self.demod.process(filtered)))
            events.extend(self._correlate(self.clock.process(soft)))
        return events

    def flush(self) -> List[DetectionEvent]:
        events = self._close_segment()
        events.extend(self._decorate(e) for e in self.correlator.flush())
        return events

    def _close_segment(self) -> List[DetectionEvent]:
        if not self._segments:
            return []
        return self._correlate(self.clock.flush())

    def _correlate(self, symbols: np.ndarray) -> List[DetectionEvent]:
        if symbols.size == 0:
            return []
        bits = (symbols >= 0.0).astype(np.uint8)
        return [self._decorate(e) for e in self.correlator.process(bits)]

    def _keep_power(self, samples: np.ndarray) -> None:
        self._power = np.concatenate((self._power, np.abs(samples) ** 2))[-self._power_keep :]
        self._compact_end += samples.size

    def _decorate(self, event: DetectionEvent) -> DetectionEvent:
        starts = [seg.bit_start for seg in self._segments]
        seg = self._segments[max(0, bisect.bisect_right(starts, event.sample_offset - 1) - 1)]
        into = int(round((event.sample_offset - seg.bit_start) * self._input_per_bit))
        into = max(0, into - self.fir.group_delay)
        rssi = self._rssi(seg.compact_start + into)
        logger.debug(
            f"Detected {event.tag_id} score {event.score} at bit {event.sample_offset} "
            f"(input sample {seg.input_start + into})"
        )
        update = {"input_sample": seg.input_start + into, "rssi_db_est": rssi}
        return event.model_copy(update=update)

    def _rssi(self, compact_end: int) -> Optional[float]:
        span = int(DETECT_BITS * self._input_per_bit)
        held_from = self._compact_end - self._power.size
        lo = max(compact_end - span, held_from) - held_from
        hi = min(compact_end, self._compact_end) - held_from
        if hi <= lo:
            return None
        power = float(np.mean(self._power[lo:hi]))
        return 10.0 * math.log10(power) if power > 0 else None


def run_receiver(
    iq: IqBuffer,
    squelch: Optional[SquelchParams] = None,
    fir: Optional[XlatingFirParams] = None,
    gmsk: Optional[GmskParams] = None,
    timing: Optional[TimingRecoveryParams] = None,
    detector: Optional[DetectorConfig] = None,
) -> List[DetectionEvent]:
    """Run the whole chain over one buffer and return every detection."""
    if detector is None:
        raise InvalidArgumentError("a detector configuration with a codebook is required")
    receiver = Receiver(detector, squelch, fir, gmsk, timing, iq.sample_rate)
    events = receiver.push(iq)
    events.extend(receiver.flush())
    return events
