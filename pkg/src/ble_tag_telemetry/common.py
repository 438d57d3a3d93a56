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
"""Common types, constants and exceptions shared by the telemetry modules."""

import logging
import os
from typing import Iterable, Union

import numpy as np

# Constants
SYMBOL_RATE_HZ = 1.0e6
SAMPLE_RATE_HZ = 4.0e6
CENTER_OFFSET_HZ = 1.0e6
PREAMBLE_BITS = 8
ACCESS_ADDRESS_BITS = 32
PDU_BYTES = 27
CODE_BITS = 248
DETECT_BITS = 256
CRC_BITS = 24
FRAME_BITS = DETECT_BITS + CRC_BITS
DEFAULT_THRESHOLD = 192
SPEED_OF_LIGHT = 299_792_458.0

LOG_LEVEL_ENV = "BLE_TAG_TELEMETRY_LOG_LEVEL"

# Configure logger
logger = logging.getLogger(__name__)
logger.setLevel(os.environ.get(LOG_LEVEL_ENV, "INFO").upper())


class TelemetryError(Exception):
    """Base class for all telemetry link failures."""


class InvalidArgumentError(TelemetryError, ValueError):
    """An argument violates an operation's precondition."""


class UnsupportedError(TelemetryError):
    """The request is valid but outside what this implementation supports."""


class CapacityExceededError(TelemetryError):
    """The codebook search ran out of candidates before reaching the requested size."""

    def __init__(self, requested: int, achieved: int, max_cross: int):
        self.requested = requested
        self.achieved = achieved
        self.max_cross = max_cross
        super().__init__(
            f"codebook search exhausted after {achieved} of {requested} tags "
            f"at max cross-correlation {max_cross}"
        )


class CorruptFileError(TelemetryError):
    """A file does not have the expected layout."""


class NoBearingError(TelemetryError):
    """No angle of a sweep produced a detection."""


BitsLike = Union["BitSequence", str, Iterable[int], np.ndarray]


class BitSequence:
    """Ordered binary sequence in transmission order.

    The bits live in a read-only ``uint8`` array so instances can be shared between
    threads and used as dictionary keys.
    """

    __slots__ = ("_bits",)

    def __init__(self, bits: BitsLike):
        if isinstance(bits, BitSequence):
            arr = bits._bits
        elif isinstance(bits, str):
            if any(ch not in "01" for ch in bits):
                raise InvalidArgumentError("bit strings may only contain '0' and '1'")
            arr = np.frombuffer(bits.encode("ascii"), dtype=np.uint8) - ord("0")
        else:
            arr = np.asarray(list(bits) if not isinstance(bits, np.ndarray) else bits)
            if arr.size and not np.isin(arr, (0, 1)).all():
                raise InvalidArgumentError("bit sequences may only contain 0 and 1")
            arr = arr.astype(np.uint8)
        arr = np.array(arr, dtype=np.uint8).reshape(-1)
        arr.setflags(write=False)
        self._bits = arr

    @classmethod
    def from_string(cls, text: str) -> "BitSequence":
        return cls(text)

    @classmethod
    def from_int_lsb_first(cls, value: int, width: int) -> "BitSequence":
        """Expand ``value`` into ``width`` bits, least significant bit first."""
        return cls(np.array([(value >> i) & 1 for i in range(width)], dtype=np.uint8))

    @classmethod
    def concat(cls, *parts: "BitSequence") -> "BitSequence":
        if not parts:
            return cls(np.zeros(0, dtype=np.uint8))
        return cls(np.concatenate([p.bits for p in parts]))

    @property
    def bits(self) -> np.ndarray:
        return self._bits

    @property
    def length(self) -> int:
        return int(self._bits.size)

    def __len__(self) -> int:
        return self.length

    def __iter__(self):
        return iter(int(b) for b in self._bits)

    def __getitem__(self, item):
        if isinstance(item, slice):
            return BitSequence(self._bits[item])
        return int(self._bits[item])

    def prefix(self, n: int) -> "BitSequence":
        return BitSequence(self._bits[:n])

    def complement(self) -> "BitSequence":
        return BitSequence(1 - self._bits)

    def as_bipolar(self) -> np.ndarray:
        """Map 0 to -1 and 1 to +1."""
        return self._bits.astype(np.int64) * 2 - 1

    def to_string(self) -> str:
        return (self._bits + ord("0")).tobytes().decode("ascii")

    def to_int_lsb_first(self) -> int:
        return sum(int(b) << i for i, b in enumerate(self._bits))

    def ones(self) -> int:
        return int(self._bits.sum())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BitSequence):
            return NotImplemented
        return np.array_equal(self._bits, other._bits)

    def __hash__(self) -> int:
        return hash(self._bits.tobytes())

    def __repr__(self) -> str:
        text = self.to_string()
        if len(text) > 40:
            text = text[:37] + "..."
        return f"BitSequence({self.length}: {text})"


class IqBuffer:
    """Complex baseband samples (unit full scale) with their sample rate."""

    __slots__ = ("_samples", "_sample_rate")

    def __init__(self, samples: Union[np.ndarray, Iterable[complex]], sample_rate: float):
        if not np.isfinite(sample_rate) or sample_rate <= 0:
            raise InvalidArgumentError(f"sample_rate must be positive, got {sample_rate}")
        arr = np.array(samples, dtype=np.complex128).reshape(-1)
        if not np.isfinite(arr).all():
            raise InvalidArgumentError("IQ samples must be finite (NaN/Inf rejected)")
        arr.setflags(write=False)
        self._samples = arr
        self._sample_rate = float(sample_rate)

    @property
    def samples(self) -> np.ndarray:
        return self._samples

    @property
    def sample_rate(self) -> float:
        return self._sample_rate

    def __len__(self) -> int:
        return int(self._samples.size)

    @property
    def duration(self) -> float:
        return len(self) / self._sample_rate

    def power_dbfs(self) -> float:
        """Mean power in dB relative to unit full scale; -inf for silent buffers."""
        if len(self) == 0:
            return float("-inf")
        power = float(np.mean(np.abs(self._samples) ** 2))
        return 10.0 * np.log10(power) if power > 0 else float("-inf")

    def with_samples(self, samples: np.ndarray) -> "IqBuffer":
        return IqBuffer(samples, self._sample_rate)

    @classmethod
    def concat(cls, *buffers: "IqBuffer") -> "IqBuffer":
        if not buffers:
            raise InvalidArgumentError("nothing to concatenate")
        rates = {b.sample_rate for b in buffers}
        if len(rates) != 1:
            raise InvalidArgumentError(f"cannot concatenate buffers with rates {sorted(rates)}")
        return cls(np.concatenate([b.samples for b in buffers]), buffers[0].sample_rate)

    def __repr__(self) -> str:
        return f"IqBuffer({len(self)} samples @ {self._sample_rate:g} Hz)"
