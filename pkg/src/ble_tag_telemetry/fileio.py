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
"""Raw IQ files with JSON sidecars, codebook files and atomic writes.

IQ files are headerless interleaved little-endian float32 pairs (I then Q), the raw
complex-float layout SDR tools read and write. The sample rate and centre frequency
live in ``<path>.json`` next to the data.
"""

import logging
import os
import tempfile
from pathlib import Path
from typing import Iterator, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .common import CorruptFileError, InvalidArgumentError, IqBuffer
from .pncode import Codebook

logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)

PathLike = Union[str, Path]

IQ_DTYPE = np.dtype("<f4")
BYTES_PER_SAMPLE = 2 * IQ_DTYPE.itemsize
DEFAULT_BLOCK_SAMPLES = 1 << 18


class SidecarMeta(BaseModel):
    """Out-of-band description of a raw IQ file; unknown keys are kept."""

    model_config = ConfigDict(extra="allow")

    sample_rate_hz: float = Field(gt=0.0, allow_inf_nan=False)
    center_freq_hz: float = 0.0
    description: str = ""
    snr_db: Optional[float] = None


def sidecar_path(path: PathLike) -> Path:
    return Path(f"{path}.json")


def atomic_write_bytes(path: PathLike, data: bytes) -> None:
    """Write through a temporary file in the target directory, then rename over ``path``."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def encode_iq(samples: np.ndarray) -> bytes:
    """Interleave I and Q as little-endian float32."""
    samples = np.asarray(samples)
    out = np.empty(2 * samples.size, dtype=IQ_DTYPE)
    out[0::2] = samples.real
    out[1::2] = samples.imag
    if not np.isfinite(out).all():
        raise InvalidArgumentError("IQ samples must be finite in float32")
    return out.tobytes()


def decode_iq(data: bytes) -> np.ndarray:
    if len(data) % BYTES_PER_SAMPLE:
        raise CorruptFileError(
            f"IQ data is {len(data)} bytes, not a multiple of {BYTES_PER_SAMPLE}"
        )
    pairs = np.frombuffer(data, dtype=IQ_DTYPE).reshape(-1, 2).astype(np.float64)
    return pairs[:, 0] + 1j * pairs[:, 1]


def write_sidecar(path: PathLike, meta: SidecarMeta) -> None:
    atomic_write_text(sidecar_path(path), meta.model_dump_json(indent=2, exclude_none=True) + "\n")


def read_sidecar(path: PathLike) -> SidecarMeta:
    side = sidecar_path(path)
    try:
        return SidecarMeta.model_validate_json(side.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise CorruptFileError(f"invalid sidecar {side}: {e}") from e


def write_iq(
    path: PathLike,
    iq: IqBuffer,
    center_freq_hz: float = 0.0,
    description: str = "",
    snr_db: Optional[float] = None,
) -> None:
    data = encode_iq(iq.samples)
    atomic_write_bytes(path, data)
    write_sidecar(
        path,
        SidecarMeta(
            sample_rate_hz=iq.sample_rate,
            center_freq_hz=center_freq_hz,
            description=description,
            snr_db=snr_db,
        ),
    )
    logger.debug(f"wrote {len(iq)} samples to {path}")


def _resolve_rate(path: PathLike, sample_rate: Optional[float]) -> float:
    if sample_rate is not None:
        return float(sample_rate)
    if not sidecar_path(path).exists():
        raise InvalidArgumentError(f"no sample rate given and no sidecar next to {path}")
    return read_sidecar(path).sample_rate_hz


def read_iq(path: PathLike, sample_rate: Optional[float] = None) -> IqBuffer:
    """Read a whole file; the rate comes from ``sample_rate`` or else the sidecar."""
    rate = _resolve_rate(path, sample_rate)
    data = Path(path).read_bytes()
    return IqBuffer(decode_iq(data), rate)


def iter_iq_blocks(
    path: PathLike,
    sample_rate: Optional[float] = None,
    block_samples: int = DEFAULT_BLOCK_SAMPLES,
) -> Iterator[IqBuffer]:
    """Yield consecutive blocks of at most ``block_samples`` samples."""
    if block_samples < 1:
        raise InvalidArgumentError(f"block size must be positive, got {block_samples}")
    rate = _resolve_rate(path, sample_rate)
    size = Path(path).stat().st_size
    if size % BYTES_PER_SAMPLE:
        raise CorruptFileError(f"{path} is {size} bytes, not a multiple of {BYTES_PER_SAMPLE}")
    with open(path, "rb") as handle:
        while True:
            chunk = handle.read(block_samples * BYTES_PER_SAMPLE)
            if not chunk:
                break
            yield IqBuffer(decode_iq(chunk), rate)


def read_codebook(path: PathLike) -> Codebook:
    try:
        return Codebook.from_json(Path(path).read_text(encoding="utf-8"))
    except ValidationError as e:
        raise InvalidArgumentError(f"invalid codebook {path}: {e}") from e


def write_codebook(path: PathLike, codebook: Codebook) -> None:
    atomic_write_text(path, codebook.to_json())
