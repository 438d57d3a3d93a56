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
"""Pseudo-noise sequences and per-tag codebooks.

Tap masks use one bit per polynomial term: bit ``k - 1`` is set for ``x^k``; the
``x^0`` term is implied. ``x^8 + x^6 + x^5 + x^4 + 1`` is therefore ``0xB8``.
"""

import logging
from functools import lru_cache
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator
from scipy import signal

from .common import (
    CODE_BITS,
    DETECT_BITS,
    BitSequence,
    CapacityExceededError,
    InvalidArgumentError,
    UnsupportedError,
)

logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)

MAX_DEGREE = 32
MAX_WALK_DEGREE = 20
CODEBOOK_DEGREE = 8
DEFAULT_MAX_CROSS = 192
CODEBOOK_VERSION = 1


def _check_degree(degree: int) -> None:
    if not 2 <= degree <= MAX_DEGREE:
        raise InvalidArgumentError(f"degree must be in 2..{MAX_DEGREE}, got {degree}")


def _feedback_mask(degree: int, taps: int) -> int:
    """Translate a polynomial tap mask into the state bits that feed back."""
    mask = 0
    for k in range(1, degree + 1):
        if (taps >> (k - 1)) & 1:
            mask |= 1 << (degree - k)
    return mask


class Lfsr:
    """Fibonacci LFSR emitting stage 0 and shifting feedback into stage ``degree - 1``."""

    def __init__(self, degree: int, taps: int, seed: int):
        _check_degree(degree)
        full = (1 << degree) - 1
        if seed & full == 0:
            raise InvalidArgumentError("LFSR seed must be non-zero (all-zero state is absorbing)")
        self.degree = degree
        self.taps = taps
        self.state = seed & full
        self._mask = _feedback_mask(degree, taps)

    def step(self) -> int:
        out = self.state & 1
        fb = (self.state & self._mask).bit_count() & 1
        self.state = (self.state >> 1) | (fb << (self.degree - 1))
        return out

    def __iter__(self):
        return self

    def __next__(self) -> int:
        return self.step()

    @property
    def period(self) -> int:
        return (1 << self.degree) - 1


def lfsr_msequence(degree: int, taps: int, seed: int) -> BitSequence:
    """Return the first ``2**degree - 1`` output bits of the LFSR."""
    _check_degree(degree)
    if seed == 0:
        raise InvalidArgumentError("LFSR seed must be non-zero")
    reg = Lfsr(degree, taps, seed)
    out = np.fromiter((reg.step() for _ in range(reg.period)), dtype=np.uint8, count=reg.period)
    return BitSequence(out)


def is_maximal(degree: int, taps: int) -> bool:
    """True when the LFSR visits every non-zero state before returning to its seed."""
    _check_degree(degree)
    if degree > MAX_WALK_DEGREE:
        raise UnsupportedError(
            f"maximality check walks the full cycle and is limited to degree {MAX_WALK_DEGREE}"
        )
    if not (taps >> (degree - 1)) & 1:
        return False
    reg = Lfsr(degree, taps, 1)
    period = reg.period
    for steps in range(1, period + 1):
        reg.step()
        if reg.state == 1:
            return steps == period
    return False


@lru_cache(maxsize=None)
def primitive_taps(degree: int) -> Tuple[int, ...]:
    """All tap masks of the given degree that produce an m-sequence."""
    if degree > 12:
        raise UnsupportedError("primitive tap enumeration is limited to degree 12")
    top = 1 << (degree - 1)
    return tuple(top | low for low in range(top) if is_maximal(degree, top | low))


def _require_nonempty_pair(a: BitSequence, b: BitSequence) -> None:
    if a.length == 0 or b.length == 0:
        raise InvalidArgumentError("correlation of empty sequences is undefined")
    if a.length != b.length:
        raise InvalidArgumentError(f"length mismatch: {a.length} vs {b.length}")


def correlate_aligned(a: BitSequence, b: BitSequence) -> int:
    """Number of positions where ``a`` and ``b`` agree."""
    _require_nonempty_pair(a, b)
    return int(np.count_nonzero(a.bits == b.bits))


def periodic_autocorrelation(code: BitSequence, shift: int) -> int:
    """Bipolar periodic autocorrelation at a cyclic shift."""
    if code.length == 0:
        raise InvalidArgumentError("autocorrelation of an empty sequence is undefined")
    if not 0 <= shift < code.length:
        raise InvalidArgumentError(f"shift must be in 0..{code.length - 1}, got {shift}")
    s = code.as_bipolar()
    return int(np.dot(s, np.roll(s, -shift)))


def _overlap_matches(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Agreement counts over the overlap for every relative offset (full correlation)."""
    n = a.size
    corr = np.rint(signal.correlate(a, b, mode="full")).astype(np.int64)
    overlap = n - np.abs(np.arange(-(n - 1), n))
    return (overlap + corr) // 2


def sliding_peak(a: BitSequence, b: BitSequence) -> int:
    """Peak overlap agreement of two sequences over all non-zero relative offsets."""
    _require_nonempty_pair(a, b)
    matches = _overlap_matches(a.as_bipolar(), b.as_bipolar())
    matches[a.length - 1] = -1
    return int(matches.max()) if a.length > 1 else 0


class CodebookEntry(BaseModel):
    """One tag and its 256-bit detection sequence."""

    tag_id: str
    bits: str = Field(min_length=DETECT_BITS, max_length=DETECT_BITS)

    @field_validator("bits")
    @classmethod
    def _only_binary(cls, value: str) -> str:
        if any(ch not in "01" for ch in value):
            raise ValueError("bits may only contain '0' and '1'")
        return value

    @property
    def code(self) -> BitSequence:
        return BitSequence.from_string(self.bits)


class Codebook(BaseModel):
    """Per-tag detection sequences with their achieved cross-correlation bound."""

    version: int = CODEBOOK_VERSION
    max_cross_correlation: int
    entries: List[CodebookEntry]

    @field_validator("entries")
    @classmethod
    def _unique(cls, entries: List[CodebookEntry]) -> List[CodebookEntry]:
        ids = [e.tag_id for e in entries]
        if len(set(ids)) != len(ids):
            raise ValueError("tag ids must be unique")
        codes = [e.bits for e in entries]
        if len(set(codes)) != len(codes):
            raise ValueError("codes must be pairwise distinct")
        return entries

    @property
    def tag_ids(self) -> List[str]:
        return [e.tag_id for e in self.entries]

    def lookup(self, tag_id: str) -> CodebookEntry:
        for entry in self.entries:
            if entry.tag_id == tag_id:
                return entry
        raise KeyError(f"tag {tag_id} not in codebook")

    def resolve_tag(self, tag_id: Optional[str] = None) -> str:
        """``tag_id`` if the codebook has it; the first tag when ``None``."""
        if tag_id is None:
            if not self.entries:
                raise InvalidArgumentError("codebook is empty")
            return self.entries[0].tag_id
        if tag_id not in self.tag_ids:
            raise InvalidArgumentError(f"tag {tag_id} is not in the codebook")
        return tag_id

    def codes(self) -> Dict[str, BitSequence]:
        return {e.tag_id: e.code for e in self.entries}

    def to_json(self) -> str:
        return self.model_dump_json(indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Codebook":
        book = cls.model_validate_json(text)
        if book.version != CODEBOOK_VERSION:
            raise InvalidArgumentError(f"unsupported codebook version {book.version}")
        return book


def _candidate_code(sequence: np.ndarray, shift: int) -> np.ndarray:
    return np.roll(sequence, -shift)[:CODE_BITS]


def build_codebook(n_tags: int, seed: int, max_cross: int = DEFAULT_MAX_CROSS) -> Codebook:
    """Screened search over degree-8 m-sequences and their cyclic shifts.

    Candidates are visited in a seeded random order and accepted greedily when their
    aligned and sliding scores against every accepted code stay within ``max_cross``.
    """
    from .frame import build_detect_sequence

    if n_tags < 1:
        raise InvalidArgumentError(f"n_tags must be at least 1, got {n_tags}")
    if not 128 <= max_cross < DETECT_BITS:
        raise InvalidArgumentError(f"max_cross must be in 128..255, got {max_cross}")

    sequences = {
        taps: lfsr_msequence(CODEBOOK_DEGREE, taps, 1).bits
        for taps in primitive_taps(CODEBOOK_DEGREE)
    }
    candidates = [(taps, shift) for taps in sequences for shift in range(len(sequences[taps]))]
    order = np.random.default_rng(seed).permutation(len(candidates))

    accepted: List[np.ndarray] = []
    achieved = 0
    for idx in order:
        taps, shift = candidates[int(idx)]
        detect = build_detect_sequence(BitSequence(_candidate_code(sequences[taps], shift)))
        cand = detect.as_bipolar()
        worst = _worst_score(cand, accepted)
        if worst is None or worst <= max_cross:
            accepted.append(cand)
            achieved = max(achieved, worst or 0)
            logger.debug(f"accepted taps=0x{taps:02X} shift={shift} (worst {worst})")
            if len(accepted) == n_tags:
                break

    if len(accepted) < n_tags:
        logger.warning(
            f"Codebook search exhausted: {len(accepted)} of {n_tags} tags at max_cross {max_cross}"
        )
        raise CapacityExceededError(n_tags, len(accepted), max_cross)

    entries = [
        CodebookEntry(tag_id=f"tag-{i:04d}", bits=BitSequence((c + 1) // 2).to_string())
        for i, c in enumerate(accepted)
    ]
    logger.info(f"Built codebook with {n_tags} tags, worst pairwise score {achieved}")
    return Codebook(max_cross_correlation=achieved, entries=entries)


def _worst_score(candidate: np.ndarray, accepted: List[np.ndarray]) -> Optional[int]:
    worst: Optional[int] = None
    for other in accepted:
        matches = _overlap_matches(candidate, other)
        score = int(matches.max())
        if worst is None or score > worst:
            worst = score
    return worst


def verify_codebook(codebook: Codebook) -> List[str]:
    """Recompute every pairwise check; an empty list means the codebook is sound."""
    violations: List[str] = []
    codes = [(e.tag_id, e.code) for e in codebook.entries]
    bound = codebook.max_cross_correlation
    for tag_id, code in codes:
        if code.length != DETECT_BITS:
            violations.append(f"{tag_id}: length {code.length} != {DETECT_BITS}")
    for i in range(len(codes)):
        for j in range(i + 1, len(codes)):
            (ti, ci), (tj, cj) = codes[i], codes[j]
            aligned = correlate_aligned(ci, cj)
            sliding = sliding_peak(ci, cj)
            if aligned > bound:
                violations.append(f"{ti}/{tj}: aligned score {aligned} > {bound}")
            if sliding > bound:
                violations.append(f"{ti}/{tj}: sliding score {sliding} > {bound}")
    return violations
