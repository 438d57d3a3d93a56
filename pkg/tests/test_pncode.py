"""Tests for LFSR sequences, correlation measures and codebook search."""

import numpy as np
import pytest

from ble_tag_telemetry.common import (
    DEFAULT_THRESHOLD,
    DETECT_BITS,
    BitSequence,
    CapacityExceededError,
    InvalidArgumentError,
    UnsupportedError,
)
from ble_tag_telemetry.frame import build_detect_sequence
from ble_tag_telemetry.pncode import (
    Codebook,
    CodebookEntry,
    Lfsr,
    build_codebook,
    correlate_aligned,
    is_maximal,
    lfsr_msequence,
    periodic_autocorrelation,
    primitive_taps,
    sliding_peak,
    verify_codebook,
)

# x^3 + x^2 + 1 and x^8 + x^6 + x^5 + x^4 + 1
TAPS_3 = 0b110
TAPS_8 = 0xB8


class TestLfsr:
    """Test cases for m-sequence generation."""

    def test_degree_three_sequence(self):
        seq = lfsr_msequence(3, TAPS_3, 0b001)
        assert seq.length == 7
        assert seq.ones() == 4

    def test_degree_eight_balance(self):
        seq = lfsr_msequence(8, TAPS_8, 1)
        assert seq.length == 255
        assert seq.ones() == 128

    def test_zero_seed_rejected(self):
        with pytest.raises(InvalidArgumentError):
            lfsr_msequence(2, 0b11, 0)
        with pytest.raises(InvalidArgumentError):
            Lfsr(4, 0b1001, 0)

    def test_degree_out_of_range(self):
        with pytest.raises(InvalidArgumentError):
            lfsr_msequence(1, 1, 1)
        with pytest.raises(InvalidArgumentError):
            lfsr_msequence(33, 1, 1)

    def test_register_is_periodic(self):
        reg = Lfsr(8, TAPS_8, 0x5A)
        first = [reg.step() for _ in range(reg.period)]
        second = [reg.step() for _ in range(reg.period)]
        assert first == second


class TestMaximality:
    """Test cases for is_maximal and primitive_taps."""

    def test_known_polynomials(self):
        assert is_maximal(3, TAPS_3)
        assert not is_maximal(3, 0b111)
        assert is_maximal(8, TAPS_8)

    def test_degree_limit(self):
        with pytest.raises(UnsupportedError):
            is_maximal(21, 1 << 20 | 1)

    def test_sixteen_primitive_octics(self):
        taps = primitive_taps(8)
        assert len(taps) == 16
        assert TAPS_8 in taps


class TestCorrelation:
    """Test cases for aligned, periodic and sliding correlation."""

    def test_aligned_identity_and_complement(self, random_bits):
        a = random_bits(DETECT_BITS)
        assert correlate_aligned(a, a) == 256
        assert correlate_aligned(a, a.complement()) == 0

    def test_aligned_rejects_bad_input(self):
        with pytest.raises(InvalidArgumentError):
            correlate_aligned(BitSequence("01"), BitSequence("011"))
        with pytest.raises(InvalidArgumentError):
            correlate_aligned(BitSequence(""), BitSequence(""))

    def test_distinct_msequences_stay_below_threshold(self):
        a = build_detect_sequence(lfsr_msequence(8, 0xB8, 1).prefix(248))
        b = build_detect_sequence(lfsr_msequence(8, 0xB4, 1).prefix(248))
        assert correlate_aligned(a, b) < DEFAULT_THRESHOLD

    def test_msequence_autocorrelation_is_two_valued(self):
        seq = lfsr_msequence(8, TAPS_8, 1)
        assert periodic_autocorrelation(seq, 0) == 255
        assert {periodic_autocorrelation(seq, s) for s in range(1, 255)} == {-1}

    def test_constant_sequence_autocorrelation(self):
        assert periodic_autocorrelation(BitSequence("1" * 8), 3) == 8

    def test_shift_out_of_range(self):
        with pytest.raises(InvalidArgumentError):
            periodic_autocorrelation(BitSequence("0101"), 4)

    def test_sliding_peak_finds_one_bit_shift(self, random_bits):
        b = random_bits(DETECT_BITS)
        a = BitSequence.concat(b[1:], BitSequence("0"))
        assert sliding_peak(a, b) == 255

    def test_sliding_peak_matches_shift_by_shift_count(self, rng):
        for _ in range(10):
            a, b = rng.integers(0, 2, 40), rng.integers(0, 2, 40)
            counts = []
            for k in range(1, 40):
                counts.append(int(np.count_nonzero(a[k:] == b[:-k])))
                counts.append(int(np.count_nonzero(a[:-k] == b[k:])))
            expected = max(counts)
            assert sliding_peak(BitSequence(a), BitSequence(b)) == expected


class TestCodebook:
    """Test cases for codebook search and verification."""

    def test_single_tag(self, single_codebook):
        assert len(single_codebook.entries) == 1
        assert single_codebook.entries[0].code.length == DETECT_BITS
        assert verify_codebook(single_codebook) == []

    def test_two_tags_within_bound(self):
        book = build_codebook(2, seed=1, max_cross=192)
        assert len(book.entries) == 2
        assert book.max_cross_correlation <= 192
        assert verify_codebook(book) == []
        a, b = (e.code for e in book.entries)
        assert correlate_aligned(a, b) <= 192
        assert sliding_peak(a, b) <= 192

    def test_search_is_seeded(self):
        assert build_codebook(2, seed=5) == build_codebook(2, seed=5)

    def test_codes_start_with_alternating_preamble(self, small_codebook):
        for entry in small_codebook.entries:
            preamble = entry.bits[:8]
            assert preamble in ("01010101", "10101010")
            assert preamble[-1] != entry.bits[8]

    def test_capacity_exceeded(self):
        with pytest.raises(CapacityExceededError) as excinfo:
            build_codebook(10**6, seed=0, max_cross=130)
        assert excinfo.value.requested == 10**6
        assert excinfo.value.achieved < 10**6

    def test_invalid_arguments(self):
        with pytest.raises(InvalidArgumentError):
            build_codebook(0, seed=0)
        with pytest.raises(InvalidArgumentError):
            build_codebook(1, seed=0, max_cross=100)

    def test_json_round_trip(self, small_codebook):
        restored = Codebook.from_json(small_codebook.to_json())
        assert restored == small_codebook
        assert restored.codes() == small_codebook.codes()

    def test_lookup_and_resolve(self, small_codebook):
        first = small_codebook.tag_ids[0]
        assert small_codebook.lookup(first).tag_id == first
        assert small_codebook.resolve_tag() == first
        assert small_codebook.resolve_tag("tag-0002") == "tag-0002"
        with pytest.raises(KeyError):
            small_codebook.lookup("tag-9999")
        with pytest.raises(InvalidArgumentError):
            small_codebook.resolve_tag("tag-9999")

    def test_verifier_reports_close_codes(self, random_bits):
        code = random_bits(DETECT_BITS)
        flipped = code.bits.copy()
        flipped[100] ^= 1
        book = Codebook(
            max_cross_correlation=192,
            entries=[
                CodebookEntry(tag_id="a", bits=code.to_string()),
                CodebookEntry(tag_id="b", bits=BitSequence(flipped).to_string()),
            ],
        )
        violations = verify_codebook(book)
        assert any("aligned score 255" in v for v in violations)

    def test_duplicate_tags_rejected(self, single_codebook):
        entry = single_codebook.entries[0]
        with pytest.raises(ValueError):
            Codebook(max_cross_correlation=0, entries=[entry, entry])

    def test_unsupported_version(self, single_codebook):
        text = single_codebook.model_copy(update={"version": 99}).to_json()
        with pytest.raises(InvalidArgumentError):
            Codebook.from_json(text)

    def test_codes_are_distinct_from_random(self, small_codebook):
        codes = np.stack([e.code.bits for e in small_codebook.entries])
        assert len({c.tobytes() for c in codes}) == len(codes)
