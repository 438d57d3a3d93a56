"""Tests for raw IQ files, sidecars and codebook files."""

import json

import numpy as np
import pytest

from ble_tag_telemetry.common import CorruptFileError, InvalidArgumentError, IqBuffer
from ble_tag_telemetry.fileio import (
    BYTES_PER_SAMPLE,
    SidecarMeta,
    atomic_write_text,
    iter_iq_blocks,
    read_codebook,
    read_iq,
    read_sidecar,
    sidecar_path,
    write_codebook,
    write_iq,
)


@pytest.fixture
def short_buffer(rng):
    samples = (rng.standard_normal(1000) + 1j * rng.standard_normal(1000)) * 0.3
    return IqBuffer(samples.astype(np.complex64).astype(np.complex128), 4.0e6)


class TestIqFiles:
    """Test cases for write_iq and read_iq."""

    def test_round_trip(self, tmp_path, short_buffer):
        path = tmp_path / "burst.cf32"
        write_iq(path, short_buffer, center_freq_hz=2.402e9, description="noise", snr_db=3.0)
        loaded = read_iq(path)
        assert loaded.sample_rate == 4.0e6
        assert np.array_equal(loaded.samples, short_buffer.samples)
        meta = read_sidecar(path)
        assert meta.center_freq_hz == 2.402e9
        assert meta.description == "noise"
        assert meta.snr_db == 3.0

    def test_byte_layout(self, tmp_path):
        path = tmp_path / "two.cf32"
        write_iq(path, IqBuffer([1.0 + 2.0j, -0.5 - 0.25j], 1.0e6))
        raw = path.read_bytes()
        assert len(raw) == 2 * BYTES_PER_SAMPLE
        assert np.array_equal(
            np.frombuffer(raw, dtype="<f4"), np.array([1.0, 2.0, -0.5, -0.25], dtype="<f4")
        )

    def test_sidecar_is_json(self, tmp_path, short_buffer):
        path = tmp_path / "burst.cf32"
        write_iq(path, short_buffer)
        doc = json.loads(sidecar_path(path).read_text())
        assert doc["sample_rate_hz"] == 4.0e6
        assert "snr_db" not in doc

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "bad.cf32"
        path.write_bytes(b"\x00" * (BYTES_PER_SAMPLE + 3))
        with pytest.raises(CorruptFileError):
            read_iq(path, sample_rate=1.0e6)

    def test_explicit_rate_without_sidecar(self, tmp_path):
        path = tmp_path / "bare.cf32"
        path.write_bytes(np.zeros(8, dtype="<f4").tobytes())
        loaded = read_iq(path, sample_rate=2.0e6)
        assert len(loaded) == 4
        assert loaded.sample_rate == 2.0e6

    def test_missing_rate(self, tmp_path):
        path = tmp_path / "bare.cf32"
        path.write_bytes(np.zeros(8, dtype="<f4").tobytes())
        with pytest.raises(InvalidArgumentError):
            read_iq(path)

    def test_explicit_rate_wins(self, tmp_path, short_buffer):
        path = tmp_path / "burst.cf32"
        write_iq(path, short_buffer)
        assert read_iq(path, sample_rate=8.0e6).sample_rate == 8.0e6

    def test_corrupt_sidecar(self, tmp_path, short_buffer):
        path = tmp_path / "burst.cf32"
        write_iq(path, short_buffer)
        sidecar_path(path).write_text('{"sample_rate_hz": -1}')
        with pytest.raises(CorruptFileError):
            read_iq(path)

    def test_extra_sidecar_keys_kept(self, tmp_path, short_buffer):
        path = tmp_path / "burst.cf32"
        write_iq(path, short_buffer)
        doc = json.loads(sidecar_path(path).read_text())
        doc["gain_db"] = 30
        sidecar_path(path).write_text(json.dumps(doc))
        meta = read_sidecar(path)
        assert isinstance(meta, SidecarMeta)
        assert meta.model_dump()["gain_db"] == 30

    def test_float32_overflow_rejected(self, tmp_path):
        with pytest.raises(InvalidArgumentError):
            write_iq(tmp_path / "nan.cf32", IqBuffer([1e39 + 0j], 1.0e6))

    def test_no_temporary_files_left(self, tmp_path, short_buffer):
        write_iq(tmp_path / "burst.cf32", short_buffer)
        atomic_write_text(tmp_path / "notes.txt", "hello\n")
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == ["burst.cf32", "burst.cf32.json", "notes.txt"]


class TestIqBlocks:
    """Test cases for iter_iq_blocks."""

    def test_blocks_cover_file(self, tmp_path, short_buffer):
        path = tmp_path / "burst.cf32"
        write_iq(path, short_buffer)
        blocks = list(iter_iq_blocks(path, block_samples=300))
        assert [len(b) for b in blocks] == [300, 300, 300, 100]
        assert np.array_equal(
            np.concatenate([b.samples for b in blocks]), short_buffer.samples
        )

    def test_invalid_block_size(self, tmp_path, short_buffer):
        path = tmp_path / "burst.cf32"
        write_iq(path, short_buffer)
        with pytest.raises(InvalidArgumentError):
            list(iter_iq_blocks(path, block_samples=0))

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "bad.cf32"
        path.write_bytes(b"\x00" * 5)
        with pytest.raises(CorruptFileError):
            list(iter_iq_blocks(path, sample_rate=1.0e6))


class TestCodebookFiles:
    """Test cases for read_codebook and write_codebook."""

    def test_round_trip(self, tmp_path, small_codebook):
        path = tmp_path / "book.json"
        write_codebook(path, small_codebook)
        assert read_codebook(path) == small_codebook

    def test_invalid_document(self, tmp_path):
        path = tmp_path / "book.json"
        path.write_text('{"version": 1, "entries": "nope"}')
        with pytest.raises(InvalidArgumentError):
            read_codebook(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            read_codebook(tmp_path / "absent.json")
