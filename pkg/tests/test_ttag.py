"""Binary time-tag format: roundtrip, header bookkeeping, validation."""
import struct

import numpy as np
import pytest

from teleportsim import ttag


def sample_tags():
    times = np.array([100, 250, 400], dtype=np.int64)
    return ttag.make_tags(times, ttag.STATION_ALICE, np.array([0, 1, 4], dtype=np.uint8))


class TestRoundtrip:
    def test_write_read_identity(self, tmp_path):
        path = tmp_path / "x.ttag"
        tags = sample_tags()
        ttag.write_ttag(path, tags)
        back = ttag.read_ttag(path)
        np.testing.assert_array_equal(back, tags)

    def test_record_size_is_ten_bytes(self, tmp_path):
        path = tmp_path / "x.ttag"
        tags = sample_tags()
        ttag.write_ttag(path, tags)
        assert path.stat().st_size == ttag.HEADER.size + 10 * len(tags)

    def test_header_count_matches_body(self, tmp_path):
        path = tmp_path / "x.ttag"
        ttag.write_ttag(path, sample_tags())
        with open(path, "rb") as fh:
            _, _, count = ttag.HEADER.unpack(fh.read(ttag.HEADER.size))
        assert count == 3

    def test_incremental_writer_fixes_count(self, tmp_path):
        path = tmp_path / "x.ttag"
        with ttag.TtagWriter(path) as writer:
            writer.write(sample_tags())
            writer.write(sample_tags())
        back = ttag.read_ttag(path)
        assert back.shape[0] == 6


class TestValidation:
    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ttag"
        path.write_bytes(struct.pack("<4sHQ", b"NOPE", 1, 0))
        with pytest.raises(ttag.TtagFormatError, match="magic"):
            ttag.read_ttag(path)

    def test_bad_version_rejected(self, tmp_path):
        path = tmp_path / "bad.ttag"
        path.write_bytes(struct.pack("<4sHQ", b"TTAG", 9, 0))
        with pytest.raises(ttag.TtagFormatError, match="version"):
            ttag.read_ttag(path)

    def test_count_mismatch_rejected(self, tmp_path):
        path = tmp_path / "bad.ttag"
        path.write_bytes(struct.pack("<4sHQ", b"TTAG", 1, 5))
        with pytest.raises(ttag.TtagFormatError, match="promises"):
            ttag.read_ttag(path)

    def test_station_channel_consistency(self):
        with pytest.raises(ttag.TtagFormatError, match="invalid for station"):
            ttag.make_tags(
                np.array([10], dtype=np.int64),
                ttag.STATION_BOB,
                np.array([0], dtype=np.uint8),  # trigger channel on the receiver
            )

    def test_negative_time_rejected(self):
        with pytest.raises(ValueError, match="non-negative"):
            ttag.make_tags(np.array([-5]), ttag.STATION_ALICE, np.array([0], dtype=np.uint8))


class TestJsonl:
    def test_roundtrip(self, tmp_path):
        path = tmp_path / "r.jsonl"
        records = [{"a": 1}, {"b": [1, 2, 3]}]
        ttag.write_jsonl(path, records)
        assert ttag.read_jsonl(path) == records
