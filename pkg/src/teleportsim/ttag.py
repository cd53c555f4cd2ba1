"""Time-tag binary format shared by the simulator, the sync/coincidence
analysis and the CLI.

Layout (little endian): 4-byte magic "TTAG", u16 version (= 1), u64 record
count, then 10-byte records of (u64 time_ps, u8 station, u8 channel).
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"TTAG"
VERSION = 1
HEADER = struct.Struct("<4sHQ")

TAG_DTYPE = np.dtype([("time_ps", "<u8"), ("station", "u1"), ("channel", "u1")])

STATION_ALICE = 0
STATION_BOB = 1

CHANNELS = {"t": 0, "a": 1, "b": 2, "c": 3, "d": 4, "e": 5, "f": 6, "ff": 7}
CHANNEL_NAMES = {v: k for k, v in CHANNELS.items()}
STATION_CHANNELS = {
    STATION_ALICE: frozenset({0, 1, 2, 3, 4}),
    STATION_BOB: frozenset({5, 6, 7}),
}


class TtagFormatError(ValueError):
    pass


def make_tags(times_ps, station, channels) -> np.ndarray:
    """Assemble a structured tag array for a single station."""
    times = np.asarray(times_ps)
    if np.any(times < 0):
        raise ValueError("tag times must be non-negative")
    out = np.empty(times.shape[0], dtype=TAG_DTYPE)
    out["time_ps"] = times.astype(np.uint64)
    out["station"] = station
    out["channel"] = channels
    validate_tags(out)
    return out


def validate_tags(tags: np.ndarray) -> None:
    for station, allowed in STATION_CHANNELS.items():
        mask = tags["station"] == station
        bad = np.setdiff1d(np.unique(tags["channel"][mask]), sorted(allowed))
        if bad.size:
            raise TtagFormatError(
                f"channels {bad.tolist()} invalid for station {station}"
            )
    unknown = ~np.isin(tags["station"], list(STATION_CHANNELS))
    if np.any(unknown):
        raise TtagFormatError(f"unknown stations {np.unique(tags['station'][unknown]).tolist()}")


def write_ttag(path, tags: np.ndarray) -> None:
    tags = np.ascontiguousarray(tags, dtype=TAG_DTYPE)
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, tags.shape[0]))
        tags.tofile(fh)


def read_ttag(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read(HEADER.size)
        if len(raw) != HEADER.size:
            raise TtagFormatError(f"{path}: truncated header")
        magic, version, count = HEADER.unpack(raw)
        if magic != MAGIC:
            raise TtagFormatError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise TtagFormatError(f"{path}: unsupported version {version}")
        tags = np.fromfile(fh, dtype=TAG_DTYPE)
    if tags.shape[0] != count:
        raise TtagFormatError(
            f"{path}: header promises {count} records, found {tags.shape[0]}"
        )
    return tags


class TtagWriter:
    """Incremental writer; the record count is patched into the header on close."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "wb")
        self._count = 0
        self._fh.write(HEADER.pack(MAGIC, VERSION, 0))

    def write(self, tags: np.ndarray) -> None:
        tags = np.ascontiguousarray(tags, dtype=TAG_DTYPE)
        tags.tofile(self._fh)
        self._count += tags.shape[0]

    def close(self) -> None:
        self._fh.seek(0)
        self._fh.write(HEADER.pack(MAGIC, VERSION, self._count))
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_jsonl(path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True))
            fh.write("\n")


def read_jsonl(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
