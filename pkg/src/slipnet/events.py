"""Tactile event streams and the binary trial format.

An event camera watching the sensor skin emits sparse events, each a
microsecond timestamp, a pixel coordinate, and a polarity (+1 brightness
increase, -1 decrease).  A recorded trial bundles one stream with its
ground-truth slip onset times.

Trial files ("NTEV" format, version 1, little-endian throughout):

    magic           4 bytes     b"NTEV"
    version         u16
    sensor_width    u16
    sensor_height   u16
    incipient_onset u64         microseconds; all-ones when absent
    gross_onset     u64         microseconds; all-ones when absent
    event_count     u64
    records         16 bytes each: t_us u64, x u16, y u16,
                    polarity i8, 3 bytes zero padding

The header is exactly 34 bytes and every record 16, so a well-formed
file has size 34 + 16 * event_count.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

MAGIC = b"NTEV"
FORMAT_VERSION = 1
ONSET_ABSENT = 0xFFFF_FFFF_FFFF_FFFF

_HEADER = struct.Struct("<4sHHHQQQ")
HEADER_SIZE = _HEADER.size  # 34
RECORD_SIZE = 16

_RECORD_DTYPE = np.dtype(
    [("t_us", "<u8"), ("x", "<u2"), ("y", "<u2"), ("polarity", "<i1"), ("pad", "V3")]
)


class SlipnetError(Exception):
    """Base class for errors raised by this package."""


class IoFailure(SlipnetError):
    """Underlying file operation failed."""


class MalformedHeader(SlipnetError):
    """File is not a well-formed trial: bad magic, truncation, bad onsets."""


class VersionMismatch(SlipnetError):
    """Trial file uses an unsupported format version."""


class StreamViolation(SlipnetError):
    """An event stream breaks a structural invariant."""

    def __init__(self, kind: str, index: int):
        super().__init__(f"{kind} at event {index}")
        self.kind = kind
        self.index = index


class UnsortedTimestamps(StreamViolation):
    def __init__(self, index: int):
        super().__init__("unsorted timestamps", index)


class OutOfBounds(StreamViolation):
    def __init__(self, index: int):
        super().__init__("coordinate out of bounds", index)


class BadPolarity(StreamViolation):
    def __init__(self, index: int):
        super().__init__("polarity not in {-1, +1}", index)


@dataclass(frozen=True)
class Event:
    t_us: int
    x: int
    y: int
    polarity: int


@dataclass(frozen=True)
class Violation:
    """One structural defect found by validate_stream."""

    kind: str  # "UnsortedTimestamps" | "OutOfBounds" | "BadPolarity"
    index: int

    def __repr__(self):
        return f"{self.kind}({self.index})"


_VIOLATION_ERRORS = {
    "UnsortedTimestamps": UnsortedTimestamps,
    "OutOfBounds": OutOfBounds,
    "BadPolarity": BadPolarity,
}


@dataclass(eq=False)
class EventStream:
    """Column-oriented event storage for one sensor resolution.

    Columns are parallel numpy arrays; events are kept in nondecreasing
    timestamp order.  Equal timestamps are allowed.
    """

    sensor_width: int
    sensor_height: int
    t_us: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    x: np.ndarray = field(default_factory=lambda: np.empty(0, np.int32))
    y: np.ndarray = field(default_factory=lambda: np.empty(0, np.int32))
    polarity: np.ndarray = field(default_factory=lambda: np.empty(0, np.int8))

    def __post_init__(self):
        self.t_us = np.asarray(self.t_us, np.int64)
        self.x = np.asarray(self.x, np.int32)
        self.y = np.asarray(self.y, np.int32)
        self.polarity = np.asarray(self.polarity, np.int8)
        n = len(self.t_us)
        if not (len(self.x) == len(self.y) == len(self.polarity) == n):
            raise ValueError("event columns must have equal length")

    @classmethod
    def from_events(cls, events, sensor_width: int, sensor_height: int) -> "EventStream":
        evs = list(events)
        return cls(
            sensor_width,
            sensor_height,
            np.array([e.t_us for e in evs], np.int64),
            np.array([e.x for e in evs], np.int32),
            np.array([e.y for e in evs], np.int32),
            np.array([e.polarity for e in evs], np.int8),
        )

    @classmethod
    def empty(cls, sensor_width: int, sensor_height: int) -> "EventStream":
        return cls(sensor_width, sensor_height)

    def __len__(self) -> int:
        return len(self.t_us)

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield Event(int(self.t_us[i]), int(self.x[i]), int(self.y[i]), int(self.polarity[i]))

    def select(self, mask: np.ndarray) -> "EventStream":
        """New stream keeping events where mask is true (order preserved)."""
        return EventStream(
            self.sensor_width,
            self.sensor_height,
            self.t_us[mask],
            self.x[mask],
            self.y[mask],
            self.polarity[mask],
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.sensor_width == other.sensor_width
            and self.sensor_height == other.sensor_height
            and np.array_equal(self.t_us, other.t_us)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.polarity, other.polarity)
        )


@dataclass(eq=False)
class Trial:
    """One recorded trial: a stream plus ground-truth onset times.

    Onsets are microseconds on the stream's clock; None means the slip
    phase never occurred.  When both are present, incipient <= gross.
    The scenario dict is in-memory provenance only; it is not part of
    the trial file format and does not survive save/load.
    """

    stream: EventStream
    incipient_onset_us: int | None = None
    gross_onset_us: int | None = None
    scenario: dict = field(default_factory=dict)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trial):
            return NotImplemented
        return (
            self.stream == other.stream
            and self.incipient_onset_us == other.incipient_onset_us
            and self.gross_onset_us == other.gross_onset_us
        )


def validate_stream(stream: EventStream) -> list[Violation]:
    """Check structural invariants; return all violations in index order.

    Kinds: OutOfBounds (coordinate outside the sensor, or negative
    timestamp), BadPolarity (polarity not in {-1, +1}), and
    UnsortedTimestamps (reported at the first event of each decreasing
    pair).  An empty list means the stream is well formed.
    """
    found = []
    oob = (
        (stream.x < 0)
        | (stream.x >= stream.sensor_width)
        | (stream.y < 0)
        | (stream.y >= stream.sensor_height)
        | (stream.t_us < 0)
    )
    for i in np.flatnonzero(oob):
        found.append(Violation("OutOfBounds", int(i)))
    badp = (stream.polarity != 1) & (stream.polarity != -1)
    for i in np.flatnonzero(badp):
        found.append(Violation("BadPolarity", int(i)))
    if len(stream) > 1:
        drops = np.flatnonzero(stream.t_us[1:] < stream.t_us[:-1]) + 1
        for i in drops:
            found.append(Violation("UnsortedTimestamps", int(i)))
    found.sort(key=lambda v: (v.index, v.kind))
    return found


def _raise_first(violations: list[Violation]):
    if violations:
        v = violations[0]
        raise _VIOLATION_ERRORS[v.kind](v.index)


def _check_onsets(incipient, gross):
    if incipient is not None and gross is not None and incipient > gross:
        raise MalformedHeader(
            f"incipient onset {incipient} after gross onset {gross}"
        )


def save_events(trial: Trial, path) -> None:
    """Write a trial file, validating the stream first."""
    stream = trial.stream
    _raise_first(validate_stream(stream))
    _check_onsets(trial.incipient_onset_us, trial.gross_onset_us)
    if not (0 < stream.sensor_width <= 0xFFFF and 0 < stream.sensor_height <= 0xFFFF):
        raise MalformedHeader("sensor dimensions must fit in u16 and be positive")

    header = _HEADER.pack(
        MAGIC,
        FORMAT_VERSION,
        stream.sensor_width,
        stream.sensor_height,
        ONSET_ABSENT if trial.incipient_onset_us is None else trial.incipient_onset_us,
        ONSET_ABSENT if trial.gross_onset_us is None else trial.gross_onset_us,
        len(stream),
    )
    records = np.zeros(len(stream), _RECORD_DTYPE)
    records["t_us"] = stream.t_us
    records["x"] = stream.x
    records["y"] = stream.y
    records["polarity"] = stream.polarity
    try:
        with open(path, "wb") as f:
            f.write(header)
            f.write(records.tobytes())
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


def load_events(path) -> Trial:
    """Read and validate a trial file.

    Raises MalformedHeader for bad magic, truncated files, or onset
    ordering violations; VersionMismatch for unknown versions; and the
    matching StreamViolation subclass for the first defective event.
    """
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e

    if len(raw) < HEADER_SIZE:
        raise MalformedHeader(f"file is {len(raw)} bytes, header needs {HEADER_SIZE}")
    magic, version, width, height, incipient, gross, count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise MalformedHeader(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"version {version}, expected {FORMAT_VERSION}")
    expected = HEADER_SIZE + RECORD_SIZE * count
    if len(raw) != expected:
        raise MalformedHeader(
            f"file is {len(raw)} bytes, header promises {expected}"
        )
    if width == 0 or height == 0:
        raise MalformedHeader("zero sensor dimension")

    records = np.frombuffer(raw, _RECORD_DTYPE, count=count, offset=HEADER_SIZE)
    if np.any(records["t_us"] > np.iinfo(np.int64).max):
        raise MalformedHeader("timestamp overflows the stream clock")
    stream = EventStream(
        width,
        height,
        records["t_us"].astype(np.int64),
        records["x"].astype(np.int32),
        records["y"].astype(np.int32),
        records["polarity"].astype(np.int8),
    )
    _raise_first(validate_stream(stream))

    inc = None if incipient == ONSET_ABSENT else int(incipient)
    gro = None if gross == ONSET_ABSENT else int(gross)
    _check_onsets(inc, gro)
    return Trial(stream, inc, gro)
