"""Event preprocessing: from raw camera streams to labeled spike volumes.

Pipeline stages, each a pure function:

    crop_and_filter   640x480 stream -> positive-polarity 400x400 stream
    pool_events       400x400 stream -> 20x20 grid stream (20px cells)
    bin_window        20x20 stream + start time -> (30, 1, 20, 20) counts
                      (30 ms window, 1 ms bins, half-open on the right)
    extract_samples   pooled stream + onsets -> labeled 30 ms samples
    split_trials      raw trials -> train/val/test DatasetSplit

Samples are labeled by phase: NoSlip before the incipient onset,
Incipient between the onsets, Gross from the gross onset on.  Up to 50
window slots per phase are used; when a phase holds more, 50 are drawn
without replacement.  Splitting assigns whole trials to splits so no
trial leaks across them.

Spike volumes serialize to "SPKV" files (little-endian): magic b"SPKV",
u16 version=1, four u16 dims, then u16 counts in row-major order.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Sequence

import numpy as np

from .events import EventStream, IoFailure, MalformedHeader, SlipnetError, Trial, VersionMismatch

SENSOR_WIDTH = 640
SENSOR_HEIGHT = 480
CROP_SIZE = 400
CROP_X0 = 120  # (640 - 400) // 2
CROP_Y0 = 40  # (480 - 400) // 2
CELL_PX = 20
GRID_SIZE = 20  # 400 / 20
STEP_US = 1_000
WINDOW_STEPS = 30
WINDOW_US = WINDOW_STEPS * STEP_US
VOLUME_SHAPE = (WINDOW_STEPS, 1, GRID_SIZE, GRID_SIZE)
SAMPLES_PER_PHASE = 50
SPLIT_RATIOS = (0.70, 0.15, 0.15)

SPKV_MAGIC = b"SPKV"
SPKV_VERSION = 1
_SPKV_HEADER = struct.Struct("<4sHHHHH")


class WrongResolution(SlipnetError):
    """Stream resolution does not match what the stage expects."""


class MissingOnsets(SlipnetError):
    """Trial lacks the onset labels needed to extract samples."""


class TooFewTrials(SlipnetError):
    """Not enough trials to populate every split."""


class SlipState(IntEnum):
    NO_SLIP = 0
    INCIPIENT = 1
    GROSS = 2


@dataclass(eq=False)
class SpikeVolume:
    """One 30 ms window of per-cell event counts, shape (30, 1, 20, 20).

    t_start_us is in-memory provenance; the SPKV format does not carry it.
    """

    counts: np.ndarray
    t_start_us: int = 0

    def __post_init__(self):
        self.counts = np.asarray(self.counts, np.uint16)
        if self.counts.shape != VOLUME_SHAPE:
            raise WrongResolution(
                f"volume shape {self.counts.shape}, expected {VOLUME_SHAPE}"
            )

    def __eq__(self, other):
        if not isinstance(other, SpikeVolume):
            return NotImplemented
        return np.array_equal(self.counts, other.counts)


@dataclass(frozen=True)
class LabeledSample:
    volume: SpikeVolume
    label: SlipState
    t_start_us: int


@dataclass
class DatasetSplit:
    train: list[LabeledSample]
    val: list[LabeledSample]
    test: list[LabeledSample]
    seed: int


def _require_resolution(stream: EventStream, width: int, height: int, stage: str):
    if stream.sensor_width != width or stream.sensor_height != height:
        raise WrongResolution(
            f"{stage} expects {width}x{height}, got "
            f"{stream.sensor_width}x{stream.sensor_height}"
        )


def crop_and_filter(stream: EventStream) -> EventStream:
    """Keep positive-polarity events inside the centered 400x400 region.

    Coordinates are rebased to the crop, so (320, 240) maps to (200, 200).
    """
    _require_resolution(stream, SENSOR_WIDTH, SENSOR_HEIGHT, "crop_and_filter")
    keep = (
        (stream.polarity == 1)
        & (stream.x >= CROP_X0)
        & (stream.x < CROP_X0 + CROP_SIZE)
        & (stream.y >= CROP_Y0)
        & (stream.y < CROP_Y0 + CROP_SIZE)
    )
    return EventStream(
        CROP_SIZE,
        CROP_SIZE,
        stream.t_us[keep],
        stream.x[keep] - CROP_X0,
        stream.y[keep] - CROP_Y0,
        stream.polarity[keep],
    )


def pool_events(stream: EventStream) -> EventStream:
    """Map each event to its 20x20-pixel cell, giving a 20x20 grid stream.

    Events keep their timestamps and order; only coordinates coarsen.
    """
    _require_resolution(stream, CROP_SIZE, CROP_SIZE, "pool_events")
    return EventStream(
        GRID_SIZE,
        GRID_SIZE,
        stream.t_us,
        stream.x // CELL_PX,
        stream.y // CELL_PX,
        stream.polarity,
    )


def bin_window(stream: EventStream, t_start_us: int) -> SpikeVolume:
    """Count grid events into 1 ms bins over [t_start, t_start + 30 ms).

    Each bin is half-open on the right, so an event at exactly
    t_start + 30 ms lands in the next window, not this one.
    """
    _require_resolution(stream, GRID_SIZE, GRID_SIZE, "bin_window")
    rel = stream.t_us - t_start_us
    inside = (rel >= 0) & (rel < WINDOW_US)
    step = rel[inside] // STEP_US
    flat = (step * GRID_SIZE + stream.y[inside]) * GRID_SIZE + stream.x[inside]
    counts = np.bincount(flat, minlength=WINDOW_STEPS * GRID_SIZE * GRID_SIZE)
    return SpikeVolume(counts.reshape(VOLUME_SHAPE), int(t_start_us))


def tile_windows(stream: EventStream, t_start_us: int = 0, n_windows: int | None = None) -> np.ndarray:
    """Bin a grid stream into consecutive 30 ms windows from t_start.

    Returns uint16 counts of shape (n, 30, 1, 20, 20).  When n_windows is
    None, n is the number of whole windows up to the last event.
    """
    _require_resolution(stream, GRID_SIZE, GRID_SIZE, "tile_windows")
    if n_windows is None:
        if len(stream) == 0 or int(stream.t_us[-1]) < t_start_us:
            n_windows = 0
        else:
            n_windows = int(stream.t_us[-1] - t_start_us) // WINDOW_US + 1
    cells = WINDOW_STEPS * GRID_SIZE * GRID_SIZE
    if n_windows == 0:
        return np.zeros((0,) + VOLUME_SHAPE, np.uint16)
    rel = stream.t_us - t_start_us
    inside = (rel >= 0) & (rel < n_windows * WINDOW_US)
    rel = rel[inside]
    win = rel // WINDOW_US
    step = (rel % WINDOW_US) // STEP_US
    flat = ((win * WINDOW_STEPS + step) * GRID_SIZE + stream.y[inside]) * GRID_SIZE + stream.x[inside]
    counts = np.bincount(flat, minlength=n_windows * cells)
    return counts.reshape((n_windows,) + VOLUME_SHAPE).astype(np.uint16)


def _phase_slots(a: int, b: int, anchor_end: bool) -> tuple[int, int]:
    """Number of whole 30 ms slots in [a, b) and the time of the first."""
    n = max(0, (b - a) // WINDOW_US)
    start = b - n * WINDOW_US if anchor_end else a
    return n, start


def extract_samples(
    stream: EventStream,
    incipient_onset_us: int | None,
    gross_onset_us: int | None,
    seed: int,
    samples_per_phase: int = SAMPLES_PER_PHASE,
) -> list[LabeledSample]:
    """Cut one pooled stream into labeled non-overlapping 30 ms samples.

    NoSlip slots tile backward from the incipient onset (the quiet start
    of a trial is dropped first), Incipient and Gross slots tile forward
    from their onsets.  A phase with more slots than samples_per_phase
    contributes a random subset, drawn without replacement; samples come
    back in chronological order within each phase.
    """
    _require_resolution(stream, GRID_SIZE, GRID_SIZE, "extract_samples")
    if incipient_onset_us is None or gross_onset_us is None:
        raise MissingOnsets("sample extraction needs both onset labels")
    end = int(stream.t_us[-1]) + 1 if len(stream) else 0
    rng = np.random.default_rng(seed)
    phases = [
        (SlipState.NO_SLIP, 0, incipient_onset_us, True),
        (SlipState.INCIPIENT, incipient_onset_us, gross_onset_us, False),
        (SlipState.GROSS, gross_onset_us, max(end, gross_onset_us), False),
    ]
    samples = []
    for label, a, b, anchor_end in phases:
        n, start = _phase_slots(a, b, anchor_end)
        if n > samples_per_phase:
            picked = np.sort(rng.choice(n, size=samples_per_phase, replace=False))
        else:
            picked = np.arange(n)
        for k in picked:
            t0 = start + int(k) * WINDOW_US
            samples.append(LabeledSample(bin_window(stream, t0), label, t0))
    return samples


def _trial_seed(seed: int, index: int) -> int:
    digest = hashlib.blake2b(f"{seed}:trial:{index}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def split_sizes(n: int, ratios: Sequence[float] = SPLIT_RATIOS) -> tuple[int, int, int]:
    """Trial counts per split: floor for train and val, remainder to test."""
    train = int(n * ratios[0])
    val = int(n * ratios[1])
    return train, val, n - train - val


def split_assignments(
    n: int, seed: int, ratios: Sequence[float] = SPLIT_RATIOS
) -> list[str]:
    """Per-trial split names ("train"/"val"/"test") for n trials.

    The seed shuffles trial positions; sizes come from split_sizes.
    split_trials uses exactly this assignment, so callers that persist
    it can rebuild identical splits later.
    """
    n_train, n_val, _ = split_sizes(n, ratios)
    order = np.random.default_rng(seed).permutation(n)
    names = [""] * n
    for pos, idx in enumerate(order):
        if pos < n_train:
            names[int(idx)] = "train"
        elif pos < n_train + n_val:
            names[int(idx)] = "val"
        else:
            names[int(idx)] = "test"
    return names


def split_trials(
    trials: Sequence[Trial],
    seed: int,
    ratios: Sequence[float] = SPLIT_RATIOS,
    samples_per_phase: int = SAMPLES_PER_PHASE,
    allow_small: bool = False,
) -> DatasetSplit:
    """Preprocess trials and split their samples by whole trial.

    Trials are shuffled with the given seed and assigned to splits by
    split_sizes.  Each trial then runs crop -> pool -> extract_samples
    with a per-trial seed derived from (seed, trial position), so the
    result does not depend on how trials are distributed to splits.
    Raises TooFewTrials when a split would be empty, unless allow_small.
    """
    if abs(sum(ratios) - 1.0) > 1e-9 or len(ratios) != 3:
        raise ValueError("ratios must be three fractions summing to 1")
    n = len(trials)
    n_train, n_val, n_test = split_sizes(n, ratios)
    if min(n_train, n_val, n_test) < 1 and not allow_small:
        raise TooFewTrials(
            f"{n} trials give splits {n_train}/{n_val}/{n_test}; "
            "pass allow_small=True to accept empty splits"
        )
    assignment = split_assignments(n, seed, ratios)
    buckets = {"train": [], "val": [], "test": []}
    for idx, trial in enumerate(trials):
        pooled = pool_events(crop_and_filter(trial.stream))
        samples = extract_samples(
            pooled,
            trial.incipient_onset_us,
            trial.gross_onset_us,
            _trial_seed(seed, idx),
            samples_per_phase,
        )
        buckets[assignment[idx]].extend(samples)
    return DatasetSplit(buckets["train"], buckets["val"], buckets["test"], seed)


def dataset_arrays(samples: Sequence[LabeledSample]) -> tuple[np.ndarray, np.ndarray]:
    """Stack samples into classifier arrays (X, y).

    X is (n, 30, 1, 20, 20) uint8 with per-bin counts clipped at 255
    (cell counts above that do not occur at realistic event rates), y
    is int64 labels.  Empty input gives empty arrays of those shapes.
    """
    if not samples:
        return (
            np.zeros((0,) + VOLUME_SHAPE, np.uint8),
            np.zeros(0, np.int64),
        )
    x = np.stack([np.minimum(s.volume.counts, 255) for s in samples]).astype(np.uint8)
    y = np.array([int(s.label) for s in samples], np.int64)
    return x, y


def save_volume(volume: SpikeVolume, path) -> None:
    header = _SPKV_HEADER.pack(SPKV_MAGIC, SPKV_VERSION, *VOLUME_SHAPE)
    try:
        with open(path, "wb") as f:
            f.write(header)
            f.write(volume.counts.astype("<u2").tobytes())
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


def load_volume(path) -> SpikeVolume:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e
    if len(raw) < _SPKV_HEADER.size:
        raise MalformedHeader(f"file is {len(raw)} bytes, header needs {_SPKV_HEADER.size}")
    magic, version, *dims = _SPKV_HEADER.unpack_from(raw)
    if magic != SPKV_MAGIC:
        raise MalformedHeader(f"bad magic {magic!r}")
    if version != SPKV_VERSION:
        raise VersionMismatch(f"version {version}, expected {SPKV_VERSION}")
    if tuple(dims) != VOLUME_SHAPE:
        raise MalformedHeader(f"dims {tuple(dims)}, expected {VOLUME_SHAPE}")
    n = int(np.prod(dims))
    if len(raw) != _SPKV_HEADER.size + 2 * n:
        raise MalformedHeader("payload size does not match dims")
    counts = np.frombuffer(raw, "<u2", count=n, offset=_SPKV_HEADER.size)
    return SpikeVolume(counts.reshape(VOLUME_SHAPE).copy())


@dataclass
class DatasetManifest:
    """Text manifest tying trial files to split assignments.

    rows are (trial_index, split, path) in trial-index order; the index
    feeds per-trial extraction seeds, so rebuilding from the manifest
    reproduces the exact dataset.
    """

    seed: int
    ratios: tuple[float, float, float] = SPLIT_RATIOS
    samples_per_phase: int = SAMPLES_PER_PHASE
    labels_source: str = "trial_onsets"
    rows: list[tuple[int, str, str]] = field(default_factory=list)


def write_dataset_manifest(manifest: DatasetManifest, path) -> None:
    lines = [
        "# slipnet dataset manifest v1",
        f"seed={manifest.seed}",
        "ratios=" + ",".join(f"{r:g}" for r in manifest.ratios),
        f"samples_per_phase={manifest.samples_per_phase}",
        f"labels={manifest.labels_source}",
    ]
    for index, split, trial_path in manifest.rows:
        lines.append(f"trial\t{index}\t{split}\t{trial_path}")
    try:
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


def read_dataset_manifest(path) -> DatasetManifest:
    try:
        with open(path) as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e
    if not lines or not lines[0].startswith("# slipnet dataset manifest"):
        raise MalformedHeader("not a dataset manifest")
    manifest = DatasetManifest(seed=0)
    for line in lines[1:]:
        if not line.strip() or line.startswith("#"):
            continue
        if line.startswith("trial\t"):
            _, index, split, trial_path = line.split("\t", 3)
            if split not in ("train", "val", "test"):
                raise MalformedHeader(f"unknown split {split!r}")
            manifest.rows.append((int(index), split, trial_path))
        else:
            key, _, value = line.partition("=")
            if key == "seed":
                manifest.seed = int(value)
            elif key == "ratios":
                manifest.ratios = tuple(float(v) for v in value.split(","))
            elif key == "samples_per_phase":
                manifest.samples_per_phase = int(value)
            elif key == "labels":
                manifest.labels_source = value
            else:
                raise MalformedHeader(f"unknown manifest key {key!r}")
    return manifest
