"""Online slip-state decisions from per-window network spike counts.

A trial's event stream is cut into consecutive non-overlapping 30 ms
windows from t=0, each window is forwarded through the classifier, and
the resulting per-class output spike counts are smoothed with a
trailing sliding-window mean (prefix windows average whatever is
available, so the first decision can fall inside the first 120 ms).  A
class is decided for a window only when its smoothed count exceeds
every other class's by at least the margin; otherwise the window is
Undecided, which holds no class.

Onsets follow an incipient-then-gross state machine: the detected
incipient time is the end time of the first window decided Incipient,
and the detected gross time is the end time of the first Gross-decided
window after that; Gross decisions before incipient detection are
ignored.  Latencies are detected time minus ground-truth onset, so
negative values mean early detection; lead time is the gap between
detected incipient and the ground-truth gross onset.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional, Sequence

import numpy as np

from .events import IoFailure, SlipnetError, Trial
from .preprocess import (
    WINDOW_US,
    WrongResolution,
    crop_and_filter,
    pool_events,
    tile_windows,
)
from .snn import NetworkSpec, spike_counts


class EmptySequence(SlipnetError):
    """An operation that needs at least one window got none."""


class EmptyInput(SlipnetError):
    """Summary statistics were requested over zero reports."""


class PreprocessError(SlipnetError):
    """A trial could not be turned into classifier windows."""


class Decision(IntEnum):
    UNDECIDED = -1
    NO_SLIP = 0
    INCIPIENT = 1
    GROSS = 2

    def __str__(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class SmootherConfig:
    window_len: int = 4
    margin: float = 2.0

    def __post_init__(self):
        if self.window_len < 1:
            raise ValueError("window_len must be >= 1")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")


@dataclass
class DetectionReport:
    raw_counts: np.ndarray  # (K, 3) per-window output spike counts
    smoothed: np.ndarray  # (K, 3) trailing means
    decisions: list  # K Decision values
    detected_incipient_us: Optional[int]
    detected_gross_us: Optional[int]
    truth_incipient_us: Optional[int]
    truth_gross_us: Optional[int]
    latency_incipient_ms: Optional[float]
    latency_gross_ms: Optional[float]

    @property
    def lead_ms(self) -> Optional[float]:
        """Warning margin: ground-truth gross onset minus detected incipient."""
        if self.detected_incipient_us is None or self.truth_gross_us is None:
            return None
        return (self.truth_gross_us - self.detected_incipient_us) / 1000.0


def smooth(counts, config: SmootherConfig = SmootherConfig()) -> np.ndarray:
    """Trailing mean over the last window_len windows, per class.

    Element k averages raw windows max(0, k-window_len+1)..k; the first
    few elements average over however many windows exist.
    """
    counts = np.asarray(counts, np.float64)
    if counts.ndim != 2 or len(counts) == 0:
        raise EmptySequence("smoothing needs a (windows, classes) sequence")
    w = config.window_len
    padded = np.vstack([np.zeros((1, counts.shape[1])), np.cumsum(counts, axis=0)])
    k = np.arange(len(counts))
    lo = np.maximum(k - w + 1, 0)
    return (padded[k + 1] - padded[lo]) / (k - lo + 1)[:, None]


def decide(smoothed_row, margin: float = 2.0) -> Decision:
    """The unique class whose smoothed count beats all others by margin."""
    s = np.asarray(smoothed_row, np.float64)
    candidates = [
        i for i in range(len(s)) if all(s[i] >= s[j] + margin for j in range(len(s)) if j != i)
    ]
    if len(candidates) == 1:
        return Decision(candidates[0])
    return Decision.UNDECIDED


def decide_all(smoothed: np.ndarray, margin: float = 2.0) -> list:
    return [decide(row, margin) for row in smoothed]


def detect_onsets(decisions: Sequence[Decision], window_us: int = WINDOW_US):
    """First Incipient decision, then the first Gross decision after it.

    Returns (incipient_us, gross_us), each the END time of the deciding
    window or None.  Gross decisions before incipient detection are
    ignored, which makes the detected ordering structural.
    """
    incipient = None
    gross = None
    for k, d in enumerate(decisions):
        if incipient is None:
            if d == Decision.INCIPIENT:
                incipient = (k + 1) * window_us
        elif d == Decision.GROSS:
            gross = (k + 1) * window_us
            break
    return incipient, gross


def decision_flips(decisions: Sequence[Decision]) -> int:
    """Number of adjacent windows whose decision differs (Undecided counts)."""
    return sum(1 for a, b in zip(decisions, decisions[1:]) if a != b)


def window_counts(spec: NetworkSpec, weights, trial: Trial, batch_size: int = 256) -> np.ndarray:
    """Per-window output spike counts for a trial, windows tiled from t=0."""
    try:
        pooled = pool_events(crop_and_filter(trial.stream))
    except WrongResolution as e:
        raise PreprocessError(str(e)) from e
    volumes = tile_windows(pooled)
    if len(volumes) == 0:
        raise PreprocessError("trial produced no 30 ms windows after preprocessing")
    return spike_counts(spec, weights, volumes, batch_size)


def detect_trial(
    trial: Trial,
    spec: NetworkSpec,
    weights,
    config: SmootherConfig = SmootherConfig(),
) -> DetectionReport:
    """Run the online detector over one trial and compare against truth."""
    raw = window_counts(spec, weights, trial)
    smoothed = smooth(raw, config)
    decisions = decide_all(smoothed, config.margin)
    detected_incipient, detected_gross = detect_onsets(decisions)
    truth_incipient = trial.incipient_onset_us
    truth_gross = trial.gross_onset_us

    def _latency(detected, truth):
        if detected is None or truth is None:
            return None
        return (detected - truth) / 1000.0

    return DetectionReport(
        raw_counts=raw,
        smoothed=smoothed,
        decisions=decisions,
        detected_incipient_us=detected_incipient,
        detected_gross_us=detected_gross,
        truth_incipient_us=truth_incipient,
        truth_gross_us=truth_gross,
        latency_incipient_ms=_latency(detected_incipient, truth_incipient),
        latency_gross_ms=_latency(detected_gross, truth_gross),
    )


def latency_stats(reports: Sequence[DetectionReport]) -> dict:
    """Suite summary: latency mean and sd (population), minimum lead, n.

    Latency statistics are over the trials where the respective onset
    was detected and ground truth exists; entries are None when no
    trial qualifies.
    """
    if len(reports) == 0:
        raise EmptyInput("latency_stats needs at least one report")

    def _mean_sd(values):
        if not values:
            return None, None
        arr = np.asarray(values, np.float64)
        return float(arr.mean()), float(arr.std())

    inc = [r.latency_incipient_ms for r in reports if r.latency_incipient_ms is not None]
    gro = [r.latency_gross_ms for r in reports if r.latency_gross_ms is not None]
    leads = [r.lead_ms for r in reports if r.lead_ms is not None]
    mean_inc, sd_inc = _mean_sd(inc)
    mean_gro, sd_gro = _mean_sd(gro)
    return {
        "n": len(reports),
        "n_detected_incipient": len(inc),
        "n_detected_gross": len(gro),
        "mean_latency_incipient_ms": mean_inc,
        "sd_latency_incipient_ms": sd_inc,
        "mean_latency_gross_ms": mean_gro,
        "sd_latency_gross_ms": sd_gro,
        "min_lead_ms": min(leads) if leads else None,
    }


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def write_trial_report(report: DetectionReport, path) -> None:
    """Per-window CSV: index, end time, raw and smoothed counts, decision."""
    try:
        with open(path, "w", newline="") as f:
            out = csv.writer(f)
            out.writerow(
                ["window_index", "t_end_us", "raw0", "raw1", "raw2",
                 "smooth0", "smooth1", "smooth2", "decision"]
            )
            for k, (raw, sm, d) in enumerate(
                zip(report.raw_counts, report.smoothed, report.decisions)
            ):
                out.writerow(
                    [k, (k + 1) * WINDOW_US]
                    + [int(v) for v in raw]
                    + [_fmt(float(v)) for v in sm]
                    + [str(d)]
                )
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


def write_summary(groups: Sequence[tuple], path) -> None:
    """Suite CSV: one row of latency_stats per (condition, reports) group."""
    try:
        with open(path, "w", newline="") as f:
            out = csv.writer(f)
            out.writerow(
                ["condition", "n", "n_detected_incipient", "n_detected_gross",
                 "mean_latency_incipient_ms", "sd_latency_incipient_ms",
                 "mean_latency_gross_ms", "sd_latency_gross_ms", "min_lead_ms"]
            )
            for condition, reports in groups:
                stats = latency_stats(reports)
                out.writerow(
                    [condition]
                    + [_fmt(stats[key]) for key in (
                        "n", "n_detected_incipient", "n_detected_gross",
                        "mean_latency_incipient_ms", "sd_latency_incipient_ms",
                        "mean_latency_gross_ms", "sd_latency_gross_ms", "min_lead_ms",
                    )]
                )
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e
