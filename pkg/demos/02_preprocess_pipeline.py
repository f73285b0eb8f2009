"""From raw event stream to labeled spike-count volumes.

The sensor reports 640x480 events; the classifier wants (30, 1, 20, 20)
volumes: positive-polarity events inside the centered 400x400 crop,
pooled into 20x20-pixel cells and counted into 1 ms bins over a 30 ms
window.  Every step conserves the retained events exactly, which this
script verifies on the trial written by 01_simulate_events.py.
"""

import os

import numpy as np

from slipnet import (
    SlipState,
    bin_window,
    crop_and_filter,
    extract_samples,
    load_events,
    pool_events,
    save_volume,
    tile_windows,
)

OUT_DIR = os.path.join(os.path.dirname(__file__), "output")
TRIAL_PATH = os.path.join(OUT_DIR, "kinematic.ntev")


def main():
    if not os.path.exists(TRIAL_PATH):
        import importlib

        importlib.import_module("01_simulate_events").main()
    trial = load_events(TRIAL_PATH)
    stream = trial.stream
    print(f"raw stream: {stream.t_us.size} events at "
          f"{stream.sensor_width}x{stream.sensor_height}")

    cropped = crop_and_filter(stream)
    kept = cropped.t_us.size
    print(f"crop + polarity filter: {kept} kept "
          f"({kept / stream.t_us.size:.0%}), resolution "
          f"{cropped.sensor_width}x{cropped.sensor_height}")

    pooled = pool_events(cropped)
    assert pooled.t_us.size == kept  # pooling only coarsens coordinates
    print(f"pooling: same {pooled.t_us.size} events on a "
          f"{pooled.sensor_width}x{pooled.sensor_height} grid")

    t_start = trial.incipient_onset_us
    volume = bin_window(pooled, t_start)
    in_window = np.count_nonzero(
        (pooled.t_us >= t_start) & (pooled.t_us < t_start + 30_000)
    )
    print(f"one 30 ms window at incipient onset: volume shape "
          f"{volume.counts.shape}, sum {int(volume.counts.sum())} "
          f"(= {in_window} in-window events)")
    busiest = np.unravel_index(
        np.argmax(volume.counts.sum(axis=(0, 1))), volume.counts.shape[2:]
    )
    print(f"  busiest cell (row, col) = {tuple(int(v) for v in busiest)}")
    save_volume(volume, os.path.join(OUT_DIR, "incipient_window.spkv"))

    volumes = tile_windows(pooled, t_start_us=0, n_windows=40)
    print(f"tiling: first 40 consecutive windows stack to {volumes.shape}")

    samples = extract_samples(
        pooled, trial.incipient_onset_us, trial.gross_onset_us, seed=0
    )
    by_label = {state: 0 for state in SlipState}
    for sample in samples:
        by_label[sample.label] += 1
    print("labeled samples drawn from the three phases:")
    for state, count in by_label.items():
        print(f"  {state.name.lower():<9} {count}")


if __name__ == "__main__":
    main()
