"""Simulate tactile event streams with ground-truth slip onsets.

A flat plate presses into a skin of papillae arranged in concentric
rings of decreasing height, then slides sideways.  Outer rings carry
less normal force, so they break away first; the ground-truth labels
mark incipient slip (first papilla slides) and gross slip (the center
papilla slides).  The script prints the onset times, the event-rate
shape around them, and round-trips the stream through the .ntev file
format.
"""

import os

import numpy as np

from slipnet import (
    GravityScenario,
    KinematicScenario,
    build_geometry,
    load_events,
    run_scenario,
    save_events,
    validate_stream,
)

OUT_DIR = os.path.join(os.path.dirname(__file__), "output")


def rate_profile(stream, onset_us, half_span_ms=300, bin_ms=100):
    """Event counts in fixed bins around an onset, as (offset_ms, count)."""
    edges = np.arange(-half_span_ms, half_span_ms + bin_ms, bin_ms)
    counts = np.histogram(stream.t_us, bins=onset_us + edges * 1000)[0]
    return list(zip(edges[:-1], counts))


def main():
    os.makedirs(OUT_DIR, exist_ok=True)
    layout = build_geometry()
    print(f"skin layout: {layout.n_papillae} papillae in rings", end=" ")
    print(np.bincount(layout.ring).tolist(), "with heights", end=" ")
    print(sorted({round(h, 1) for h in layout.height_mm}, reverse=True), "mm")

    scenario = KinematicScenario(depth_mm=3.0, speed_mm_s=1.0, direction_deg=0.0, seed=42)
    trial = run_scenario(scenario)
    stream = trial.stream
    print(f"\nkinematic trial: depth {scenario.depth_mm} mm, "
          f"speed {scenario.speed_mm_s} mm/s, seed {scenario.seed}")
    print(f"  {stream.t_us.size} events over {stream.t_us[-1] / 1e6:.2f} s")
    print(f"  incipient onset {trial.incipient_onset_us / 1e6:.3f} s, "
          f"gross onset {trial.gross_onset_us / 1e6:.3f} s")
    assert validate_stream(stream) == []

    print("  event rate around incipient onset (events per 100 ms):")
    for offset, count in rate_profile(stream, trial.incipient_onset_us):
        bar = "#" * (count // 40)
        print(f"    {offset:+5d} ms  {count:5d} {bar}")

    path = os.path.join(OUT_DIR, "kinematic.ntev")
    save_events(trial, path)
    again = load_events(path)
    assert again.stream == stream and again.incipient_onset_us == trial.incipient_onset_us
    print(f"  saved and re-read {path} ({os.path.getsize(path)} bytes)")

    gravity = GravityScenario(mass_kg=0.205, retraction_mm_s=0.5, seed=7)
    held = run_scenario(gravity)
    print(f"\ngravity trial: plate {gravity.mass_kg} kg retracted at "
          f"{gravity.retraction_mm_s} mm/s")
    print(f"  {held.stream.t_us.size} events; incipient at "
          f"{held.incipient_onset_us / 1e6:.3f} s, gross at "
          f"{held.gross_onset_us / 1e6:.3f} s "
          f"(lead {(held.gross_onset_us - held.incipient_onset_us) / 1000:.0f} ms)")
    save_events(held, os.path.join(OUT_DIR, "gravity.ntev"))
    print(f"  saved {os.path.join(OUT_DIR, 'gravity.ntev')}")


if __name__ == "__main__":
    main()
