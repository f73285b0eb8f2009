"""Online slip detection with temporal smoothing and latency scoring.

The detector slides a 30 ms window over a trial, classifies each window
by output spike counts, smooths the counts over the last 4 windows, and
only commits to a class when it beats the runner-up by a margin of 2.
Detected onsets are compared against the simulator's ground truth; the
lead time (true gross onset minus detected incipient onset) is the
warning margin a gripper controller would get.  Uses the weights from
03_train_network.py; that quick 32-trial network can confuse the
retraction phase with gross slip early in a trial (ignored by the
incipient-first onset rule), and training on the full grid via the
slipnet CLI sharpens the timeline considerably.
"""

import importlib
import os

from slipnet import (
    Decision,
    GravityScenario,
    SmootherConfig,
    detect_trial,
    load_weights,
    run_scenario,
)
from slipnet.detect import decision_flips

OUT_DIR = os.path.join(os.path.dirname(__file__), "output")
WEIGHTS_PATH = os.path.join(OUT_DIR, "network.snnw")


def timeline(decisions, every=10):
    """Compress a decision sequence to one glyph per window group."""
    glyph = {
        Decision.UNDECIDED: ".",
        Decision.NO_SLIP: "n",
        Decision.INCIPIENT: "i",
        Decision.GROSS: "G",
    }
    marks = [glyph[d] for d in decisions]
    return "".join(marks[k] for k in range(0, len(marks), every))


def main():
    if not os.path.exists(WEIGHTS_PATH):
        importlib.import_module("03_train_network").main()
    spec, weights = load_weights(WEIGHTS_PATH)

    for fraction, side in ((0.0, "left"), (0.5, "right")):
        scenario = GravityScenario(
            mass_kg=0.205,
            retraction_mm_s=0.5,
            seed=123,
            disturbance_fraction=fraction,
            side=side,
        )
        trial = run_scenario(scenario)
        name = (
            "plain retraction"
            if fraction == 0.0
            else f"retraction + {fraction:g}x lateral disturbance ({side})"
        )
        print(f"\n{name}: truth incipient {trial.incipient_onset_us / 1e3:.0f} ms, "
              f"gross {trial.gross_onset_us / 1e3:.0f} ms")

        report = detect_trial(trial, spec, weights)
        print(f"  decisions (1 glyph per 300 ms; n=no slip, i=incipient, "
              f"G=gross, .=undecided):")
        print(f"    {timeline(report.decisions)}")
        print(f"  detected incipient {report.detected_incipient_us / 1e3:.0f} ms "
              f"(latency {report.latency_incipient_ms:+.0f} ms), "
              f"gross {report.detected_gross_us / 1e3:.0f} ms "
              f"(latency {report.latency_gross_ms:+.0f} ms)")
        print(f"  lead time before true gross slip: {report.lead_ms:.0f} ms")

        raw = detect_trial(trial, spec, weights, SmootherConfig(window_len=1, margin=0.0))
        print(f"  smoothing value: {decision_flips(report.decisions)} decision flips "
              f"vs {decision_flips(raw.decisions)} without smoothing")


if __name__ == "__main__":
    main()
