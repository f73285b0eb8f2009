"""Train the spiking classifier on a small simulated grid.

The network is two IAF convolution layers and two IAF dense layers over
(30, 1, 20, 20) spike volumes; spikes are non-differentiable, so
training backpropagates a boxcar surrogate in place of the spike step.
To stay quick this demo uses a 32-trial corner of the kinematic grid
and a few epochs; expect accuracy well above chance but below a full
grid run.  Weights land in demos/output/network.snnw for the detection
demo.
"""

import os
import time

import numpy as np

from slipnet import (
    Hyperparams,
    KinematicScenario,
    evaluate,
    run_scenario,
    save_weights,
    slip_network_spec,
    split_trials,
    train,
)
from slipnet.preprocess import dataset_arrays

OUT_DIR = os.path.join(os.path.dirname(__file__), "output")
WEIGHTS_PATH = os.path.join(OUT_DIR, "network.snnw")


def main():
    os.makedirs(OUT_DIR, exist_ok=True)
    print("simulating 32 trials (2 depths x 2 speeds x 8 directions) ...")
    t0 = time.time()
    trials = []
    for depth in (3.0, 3.2):
        for speed in (1.0, 1.2):
            for k, direction in enumerate(np.arange(8) * 45.0):
                seed = len(trials)
                trials.append(
                    run_scenario(KinematicScenario(depth, speed, direction, seed))
                )
    print(f"  {len(trials)} trials in {time.time() - t0:.0f}s")

    split = split_trials(trials, seed=0)
    train_x, train_y = dataset_arrays(split.train)
    val_x, val_y = dataset_arrays(split.val)
    test_x, test_y = dataset_arrays(split.test)
    print(f"dataset: {len(train_y)} train / {len(val_y)} val / {len(test_y)} test "
          f"samples, class counts {np.bincount(train_y).tolist()}")

    spec = slip_network_spec()
    print(f"network: {[type(l).__name__ for l in spec.layers]} -> "
          f"{spec.n_classes} classes, "
          f"{sum(int(np.prod(s)) for s in spec.weight_shapes())} weights")

    hyper = Hyperparams(
        learning_rate=5e-3, momentum=0.9, epochs=3, batch_size=64, seed=0
    )
    t1 = time.time()
    result = train(
        spec, train_x, train_y, val_x, val_y, hyper,
        log=lambda e: print(f"  epoch {e['epoch']}: loss {e['train_loss']:.4f} "
                            f"val accuracy {e['val_accuracy']:.4f}"),
    )
    weights = result.weights
    print(f"trained {hyper.epochs} epochs in {time.time() - t1:.0f}s "
          f"(best epoch {result.best_epoch})")

    out = evaluate(spec, weights, test_x, test_y)
    print(f"test accuracy {out['accuracy']:.4f}, per-class recall "
          f"{[f'{r:.3f}' for r in out['recall']]}")
    print("confusion matrix (rows truth, cols prediction):")
    for row in out["confusion"]:
        print("  ", " ".join(f"{int(v):5d}" for v in row))

    save_weights(spec, weights, WEIGHTS_PATH)
    print(f"saved weights to {WEIGHTS_PATH}")


if __name__ == "__main__":
    main()
