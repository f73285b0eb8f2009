"""Shared reference implementations used by the network test suites.

The scalar forward pass below is written with explicit Python loops,
one neuron and one tap at a time, so it shares no code path with the
vectorized implementation it checks.  With dyadic-rational weights
(integers / 256) and small integer inputs every partial sum is exactly
representable in float64, so the two implementations must agree bit
for bit no matter how either orders its additions.
"""

import numpy as np

from slipnet import snn


def dyadic_weights(spec, rng):
    """Random weights n/256 with n in [-128, 128]; sums stay exact."""
    return [
        rng.integers(-128, 129, size=shape).astype(np.float64) / 256.0
        for shape in spec.weight_shapes()
    ]


def random_small_spec(rng, max_convs=2):
    """A random conv/dense stack small enough for the scalar oracle."""
    t = int(rng.integers(2, 11))
    c = int(rng.integers(1, 3))
    h = int(rng.integers(3, 6))
    w = int(rng.integers(3, 6))
    layers = []
    for _ in range(int(rng.integers(0, max_convs + 1))):
        layers.append(
            snn.ConvSpec(
                int(rng.integers(1, 9)),
                kernel=3,
                stride=int(rng.integers(1, 3)),
                padding=1,
            )
        )
    layers.append(snn.DenseSpec(int(rng.integers(2, 5))))
    return snn.NetworkSpec(input_shape=(t, c, h, w), layers=tuple(layers))


def scalar_forward(spec, weights, x):
    """Loop-based reference forward; returns (counts, output spike train)."""
    threshold = spec.iaf.threshold
    reset = spec.iaf.reset
    feats = spec.feature_shapes()
    acts = np.asarray(x, np.float64)
    n_batch, n_steps = acts.shape[0], acts.shape[1]
    spikes = None
    for layer, w, in_shape, out_shape in zip(spec.layers, weights, feats[:-1], feats[1:]):
        if isinstance(layer, snn.ConvSpec):
            c_in, h_in, w_in = in_shape
            o_ch, o_h, o_w = out_shape
            k, s, p = layer.kernel, layer.stride, layer.padding
            z = np.zeros((n_batch, n_steps, o_ch, o_h, o_w))
            for b in range(n_batch):
                for t in range(n_steps):
                    for oc in range(o_ch):
                        for i in range(o_h):
                            for j in range(o_w):
                                acc = 0.0
                                for ci in range(c_in):
                                    for ki in range(k):
                                        for kj in range(k):
                                            yy = i * s + ki - p
                                            xx = j * s + kj - p
                                            if 0 <= yy < h_in and 0 <= xx < w_in:
                                                acc += float(w[oc, ci, ki, kj]) * float(
                                                    acts[b, t, ci, yy, xx]
                                                )
                                z[b, t, oc, i, j] = acc
            drive = z.reshape(n_batch, n_steps, -1)
        else:
            if len(in_shape) == 3:
                c_in, h_in, w_in = in_shape
                flat = np.zeros((n_batch, n_steps, h_in * w_in * c_in))
                idx = 0
                # height, width, channel order: the layout contract for
                # dense layers that follow a convolution
                for i in range(h_in):
                    for j in range(w_in):
                        for ci in range(c_in):
                            flat[:, :, idx] = acts[:, :, ci, i, j]
                            idx += 1
            else:
                flat = acts
            o_f = layer.out_features
            z = np.zeros((n_batch, n_steps, o_f))
            for b in range(n_batch):
                for t in range(n_steps):
                    for oc in range(o_f):
                        acc = 0.0
                        for fi in range(flat.shape[2]):
                            acc += float(w[oc, fi]) * float(flat[b, t, fi])
                        z[b, t, oc] = acc
            drive = z
        n_feat = drive.shape[2]
        spikes = np.zeros((n_batch, n_steps, n_feat))
        for b in range(n_batch):
            for fi in range(n_feat):
                v = 0.0
                for t in range(n_steps):
                    v += drive[b, t, fi]
                    if v >= threshold:
                        spikes[b, t, fi] = 1.0
                        v = reset
        acts = spikes.reshape((n_batch, n_steps) + tuple(out_shape))
    return spikes.sum(axis=1), spikes
