"""Integrate-and-fire spiking convolutional network, trained from scratch.

Neurons integrate their weighted input each 1 ms step with no leak and
no bias: v' = v + sum(w*z).  A neuron fires when v' reaches threshold
and hard-resets to the reset value, discarding any residual.  Membrane
state is zeroed between samples.  The slip classifier stacks

    conv 1->8   3x3 stride 1 pad 1   IAF      (30, 8, 20, 20)
    conv 8->16  3x3 stride 2 pad 1   IAF      (30, 16, 10, 10)
    dense 1600->128                  IAF
    dense 128->3                     IAF

over (30, 1, 20, 20) spike count volumes; a sample's class is the
output neuron with the highest spike count over the 30 steps, ties
resolved to the lowest class index.

Training is backpropagation through time with a surrogate spike
derivative: the Heaviside's derivative is replaced by a boxcar of
width 1 around the threshold, and the reset is treated as transparent
(gradients flow through the membrane as if no reset happened), which
turns the within-layer recurrence into a reversed cumulative sum over
time.  The loss is softmax cross-entropy on output spike counts,
optimized with minibatch SGD plus momentum and global-norm gradient
clipping.  A parallel "soft" mode replaces spikes with a sigmoid and
disables the reset, giving a fully differentiable network used to
verify the gradient machinery against finite differences.

All heavy math runs in the dtype of the weight tensors: float32 for
training throughput, float64 wherever bit-level agreement with a
reference implementation matters.  Feature maps are laid out
channels-last internally so each convolution is a single matrix
product over gathered patches; dense layers therefore see flattened
(height, width, channel) vectors.

Weight files ("SNNW", little-endian): magic, u16 version=1, f4
threshold, f4 reset, four u16 input dims, u16 layer count, 16-byte
architecture digest, per-layer shape headers (u8 kind: 1 conv with
five u16 fields out/in/kernel/stride/pad, 2 dense with two u32 fields
out/in), then every weight tensor as f4 in layer order, C order.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .events import IoFailure, MalformedHeader, SlipnetError, VersionMismatch

SURROGATE_WIDTH = 1.0
SOFT_SLOPE = 4.0 / SURROGATE_WIDTH


class ShapeMismatch(SlipnetError):
    """Input or weight shapes disagree with the network spec."""


class NonFiniteInput(SlipnetError):
    """Input volumes contain NaN or infinity."""


class EmptySplit(SlipnetError):
    """A dataset split needed for training or evaluation is empty."""


class DivergedLoss(SlipnetError):
    """Training loss became non-finite."""


@dataclass(frozen=True)
class IafParams:
    threshold: float = 1.0
    reset: float = 0.0


@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    kernel: int = 3
    stride: int = 1
    padding: int = 1


@dataclass(frozen=True)
class DenseSpec:
    out_features: int


@dataclass(frozen=True)
class NetworkSpec:
    """Layer stack over a fixed (steps, channels, height, width) input."""

    input_shape: tuple = (30, 1, 20, 20)
    layers: tuple = ()
    iaf: IafParams = IafParams()

    def feature_shapes(self) -> list:
        """Shape after each layer, starting from the input image shape."""
        shapes = [self.input_shape[1:]]
        for layer in self.layers:
            prev = shapes[-1]
            if isinstance(layer, ConvSpec):
                if len(prev) != 3:
                    raise ShapeMismatch("conv layer after flattened features")
                c, h, w = prev
                oh = (h + 2 * layer.padding - layer.kernel) // layer.stride + 1
                ow = (w + 2 * layer.padding - layer.kernel) // layer.stride + 1
                if oh < 1 or ow < 1:
                    raise ShapeMismatch(f"conv shrinks {prev} below 1x1")
                shapes.append((layer.out_channels, oh, ow))
            elif isinstance(layer, DenseSpec):
                shapes.append((layer.out_features,))
            else:
                raise ShapeMismatch(f"unknown layer {layer!r}")
        return shapes

    def weight_shapes(self) -> list:
        shapes = []
        feats = self.feature_shapes()
        for layer, prev in zip(self.layers, feats[:-1]):
            if isinstance(layer, ConvSpec):
                shapes.append((layer.out_channels, prev[0], layer.kernel, layer.kernel))
            else:
                shapes.append((layer.out_features, int(np.prod(prev))))
        return shapes

    @property
    def n_classes(self) -> int:
        final = self.feature_shapes()[-1]
        if len(final) != 1:
            raise ShapeMismatch("network must end in a dense layer")
        return final[0]

    def digest(self) -> bytes:
        """Shape fingerprint; IAF params are rounded to float32 so the
        digest survives a save/load cycle through 32-bit storage."""
        iaf = IafParams(
            float(np.float32(self.iaf.threshold)), float(np.float32(self.iaf.reset))
        )
        text = f"{tuple(self.input_shape)}|{self.layers}|{iaf}"
        return hashlib.blake2b(text.encode(), digest_size=16).digest()


def slip_network_spec() -> NetworkSpec:
    """The slip-state classifier architecture."""
    return NetworkSpec(
        input_shape=(30, 1, 20, 20),
        layers=(
            ConvSpec(8, kernel=3, stride=1, padding=1),
            ConvSpec(16, kernel=3, stride=2, padding=1),
            DenseSpec(128),
            DenseSpec(3),
        ),
    )


def init_weights(spec: NetworkSpec, seed: int) -> list:
    """Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)) per layer."""
    rng = np.random.default_rng(seed)
    weights = []
    for layer, shape in zip(spec.layers, spec.weight_shapes()):
        if isinstance(layer, ConvSpec):
            fan_in = shape[1] * layer.kernel * layer.kernel
            fan_out = shape[0] * layer.kernel * layer.kernel
        else:
            fan_in = shape[1]
            fan_out = shape[0]
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=shape))
    return weights


def iaf_step(v: np.ndarray, drive: np.ndarray, params: IafParams = IafParams()):
    """One integrate-and-fire update; returns (new membrane, spikes)."""
    v_pre = v + drive
    spikes = v_pre >= params.threshold
    return np.where(spikes, params.reset, v_pre), spikes


def surrogate_grad(v_minus_th: np.ndarray, width: float = SURROGATE_WIDTH) -> np.ndarray:
    """Boxcar spike derivative: 1/width inside |v - th| <= width/2."""
    v = np.asarray(v_minus_th)
    dt = v.dtype if np.issubdtype(v.dtype, np.floating) else np.dtype(np.float64)
    return np.where(np.abs(v) <= width / 2, dt.type(1.0 / width), dt.type(0.0))


def classify(counts: np.ndarray) -> np.ndarray:
    """Class = argmax of output spike counts; ties go to the lowest index."""
    counts = np.asarray(counts)
    if counts.ndim == 1:
        return np.argmax(counts)
    return np.argmax(counts, axis=-1)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _patch_matrix(x: np.ndarray, kernel: int, stride: int, padding: int):
    """(N, H, W, C) images -> (N*OH*OW, kernel*kernel*C) gathered patches."""
    n, h, w, c = x.shape
    oh = (h + 2 * padding - kernel) // stride + 1
    ow = (w + 2 * padding - kernel) // stride + 1
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    cols = np.empty((n, oh, ow, kernel, kernel, c), x.dtype)
    for ki in range(kernel):
        for kj in range(kernel):
            cols[:, :, :, ki, kj, :] = xp[
                :, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride, :
            ]
    return cols.reshape(n * oh * ow, kernel * kernel * c), (oh, ow)


def _scatter_patches(g_cols: np.ndarray, img_shape, kernel: int, stride: int, padding: int):
    """Adjoint of _patch_matrix: accumulate patch gradients onto images."""
    n, h, w, c = img_shape
    oh = (h + 2 * padding - kernel) // stride + 1
    ow = (w + 2 * padding - kernel) // stride + 1
    g6 = g_cols.reshape(n, oh, ow, kernel, kernel, c)
    gxp = np.zeros((n, h + 2 * padding, w + 2 * padding, c), g_cols.dtype)
    for ki in range(kernel):
        for kj in range(kernel):
            gxp[:, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride, :] += g6[
                :, :, :, ki, kj, :
            ]
    if padding:
        return gxp[:, padding:-padding, padding:-padding, :]
    return gxp


def _conv_weight_matrix(w: np.ndarray) -> np.ndarray:
    """(O, C, KH, KW) filters -> (KH*KW*C, O) matrix matching _patch_matrix."""
    return np.ascontiguousarray(w.transpose(2, 3, 1, 0)).reshape(-1, w.shape[0])


def _iaf_sequence(z: np.ndarray, params: IafParams, soft: bool, record: bool):
    """Run the IAF recurrence over (B, T, F) drive; returns spike trains.

    Hard mode: binary spikes with reset.  Soft mode: sigmoid pseudo
    spikes, no reset.  v_pre per step is kept when record is set.
    """
    b, t, f = z.shape
    v = np.zeros((b, f), z.dtype)
    spikes = np.empty((b, t, f), z.dtype)
    v_pre = np.empty((b, t, f), z.dtype) if record else None
    threshold = z.dtype.type(params.threshold)
    reset = z.dtype.type(params.reset)
    for step in range(t):
        v = v + z[:, step]
        if record:
            v_pre[:, step] = v
        if soft:
            spikes[:, step] = _sigmoid(z.dtype.type(SOFT_SLOPE) * (v - threshold))
        else:
            fired = v >= threshold
            spikes[:, step] = fired
            v = np.where(fired, reset, v)
    return spikes, v_pre


def _reverse_cumsum(a: np.ndarray, axis: int) -> np.ndarray:
    return np.flip(np.cumsum(np.flip(a, axis), axis=axis), axis)


@dataclass
class ForwardResult:
    counts: np.ndarray  # (B, n_classes) output spike counts
    spikes: np.ndarray  # (B, T, n_classes) output spike train
    caches: Optional[list] = None


def _check_input(spec: NetworkSpec, x: np.ndarray, dtype) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 5 or x.shape[1:] != tuple(spec.input_shape):
        raise ShapeMismatch(
            f"input shape {x.shape[1:]}, spec wants {tuple(spec.input_shape)}"
        )
    if not np.issubdtype(x.dtype, np.integer) and not np.isfinite(x).all():
        raise NonFiniteInput("input volumes contain non-finite values")
    return x.astype(dtype, copy=False)


def _check_weights(spec: NetworkSpec, weights: Sequence[np.ndarray]):
    expect = spec.weight_shapes()
    if len(weights) != len(expect):
        raise ShapeMismatch(f"{len(weights)} weight tensors, spec wants {len(expect)}")
    for got, want in zip(weights, expect):
        if got.shape != tuple(want):
            raise ShapeMismatch(f"weight shape {got.shape}, spec wants {want}")
        if not np.isfinite(got).all():
            raise NonFiniteInput("weights contain non-finite values")


def forward(
    spec: NetworkSpec,
    weights: Sequence[np.ndarray],
    x: np.ndarray,
    record: bool = False,
    soft: bool = False,
) -> ForwardResult:
    """Run a batch (B, T, C, H, W) through the network.

    Compute dtype follows the weights.  With record=True per-layer
    caches (patch/flat inputs and pre-reset membrane traces) are kept
    for backpropagation.
    """
    _check_weights(spec, weights)
    dtype = np.result_type(*(w.dtype for w in weights))
    x = _check_input(spec, x, dtype)
    b, t = x.shape[0], x.shape[1]
    feats = spec.feature_shapes()
    # channels-last activations, flattened to (B, T, features)
    acts = np.ascontiguousarray(x.transpose(0, 1, 3, 4, 2)).reshape(b, t, -1)
    caches = [] if record else None
    for layer, w, in_shape in zip(spec.layers, weights, feats[:-1]):
        if isinstance(layer, ConvSpec):
            c, h, wd = in_shape
            imgs = acts.reshape(b * t, h, wd, c)
            cols, _ = _patch_matrix(imgs, layer.kernel, layer.stride, layer.padding)
            z = (cols @ _conv_weight_matrix(w).astype(dtype, copy=False)).reshape(b, t, -1)
            layer_input = cols
        else:
            flat = acts.reshape(b * t, -1)
            z = (flat @ w.T.astype(dtype, copy=False)).reshape(b, t, -1)
            layer_input = flat
        spikes, v_pre = _iaf_sequence(z, spec.iaf, soft, record)
        if record:
            caches.append({"input": layer_input, "v_pre": v_pre, "in_shape": in_shape})
        acts = spikes
    return ForwardResult(acts.sum(axis=1), acts, caches)


def spike_counts(
    spec: NetworkSpec,
    weights: Sequence[np.ndarray],
    x: np.ndarray,
    batch_size: int = 256,
) -> np.ndarray:
    """Output spike counts for any number of samples, run in batches."""
    x = np.asarray(x)
    if len(x) == 0:
        return np.zeros((0, spec.n_classes))
    parts = []
    for start in range(0, len(x), batch_size):
        parts.append(forward(spec, weights, x[start : start + batch_size]).counts)
    return np.concatenate(parts)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grads(
    spec: NetworkSpec,
    weights: Sequence[np.ndarray],
    x: np.ndarray,
    y: np.ndarray,
    soft: bool = False,
    class_weights=None,
):
    """Mean cross-entropy on spike counts and gradients for every layer.

    With class_weights (one positive factor per class) each sample's
    loss term is scaled by its true class's factor; the mean is over
    the total weight, so uniform factors leave the loss unchanged.

    Backpropagation through time runs layer by layer: with a transparent
    reset the membrane recurrence v_pre(t) = v_pre(t-1) + z(t) makes the
    drive gradient a reversed cumulative sum of the per-step spike
    gradients times the spike derivative (boxcar in hard mode, sigmoid
    slope in soft mode).
    """
    res = forward(spec, weights, x, record=True, soft=soft)
    dtype = res.spikes.dtype
    y = np.asarray(y, np.int64)
    b, t = len(y), res.spikes.shape[1]
    probs = _softmax(res.counts.astype(np.float64))
    log_probs = -np.log(np.maximum(probs[np.arange(b), y], 1e-300))
    if class_weights is None:
        sample_w = np.ones(b)
    else:
        sample_w = np.asarray(class_weights, np.float64)[y]
    total_w = float(sample_w.sum())
    loss = float((log_probs * sample_w).sum() / total_w)

    g_counts = probs
    g_counts[np.arange(b), y] -= 1.0
    g_counts *= sample_w[:, None]
    g_counts /= total_w
    # counts are a plain sum over steps, so every step gets the same pull
    g_spikes = np.broadcast_to(g_counts[:, None, :].astype(dtype), (b, t, g_counts.shape[1]))

    grads: list = [None] * len(weights)
    for idx in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[idx]
        cache = res.caches[idx]
        v_pre = cache["v_pre"]
        if soft:
            s = _sigmoid(dtype.type(SOFT_SLOPE) * (v_pre - dtype.type(spec.iaf.threshold)))
            dsdv = dtype.type(SOFT_SLOPE) * s * (1 - s)
        else:
            dsdv = surrogate_grad(v_pre - dtype.type(spec.iaf.threshold)).astype(dtype, copy=False)
        g_z = _reverse_cumsum(g_spikes * dsdv, axis=1)
        if isinstance(layer, ConvSpec):
            g2d = g_z.reshape(-1, layer.out_channels)
            cols = cache["input"]
            g_wmat = cols.T @ g2d  # (k*k*c, out)
            k, c = layer.kernel, cache["in_shape"][0]
            grads[idx] = np.ascontiguousarray(
                g_wmat.reshape(k, k, c, layer.out_channels).transpose(3, 2, 0, 1)
            ).astype(np.float64)
            if idx > 0:
                g_cols = g2d @ _conv_weight_matrix(weights[idx]).astype(dtype, copy=False).T
                ch, hh, ww = cache["in_shape"]
                g_imgs = _scatter_patches(
                    g_cols, (b * t, hh, ww, ch), layer.kernel, layer.stride, layer.padding
                )
                g_spikes = g_imgs.reshape(b, t, -1)
        else:
            g2d = g_z.reshape(b * t, -1)
            grads[idx] = (g2d.T @ cache["input"]).astype(np.float64)
            if idx > 0:
                g_spikes = (g2d @ weights[idx].astype(dtype, copy=False)).reshape(b, t, -1)
    return loss, grads, res


def calibrate_weights(
    spec: NetworkSpec,
    weights: Sequence[np.ndarray],
    x: np.ndarray,
    target_rms=2.0,
) -> list:
    """Rescale each layer so spikes actually propagate on real data.

    Event volumes are sparse enough that freshly initialized layers
    rarely reach threshold, which silences everything downstream and
    starves the boxcar surrogate of gradient.  This walks the layers in
    order and scales each weight tensor so the RMS over neurons of the
    window-accumulated drive equals the layer's target (a scalar target
    applies to every layer), then feeds the resulting spikes forward.
    Returns the applied scale factors; weights are modified in place.
    Layers whose drive is identically zero are left alone.
    """
    _check_weights(spec, weights)
    targets = np.broadcast_to(np.asarray(target_rms, float), (len(weights),))
    dtype = np.result_type(*(w.dtype for w in weights))
    x = _check_input(spec, x, dtype)
    b, t = x.shape[0], x.shape[1]
    feats = spec.feature_shapes()
    acts = np.ascontiguousarray(x.transpose(0, 1, 3, 4, 2)).reshape(b, t, -1)
    scales = []
    for layer, w, in_shape, target in zip(spec.layers, weights, feats[:-1], targets):
        if isinstance(layer, ConvSpec):
            c, h, wd = in_shape
            cols, _ = _patch_matrix(
                acts.reshape(b * t, h, wd, c), layer.kernel, layer.stride, layer.padding
            )
            z = (cols @ _conv_weight_matrix(w).astype(dtype, copy=False)).reshape(b, t, -1)
        else:
            z = (acts.reshape(b * t, -1) @ w.T.astype(dtype, copy=False)).reshape(b, t, -1)
        accumulated = z.sum(axis=1)
        rms = float(np.sqrt(np.mean(accumulated.astype(np.float64) ** 2)))
        scale = float(target) / rms if rms > 0 else 1.0
        w *= w.dtype.type(scale)
        scales.append(scale)
        z *= z.dtype.type(scale)
        acts, _ = _iaf_sequence(z, spec.iaf, soft=False, record=False)
    return scales


def clip_gradients(grads: Sequence[np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place so their global L2 norm <= max_norm."""
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 4
    grad_clip: float = 10.0  # global L2 norm cap; <= 0 disables
    # pre-training drive calibration: "auto" ramps the per-layer target
    # from 3 at the input to 6 at the output (deeper layers need more
    # drive to keep sparse inputs spiking); a scalar or per-layer tuple
    # overrides, None disables
    calibration_rms: "float | tuple | str | None" = "auto"
    calibration_samples: int = 256
    balance_classes: bool = True  # weight the loss by inverse class frequency
    seed: int = 0
    dtype: str = "float32"  # training compute precision


@dataclass
class TrainResult:
    weights: list
    history: list = field(default_factory=list)  # per-epoch dicts
    best_epoch: int = -1
    best_val_accuracy: float = 0.0


def evaluate(
    spec: NetworkSpec,
    weights: Sequence[np.ndarray],
    x: np.ndarray,
    y: np.ndarray,
    batch_size: int = 256,
) -> dict:
    """Accuracy, per-class precision/recall, and the confusion matrix."""
    y = np.asarray(y, np.int64)
    if len(y) == 0:
        raise EmptySplit("cannot evaluate an empty split")
    preds = classify(spike_counts(spec, weights, x, batch_size))
    k = spec.n_classes
    confusion = np.zeros((k, k), np.int64)  # rows truth, cols prediction
    np.add.at(confusion, (y, preds), 1)
    accuracy = float(np.trace(confusion) / len(y))
    truth_totals = confusion.sum(axis=1)
    pred_totals = confusion.sum(axis=0)
    recall = np.divide(
        np.diag(confusion), truth_totals, out=np.zeros(k), where=truth_totals > 0
    )
    precision = np.divide(
        np.diag(confusion), pred_totals, out=np.zeros(k), where=pred_totals > 0
    )
    return {
        "accuracy": accuracy,
        "precision": precision,
        "recall": recall,
        "confusion": confusion,
    }


def train(
    spec: NetworkSpec,
    train_x: np.ndarray,
    train_y: np.ndarray,
    val_x: np.ndarray,
    val_y: np.ndarray,
    hyper: Hyperparams = Hyperparams(),
    initial_weights: Optional[list] = None,
    log=None,
) -> TrainResult:
    """Minibatch SGD with momentum; keeps the best-validation weights.

    Samples are reshuffled every epoch.  After each epoch the validation
    accuracy is measured and the weights with the highest value (earliest
    epoch on ties) are kept.  Weights are returned as float64.
    """
    if len(train_y) == 0 or len(val_y) == 0:
        raise EmptySplit("training requires non-empty train and val splits")
    dtype = np.dtype(hyper.dtype)
    weights = (
        [w.astype(dtype) for w in initial_weights]
        if initial_weights is not None
        else [w.astype(dtype) for w in init_weights(spec, hyper.seed)]
    )
    _check_weights(spec, weights)
    targets = hyper.calibration_rms
    if isinstance(targets, str):
        if targets != "auto":
            raise ValueError(f"unknown calibration_rms {targets!r}")
        n = len(weights)
        targets = tuple(3.0 + 3.0 * i / max(n - 1, 1) for i in range(n))
    if targets is not None and initial_weights is None:
        calibrate_weights(spec, weights, train_x[: hyper.calibration_samples], targets)
    velocity = [np.zeros_like(w) for w in weights]
    rng = np.random.default_rng(hyper.seed)
    result = TrainResult(weights=[w.astype(np.float64) for w in weights])
    class_weights = None
    if hyper.balance_classes:
        freq = np.bincount(np.asarray(train_y, np.int64), minlength=spec.n_classes)
        inv = np.where(freq > 0, 1.0 / np.maximum(freq, 1), 0.0)
        class_weights = inv * (freq > 0).sum() / inv.sum()  # mean 1 over present classes

    for epoch in range(hyper.epochs):
        order = rng.permutation(len(train_y))
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), hyper.batch_size):
            batch = order[start : start + hyper.batch_size]
            loss, grads, _ = loss_and_grads(
                spec, weights, train_x[batch], train_y[batch], class_weights=class_weights
            )
            if not np.isfinite(loss):
                raise DivergedLoss(f"loss {loss} at epoch {epoch}")
            clip_gradients(grads, hyper.grad_clip)
            for w, v, g in zip(weights, velocity, grads):
                v *= dtype.type(hyper.momentum)
                v -= dtype.type(hyper.learning_rate) * g.astype(dtype)
                w += v
            epoch_loss += loss
            n_batches += 1
        val_acc = evaluate(spec, weights, val_x, val_y)["accuracy"]
        result.history.append(
            {
                "epoch": epoch,
                "train_loss": epoch_loss / max(n_batches, 1),
                "val_accuracy": val_acc,
            }
        )
        if log is not None:
            log(result.history[-1])
        if val_acc > result.best_val_accuracy or result.best_epoch < 0:
            result.best_val_accuracy = val_acc
            result.best_epoch = epoch
            result.weights = [w.astype(np.float64) for w in weights]
    return result


SNNW_MAGIC = b"SNNW"
SNNW_VERSION = 1
_SNNW_HEAD = struct.Struct("<4sHffHHHHH16s")
_CONV_HEAD = struct.Struct("<BHHHHH")
_DENSE_HEAD = struct.Struct("<BII")


def save_weights(spec: NetworkSpec, weights: Sequence[np.ndarray], path) -> None:
    """Write weights as little-endian float32 with self-describing shapes."""
    _check_weights(spec, weights)
    parts = [
        _SNNW_HEAD.pack(
            SNNW_MAGIC,
            SNNW_VERSION,
            spec.iaf.threshold,
            spec.iaf.reset,
            *spec.input_shape,
            len(spec.layers),
            spec.digest(),
        )
    ]
    for layer, w_shape in zip(spec.layers, spec.weight_shapes()):
        if isinstance(layer, ConvSpec):
            parts.append(
                _CONV_HEAD.pack(
                    1, layer.out_channels, w_shape[1], layer.kernel, layer.stride, layer.padding
                )
            )
        else:
            parts.append(_DENSE_HEAD.pack(2, layer.out_features, w_shape[1]))
    for w in weights:
        parts.append(np.ascontiguousarray(w).astype("<f4").tobytes())
    try:
        with open(path, "wb") as f:
            f.write(b"".join(parts))
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


def load_weights(path) -> tuple:
    """Read an SNNW file back into (spec, float64 weights)."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e
    if len(raw) < _SNNW_HEAD.size:
        raise MalformedHeader("file too short for a weights header")
    magic, version, threshold, reset, t, c, h, w, n_layers, digest = _SNNW_HEAD.unpack_from(raw)
    if magic != SNNW_MAGIC:
        raise MalformedHeader(f"bad magic {magic!r}")
    if version != SNNW_VERSION:
        raise VersionMismatch(f"version {version}, expected {SNNW_VERSION}")
    offset = _SNNW_HEAD.size
    layers = []
    in_dims = []
    for _ in range(n_layers):
        if offset >= len(raw):
            raise MalformedHeader("truncated layer headers")
        kind = raw[offset]
        if kind == 1:
            if offset + _CONV_HEAD.size > len(raw):
                raise MalformedHeader("truncated layer headers")
            _, out_c, in_c, kernel, stride, padding = _CONV_HEAD.unpack_from(raw, offset)
            layers.append(ConvSpec(out_c, kernel, stride, padding))
            in_dims.append(in_c)
            offset += _CONV_HEAD.size
        elif kind == 2:
            if offset + _DENSE_HEAD.size > len(raw):
                raise MalformedHeader("truncated layer headers")
            _, out_f, in_f = _DENSE_HEAD.unpack_from(raw, offset)
            layers.append(DenseSpec(out_f))
            in_dims.append(in_f)
            offset += _DENSE_HEAD.size
        else:
            raise MalformedHeader(f"unknown layer kind {kind}")
    spec = NetworkSpec(
        input_shape=(t, c, h, w),
        layers=tuple(layers),
        iaf=IafParams(float(np.float32(threshold)), float(np.float32(reset))),
    )
    if spec.digest() != digest:
        raise MalformedHeader("architecture digest mismatch")
    expect_shapes = spec.weight_shapes()
    for stored_in, shape in zip(in_dims, expect_shapes):
        if stored_in != shape[1]:
            raise MalformedHeader(
                f"layer input dim {stored_in} disagrees with chain ({shape[1]})"
            )
    weights = []
    for shape in expect_shapes:
        n = int(np.prod(shape))
        if offset + 4 * n > len(raw):
            raise MalformedHeader("truncated weight payload")
        weights.append(
            np.frombuffer(raw, "<f4", count=n, offset=offset).astype(np.float64).reshape(shape)
        )
        offset += 4 * n
    if offset != len(raw):
        raise MalformedHeader(f"{len(raw) - offset} trailing bytes")
    return spec, weights
