"""Small numpy classifiers with hand-written backpropagation.

Two architectures are supported: a multilayer perceptron and a small
convolutional net built from 3x3, padding-1, strided convolutions followed
by a dense head.  Images are NHWC float arrays.  Every function works in the
dtype of the parameters, so float64 parameters give a float64 check path.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError

KERNEL = 3
DTYPE = np.float32


@dataclass(frozen=True)
class ConvLayer:
    channels: int
    stride: int = 1


@dataclass(frozen=True)
class ClassifierArch:
    """Architecture descriptor.

    For ``kind="mlp"`` ``hidden_sizes`` holds dense widths.  For
    ``kind="small-conv"`` it holds :class:`ConvLayer` entries and
    ``dense_sizes`` optionally adds hidden dense layers before the output.
    """

    kind: str
    input_shape: tuple
    hidden_sizes: tuple
    num_classes: int
    dense_sizes: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        if self.kind == "small-conv":
            layers = tuple(
                h if isinstance(h, ConvLayer) else ConvLayer(*h) if isinstance(h, (tuple, list))
                else ConvLayer(**h)
                for h in self.hidden_sizes
            )
        else:
            layers = tuple(int(h) for h in self.hidden_sizes)
        object.__setattr__(self, "hidden_sizes", layers)
        object.__setattr__(self, "dense_sizes", tuple(int(h) for h in self.dense_sizes))
        self._validate()

    def _validate(self):
        if self.kind not in ("mlp", "small-conv"):
            raise ConfigurationError(f"unknown architecture kind {self.kind!r}")
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ConfigurationError(f"input_shape must be (H, W, C), got {self.input_shape}")
        if self.num_classes < 2:
            raise ConfigurationError("num_classes must be >= 2")
        if not self.hidden_sizes:
            raise ConfigurationError("at least one hidden layer is required")
        if self.kind == "mlp":
            if self.dense_sizes:
                raise ConfigurationError("dense_sizes only applies to small-conv")
            if min(self.hidden_sizes) < 1:
                raise ConfigurationError("hidden sizes must be positive")
        else:
            for layer in self.hidden_sizes:
                if layer.channels < 1 or layer.stride < 1:
                    raise ConfigurationError(f"bad conv layer {layer}")
            if self.dense_sizes and min(self.dense_sizes) < 1:
                raise ConfigurationError("dense sizes must be positive")

    def layers(self):
        """Return ``[(kind, weight_shape, stride), ...]`` in forward order."""
        out = []
        h, w, c = self.input_shape
        if self.kind == "small-conv":
            for layer in self.hidden_sizes:
                out.append(("conv", (KERNEL, KERNEL, c, layer.channels), layer.stride))
                h = (h - 1) // layer.stride + 1
                w = (w - 1) // layer.stride + 1
                c = layer.channels
            widths = self.dense_sizes
        else:
            widths = self.hidden_sizes
        fan_in = h * w * c
        for width in (*widths, self.num_classes):
            out.append(("dense", (fan_in, width), 1))
            fan_in = width
        return out

    def to_dict(self):
        hidden = list(self.hidden_sizes)
        if self.kind == "small-conv":
            hidden = [[layer.channels, layer.stride] for layer in self.hidden_sizes]
        return {
            "kind": self.kind,
            "input_shape": list(self.input_shape),
            "hidden_sizes": hidden,
            "num_classes": self.num_classes,
            "dense_sizes": list(self.dense_sizes),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            kind=d["kind"],
            input_shape=tuple(d["input_shape"]),
            hidden_sizes=tuple(tuple(h) if isinstance(h, list) else h for h in d["hidden_sizes"]),
            num_classes=int(d["num_classes"]),
            dense_sizes=tuple(d.get("dense_sizes", ())),
        )


@dataclass
class ClassifierParams:
    """Per-layer weights and biases plus heavy-ball momentum buffers."""

    weights: list
    biases: list
    momentum_w: list | None = field(default=None, repr=False)
    momentum_b: list | None = field(default=None, repr=False)

    def arrays(self):
        return [*self.weights, *self.biases]

    def copy(self):
        mw = None if self.momentum_w is None else [m.copy() for m in self.momentum_w]
        mb = None if self.momentum_b is None else [m.copy() for m in self.momentum_b]
        return ClassifierParams(
            [w.copy() for w in self.weights], [b.copy() for b in self.biases], mw, mb
        )

    def astype(self, dtype):
        return ClassifierParams(
            [w.astype(dtype) for w in self.weights], [b.astype(dtype) for b in self.biases]
        )

    def num_parameters(self):
        return sum(a.size for a in self.arrays())

    def is_finite(self):
        return all(np.isfinite(a).all() for a in self.arrays())

    def equals(self, other):
        """Bitwise equality of weights and biases."""
        return len(self.weights) == len(other.weights) and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())
        )


@dataclass(frozen=True)
class SgdHyper:
    learning_rate: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 10
    batch_size: int = 64
    # random +-shift (pixels) applied to training batches; 0 disables
    augment_shift: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay must be nonnegative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be positive")
        if self.augment_shift < 0:
            raise ConfigurationError("augment_shift must be nonnegative")


def init_params(arch, seed, dtype=DTYPE):
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for kind, shape, _ in arch.layers():
        if kind == "conv":
            fan_in = shape[0] * shape[1] * shape[2]
            fan_out = shape[0] * shape[1] * shape[3]
        else:
            fan_in, fan_out = shape
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=shape).astype(dtype))
        biases.append(np.zeros(shape[-1], dtype=dtype))
    return ClassifierParams(weights, biases)


def check_params(arch, params):
    layers = arch.layers()
    if len(params.weights) != len(layers) or len(params.biases) != len(layers):
        raise ConfigurationError("parameter count does not match architecture")
    for (_, shape, _), w, b in zip(layers, params.weights, params.biases):
        if w.shape != shape or b.shape != (shape[-1],):
            raise ConfigurationError(
                f"parameter shape {w.shape}/{b.shape} does not match layer {shape}"
            )


def _as_batch(arch, batch, dtype):
    batch = np.asarray(batch)
    if batch.ndim == 3 and arch.input_shape[2] == 1 and batch.shape[1:] == arch.input_shape[:2]:
        batch = batch[..., None]
    if batch.ndim != 4 or batch.shape[1:] != arch.input_shape:
        raise ConfigurationError(
            f"batch shape {batch.shape} does not match input shape (N, {', '.join(map(str, arch.input_shape))})"
        )
    return batch.astype(dtype, copy=False)


def _im2col(x, stride):
    """(N,H,W,C) -> (N,Ho,Wo,9*C) patches for a 3x3 padding-1 convolution."""
    n, h, w, c = x.shape
    ho, wo = (h - 1) // stride + 1, (w - 1) // stride + 1
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.empty((n, ho, wo, KERNEL, KERNEL, c), dtype=x.dtype)
    for kh in range(KERNEL):
        for kw in range(KERNEL):
            cols[:, :, :, kh, kw, :] = xp[:, kh:kh + stride * ho:stride, kw:kw + stride * wo:stride, :]
    return cols.reshape(n, ho, wo, KERNEL * KERNEL * c)


def _col2im(dcols, x_shape, stride):
    n, h, w, c = x_shape
    _, ho, wo, _ = dcols.shape
    dcols = dcols.reshape(n, ho, wo, KERNEL, KERNEL, c)
    dxp = np.zeros((n, h + 2, w + 2, c), dtype=dcols.dtype)
    for kh in range(KERNEL):
        for kw in range(KERNEL):
            dxp[:, kh:kh + stride * ho:stride, kw:kw + stride * wo:stride, :] += dcols[:, :, :, kh, kw, :]
    return dxp[:, 1:-1, 1:-1, :]


def _forward(arch, params, x, keep):
    """Run the network; with ``keep`` also return what backprop needs."""
    cache = []
    layers = arch.layers()
    last = len(layers) - 1
    a = x
    for i, ((kind, shape, stride), w, b) in enumerate(zip(layers, params.weights, params.biases)):
        if kind == "conv":
            cols = _im2col(a, stride)
            z = cols @ w.reshape(-1, shape[3]) + b
            entry = (cols, a.shape)
        else:
            if a.ndim > 2:
                a = a.reshape(a.shape[0], -1)
            z = a @ w + b
            entry = (a, None)
        if i < last:
            a = np.maximum(z, 0)
            if keep:
                cache.append((*entry, z > 0))
        else:
            a = z
            if keep:
                cache.append((*entry, None))
    return a, cache


def forward(arch, params, batch):
    """Logits of shape (N, num_classes)."""
    check_params(arch, params)
    x = _as_batch(arch, batch, params.weights[0].dtype)
    logits, _ = _forward(arch, params, x, keep=False)
    return logits


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_labels(labels, n, num_classes):
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise DataError(f"expected {n} labels, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise DataError("labels must be integers")
    if n and (labels.min() < 0 or labels.max() >= num_classes):
        raise DataError(f"labels must lie in [0, {num_classes})")
    return labels


def _flush(a):
    """Zero out near-subnormal entries in place.

    A saturated softmax yields gradients around 1e-40 in float32; subnormal
    arithmetic makes the backward matmuls an order of magnitude slower.
    """
    a[np.abs(a) < np.finfo(a.dtype).tiny * 2.0 ** 20] = 0
    return a


def loss_and_grad(arch, params, batch, labels, sample_weight=None):
    """Mean softmax cross-entropy and its gradient.

    ``sample_weight`` replaces the uniform 1/N weighting; the loss is then
    ``sum(sample_weight * ce)``.
    """
    check_params(arch, params)
    dtype = params.weights[0].dtype
    x = _as_batch(arch, batch, dtype)
    n = x.shape[0]
    labels = _check_labels(labels, n, arch.num_classes)
    if sample_weight is None:
        sw = np.full(n, 1.0 / n, dtype=dtype)
    else:
        sw = np.asarray(sample_weight, dtype=dtype)

    logits, cache = _forward(arch, params, x, keep=True)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    total = e.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    ce = np.log(total[:, 0]) - shifted[rows, labels]
    loss = float(np.dot(sw, ce))

    delta = e / total
    delta[rows, labels] -= 1
    delta *= sw[:, None]
    _flush(delta)

    layers = arch.layers()
    gw = [None] * len(layers)
    gb = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        kind, shape, stride = layers[i]
        inp, in_shape, _ = cache[i]
        w = params.weights[i]
        if kind == "conv":
            d2 = delta.reshape(-1, shape[3])
            gw[i] = (inp.reshape(-1, inp.shape[-1]).T @ d2).reshape(shape)
            gb[i] = d2.sum(axis=0)
            if i == 0:
                break
            dcols = delta @ w.reshape(-1, shape[3]).T
            delta = _col2im(dcols, in_shape, stride)
        else:
            gw[i] = inp.T @ delta
            gb[i] = delta.sum(axis=0)
            if i == 0:
                break
            delta = delta @ w.T
            prev_kind = layers[i - 1][0]
            if prev_kind == "conv":
                # unflatten to the previous conv output
                delta = delta.reshape(cache[i - 1][2].shape)
        delta = _flush(delta * cache[i - 1][2])
    return max(loss, 0.0), ClassifierParams(gw, gb)


def sgd_step(params, grads, hyper):
    """Heavy-ball update ``v = m*v + g + wd*w; w -= lr*v`` applied in place."""
    if len(grads.weights) != len(params.weights) or len(grads.biases) != len(params.biases):
        raise ConfigurationError("gradient structure does not match parameters")
    if params.momentum_w is None:
        params.momentum_w = [np.zeros_like(w) for w in params.weights]
        params.momentum_b = [np.zeros_like(b) for b in params.biases]
    dtype = params.weights[0].dtype
    lr = dtype.type(hyper.learning_rate)
    mom = dtype.type(hyper.momentum)
    wd = dtype.type(hyper.weight_decay)
    for values, grad, vel in (
        (params.weights, grads.weights, params.momentum_w),
        (params.biases, grads.biases, params.momentum_b),
    ):
        for w, g, v in zip(values, grad, vel):
            if g.shape != w.shape:
                raise ConfigurationError(f"gradient shape {g.shape} != parameter shape {w.shape}")
            v *= mom
            v += g
            if wd:
                v += wd * w
            w -= lr * v
    return params


def predict_proba(arch, params, batch, chunk=2048):
    x = np.asarray(batch)
    out = []
    for start in range(0, max(len(x), 1), chunk):
        out.append(softmax(forward(arch, params, x[start:start + chunk])))
    return np.concatenate(out) if len(out) > 1 else out[0]


def predict(arch, params, batch):
    """Return ``(labels, confidences)``; ties resolve to the lowest class index."""
    probs = predict_proba(arch, params, batch)
    labels = probs.argmax(axis=1)
    return labels, probs[np.arange(len(labels)), labels]
