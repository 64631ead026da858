"""From-scratch convolutional network with exact backpropagation.

The classifier is the classic small stack for l-by-l single-channel inputs:

    Conv 5x5 (c1 filters) -> pool 2x2 -> Conv 3x3 (c2 filters) -> pool 2x2
    -> Dense(hidden) + ReLU -> Dense(num_classes) + softmax

For l=20 the spatial chain is 20 -> 16 -> 8 -> 6 -> 3.  Convolutions use the
cross-correlation convention (no kernel flip), valid padding, stride 1.
Pooling defaults to 2x2 average with stride 2 ("subsampling"); max pooling is
available via ``TrainConfig.pooling``.  Everything runs in float64.

The public layer primitives (``conv2d_forward`` and friends) take one image
(channels-first, no batch axis) exactly as documented; they also accept a
leading batch axis, which is what training uses internally.  Batch gradients
are means over the batch, so the learning rate is batch-size independent.
Optimization is classical SGD momentum: v <- mu*v + g, w <- w - lr*v.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    ArchitectureMismatchError,
    BadMagicError,
    LabelOutOfRangeError,
    NumericalInstabilityError,
    OddDimensionError,
    ShapeMismatchError,
    TruncatedError,
    VersionMismatchError,
)
from .seeding import derive_rng

MODEL_MAGIC = b"VIMG"
MODEL_FORMAT_VERSION = 1


@dataclass
class TrainConfig:
    """Hyperparameters of the training recipe; defaults follow the usual setup."""

    epochs: int = 150
    batch_size: int = 50
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    num_classes: int = 4
    c1: int = 6
    c2: int = 12
    hidden: int = 64
    pooling: str = "avg"  # "avg" or "max"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.pooling not in ("avg", "max"):
            raise ValueError(f"pooling must be 'avg' or 'max', got {self.pooling!r}")


# ---------------------------------------------------------------------------
# functional primitives
# ---------------------------------------------------------------------------

def _with_batch(x: np.ndarray, ndim: int) -> tuple[np.ndarray, bool]:
    """Promote an unbatched array to batch-of-one; report whether it was batched."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == ndim:
        return x[None], False
    if x.ndim == ndim + 1:
        return x, True
    raise ShapeMismatchError(f"expected {ndim}D or {ndim + 1}D input, got shape {x.shape}")


def conv2d_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Valid cross-correlation of (C,H,W) input with (K,C,kh,kw) filters.

    out[k, y, x] = bias[k] + sum_{c,dy,dx} input[c, y+dy, x+dx] * weights[k, c, dy, dx]

    Accepts an optional leading batch axis on the input.
    """
    x, batched = _with_batch(x, 3)
    weights = np.asarray(weights, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if weights.ndim != 4 or bias.shape != (weights.shape[0],):
        raise ShapeMismatchError(
            f"weights must be (K,C,kh,kw) with bias (K,), got {weights.shape} / {bias.shape}"
        )
    k, c, kh, kw = weights.shape
    if x.shape[1] != c:
        raise ShapeMismatchError(f"input has {x.shape[1]} channels, weights expect {c}")
    if x.shape[2] < kh or x.shape[3] < kw:
        raise ShapeMismatchError(f"input {x.shape[2:]} smaller than kernel ({kh},{kw})")

    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))
    out = np.einsum("nchwyx,kcyx->nkhw", windows, weights, optimize=True)
    out += bias[None, :, None, None]
    return out if batched else out[0]


def conv2d_backward(
    x: np.ndarray, weights: np.ndarray, upstream: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact gradients of :func:`conv2d_forward`.

    Returns (grad_input, grad_weights, grad_bias) for the given upstream
    gradient of the output.
    """
    x, batched = _with_batch(x, 3)
    upstream, up_batched = _with_batch(upstream, 3)
    if batched != up_batched or x.shape[0] != upstream.shape[0]:
        raise ShapeMismatchError("input and upstream gradient batch shapes differ")
    weights = np.asarray(weights, dtype=np.float64)
    k, c, kh, kw = weights.shape
    out_h, out_w = x.shape[2] - kh + 1, x.shape[3] - kw + 1
    if upstream.shape[1:] != (k, out_h, out_w):
        raise ShapeMismatchError(
            f"upstream shape {upstream.shape[1:]} does not match output ({k},{out_h},{out_w})"
        )

    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))
    grad_w = np.einsum("nkhw,nchwyx->kcyx", upstream, windows, optimize=True)
    grad_b = upstream.sum(axis=(0, 2, 3))

    up_padded = np.pad(upstream, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    up_windows = sliding_window_view(up_padded, (kh, kw), axis=(2, 3))
    flipped = weights[:, :, ::-1, ::-1]
    grad_x = np.einsum("nkhwyx,kcyx->nchw", up_windows, flipped, optimize=True)

    if not batched:
        grad_x = grad_x[0]
    return grad_x, grad_w, grad_b


def avgpool2_forward(x: np.ndarray) -> np.ndarray:
    """Mean over each non-overlapping 2x2 window of a (C,H,W) input."""
    x, batched = _with_batch(x, 3)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise OddDimensionError(f"pooling needs even spatial dims, got {h}x{w}")
    out = x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    return out if batched else out[0]


def avgpool2_backward(upstream: np.ndarray) -> np.ndarray:
    """Distribute each upstream value uniformly (1/4 each) over its 2x2 window."""
    upstream, batched = _with_batch(upstream, 3)
    grad = np.repeat(np.repeat(upstream, 2, axis=2), 2, axis=3) / 4.0
    return grad if batched else grad[0]


def maxpool2_forward(x: np.ndarray) -> np.ndarray:
    """Max over each non-overlapping 2x2 window."""
    x, batched = _with_batch(x, 3)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise OddDimensionError(f"pooling needs even spatial dims, got {h}x{w}")
    out = x.reshape(n, c, h // 2, 2, w // 2, 2).max(axis=(3, 5))
    return out if batched else out[0]


def maxpool2_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Route each upstream value to the first maximum of its window."""
    x, batched = _with_batch(x, 3)
    upstream, _ = _with_batch(upstream, 3)
    n, c, h, w = x.shape
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
        n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    scattered = np.zeros_like(win)
    np.put_along_axis(scattered, idx[..., None], upstream[..., None], axis=-1)
    grad = scattered.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    grad = grad.reshape(n, c, h, w)
    return grad if batched else grad[0]


def dense_forward(
    x: np.ndarray, weights: np.ndarray, bias: np.ndarray, activation: str | None = None
) -> np.ndarray:
    """Affine map w @ x + b with optional elementwise ReLU.

    ``weights`` is (out_features, in_features); input is a vector or a batch
    of row vectors.
    """
    x, batched = _with_batch(x, 1)
    weights = np.asarray(weights, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if weights.ndim != 2 or x.shape[1] != weights.shape[1] or bias.shape != (weights.shape[0],):
        raise ShapeMismatchError(
            f"dense shapes inconsistent: x {x.shape}, w {weights.shape}, b {bias.shape}"
        )
    if activation not in (None, "relu"):
        raise ValueError(f"unknown activation {activation!r}")
    out = x @ weights.T + bias
    if activation == "relu":
        out = np.maximum(out, 0.0)
    return out if batched else out[0]


def dense_backward(
    x: np.ndarray,
    weights: np.ndarray,
    bias: np.ndarray,
    upstream: np.ndarray,
    activation: str | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact gradients of :func:`dense_forward`; ReLU subgradient at 0 is 0."""
    x, batched = _with_batch(x, 1)
    upstream, _ = _with_batch(upstream, 1)
    weights = np.asarray(weights, dtype=np.float64)
    if upstream.shape != (x.shape[0], weights.shape[0]):
        raise ShapeMismatchError(
            f"upstream shape {upstream.shape} does not match ({x.shape[0]},{weights.shape[0]})"
        )
    if activation == "relu":
        pre = x @ weights.T + np.asarray(bias, dtype=np.float64)
        upstream = upstream * (pre > 0.0)
    grad_w = upstream.T @ x
    grad_b = upstream.sum(axis=0)
    grad_x = upstream @ weights
    if not batched:
        grad_x = grad_x[0]
    return grad_x, grad_w, grad_b


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-stabilized softmax along the last axis."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Negative log-likelihood of ``label`` and its gradient w.r.t. the logits.

    loss = -log softmax(logits)[label];  grad = softmax(logits) - onehot(label).
    """
    logits = np.asarray(logits, dtype=np.float64).reshape(-1)
    if not 0 <= label < logits.size:
        raise LabelOutOfRangeError(f"label {label} outside [0, {logits.size})")
    shifted = logits - logits.max()
    log_z = np.log(np.exp(shifted).sum())
    loss = float(log_z - shifted[label])
    grad = np.exp(shifted - log_z)
    grad[label] -= 1.0
    return loss, grad


def _softmax_xent_batch(logits: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample losses and logit gradients for a batch."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(logits.shape[0])
    losses = (log_z[:, 0] - shifted[rows, labels])
    grads = np.exp(shifted - log_z)
    grads[rows, labels] -= 1.0
    return losses, grads


def sgd_momentum_step(params, grads, velocities, lr: float, mu: float):
    """Classical momentum update, in place: v <- mu*v + g; w <- w - lr*v.

    Accepts single arrays or matching lists of arrays; returns the updated
    (params, velocities) for convenience.
    """
    single = isinstance(params, np.ndarray)
    p_list = [params] if single else list(params)
    g_list = [grads] if single else list(grads)
    v_list = [velocities] if single else list(velocities)
    if not len(p_list) == len(g_list) == len(v_list):
        raise ShapeMismatchError("params, grads, and velocities must align")
    for p, g, v in zip(p_list, g_list, v_list):
        if p.shape != g.shape or p.shape != v.shape:
            raise ShapeMismatchError(
                f"parameter/grad/velocity shapes differ: {p.shape}/{g.shape}/{v.shape}"
            )
        v *= mu
        v += g
        p -= lr * v
    return (params, velocities) if single else (p_list, v_list)


# ---------------------------------------------------------------------------
# layers and the model
# ---------------------------------------------------------------------------

class _Conv(object):
    def __init__(self, weights: np.ndarray, bias: np.ndarray, name: str):
        self.weights = weights
        self.bias = bias
        self.name = name
        self._x = None
        self.grad_w = None
        self.grad_b = None

    def forward(self, x):
        self._x = x
        return conv2d_forward(x, self.weights, self.bias)

    def backward(self, upstream):
        grad_x, self.grad_w, self.grad_b = conv2d_backward(self._x, self.weights, upstream)
        return grad_x

    def param_items(self):
        return [(f"{self.name}.weights", self.weights), (f"{self.name}.bias", self.bias)]

    def grad_items(self):
        return [self.grad_w, self.grad_b]


class _Pool(object):
    def __init__(self, kind: str):
        self.kind = kind
        self._x = None

    def forward(self, x):
        self._x = x
        return avgpool2_forward(x) if self.kind == "avg" else maxpool2_forward(x)

    def backward(self, upstream):
        if self.kind == "avg":
            return avgpool2_backward(upstream)
        return maxpool2_backward(self._x, upstream)

    def param_items(self):
        return []

    def grad_items(self):
        return []


class _Flatten(object):
    def __init__(self):
        self._shape = None

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, upstream):
        return upstream.reshape(self._shape)

    def param_items(self):
        return []

    def grad_items(self):
        return []


class _Dense(object):
    def __init__(self, weights: np.ndarray, bias: np.ndarray, activation, name: str):
        self.weights = weights
        self.bias = bias
        self.activation = activation
        self.name = name
        self._x = None
        self.grad_w = None
        self.grad_b = None

    def forward(self, x):
        self._x = x
        return dense_forward(x, self.weights, self.bias, self.activation)

    def backward(self, upstream):
        grad_x, self.grad_w, self.grad_b = dense_backward(
            self._x, self.weights, self.bias, upstream, self.activation)
        return grad_x

    def param_items(self):
        return [(f"{self.name}.weights", self.weights), (f"{self.name}.bias", self.bias)]

    def grad_items(self):
        return [self.grad_w, self.grad_b]


def _glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Model:
    """The layer stack plus its architecture descriptor."""

    def __init__(self, input_side: int, config: TrainConfig, params: dict | None = None):
        chain = architecture_chain(input_side)
        c1, c2, hidden, classes = config.c1, config.c2, config.hidden, config.num_classes
        self.input_side = input_side
        self.config = config
        flat = chain[-1] ** 2 * c2

        if params is None:
            rng = derive_rng(config.seed, 0)
            params = {
                "conv1.weights": _glorot_uniform(
                    rng, (c1, 1, 5, 5), fan_in=25, fan_out=c1 * 25),
                "conv1.bias": np.zeros(c1),
                "conv2.weights": _glorot_uniform(
                    rng, (c2, c1, 3, 3), fan_in=c1 * 9, fan_out=c2 * 9),
                "conv2.bias": np.zeros(c2),
                "fc1.weights": _glorot_uniform(rng, (hidden, flat), fan_in=flat, fan_out=hidden),
                "fc1.bias": np.zeros(hidden),
                "fc2.weights": _glorot_uniform(
                    rng, (classes, hidden), fan_in=hidden, fan_out=classes),
                "fc2.bias": np.zeros(classes),
            }
        self._check_param_shapes(params, c1, c2, hidden, classes, flat)

        self.layers = [
            _Conv(params["conv1.weights"], params["conv1.bias"], "conv1"),
            _Pool(config.pooling),
            _Conv(params["conv2.weights"], params["conv2.bias"], "conv2"),
            _Pool(config.pooling),
            _Flatten(),
            _Dense(params["fc1.weights"], params["fc1.bias"], "relu", "fc1"),
            _Dense(params["fc2.weights"], params["fc2.bias"], None, "fc2"),
        ]

    @staticmethod
    def _check_param_shapes(params, c1, c2, hidden, classes, flat):
        expected = {
            "conv1.weights": (c1, 1, 5, 5),
            "conv1.bias": (c1,),
            "conv2.weights": (c2, c1, 3, 3),
            "conv2.bias": (c2,),
            "fc1.weights": (hidden, flat),
            "fc1.bias": (hidden,),
            "fc2.weights": (classes, hidden),
            "fc2.bias": (classes,),
        }
        for name, shape in expected.items():
            if name not in params or params[name].shape != shape:
                raise ArchitectureMismatchError(
                    f"parameter {name} has shape "
                    f"{params[name].shape if name in params else None}, expected {shape}"
                )

    # -- inference ---------------------------------------------------------

    def _prepare(self, images) -> tuple[np.ndarray, bool]:
        """Accept a VibrationImage, an (l,l) array, or a batch (N,l,l)/(N,1,l,l)."""
        if hasattr(images, "pixels"):
            images = images.pixels
        x = np.asarray(images, dtype=np.float64)
        batched = True
        if x.ndim == 2:
            x = x[None, None]
            batched = False
        elif x.ndim == 3:
            x = x[:, None]
        elif x.ndim != 4:
            raise ShapeMismatchError(f"expected image or batch of images, got shape {x.shape}")
        if x.shape[1] != 1 or x.shape[2] != self.input_side or x.shape[3] != self.input_side:
            raise ShapeMismatchError(
                f"model expects 1x{self.input_side}x{self.input_side} images, "
                f"got {x.shape[1:]}"
            )
        return x, batched

    def logits(self, images) -> np.ndarray:
        x, batched = self._prepare(images)
        for layer in self.layers:
            x = layer.forward(x)
        return x if batched else x[0]

    def forward(self, images) -> np.ndarray:
        """Class probability vector(s); rows sum to 1."""
        return softmax(self.logits(images))

    def predict(self, images) -> np.ndarray | int:
        """Argmax class index; the lowest index wins ties."""
        probs = self.forward(images)
        if probs.ndim == 1:
            return int(np.argmax(probs))
        return np.argmax(probs, axis=1)

    # -- parameter access ---------------------------------------------------

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        items = []
        for layer in self.layers:
            items.extend(layer.param_items())
        return items

    def gradients(self) -> list[np.ndarray]:
        grads = []
        for layer in self.layers:
            grads.extend(layer.grad_items())
        return grads


def architecture_chain(input_side: int) -> tuple[int, int, int, int, int]:
    """Spatial sizes (input, conv1, pool1, conv2, pool2); raises if the chain breaks."""
    a = input_side - 4
    if input_side < 8 or a % 2:
        raise ShapeMismatchError(f"input side {input_side} does not fit conv 5x5 + pool 2x2")
    b = a // 2 - 2
    if b < 2 or b % 2:
        raise ShapeMismatchError(f"input side {input_side} does not fit conv 3x3 + pool 2x2")
    return input_side, a, a // 2, b, b // 2


def build_model(config: TrainConfig, input_side: int = 20) -> Model:
    """Fresh model with Glorot-uniform weights and zero biases from config.seed."""
    return Model(input_side=input_side, config=config)


@dataclass
class OptimizerState:
    """Per-parameter velocity buffers, shape-matched to the model."""

    velocities: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_model(cls, model: Model) -> "OptimizerState":
        return cls(velocities=[np.zeros_like(p) for _, p in model.parameters()])


# ---------------------------------------------------------------------------
# loss, training, evaluation
# ---------------------------------------------------------------------------

def loss_and_grads(model: Model, images, labels) -> tuple[float, list[np.ndarray]]:
    """Mean cross-entropy over the batch and its gradient per parameter.

    Gradients are averaged over the batch, matching the optimizer contract.
    """
    x, batched = model._prepare(images)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.shape != (x.shape[0],):
        raise ShapeMismatchError(f"{labels.shape[0]} labels for {x.shape[0]} images")
    classes = model.config.num_classes
    if np.any(labels < 0) or np.any(labels >= classes):
        raise LabelOutOfRangeError(f"labels outside [0, {classes})")

    out = x
    for layer in model.layers:
        out = layer.forward(out)
    losses, grad_logits = _softmax_xent_batch(out, labels)
    upstream = grad_logits / x.shape[0]
    for layer in reversed(model.layers):
        upstream = layer.backward(upstream)
    return float(losses.mean()), model.gradients()


def train_model(
    model: Model,
    images: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig | None = None,
) -> list[float]:
    """Mini-batch SGD with momentum; returns mean training loss per epoch.

    Each epoch shuffles with a generator derived from the config seed, walks
    the data in ``batch_size`` chunks (the last short batch included), and
    checks that parameters and losses stayed finite.
    """
    config = config or model.config
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 3:
        x = x[:, None]
    y = np.asarray(labels, dtype=np.int64)
    n = x.shape[0]
    if y.shape != (n,):
        raise ShapeMismatchError(f"{y.shape} labels for {n} images")

    state = OptimizerState.for_model(model)
    shuffle_rng = derive_rng(config.seed, 1)
    history: list[float] = []
    params = [p for _, p in model.parameters()]

    for _ in range(config.epochs):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            loss, grads = loss_and_grads(model, x[batch], y[batch])
            sgd_momentum_step(params, grads, state.velocities, config.learning_rate,
                              config.momentum)
            total += loss * batch.size
        epoch_loss = total / n
        if not np.isfinite(epoch_loss) or not all(np.all(np.isfinite(p)) for p in params):
            raise NumericalInstabilityError(
                f"non-finite loss or parameters at epoch {len(history) + 1}"
            )
        history.append(epoch_loss)
    return history


def evaluate(model: Model, images: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Accuracy and the (true x predicted) confusion matrix on a labeled set."""
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 3:
        x = x[:, None]
    y = np.asarray(labels, dtype=np.int64)
    predictions = model.predict(x)
    classes = model.config.num_classes
    confusion = np.zeros((classes, classes), dtype=np.int64)
    np.add.at(confusion, (y, predictions), 1)
    accuracy = float(np.trace(confusion)) / y.size
    return accuracy, confusion


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(model: Model, image, label: int, epsilon: float = 1e-5) -> float:
    """Max relative error between backprop and central finite differences.

    Every parameter entry is perturbed by +/-epsilon; the relative error uses
    the denominator max(|analytic|, |numeric|, 1e-12).  The loss is
    re-evaluated only from the perturbed layer onward (earlier activations
    cannot change), which keeps the full sweep fast without touching the
    backward path being verified.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon must be in [1e-7, 1e-3], got {epsilon}")
    x, _ = model._prepare(image)
    label = int(label)

    _, analytic = loss_and_grads(model, x, [label])

    # activations entering each layer, for suffix re-evaluation
    inputs = [x]
    out = x
    for layer in model.layers:
        out = layer.forward(out)
        inputs.append(out)

    def loss_from(layer_index: int) -> float:
        h = inputs[layer_index]
        for layer in model.layers[layer_index:]:
            h = layer.forward(h)
        losses, _ = _softmax_xent_batch(h, np.array([label]))
        return float(losses[0])

    worst = 0.0
    grad_pos = 0
    for layer_index, layer in enumerate(model.layers):
        for _, param in layer.param_items():
            grad = analytic[grad_pos]
            flat = param.reshape(-1)
            flat_grad = grad.reshape(-1)
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + epsilon
                loss_hi = loss_from(layer_index)
                flat[i] = keep - epsilon
                loss_lo = loss_from(layer_index)
                flat[i] = keep
                numeric = (loss_hi - loss_lo) / (2.0 * epsilon)
                denom = max(abs(flat_grad[i]), abs(numeric), 1e-12)
                worst = max(worst, abs(flat_grad[i] - numeric) / denom)
            grad_pos += 1
    # restore caches clobbered by the sweep
    out = x
    for layer in model.layers:
        out = layer.forward(out)
    return worst


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_POOLING_CODES = {"avg": 0, "max": 1}
_POOLING_NAMES = {code: name for name, code in _POOLING_CODES.items()}


def save_model(model: Model, path: str | Path) -> None:
    """Write magic, version, architecture descriptor, then raw float64 blocks."""
    header = MODEL_MAGIC + struct.pack(
        "<7I",
        MODEL_FORMAT_VERSION,
        model.input_side,
        model.config.c1,
        model.config.c2,
        model.config.hidden,
        model.config.num_classes,
        _POOLING_CODES[model.config.pooling],
    )
    blocks = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes()
                      for _, p in model.parameters())
    Path(path).write_bytes(header + blocks)


def load_model(path: str | Path) -> Model:
    """Read a model file back; the round trip is bit-exact on all parameters.

    Raises:
        BadMagicError: wrong leading magic bytes.
        VersionMismatchError: unsupported format version.
        ArchitectureMismatchError: descriptor invalid or payload has spare bytes.
        TruncatedError: payload ends before the declared parameters.
    """
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != MODEL_MAGIC:
        raise BadMagicError(f"{path}: not a model file (magic {data[:4]!r})")
    if len(data) < 4 + 28:
        raise TruncatedError(f"{path}: header cut short")
    version, side, c1, c2, hidden, classes, pool_code = struct.unpack_from("<7I", data, 4)
    if version != MODEL_FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: format version {version} unsupported")
    if pool_code not in _POOLING_NAMES or min(side, c1, c2, hidden, classes) < 1:
        raise ArchitectureMismatchError(f"{path}: implausible architecture descriptor")

    config = TrainConfig(
        num_classes=classes, c1=c1, c2=c2, hidden=hidden, pooling=_POOLING_NAMES[pool_code])
    try:
        chain = architecture_chain(side)
    except ShapeMismatchError as exc:
        raise ArchitectureMismatchError(f"{path}: {exc}") from exc
    flat = chain[-1] ** 2 * c2
    shapes = [
        ("conv1.weights", (c1, 1, 5, 5)),
        ("conv1.bias", (c1,)),
        ("conv2.weights", (c2, c1, 3, 3)),
        ("conv2.bias", (c2,)),
        ("fc1.weights", (hidden, flat)),
        ("fc1.bias", (hidden,)),
        ("fc2.weights", (classes, hidden)),
        ("fc2.bias", (classes,)),
    ]
    params = {}
    offset = 4 + 28
    for name, shape in shapes:
        nbytes = int(np.prod(shape)) * 8
        if offset + nbytes > len(data):
            raise TruncatedError(f"{path}: parameter block {name} cut short")
        params[name] = np.frombuffer(
            data, dtype="<f8", count=int(np.prod(shape)), offset=offset
        ).astype(np.float64).reshape(shape)
        offset += nbytes
    if offset != len(data):
        raise ArchitectureMismatchError(
            f"{path}: {len(data) - offset} unexpected trailing bytes"
        )
    return Model(input_side=side, config=config, params=params)
