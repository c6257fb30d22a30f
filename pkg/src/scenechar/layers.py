"""Forward and backward passes for convolution, max pooling, ReLU, dense and softmax.

Every function accepts a single example (``[C, H, W]`` for images, ``[F]`` for
vectors) or a leading batch axis (``[N, C, H, W]`` / ``[N, F]``) and returns
outputs of matching rank. Forward passes never modify their inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Shape2D, ShapeError, Tensor, conv_output_shape


def he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    # uniform on [-a, a] has std a/sqrt(3); pick a so the std is sqrt(2/fan_in)
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(np.float64)


@dataclass
class ConvLayer:
    """Square-kernel 2-D convolution with ``k`` filters."""

    weights: Tensor  # [k, in_channels, f, f]
    bias: Tensor  # [k]
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        w = self.weights
        if w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise ShapeError(f"conv weights must be [k, C, f, f], got {w.shape}")
        if self.bias.shape != (w.shape[0],):
            raise ShapeError(f"conv bias must be [{w.shape[0]}], got {self.bias.shape}")
        if self.stride < 1 or self.padding < 0:
            raise ShapeError(f"invalid stride {self.stride} / padding {self.padding}")

    @classmethod
    def create(cls, in_channels: int, k: int, f: int, stride: int = 1, padding: int = 0,
               rng: np.random.Generator | None = None) -> "ConvLayer":
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_channels * f * f
        return cls(he_uniform(rng, (k, in_channels, f, f), fan_in), np.zeros(k), stride, padding)

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    @property
    def f(self) -> int:
        return self.weights.shape[2]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    def output_shape(self, in_shape: Shape2D) -> Shape2D:
        return conv_output_shape(in_shape, self.f, self.padding, self.stride)


@dataclass
class MaxPoolLayer:
    window: int = 2
    stride: int = 2

    def __post_init__(self):
        if self.window < 1 or self.stride < 1:
            raise ShapeError(f"invalid pooling window {self.window} / stride {self.stride}")

    def output_shape(self, in_shape: Shape2D) -> Shape2D:
        return conv_output_shape(in_shape, self.window, 0, self.stride)


@dataclass
class FullyConnectedLayer:
    weights: Tensor  # [out_features, in_features]
    bias: Tensor  # [out_features]

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"dense weights {self.weights.shape} and bias {self.bias.shape} are inconsistent"
            )

    @classmethod
    def create(cls, in_features: int, out_features: int,
               rng: np.random.Generator | None = None) -> "FullyConnectedLayer":
        rng = rng if rng is not None else np.random.default_rng(0)
        return cls(he_uniform(rng, (out_features, in_features), in_features), np.zeros(out_features))

    @property
    def in_features(self) -> int:
        return self.weights.shape[1]

    @property
    def out_features(self) -> int:
        return self.weights.shape[0]


def _as_batch(x: Tensor, rank: int) -> tuple[Tensor, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == rank - 1:
        return x[None], True
    if x.ndim != rank:
        raise ShapeError(f"expected rank {rank - 1} or {rank} input, got shape {x.shape}")
    return x, False


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def _pad(x: Tensor, p: int) -> Tensor:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def im2col(x: Tensor, f: int, s: int, p: int) -> tuple[Tensor, Shape2D]:
    """Unfold a batch ``[N, C, H, W]`` into rows of flattened ``C*f*f`` patches.

    Rows are ordered (n, y, x); columns (c, i, j), matching ``weights.reshape(k, -1)``.
    """
    n, c, h, w = x.shape
    out = conv_output_shape(Shape2D(h, w), f, p, s)
    win = sliding_window_view(_pad(x, p), (f, f), axis=(2, 3))
    win = win[:, :, ::s, ::s][:, :, : out.height, : out.width]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * out.height * out.width, c * f * f)
    return cols, out


def col2im(cols: Tensor, x_shape: tuple[int, ...], f: int, s: int, p: int) -> Tensor:
    """Adjoint of :func:`im2col`: scatter-add patch rows back onto the input grid."""
    n, c, h, w = x_shape
    out = conv_output_shape(Shape2D(h, w), f, p, s)
    patches = cols.reshape(n, out.height, out.width, c, f, f)
    grad = np.zeros((n, c, h + 2 * p, w + 2 * p))
    y_span = s * (out.height - 1) + 1
    x_span = s * (out.width - 1) + 1
    for i in range(f):
        for j in range(f):
            grad[:, :, i : i + y_span : s, j : j + x_span : s] += patches[..., i, j].transpose(0, 3, 1, 2)
    if p:
        grad = grad[:, :, p:-p, p:-p]
    return np.ascontiguousarray(grad)


def _conv_forward_cols(layer: ConvLayer, x: Tensor) -> tuple[Tensor, Tensor]:
    if x.shape[1] != layer.in_channels:
        raise ShapeError(
            f"input has {x.shape[1]} channels but conv weights {layer.weights.shape} expect {layer.in_channels}"
        )
    cols, out = im2col(x, layer.f, layer.stride, layer.padding)
    y = cols @ layer.weights.reshape(layer.k, -1).T + layer.bias
    y = y.reshape(x.shape[0], out.height, out.width, layer.k).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(y), cols


def conv_forward(layer: ConvLayer, x: Tensor) -> Tensor:
    """Cross-correlate ``x`` with the layer's filters and add the bias."""
    xb, single = _as_batch(x, 4)
    y, _ = _conv_forward_cols(layer, xb)
    return y[0] if single else y


def _conv_backward_cols(layer: ConvLayer, x_shape, cols: Tensor, grad_out: Tensor, need_input_grad=True):
    k = layer.k
    g = grad_out.transpose(0, 2, 3, 1).reshape(-1, k)
    grad_w = (g.T @ cols).reshape(layer.weights.shape)
    grad_b = g.sum(axis=0)
    grad_x = None
    if need_input_grad:
        grad_x = col2im(g @ layer.weights.reshape(k, -1), x_shape, layer.f, layer.stride, layer.padding)
    return grad_x, grad_w, grad_b


def conv_backward(layer: ConvLayer, x: Tensor, grad_out: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Gradients of ``sum(grad_out * conv_forward(layer, x))`` w.r.t. input, weights, bias.

    Weight and bias gradients are summed over the batch axis.
    """
    xb, single = _as_batch(x, 4)
    gb, _ = _as_batch(grad_out, 4)
    cols, out = im2col(xb, layer.f, layer.stride, layer.padding)
    expected = (xb.shape[0], layer.k, out.height, out.width)
    if gb.shape != expected:
        raise ShapeError(f"grad_out shape {gb.shape} does not match conv output {expected}")
    gx, gw, gbias = _conv_backward_cols(layer, xb.shape, cols, gb)
    return (gx[0] if single else gx), gw, gbias


# ---------------------------------------------------------------------------
# max pooling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ArgmaxMap:
    """Flat input index of the winning element for every pooled output cell."""

    indices: np.ndarray  # int64, same shape as the pooled output
    input_shape: tuple[int, ...]


def maxpool_forward(layer: MaxPoolLayer, x: Tensor) -> tuple[Tensor, ArgmaxMap]:
    """Window maxima plus the argmax map needed to route gradients back.

    Ties go to the first maximal element in row-major order.
    """
    xb, single = _as_batch(x, 4)
    n, c, h, w = xb.shape
    win, st = layer.window, layer.stride
    out = conv_output_shape(Shape2D(h, w), win, 0, st)
    view = sliding_window_view(xb, (win, win), axis=(2, 3))[:, :, ::st, ::st]
    view = view[:, :, : out.height, : out.width].reshape(n, c, out.height, out.width, win * win)
    local = view.argmax(axis=-1)
    y = np.take_along_axis(view, local[..., None], axis=-1)[..., 0]

    rows = np.arange(out.height)[:, None] * st + local // win
    cols = np.arange(out.width)[None, :] * st + local % win
    plane = (np.arange(n)[:, None] * c + np.arange(c)[None, :])[:, :, None, None]
    flat = (plane * h + rows) * w + cols
    y = np.ascontiguousarray(y)
    if single:
        return y[0], ArgmaxMap(flat[0], xb.shape[1:])
    return y, ArgmaxMap(flat, xb.shape)


def maxpool_backward(argmax: ArgmaxMap, grad_out: Tensor, input_shape=None) -> Tensor:
    """Scatter ``grad_out`` onto the recorded argmax positions (summing overlaps)."""
    shape = tuple(argmax.input_shape if input_shape is None else input_shape)
    if shape != tuple(argmax.input_shape):
        raise ShapeError(f"input shape {shape} differs from recorded {argmax.input_shape}")
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != argmax.indices.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match pooled shape {argmax.indices.shape}")
    size = math.prod(shape)
    grad = np.bincount(argmax.indices.ravel(), weights=grad_out.ravel(), minlength=size)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# pointwise and dense
# ---------------------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(x: Tensor, grad_out: Tensor) -> Tensor:
    x = np.asarray(x, dtype=np.float64)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if x.shape != grad_out.shape:
        raise ShapeError(f"relu input {x.shape} and grad_out {grad_out.shape} differ")
    return np.where(x > 0, grad_out, 0.0)


def fc_forward(layer: FullyConnectedLayer, x: Tensor) -> Tensor:
    xb, single = _as_batch(x, 2)
    if xb.shape[1] != layer.in_features:
        raise ShapeError(f"input length {xb.shape[1]} != in_features {layer.in_features}")
    y = xb @ layer.weights.T + layer.bias
    return y[0] if single else y


def fc_backward(layer: FullyConnectedLayer, x: Tensor, grad_out: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Returns (grad_input, grad_weights, grad_bias); parameter grads are batch sums."""
    xb, single = _as_batch(x, 2)
    gb, _ = _as_batch(grad_out, 2)
    if xb.shape[1] != layer.in_features or gb.shape != (xb.shape[0], layer.out_features):
        raise ShapeError(
            f"dense layer {layer.weights.shape} got input {xb.shape} and grad_out {gb.shape}"
        )
    gx = gb @ layer.weights
    return (gx[0] if single else gx), gb.T @ xb, gb.sum(axis=0)


def softmax(logits: Tensor) -> Tensor:
    """Max-shifted softmax over the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    if z.shape[-1] < 1:
        raise ShapeError("softmax needs at least one logit")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)
