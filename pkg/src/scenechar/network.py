"""Declarative layer stacks, the two reference architectures, and checkpoints."""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import layers as L
from .tensor import Shape2D, ShapeError, Tensor, conv_output_shape, volume

NUM_CLASSES = 27
CHECKPOINT_MAGIC = b"SCENECHAR-CKPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv | relu | maxpool | flatten | fc | softmax
    k: int = 0
    f: int = 0
    s: int = 1
    p: int = 0
    out_features: int = 0

    def as_dict(self) -> dict[str, Any]:
        d = {"kind": self.kind}
        if self.kind == "conv":
            d.update(k=self.k, f=self.f, s=self.s, p=self.p)
        elif self.kind == "maxpool":
            d.update(f=self.f, s=self.s)
        elif self.kind == "fc":
            d.update(out_features=self.out_features)
        return d


def conv(k, f, s=1, p=0):
    return LayerSpec("conv", k=k, f=f, s=s, p=p)


def maxpool(window=2, stride=2):
    return LayerSpec("maxpool", f=window, s=stride)


def fc(out_features):
    return LayerSpec("fc", out_features=out_features)


RELU = LayerSpec("relu")
FLATTEN = LayerSpec("flatten")
SOFTMAX = LayerSpec("softmax")
_KINDS = {"conv", "relu", "maxpool", "flatten", "fc", "softmax"}


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, int, int] = (1, 50, 50)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        for spec in self.layers:
            if spec.kind not in _KINDS:
                raise ValueError(f"unknown layer kind {spec.kind!r}")

    def shapes(self) -> list[tuple[int, ...]]:
        """Output shape of every layer, checking that each one accepts its input.

        Raises ShapeError naming the offending layer if the chain breaks.
        """
        shape: tuple[int, ...] = self.input_shape
        out = []
        for i, spec in enumerate(self.layers):
            try:
                if spec.kind in ("conv", "maxpool"):
                    if len(shape) != 3:
                        raise ShapeError(f"expects a [C, H, W] input, got {shape}")
                    hw = Shape2D(shape[1], shape[2])
                    if spec.kind == "conv":
                        o = conv_output_shape(hw, spec.f, spec.p, spec.s)
                        shape = (spec.k, o.height, o.width)
                    else:
                        o = conv_output_shape(hw, spec.f, 0, spec.s)
                        shape = (shape[0], o.height, o.width)
                elif spec.kind == "flatten":
                    shape = (volume(shape),)
                elif spec.kind == "fc":
                    if len(shape) != 1:
                        raise ShapeError(f"expects a flat input, got {shape}")
                    shape = (spec.out_features,)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({spec.kind}): {exc}") from None
            out.append(shape)
        return out

    @property
    def num_classes(self) -> int:
        return self.shapes()[-1][0]

    def to_dict(self) -> dict[str, Any]:
        return {"input_shape": list(self.input_shape), "layers": [s.as_dict() for s in self.layers]}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "NetworkSpec":
        return cls(tuple(LayerSpec(**item) for item in d["layers"]), tuple(d["input_shape"]))


def architecture_a(f=5, s=2, k1=16, k2=32, num_classes=NUM_CLASSES, input_hw=(50, 50), padding=0):
    """Two convolutions followed by a single dense classifier (no pooling)."""
    return NetworkSpec(
        (conv(k1, f, s, padding), RELU, conv(k2, f, s, padding), RELU, FLATTEN, fc(num_classes), SOFTMAX),
        (1, *input_hw),
    )


def architecture_b(f=3, s=1, k1=16, k2=32, fc_hidden=128, num_classes=NUM_CLASSES,
                   input_hw=(50, 50), padding=0, pool=(2, 2)):
    """Convolution + max pooling twice, then a hidden dense layer and the classifier."""
    return NetworkSpec(
        (
            conv(k1, f, s, padding), RELU, maxpool(*pool),
            conv(k2, f, s, padding), RELU, maxpool(*pool),
            FLATTEN, fc(fc_hidden), RELU, fc(num_classes), SOFTMAX,
        ),
        (1, *input_hw),
    )


@dataclass
class Network:
    """Parameters for a :class:`NetworkSpec`; the trailing softmax is applied by :meth:`predict_proba`."""

    spec: NetworkSpec
    modules: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @classmethod
    def init(cls, spec: NetworkSpec, seed: int = 0) -> "Network":
        rng = np.random.default_rng(seed)
        shapes = spec.shapes()
        modules = []
        prev: tuple[int, ...] = spec.input_shape
        for ls, out in zip(spec.layers, shapes):
            if ls.kind == "conv":
                modules.append(L.ConvLayer.create(prev[0], ls.k, ls.f, ls.s, ls.p, rng))
            elif ls.kind == "fc":
                modules.append(L.FullyConnectedLayer.create(prev[0], ls.out_features, rng))
            elif ls.kind == "maxpool":
                modules.append(L.MaxPoolLayer(ls.f, ls.s))
            else:
                modules.append(None)
            prev = out
        return cls(spec, modules)

    # -- parameters ---------------------------------------------------------

    def parameters(self) -> list[tuple[str, Tensor]]:
        """(name, array) pairs in declaration order; arrays are the live parameters."""
        out = []
        for i, m in enumerate(self.modules):
            if isinstance(m, (L.ConvLayer, L.FullyConnectedLayer)):
                out.append((f"{i}.{self.spec.layers[i].kind}.weights", m.weights))
                out.append((f"{i}.{self.spec.layers[i].kind}.bias", m.bias))
        return out

    def set_parameters(self, arrays) -> None:
        arrays = list(arrays)
        it = iter(arrays)
        for m in self.modules:
            if isinstance(m, (L.ConvLayer, L.FullyConnectedLayer)):
                w, b = next(it), next(it)
                if w.shape != m.weights.shape or b.shape != m.bias.shape:
                    raise ShapeError("parameter shapes do not match network layout")
                m.weights, m.bias = np.array(w, dtype=np.float64), np.array(b, dtype=np.float64)

    def copy(self) -> "Network":
        twin = Network(self.spec, [None] * len(self.modules), dict(self.meta))
        for i, m in enumerate(self.modules):
            if isinstance(m, L.ConvLayer):
                twin.modules[i] = L.ConvLayer(m.weights.copy(), m.bias.copy(), m.stride, m.padding)
            elif isinstance(m, L.FullyConnectedLayer):
                twin.modules[i] = L.FullyConnectedLayer(m.weights.copy(), m.bias.copy())
            else:
                twin.modules[i] = m
        return twin

    # -- passes -------------------------------------------------------------

    def forward(self, x: Tensor, keep: bool = False):
        """Logits for a batch ``[N, C, H, W]`` (or a single ``[C, H, W]`` image).

        With ``keep=True`` also returns the per-layer cache consumed by :meth:`backward`.
        """
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 3
        if single:
            x = x[None]
        if x.shape[1:] != self.spec.input_shape:
            raise ShapeError(f"network expects input {self.spec.input_shape}, got {x.shape[1:]}")
        caches = []
        for ls, m in zip(self.spec.layers, self.modules):
            if ls.kind == "conv":
                y, cols = L._conv_forward_cols(m, x)
                caches.append((x.shape, cols))
            elif ls.kind == "relu":
                y = L.relu(x)
                caches.append(x)
            elif ls.kind == "maxpool":
                y, amap = L.maxpool_forward(m, x)
                caches.append(amap)
            elif ls.kind == "flatten":
                y = x.reshape(x.shape[0], -1)
                caches.append(x.shape)
            elif ls.kind == "fc":
                y = L.fc_forward(m, x)
                caches.append(x)
            else:  # softmax is folded into the loss
                y = x
                caches.append(None)
            x = y
        logits = x[0] if single else x
        return (logits, caches) if keep else logits

    def backward(self, caches, grad_logits: Tensor) -> list[Tensor]:
        """Parameter gradients (batch sums) in :meth:`parameters` order."""
        g = np.asarray(grad_logits, dtype=np.float64)
        if g.ndim == 1:
            g = g[None]
        grads: list[Tensor] = []
        n = len(self.modules)
        for pos, ls, m, cache in zip(range(n - 1, -1, -1), reversed(self.spec.layers),
                                     reversed(self.modules), reversed(caches)):
            if ls.kind == "conv":
                x_shape, cols = cache
                # the input image needs no gradient
                g, gw, gb = L._conv_backward_cols(m, x_shape, cols, g, need_input_grad=pos > 0)
                grads += [gb, gw]
            elif ls.kind == "relu":
                g = L.relu_backward(cache, g)
            elif ls.kind == "maxpool":
                g = L.maxpool_backward(cache, g)
            elif ls.kind == "flatten":
                g = g.reshape(cache)
            elif ls.kind == "fc":
                g, gw, gb = L.fc_backward(m, cache, g)
                grads += [gb, gw]
        return grads[::-1]

    def predict_proba(self, x: Tensor) -> Tensor:
        return L.softmax(self.forward(x))

    def predict(self, x: Tensor) -> np.ndarray:
        # argmax picks the lowest index on exact ties
        return np.argmax(self.forward(x), axis=-1)

    def activation_pattern(self, x: Tensor) -> tuple[bytes, ...]:
        """Fingerprint of every ReLU on/off state and pooling winner for ``x``."""
        _, caches = self.forward(x, keep=True)
        sig = []
        for ls, cache in zip(self.spec.layers, caches):
            if ls.kind == "relu":
                sig.append(np.packbits(cache > 0).tobytes())
            elif ls.kind == "maxpool":
                sig.append(cache.indices.tobytes())
        return tuple(sig)

    # -- persistence --------------------------------------------------------

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        header = {"meta": self.meta, "spec": self.spec.to_dict()}
        buf.write(CHECKPOINT_MAGIC + b"\n")
        buf.write(f"version {CHECKPOINT_VERSION}\n".encode())
        buf.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n")
        for name, arr in self.parameters():
            dims = " ".join(str(d) for d in arr.shape)
            buf.write(f"tensor {name} {arr.ndim} {dims}\n".encode())
            buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes(order="C"))
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Network":
        buf = io.BytesIO(blob)
        if buf.readline().rstrip(b"\n") != CHECKPOINT_MAGIC:
            raise ValueError("not a scenechar checkpoint")
        version = buf.readline().decode().split()
        if version != ["version", str(CHECKPOINT_VERSION)]:
            raise ValueError(f"unsupported checkpoint version line {' '.join(version)!r}")
        header = json.loads(buf.readline())
        net = cls.init(NetworkSpec.from_dict(header["spec"]))
        net.meta = header["meta"]
        arrays = []
        for name, arr in net.parameters():
            parts = buf.readline().decode().split()
            if parts[:2] != ["tensor", name]:
                raise ValueError(f"expected tensor {name}, found {' '.join(parts[:2])!r}")
            shape = tuple(int(d) for d in parts[3:])
            if shape != arr.shape:
                raise ShapeError(f"tensor {name}: stored shape {shape} != layout {arr.shape}")
            raw = buf.read(8 * arr.size)
            arrays.append(np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape))
        if buf.read():
            raise ValueError("trailing bytes after last tensor")
        net.set_parameters(arrays)
        return net

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Network":
        return cls.from_bytes(Path(path).read_bytes())
