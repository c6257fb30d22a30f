"""Dense float64 arrays and the shape arithmetic shared by every layer.

Tensors are plain C-contiguous ``numpy.ndarray`` objects of dtype float64.
This module only adds validation, the sliding-window output-size law, and a
plain-text dump format used for debugging.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence, Union

import numpy as np

Tensor = np.ndarray


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible or degenerate."""


class Shape2D(NamedTuple):
    height: int
    width: int

    def validate(self) -> "Shape2D":
        if self.height < 1 or self.width < 1:
            raise ShapeError(f"spatial extents must be >= 1, got {self.height}x{self.width}")
        return self


INPUT_SHAPE = Shape2D(50, 50)


def tensor(data: Union[Iterable, float], shape: Sequence[int] | None = None) -> Tensor:
    """Build a float64 row-major tensor, optionally reshaping flat data.

    Raises ShapeError if ``shape`` has an extent below 1 or does not match the
    number of values supplied.
    """
    arr = np.array(data, dtype=np.float64, order="C")
    if shape is not None:
        shape = tuple(int(d) for d in shape)
        if any(d < 1 for d in shape):
            raise ShapeError(f"all extents must be >= 1, got {shape}")
        if arr.size != math.prod(shape):
            raise ShapeError(f"{arr.size} values cannot fill shape {shape}")
        arr = arr.reshape(shape)
    elif arr.ndim and any(d < 1 for d in arr.shape):
        raise ShapeError(f"all extents must be >= 1, got {arr.shape}")
    return np.ascontiguousarray(arr)


def volume(shape: Sequence[int]) -> int:
    """Number of elements held by ``shape``: width * height * depth for images."""
    return math.prod(int(d) for d in shape)


def flat_index(shape: Sequence[int], index: Sequence[int]) -> int:
    """Row-major flat offset of a multi-index."""
    if len(shape) != len(index):
        raise ShapeError(f"index {tuple(index)} has wrong rank for shape {tuple(shape)}")
    offset = 0
    for extent, i in zip(shape, index):
        if not 0 <= i < extent:
            raise IndexError(f"index {tuple(index)} out of range for shape {tuple(shape)}")
        offset = offset * extent + i
    return offset


def conv_output_shape(in_shape: Shape2D, f: int, p: int = 0, s: int = 1) -> Shape2D:
    """Spatial size after sliding an ``f``x``f`` window with padding ``p`` and stride ``s``.

    Each axis is ``floor((dim - f + 2p) / s) + 1``; rows or columns left over at
    the bottom/right edge when the stride does not divide evenly are dropped.
    """
    in_shape = Shape2D(*in_shape).validate()
    if f < 1 or s < 1 or p < 0:
        raise ShapeError(f"need f >= 1, s >= 1, p >= 0 (got f={f}, s={s}, p={p})")
    out = []
    for dim in in_shape:
        if f > dim + 2 * p:
            raise ShapeError(
                f"kernel {f} exceeds padded input {dim}+2*{p} for input {in_shape.height}x{in_shape.width}"
            )
        out.append((dim - f + 2 * p) // s + 1)
    return Shape2D(*out)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}")
    return np.ascontiguousarray(a @ b)


def dumps_tensor(t: Tensor) -> str:
    t = np.asarray(t, dtype=np.float64)
    header = "shape: " + " ".join(str(d) for d in t.shape)
    body = " ".join(repr(float(v)) for v in t.ravel(order="C"))
    return f"{header}\n{body}\n"


def loads_tensor(text: str) -> Tensor:
    header, _, body = text.partition("\n")
    if not header.startswith("shape:"):
        raise ValueError("tensor dump must start with a 'shape:' line")
    shape = [int(tok) for tok in header[len("shape:"):].split()]
    return tensor([float(tok) for tok in body.split()], shape)


def dump_tensor(t: Tensor, path: Union[str, Path]) -> None:
    Path(path).write_text(dumps_tensor(t))


def load_tensor(path: Union[str, Path]) -> Tensor:
    return loads_tensor(Path(path).read_text())
