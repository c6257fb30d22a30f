"""
Feature-map sizes and the im2col convolution
============================================

Walk through the output-size rule, then check the vectorised convolution
against a plain loop on a small input.
"""

# %%
import numpy as np

from scenechar.layers import ConvLayer, MaxPoolLayer, conv_forward, im2col, maxpool_forward
from scenechar.network import architecture_a, architecture_b
from scenechar.tensor import Shape2D, ShapeError, conv_output_shape

# A 5x5 kernel with stride 2 on a 50x50 image: (50 - 5) // 2 + 1 = 23.
print(conv_output_shape(Shape2D(50, 50), f=5, p=0, s=2))

# The leftover column is dropped rather than rejected.
print(conv_output_shape(Shape2D(6, 6), f=3, p=0, s=2))

try:
    conv_output_shape(Shape2D(4, 4), f=5)
except ShapeError as exc:
    print("rejected:", exc)

# %%
# Every layer's output shape for the two architectures.
for name, spec in [("A", architecture_a(f=5, s=2)), ("B", architecture_b(f=3, s=1))]:
    print(name)
    for layer, shape in zip(spec.layers, spec.shapes()):
        print(f"  {layer.kind:8s} -> {shape}")

# %%
# im2col unrolls every receptive field into a row, so the convolution becomes one matmul.
rng = np.random.default_rng(0)
x = rng.standard_normal((2, 7, 7))
cols, out = im2col(x[None], f=3, s=2, p=1)
print(cols.shape, out)

layer = ConvLayer.create(in_channels=2, k=4, f=3, stride=2, padding=1, rng=rng)
fast = conv_forward(layer, x)

padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
slow = np.zeros_like(fast)
for o in range(4):
    for i in range(out.height):
        for j in range(out.width):
            patch = padded[:, 2 * i : 2 * i + 3, 2 * j : 2 * j + 3]
            slow[o, i, j] = np.sum(patch * layer.weights[o]) + layer.bias[o]
print("max |fast - loop| =", np.abs(fast - slow).max())

# %%
# Max pooling keeps the argmax so the backward pass can route gradients.
y, argmax = maxpool_forward(MaxPoolLayer(2, 2), np.arange(16.0).reshape(1, 4, 4))
print(y)
print(argmax.indices)
