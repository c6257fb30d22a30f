"""Softmax cross-entropy and plain stochastic gradient descent."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor

GRID_LEARNING_RATES = (0.005, 0.5)


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.005
    batch_size: int = 32
    epochs: int = 50
    seed: int = 0

    def __post_init__(self):
        # lr == 0 is allowed as a frozen-parameter baseline
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")


def cross_entropy(probs: Tensor, label) -> tuple[float, Tensor]:
    """Negative log-likelihood of ``label`` and its gradient w.r.t. the logits.

    ``probs`` must come from :func:`scenechar.layers.softmax`; the returned
    gradient is the fused softmax+cross-entropy form ``probs - onehot``.
    With a batch (``probs`` of shape ``[N, K]`` and ``label`` of length N) the
    loss and gradient are averaged over the batch.
    """
    probs = np.asarray(probs, dtype=np.float64)
    single = probs.ndim == 1
    p = probs[None] if single else probs
    labels = np.atleast_1d(np.asarray(label))
    if labels.shape != (p.shape[0],):
        raise ShapeError(f"{labels.shape[0]} labels for {p.shape[0]} probability rows")
    if labels.dtype.kind not in "iu" or labels.min() < 0 or labels.max() >= p.shape[1]:
        raise ValueError(f"labels must be integers in [0, {p.shape[1]}), got {labels.tolist()}")
    n = p.shape[0]
    rows = np.arange(n)
    with np.errstate(divide="ignore"):
        loss = float(-np.log(p[rows, labels]).mean())
    grad = p.copy()
    grad[rows, labels] -= 1.0
    grad /= n
    return loss, (grad[0] if single else grad)


def sgd_step(params: Tensor, grads: Tensor, lr: float) -> Tensor:
    """Return ``params - lr * grads`` as a new array."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise ShapeError(f"param shape {params.shape} != grad shape {grads.shape}")
    return params - lr * grads
