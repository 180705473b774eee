"""Stochastic affine combination of two parallel branches (shake operation).

The two branch outputs are mixed as alpha*b1 + (1-alpha)*b2 with alpha
drawn per sample; the backward pass redistributes the incoming gradient
with an independently drawn beta. The identity branch passes through
unweighted. Evaluation fixes both coefficients at 0.5, which makes it
deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError
from .tensor import Tensor, make_op


@dataclass
class ShakeCoefficients:
    alpha_forward: np.ndarray  # (batch,) in [0, 1]
    beta_backward: np.ndarray  # (batch,) in [0, 1]
    mode: str  # "train" | "eval"

    def __post_init__(self):
        self.alpha_forward = np.asarray(self.alpha_forward, dtype=np.float64)
        self.beta_backward = np.asarray(self.beta_backward, dtype=np.float64)
        if self.mode not in ("train", "eval"):
            raise ValueError(f"unknown mode {self.mode!r}")
        for name, arr in (("alpha", self.alpha_forward), ("beta", self.beta_backward)):
            if arr.ndim != 1:
                raise ShapeError(f"{name} must be a 1-D per-sample array")
            if np.any(arr < 0.0) or np.any(arr > 1.0):
                raise ValueError(f"{name} entries must lie in [0, 1]")
        if self.alpha_forward.shape != self.beta_backward.shape:
            raise ShapeError("alpha and beta must have the same length")


def sample_coefficients(
    batch_size: int,
    rng: np.random.Generator | None,
    mode: str = "train",
) -> ShakeCoefficients:
    """Draw per-sample mixing coefficients, i.i.d. Uniform[0, 1].

    Alpha (forward) and beta (backward) are independent draws. In eval
    mode both are pinned to 0.5 and the rng is not consumed.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if mode == "eval":
        half = np.full(batch_size, 0.5)
        return ShakeCoefficients(half, half.copy(), "eval")
    if rng is None:
        raise ValueError("train-mode sampling needs an rng stream")
    alpha = rng.uniform(size=batch_size)
    beta = rng.uniform(size=batch_size)
    return ShakeCoefficients(alpha, beta, "train")


def shake_combine(x: Tensor, b1: Tensor, b2: Tensor, coeffs: ShakeCoefficients) -> Tensor:
    """x + alpha*b1 + (1-alpha)*b2 forward; beta-weighted branch gradients."""
    if b1.shape != x.shape or b2.shape != x.shape:
        raise ShapeError(
            f"branch shapes {b1.shape}/{b2.shape} must match identity shape {x.shape}"
        )
    batch = x.shape[0]
    if coeffs.alpha_forward.shape[0] != batch:
        raise ShapeError(
            f"coefficients cover {coeffs.alpha_forward.shape[0]} samples, batch has {batch}"
        )
    if coeffs.mode == "eval" and (
        np.any(coeffs.alpha_forward != 0.5) or np.any(coeffs.beta_backward != 0.5)
    ):
        raise ContractError("eval mode requires alpha = beta = 0.5")

    view = (batch,) + (1,) * (x.ndim - 1)
    alpha = coeffs.alpha_forward.reshape(view).astype(x.dtype)
    beta = coeffs.beta_backward.reshape(view).astype(x.dtype)
    # grouping the branch mix first keeps tied branches at alpha=0.5 exact
    out = x.data + (alpha * b1.data + (1.0 - alpha) * b2.data)

    def factory(node):
        def backward():
            g = node.grad
            if x.requires_grad:
                x.accumulate_grad(g)
            if b1.requires_grad:
                b1.accumulate_grad(g * beta)
            if b2.requires_grad:
                b2.accumulate_grad(g * (1.0 - beta))

        return backward

    return make_op(out, (x, b1, b2), factory)
