"""Adam optimizer with bias correction."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .errors import TrainingDivergedError
from .tensor import Tensor


def adam_update(
    theta: np.ndarray,
    grad: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    step: int,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One in-place Adam update; ``step`` is 1-based.

    m <- b1*m + (1-b1)*g;  v <- b2*v + (1-b2)*g^2;
    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps).
    """
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**step)
    v_hat = v / (1.0 - beta2**step)
    theta -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    def __init__(
        self,
        params: "OrderedDict[str, Tensor]",
        lr: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: OrderedDict[str, np.ndarray] = OrderedDict(
            (name, np.zeros_like(p.data)) for name, p in params.items()
        )
        self.v: OrderedDict[str, np.ndarray] = OrderedDict(
            (name, np.zeros_like(p.data)) for name, p in params.items()
        )

    def step(self) -> None:
        self.step_count += 1
        for name, p in self.params.items():
            grad = p.grad
            if grad is None:
                continue
            if not np.all(np.isfinite(grad)):
                raise TrainingDivergedError(
                    f"non-finite gradient in {name}", step=self.step_count
                )
            adam_update(
                p.data, grad, self.m[name], self.v[name], self.step_count,
                self.lr, self.beta1, self.beta2, self.eps,
            )

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()
