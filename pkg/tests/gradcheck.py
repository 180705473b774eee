"""Central finite-difference gradient checking against the autodiff engine."""

import numpy as np

from rfcnn.tensor import Tensor


def finite_difference_check(fn, arrays, h=1e-4):
    """Max relative error |analytic - fd| / max(1, |analytic|) over all inputs.

    ``fn`` maps one Tensor per entry of ``arrays`` (float64) to a scalar
    Tensor. Arrays are perturbed in place one coordinate at a time, so the
    closure must rebuild tensors from them on every call (which this
    helper does).
    """
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    fn(*tensors).backward()

    worst = 0.0
    for tensor, arr in zip(tensors, arrays):
        analytic = tensor.grad if tensor.grad is not None else np.zeros_like(arr)
        flat = arr.reshape(-1)
        fd = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = fn(*[Tensor(a) for a in arrays]).item()
            flat[i] = orig - h
            down = fn(*[Tensor(a) for a in arrays]).item()
            flat[i] = orig
            fd[i] = (up - down) / (2.0 * h)
        err = np.abs(analytic.reshape(-1) - fd) / np.maximum(1.0, np.abs(analytic.reshape(-1)))
        worst = max(worst, float(err.max()))
    return worst
