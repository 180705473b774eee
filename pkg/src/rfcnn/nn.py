"""Neural-network operations on the autodiff engine, plus thin layer classes.

Convolution is cross-correlation (no kernel flip) over NCHW tensors with
square filters, implemented via im2col so the inner loop is one matmul.
Max pooling breaks ties toward the first window element in row-major
order, which makes its backward pass deterministic.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateBatchError, EmptyLossError, ShapeError
from .tensor import Tensor, make_op, sigmoid_array


def _conv_out_extent(extent: int, k: int, stride: int, padding: int) -> int:
    return (extent + 2 * padding - k) // stride + 1


def _im2col(xp: np.ndarray, k: int, stride: int, h_out: int, w_out: int) -> np.ndarray:
    """(N,C,Hp,Wp) padded input -> (N, C*k*k, h_out*w_out) patch matrix."""
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]
    n = xp.shape[0]
    return np.ascontiguousarray(
        windows.transpose(0, 1, 4, 5, 2, 3)
    ).reshape(n, -1, h_out * w_out)


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution of (N,C_in,H,W) with (C_out,C_in,k,k), no bias.

    Output spatial extent is floor((H + 2*padding - k) / stride) + 1.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv2d expects 4-D input and weight")
    n, c_in, h, w = x.shape
    c_out, c_in_w, kh, kw = weight.shape
    if kh != kw:
        raise ShapeError("conv2d supports square filters only")
    k = kh
    if c_in != c_in_w:
        raise ShapeError(f"input has {c_in} channels, weight expects {c_in_w}")
    if k < 1:
        raise ValueError("filter size must be >= 1")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if padding < 0:
        raise ValueError("padding must be >= 0")
    if h + 2 * padding < k or w + 2 * padding < k:
        raise ShapeError("padded input smaller than the filter")

    h_out = _conv_out_extent(h, k, stride, padding)
    w_out = _conv_out_extent(w, k, stride, padding)
    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    cols = _im2col(xp, k, stride, h_out, w_out)
    w2 = weight.data.reshape(c_out, -1)
    out = (w2 @ cols).reshape(n, c_out, h_out, w_out)

    def factory(node):
        def backward():
            g = node.grad.reshape(n, c_out, h_out * w_out)
            if weight.requires_grad:
                gw = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0)
                weight.accumulate_grad(gw.reshape(weight.shape))
            if x.requires_grad:
                dcols = np.matmul(w2.T, g)  # (N, C*k*k, L)
                dcols = dcols.reshape(n, c_in, k, k, h_out, w_out)
                gxp = np.zeros_like(xp)
                for i in range(k):
                    for j in range(k):
                        gxp[
                            :, :, i : i + stride * h_out : stride,
                            j : j + stride * w_out : stride,
                        ] += dcols[:, :, i, j]
                if padding:
                    gxp = gxp[:, :, padding : padding + h, padding : padding + w]
                x.accumulate_grad(gxp)

        return backward

    return make_op(out, (x, weight), factory)


def maxpool2d(x: Tensor, k: int = 2, stride: int = 2) -> Tensor:
    """Max pooling over k*k windows; gradient goes to the first argmax."""
    if x.ndim != 4:
        raise ShapeError("maxpool2d expects a 4-D input")
    n, c, h, w = x.shape
    if h < k or w < k:
        raise ShapeError(f"spatial extent {h}x{w} smaller than window {k}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    h_out = (h - k) // stride + 1
    w_out = (w - k) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(x.data, (k, k), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride].reshape(n, c, h_out, w_out, k * k)
    argmax = windows.argmax(axis=-1)  # first max in row-major window order
    out = np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]

    def factory(node):
        def backward():
            if not x.requires_grad:
                return
            gx = np.zeros_like(x.data)
            ni, ci, yi, xi = np.indices((n, c, h_out, w_out))
            rows = yi * stride + argmax // k
            cols = xi * stride + argmax % k
            np.add.at(gx, (ni, ci, rows, cols), node.grad)
            x.accumulate_grad(gx)

        return backward

    return make_op(out, (x,), factory)


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    mode: str,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization over (N, H, W).

    Train mode normalizes with batch statistics (biased variance) and
    updates the running arrays in place by exponential moving average.
    Eval mode uses the running statistics and never mutates them.
    """
    if x.ndim != 4:
        raise ShapeError("batchnorm2d expects a 4-D input")
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError("gamma/beta must have one entry per channel")

    gview = gamma.data.reshape(1, c, 1, 1)
    bview = beta.data.reshape(1, c, 1, 1)

    if mode == "train":
        m = n * h * w
        if m < 2:
            raise DegenerateBatchError(
                f"need at least 2 values per channel, got {m}"
            )
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean = running_mean
        var = running_var

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
    out = gview * xhat + bview

    def factory(node):
        def backward():
            g = node.grad
            if gamma.requires_grad:
                gamma.accumulate_grad((g * xhat).sum(axis=(0, 2, 3)))
            if beta.requires_grad:
                beta.accumulate_grad(g.sum(axis=(0, 2, 3)))
            if not x.requires_grad:
                return
            gxhat = g * gview
            scale = inv_std.reshape(1, c, 1, 1)
            if mode == "eval":
                x.accumulate_grad(gxhat * scale)
            else:
                mean_g = gxhat.mean(axis=(0, 2, 3), keepdims=True)
                mean_gx = (gxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
                x.accumulate_grad(scale * (gxhat - mean_g - xhat * mean_gx))

        return backward

    return make_op(out, (x, gamma, beta), factory)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map of (N, F) by weight (O, F) plus optional bias (O,)."""
    if x.ndim != 2 or weight.ndim != 2:
        raise ShapeError("linear expects 2-D input and weight")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"input features {x.shape[1]} != weight features {weight.shape[1]}")
    out_data = x.data @ weight.data.T
    if bias is not None:
        out_data = out_data + bias.data

    parents = (x, weight) if bias is None else (x, weight, bias)

    def factory(node):
        def backward():
            g = node.grad
            if x.requires_grad:
                x.accumulate_grad(g @ weight.data)
            if weight.requires_grad:
                weight.accumulate_grad(g.T @ x.data)
            if bias is not None and bias.requires_grad:
                bias.accumulate_grad(g.sum(axis=0))

        return backward

    return make_op(out_data, parents, factory)


def global_avg_pool(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C) spatial mean."""
    if x.ndim != 4:
        raise ShapeError("global_avg_pool expects a 4-D input")
    n, c, h, w = x.shape

    def factory(node):
        def backward():
            if x.requires_grad:
                g = node.grad.reshape(n, c, 1, 1) / (h * w)
                x.accumulate_grad(np.broadcast_to(g, x.shape).copy())

        return backward

    return make_op(x.data.mean(axis=(2, 3)), (x,), factory)


def bce_with_logits(
    logits: Tensor,
    targets: np.ndarray,
    known_mask: np.ndarray | None = None,
) -> Tensor:
    """Mean binary cross-entropy from logits over unmasked entries.

    Targets are probabilities in [0, 1] (soft labels allowed). Entries
    where ``known_mask`` is False contribute nothing. Computed in the
    stable form max(x,0) - x*y + log(1 + exp(-|x|)).
    """
    y = np.asarray(targets, dtype=logits.dtype)
    if y.shape != logits.shape:
        raise ShapeError(f"targets shape {y.shape} != logits shape {logits.shape}")
    if np.any(y < 0.0) or np.any(y > 1.0):
        raise ValueError("targets must lie in [0, 1]")
    if known_mask is None:
        known = np.ones(logits.shape, dtype=bool)
    else:
        known = np.asarray(known_mask, dtype=bool)
        if known.shape != logits.shape:
            raise ShapeError("mask shape must match logits shape")
    n_known = int(known.sum())
    if n_known == 0:
        raise EmptyLossError("all (sample, label) pairs are masked")

    x = logits.data
    elem = np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))
    loss = (elem * known).sum() / n_known

    def factory(node):
        def backward():
            if logits.requires_grad:
                g = (sigmoid_array(x) - y) * known / n_known
                logits.accumulate_grad(node.grad * g)

        return backward

    return make_op(np.asarray(loss, dtype=logits.dtype), (logits,), factory)


# -- layers --------------------------------------------------------------------


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Conv2d:
    """Convolution layer; padding defaults to (k - 1) // 2 ("same")."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        k: int,
        stride: int = 1,
        padding: int | None = None,
        bias: bool = False,
        rng: np.random.Generator | None = None,
        dtype=np.float32,
    ):
        self.stride = stride
        self.padding = (k - 1) // 2 if padding is None else padding
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_channels * k * k
        self.weight = Tensor(
            he_normal(rng, (out_channels, in_channels, k, k), fan_in, dtype),
            requires_grad=True,
        )
        self.bias = (
            Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True)
            if bias
            else None
        )

    def __call__(self, x: Tensor) -> Tensor:
        out = conv2d(x, self.weight, stride=self.stride, padding=self.padding)
        if self.bias is not None:
            out = out + self.bias.reshape(1, -1, 1, 1)
        return out

    def parameters(self) -> list[tuple[str, Tensor]]:
        params = [("weight", self.weight)]
        if self.bias is not None:
            params.append(("bias", self.bias))
        return params


class BatchNorm2d:
    """Batch normalization layer owning gamma/beta and running statistics."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        return batchnorm2d(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            mode,
            momentum=self.momentum,
            eps=self.eps,
        )

    def parameters(self) -> list[tuple[str, Tensor]]:
        return [("gamma", self.gamma), ("beta", self.beta)]

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]
