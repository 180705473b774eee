"""Receptive-field analysis: the stride/RF recursion and an empirical oracle.

Walking the layer sequence with cumulative stride S (product of strides
applied so far) gives, for a layer with filter size k:

    RF <- RF + (k - 1) * S        (S taken before this layer's stride)
    S  <- S * stride

starting from RF = S = 1. The increment uses the pre-layer S because the
spacing of the *previous* layer's neurons in input pixels is what a new
filter tap bridges; a single 5x5 conv has RF 5 regardless of its stride.
Max-pool layers enter the recursion like any layer (k=2, s=2), and the
maximum RF of a network is the RF of its last convolutional layer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .arch import ArchSpec, LayerGeom, MAX_RHO, build_cp_resnet
from .errors import ClippedReceptiveFieldError
from .tensor import Tensor
from .nn import conv2d


@dataclass(frozen=True)
class LayerTrace:
    layer_index: int
    kind: str  # "conv" | "pool"
    k: int
    stride: int
    cumulative_stride: int  # product of strides up to and including this layer
    rf: int  # receptive field of this layer's neurons, in input pixels


@dataclass(frozen=True)
class RFReport:
    network_name: str
    traces: tuple[LayerTrace, ...]
    max_rf: int


def _as_geometry(spec: ArchSpec | Sequence[LayerGeom]) -> list[LayerGeom]:
    if isinstance(spec, ArchSpec):
        return spec.rf_layers()
    return list(spec)


def compute_rf(spec: ArchSpec | Sequence[LayerGeom], network_name: str | None = None) -> RFReport:
    """Trace the RF recursion over a spec or a raw layer-geometry sequence."""
    layers = _as_geometry(spec)
    if not any(layer.kind == "conv" for layer in layers):
        raise ValueError("spec contains no convolutional layer")
    name = network_name or (spec.name if isinstance(spec, ArchSpec) else "custom")
    traces: list[LayerTrace] = []
    stride_product = 1
    rf = 1
    for index, layer in enumerate(layers, start=1):
        rf = rf + (layer.k - 1) * stride_product
        stride_product *= layer.stride
        traces.append(
            LayerTrace(
                layer_index=index,
                kind=layer.kind,
                k=layer.k,
                stride=layer.stride,
                cumulative_stride=stride_product,
                rf=rf,
            )
        )
    return RFReport(network_name=name, traces=tuple(traces), max_rf=traces[-1].rf)


def rf_for_rho(rho: int) -> int:
    """Maximum RF of the residual family at a given rho (0..21)."""
    if not 0 <= rho <= MAX_RHO:
        raise ValueError(f"rho must be in [0, {MAX_RHO}], got {rho}")
    return compute_rf(build_cp_resnet(rho, n_classes=1)).max_rf


def inverse_rho(target_rf: int) -> int:
    """Largest rho whose maximum RF does not exceed target_rf."""
    smallest = rf_for_rho(0)
    if target_rf < smallest:
        raise ValueError(
            f"no rho reaches an RF this small (minimum is {smallest}, got {target_rf})"
        )
    best = 0
    for rho in range(MAX_RHO + 1):
        if rf_for_rho(rho) <= target_rf:
            best = rho
    return best


def empirical_rf(spec: ArchSpec | Sequence[LayerGeom], input_size: int) -> int:
    """Measure the RF as the gradient support of one central output neuron.

    Builds the layer geometry as a single-channel chain of positive-weight
    convolutions (sum pooling replaces max pooling, activations are the
    identity) so no path can vanish or cancel, backpropagates from the
    central neuron of the last layer, and returns the side length of the
    bounding box of nonzero input gradient.
    """
    layers = _as_geometry(spec)
    analytic = compute_rf(layers).max_rf
    if input_size <= analytic:
        raise ClippedReceptiveFieldError(
            f"input {input_size} cannot contain the {analytic}-pixel receptive field"
        )
    x = Tensor(np.ones((1, 1, input_size, input_size), dtype=np.float64), requires_grad=True)
    out = x
    for layer in layers:
        k = layer.k
        weight = Tensor(np.full((1, 1, k, k), 1.0 / (k * k), dtype=np.float64))
        out = conv2d(out, weight, stride=layer.stride, padding=layer.padding)
    _, _, h, w = out.shape
    center = out.data * 0.0
    center[0, 0, h // 2, w // 2] = 1.0
    picked = (out * Tensor(center)).sum()
    picked.backward()
    support = x.grad[0, 0] > 0.0
    rows = np.flatnonzero(support.any(axis=1))
    cols = np.flatnonzero(support.any(axis=0))
    height = int(rows[-1] - rows[0] + 1)
    width = int(cols[-1] - cols[0] + 1)
    return max(height, width)
