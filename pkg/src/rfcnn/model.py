"""Runnable models built from an ArchSpec.

Ordering inside a block is conv -> batchnorm -> ReLU; the residual sum has
no activation after it, so a block whose conv weights are all zero
computes the identity (batchnorm of a zero map is zero while beta stays
zero). Channel transitions put a 1x1 projection on the identity branch.
Shake blocks run two structurally identical conv branches and mix them
with per-sample coefficients; the identity branch is never shaken.
"""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .arch import ArchSpec, BlockSpec
from .nn import BatchNorm2d, Conv2d, conv2d, global_avg_pool, maxpool2d
from .shake import sample_coefficients, shake_combine
from .tensor import Tensor, relu


class _ConvBranch:
    """conv1 -> bn1 -> relu -> conv2 -> bn2 (either conv may be absent)."""

    def __init__(self, in_channels: int, block: BlockSpec, rng, dtype):
        self.conv1 = self.bn1 = self.conv2 = self.bn2 = None
        channels = in_channels
        if block.conv1_k is not None:
            self.conv1 = Conv2d(channels, block.channels, block.conv1_k, rng=rng, dtype=dtype)
            self.bn1 = BatchNorm2d(block.channels, dtype=dtype)
            channels = block.channels
        if block.conv2_k is not None:
            self.conv2 = Conv2d(channels, block.channels, block.conv2_k, rng=rng, dtype=dtype)
            self.bn2 = BatchNorm2d(block.channels, dtype=dtype)
            channels = block.channels
        self.out_channels = channels

    def __call__(self, x: Tensor, mode: str, final_relu: bool) -> Tensor:
        out = x
        if self.conv1 is not None:
            out = self.bn1(self.conv1(out), mode)
            if self.conv2 is not None or final_relu:
                out = relu(out)
        if self.conv2 is not None:
            out = self.bn2(self.conv2(out), mode)
            if final_relu:
                out = relu(out)
        return out

    def named_modules(self):
        mods = []
        if self.conv1 is not None:
            mods += [("conv1", self.conv1), ("bn1", self.bn1)]
        if self.conv2 is not None:
            mods += [("conv2", self.conv2), ("bn2", self.bn2)]
        return mods


class _Block:
    def __init__(self, in_channels: int, block: BlockSpec, rng, dtype):
        self.spec = block
        self.branches = [
            _ConvBranch(in_channels, block, rng, dtype)
            for _ in range(block.shake_branches)
        ]
        self.out_channels = self.branches[0].out_channels
        self.proj = None
        if block.residual and in_channels != self.out_channels:
            self.proj = Conv2d(in_channels, self.out_channels, 1, rng=rng, dtype=dtype)

    def __call__(self, x: Tensor, mode: str, shake_rng) -> Tensor:
        if not self.spec.residual:
            return self.branches[0](x, mode, final_relu=True)
        identity = self.proj(x) if self.proj is not None else x
        if self.spec.shake_branches == 1:
            return identity + self.branches[0](x, mode, final_relu=False)
        b1 = self.branches[0](x, mode, final_relu=False)
        b2 = self.branches[1](x, mode, final_relu=False)
        coeffs = sample_coefficients(x.shape[0], shake_rng, mode=mode)
        return shake_combine(identity, b1, b2, coeffs)

    def named_modules(self):
        mods = []
        if len(self.branches) == 1:
            mods += self.branches[0].named_modules()
        else:
            for label, branch in zip(("a", "b"), self.branches):
                mods += [(f"{label}.{n}", m) for n, m in branch.named_modules()]
        if self.proj is not None:
            mods.append(("proj", self.proj))
        return mods


class Model:
    """Forward-capable network with named parameters.

    ``forward`` returns logits of shape (N, n_classes); apply a sigmoid
    for probabilities. ``mode`` is "train" or "eval"; train-mode shake
    blocks need ``shake_seed`` (a numpy SeedSequence) from which each
    block receives its own substream.
    """

    def __init__(self, spec: ArchSpec, seed: int, dtype=np.float32):
        self.spec = spec
        self.seed = seed
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        self.input_conv = Conv2d(
            spec.input_channels, spec.base_width, spec.input_conv_k,
            stride=spec.input_conv_stride, rng=rng, dtype=dtype,
        )
        self.input_bn = BatchNorm2d(spec.base_width, dtype=dtype)
        self.blocks: list[_Block] = []
        channels = spec.base_width
        for block_spec in spec.blocks:
            block = _Block(channels, block_spec, rng, dtype)
            self.blocks.append(block)
            channels = block.out_channels
        self.head = Conv2d(channels, spec.n_classes, 1, bias=True, rng=rng, dtype=dtype)
        self.n_shake_blocks = sum(1 for b in self.blocks if b.spec.shake_branches == 2)

    def forward(self, x: Tensor, mode: str = "train",
                shake_seed: np.random.SeedSequence | None = None) -> Tensor:
        if mode not in ("train", "eval"):
            raise ValueError(f"unknown mode {mode!r}")
        if mode == "train" and self.n_shake_blocks and shake_seed is None:
            raise ValueError("train-mode forward of a shake network needs shake_seed")
        if self.n_shake_blocks and shake_seed is not None:
            children = shake_seed.spawn(self.n_shake_blocks)
            rngs = [np.random.Generator(np.random.PCG64(c)) for c in children]
        else:
            rngs = []
        rng_iter = iter(rngs)

        out = relu(self.input_bn(self.input_conv(x), mode))
        for block in self.blocks:
            shake_rng = None
            if block.spec.shake_branches == 2 and mode == "train":
                shake_rng = next(rng_iter, None)
            out = block(out, mode, shake_rng)
            if block.spec.followed_by_pool:
                out = maxpool2d(out, 2, 2)
        logits = global_avg_pool(self.head(out))
        return logits

    __call__ = forward

    # -- named arrays ----------------------------------------------------------

    def named_modules(self):
        mods = [("input_conv", self.input_conv), ("input_bn", self.input_bn)]
        for number, block in enumerate(self.blocks, start=1):
            mods += [(f"block{number:02d}.{n}", m) for n, m in block.named_modules()]
        mods.append(("head", self.head))
        return mods

    def parameters(self) -> "OrderedDict[str, Tensor]":
        params: OrderedDict[str, Tensor] = OrderedDict()
        for prefix, module in self.named_modules():
            for name, tensor in module.parameters():
                params[f"{prefix}.{name}"] = tensor
        return params

    def state_arrays(self) -> "OrderedDict[str, np.ndarray]":
        """Non-trainable arrays (batchnorm running statistics)."""
        arrays: OrderedDict[str, np.ndarray] = OrderedDict()
        for prefix, module in self.named_modules():
            if isinstance(module, BatchNorm2d):
                for name, arr in module.state_arrays():
                    arrays[f"{prefix}.{name}"] = arr
        return arrays

    def num_parameters(self) -> int:
        return sum(t.size for t in self.parameters().values())

    def zero_grad(self) -> None:
        for tensor in self.parameters().values():
            tensor.zero_grad()


def instantiate(spec: ArchSpec, seed: int, dtype=np.float32) -> Model:
    """Allocate a runnable model with He fan-in conv init from the seed."""
    return Model(spec, seed, dtype=dtype)
