"""Architecture descriptions and builders for the CNN family.

All three families share the same backbone: a 5x5 stride-2 input
convolution, twelve two-conv blocks with 2x2 max pooling after blocks 1,
2 and 4, channel widths (w, w, w, w, 2w, 2w, 2w, 2w, 4w, 4w, 4w, 4w),
and a 1x1 convolution head followed by global average pooling. The
receptive field is controlled by which of the 22 configurable conv slots
(two per block from block 2 on) hold 3x3 filters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

N_SLOTS = 22
MAX_RHO = 21
POOL_AFTER = (1, 2, 4)  # block numbers followed by 2x2 max pooling


@dataclass(frozen=True)
class LayerGeom:
    """Receptive-field-relevant geometry of one layer."""

    kind: str  # "conv" | "pool"
    k: int
    stride: int
    padding: int


@dataclass
class BlockSpec:
    """One backbone block: up to two convolutions plus optional shortcut.

    ``conv1_k``/``conv2_k`` are 1 or 3; ``None`` marks a deleted layer
    (used by the VGG family, which removes convs rather than shrinking
    them). ``shake_branches=2`` duplicates the conv branch and mixes the
    two copies stochastically.
    """

    conv1_k: int | None
    conv2_k: int | None
    channels: int
    followed_by_pool: bool
    residual: bool
    shake_branches: int = 1

    def __post_init__(self):
        for k in (self.conv1_k, self.conv2_k):
            if k is not None and k not in (1, 3):
                raise ValueError(f"block conv filter must be 1 or 3, got {k}")
        if self.shake_branches not in (1, 2):
            raise ValueError("shake_branches must be 1 or 2")
        if self.residual and (self.conv1_k is None or self.conv2_k is None):
            raise ValueError("residual blocks need both convolutions")


@dataclass
class ArchSpec:
    name: str
    n_classes: int
    blocks: list[BlockSpec]
    input_conv_k: int = 5
    input_conv_stride: int = 2
    input_channels: int = 1
    base_width: int = 128

    def __post_init__(self):
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        if len(self.blocks) != 12:
            raise ValueError(f"expected 12 blocks, got {len(self.blocks)}")

    def rf_layers(self) -> list[LayerGeom]:
        """Flatten to the layer sequence that determines the receptive field.

        Convs use "same" padding ((k-1)//2); pools are 2x2 stride 2. The
        1x1 head conv is included: it is the network's last convolutional
        layer, so pooling that precedes it counts toward the maximum RF.
        """
        layers = [
            LayerGeom("conv", self.input_conv_k, self.input_conv_stride,
                      (self.input_conv_k - 1) // 2)
        ]
        for block in self.blocks:
            for k in (block.conv1_k, block.conv2_k):
                if k is not None:
                    layers.append(LayerGeom("conv", k, 1, (k - 1) // 2))
            if block.followed_by_pool:
                layers.append(LayerGeom("pool", 2, 2, 0))
        layers.append(LayerGeom("conv", 1, 1, 0))  # head
        return layers

    # -- text form embedded in checkpoints ------------------------------------

    def to_text(self) -> str:
        lines = [
            "rfcnn-arch v1",
            f"name: {self.name}",
            f"n_classes: {self.n_classes}",
            f"input_channels: {self.input_channels}",
            f"base_width: {self.base_width}",
            f"input_conv: k={self.input_conv_k} stride={self.input_conv_stride}",
        ]
        for number, b in enumerate(self.blocks, start=1):
            k1 = "-" if b.conv1_k is None else str(b.conv1_k)
            k2 = "-" if b.conv2_k is None else str(b.conv2_k)
            lines.append(
                f"block {number}: k1={k1} k2={k2} channels={b.channels}"
                f" pool={'yes' if b.followed_by_pool else 'no'}"
                f" residual={'yes' if b.residual else 'no'}"
                f" branches={b.shake_branches}"
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ArchSpec":
        lines = [ln for ln in text.strip().splitlines() if ln.strip()]
        if not lines or lines[0].strip() != "rfcnn-arch v1":
            raise ValueError("not an architecture text block")
        fields: dict[str, str] = {}
        blocks: list[BlockSpec] = []
        for ln in lines[1:]:
            key, _, value = ln.partition(":")
            key, value = key.strip(), value.strip()
            if key.startswith("block "):
                kv = dict(part.split("=", 1) for part in value.split())
                blocks.append(
                    BlockSpec(
                        conv1_k=None if kv["k1"] == "-" else int(kv["k1"]),
                        conv2_k=None if kv["k2"] == "-" else int(kv["k2"]),
                        channels=int(kv["channels"]),
                        followed_by_pool=kv["pool"] == "yes",
                        residual=kv["residual"] == "yes",
                        shake_branches=int(kv["branches"]),
                    )
                )
            else:
                fields[key] = value
        input_kv = dict(part.split("=", 1) for part in fields["input_conv"].split())
        return cls(
            name=fields["name"],
            n_classes=int(fields["n_classes"]),
            blocks=blocks,
            input_conv_k=int(input_kv["k"]),
            input_conv_stride=int(input_kv["stride"]),
            input_channels=int(fields["input_channels"]),
            base_width=int(fields["base_width"]),
        )


def _block_channels(base_width: int) -> list[int]:
    return [base_width] * 4 + [2 * base_width] * 4 + [4 * base_width] * 4


def _slot_kernels(rho: int) -> list[int]:
    """Filter size of configurable slots 1..22: 3 up to slot rho, 1 after."""
    return [3 if slot <= rho else 1 for slot in range(1, N_SLOTS + 1)]


def _assemble_blocks(
    slot_k: list[int | None],
    base_width: int,
    residual: bool,
    shake_branches: int,
) -> list[BlockSpec]:
    channels = _block_channels(base_width)
    blocks = [
        BlockSpec(3, 1, channels[0], followed_by_pool=True,
                  residual=residual, shake_branches=shake_branches)
    ]
    for number in range(2, 13):
        k1 = slot_k[2 * number - 4]  # slot 2k-3, zero-based
        k2 = slot_k[2 * number - 3]  # slot 2k-2
        blocks.append(
            BlockSpec(
                conv1_k=k1,
                conv2_k=k2,
                channels=channels[number - 1],
                followed_by_pool=number in POOL_AFTER,
                residual=residual,
                shake_branches=shake_branches,
            )
        )
    return blocks


def build_cp_resnet(rho: int, n_classes: int = 10, base_width: int = 128) -> ArchSpec:
    """Residual network whose maximum RF is set by rho (0..21)."""
    if not 0 <= rho <= MAX_RHO:
        raise ValueError(f"rho must be in [0, {MAX_RHO}], got {rho}")
    blocks = _assemble_blocks(_slot_kernels(rho), base_width, residual=True, shake_branches=1)
    return ArchSpec(name=f"cp_resnet(rho={rho})", n_classes=n_classes,
                    blocks=blocks, base_width=base_width)


def build_vgg(n_removed: int, n_classes: int = 10, base_width: int = 128) -> ArchSpec:
    """Plain (non-residual) variant that deletes trailing 3x3 convs.

    The base network keeps 21 of the 22 configurable slots as 3x3 convs;
    a trailing 1x1 slot is not allowed in this family, so the 22nd slot
    is absent from the start and the first removal step is absorbed by
    it. Deeper removals delete 3x3 layers from the back while pooling
    positions stay fixed.
    """
    if not 0 <= n_removed <= N_SLOTS:
        raise ValueError(f"n_removed must be in [0, {N_SLOTS}], got {n_removed}")
    keep = min(N_SLOTS - n_removed, N_SLOTS - 1)
    slot_k: list[int | None] = [3 if slot <= keep else None for slot in range(1, N_SLOTS + 1)]
    blocks = _assemble_blocks(slot_k, base_width, residual=False, shake_branches=1)
    return ArchSpec(name=f"vgg(removed={n_removed})", n_classes=n_classes,
                    blocks=blocks, base_width=base_width)


def build_ss_resnet(rho: int, n_classes: int = 10, base_width: int = 128) -> ArchSpec:
    """CP ResNet with every block duplicated into two shaken branches."""
    if not 0 <= rho <= MAX_RHO:
        raise ValueError(f"rho must be in [0, {MAX_RHO}], got {rho}")
    blocks = _assemble_blocks(_slot_kernels(rho), base_width, residual=True, shake_branches=2)
    return ArchSpec(name=f"ss_resnet(rho={rho})", n_classes=n_classes,
                    blocks=blocks, base_width=base_width)


BUILDERS = {
    "cp_resnet": build_cp_resnet,
    "vgg": build_vgg,
    "ss_resnet": build_ss_resnet,
}
