"""Binary checkpoint container ("RFCNN1").

Layout, all integers little-endian:

    magic            6 bytes  b"RFCNN1"
    version          u16      1
    arch text        u32 length + utf-8 payload (ArchSpec.to_text)
    model arrays     u32 count, then records
    moment arrays    u32 count, then records (adam_m.<name>, adam_v.<name>)
    step_count       u64

Record: u32 name length, utf-8 name, u32 rank, u32 extents (rank of
them), float32 row-major payload. Model arrays cover trainable
parameters and batchnorm running statistics, in model order. Round trips
are byte-exact: parse followed by serialize reproduces the input.
"""

from __future__ import annotations

import io
import struct
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .arch import ArchSpec
from .model import Model, instantiate
from .optim import Adam

_MAGIC = b"RFCNN1"
_VERSION = 1


@dataclass
class Checkpoint:
    spec: ArchSpec
    arrays: "OrderedDict[str, np.ndarray]"
    moments: "OrderedDict[str, np.ndarray]"
    step_count: int


def _write_record(buf: io.BytesIO, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)
    arr = np.ascontiguousarray(arr, dtype="<f4")
    buf.write(struct.pack("<I", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(arr.tobytes())


def _read_record(data: bytes, offset: int) -> tuple[str, np.ndarray, int]:
    (name_len,) = struct.unpack_from("<I", data, offset)
    offset += 4
    name = data[offset : offset + name_len].decode("utf-8")
    offset += name_len
    (rank,) = struct.unpack_from("<I", data, offset)
    offset += 4
    extents = struct.unpack_from(f"<{rank}I", data, offset)
    offset += 4 * rank
    count = int(np.prod(extents)) if rank else 1
    arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(extents).copy()
    offset += 4 * count
    return name, arr, offset


def serialize(arch_text: str, arrays, moments, step_count: int) -> bytes:
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<H", _VERSION))
    raw = arch_text.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        _write_record(buf, name, arr)
    buf.write(struct.pack("<I", len(moments)))
    for name, arr in moments.items():
        _write_record(buf, name, arr)
    buf.write(struct.pack("<Q", step_count))
    return buf.getvalue()


def parse(data: bytes) -> Checkpoint:
    if data[:6] != _MAGIC:
        raise ValueError("not an RFCNN1 checkpoint")
    offset = 6
    (version,) = struct.unpack_from("<H", data, offset)
    offset += 2
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (arch_len,) = struct.unpack_from("<I", data, offset)
    offset += 4
    arch_text = data[offset : offset + arch_len].decode("utf-8")
    offset += arch_len
    arrays: OrderedDict[str, np.ndarray] = OrderedDict()
    (n_arrays,) = struct.unpack_from("<I", data, offset)
    offset += 4
    for _ in range(n_arrays):
        name, arr, offset = _read_record(data, offset)
        arrays[name] = arr
    moments: OrderedDict[str, np.ndarray] = OrderedDict()
    (n_moments,) = struct.unpack_from("<I", data, offset)
    offset += 4
    for _ in range(n_moments):
        name, arr, offset = _read_record(data, offset)
        moments[name] = arr
    (step_count,) = struct.unpack_from("<Q", data, offset)
    return Checkpoint(
        spec=ArchSpec.from_text(arch_text),
        arrays=arrays,
        moments=moments,
        step_count=step_count,
    )


def checkpoint_bytes(model: Model, optimizer: Adam | None = None) -> bytes:
    arrays: OrderedDict[str, np.ndarray] = OrderedDict()
    for name, tensor in model.parameters().items():
        arrays[name] = tensor.data
    for name, arr in model.state_arrays().items():
        arrays[name] = arr
    moments: OrderedDict[str, np.ndarray] = OrderedDict()
    step_count = 0
    if optimizer is not None:
        for name, arr in optimizer.m.items():
            moments[f"adam_m.{name}"] = arr
        for name, arr in optimizer.v.items():
            moments[f"adam_v.{name}"] = arr
        step_count = optimizer.step_count
    return serialize(model.spec.to_text(), arrays, moments, step_count)


def save_checkpoint(path, model: Model, optimizer: Adam | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model, optimizer))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return parse(fh.read())


def restore_model(ckpt: Checkpoint, dtype=np.float32) -> Model:
    """Rebuild a model and overwrite every named array from the checkpoint."""
    model = instantiate(ckpt.spec, seed=0, dtype=dtype)
    params = model.parameters()
    states = model.state_arrays()
    for name, arr in ckpt.arrays.items():
        if name in params:
            if params[name].shape != arr.shape:
                raise ValueError(f"shape mismatch for {name}")
            params[name].data = arr.astype(dtype)
        elif name in states:
            states[name][...] = arr.astype(dtype)
        else:
            raise ValueError(f"checkpoint array {name!r} not present in the model")
    missing = (set(params) | set(states)) - set(ckpt.arrays)
    if missing:
        raise ValueError(f"checkpoint is missing arrays: {sorted(missing)}")
    return model


def restore_optimizer(ckpt: Checkpoint, model: Model, lr: float) -> Adam:
    optimizer = Adam(model.parameters(), lr=lr)
    optimizer.step_count = ckpt.step_count
    for name in optimizer.m:
        m_key, v_key = f"adam_m.{name}", f"adam_v.{name}"
        if m_key in ckpt.moments:
            optimizer.m[name] = ckpt.moments[m_key].astype(model.dtype)
            optimizer.v[name] = ckpt.moments[v_key].astype(model.dtype)
    return optimizer
