"""
DPCKPT 检查点 - 有序命名张量的二进制读写

布局（小端）：
  头部   magic "DPCKPT" | version u16 | count u32
  条目   name_len u16 | name UTF-8 | dtype u8 | rank u8 | dims u32×rank | payload f32
"""

from __future__ import annotations
import hashlib
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np
import torch
from torch import Tensor

from .errors import CheckpointError

MAGIC = b"DPCKPT"
VERSION = 1
DTYPE_F32 = 0
VALID_PREFIXES = ("base.", "iea.", "tca.")

_HEADER = struct.Struct("<6sHI")
_U16 = struct.Struct("<H")
_META = struct.Struct("<BB")


def _check_name(name: str):
    if not name.startswith(VALID_PREFIXES):
        raise CheckpointError(f"entry '{name}' is not in base.* / iea.* / tca.*")


def encode_checkpoint(entries: dict[str, Tensor]) -> bytes:
    parts = [_HEADER.pack(MAGIC, VERSION, len(entries))]
    for name, tensor in entries.items():
        _check_name(name)
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise CheckpointError(f"entry name too long: {name[:40]}...")
        array = tensor.detach().cpu().to(torch.float32).contiguous().numpy()
        parts.append(_U16.pack(len(raw)))
        parts.append(raw)
        parts.append(_META.pack(DTYPE_F32, array.ndim))
        parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
        parts.append(array.astype("<f4").tobytes())
    return b"".join(parts)


def decode_checkpoint(data: bytes) -> "OrderedDict[str, Tensor]":
    def need(offset: int, size: int):
        if offset + size > len(data):
            raise CheckpointError("checkpoint truncated")

    need(0, _HEADER.size)
    magic, version, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported DPCKPT version {version}")

    entries: OrderedDict[str, Tensor] = OrderedDict()
    offset = _HEADER.size
    for _ in range(count):
        need(offset, _U16.size)
        (name_len,) = _U16.unpack_from(data, offset)
        offset += _U16.size
        need(offset, name_len)
        try:
            name = data[offset:offset + name_len].decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointError("entry name is not UTF-8") from e
        offset += name_len
        _check_name(name)

        need(offset, _META.size)
        dtype, rank = _META.unpack_from(data, offset)
        offset += _META.size
        if dtype != DTYPE_F32:
            raise CheckpointError(f"unsupported dtype code {dtype} for '{name}'")
        need(offset, 4 * rank)
        dims = struct.unpack_from(f"<{rank}I", data, offset)
        offset += 4 * rank

        numel = int(np.prod(dims)) if rank else 1
        need(offset, 4 * numel)
        array = np.frombuffer(data, dtype="<f4", count=numel, offset=offset).reshape(dims)
        offset += 4 * numel
        if name in entries:
            raise CheckpointError(f"duplicate entry '{name}'")
        entries[name] = torch.from_numpy(array.astype(np.float32))

    if offset != len(data):
        raise CheckpointError(f"{len(data) - offset} trailing bytes after last entry")
    return entries


def save_checkpoint(entries: dict[str, Tensor], path: Path) -> str:
    """写出检查点，返回 sha256"""
    data = encode_checkpoint(entries)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path: Path) -> "OrderedDict[str, Tensor]":
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes())


def checkpoint_groups(entries: dict[str, Tensor]) -> list[str]:
    """出现过的参数组，按出现顺序"""
    groups: list[str] = []
    for name in entries:
        group = name.split(".", 1)[0]
        if group not in groups:
            groups.append(group)
    return groups
