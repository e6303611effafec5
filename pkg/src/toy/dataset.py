"""
DPTOY 数据集 - 生成与二进制读写

布局（小端）：
  头部   magic "DPTOY\\0" | version u16 | count u32
  样本   face_color f32×3 | eye_color f32×3 | id u32
         caption token u16×3 | bbox u16×4
         mask packbits（S·S 位）| image f32 H×W×3
"""

from __future__ import annotations
import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
import torch
from torch import Tensor

from ..errors import DatasetFormatError, StateError
from ..models import CAPTION_LENGTH, Caption, IdentitySpec
from .world import BASE_SIZE, Sample, make_identities, render_sample

MAGIC = b"DPTOY\x00"
VERSION = 1
IMAGE_SIZE = BASE_SIZE

_HEADER = struct.Struct("<6sHI")
_IDENTITY = struct.Struct("<6fI")
_CAPTION = struct.Struct(f"<{CAPTION_LENGTH}H")
_BBOX = struct.Struct("<4H")
_MASK_BYTES = (IMAGE_SIZE * IMAGE_SIZE + 7) // 8
_IMAGE_BYTES = IMAGE_SIZE * IMAGE_SIZE * 3 * 4


@dataclass
class ToyDataset:
    """内存中的样本集合"""
    samples: list[Sample] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.samples)

    def __getitem__(self, index: int) -> Sample:
        return self.samples[index]

    def stack(self) -> dict[str, Tensor]:
        """images (N,3,S,S) / masks (N,1,S,S) / tokens (N,3)"""
        if not self.samples:
            raise StateError("dataset is empty")
        return {
            "images": torch.stack([s.image for s in self.samples]),
            "masks": torch.stack([s.face_mask for s in self.samples]).unsqueeze(1),
            "tokens": torch.tensor([s.caption.tokens() for s in self.samples], dtype=torch.long),
        }

    def identities(self) -> list[IdentitySpec]:
        """按首次出现顺序去重"""
        seen: dict[int, IdentitySpec] = {}
        for s in self.samples:
            seen.setdefault(s.identity.id, s.identity)
        return list(seen.values())

    def reference_for(self, identity_id: int) -> Sample:
        for s in self.samples:
            if s.identity.id == identity_id:
                return s
        raise StateError(f"no sample for identity {identity_id}")


# ============ 生成 ============

def sample_seed(seed: int, identity_index: int, sample_index: int) -> int:
    return int(np.random.SeedSequence([seed, identity_index, sample_index]).generate_state(1)[0])


def build_dataset(
    n_identities: int,
    n_samples_per_identity: int,
    seed: int,
    image_size: int = IMAGE_SIZE,
) -> ToyDataset:
    """
    确定性枚举身份与描述

    每个身份按自己的随机排列轮流取全部 24 种描述，保证背景等属性均衡出现。
    """
    captions = Caption.all()
    samples = []
    for identity in make_identities(n_identities):
        order = np.random.default_rng([seed, identity.id]).permutation(len(captions))
        for j in range(n_samples_per_identity):
            caption = captions[int(order[j % len(captions)])]
            samples.append(
                render_sample(identity, caption, sample_seed(seed, identity.id, j), image_size)
            )
    return ToyDataset(samples)


# ============ 二进制读写 ============

def encode_dataset(dataset: ToyDataset) -> bytes:
    parts = [_HEADER.pack(MAGIC, VERSION, len(dataset))]
    for s in dataset:
        if s.size != IMAGE_SIZE:
            raise DatasetFormatError(
                f"DPTOY v{VERSION} stores {IMAGE_SIZE}x{IMAGE_SIZE} images, got {s.size}"
            )
        ident = s.identity
        parts.append(_IDENTITY.pack(*ident.face_color, *ident.eye_color, ident.id))
        parts.append(_CAPTION.pack(*s.caption.tokens()))
        parts.append(_BBOX.pack(*s.face_bbox))
        parts.append(np.packbits(s.face_mask.numpy().astype(bool).ravel()).tobytes())
        hwc = s.image.permute(1, 2, 0).contiguous().numpy()
        parts.append(hwc.astype("<f4").tobytes())
    return b"".join(parts)


def decode_dataset(data: bytes) -> ToyDataset:
    if len(data) < _HEADER.size:
        raise DatasetFormatError("file too short for DPTOY header")
    magic, version, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise DatasetFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise DatasetFormatError(f"unsupported DPTOY version {version}")

    record = _IDENTITY.size + _CAPTION.size + _BBOX.size + _MASK_BYTES + _IMAGE_BYTES
    expected = _HEADER.size + count * record
    if len(data) != expected:
        raise DatasetFormatError(f"expected {expected} bytes for {count} samples, got {len(data)}")

    samples = []
    offset = _HEADER.size
    for _ in range(count):
        *colors, ident_id = _IDENTITY.unpack_from(data, offset)
        offset += _IDENTITY.size
        tokens = list(_CAPTION.unpack_from(data, offset))
        offset += _CAPTION.size
        bbox = _BBOX.unpack_from(data, offset)
        offset += _BBOX.size
        bits = np.frombuffer(data, dtype=np.uint8, count=_MASK_BYTES, offset=offset)
        offset += _MASK_BYTES
        pixels = np.frombuffer(data, dtype="<f4", count=_IMAGE_BYTES // 4, offset=offset)
        offset += _IMAGE_BYTES

        mask = np.unpackbits(bits)[: IMAGE_SIZE * IMAGE_SIZE].reshape(IMAGE_SIZE, IMAGE_SIZE)
        image = pixels.reshape(IMAGE_SIZE, IMAGE_SIZE, 3).transpose(2, 0, 1).astype(np.float32)
        try:
            identity = IdentitySpec(id=ident_id, face_color=tuple(colors[:3]), eye_color=tuple(colors[3:]))
            caption = Caption.from_tokens(tokens)
        except ValueError as e:
            raise DatasetFormatError(f"invalid sample record: {e}") from e
        samples.append(Sample(
            image=torch.from_numpy(np.ascontiguousarray(image)),
            face_mask=torch.from_numpy(mask.astype(np.float32)),
            face_bbox=tuple(int(v) for v in bbox),
            identity=identity,
            caption=caption,
        ))
    return ToyDataset(samples)


def write_dataset(dataset: ToyDataset, path: Path) -> str:
    """写出 DPTOY 文件，返回内容的 sha256"""
    data = encode_dataset(dataset)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def read_dataset(path: Path) -> ToyDataset:
    return decode_dataset(Path(path).read_bytes())


def make_dataset(
    n_identities: int,
    n_samples_per_identity: int,
    seed: int,
    path: Optional[Path] = None,
) -> bytes:
    """生成数据集并返回 DPTOY 字节；给定 path 时同时写盘"""
    data = encode_dataset(build_dataset(n_identities, n_samples_per_identity, seed))
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    return data
