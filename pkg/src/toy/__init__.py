"""
玩具世界 - 渲染、DPTOY 数据集与解析指标
"""

from .world import (
    Sample,
    make_identity,
    make_identities,
    render_sample,
    render_reference,
)
from .dataset import (
    ToyDataset,
    build_dataset,
    make_dataset,
    encode_dataset,
    decode_dataset,
    write_dataset,
    read_dataset,
)
from .metrics import face_score, text_match_score, classify, face_region, score_image

__all__ = [
    "Sample",
    "make_identity",
    "make_identities",
    "render_sample",
    "render_reference",
    "ToyDataset",
    "build_dataset",
    "make_dataset",
    "encode_dataset",
    "decode_dataset",
    "write_dataset",
    "read_dataset",
    "face_score",
    "text_match_score",
    "classify",
    "face_region",
    "score_image",
]
