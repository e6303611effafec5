"""
数据模型定义 - 玩具世界词表、身份、报告与评估记录
"""

from __future__ import annotations
from enum import Enum
from typing import Optional
from pydantic import BaseModel, Field, field_validator, model_validator
import ulid


def generate_run_id(prefix: str = "run") -> str:
    """生成 ULID 格式的运行 ID"""
    return f"{prefix}_{ulid.new().str}" if prefix else ulid.new().str


# ============ 词表 ============

NULL_TOKEN = 0


class Background(str, Enum):
    RED = "red"
    GREEN = "green"
    BLUE = "blue"
    STRIPED = "striped"


class Placement(str, Enum):
    LEFT = "left"
    CENTER = "center"
    RIGHT = "right"


class FaceSize(str, Enum):
    SMALL = "small"
    LARGE = "large"


# token id 固定，跨运行稳定
_VOCAB: list[Enum] = [*Background, *Placement, *FaceSize]
TOKEN_IDS: dict[Enum, int] = {word: i + 1 for i, word in enumerate(_VOCAB)}
ID_TO_WORD: dict[int, Enum] = {i: word for word, i in TOKEN_IDS.items()}
VOCAB_SIZE = len(_VOCAB) + 1
CAPTION_LENGTH = 3


# ============ 配置枚举 ============

class AdapterRole(str, Enum):
    IEA = "iea"   # 身份增强
    TCA = "tca"   # 文本一致性


class FusionMode(str, Enum):
    BLENDED = "blended"          # 特征级融合
    INDEPENDENT = "independent"  # 仅噪声空间融合


class PathwaySelection(str, Enum):
    DUAL = "dual"
    IEA_ONLY = "iea_only"
    TCA_ONLY = "tca_only"


class ThresholdMethod(str, Enum):
    FIXED = "fixed"
    OTSU = "otsu"


# ============ 身份与描述 ============

class Caption(BaseModel):
    """玩具描述：背景 + 位置 + 尺寸"""
    background: Background
    placement: Placement
    size: FaceSize

    def tokens(self) -> list[int]:
        return [TOKEN_IDS[self.background], TOKEN_IDS[self.placement], TOKEN_IDS[self.size]]

    def token_key(self) -> str:
        """CSV 中使用的 token 串，如 1-5-8"""
        return "-".join(str(t) for t in self.tokens())

    @classmethod
    def from_tokens(cls, tokens: list[int]) -> "Caption":
        if len(tokens) != CAPTION_LENGTH:
            raise ValueError(f"caption needs {CAPTION_LENGTH} tokens, got {len(tokens)}")
        words = [ID_TO_WORD.get(int(t)) for t in tokens]
        return cls(background=words[0], placement=words[1], size=words[2])

    @classmethod
    def parse(cls, text: str) -> "Caption":
        """解析 "red,left,small" 或 token 串 "1-5-8" """
        text = text.strip()
        if "-" in text and all(part.isdigit() for part in text.split("-")):
            return cls.from_tokens([int(part) for part in text.split("-")])
        words = [w.strip().lower() for w in text.replace(" ", ",").split(",") if w.strip()]
        if len(words) != CAPTION_LENGTH:
            raise ValueError(f"caption needs background,placement,size; got '{text}'")
        return cls(background=words[0], placement=words[1], size=words[2])

    @classmethod
    def all(cls) -> list["Caption"]:
        """按固定顺序枚举全部描述"""
        return [
            cls(background=b, placement=p, size=s)
            for b in Background for p in Placement for s in FaceSize
        ]

    def text(self) -> str:
        return f"a {self.size.value} face, {self.placement.value}, on {self.background.value} background"


RGB = tuple[float, float, float]


class IdentitySpec(BaseModel):
    """玩具身份：脸部颜色 + 眼睛颜色"""
    id: int = Field(ge=0)
    face_color: RGB
    eye_color: RGB

    @field_validator("face_color", "eye_color")
    @classmethod
    def _in_range(cls, value: RGB) -> RGB:
        if any(not -1.0 <= c <= 1.0 for c in value):
            raise ValueError(f"color components must lie in [-1, 1]: {value}")
        return value

    @model_validator(mode="after")
    def _separable(self) -> "IdentitySpec":
        gap = max(abs(f - e) for f, e in zip(self.face_color, self.eye_color))
        if gap < 0.5:
            raise ValueError(f"face and eye colors too close (L∞={gap:.3f} < 0.5)")
        return self


# ============ 报告模型 ============

class MaskStats(BaseModel):
    """推断掩码统计"""
    coverage: float
    threshold: float
    components: int
    fallback: bool = False
    bbox: Optional[tuple[int, int, int, int]] = None


class GenerationReport(BaseModel):
    """单次生成报告"""
    run_id: str = Field(default_factory=generate_run_id)
    seed: int
    caption: str
    identity_id: Optional[int] = None
    pathways: PathwaySelection
    mode: FusionMode
    training_free: bool = False
    face_score: float
    text_match: float
    mask: MaskStats
    timings: dict[str, float] = Field(default_factory=dict)


class EvalRow(BaseModel):
    """评估表的一行，列顺序固定"""
    identity_id: int
    caption_tokens: str
    face_score: float
    text_match: float
    seed: int


class AblationRow(BaseModel):
    setting: str
    face_score: float
    text_match: float
    n: int


class SweepRow(BaseModel):
    alpha: float
    face_score: float
    text_match: float
    n: int


class GradCheckEntry(BaseModel):
    name: str
    index: int
    analytic: float
    numeric: float
    rel_error: float


class GradCheckReport(BaseModel):
    """有限差分梯度检查报告"""
    epsilon: float
    entries: list[GradCheckEntry] = Field(default_factory=list)
    max_rel_error: float = 0.0
    max_abs_grad: float = 0.0
    checked_groups: list[str] = Field(default_factory=list)
    frozen_groups: list[str] = Field(default_factory=list)
