"""
运行配置 - 嵌套 pydantic 模型 + 扁平点分键 JSON
"""

from __future__ import annotations
import json
from pathlib import Path
from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError
from .models import FusionMode, PathwaySelection, ThresholdMethod, VOCAB_SIZE


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class ScheduleConfig(_Section):
    T: int = Field(1000, ge=2)
    beta_start: float = 1e-4
    beta_end: float = 0.02


class SamplerConfig(_Section):
    steps: int = Field(50, ge=1)
    eta: float = Field(0.0, ge=0.0)
    guidance_scale: float = 5.0
    per_pathway_cfg: bool = False


class BackboneConfig(_Section):
    image_size: int = 32
    base_channels: int = 32
    channel_multipliers: list[int] = Field(default_factory=lambda: [1, 2, 4])
    # 施加交叉注意力的层级下标（0 为最高分辨率）
    attention_levels: list[int] = Field(default_factory=lambda: [1, 2])
    heads: int = 2
    text_embed_dim: int = 32
    time_embed_dim: int = 128
    vocab_size: int = VOCAB_SIZE
    max_text_len: int = Field(8, ge=3)

    @model_validator(mode="after")
    def _check_levels(self) -> "BackboneConfig":
        n = len(self.channel_multipliers)
        if n == 0:
            raise ValueError("channel_multipliers must not be empty")
        if not self.attention_levels:
            raise ValueError("at least one attention level is required")
        if any(not 0 <= lvl < n for lvl in self.attention_levels):
            raise ValueError(f"attention_levels must index channel_multipliers (0..{n - 1})")
        if self.image_size % (2 ** (n - 1)) != 0:
            raise ValueError("level resolutions must divide image_size")
        return self

    def resolutions(self) -> list[int]:
        return [self.image_size // (2 ** i) for i in range(len(self.channel_multipliers))]


class AdapterConfig(_Section):
    embed_dim: int = 48
    n_tokens: int = 4
    hidden_dim: int = 128
    token_dim: int = 64
    iea_alpha: float = Field(1.0, ge=0.0)
    tca_alpha: float = Field(0.5, ge=0.0)
    flip_prob: float = Field(0.5, ge=0.0, le=1.0)


class FusionConfig(_Section):
    mode: FusionMode = FusionMode.BLENDED
    training_free: bool = False
    alpha_strong: float = Field(1.0, ge=0.0)
    alpha_weak: float = Field(0.5, ge=0.0)
    private_streams: bool = False
    pathways: PathwaySelection = PathwaySelection.DUAL


class MaskConfig(_Section):
    method: ThresholdMethod = ThresholdMethod.OTSU
    threshold: float = Field(0.5, ge=0.0, le=1.0)
    connectivity: int = 4
    # None 表示全部步 / 全部 adapter 层
    record_steps: Optional[list[int]] = None
    record_layers: Optional[list[str]] = None
    fallback_fraction: float = Field(0.25, gt=0.0, le=1.0)

    @model_validator(mode="after")
    def _check_connectivity(self) -> "MaskConfig":
        if self.connectivity not in (4, 8):
            raise ValueError("connectivity must be 4 or 8")
        return self


class TrainingConfig(_Section):
    lr: float = Field(1e-3, gt=0.0)
    batch_size: int = Field(4, ge=1)
    base_steps: int = Field(3000, ge=0)
    adapter_steps: int = Field(2000, ge=0)
    cond_dropout: float = Field(0.1, ge=0.0, le=1.0)
    text_drop_prob: float = Field(0.05, ge=0.0, le=1.0)
    image_drop_prob: float = Field(0.05, ge=0.0, le=1.0)
    w_iea: float = 1.0
    w_tca: float = 1.0
    w_fusion: float = 1.0
    strict_routing: bool = True
    fusion_stop_gradient: bool = False
    single_adapter: bool = False
    log_every: int = Field(50, ge=1)


class DataConfig(_Section):
    n_identities: int = Field(30, ge=0)
    samples_per_identity: int = Field(24, ge=0)
    seed: int = 0


class EvalConfig(_Section):
    images_per_prompt: int = Field(4, ge=1)
    captions_per_identity: int = Field(12, ge=1)
    max_identities: Optional[int] = None
    alpha_sweep: list[float] = Field(default_factory=lambda: [1.0, 0.7, 0.4, 0.1])


class RunConfig(_Section):
    """全部可调参数"""
    seed: int = 0
    out_dir: str = "runs"
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    sampler: SamplerConfig = Field(default_factory=SamplerConfig)
    backbone: BackboneConfig = Field(default_factory=BackboneConfig)
    adapter: AdapterConfig = Field(default_factory=AdapterConfig)
    fusion: FusionConfig = Field(default_factory=FusionConfig)
    mask: MaskConfig = Field(default_factory=MaskConfig)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    def with_updates(self, flat: dict[str, Any]) -> "RunConfig":
        """返回应用了点分键更新的新配置"""
        merged = to_flat_dict(self)
        for key in flat:
            if key not in merged:
                raise ConfigError(f"Unknown config key: {key}")
        merged.update(flat)
        return from_flat_dict(merged)


# ============ 扁平点分键序列化 ============

def _flatten(prefix: str, data: dict, out: dict):
    for key, value in data.items():
        name = f"{prefix}.{key}" if prefix else key
        if isinstance(value, dict):
            _flatten(name, value, out)
        else:
            out[name] = value


def to_flat_dict(cfg: RunConfig) -> dict[str, Any]:
    """RunConfig → {"fusion.mode": "blended", ...}"""
    out: dict[str, Any] = {}
    _flatten("", cfg.model_dump(mode="json"), out)
    return out


def from_flat_dict(flat: dict[str, Any], base: RunConfig = None) -> RunConfig:
    """
    由点分键字典构造配置

    Args:
        flat: 点分键字典，可只含部分键
        base: 未出现的键取该配置的值（默认取 RunConfig()）
    """
    nested = (base or RunConfig()).model_dump(mode="json")
    for key, value in flat.items():
        parts = key.split(".")
        node = nested
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigError(f"Unknown config key: {key}")
            node = node[part]
        if parts[-1] not in node or isinstance(node[parts[-1]], dict):
            raise ConfigError(f"Unknown config key: {key}")
        node[parts[-1]] = value
    try:
        return RunConfig.model_validate(nested)
    except ValidationError as e:
        raise ConfigError(f"Invalid config: {e}") from e


def serialize_config(cfg: RunConfig) -> str:
    return json.dumps(to_flat_dict(cfg), indent=2, ensure_ascii=False) + "\n"


def parse_config(text: str, base: RunConfig = None) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError("Config root must be a JSON object")
    return from_flat_dict(data, base)


def dump_config(cfg: RunConfig, path: Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(serialize_config(cfg), encoding="utf-8")


def load_config(path: Path, base: RunConfig = None) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), base)
