"""
配置预设与管理 - toy / paper-lr / tiny
"""

from __future__ import annotations
from typing import Optional

from .config import (
    RunConfig, BackboneConfig, AdapterConfig, ScheduleConfig, SamplerConfig,
    TrainingConfig, DataConfig, EvalConfig,
)


# ============ 内置预设 ============

def create_toy_preset() -> RunConfig:
    """默认玩具尺度：32×32，CPU 上几分钟可训练"""
    return RunConfig()


def create_paper_lr_preset() -> RunConfig:
    """与 toy 相同，学习率 1e-5（大模型微调常用值）"""
    cfg = RunConfig()
    cfg.training = TrainingConfig(lr=1e-5)
    return cfg


def create_tiny_preset() -> RunConfig:
    """8×8 微型模型，供梯度检查与单元测试使用"""
    return RunConfig(
        schedule=ScheduleConfig(T=100),
        sampler=SamplerConfig(steps=5),
        backbone=BackboneConfig(
            image_size=8,
            base_channels=8,
            channel_multipliers=[1, 2],
            attention_levels=[1],
            heads=2,
            text_embed_dim=8,
            time_embed_dim=16,
        ),
        adapter=AdapterConfig(hidden_dim=16, token_dim=8),
        training=TrainingConfig(base_steps=20, adapter_steps=20, log_every=5),
        data=DataConfig(n_identities=2, samples_per_identity=2),
        eval=EvalConfig(images_per_prompt=1, captions_per_identity=1),
    )


PRESET_DESCRIPTIONS = {
    "toy": "32×32 toy world, lr 1e-3 (default)",
    "paper-lr": "toy architecture with lr 1e-5 (large-model fine-tuning rate)",
    "tiny": "8×8 two-level model for gradient checks and tests",
}


# ============ 预设管理器 ============

class PresetManager:
    """预设管理器"""

    def __init__(self):
        self._presets: dict[str, RunConfig] = {}
        self._load_builtin_presets()

    def _load_builtin_presets(self):
        self._presets["toy"] = create_toy_preset()
        self._presets["paper-lr"] = create_paper_lr_preset()
        self._presets["tiny"] = create_tiny_preset()

    def get(self, name: str) -> Optional[RunConfig]:
        """获取预设（返回副本）"""
        cfg = self._presets.get(name)
        return cfg.model_copy(deep=True) if cfg is not None else None

    def list(self) -> list[str]:
        return list(self._presets.keys())
