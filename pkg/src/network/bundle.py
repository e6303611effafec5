"""
模型组合 - 主干 + IEA / TCA adapter，以及与检查点条目之间的转换
"""

from __future__ import annotations
from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional

import torch
from torch import Tensor

from ..config import RunConfig
from ..errors import CheckpointError
from ..models import AdapterRole
from .adapters import ImageAdapter
from .backbone import UNet

GROUP_BASE = "base"
GROUP_PREFIXES = (GROUP_BASE, AdapterRole.IEA.value, AdapterRole.TCA.value)


def build_unet(cfg: RunConfig, seed: Optional[int] = None) -> UNet:
    """按配置构造主干；给定 seed 时初始化可复现"""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed if seed is None else seed)
        return UNet(cfg.backbone, cfg.schedule.T)


def build_adapter(
    cfg: RunConfig, role: AdapterRole, unet: UNet, seed: Optional[int] = None
) -> ImageAdapter:
    offset = 1 if AdapterRole(role) == AdapterRole.IEA else 2
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed((cfg.seed if seed is None else seed) + offset)
        return ImageAdapter(
            role,
            unet.attention_layers(),
            embed_dim=cfg.adapter.embed_dim,
            n_tokens=cfg.adapter.n_tokens,
            hidden_dim=cfg.adapter.hidden_dim,
            token_dim=cfg.adapter.token_dim,
        )


@dataclass
class ModelBundle:
    unet: UNet
    iea: Optional[ImageAdapter] = None
    tca: Optional[ImageAdapter] = None

    def adapters(self) -> dict[str, ImageAdapter]:
        out = {}
        if self.iea is not None:
            out[AdapterRole.IEA.value] = self.iea
        if self.tca is not None:
            out[AdapterRole.TCA.value] = self.tca
        return out

    def groups(self) -> list[str]:
        return [GROUP_BASE] + list(self.adapters().keys())

    def state_entries(self) -> "OrderedDict[str, Tensor]":
        """base.* → iea.* → tca.*，值为 float32 CPU 张量"""
        entries: OrderedDict[str, Tensor] = OrderedDict()
        modules = {GROUP_BASE: self.unet, **self.adapters()}
        for group, module in modules.items():
            for name, value in module.state_dict().items():
                entries[f"{group}.{name}"] = value.detach().to("cpu", torch.float32).contiguous()
        return entries

    @classmethod
    def from_entries(cls, entries: dict[str, Tensor], cfg: RunConfig) -> "ModelBundle":
        grouped: dict[str, dict[str, Tensor]] = {}
        for name, value in entries.items():
            group, _, rest = name.partition(".")
            if group not in GROUP_PREFIXES or not rest:
                raise CheckpointError(f"Unexpected checkpoint entry '{name}'")
            grouped.setdefault(group, {})[rest] = value
        if GROUP_BASE not in grouped:
            raise CheckpointError("Checkpoint has no base.* entries")

        unet = UNet(cfg.backbone, cfg.schedule.T)
        _load_group(unet, grouped[GROUP_BASE], GROUP_BASE)
        bundle = cls(unet=unet)
        for role in (AdapterRole.IEA, AdapterRole.TCA):
            if role.value in grouped:
                adapter = ImageAdapter(
                    role,
                    unet.attention_layers(),
                    embed_dim=cfg.adapter.embed_dim,
                    n_tokens=cfg.adapter.n_tokens,
                    hidden_dim=cfg.adapter.hidden_dim,
                    token_dim=cfg.adapter.token_dim,
                )
                _load_group(adapter, grouped[role.value], role.value)
                setattr(bundle, role.value, adapter)
        return bundle


def _load_group(module: torch.nn.Module, state: dict[str, Tensor], group: str):
    try:
        module.load_state_dict(state, strict=True)
    except RuntimeError as e:
        raise CheckpointError(f"Checkpoint group '{group}' does not match config: {e}") from e
