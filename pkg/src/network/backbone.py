"""
U-Net 去噪主干 - 时间步嵌入、文本交叉注意力、adapter 注入点、特征与注意力 taps

可融合 block：bottleneck（mid）与上采样路径每一层的输出（up{i}）。
iter_blocks 是一个生成器，在每个可融合 block 处 yield 特征并接收替换后的特征，
双通路融合据此在两个通路之间逐 block 同步。
"""

from __future__ import annotations
import math
from dataclasses import dataclass, field
from typing import Generator, Optional, TYPE_CHECKING, Union

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

from ..config import BackboneConfig
from ..errors import ParameterError, StructuralError

if TYPE_CHECKING:
    from .adapters import ImageAdapter


# ============ Tap 数据结构 ============

@dataclass
class Taps:
    """需要记录的内容"""
    features: bool = False
    attention: bool = False


@dataclass
class TapPoint:
    """生成器在可融合 block 处产出的特征"""
    block_id: str
    features: Tensor

    @property
    def resolution(self) -> tuple[int, int]:
        return tuple(self.features.shape[-2:])


@dataclass
class BlockFeatures:
    """按结构顺序排列的 (block_id, (h, w), 特征)"""
    entries: list[tuple[str, tuple[int, int], Tensor]] = field(default_factory=list)

    def block_ids(self) -> list[str]:
        return [block_id for block_id, _, _ in self.entries]

    def get(self, block_id: str) -> Tensor:
        for name, _, feats in self.entries:
            if name == block_id:
                return feats
        raise StructuralError(f"No features recorded for block '{block_id}'")


@dataclass
class AttnProbs:
    """
    一层交叉注意力的概率

    text / image 分别是各自 softmax 的结果（每行和为 1）；
    image_mass 是文本键与图像键联合 softmax 中落在图像键上的总质量，形状 (B, heads, Q)。
    """
    text: Tensor
    image: Optional[Tensor] = None
    image_mass: Optional[Tensor] = None


@dataclass
class AttnRecord:
    layer_id: str
    resolution: tuple[int, int]
    probs: AttnProbs


@dataclass
class AttnMaps:
    """一次前向中各注意力层的记录"""
    layers: dict[str, AttnRecord] = field(default_factory=dict)


@dataclass
class BackboneOutput:
    eps: Tensor
    features: Optional[BlockFeatures] = None
    attn: Optional[AttnMaps] = None


# ============ 注意力 ============

def merged_attention(
    query: Tensor,
    text_kv: tuple[Tensor, Tensor],
    image_kv: Optional[tuple[Tensor, Tensor]] = None,
    alpha: float = 0.0,
    return_probs: bool = False,
) -> Union[Tensor, tuple[Tensor, AttnProbs]]:
    """
    Attn_final = Attn_text + α·Attn_image

    Args:
        query: (B, heads, Q, d)
        text_kv: 文本 (key, value)，形状 (B, heads, L, d)
        image_kv: 图像提示 (key, value)，形状 (B, heads, N, d)；None 时图像项为零
        alpha: 图像条件注入强度
        return_probs: 是否同时返回注意力概率

    Returns:
        (B, heads, Q, d) 的输出，return_probs 时附带 AttnProbs
    """
    text_k, text_v = text_kv
    d = query.shape[-1]
    if text_k.shape[-1] != d or text_k.shape[:-1] != text_v.shape[:-1]:
        raise StructuralError(
            f"text key/value dims inconsistent with query: q={tuple(query.shape)}, "
            f"k={tuple(text_k.shape)}, v={tuple(text_v.shape)}"
        )
    scale = d ** -0.5

    text_logits = (query @ text_k.transpose(-1, -2)) * scale
    text_probs = text_logits.softmax(dim=-1)
    out = text_probs @ text_v
    probs = AttnProbs(text=text_probs)

    if image_kv is not None:
        image_k, image_v = image_kv
        if image_k.shape[-1] != d or image_k.shape[:-1] != image_v.shape[:-1]:
            raise StructuralError("image key/value dims inconsistent with query")
        image_logits = (query @ image_k.transpose(-1, -2)) * scale
        if alpha != 0 or return_probs:
            image_probs = image_logits.softmax(dim=-1)
        if alpha != 0:
            out = out + alpha * (image_probs @ image_v)
        if return_probs:
            joint = torch.cat([text_logits, image_logits], dim=-1).softmax(dim=-1)
            probs.image = image_probs
            probs.image_mass = joint[..., text_k.shape[-2]:].sum(dim=-1)

    return (out, probs) if return_probs else out


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, n, c = x.shape
    return x.view(b, n, heads, c // heads).transpose(1, 2)


def _merge_heads(x: Tensor) -> Tensor:
    b, h, n, d = x.shape
    return x.transpose(1, 2).reshape(b, n, h * d)


def _group_norm(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(math.gcd(8, channels), channels)


class CrossAttention(nn.Module):
    """文本交叉注意力 + 解耦的图像提示注入点"""

    def __init__(self, layer_id: str, channels: int, context_dim: int, heads: int):
        super().__init__()
        if channels % heads != 0:
            raise StructuralError(f"channels ({channels}) not divisible by heads ({heads})")
        self.layer_id = layer_id
        self.channels = channels
        self.heads = heads
        self.norm = _group_norm(channels)
        self.to_q = nn.Linear(channels, channels, bias=False)
        self.to_k = nn.Linear(context_dim, channels, bias=False)
        self.to_v = nn.Linear(context_dim, channels, bias=False)
        self.to_out = nn.Linear(channels, channels)

    def forward(
        self,
        h: Tensor,
        context: Tensor,
        adapter: Optional["ImageAdapter"] = None,
        image_tokens: Optional[Tensor] = None,
        alpha: float = 0.0,
        record: bool = False,
    ) -> tuple[Tensor, Optional[AttnRecord]]:
        b, c, height, width = h.shape
        x = self.norm(h).flatten(2).transpose(1, 2)

        query = _split_heads(self.to_q(x), self.heads)
        text_kv = (
            _split_heads(self.to_k(context), self.heads),
            _split_heads(self.to_v(context), self.heads),
        )
        image_kv = None
        if adapter is not None and image_tokens is not None:
            key_ip, value_ip = adapter.layer_kv(image_tokens, self.layer_id)
            image_kv = (_split_heads(key_ip, self.heads), _split_heads(value_ip, self.heads))

        record_obj = None
        if record:
            out, probs = merged_attention(query, text_kv, image_kv, alpha, return_probs=True)
            record_obj = AttnRecord(self.layer_id, (height, width), probs)
        else:
            out = merged_attention(query, text_kv, image_kv, alpha)

        out = self.to_out(_merge_heads(out)).transpose(1, 2).reshape(b, c, height, width)
        return h + out, record_obj


# ============ 卷积 block ============

def timestep_embedding(t: Tensor, dim: int) -> Tensor:
    """正弦时间步嵌入，(B,) → (B, dim)"""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half
    ).to(torch.float32)
    args = t.to(torch.float32)[:, None] * freqs[None]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


class ResBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, time_dim: int):
        super().__init__()
        self.norm1 = _group_norm(in_channels)
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, out_channels)
        self.norm2 = _group_norm(out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.skip = (
            nn.Conv2d(in_channels, out_channels, 1)
            if in_channels != out_channels else nn.Identity()
        )

    def forward(self, x: Tensor, temb: Tensor) -> Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


# ============ U-Net ============

BlockStream = Generator[TapPoint, Tensor, tuple[Tensor, Optional[AttnMaps]]]


class UNet(nn.Module):
    """小型条件 U-Net ε_θ(x_t, t, C, I_f)"""

    def __init__(self, cfg: BackboneConfig, num_timesteps: Optional[int] = None):
        super().__init__()
        self.cfg = cfg
        # None 时不检查时间步上界
        self.num_timesteps = num_timesteps
        self.channels = [cfg.base_channels * m for m in cfg.channel_multipliers]
        self.levels = len(self.channels)
        tdim = cfg.time_embed_dim

        self.time_mlp = nn.Sequential(
            nn.Linear(cfg.base_channels, tdim), nn.SiLU(), nn.Linear(tdim, tdim)
        )
        self.token_embedding = nn.Embedding(cfg.vocab_size, cfg.text_embed_dim)
        self.position_embedding = nn.Parameter(
            torch.randn(cfg.max_text_len, cfg.text_embed_dim) * 0.02
        )

        self.conv_in = nn.Conv2d(3, self.channels[0], 3, padding=1)

        self.down_res = nn.ModuleDict()
        self.down_attn = nn.ModuleDict()
        self.downsample = nn.ModuleDict()
        prev = self.channels[0]
        for i, ch in enumerate(self.channels):
            key = f"down{i}"
            self.down_res[key] = ResBlock(prev, ch, tdim)
            if i in cfg.attention_levels:
                self.down_attn[key] = CrossAttention(key, ch, cfg.text_embed_dim, cfg.heads)
            if i < self.levels - 1:
                self.downsample[key] = nn.Conv2d(ch, ch, 3, stride=2, padding=1)
            prev = ch

        bottom = self.channels[-1]
        self.mid_res1 = ResBlock(bottom, bottom, tdim)
        self.mid_attn = CrossAttention("mid", bottom, cfg.text_embed_dim, cfg.heads)
        self.mid_res2 = ResBlock(bottom, bottom, tdim)

        self.up_res = nn.ModuleDict()
        self.up_attn = nn.ModuleDict()
        self.upsample = nn.ModuleDict()
        for i in reversed(range(self.levels)):
            key = f"up{i}"
            ch = self.channels[i]
            self.up_res[key] = ResBlock(2 * ch, ch, tdim)
            if i in cfg.attention_levels:
                self.up_attn[key] = CrossAttention(key, ch, cfg.text_embed_dim, cfg.heads)
            if i > 0:
                self.upsample[key] = nn.Conv2d(ch, self.channels[i - 1], 3, padding=1)

        self.norm_out = _group_norm(self.channels[0])
        self.conv_out = nn.Conv2d(self.channels[0], 3, 3, padding=1)

    # ============ 结构查询 ============

    def attention_layers(self) -> dict[str, int]:
        """adapter 注入层 → 通道数，按前向顺序"""
        layers = {key: attn.channels for key, attn in self.down_attn.items()}
        layers["mid"] = self.mid_attn.channels
        layers.update({key: attn.channels for key, attn in self.up_attn.items()})
        return layers

    def tap_ids(self) -> list[str]:
        return ["mid"] + [f"up{i}" for i in reversed(range(self.levels))]

    def tap_resolutions(self) -> list[tuple[int, int]]:
        res = self.cfg.resolutions()
        sizes = [res[-1]] + [res[i] for i in reversed(range(self.levels))]
        return [(s, s) for s in sizes]

    # ============ 条件编码 ============

    def embed_text(self, text_tokens: Tensor) -> Tensor:
        """(B, L) token id → (B, L, text_embed_dim)"""
        if text_tokens.ndim != 2:
            raise StructuralError(f"text tokens must be (B, L), got {tuple(text_tokens.shape)}")
        length = text_tokens.shape[1]
        if not 1 <= length <= self.cfg.max_text_len:
            raise StructuralError(f"text length {length} exceeds max_text_len {self.cfg.max_text_len}")
        return self.token_embedding(text_tokens.long()) + self.position_embedding[:length]

    def _check_input(self, x_t: Tensor):
        size = self.cfg.image_size
        if x_t.ndim != 4 or tuple(x_t.shape[1:]) != (3, size, size):
            raise StructuralError(
                f"x_t must be (B, 3, {size}, {size}), got {tuple(x_t.shape)}"
            )

    def _check_timesteps(self, t: Tensor):
        if t.numel() == 0:
            return
        low, high = int(t.min()), int(t.max())
        if low < 0 or (self.num_timesteps is not None and high >= self.num_timesteps):
            bound = "T" if self.num_timesteps is None else self.num_timesteps
            raise ParameterError(f"timestep must be in [0, {bound}), got range [{low}, {high}]")

    @staticmethod
    def _match_batch(x: Optional[Tensor], batch: int, name: str) -> Optional[Tensor]:
        if x is None or x.shape[0] == batch:
            return x
        if x.shape[0] == 1:
            return x.expand(batch, *x.shape[1:])
        raise StructuralError(f"{name} batch {x.shape[0]} does not match x_t batch {batch}")

    # ============ 前向 ============

    def iter_blocks(
        self,
        x_t: Tensor,
        t: Union[int, Tensor],
        text_tokens: Tensor,
        adapter: Optional["ImageAdapter"] = None,
        image_tokens: Optional[Tensor] = None,
        alpha: float = 0.0,
        record_attention: bool = False,
    ) -> BlockStream:
        """
        逐 block 前向的生成器

        在每个可融合 block 处 yield TapPoint，调用方 send 回（可能被替换的）特征；
        结束时返回 (eps, AttnMaps | None)。
        """
        self._check_input(x_t)
        if alpha < 0:
            raise ParameterError(f"alpha must be >= 0, got {alpha}")
        batch = x_t.shape[0]

        if not isinstance(t, Tensor):
            t = torch.full((batch,), int(t), dtype=torch.long)
        self._check_timesteps(t)
        t = self._match_batch(t.reshape(-1), batch, "t")
        temb = self.time_mlp(timestep_embedding(t, self.cfg.base_channels).to(x_t.dtype))

        context = self._match_batch(self.embed_text(text_tokens), batch, "text")
        if image_tokens is not None:
            if image_tokens.ndim == 2:
                image_tokens = image_tokens.unsqueeze(0)
            image_tokens = self._match_batch(image_tokens, batch, "image tokens")

        records = AttnMaps() if record_attention else None

        def attend(block: CrossAttention, h: Tensor) -> Tensor:
            h, rec = block(h, context, adapter, image_tokens, alpha, record_attention)
            if rec is not None:
                records.layers[rec.layer_id] = rec
            return h

        h = self.conv_in(x_t)
        skips = []
        for i in range(self.levels):
            key = f"down{i}"
            h = self.down_res[key](h, temb)
            if key in self.down_attn:
                h = attend(self.down_attn[key], h)
            skips.append(h)
            if key in self.downsample:
                h = self.downsample[key](h)

        h = self.mid_res1(h, temb)
        h = attend(self.mid_attn, h)
        h = self.mid_res2(h, temb)
        h = yield TapPoint("mid", h)

        for i in reversed(range(self.levels)):
            key = f"up{i}"
            h = self.up_res[key](torch.cat([h, skips[i]], dim=1), temb)
            if key in self.up_attn:
                h = attend(self.up_attn[key], h)
            h = yield TapPoint(key, h)
            if key in self.upsample:
                h = self.upsample[key](F.interpolate(h, scale_factor=2, mode="nearest"))

        eps = self.conv_out(F.silu(self.norm_out(h)))
        return eps, records

    def forward(
        self,
        x_t: Tensor,
        t: Union[int, Tensor],
        text_tokens: Tensor,
        adapter: Optional["ImageAdapter"] = None,
        image_tokens: Optional[Tensor] = None,
        alpha: float = 0.0,
        taps: Optional[Taps] = None,
    ) -> BackboneOutput:
        taps = taps or Taps()
        stream = self.iter_blocks(
            x_t, t, text_tokens, adapter, image_tokens, alpha, record_attention=taps.attention
        )
        features = BlockFeatures() if taps.features else None
        try:
            point = next(stream)
            while True:
                if features is not None:
                    features.entries.append((point.block_id, point.resolution, point.features))
                point = stream.send(point.features)
        except StopIteration as stop:
            eps, attn = stop.value
        return BackboneOutput(eps=eps, features=features, attn=attn)


def backbone_forward(
    backbone: UNet,
    x_t: Tensor,
    t: Union[int, Tensor],
    text_tokens: Tensor,
    image_tokens: Optional[Tensor] = None,
    alpha: float = 0.0,
    adapter: Optional["ImageAdapter"] = None,
    taps: Optional[Taps] = None,
) -> BackboneOutput:
    """函数式入口：ε 预测 + 可选特征/注意力记录"""
    return backbone(x_t, t, text_tokens, adapter, image_tokens, alpha, taps)
