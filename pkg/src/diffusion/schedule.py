"""
扩散过程数值：噪声调度、前向加噪、DDIM 反向一步、CFG 组合
"""

from __future__ import annotations
from dataclasses import dataclass
from typing import Optional, Union

import torch
from torch import Tensor

from ..errors import ParameterError, ScheduleIndexError, StructuralError


@dataclass(frozen=True)
class DiffusionSchedule:
    """线性 β 调度，表以 float64 保存"""
    T: int
    betas: Tensor
    alphas_cumprod: Tensor

    def alpha_bar(self, t: Union[int, Tensor]) -> Tensor:
        """ᾱ_t；t = -1 表示 ᾱ = 1"""
        if isinstance(t, Tensor):
            if t.numel() and (t.min() < -1 or t.max() >= self.T):
                raise ScheduleIndexError(f"timestep out of range [-1, {self.T})")
            padded = torch.cat([self.alphas_cumprod.new_ones(1), self.alphas_cumprod])
            return padded[t.long() + 1]
        if not -1 <= t < self.T:
            raise ScheduleIndexError(f"timestep {t} out of range [-1, {self.T})")
        if t == -1:
            return self.alphas_cumprod.new_tensor(1.0)
        return self.alphas_cumprod[t]


def make_schedule(T: int, beta_start: float, beta_end: float) -> DiffusionSchedule:
    """
    构造线性 β 调度

    Raises:
        ParameterError: T < 2 或 β 区间非法
    """
    if T < 2:
        raise ParameterError(f"T must be >= 2, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ParameterError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    betas = torch.linspace(beta_start, beta_end, T, dtype=torch.float64)
    alphas_cumprod = torch.cumprod(1.0 - betas, dim=0)
    return DiffusionSchedule(T=T, betas=betas, alphas_cumprod=alphas_cumprod)


def _broadcast_coeff(value: Tensor, like: Tensor) -> Tensor:
    """把标量或 (B,) 系数变形为可与 like 广播的形状"""
    value = value.to(like.dtype)
    if value.ndim == 1:
        value = value.view(-1, *([1] * (like.ndim - 1)))
    return value


def add_noise(x0: Tensor, noise: Tensor, t: Union[int, Tensor], s: DiffusionSchedule) -> Tensor:
    """sqrt(ᾱ_t)·x0 + sqrt(1−ᾱ_t)·noise；t 可为整数或 (B,) 张量"""
    if x0.shape != noise.shape:
        raise StructuralError(f"x0 {tuple(x0.shape)} and noise {tuple(noise.shape)} differ")
    if isinstance(t, Tensor):
        if t.numel() and (t.min() < 0 or t.max() >= s.T):
            raise ScheduleIndexError(f"timestep out of range [0, {s.T})")
    elif not 0 <= t < s.T:
        raise ScheduleIndexError(f"timestep {t} out of range [0, {s.T})")

    a = _broadcast_coeff(s.alpha_bar(t), x0)
    return a.sqrt() * x0 + (1.0 - a).sqrt() * noise


def ddim_step(
    x_t: Tensor,
    eps_pred: Tensor,
    t: int,
    t_prev: int,
    s: DiffusionSchedule,
    eta: float = 0.0,
    rng_draw: Optional[Tensor] = None,
) -> Tensor:
    """
    DDIM 反向一步 x_t → x_{t_prev}

    Args:
        x_t: 当前噪声图像
        eps_pred: 预测噪声
        t: 当前时间步
        t_prev: 目标时间步，-1 对应 ᾱ = 1
        eta: 随机性，0 为确定性
        rng_draw: eta > 0 时必须提供的标准正态样本
    """
    if t_prev >= t:
        raise ParameterError(f"t_prev ({t_prev}) must be < t ({t})")
    if eta < 0:
        raise ParameterError(f"eta must be >= 0, got {eta}")
    if (eta > 0) != (rng_draw is not None):
        raise ParameterError("rng_draw is required iff eta > 0")
    if x_t.shape != eps_pred.shape:
        raise StructuralError(f"x_t {tuple(x_t.shape)} and eps {tuple(eps_pred.shape)} differ")

    a_t = s.alpha_bar(t).to(x_t.dtype)
    a_prev = s.alpha_bar(t_prev).to(x_t.dtype)

    x0_hat = (x_t - (1.0 - a_t).sqrt() * eps_pred) / a_t.sqrt()
    x0_hat = x0_hat.clamp(-1.0, 1.0)

    sigma = eta * ((1.0 - a_prev) / (1.0 - a_t)).sqrt() * (1.0 - a_t / a_prev).sqrt()
    direction = (1.0 - a_prev - sigma ** 2).clamp(min=0.0).sqrt() * eps_pred
    x_prev = a_prev.sqrt() * x0_hat + direction
    if rng_draw is not None:
        if rng_draw.shape != x_t.shape:
            raise StructuralError("rng_draw must match x_t shape")
        x_prev = x_prev + sigma * rng_draw
    return x_prev


def cfg_combine(eps_uncond: Tensor, eps_cond: Tensor, scale: float) -> Tensor:
    """eps_uncond + scale·(eps_cond − eps_uncond)"""
    if eps_uncond.shape != eps_cond.shape:
        raise StructuralError("guidance inputs must share a shape")
    if scale == 1.0:
        return eps_cond
    if scale == 0.0:
        return eps_uncond
    return eps_uncond + scale * (eps_cond - eps_uncond)


def ddim_timesteps(T: int, steps: int) -> list[tuple[int, int]]:
    """
    均匀间隔的 DDIM 时间步对 (t, t_prev)，降序，最后一步 t_prev = -1
    """
    if not 1 <= steps <= T:
        raise ParameterError(f"steps must be in [1, {T}], got {steps}")
    stride = T // steps
    ts = [i * stride for i in range(steps)][::-1]
    return list(zip(ts, ts[1:] + [-1]))
