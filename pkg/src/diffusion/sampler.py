"""
DDIM 采样循环
"""

from __future__ import annotations
from typing import Callable, Optional

import torch
from torch import Tensor

from .schedule import DiffusionSchedule, ddim_step, ddim_timesteps

# (x_t, t, 步序号) → ε
EpsFn = Callable[[Tensor, int, int], Tensor]


@torch.no_grad()
def run_ddim(
    x_T: Tensor,
    eps_fn: EpsFn,
    schedule: DiffusionSchedule,
    steps: int,
    eta: float = 0.0,
    generator: Optional[torch.Generator] = None,
) -> Tensor:
    """从 x_T 出发沿 ddim_timesteps 反向迭代到 x_0"""
    x = x_T
    for i, (t, t_prev) in enumerate(ddim_timesteps(schedule.T, steps)):
        eps = eps_fn(x, t, i)
        draw = None
        if eta > 0:
            draw = torch.randn(x.shape, generator=generator, dtype=x.dtype)
        x = ddim_step(x, eps, t, t_prev, schedule, eta, draw)
    return x
