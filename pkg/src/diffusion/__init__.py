"""
扩散模块 - 调度与采样数值
"""

from .schedule import (
    DiffusionSchedule,
    make_schedule,
    add_noise,
    ddim_step,
    cfg_combine,
    ddim_timesteps,
)
from .sampler import EpsFn, run_ddim

__all__ = [
    "DiffusionSchedule",
    "make_schedule",
    "add_noise",
    "ddim_step",
    "cfg_combine",
    "ddim_timesteps",
    "EpsFn",
    "run_ddim",
]
