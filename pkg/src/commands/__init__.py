"""
命令模块 - CLI 子命令
"""

from .base import BaseCommand, CommandContext, CommandResult, CommandRegistry
from .data import GenDataCommand
from .train import TrainBaseCommand, TrainAdaptersCommand, GradCheckCommand
from .generate import GenerateCommand
from .evaluate import EvaluateCommand, AblateCommand, AlphaSweepCommand
from .show_config import ShowConfigCommand


def create_default_registry() -> CommandRegistry:
    """创建默认命令注册表"""
    registry = CommandRegistry()
    registry.register(GenDataCommand())
    registry.register(TrainBaseCommand())
    registry.register(TrainAdaptersCommand())
    registry.register(GenerateCommand())
    registry.register(EvaluateCommand())
    registry.register(AblateCommand())
    registry.register(AlphaSweepCommand())
    registry.register(GradCheckCommand())
    registry.register(ShowConfigCommand())
    return registry


__all__ = [
    "BaseCommand",
    "CommandContext",
    "CommandResult",
    "CommandRegistry",
    "GenDataCommand",
    "TrainBaseCommand",
    "TrainAdaptersCommand",
    "GenerateCommand",
    "EvaluateCommand",
    "AblateCommand",
    "AlphaSweepCommand",
    "GradCheckCommand",
    "ShowConfigCommand",
    "create_default_registry",
]
