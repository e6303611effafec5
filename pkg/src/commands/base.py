"""
命令系统基类和通用组件
"""

from __future__ import annotations
import argparse
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Optional

from pydantic import BaseModel

from ..config import RunConfig
from ..errors import ParameterError
from ..logger import RunLogger
from ..toy.dataset import IMAGE_SIZE, ToyDataset, build_dataset, read_dataset


class CommandContext:
    """命令执行上下文"""

    def __init__(
        self,
        cfg: RunConfig,
        run_id: str,
        preset: str,
        logger: RunLogger,
        out_dir: Optional[str] = None,
        dump_masks: Optional[str] = None,
    ):
        self.cfg = cfg
        self.run_id = run_id
        self.preset = preset
        self.logger = logger
        self.out_dir = Path(out_dir or cfg.out_dir).resolve()
        self.dump_masks = Path(dump_masks).resolve() if dump_masks else None

    def path(self, *parts: str) -> Path:
        """输出目录下的路径"""
        return self.out_dir.joinpath(*parts)

    # 默认产物位置
    @property
    def dataset_path(self) -> Path:
        return self.path("data", "train.dptoy")

    @property
    def base_ckpt_path(self) -> Path:
        return self.path("ckpt", "base.dpckpt")

    @property
    def adapter_ckpt_path(self) -> Path:
        return self.path("ckpt", "adapters.dpckpt")

    def load_dataset(self, path: Optional[str] = None) -> ToyDataset:
        """
        读取训练集

        DPTOY 只存 32×32 图像；配置为其他分辨率时按 data.* 在内存中重新渲染。
        """
        size = self.cfg.backbone.image_size
        if size != IMAGE_SIZE:
            data = self.cfg.data
            self.logger.info(
                "DATASET_IN_MEMORY", image_size=size,
                identities=data.n_identities, per_identity=data.samples_per_identity,
            )
            return build_dataset(data.n_identities, data.samples_per_identity, data.seed, size)
        target = Path(path) if path else self.dataset_path
        if not target.exists():
            raise FileNotFoundError(f"dataset not found: {target} (run gen-data first)")
        return read_dataset(target)


class CommandResult(BaseModel):
    """命令执行结果"""
    output: str
    title: str = ""
    metadata: dict[str, Any] = {}
    error: Optional[str] = None


class BaseCommand(ABC):
    """命令基类"""

    name: str
    description: str

    def add_arguments(self, parser: argparse.ArgumentParser):
        """注册命令自己的参数"""
        pass

    @abstractmethod
    def execute(self, args: argparse.Namespace, ctx: CommandContext) -> CommandResult:
        """执行命令"""
        pass


class CommandRegistry:
    """命令注册表"""

    def __init__(self):
        self._commands: dict[str, BaseCommand] = {}

    def register(self, command: BaseCommand):
        if command.name in self._commands:
            raise ParameterError(f"command '{command.name}' registered twice")
        self._commands[command.name] = command

    def get(self, name: str) -> Optional[BaseCommand]:
        return self._commands.get(name)

    def list_commands(self) -> list[BaseCommand]:
        return list(self._commands.values())

    def add_subparsers(self, parser: argparse.ArgumentParser) -> argparse._SubParsersAction:
        """为每个命令创建 argparse 子命令"""
        subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
        for command in self.list_commands():
            sub = subparsers.add_parser(command.name, help=command.description, description=command.description)
            command.add_arguments(sub)
        return subparsers
