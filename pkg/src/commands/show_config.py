"""
show-config 命令 - 打印或导出生效配置
"""

from __future__ import annotations
import argparse
from pathlib import Path

from .base import BaseCommand, CommandContext, CommandResult
from ..config import dump_config, serialize_config
from ..presets import PRESET_DESCRIPTIONS


class ShowConfigCommand(BaseCommand):
    name = "show-config"
    description = "Print the effective configuration as flat dotted-key JSON"

    def add_arguments(self, parser: argparse.ArgumentParser):
        parser.add_argument("--write", default=None, help="also write the config to this path")
        parser.add_argument("--list-presets", action="store_true")

    def execute(self, args: argparse.Namespace, ctx: CommandContext) -> CommandResult:
        if args.list_presets:
            lines = [f"{name:10s} {desc}" for name, desc in PRESET_DESCRIPTIONS.items()]
            return CommandResult(title="presets", output="\n".join(lines))

        text = serialize_config(ctx.cfg)
        metadata = {"preset": ctx.preset}
        if args.write:
            dump_config(ctx.cfg, Path(args.write))
            metadata["path"] = args.write
        return CommandResult(title=f"config ({ctx.preset})", output=text.rstrip(), metadata=metadata)
