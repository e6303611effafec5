"""
gen-data 命令 - 生成 DPTOY 训练集
"""

from __future__ import annotations
import argparse
import hashlib
from collections import Counter
from pathlib import Path

from .base import BaseCommand, CommandContext, CommandResult
from ..toy.dataset import decode_dataset, make_dataset


class GenDataCommand(BaseCommand):
    name = "gen-data"
    description = "Render the toy identity dataset into a DPTOY file"

    def add_arguments(self, parser: argparse.ArgumentParser):
        parser.add_argument("--n-identities", type=int, default=None, help="overrides data.n_identities")
        parser.add_argument("--per-identity", type=int, default=None, help="overrides data.samples_per_identity")
        parser.add_argument("--data-seed", type=int, default=None, help="overrides data.seed")
        parser.add_argument("--data", default=None, help="output path (default <out>/data/train.dptoy)")

    def execute(self, args: argparse.Namespace, ctx: CommandContext) -> CommandResult:
        data_cfg = ctx.cfg.data
        n_identities = data_cfg.n_identities if args.n_identities is None else args.n_identities
        per_identity = data_cfg.samples_per_identity if args.per_identity is None else args.per_identity
        seed = data_cfg.seed if args.data_seed is None else args.data_seed
        path = Path(args.data) if args.data else ctx.dataset_path

        raw = make_dataset(n_identities, per_identity, seed, path)
        digest = hashlib.sha256(raw).hexdigest()
        dataset = decode_dataset(raw)
        ctx.logger.dataset_written(str(path), len(dataset), digest)

        backgrounds = Counter(s.caption.background.value for s in dataset)
        coverage = ", ".join(
            f"{bg} {count / len(dataset):.0%}" for bg, count in sorted(backgrounds.items())
        ) if len(dataset) else "empty"

        return CommandResult(
            title="gen-data",
            output=f"Wrote {len(dataset)} samples to {path}\nbackgrounds: {coverage}\nsha256: {digest}",
            metadata={"path": str(path), "count": len(dataset), "sha256": digest},
        )
