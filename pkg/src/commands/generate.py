"""
generate 命令 - 单张双通路生成
"""

from __future__ import annotations
import argparse
from pathlib import Path

from .base import BaseCommand, CommandContext, CommandResult
from ..errors import ParameterError
from ..models import Caption
from ..pipeline import generate, load_bundle, save_generation
from ..toy.world import make_identity, render_reference, render_sample
from ..ui import print_generation_report


class GenerateCommand(BaseCommand):
    name = "generate"
    description = "Generate one image of a reference identity under a caption"

    def add_arguments(self, parser: argparse.ArgumentParser):
        parser.add_argument("caption", help='caption as "red,left,small" or tokens "1-5-8"')
        parser.add_argument("--identity", type=int, default=0, help="palette index of the reference identity")
        parser.add_argument("--ref-caption", default=None, help="caption used to render the reference image")
        parser.add_argument("--ref-seed", type=int, default=0)
        parser.add_argument("--ckpt", default=None, help="checkpoint (default <out>/ckpt/adapters.dpckpt)")

    def execute(self, args: argparse.Namespace, ctx: CommandContext) -> CommandResult:
        cfg = ctx.cfg
        try:
            prompt = Caption.parse(args.caption)
            ref_caption = Caption.parse(args.ref_caption) if args.ref_caption else None
        except ValueError as e:
            raise ParameterError(str(e)) from e
        if args.identity < 0:
            raise ParameterError("--identity must be >= 0")

        identity = make_identity(args.identity)
        size = cfg.backbone.image_size
        ref = (
            render_sample(identity, ref_caption, args.ref_seed, size)
            if ref_caption else render_reference(identity, size)
        )
        bundle = load_bundle(Path(args.ckpt) if args.ckpt else ctx.adapter_ckpt_path, cfg)

        result = generate(prompt, ref, bundle, cfg, dump_dir=ctx.dump_masks, logger=ctx.logger)
        result.report.run_id = ctx.run_id
        out_dir = ctx.path("samples")
        image_path, mask_path = save_generation(result, out_dir, ctx.run_id)
        report_path = out_dir / f"{ctx.run_id}.json"
        report_path.write_text(result.report.model_dump_json(indent=2), encoding="utf-8")

        print_generation_report(result.report)
        return CommandResult(
            title="generate",
            output=f"image: {image_path}\nmask:  {mask_path}\nreport: {report_path}",
            metadata=result.report.model_dump(mode="json"),
        )
