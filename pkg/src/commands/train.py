"""
训练命令 - train-base / train-adapters / grad-check
"""

from __future__ import annotations
import argparse
from pathlib import Path

from .base import BaseCommand, CommandContext, CommandResult
from ..checkpoint import save_checkpoint
from ..models import AdapterRole
from ..network import ModelBundle, build_adapter, build_unet
from ..pipeline import load_bundle
from ..toy.world import make_identity, render_reference
from ..training import (
    TrainResult, grad_check, parameter_partition, train_adapters, train_base, write_loss_csv,
)
from ..ui import print_grad_check, print_loss_summary, track_steps

GRAD_CHECK_TOLERANCE = 1e-3


def _save(result: TrainResult, ckpt_path: Path, csv_path: Path, ctx: CommandContext) -> str:
    entries = result.bundle.state_entries()
    digest = save_checkpoint(entries, ckpt_path)
    write_loss_csv(result, csv_path)
    ctx.logger.checkpoint_saved(str(ckpt_path), len(entries), result.bundle.groups())
    return digest


class TrainBaseCommand(BaseCommand):
    name = "train-base"
    description = "Stage 1: train the text-conditioned denoising backbone"

    def add_arguments(self, parser: argparse.ArgumentParser):
        parser.add_argument("--data", default=None, help="DPTOY dataset (default <out>/data/train.dptoy)")
        parser.add_argument("--ckpt", default=None, help="output checkpoint (default <out>/ckpt/base.dpckpt)")

    def execute(self, args: argparse.Namespace, ctx: CommandContext) -> CommandResult:
        dataset = ctx.load_dataset(args.data)
        ckpt_path = Path(args.ckpt) if args.ckpt else ctx.base_ckpt_path

        with track_steps("train-base", ctx.cfg.training.base_steps) as update:
            result = train_base(dataset, ctx.cfg, ctx.logger, progress=update)

        digest = _save(result, ckpt_path, ctx.path("logs", "base_loss.csv"), ctx)
        print_loss_summary(result.history, result.columns, "Backbone")
        return CommandResult(
            title="train-base",
            output=f"Saved backbone to {ckpt_path}\nsha256: {digest}",
            metadata={"ckpt": str(ckpt_path), "sha256": digest, "steps": len(result.history)},
        )


class TrainAdaptersCommand(BaseCommand):
    name = "train-adapters"
    description = "Stage 2: freeze the backbone and train the IEA/TCA adapters"

    def add_arguments(self, parser: argparse.ArgumentParser):
        parser.add_argument("--data", default=None, help="DPTOY dataset")
        parser.add_argument("--base-ckpt", default=None, help="stage-1 checkpoint (default <out>/ckpt/base.dpckpt)")
        parser.add_argument("--ckpt", default=None, help="output checkpoint (default <out>/ckpt/adapters.dpckpt)")
        parser.add_argument(
            "--single", action="store_true",
            help="train one adapter with the global loss (input for training-free fusion)",
        )

    def execute(self, args: argparse.Namespace, ctx: CommandContext) -> CommandResult:
        cfg = ctx.cfg
        if args.single:
            cfg = cfg.with_updates({"training.single_adapter": True})
        dataset = ctx.load_dataset(args.data)
        base = load_bundle(Path(args.base_ckpt) if args.base_ckpt else ctx.base_ckpt_path, cfg)
        ckpt_path = Path(args.ckpt) if args.ckpt else ctx.adapter_ckpt_path

        with track_steps("train-adapters", cfg.training.adapter_steps) as update:
            result = train_adapters(dataset, ModelBundle(unet=base.unet), cfg, ctx.logger, progress=update)

        digest = _save(result, ckpt_path, ctx.path("logs", "adapter_loss.csv"), ctx)
        trainable, frozen = parameter_partition(result.bundle)
        print_loss_summary(result.history, result.columns, "Adapters")
        return CommandResult(
            title="train-adapters",
            output=(
                f"Saved {','.join(result.bundle.groups())} to {ckpt_path}\n"
                f"trainable tensors: {len(trainable)}, frozen tensors: {len(frozen)}\nsha256: {digest}"
            ),
            metadata={"ckpt": str(ckpt_path), "sha256": digest, "groups": result.bundle.groups()},
        )


class GradCheckCommand(BaseCommand):
    name = "grad-check"
    description = "Compare analytic adapter gradients with central finite differences (use --preset tiny)"

    def add_arguments(self, parser: argparse.ArgumentParser):
        parser.add_argument("--ckpt", default=None, help="checkpoint with iea/tca groups (default: fresh init)")
        parser.add_argument("--epsilon", type=float, default=1e-4)
        parser.add_argument("--n-params", type=int, default=24)
        parser.add_argument("--zero-loss", action="store_true", help="set the target to the fused prediction")

    def execute(self, args: argparse.Namespace, ctx: CommandContext) -> CommandResult:
        cfg = ctx.cfg
        if args.ckpt:
            bundle = load_bundle(Path(args.ckpt), cfg)
        else:
            unet = build_unet(cfg)
            bundle = ModelBundle(
                unet=unet,
                iea=build_adapter(cfg, AdapterRole.IEA, unet),
                tca=build_adapter(cfg, AdapterRole.TCA, unet),
            )
        sample = render_reference(make_identity(0), cfg.backbone.image_size)

        report = grad_check(bundle, sample, cfg, args.epsilon, args.n_params, args.zero_loss)
        print_grad_check(report, GRAD_CHECK_TOLERANCE)

        if args.zero_loss:
            passed = report.max_abs_grad < 1e-8
            summary = f"max |grad| = {report.max_abs_grad:.2e}"
        else:
            passed = report.max_rel_error < GRAD_CHECK_TOLERANCE
            summary = f"max relative error = {report.max_rel_error:.2e} over {len(report.entries)} parameters"
        return CommandResult(
            title="grad-check",
            output=summary,
            metadata=report.model_dump(exclude={"entries"}),
            error=None if passed else f"gradient check failed: {summary}",
        )
