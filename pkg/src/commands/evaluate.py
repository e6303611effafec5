"""
评估命令 - evaluate / ablate / alpha-sweep
"""

from __future__ import annotations
import argparse
import csv
import json
from pathlib import Path

from .base import BaseCommand, CommandContext, CommandResult
from ..pipeline import (
    ABLATION_SETTINGS, ablate, alpha_sweep, evaluate, evaluation_prompts, load_bundle,
    summarize, write_eval_csv,
)
from ..ui import print_ablation_table, print_eval_summary, print_sweep_table, track_steps


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--data", default=None, help="DPTOY dataset (default <out>/data/train.dptoy)")
    parser.add_argument("--ckpt", default=None, help="checkpoint (default <out>/ckpt/adapters.dpckpt)")


def _write_rows(path: Path, rows: list[dict], columns: list[str]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)


class EvaluateCommand(BaseCommand):
    name = "evaluate"
    description = "Score generations for every (identity, caption) prompt"

    def add_arguments(self, parser: argparse.ArgumentParser):
        _add_common(parser)
        parser.add_argument(
            "--ground-truth", action="store_true",
            help="score rendered samples instead of generations (metric ceiling)",
        )

    def execute(self, args: argparse.Namespace, ctx: CommandContext) -> CommandResult:
        cfg = ctx.cfg
        dataset = ctx.load_dataset(args.data)
        bundle = None
        if not args.ground_truth:
            bundle = load_bundle(Path(args.ckpt) if args.ckpt else ctx.adapter_ckpt_path, cfg)

        total = len(evaluation_prompts(dataset, cfg)) * cfg.eval.images_per_prompt
        with track_steps("evaluate", total) as update:
            rows = evaluate(dataset, bundle, cfg, args.ground_truth, ctx.logger, progress=update)

        name = "ground_truth.csv" if args.ground_truth else "eval.csv"
        csv_path = ctx.path("eval", name)
        write_eval_csv(rows, csv_path)
        print_eval_summary(rows, "Ground truth" if args.ground_truth else "Evaluation")

        face, text = summarize(rows)
        return CommandResult(
            title="evaluate",
            output=f"{len(rows)} rows written to {csv_path}",
            metadata={"csv": str(csv_path), "face_score": face, "text_match": text, "n": len(rows)},
        )


class AblateCommand(BaseCommand):
    name = "ablate"
    description = "IEA / TCA / IEA+TCA / IEA+TCA+FFB ablation table"

    def add_arguments(self, parser: argparse.ArgumentParser):
        _add_common(parser)

    def execute(self, args: argparse.Namespace, ctx: CommandContext) -> CommandResult:
        cfg = ctx.cfg
        dataset = ctx.load_dataset(args.data)
        bundle = load_bundle(Path(args.ckpt) if args.ckpt else ctx.adapter_ckpt_path, cfg)

        per_setting = len(evaluation_prompts(dataset, cfg)) * cfg.eval.images_per_prompt
        with track_steps("ablate", per_setting * len(ABLATION_SETTINGS)) as update:
            done = {"offset": 0, "last": 0}

            def progress(step: int, total: int):
                if step < done["last"]:
                    done["offset"] += done["last"]
                done["last"] = step
                update(done["offset"] + step, per_setting * len(ABLATION_SETTINGS))

            rows = ablate(dataset, bundle, cfg, ctx.logger, progress=progress)

        csv_path = ctx.path("eval", "ablation.csv")
        _write_rows(csv_path, [r.model_dump() for r in rows], ["setting", "face_score", "text_match", "n"])
        print_ablation_table(rows)
        return CommandResult(
            title="ablate",
            output=f"ablation table written to {csv_path}",
            metadata={"csv": str(csv_path), "rows": [r.model_dump() for r in rows]},
        )


class AlphaSweepCommand(BaseCommand):
    name = "alpha-sweep"
    description = "Vary the IEA injection weight α and report the metric trend"

    def add_arguments(self, parser: argparse.ArgumentParser):
        _add_common(parser)
        parser.add_argument("--alphas", default=None, help='comma separated, e.g. "1.0,0.7,0.4,0.1"')

    def execute(self, args: argparse.Namespace, ctx: CommandContext) -> CommandResult:
        cfg = ctx.cfg
        if args.alphas:
            cfg = cfg.with_updates({"eval.alpha_sweep": [float(a) for a in args.alphas.split(",")]})
        dataset = ctx.load_dataset(args.data)
        bundle = load_bundle(Path(args.ckpt) if args.ckpt else ctx.adapter_ckpt_path, cfg)

        rows, correlations = alpha_sweep(dataset, bundle, cfg, ctx.logger)

        csv_path = ctx.path("eval", "alpha_sweep.csv")
        _write_rows(csv_path, [r.model_dump() for r in rows], ["alpha", "face_score", "text_match", "n"])
        ctx.path("eval", "alpha_sweep_spearman.json").write_text(
            json.dumps(correlations, indent=2), encoding="utf-8"
        )
        print_sweep_table(rows, correlations)
        return CommandResult(
            title="alpha-sweep",
            output=f"sweep written to {csv_path}",
            metadata={"csv": str(csv_path), "spearman": correlations},
        )
