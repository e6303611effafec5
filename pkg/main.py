#!/usr/bin/env python3
"""
DualPath 玩具尺度实现 - 主入口

双通路图像提示适配器（IEA / TCA）+ 特征级掩码融合（FFB），在合成玩具世界上训练、生成与评估。

使用方法:
    # 生成数据集并两阶段训练
    python main.py gen-data
    python main.py train-base
    python main.py train-adapters

    # 生成一张图（身份 3，红色背景、居中、大脸）
    python main.py --seed 7 generate red,center,large --identity 3

    # 评估 / 消融 / α 扫描
    python main.py evaluate
    python main.py ablate
    python main.py alpha-sweep

    # 8×8 小模型上的梯度检查
    python main.py --preset tiny grad-check

环境变量:
    DUALPATH_PRESET: 默认预设 (toy / paper-lr / tiny)
    DUALPATH_SEED: 默认随机种子
    DUALPATH_OUT_DIR: 输出目录 (默认: runs)
    DUALPATH_LOG_DIR: 日志目录 (默认: .dualpath/logs)
"""

import argparse
import os
import sys
import time
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

from rich.console import Console

console = Console()


def build_parser(registry) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="DualPath - dual-pathway image-prompt adapters on a toy world",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=__doc__,
    )
    parser.add_argument("--config", default=None, help="flat dotted-key JSON config applied over the preset")
    parser.add_argument(
        "--preset",
        default=os.getenv("DUALPATH_PRESET", "toy"),
        help="config preset (env: DUALPATH_PRESET)",
    )
    parser.add_argument(
        "--seed", type=int,
        default=int(os.environ["DUALPATH_SEED"]) if os.getenv("DUALPATH_SEED") else None,
        help="global seed (env: DUALPATH_SEED)",
    )
    parser.add_argument(
        "--out",
        default=os.getenv("DUALPATH_OUT_DIR"),
        help="output directory (env: DUALPATH_OUT_DIR)",
    )
    parser.add_argument("--dump-masks", default=None, metavar="DIR", help="write mask pipeline stages as PNG")
    parser.add_argument(
        "--log-dir",
        default=os.getenv("DUALPATH_LOG_DIR"),
        help="log directory (env: DUALPATH_LOG_DIR)",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="echo log lines to the console")
    parser.add_argument("--no-banner", action="store_true")
    registry.add_subparsers(parser)
    return parser


def resolve_config(args):
    """预设 → 配置文件 → 命令行覆盖"""
    from src.config import load_config
    from src.errors import ParameterError
    from src.presets import PresetManager

    presets = PresetManager()
    cfg = presets.get(args.preset)
    if cfg is None:
        raise ParameterError(f"unknown preset '{args.preset}' (available: {', '.join(presets.list())})")
    if args.config:
        cfg = load_config(Path(args.config), base=cfg)

    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.out:
        updates["out_dir"] = args.out
    return cfg.with_updates(updates) if updates else cfg


def main(argv: list[str] = None) -> int:
    """主函数，返回退出码"""
    from src.commands import CommandContext, create_default_registry
    from src.errors import ErrorHandler
    from src.logger import get_logger, set_log_dir
    from src.models import generate_run_id
    from src.ui import print_ascii_banner, print_gradient_text, print_status_bar

    registry = create_default_registry()
    parser = build_parser(registry)
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return 2

    if args.log_dir or args.verbose:
        set_log_dir(Path(args.log_dir) if args.log_dir else None, console_output=args.verbose)
    logger = get_logger()

    run_id = generate_run_id(args.command.replace("-", ""))
    started = time.perf_counter()
    success = False
    try:
        cfg = resolve_config(args)
        ctx = CommandContext(
            cfg=cfg,
            run_id=run_id,
            preset=args.preset,
            logger=logger,
            dump_masks=args.dump_masks,
        )

        if not args.no_banner:
            print_ascii_banner()
            print_gradient_text("DualPath · dual-pathway toy world")
        print_status_bar(args.command, args.preset, cfg.seed, str(ctx.out_dir), run_id)
        logger.run_start(run_id, args.command, args.preset, cfg.seed, str(ctx.out_dir))

        result = registry.get(args.command).execute(args, ctx)

        if result.output:
            console.print(f"\n[bold]{result.title or args.command}[/bold]")
            console.print(result.output, highlight=False, markup=False)
        if result.error:
            console.print(f"[red]{result.error}[/red]")
            logger.error("COMMAND_FAILED", command=args.command, error=result.error)
            return 1

        success = True
        return 0

    except KeyboardInterrupt as e:
        return ErrorHandler.report(e, args.command)
    except Exception as e:
        logger.error("RUN_FAILED", command=args.command, error=type(e).__name__, detail=str(e))
        return ErrorHandler.report(e, args.command)
    finally:
        logger.run_end(run_id, args.command, success, (time.perf_counter() - started) * 1000)


if __name__ == "__main__":
    sys.exit(main())
