"""
日志系统 - 记录每次训练、采样与评估
"""

from __future__ import annotations
import os
import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Any, Optional

# 日志目录
LOG_DIR = Path(os.getenv("DUALPATH_LOG_DIR", ".dualpath/logs"))


def setup_logger(
    name: str = "dualpath",
    log_dir: Path = None,
    level: int = logging.INFO,
    console_output: bool = False
) -> logging.Logger:
    """
    设置日志记录器

    Args:
        name: 日志记录器名称
        log_dir: 日志目录
        level: 日志级别
        console_output: 是否输出到控制台

    Returns:
        Logger 实例
    """
    log_dir = Path(log_dir or LOG_DIR)
    log_dir.mkdir(parents=True, exist_ok=True)

    logger = logging.getLogger(name)
    logger.setLevel(level)
    logger.propagate = False

    # 清除现有 handlers
    for handler in list(logger.handlers):
        handler.close()
    logger.handlers.clear()

    # 文件 handler - 按日期分割
    today = datetime.now().strftime("%Y-%m-%d")
    log_file = log_dir / f"{today}.log"

    file_handler = logging.FileHandler(log_file, encoding="utf-8")
    file_handler.setLevel(level)

    formatter = logging.Formatter(
        "%(asctime)s | %(levelname)-8s | %(name)s | %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S"
    )
    file_handler.setFormatter(formatter)
    logger.addHandler(file_handler)

    if console_output:
        console_handler = logging.StreamHandler()
        console_handler.setLevel(level)
        console_handler.setFormatter(formatter)
        logger.addHandler(console_handler)

    return logger


class RunLogger:
    """
    运行日志记录器

    记录：
    - 运行开始/结束
    - 训练步与发散
    - 检查点、数据集写出
    - 掩码推断与生成结果
    - 评估行
    """

    def __init__(self, log_dir: Path = None, console_output: bool = False):
        self.log_dir = Path(log_dir or LOG_DIR)
        self.logger = setup_logger("dualpath", self.log_dir, console_output=console_output)
        self.train_logger = setup_logger("dualpath.train", self.log_dir, console_output=console_output)
        self.sample_logger = setup_logger("dualpath.sample", self.log_dir, console_output=console_output)
        self.eval_logger = setup_logger("dualpath.eval", self.log_dir, console_output=console_output)

    def _format_data(self, data: Any) -> str:
        """格式化数据为 JSON 字符串"""
        try:
            return json.dumps(data, ensure_ascii=False, default=str)
        except (TypeError, ValueError):
            return str(data)

    # ============ 运行日志 ============

    def run_start(self, run_id: str, command: str, preset: str, seed: int, out_dir: str):
        self.logger.info(
            f"RUN_START | run={run_id} | command={command} | preset={preset} | "
            f"seed={seed} | out_dir={out_dir}"
        )

    def run_end(self, run_id: str, command: str, success: bool, duration_ms: float):
        self.logger.info(
            f"RUN_END | run={run_id} | command={command} | success={success} | "
            f"duration_ms={duration_ms:.2f}"
        )

    # ============ 训练日志 ============

    def train_step(self, stage: str, step: int, losses: dict, lr: float):
        """记录训练步（losses 为各项损失的标量）"""
        self.train_logger.info(
            f"TRAIN_STEP | stage={stage} | step={step} | lr={lr:g} | "
            f"losses={self._format_data({k: round(v, 6) for k, v in losses.items()})}"
        )

    def train_diverged(self, stage: str, step: int, lr: float, grad_norm: Optional[float]):
        self.train_logger.error(
            f"TRAIN_DIVERGED | stage={stage} | step={step} | lr={lr:g} | grad_norm={grad_norm}"
        )

    def checkpoint_saved(self, path: str, entries: int, groups: list[str]):
        self.train_logger.info(
            f"CHECKPOINT_SAVED | path={path} | entries={entries} | groups={','.join(groups)}"
        )

    def dataset_written(self, path: str, count: int, sha256: str):
        self.logger.info(f"DATASET_WRITTEN | path={path} | count={count} | sha256={sha256}")

    # ============ 采样日志 ============

    def mask_generated(self, coverage: float, threshold: float, fallback: bool, duration_ms: float):
        log = self.sample_logger.warning if fallback else self.sample_logger.info
        log(
            f"MASK_GENERATED | coverage={coverage:.4f} | threshold={threshold:.4f} | "
            f"fallback={fallback} | duration_ms={duration_ms:.2f}"
        )

    def generation_done(self, seed: int, pathways: str, mode: str, report: dict):
        self.sample_logger.info(
            f"GENERATION_DONE | seed={seed} | pathways={pathways} | mode={mode} | "
            f"report={self._format_data(report)}"
        )

    # ============ 评估日志 ============

    def eval_row(self, table: str, row: dict):
        self.eval_logger.info(f"EVAL_ROW | table={table} | row={self._format_data(row)}")

    # ============ 通用日志 ============

    def info(self, message: str, **kwargs):
        extra = " | ".join(f"{k}={v}" for k, v in kwargs.items())
        self.logger.info(f"{message} | {extra}" if extra else message)

    def warning(self, message: str, **kwargs):
        extra = " | ".join(f"{k}={v}" for k, v in kwargs.items())
        self.logger.warning(f"{message} | {extra}" if extra else message)

    def error(self, message: str, **kwargs):
        extra = " | ".join(f"{k}={v}" for k, v in kwargs.items())
        self.logger.error(f"{message} | {extra}" if extra else message)

    def debug(self, message: str, **kwargs):
        extra = " | ".join(f"{k}={v}" for k, v in kwargs.items())
        self.logger.debug(f"{message} | {extra}" if extra else message)


# 全局日志实例
_logger: Optional[RunLogger] = None


def get_logger() -> RunLogger:
    """获取全局日志实例"""
    global _logger
    if _logger is None:
        _logger = RunLogger()
    return _logger


def set_log_dir(log_dir: Path, console_output: bool = False):
    """设置日志目录"""
    global _logger
    _logger = RunLogger(log_dir, console_output=console_output)
