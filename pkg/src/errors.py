"""
错误处理模块 - 定义错误类型和 CLI 错误分类
"""

from __future__ import annotations
from typing import Optional

from rich.console import Console

console = Console()


# ============ 错误类型 ============

class DualPathError(Exception):
    """DualPath 基础错误"""
    pass


class ParameterError(DualPathError, ValueError):
    """参数取值非法（范围、bbox、分辨率、模式不匹配）"""
    pass


class ConfigError(ParameterError):
    """配置文件错误（未知键、非法 JSON）"""
    pass


class StructuralError(DualPathError, ValueError):
    """形状或结构不一致（shape mismatch、未知层、缺少 taps）"""
    pass


class ScheduleIndexError(DualPathError, IndexError):
    """时间步越界"""
    pass


class StateError(DualPathError, RuntimeError):
    """状态错误（空记录、空数据集）"""
    pass


class TrainingDivergedError(StateError):
    """训练出现 NaN"""
    def __init__(
        self,
        message: str,
        step: int = None,
        lr: float = None,
        grad_norm: Optional[float] = None
    ):
        super().__init__(message)
        self.step = step
        self.lr = lr
        self.grad_norm = grad_norm

    def diagnostics(self) -> dict:
        return {"step": self.step, "lr": self.lr, "grad_norm": self.grad_norm}


class CheckpointError(DualPathError):
    """检查点读写错误"""
    pass


class DatasetFormatError(DualPathError):
    """数据集文件格式错误"""
    pass


# ============ 错误处理交互 ============

class ErrorHandler:
    """错误处理器 - 为 CLI 分类并格式化异常"""

    @staticmethod
    def classify_exception(e: Exception) -> tuple[str, int]:
        """
        分类异常

        Returns:
            (错误类型描述, 退出码)
        """
        if isinstance(e, TrainingDivergedError):
            return "💥 训练发散", 3
        if isinstance(e, ConfigError):
            return "⚙️ 配置错误", 2
        if isinstance(e, (CheckpointError, DatasetFormatError)):
            return "📦 文件格式错误", 4
        if isinstance(e, ParameterError):
            return "❌ 参数无效", 2
        if isinstance(e, StructuralError):
            return "📐 结构不一致", 5
        if isinstance(e, ScheduleIndexError):
            return "⏱️ 时间步越界", 5
        if isinstance(e, StateError):
            return "🔧 状态错误", 6
        if isinstance(e, FileNotFoundError):
            return "📁 文件不存在", 4
        if isinstance(e, KeyboardInterrupt):
            return "⏹ 已中断", 130

        return f"❓ {type(e).__name__}", 1

    @staticmethod
    def format_error(e: Exception, context: str = "") -> str:
        """格式化错误消息"""
        error_type, _ = ErrorHandler.classify_exception(e)
        lines = [f"[red]━━━━━━ 错误 ━━━━━━[/red]", f"[red]{error_type}[/red]"]
        if context:
            lines.append(f"[dim]位置: {context}[/dim]")
        lines.append(f"[dim]详情: {str(e)[:300]}[/dim]")
        if isinstance(e, TrainingDivergedError):
            diag = e.diagnostics()
            lines.append(
                f"[dim]step={diag['step']} lr={diag['lr']} grad_norm={diag['grad_norm']}[/dim]"
            )
        return "\n".join(lines)

    @staticmethod
    def report(e: Exception, context: str = "") -> int:
        """打印错误并返回退出码"""
        console.print(ErrorHandler.format_error(e, context))
        return ErrorHandler.classify_exception(e)[1]
