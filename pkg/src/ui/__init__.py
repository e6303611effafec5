"""
UI 模块 - Rich 控制台和显示组件
"""

from .console import console
from .startup import (
    print_ascii_banner,
    print_gradient_text,
    print_status_bar,
)
from .report import (
    track_steps,
    print_loss_summary,
    print_eval_summary,
    print_ablation_table,
    print_sweep_table,
    print_grad_check,
    print_generation_report,
)

__all__ = [
    # 控制台
    "console",
    # 启动界面
    "print_ascii_banner",
    "print_gradient_text",
    "print_status_bar",
    # 结果展示
    "track_steps",
    "print_loss_summary",
    "print_eval_summary",
    "print_ablation_table",
    "print_sweep_table",
    "print_grad_check",
    "print_generation_report",
]
