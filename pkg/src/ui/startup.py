"""
启动界面模块 - ASCII Banner、渐变色标题、状态栏
"""

from rich.align import Align
from rich.box import MINIMAL
from rich.panel import Panel
from rich.text import Text

from .console import console


def print_ascii_banner():
    """打印 DualPath ASCII Banner"""
    art = """
    ╔╦╗╦ ╦╔═╗╦  ╔═╗╔═╗╔╦╗╦ ╦
     ║║║ ║╠═╣║  ╠═╝╠═╣ ║ ╠═╣
    ═╩╝╚═╝╩ ╩╩═╝╩  ╩ ╩ ╩ ╩ ╩
    """

    lines = art.strip().split('\n')
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        color = "cyan" if i / len(lines) < 0.5 else "magenta"
        console.print(Align.center(line), style=f"bold {color}")
    console.print()


def print_gradient_text(text: str, colors: list[str] = None):
    """
    打印渐变色文字

    Args:
        text: 要显示的文字
        colors: 颜色列表，默认使用蓝紫渐变
    """
    if colors is None:
        colors = ["deep_sky_blue1", "dodger_blue1", "blue", "blue_violet", "medium_purple", "magenta"]

    gradient_text = Text()
    for i, char in enumerate(text):
        color_idx = int(i / len(text) * len(colors))
        color = colors[min(color_idx, len(colors) - 1)]
        gradient_text.append(char, style=f"bold {color}")

    console.print(Align.center(gradient_text))
    console.print()


def print_status_bar(
    command: str,
    preset: str,
    seed: int,
    out_dir: str,
    run_id: str = None,
):
    """
    打印状态栏

    Args:
        command: 当前命令
        preset: 配置预设名
        seed: 随机种子
        out_dir: 输出目录
        run_id: 运行 ID
    """
    status_items = [
        f"[bold blue]🔧 {command}[/bold blue]",
        f"[bold yellow]⚙️ {preset}[/bold yellow]",
        f"[bold cyan]🎲 seed={seed}[/bold cyan]",
        f"[bold green]📁 {out_dir}[/bold green]",
    ]
    if run_id:
        status_items.append(f"[dim]{run_id}[/dim]")

    console.print(Panel(" │ ".join(status_items), box=MINIMAL, style="on grey23"))
    console.print()
