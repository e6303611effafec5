"""
Rich 控制台配置 - 指标与通路的配色
"""

from rich.console import Console
from rich.theme import Theme

THEME = Theme({
    "iea": "magenta",
    "tca": "green",
    "metric.pass": "bold green",
    "metric.fail": "bold red",
    "mask.fallback": "yellow",
})

# 全局控制台实例；表格中的数值不做自动高亮
console = Console(theme=THEME, highlight=False)

__all__ = ["console", "THEME"]
