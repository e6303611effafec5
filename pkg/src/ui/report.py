"""
结果展示 - 训练进度、损失摘要、评估/消融/α 扫描表、梯度检查
"""

from __future__ import annotations
import math
from contextlib import contextmanager
from typing import Iterator, Optional

from rich.box import ROUNDED
from rich.panel import Panel
from rich.progress import (
    BarColumn, MofNCompleteColumn, Progress, SpinnerColumn, TextColumn, TimeRemainingColumn,
)
from rich.table import Table

from ..models import AblationRow, EvalRow, GenerationReport, GradCheckReport, SweepRow
from .console import console

BAR_WIDTH = 30


def _bar(ratio: float, color: str) -> str:
    ratio = 0.0 if math.isnan(ratio) else min(max(ratio, 0.0), 1.0)
    filled = int(ratio * BAR_WIDTH)
    return f"[{color}]{'█' * filled}{'░' * (BAR_WIDTH - filled)}[/{color}]"


def _fmt(value: float) -> str:
    return "-" if value is None or math.isnan(value) else f"{value:.4f}"


@contextmanager
def track_steps(description: str, total: int) -> Iterator:
    """
    训练/评估进度条

    Yields:
        回调 update(step, total, row=None)；row 含 loss 时显示在描述中
    """
    with Progress(
        SpinnerColumn(),
        TextColumn("[bold blue]{task.description}"),
        BarColumn(),
        MofNCompleteColumn(),
        TimeRemainingColumn(),
        console=console,
        transient=False,
    ) as progress:
        task = progress.add_task(description, total=max(total, 1))

        def update(step: int, total_steps: int, row: Optional[dict] = None):
            text = description
            if row:
                loss = row.get("total", row.get("loss"))
                if loss is not None:
                    text = f"{description} loss={loss:.4f}"
            progress.update(task, completed=step, total=max(total_steps, 1), description=text)

        yield update


def print_loss_summary(history: list[dict], columns: list[str], title: str = "Training"):
    """首尾损失对比"""
    if not history:
        console.print("[dim]No training steps were run.[/dim]")
        return
    first, last = history[0], history[-1]
    table = Table(box=ROUNDED, show_header=True, padding=(0, 2))
    table.add_column("Loss", style="dim")
    table.add_column("First", justify="right")
    table.add_column("Last", justify="right")
    table.add_column("Last / First", width=BAR_WIDTH)
    for column in columns:
        if column == "step":
            continue
        start, end = first[column], last[column]
        ratio = end / start if start else 0.0
        table.add_row(column, f"{start:.5f}", f"{end:.5f}", _bar(ratio, "cyan"))
    console.print(Panel(table, title=f"[bold]📉 {title} ({last['step']} steps)[/bold]", border_style="cyan"))


def print_eval_summary(rows: list[EvalRow], title: str = "Evaluation"):
    if not rows:
        console.print("[dim]Empty prompt list, nothing evaluated.[/dim]")
        return
    face = sum(r.face_score for r in rows) / len(rows)
    text = sum(r.text_match for r in rows) / len(rows)
    table = Table(box=ROUNDED, show_header=False, padding=(0, 2))
    table.add_column("Metric", style="dim")
    table.add_column("Value", justify="right")
    table.add_column("Bar", width=BAR_WIDTH)
    table.add_row("face_score", _fmt(face), _bar((face + 1) / 2, "iea"))
    table.add_row("text_match", _fmt(text), _bar(text, "tca"))
    table.add_row("images", str(len(rows)), "")
    console.print(Panel(table, title=f"[bold]📊 {title}[/bold]", border_style="cyan"))


def print_ablation_table(rows: list[AblationRow]):
    table = Table(title="Ablation", box=ROUNDED, show_header=True)
    table.add_column("Setting", style="cyan")
    table.add_column("face_score", justify="right")
    table.add_column("text_match", justify="right")
    table.add_column("n", justify="right", style="dim")
    for row in rows:
        table.add_row(row.setting, _fmt(row.face_score), _fmt(row.text_match), str(row.n))
    console.print(table)


def print_sweep_table(rows: list[SweepRow], correlations: dict[str, float]):
    table = Table(title="α sweep (IEA pathway)", box=ROUNDED, show_header=True)
    table.add_column("α", style="cyan", justify="right")
    table.add_column("face_score", justify="right")
    table.add_column("text_match", justify="right")
    table.add_column("n", justify="right", style="dim")
    for row in rows:
        table.add_row(f"{row.alpha:g}", _fmt(row.face_score), _fmt(row.text_match), str(row.n))
    console.print(table)
    console.print(
        f"[dim]Spearman ρ(α, text_match) = {_fmt(correlations.get('text_match'))}   "
        f"ρ(α, face_score) = {_fmt(correlations.get('face_score'))}[/dim]"
    )


def print_grad_check(report: GradCheckReport, tolerance: float):
    table = Table(title=f"Gradient check (ε={report.epsilon:g})", box=ROUNDED, show_header=True)
    table.add_column("Parameter", style="cyan")
    table.add_column("Index", justify="right", style="dim")
    table.add_column("Analytic", justify="right")
    table.add_column("Numeric", justify="right")
    table.add_column("Rel. error", justify="right")
    for e in report.entries:
        style = "metric.fail" if e.rel_error >= tolerance else "metric.pass"
        table.add_row(
            e.name, str(e.index), f"{e.analytic:.6e}", f"{e.numeric:.6e}",
            f"[{style}]{e.rel_error:.2e}[/{style}]",
        )
    console.print(table)
    console.print(
        f"[dim]max rel error {report.max_rel_error:.2e} │ max |grad| {report.max_abs_grad:.2e} │ "
        f"checked {','.join(report.checked_groups)} │ frozen {','.join(report.frozen_groups)}[/dim]"
    )


def print_generation_report(report: GenerationReport):
    table = Table(box=ROUNDED, show_header=False, padding=(0, 2))
    table.add_column("Field", style="dim")
    table.add_column("Value")
    table.add_row("caption", report.caption)
    table.add_row("pathways", f"{report.pathways.value} ({report.mode.value})")
    table.add_row("face_score", _fmt(report.face_score))
    table.add_row("text_match", _fmt(report.text_match))
    mask = report.mask
    fallback = " [mask.fallback](fallback box)[/mask.fallback]" if mask.fallback else ""
    table.add_row("mask", f"coverage {mask.coverage:.3f}, τ={mask.threshold:.3f}, {mask.components} comp.{fallback}")
    table.add_row("timings", ", ".join(f"{k}={v:.0f}" for k, v in report.timings.items()))
    console.print(Panel(table, title=f"[bold]🖼 Generation seed={report.seed}[/bold]", border_style="cyan"))
