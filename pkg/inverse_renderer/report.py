"""Report generation: console output, JSON, CSV and text reports.

Provides rich colored console output and file export for renders, fits,
gradient checks and evaluations.
"""

import csv
import json
import logging
from typing import Any, Dict, List, Optional

from rich.console import Console
from rich.panel import Panel
from rich.table import Table
from tabulate import tabulate

from .autodiff import GradCheckReport
from .metrics import Evaluation
from .renderer import RenderResult
from .training import FitResult, StepRecord

logger = logging.getLogger(__name__)

console = Console()

TRACE_FIELDS = ["step", "rec", "kl", "smooth", "total", "elapsed_ms", "boundary_flips"]


def _fmt(value: Optional[float], digits: int = 6) -> str:
    return "n/a" if value is None else f"{value:.{digits}f}"


def print_render_summary(result: RenderResult, output_path: str, colored: bool = True) -> None:
    """Print image size, hit count, timing and classification counts of a render.

    Args:
        result: RenderResult to display.
        output_path: Where the image was written.
        colored: Whether to use colored output.
    """
    info = result.to_dict()
    counts = {k: v for k, v in result.stats.items() if k not in ("rays", "hits")}
    if colored:
        lines = [
            f"[bold]Render[/bold]  [green]✓ {output_path}[/green]",
            "",
            f"Resolution:     [cyan]{info['width']}x{info['height']}[/cyan]",
            f"Hit Pixels:     [cyan]{info['hit_pixels']}[/cyan]",
            f"Mean Radiance:  [cyan]{info['mean_radiance']:.5f}[/cyan]",
            f"Render Time:    [cyan]{result.elapsed_ms:.1f} ms[/cyan]",
        ]
        if counts:
            lines.append("")
            lines.append("[bold white]Light Classes:[/bold white]")
            for key, value in counts.items():
                lines.append(f"  [dim]{key}: {value}[/dim]")
        console.print(Panel("\n".join(lines), border_style="green", expand=True))
    else:
        sep = "=" * 60
        print(sep)
        print(f"Render: {output_path}")
        print(f"Resolution:    {info['width']}x{info['height']}")
        print(f"Hit Pixels:    {info['hit_pixels']}")
        print(f"Mean Radiance: {info['mean_radiance']:.5f}")
        print(f"Render Time:   {result.elapsed_ms:.1f} ms")
        for key, value in counts.items():
            print(f"  {key}: {value}")
        print(sep)


def print_fit_summary(result: FitResult, colored: bool = True) -> None:
    """Print the loss trace endpoints and timing of a fit.

    Args:
        result: FitResult to display.
        colored: Whether to use colored output.
    """
    trace = result.trace
    if not trace:
        message = "No training steps were run."
        console.print(f"[yellow]{message}[/yellow]") if colored else print(message)
        return

    first, last = trace[0], trace[-1]
    best = min(trace, key=lambda r: r.total)
    if colored:
        console.print()
        console.print(Panel("[bold]Fit Summary[/bold]", border_style="cyan", expand=True))
        table = Table(show_header=False, box=None)
        table.add_column("Metric", style="bold")
        table.add_column("Value", style="cyan")
        table.add_row("Steps", str(len(trace)))
        table.add_row("Initial Loss", f"{first.total:.6f}")
        table.add_row("Final Loss", f"{last.total:.6f}")
        table.add_row("Best Loss", f"{best.total:.6f} (step {best.step})")
        table.add_row("Final L1", f"{last.rec:.6f}")
        table.add_row("Total Time", f"{result.elapsed_ms / 1000.0:.1f} s")
        console.print(table)
    else:
        print("\n" + "=" * 60)
        print("FIT SUMMARY")
        print("=" * 60)
        print(f"Steps:        {len(trace)}")
        print(f"Initial Loss: {first.total:.6f}")
        print(f"Final Loss:   {last.total:.6f}")
        print(f"Best Loss:    {best.total:.6f} (step {best.step})")
        print(f"Final L1:     {last.rec:.6f}")
        print(f"Total Time:   {result.elapsed_ms / 1000.0:.1f} s")
        print("=" * 60)


def print_gradcheck_report(report: GradCheckReport, tolerance: float, colored: bool = True) -> None:
    """Print max relative error and the worst entries of a gradient check."""
    passed = report.max_rel_err <= tolerance
    worst = sorted(report.entries, key=lambda e: e[3], reverse=True)[:5]
    if colored:
        status = "[green]✓ PASS[/green]" if passed else "[red]✗ FAIL[/red]"
        lines = [
            f"[bold]Gradient Check[/bold]  {status}",
            "",
            f"max_rel_err:    [cyan]{report.max_rel_err:.3e}[/cyan]  (tolerance {tolerance:.0e})",
            f"Worst Group:    [cyan]{report.worst_param or '-'}[/cyan]",
            f"Entries:        [cyan]{report.checked}[/cyan]",
        ]
        console.print(Panel("\n".join(lines), border_style="green" if passed else "red", expand=True))
        if worst:
            table = Table()
            table.add_column("Group", style="bold")
            table.add_column("Tape", style="cyan")
            table.add_column("Finite Diff.", style="cyan")
            table.add_column("Rel. Err", style="yellow")
            for name, analytic, numeric, err in worst:
                table.add_row(name, f"{analytic:.6e}", f"{numeric:.6e}", f"{err:.2e}")
            console.print(table)
    else:
        print(f"max_rel_err: {report.max_rel_err:.3e} ({'PASS' if passed else 'FAIL'}, tolerance {tolerance:.0e})")
        print(f"worst group: {report.worst_param or '-'}")
        print(f"entries:     {report.checked}")


def format_eval_report(evaluation: Evaluation) -> str:
    """Plain-text evaluation report: per-view table plus dataset means."""
    rows = [
        [
            v.view,
            _fmt(v.mse), _fmt(v.psnr, 2), _fmt(v.ssim, 4),
            _fmt(v.albedo_mse), _fmt(v.roughness_mse), _fmt(v.roughness_are, 4),
        ]
        for v in evaluation.views
    ]
    headers = ["view", "mse", "psnr", "ssim", "albedo_mse", "roughness_mse", "roughness_are"]
    summary = evaluation.to_dict()["summary"]
    lines = [
        tabulate(rows, headers=headers, tablefmt="github"),
        "",
        tabulate(
            [
                ["mean mse", _fmt(summary["mse"])],
                ["mean psnr", _fmt(summary["psnr"], 2)],
                ["mean ssim", _fmt(summary["ssim"], 4)],
                ["albedo mse", _fmt(summary["albedo_mse"])],
                ["albedo psnr", _fmt(summary["albedo_psnr"], 2)],
                ["roughness mse", _fmt(summary["roughness_mse"])],
                ["roughness are", _fmt(summary["roughness_are"], 4)],
                ["env map mse", _fmt(summary["env_mse"])],
                ["lpips", evaluation.lpips],
            ],
            tablefmt="plain",
        ),
    ]
    return "\n".join(lines) + "\n"


def print_eval_report(evaluation: Evaluation, colored: bool = True) -> None:
    """Print per-view metrics and dataset means."""
    if colored:
        table = Table(title="Evaluation")
        for name in ("View", "MSE", "PSNR", "SSIM", "Albedo MSE", "Roughness ARE"):
            table.add_column(name, style="cyan" if name != "View" else "bold")
        for v in evaluation.views:
            table.add_row(str(v.view), _fmt(v.mse), _fmt(v.psnr, 2), _fmt(v.ssim, 4), _fmt(v.albedo_mse), _fmt(v.roughness_are, 4))
        console.print(table)
        console.print(f"Env map MSE: [cyan]{_fmt(evaluation.env_mse)}[/cyan]   LPIPS: [dim]{evaluation.lpips}[/dim]")
    else:
        print(format_eval_report(evaluation), end="")


def save_eval_report(evaluation: Evaluation, output_path: str) -> None:
    """Write the plain-text report, or JSON when the path ends in .json."""
    with open(output_path, "w", encoding="utf-8") as f:
        if output_path.lower().endswith(".json"):
            json.dump(evaluation.to_dict(), f, indent=2)
        else:
            f.write(format_eval_report(evaluation))
    logger.info("Evaluation report saved to: %s", output_path)
    console.print(f"[green]Evaluation report saved to: {output_path}[/green]")


def save_trace_json(trace: List[StepRecord], output_path: str) -> None:
    """Save the loss trace as a JSON list of step records."""
    payload: Dict[str, Any] = {"steps": len(trace), "trace": [r.to_dict() for r in trace]}
    with open(output_path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)
    logger.info("JSON trace saved to: %s", output_path)
    console.print(f"[green]JSON trace saved to: {output_path}[/green]")


def save_trace_csv(trace: List[StepRecord], output_path: str) -> None:
    """Save the loss trace as CSV with one row per step."""
    with open(output_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=TRACE_FIELDS)
        writer.writeheader()
        for r in trace:
            writer.writerow(r.to_dict())
    logger.info("CSV trace saved to: %s", output_path)
    console.print(f"[green]CSV trace saved to: {output_path}[/green]")
