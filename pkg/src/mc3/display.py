import pandas as pd
from rich.console import Console
from rich.table import Table
from rich.text import Text

from .gradient_suite import GradCheckResult, TOLERANCE


def _format_cell(value: object) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def draw_frame(frame: pd.DataFrame, title: str | None = None) -> None:
    """Renders a data frame as a table on stdout."""
    table = Table(title=title)
    for column in frame.columns:
        justify = "right" if pd.api.types.is_numeric_dtype(frame[column]) else "left"
        table.add_column(str(column), justify=justify)
    for row in frame.itertuples(index=False):
        table.add_row(*(_format_cell(v) for v in row))
    Console().print(table)


def draw_grad_check(results: list[GradCheckResult]) -> None:
    """Renders the worst error per check, with failing checks in red."""
    worst: dict[str, float] = {}
    for result in results:
        worst[result.name] = max(worst.get(result.name, 0.0), result.max_error)

    table = Table(title=f"Gradient checks (tolerance {TOLERANCE:g})")
    table.add_column("Check")
    table.add_column("Max error", justify="right")
    table.add_column("Result")
    for name, error in worst.items():
        passed = error < TOLERANCE
        table.add_row(
            name,
            f"{error:.3e}",
            Text("PASS" if passed else "FAIL", style="bold green" if passed else "bold red"),
        )
    Console().print(table)
