"""
Terminal and CSV output for fluidnet.

Numbers are always written with 9 significant digits. Every CSV written here
can be read back with read_csv.
"""

import csv
import os
from pathlib import Path
from typing import Iterable, Sequence

from rich.console import Console
from rich.table import Table

from fluidnet.network import ValidationReport
from fluidnet.ratefn import RateSolution
from fluidnet.reflection import ReflectionSolution
from fluidnet.simulate import McEstimate


class Colors:
    """ANSI color codes for terminal output."""
    RESET = "\033[0m"
    BOLD = "\033[1m"
    DIM = "\033[2m"

    RED = "\033[31m"
    GREEN = "\033[32m"
    YELLOW = "\033[33m"
    CYAN = "\033[36m"
    WHITE = "\033[37m"

    BRIGHT_YELLOW = "\033[93m"
    BRIGHT_CYAN = "\033[96m"

    @classmethod
    def enabled(cls) -> bool:
        """Check if colors should be enabled."""
        if os.environ.get("NO_COLOR"):
            return False
        return True


def c(text: str, *codes: str) -> str:
    """Apply color codes to text if colors are enabled."""
    if not Colors.enabled():
        return text
    return "".join(codes) + text + Colors.RESET


STATUS_MARKS = {
    "pass": ("✓", Colors.GREEN),
    "warn": ("!", Colors.YELLOW),
    "fail": ("✗", Colors.RED),
    "skip": ("-", Colors.DIM),
}


def num(value: float) -> str:
    return f"{value:.9g}"


def vec(values: Iterable[float]) -> str:
    return "(" + ", ".join(num(v) for v in values) + ")"


def format_validation_report(report: ValidationReport, title: str = "Network Check") -> str:
    """Format validation results, one line per check."""
    lines = [title, "-" * 40]
    for check in report.checks:
        mark, color = STATUS_MARKS[check.status]
        lines.append(f"{c(mark, color)} {check.name}: {check.detail}")
    return "\n".join(lines)


UNWEIGHTED_NOTE = "warning: no weighted node has exogenous input; not an overflow decay rate"


def format_rate_solution(solution: RateSolution, y: float) -> str:
    lines = [f"{c('y', Colors.BOLD)}        {num(y)}"]
    if solution.regime is not None:
        lines.append(f"{c('regime', Colors.BOLD)}   {solution.regime} (case {solution.case})")
    lines.append(f"{c('value', Colors.BOLD)}    {num(solution.value)}")
    if solution.feasible:
        lines.append(f"{c('x*', Colors.BOLD)}       {vec(solution.x_star)}")
        lines.append(f"{c('u*', Colors.BOLD)}       {vec(solution.u_star)}")
        if solution.achieved is not None:
            lines.append(f"{c('b^T Z(T)', Colors.BOLD)} {num(solution.achieved)}")
    else:
        lines.append(c("infeasible: no one-jump input reaches the threshold", Colors.RED))
    if not solution.exogenous_weighted:
        lines.append(c(UNWEIGHTED_NOTE, Colors.YELLOW))
    lines.append(c(f"method: {solution.method}", Colors.DIM))
    return "\n".join(lines)


def decay_text(est: McEstimate) -> str:
    return (">=" if est.lower_bound else "") + num(est.decay)


def parse_decay(text: str) -> tuple[float, bool]:
    """Inverse of decay_text: (value, is_lower_bound)."""
    if text.startswith(">="):
        return float(text[2:]), True
    return float(text), False


def estimates_table(estimates: Sequence[McEstimate], target: float | None = None) -> Table:
    table = Table(title="Overflow estimates")
    for column in ("n", "reps", "hits", "p_hat", "95% CI", "decay"):
        table.add_column(column, justify="right")
    for est in estimates:
        table.add_row(str(est.n), str(est.reps), str(est.hits), num(est.p_hat),
                      f"[{num(est.ci_lo)}, {num(est.ci_hi)}]", decay_text(est))
    if target is not None:
        table.caption = f"rate V(y) = {num(target)}"
    return table


def sweep_table(ys: Sequence[float], solutions: Sequence[RateSolution]) -> Table:
    table = Table(title="Overflow rate sweep")
    for column in ("y", "value", "x*", "u*"):
        table.add_column(column, justify="right")
    for y, sol in zip(ys, solutions):
        table.add_row(num(y), num(sol.value), vec(sol.x_star), vec(sol.u_star))
    if not all(sol.exogenous_weighted for sol in solutions):
        table.caption = UNWEIGHTED_NOTE
    return table


def print_table(table: Table) -> None:
    Console(no_color=not Colors.enabled()).print(table)


def reflection_rows(solution: ReflectionSolution) -> list[list[str]]:
    """t, Z_1..Z_d, Y_1..Y_d per breakpoint; a jump epoch gets its left-limit row first."""
    rows = []
    for t in solution.Z.breakpoints():
        left = solution.Z.left_limit(t)
        right = solution.Z.value(t)
        y = solution.Y.value(t)
        if t > 0.0 and left != right:
            rows.append([num(t), *map(num, left), *map(num, y)])
        rows.append([num(t), *map(num, right), *map(num, y)])
    return rows


def reflection_header(d: int) -> list[str]:
    return ["t", *(f"Z_{i + 1}" for i in range(d)), *(f"Y_{i + 1}" for i in range(d))]


SIMULATE_HEADER = ["n", "reps", "hits", "p_hat", "ci_lo", "ci_hi", "decay"]


def estimate_rows(estimates: Sequence[McEstimate]) -> list[list[str]]:
    return [
        [str(e.n), str(e.reps), str(e.hits), num(e.p_hat), num(e.ci_lo), num(e.ci_hi),
         decay_text(e)]
        for e in estimates
    ]


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[str]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def read_csv(path: Path) -> tuple[list[str], list[dict[str, str]]]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        rows = list(reader)
        return list(reader.fieldnames or []), rows
