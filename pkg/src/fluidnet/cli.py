"""
CLI for fluidnet.

Minimal argv dispatch using stdlib; numeric modules are imported lazily so
help and version stay instant.

Usage:
    fluidnet validate net.toml
    fluidnet tandem net.toml --y 2
    fluidnet --help
"""

import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_INVALID = 2
EXIT_INFEASIBLE = 3


class UsageError(ValueError):
    """Bad command-line arguments."""


@dataclass
class RunContext:
    """What a command reports back for its run manifest."""

    command: str
    config_hash: str | None = None
    seed: int | None = None
    outputs: list[str] = field(default_factory=list)


def print_help() -> None:
    """Print help message."""
    from fluidnet.report import Colors, c

    print(c("fluidnet", Colors.BOLD, Colors.BRIGHT_CYAN)
          + c(" - reflection, overflow rates and Monte Carlo for fluid networks", Colors.DIM))
    print()

    print(c("USAGE", Colors.BOLD, Colors.WHITE))
    print(f"  fluidnet {c('<command>', Colors.GREEN)} {c('<config.toml>', Colors.DIM)} [options]")
    print()

    print(c("COMMANDS", Colors.BOLD, Colors.WHITE))
    print(f"  {c('validate', Colors.BRIGHT_YELLOW)} {c('<cfg>', Colors.DIM)}                 Check routing, rates and stability")
    print(f"  {c('reflect', Colors.BRIGHT_YELLOW)} {c('<cfg> <paths>', Colors.DIM)}          Reflect a path literal file")
    print(f"      {c('--oracle-grid', Colors.CYAN)} <N>      Cross-check against the grid fixed-point oracle")
    print(f"      {c('--csv', Colors.CYAN)} <file>           Write t, Z_1..Z_d, Y_1..Y_d")
    print(f"  {c('rate', Colors.BRIGHT_YELLOW)} {c('<cfg>', Colors.DIM)}                     Solve the overflow rate problem")
    print(f"      {c('--b', Colors.CYAN)} <vec>              Weights of b^T Z(T), e.g. 0,1")
    print(f"      {c('--y', Colors.CYAN)} <val[,val...]>     Threshold; a list runs a sweep")
    print(f"      {c('--grid', Colors.CYAN)} <N>             Points per axis (default 41)")
    print(f"      {c('--csv', Colors.CYAN)} <file>           Write y, v_star, x*, u*")
    print(f"  {c('tandem', Colors.BRIGHT_YELLOW)} {c('<cfg>', Colors.DIM)}                   Closed-form tandem rate")
    print(f"      {c('--y', Colors.CYAN)} <val[,val...]>     Threshold(s)")
    print(f"      {c('--b', Colors.CYAN)} <vec>              Weights (default 0,1)")
    print(f"  {c('simulate', Colors.BRIGHT_YELLOW)} {c('<cfg>', Colors.DIM)}                 Monte Carlo overflow estimates")
    print(f"      {c('--b', Colors.CYAN)}, {c('--y', Colors.CYAN)}                 As for rate")
    print(f"      {c('--n', Colors.CYAN)} <list>             Scalings, e.g. 5,10,20")
    print(f"      {c('--reps', Colors.CYAN)} <N>             Replications per n")
    print(f"      {c('--seed', Colors.CYAN)} <S>             Seed (default 0)")
    print(f"      {c('--csv', Colors.CYAN)} <file>           Write n, reps, hits, p_hat, ci_lo, ci_hi, decay")
    print(f"  {c('compare', Colors.BRIGHT_YELLOW)} {c('<cfg>', Colors.DIM)}                  Rate next to Monte Carlo decay per n")
    print(f"      {c('--b --y --n --reps --seed --grid --csv', Colors.CYAN)}")
    print()

    print(c("OPTIONS", Colors.BOLD, Colors.WHITE))
    print(f"  {c('-h, --help', Colors.CYAN)}              Show this help")
    print(f"  {c('-v, --version', Colors.CYAN)}           Show version")
    print(f"  {c('--verbose', Colors.CYAN)}               Log solver and simulation progress")
    print()

    print(c("EXIT CODES", Colors.BOLD, Colors.WHITE))
    print("  0 ok   1 runtime error   2 invalid config or arguments   3 infeasible")
    print()

    print(c("EXAMPLES", Colors.BOLD, Colors.WHITE))
    print(f"  fluidnet validate {c('docs/tandem.toml', Colors.GREEN)}")
    print(f"  fluidnet tandem {c('docs/tandem.toml', Colors.GREEN)} {c('--y', Colors.CYAN)} 2")
    print(f"  fluidnet rate {c('docs/tandem.toml', Colors.GREEN)} {c('--b', Colors.CYAN)} 0,1 {c('--y', Colors.CYAN)} 0.5,1,2")
    print(f"  fluidnet simulate {c('docs/tandem.toml', Colors.GREEN)} {c('--b', Colors.CYAN)} 0,1 {c('--y', Colors.CYAN)} 1 {c('--n', Colors.CYAN)} 5,10,20 {c('--reps', Colors.CYAN)} 100000")


def print_version() -> None:
    """Print version."""
    from fluidnet import __version__
    print(f"fluidnet {__version__}")


def parse_args(
    args: list[str], flags: dict[str, bool], positional: int
) -> tuple[list[str], dict[str, str]]:
    """
    Split args into positionals and --flag values.

    flags maps each accepted flag to whether it takes a value.
    """
    values: dict[str, str] = {}
    rest: list[str] = []
    i = 0
    while i < len(args):
        arg = args[i]
        if arg.startswith("--"):
            if arg not in flags:
                raise UsageError(f"unknown option {arg}")
            if flags[arg]:
                if i + 1 >= len(args):
                    raise UsageError(f"{arg} needs a value")
                values[arg] = args[i + 1]
                i += 2
                continue
            values[arg] = ""
        else:
            rest.append(arg)
        i += 1
    if len(rest) != positional:
        raise UsageError(f"expected {positional} positional argument(s), got {len(rest)}")
    return rest, values


def parse_floats(text: str, name: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise UsageError(f"{name} must be comma-separated numbers, got {text!r}") from None


def parse_ints(text: str, name: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise UsageError(f"{name} must be comma-separated integers, got {text!r}") from None


def _require(values: dict[str, str], flag: str) -> str:
    if flag not in values:
        raise UsageError(f"{flag} is required")
    return values[flag]


def _int_option(values: dict[str, str], flag: str, default: str | None = None) -> int:
    text = values.get(flag, default) if default is not None else _require(values, flag)
    try:
        return int(text)
    except ValueError:
        raise UsageError(f"{flag} must be an integer, got {text!r}") from None


def load_checked(path: str, run: RunContext):
    """Load and validate a config; returns (config, None) or (None, exit code)."""
    from fluidnet.config import load_network_config
    from fluidnet.network import validate
    from fluidnet.report import format_validation_report

    cfg = load_network_config(path)
    run.config_hash = cfg.digest
    report = validate(cfg.network)
    if not report.ok:
        print(format_validation_report(report), file=sys.stderr)
        return None, EXIT_INVALID
    return cfg, None


def cmd_validate(args: list[str], run: RunContext) -> int:
    """Check a network config and print the report."""
    from fluidnet.config import load_network_config
    from fluidnet.network import validate
    from fluidnet.report import format_validation_report

    (path,), _ = parse_args(args, {}, 1)
    cfg = load_network_config(path)
    run.config_hash = cfg.digest
    report = validate(cfg.network)
    print(format_validation_report(report, title=f"Network Check: {path}"))
    return EXIT_OK if report.ok else EXIT_INVALID


def cmd_reflect(args: list[str], run: RunContext) -> int:
    """Reflect the paths in a literal file."""
    from fluidnet.paths import PathDomainError, parse_paths, uniform_distance
    from fluidnet.reflection import reflect, reflect_fixedpoint_oracle
    from fluidnet.report import (
        num,
        print_table,
        reflection_header,
        reflection_rows,
        write_csv,
    )

    (cfg_path, paths_file), values = parse_args(
        args, {"--oracle-grid": True, "--csv": True}, 2
    )
    cfg, code = load_checked(cfg_path, run)
    if cfg is None:
        return code
    net = cfg.network

    try:
        x = parse_paths(Path(paths_file).read_text(encoding="utf-8"))
    except PathDomainError as e:
        raise UsageError(f"{paths_file}: {e}") from None
    if x.dim != net.d:
        raise UsageError(f"{paths_file} has {x.dim} coordinates, network has {net.d} nodes")
    solution = reflect(net, x)
    header = reflection_header(net.d)
    rows = reflection_rows(solution)

    if "--csv" in values:
        out = Path(values["--csv"])
        write_csv(out, header, rows)
        run.outputs.append(str(out))
        print(f"Wrote {len(rows)} rows to {out}")
    else:
        from rich.table import Table

        table = Table(title=f"Reflection of {paths_file}")
        for column in header:
            table.add_column(column, justify="right")
        for row in rows:
            table.add_row(*row)
        print_table(table)

    if "--oracle-grid" in values:
        grid_n = _int_option(values, "--oracle-grid")
        oracle = reflect_fixedpoint_oracle(net, x, grid_n)
        z_gap = uniform_distance(solution.Z, oracle.Z)
        y_gap = uniform_distance(solution.Y, oracle.Y)
        print(f"oracle grid {grid_n}: sup|Z - Z_grid| = {num(z_gap)}, "
              f"sup|Y - Y_grid| = {num(y_gap)}")
    return EXIT_OK


def _rate_rows(ys, solutions, d: int) -> tuple[list[str], list[list[str]]]:
    from fluidnet.report import num

    header = ["y", "v_star", *(f"x_{i + 1}" for i in range(d)), *(f"u_{i + 1}" for i in range(d))]
    rows = [
        [num(y), num(sol.value), *map(num, sol.x_star), *map(num, sol.u_star)]
        for y, sol in zip(ys, solutions)
    ]
    return header, rows


def _print_solutions(ys, solutions) -> None:
    from fluidnet.report import format_rate_solution, print_table, sweep_table

    if len(ys) == 1:
        print(format_rate_solution(solutions[0], ys[0]))
    else:
        print_table(sweep_table(ys, solutions))


def cmd_rate(args: list[str], run: RunContext) -> int:
    """Solve the overflow rate problem at one threshold or a sweep."""
    from fluidnet.ratefn import OverflowProblem, solve_overflow
    from fluidnet.report import write_csv

    (cfg_path,), values = parse_args(
        args, {"--b": True, "--y": True, "--grid": True, "--csv": True}, 1
    )
    cfg, code = load_checked(cfg_path, run)
    if cfg is None:
        return code

    b = parse_floats(_require(values, "--b"), "--b")
    ys = parse_floats(_require(values, "--y"), "--y")
    grid = _int_option(values, "--grid", "41")
    problem = OverflowProblem(net=cfg.network, b=b, y=ys[0], T=cfg.horizon)
    solutions = [solve_overflow(problem.at(y), grid=grid) for y in ys]
    _print_solutions(ys, solutions)

    if "--csv" in values:
        out = Path(values["--csv"])
        write_csv(out, *_rate_rows(ys, solutions, cfg.network.d))
        run.outputs.append(str(out))
    return EXIT_OK if all(sol.feasible for sol in solutions) else EXIT_INFEASIBLE


def cmd_tandem(args: list[str], run: RunContext) -> int:
    """Closed-form tandem rate with regime and witness."""
    from fluidnet.ratefn import OverflowProblem, tandem_rate

    (cfg_path,), values = parse_args(args, {"--b": True, "--y": True}, 1)
    cfg, code = load_checked(cfg_path, run)
    if cfg is None:
        return code

    b = parse_floats(values.get("--b", "0,1"), "--b")
    ys = parse_floats(_require(values, "--y"), "--y")
    problem = OverflowProblem(net=cfg.network, b=b, y=ys[0], T=cfg.horizon)
    solutions = [tandem_rate(problem.at(y)) for y in ys]
    if len(ys) == 1:
        _print_solutions(ys, solutions)
    else:
        from fluidnet.report import num

        for y, sol in zip(ys, solutions):
            print(f"y={num(y)} regime={sol.regime} case=({sol.case}) value={num(sol.value)}")
    return EXIT_OK


def _mc_config(values: dict[str, str], y: float):
    from fluidnet.simulate import McConfig

    seed = _int_option(values, "--seed", "0")
    return McConfig(
        n_values=parse_ints(_require(values, "--n"), "--n"),
        reps=_int_option(values, "--reps"),
        seed=seed,
        b=parse_floats(_require(values, "--b"), "--b"),
        y=y,
        T=1.0,
    )


def cmd_simulate(args: list[str], run: RunContext) -> int:
    """Monte Carlo overflow probabilities and decay estimates."""
    from fluidnet.config import worker_count
    from fluidnet.report import (
        SIMULATE_HEADER,
        estimate_rows,
        estimates_table,
        print_table,
        write_csv,
    )
    from fluidnet.simulate import estimate_overflow

    (cfg_path,), values = parse_args(
        args, {"--b": True, "--y": True, "--n": True, "--reps": True, "--seed": True,
               "--csv": True}, 1
    )
    cfg, code = load_checked(cfg_path, run)
    if cfg is None:
        return code

    ys = parse_floats(_require(values, "--y"), "--y")
    if len(ys) != 1:
        raise UsageError("simulate takes a single --y; use compare for several")
    mc = _mc_config(values, ys[0]).model_copy(update={"T": cfg.horizon})
    run.seed = mc.seed
    estimates = estimate_overflow(cfg.network, mc, workers=worker_count())
    print_table(estimates_table(estimates))

    if "--csv" in values:
        out = Path(values["--csv"])
        write_csv(out, SIMULATE_HEADER, estimate_rows(estimates))
        run.outputs.append(str(out))
    return EXIT_OK


def cmd_compare(args: list[str], run: RunContext) -> int:
    """Rate V(y) next to the Monte Carlo decay estimate for each n."""
    from rich.table import Table

    from fluidnet.config import worker_count
    from fluidnet.ratefn import OverflowProblem, solve_overflow
    from fluidnet.report import decay_text, num, print_table, write_csv
    from fluidnet.simulate import estimate_overflow

    (cfg_path,), values = parse_args(
        args, {"--b": True, "--y": True, "--n": True, "--reps": True, "--seed": True,
               "--grid": True, "--csv": True}, 1
    )
    cfg, code = load_checked(cfg_path, run)
    if cfg is None:
        return code

    ys = parse_floats(_require(values, "--y"), "--y")
    grid = _int_option(values, "--grid", "41")
    base = _mc_config(values, ys[0]).model_copy(update={"T": cfg.horizon})
    run.seed = base.seed
    problem = OverflowProblem(net=cfg.network, b=base.b, y=ys[0], T=cfg.horizon)
    workers = worker_count()

    header = ["y", "v_star", *(f"decay_n{n}" for n in base.n_values)]
    rows = []
    for y in ys:
        v_star = solve_overflow(problem.at(y), grid=grid).value
        estimates = estimate_overflow(cfg.network, base.model_copy(update={"y": y}),
                                      workers=workers)
        rows.append([num(y), num(v_star), *(decay_text(e) for e in estimates)])

    table = Table(title="Rate vs Monte Carlo decay")
    for column in header:
        table.add_column(column, justify="right")
    for row in rows:
        table.add_row(*row)
    print_table(table)

    if "--csv" in values:
        out = Path(values["--csv"])
        write_csv(out, header, rows)
        run.outputs.append(str(out))
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "reflect": cmd_reflect,
    "rate": cmd_rate,
    "tandem": cmd_tandem,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
}


def configure_logging(verbose: bool) -> None:
    from fluidnet.config import log_level

    logging.basicConfig(
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        level=logging.INFO if verbose else log_level(),
        stream=sys.stderr,
    )


def record_run(run: RunContext, wall_time: float) -> None:
    """Append the run manifest; a failed append is logged, never fatal."""
    from fluidnet import __version__
    from fluidnet.config import ensure_dirs, get_runs_log_path
    from fluidnet.runlog import RunManifest, append_manifest

    manifest = RunManifest(command=run.command, config_hash=run.config_hash, seed=run.seed,
                           version=__version__, wall_time=wall_time, outputs=run.outputs)
    try:
        ensure_dirs()
        append_manifest(manifest, get_runs_log_path())
    except OSError as e:
        logger.warning(f"Could not write run manifest: {e}")


def run_command(name: str, args: list[str]) -> int:
    """Run one subcommand, map errors to exit codes, and record the run."""
    from pydantic import ValidationError

    from fluidnet.config import ConfigError

    run = RunContext(command=" ".join([name, *args]))
    started = time.perf_counter()
    try:
        code = COMMANDS[name](args, run)
    except (ConfigError, UsageError) as e:
        print(f"Error: {e}", file=sys.stderr)
        code = EXIT_INVALID
    except ValidationError as e:
        print(f"Error: {e}", file=sys.stderr)
        code = EXIT_INVALID
    except (ValueError, RuntimeError, OSError) as e:
        print(f"Error: {e}", file=sys.stderr)
        code = EXIT_RUNTIME
    record_run(run, time.perf_counter() - started)
    return code


def main(argv: list[str] | None = None) -> int:
    """Main entry point."""
    args = list(sys.argv[1:] if argv is None else argv)
    verbose = "--verbose" in args
    args = [a for a in args if a != "--verbose"]

    if not args or args[0] in ("--help", "-h", "help"):
        print_help()
        return EXIT_OK

    if args[0] in ("--version", "-v", "version"):
        print_version()
        return EXIT_OK

    configure_logging(verbose)

    if args[0] in COMMANDS:
        return run_command(args[0], args[1:])

    print(f"Unknown command: {args[0]}", file=sys.stderr)
    print("Run 'fluidnet --help' for usage.", file=sys.stderr)
    return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
