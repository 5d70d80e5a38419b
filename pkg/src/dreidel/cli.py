"""Command-line interface.

Usage:
    dreidel solve --game simplified --a 2 --p 2 --b 2
    dreidel table --game full --total 8 --format csv
    dreidel verify-key --max-sum 40
    dreidel derive-constants
    dreidel fit --game full --min 15 --max 25
    dreidel duration --nuts 10 --seconds-per-spin 10
    dreidel gamblers --M 5 --N 5 --a 0 --verify

Exit status is 0 on success, 1 when a computation fails and 2 on usage errors.
"""

from __future__ import annotations

import csv
import io
import json
import os
import sys
from fractions import Fraction

import click
import mpmath

from . import analysis
from .arith import format_bigfloat, format_rational, precision_bits_from_env
from .chain import SpinCache, expected_spins, to_fraction
from .errors import DreidelError
from .games import GAMBLER, RULES, GameState, GamblerParams, gambler_closed_form, get_rules, simulate
from .keyeq import verify_key

GAMES = click.Choice(["simplified", "full", "gambler"])
DREIDEL_GAMES = click.Choice(["simplified", "full"])


class Context:
    def __init__(self, cache_path: str | None, bits: int):
        self.cache_path = cache_path
        self.bits = bits
        self.cache = SpinCache()
        if cache_path and os.path.exists(cache_path):
            try:
                self.cache.load(cache_path, RULES)
            except (OSError, ValueError, KeyError) as exc:
                raise click.UsageError(f"cannot read cache file {cache_path}: {exc}")

    def save(self) -> None:
        if self.cache_path:
            self.cache.dump(self.cache_path, RULES)


def _emit(text: str) -> None:
    click.echo(text.rstrip("\n"))


def _render(value, digits: int) -> str:
    if isinstance(value, Fraction):
        return format_rational(value)
    return format_bigfloat(value, digits)


def _dreidel_state(game: str, a, p, b) -> GameState:
    if a is None or b is None:
        raise click.UsageError(f"--a and --b are required for game {game}")
    if min(a, p, b) < 0:
        raise click.UsageError("nut counts must be nonnegative")
    return GameState(a, p, b)


def _gambler_params(M, N, a) -> GamblerParams:
    if M is None or N is None or a is None:
        raise click.UsageError("--M, --N and --a are required for the gambler game")
    try:
        return GamblerParams(M, N, a)
    except ValueError as exc:
        raise click.UsageError(str(exc))


@click.group()
@click.option("--cache", "cache_path", type=click.Path(dir_okay=False), default=None,
              help="JSON-lines cache of solved tables (read if present, rewritten on exit).")
@click.pass_context
def cli(ctx, cache_path):
    """Expected game lengths for two-player Dreidel and gambler's ruin."""
    try:
        bits = precision_bits_from_env()
    except ValueError as exc:
        raise click.UsageError(str(exc))
    ctx.obj = Context(cache_path, bits)


@cli.command()
@click.option("--game", type=GAMES, required=True)
@click.option("--a", type=int)
@click.option("--p", type=int, default=2, show_default=True)
@click.option("--b", type=int)
@click.option("--M", "M", type=int)
@click.option("--N", "N", type=int)
@click.option("--mode", type=click.Choice(["exact", "hiprec"]), default="exact", show_default=True)
@click.option("--digits", type=int, default=30, show_default=True)
@click.pass_obj
def solve(obj: Context, game, a, p, b, M, N, mode, digits):
    """Expected number of spins from one state."""
    if game == "gambler":
        state = _gambler_params(M, N, a).state
    else:
        if M is not None or N is not None:
            raise click.UsageError("--M/--N only apply to the gambler game")
        state = _dreidel_state(game, a, p, b)
    value = expected_spins(get_rules(game), state, mode, obj.cache, obj.bits)
    obj.save()
    _emit(_render(value, digits))


@cli.command()
@click.option("--game", type=GAMES, required=True)
@click.option("--total", type=int, help="Conserved a + p + b (Dreidel games).")
@click.option("--M", "M", type=int)
@click.option("--N", "N", type=int)
@click.option("--mode", type=click.Choice(["exact", "hiprec"]), default="exact", show_default=True)
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="json", show_default=True)
@click.option("--digits", type=int, default=40, show_default=True)
@click.pass_obj
def table(obj: Context, game, total, M, N, mode, fmt, digits):
    """Every non-absorbing state of one conserved block."""
    rules = get_rules(game)
    if game == "gambler":
        if M is None or N is None:
            raise click.UsageError("--M and --N are required for the gambler game")
        key = (M, N)
    else:
        if total is None:
            raise click.UsageError("--total is required for Dreidel games")
        key = total
    tab = obj.cache.table(rules, key, mode, obj.bits)
    records = tab.records(rules, digits)
    obj.save()
    if fmt == "json":
        _emit(json.dumps(records, indent=1))
        return
    buf = io.StringIO()
    fields = list(records[0].keys()) if records else ["game", "value", "mode"]
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    w.writerows(records)
    _emit(buf.getvalue())


@cli.command("verify-key")
@click.option("--max-sum", "max_sum", type=int, required=True)
@click.pass_obj
def verify_key_cmd(obj: Context, max_sum):
    """Check the Key relation against chain-solver values for a + b <= max-sum."""
    if max_sum < 2:
        raise click.UsageError("--max-sum must be >= 2")
    report = verify_key(max_sum, obj.cache)
    obj.save()
    lines = [report.summary()]
    for a, b, lhs, rhs in report.violations[:20]:
        lines.append(f"  T({a},{b}) = {format_rational(lhs)} but Key gives {format_rational(rhs)}")
    _emit("\n".join(lines))
    if not report.passed:
        click.get_current_context().exit(1)


@cli.command("derive-constants")
@click.option("--format", "fmt", type=click.Choice(["text", "json"]), default="text", show_default=True)
def derive_constants(fmt):
    """Solve for the model constants from the one-step recurrence."""
    d = analysis.derive_constants_recurrence()
    assignment = {k: str(v) for k, v in d.solution.assignment.items()}
    if fmt == "json":
        _emit(json.dumps({"assignment": assignment, "free": list(d.solution.free)}))
        return
    lines = [f"{k} = {v}" for k, v in assignment.items()]
    lines.append("free: " + ", ".join(d.solution.free))
    _emit("\n".join(lines))


@cli.command("verify-conjecture-key")
@click.option("--format", "fmt", type=click.Choice(["text", "json"]), default="text", show_default=True)
def verify_conjecture_key(fmt):
    """Substitute the bilinear model into the Key relation in both cases."""
    cases = analysis.verify_conjecture_in_key()
    data = {name: {"assignment": {k: str(v) for k, v in case.solution.assignment.items()},
                   "dropped": case.dropped}
            for name, case in cases.items()}
    if fmt == "json":
        _emit(json.dumps(data))
        return
    lines = []
    for name, info in data.items():
        sol = ", ".join(f"{k} = {v}" for k, v in info["assignment"].items())
        lines.append(f"case {name} (dropping {info['dropped']} terms): {sol}")
    _emit("\n".join(lines))


@cli.command()
@click.option("--game", type=DREIDEL_GAMES, required=True)
@click.option("--min", "lo", type=int)
@click.option("--max", "hi", type=int)
@click.option("--digits", type=int, default=30, show_default=True)
@click.option("--format", "fmt", type=click.Choice(["text", "json", "csv"]), default="text", show_default=True)
@click.pass_obj
def fit(obj: Context, game, lo, hi, digits, fmt):
    """Least-squares fit of the asymptotic model on the square grid [min, max]^2."""
    if game == "simplified":
        lo, hi = (30 if lo is None else lo), (60 if hi is None else hi)
    else:
        lo, hi = (15 if lo is None else lo), (25 if hi is None else hi)
    if lo < 1 or hi < lo:
        raise click.UsageError("need 1 <= --min <= --max")
    if game == "simplified":
        result = analysis.fit_simplified(lo, hi, lo, hi, bits=obj.bits)
    else:
        result = analysis.fit_full(lo, hi, lo, hi, bits=obj.bits, cache=obj.cache)
    obj.save()
    if fmt == "json":
        _emit(result.to_json(digits))
    elif fmt == "csv":
        _emit(result.to_csv(digits))
    else:
        lines = [f"{k} = {v}" for k, v in result.coefficients.to_dict(digits).items()]
        lines.append(f"grid {lo}..{hi} ({result.points} points), max residual "
                     f"{mpmath.nstr(analysis.to_bigfloat(result.residual_max), 6)}")
        _emit("\n".join(lines))


@cli.command()
@click.option("--game", type=DREIDEL_GAMES, required=True)
@click.option("--a", type=int, required=True)
@click.option("--b", type=int, required=True)
@click.option("--digits", type=int, default=10, show_default=True)
@click.pass_obj
def error(obj: Context, game, a, b, digits):
    """Exact value minus the published asymptotic model at (a, 2, b)."""
    if a < 1 or b < 1:
        raise click.UsageError("--a and --b must be >= 1")
    coeffs = analysis.REFERENCE_SIMPLIFIED if game == "simplified" else analysis.REFERENCE_FULL
    prof = analysis.error_profile(game, coeffs, [(a, b)], bits=obj.bits, cache=obj.cache)
    obj.save()
    eps = prof.epsilon[(a, b)]
    _emit(format_bigfloat(analysis.to_bigfloat(eps, obj.bits), digits))


@cli.command("simulate")
@click.option("--game", type=GAMES, required=True)
@click.option("--a", type=int)
@click.option("--p", type=int, default=2, show_default=True)
@click.option("--b", type=int)
@click.option("--M", "M", type=int)
@click.option("--N", "N", type=int)
@click.option("--trials", type=int, required=True)
@click.option("--seed", type=int, required=True)
def simulate_cmd(game, a, p, b, M, N, trials, seed):
    """Monte Carlo estimate of the expected number of spins."""
    if trials < 1:
        raise click.UsageError("--trials must be >= 1")
    if game == "gambler":
        start = _gambler_params(M, N, a).state
    else:
        start = _dreidel_state(game, a, p, b)
    rules = get_rules(game)
    if rules.is_absorbing(start):
        raise click.UsageError(f"start state {tuple(start)} is absorbing")
    _emit(simulate(rules, start, trials, seed).to_json())


@cli.command()
@click.option("--nuts", type=int, required=True)
@click.option("--seconds-per-spin", "seconds", type=float, default=10.0, show_default=True)
@click.option("--decimals", type=int, default=2, show_default=True)
@click.pass_obj
def duration(obj: Context, nuts, seconds, decimals):
    """Expected full-game length in minutes when both players start with --nuts."""
    if nuts < 2:
        raise click.UsageError("--nuts must be >= 2")
    minutes = analysis.duration_report(nuts, Fraction(str(seconds)), obj.bits, cache=obj.cache)
    obj.save()
    _emit(_fixed(minutes, decimals))


def _fixed(x, decimals: int) -> str:
    """Round half-even to ``decimals`` places, without float conversion."""
    if decimals < 0:
        raise click.UsageError("--decimals must be >= 0")
    q = round(to_fraction(x) * 10**decimals)
    sign = "-" if q < 0 else ""
    q = abs(q)
    whole, frac = divmod(q, 10**decimals)
    return f"{sign}{whole}.{frac:0{decimals}d}" if decimals > 0 else f"{sign}{whole}"


@cli.command()
@click.option("--M", "M", type=int, required=True)
@click.option("--N", "N", type=int, required=True)
@click.option("--a", type=int, required=True)
@click.option("--verify", is_flag=True, help="Also solve the chain and compare.")
@click.pass_obj
def gamblers(obj: Context, M, N, a, verify):
    """Closed-form expected duration (N + a)(M - a) of the symmetric walk."""
    params = _gambler_params(M, N, a)
    closed = gambler_closed_form(params)
    if not verify:
        _emit(format_rational(closed))
        return
    chain_value = expected_spins(GAMBLER, params.state, "exact", obj.cache)
    obj.save()
    status = "match" if chain_value == closed else "MISMATCH"
    _emit(f"closed form {format_rational(closed)}, chain {format_rational(chain_value)}: {status}")
    if chain_value != closed:
        click.get_current_context().exit(1)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="dreidel", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except click.Abort:
        return 1
    except (DreidelError, ValueError, ArithmeticError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
