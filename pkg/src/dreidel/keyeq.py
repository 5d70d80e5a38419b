"""Reduction of the simplified game to pot-2 values ``T(a, b) = D(a, 2, b)``.

Conditioning on the first gimel turns the recurrence into a closed linear
relation among the ``T`` values on one line ``a + b = m``:

    T(a, b) = sum_{i=0}^{min(2a-2, 2b-1)} 2^-i
            + sum_{i=1}^{min(a, b)}   T(b-i, a+i) / 2^(2i-1)
            + sum_{i=2}^{min(a, b+1)} T(a-i, b+i) / 2^(2i-2)

with ``T`` vanishing whenever either argument is zero.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Mapping, Union

import gmpy2

from .arith import format_rational, parse_rational
from .chain import GameState, SpinCache, expected_spins
from .errors import SingularSystemError
from .games import SIMPLIFIED

log = logging.getLogger(__name__)

TLookup = Union[Mapping[tuple[int, int], Fraction], Callable[[int, int], Fraction]]

# (m, reason) pairs for lines where the Key system could not be used.
REDUCED_SOLVE_INCIDENTS: list[tuple[int, str]] = []


@dataclass
class TCombination:
    """``constant + sum(coeff * T(x, y))`` with every ``x + y`` on one line."""

    constant: Fraction
    terms: dict[tuple[int, int], Fraction] = field(default_factory=dict)
    self_referential: bool = False

    def evaluate(self, lookup: TLookup) -> Fraction:
        get = _getter(lookup)
        return self.constant + sum((c * get(x, y) for (x, y), c in self.terms.items()), Fraction(0))

    def to_json(self) -> str:
        return json.dumps({
            "const": format_rational(self.constant),
            "terms": {f"{x},{y}": format_rational(c) for (x, y), c in sorted(self.terms.items())},
        })

    @classmethod
    def from_json(cls, text: str) -> TCombination:
        data = json.loads(text)
        terms = {}
        for k, v in data["terms"].items():
            x, y = (int(s) for s in k.split(","))
            terms[(x, y)] = parse_rational(v)
        return cls(parse_rational(data["const"]), terms)


def _getter(lookup: TLookup) -> Callable[[int, int], Fraction]:
    if callable(lookup):
        return lookup
    return lambda x, y: lookup[(x, y)]


def expand_shin_chain(a: int, p: int, b: int) -> TCombination:
    """Write ``D(a, p, b)`` in terms of pot-2 values by unrolling the recurrence.

    Every reference with pot 2 is kept as a ``T`` term; every other reference
    is expanded again.  Only shin steps raise the pot, so the unrolling walks
    a single shin chain and stops when a player runs dry.  For a pot-2 input
    the result may contain ``T(a, b)`` itself (when ``b = a + 1``); the
    ``self_referential`` flag is then set and the term is left in place.
    """
    if a < 1 or b < 1 or p < 0:
        raise ValueError(f"({a}, {p}, {b}) is not a non-absorbing state")
    memo: dict[GameState, TCombination] = {}

    def unroll(state: GameState) -> TCombination:
        if state in memo:
            return memo[state]
        const = Fraction(1)
        terms: dict[tuple[int, int], Fraction] = {}
        for branch in SIMPLIFIED.transitions(state):
            if branch.absorbing:
                continue
            nxt = branch.state
            if nxt.p == 2:
                key = (nxt.a, nxt.b)
                terms[key] = terms.get(key, 0) + branch.probability
            else:
                sub = unroll(nxt)
                const += branch.probability * sub.constant
                for key, c in sub.terms.items():
                    terms[key] = terms.get(key, 0) + branch.probability * c
        combo = TCombination(const, {k: v for k, v in terms.items() if v})
        memo[state] = combo
        return combo

    combo = unroll(GameState(a, p, b))
    if p == 2 and (a, b) in combo.terms:
        combo = TCombination(combo.constant, dict(combo.terms), True)
    return combo


def key_terms(a: int, b: int) -> TCombination:
    """Coefficients of the Key relation for ``T(a, b)``, boundary terms dropped."""
    if a < 1 or b < 1:
        raise ValueError("key_terms needs a, b >= 1")
    const = sum((Fraction(1, 2**i) for i in range(min(2 * a - 2, 2 * b - 1) + 1)), Fraction(0))
    terms: dict[tuple[int, int], Fraction] = {}
    for i in range(1, min(a, b) + 1):
        x, y = b - i, a + i
        if x > 0:
            terms[(x, y)] = terms.get((x, y), 0) + Fraction(1, 2 ** (2 * i - 1))
    for i in range(2, min(a, b + 1) + 1):
        x, y = a - i, b + i
        if x > 0:
            terms[(x, y)] = terms.get((x, y), 0) + Fraction(1, 2 ** (2 * i - 2))
    return TCombination(const, terms, (a, b) in terms)


def key_rhs(a: int, b: int, lookup: TLookup) -> Fraction:
    """Right side of the Key relation evaluated with the supplied ``T`` values."""
    return key_terms(a, b).evaluate(lookup)


@dataclass
class KeyReport:
    m_max: int
    lines: dict[int, bool] = field(default_factory=dict)
    checked: int = 0
    violations: list[tuple[int, int, Fraction, Fraction]] = field(default_factory=list)
    worst: Fraction = Fraction(0)

    @property
    def passed(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        state = "PASS" if self.passed else "FAIL"
        return (f"{state}: {self.checked} identities on lines 2..{self.m_max}, "
                f"{len(self.violations)} violations, worst |lhs - rhs| = {format_rational(self.worst)}")


def chain_T_line(m: int, cache: SpinCache | None = None) -> dict[tuple[int, int], Fraction]:
    """``T`` on the line ``a + b = m`` from the generic chain solver."""
    return {(a, m - a): expected_spins(SIMPLIFIED, GameState(a, 2, m - a), "exact", cache)
            for a in range(1, m)}


def verify_key(m_max: int, cache: SpinCache | None = None) -> KeyReport:
    """Check the Key relation exactly against chain-solver values on every line."""
    if m_max < 2:
        raise ValueError("m_max must be >= 2")
    report = KeyReport(m_max)
    for m in range(2, m_max + 1):
        T = chain_T_line(m, cache)
        ok = True
        for (a, b), lhs in T.items():
            rhs = key_rhs(a, b, T)
            report.checked += 1
            if rhs != lhs:
                ok = False
                report.violations.append((a, b, lhs, rhs))
                report.worst = max(report.worst, abs(lhs - rhs))
        report.lines[m] = ok
    return report


def solve_dense_exact(matrix: list[list], rhs: list) -> list[Fraction]:
    """Gaussian elimination over the rationals with largest-magnitude pivots."""
    n = len(matrix)
    rows = [[gmpy2.mpq(v) for v in row] + [gmpy2.mpq(r)] for row, r in zip(matrix, rhs)]
    for k in range(n):
        piv = max(range(k, n), key=lambda i: abs(rows[i][k]))
        if rows[piv][k] == 0:
            raise SingularSystemError(f"no pivot in column {k}")
        rows[k], rows[piv] = rows[piv], rows[k]
        pk = rows[k]
        inv = 1 / pk[k]
        nz = [j for j in range(k + 1, n + 1) if pk[j]]
        for i in range(k + 1, n):
            row = rows[i]
            if row[k]:
                f = row[k] * inv
                row[k] = gmpy2.mpq(0)
                for j in nz:
                    row[j] -= f * pk[j]
    x = [gmpy2.mpq(0)] * n
    for k in range(n - 1, -1, -1):
        acc = rows[k][n]
        for j in range(k + 1, n):
            if rows[k][j]:
                acc -= rows[k][j] * x[j]
        x[k] = acc / rows[k][k]
    return [Fraction(int(v.numerator), int(v.denominator)) for v in x]


@lru_cache(maxsize=None)
def _reduced_line(m: int) -> tuple[Fraction, ...]:
    n = m - 1
    matrix = [[Fraction(0)] * n for _ in range(n)]
    rhs = []
    for a in range(1, m):
        combo = key_terms(a, m - a)
        row = matrix[a - 1]
        row[a - 1] += 1
        for (x, _y), c in combo.terms.items():
            row[x - 1] -= c
        rhs.append(combo.constant)
    try:
        return tuple(solve_dense_exact(matrix, rhs))
    except SingularSystemError as exc:
        REDUCED_SOLVE_INCIDENTS.append((m, str(exc)))
        log.warning("Key system singular on line %d (%s); using chain solver", m, exc)
        T = chain_T_line(m)
        return tuple(T[(a, m - a)] for a in range(1, m))


def reduced_solve_T(m: int) -> dict[tuple[int, int], Fraction]:
    """Exact ``T(a, m - a)`` for ``1 <= a <= m - 1`` from the Key system alone."""
    if m < 2:
        raise ValueError("line total m must be >= 2")
    return {(a, m - a): v for a, v in enumerate(_reduced_line(m), start=1)}


def T_exact(a: int, b: int) -> Fraction:
    if a <= 0 or b <= 0:
        return Fraction(0)
    return _reduced_line(a + b)[a - 1]
