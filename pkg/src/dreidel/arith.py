"""Exact rationals, high-precision floats and a small affine/polynomial algebra.

Exact values are plain :class:`fractions.Fraction` objects.  High-precision
values are :class:`mpmath.mpf` numbers produced under an explicit binary
precision.  The symbolic layer is deliberately tiny: polynomials in the
formal variables ``a``, ``b``, ``p`` whose coefficients are affine
expressions over a closed set of seven named unknowns.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from types import MappingProxyType
from typing import Iterable, Mapping, Union

import mpmath
from mpmath.libmp import from_rational, round_nearest

from .errors import InconsistentSystemError

ExactRational = Fraction
Number = Union[int, Fraction]

DEFAULT_PRECISION_BITS = 256
PRECISION_ENV_VAR = "DREIDEL_PRECISION_BITS"

# Pivot order for elimination; also the canonical print order.
UNKNOWNS = ("c3", "s1", "s2", "s0", "c1", "c2", "c0")
VARIABLES = ("a", "b", "p")
MAX_DEGREE = 3


# ---------------------------------------------------------------------------
# Rationals and big floats
# ---------------------------------------------------------------------------

def format_rational(q: Number) -> str:
    """Serialize as ``"num/den"``, or a bare integer when the denominator is 1."""
    q = Fraction(q)
    if q.denominator == 1:
        return str(q.numerator)
    return f"{q.numerator}/{q.denominator}"


def parse_rational(text: str) -> Fraction:
    text = text.strip()
    if "/" in text:
        num, den = text.split("/")
        den_i = int(den)
        if den_i <= 0:
            raise ValueError(f"bad denominator in {text!r}")
        return Fraction(int(num), den_i)
    return Fraction(int(text))


def precision_bits_from_env(default: int = DEFAULT_PRECISION_BITS) -> int:
    raw = os.environ.get(PRECISION_ENV_VAR)
    if not raw:
        return default
    bits = int(raw)
    if bits < 64:
        raise ValueError(f"{PRECISION_ENV_VAR} must be >= 64, got {bits}")
    return bits


def to_bigfloat(value, bits: int = DEFAULT_PRECISION_BITS) -> mpmath.mpf:
    """Correctly rounded conversion of an int, Fraction, str or mpf."""
    if bits < 64:
        raise ValueError("precision_bits must be >= 64")
    if isinstance(value, (int, Fraction)) or hasattr(value, "denominator"):
        value = Fraction(value)
        raw = from_rational(value.numerator, value.denominator, bits, round_nearest)
        return mpmath.mp.make_mpf(raw)
    with mpmath.workprec(bits):
        return +mpmath.mpf(value)


def format_bigfloat(x, digits: int = 30) -> str:
    """Fixed-point rendering with ``digits`` significant digits."""
    return mpmath.nstr(x, digits, min_fixed=-mpmath.inf, max_fixed=mpmath.inf,
                       strip_zeros=False)


def agreeing_digits(value, reference, bits: int = DEFAULT_PRECISION_BITS) -> float:
    """Number of significant decimal digits on which two numbers agree."""
    with mpmath.workprec(bits):
        x = to_bigfloat(value, bits) if not isinstance(value, mpmath.mpf) else value
        r = to_bigfloat(reference, bits) if not isinstance(reference, mpmath.mpf) else reference
        diff = abs(x - r)
        if diff == 0:
            return math.inf
        return float(-mpmath.log10(diff / abs(r)))


# ---------------------------------------------------------------------------
# Affine expressions over the named unknowns
# ---------------------------------------------------------------------------

class AffineExpr:
    """``constant + sum(coeff * unknown)`` with exact rational coefficients."""

    __slots__ = ("_constant", "_terms")

    def __init__(self, constant: Number = 0, terms: Mapping[str, Number] | None = None):
        clean = {}
        for name, coeff in (terms or {}).items():
            if name not in UNKNOWNS:
                raise ValueError(f"unknown name {name!r}; expected one of {UNKNOWNS}")
            coeff = Fraction(coeff)
            if coeff:
                clean[name] = coeff
        object.__setattr__(self, "_constant", Fraction(constant))
        object.__setattr__(self, "_terms", clean)

    def __setattr__(self, name, value):
        raise AttributeError("AffineExpr is immutable")

    @classmethod
    def unknown(cls, name: str) -> AffineExpr:
        return cls(0, {name: 1})

    @classmethod
    def lift(cls, value) -> AffineExpr:
        if isinstance(value, AffineExpr):
            return value
        return cls(value)

    @property
    def constant(self) -> Fraction:
        return self._constant

    @property
    def terms(self) -> Mapping[str, Fraction]:
        return MappingProxyType(self._terms)

    def coeff(self, name: str) -> Fraction:
        return self._terms.get(name, Fraction(0))

    def is_zero(self) -> bool:
        return not self._terms and self._constant == 0

    def is_constant(self) -> bool:
        return not self._terms

    def __add__(self, other) -> AffineExpr:
        if not isinstance(other, (AffineExpr, int, Fraction)):
            return NotImplemented
        other = AffineExpr.lift(other)
        terms = dict(self._terms)
        for name, coeff in other._terms.items():
            terms[name] = terms.get(name, 0) + coeff
        return AffineExpr(self._constant + other._constant, terms)

    __radd__ = __add__

    def __neg__(self) -> AffineExpr:
        return AffineExpr(-self._constant, {k: -v for k, v in self._terms.items()})

    def __sub__(self, other) -> AffineExpr:
        if not isinstance(other, (AffineExpr, int, Fraction)):
            return NotImplemented
        return self + (-AffineExpr.lift(other))

    def __rsub__(self, other) -> AffineExpr:
        return AffineExpr.lift(other) - self

    def __mul__(self, scalar) -> AffineExpr:
        if isinstance(scalar, AffineExpr):
            if scalar.is_constant():
                scalar = scalar.constant
            elif self.is_constant():
                return scalar * self._constant
            else:
                raise ValueError("product of two non-constant affine expressions")
        if not isinstance(scalar, (int, Fraction)):
            return NotImplemented
        return AffineExpr(self._constant * scalar,
                          {k: v * scalar for k, v in self._terms.items()})

    __rmul__ = __mul__

    def __truediv__(self, scalar) -> AffineExpr:
        if not isinstance(scalar, (int, Fraction)):
            return NotImplemented
        return self * (1 / Fraction(scalar))

    def __eq__(self, other) -> bool:
        if isinstance(other, (int, Fraction)):
            other = AffineExpr(other)
        if not isinstance(other, AffineExpr):
            return NotImplemented
        return self._constant == other._constant and self._terms == other._terms

    def __hash__(self) -> int:
        return hash((self._constant, frozenset(self._terms.items())))

    def evaluate(self, values: Mapping[str, Number]) -> Fraction:
        total = self._constant
        for name, coeff in self._terms.items():
            if name not in values:
                raise KeyError(f"no value supplied for {name}")
            total += coeff * Fraction(values[name])
        return total

    def substitute(self, assignment: Mapping[str, "AffineExpr | Number"]) -> AffineExpr:
        result = AffineExpr(self._constant)
        for name, coeff in self._terms.items():
            if name in assignment:
                result = result + AffineExpr.lift(assignment[name]) * coeff
            else:
                result = result + AffineExpr(0, {name: coeff})
        return result

    def __str__(self) -> str:
        parts = []
        for name in UNKNOWNS:
            if name in self._terms:
                parts.append(_signed_term(self._terms[name], name))
        if self._constant or not parts:
            parts.append(_signed_term(self._constant, ""))
        text = " ".join(parts)
        return text[2:] if text.startswith("+ ") else "-" + text[2:]

    def __repr__(self) -> str:
        return f"AffineExpr({self})"


def _signed_term(coeff: Fraction, name: str) -> str:
    sign = "-" if coeff < 0 else "+"
    mag = abs(coeff)
    if not name:
        return f"{sign} {format_rational(mag)}"
    if mag == 1:
        return f"{sign} {name}"
    return f"{sign} {format_rational(mag)}*{name}"


# ---------------------------------------------------------------------------
# Polynomials in a, b, p
# ---------------------------------------------------------------------------

Exponent = tuple[int, int, int]


class PolyABP:
    """Polynomial in ``a, b, p`` with :class:`AffineExpr` coefficients.

    Products are allowed only when at least one factor has constant
    coefficients, which keeps every coefficient affine in the unknowns.
    """

    __slots__ = ("_monomials",)

    def __init__(self, monomials: Mapping[Exponent, "AffineExpr | Number"] | None = None):
        clean: dict[Exponent, AffineExpr] = {}
        for exp, coeff in (monomials or {}).items():
            exp = tuple(int(e) for e in exp)
            if len(exp) != 3 or min(exp) < 0:
                raise ValueError(f"bad exponent {exp}")
            if sum(exp) > MAX_DEGREE:
                raise ValueError(f"total degree {sum(exp)} exceeds {MAX_DEGREE}")
            coeff = AffineExpr.lift(coeff)
            if exp in clean:
                coeff = clean[exp] + coeff
            if coeff.is_zero():
                clean.pop(exp, None)
            else:
                clean[exp] = coeff
        object.__setattr__(self, "_monomials", clean)

    def __setattr__(self, name, value):
        raise AttributeError("PolyABP is immutable")

    @classmethod
    def variable(cls, name: str) -> PolyABP:
        exp = [0, 0, 0]
        exp[VARIABLES.index(name)] = 1
        return cls({tuple(exp): 1})

    @classmethod
    def constant(cls, value) -> PolyABP:
        return cls({(0, 0, 0): value})

    @classmethod
    def lift(cls, value) -> PolyABP:
        if isinstance(value, PolyABP):
            return value
        return cls.constant(value)

    @property
    def monomials(self) -> Mapping[Exponent, AffineExpr]:
        return MappingProxyType(self._monomials)

    def coefficient(self, exp: Exponent) -> AffineExpr:
        return self._monomials.get(tuple(exp), AffineExpr())

    @property
    def degree(self) -> int:
        return max((sum(e) for e in self._monomials), default=0)

    def is_zero(self) -> bool:
        return not self._monomials

    def has_constant_coefficients(self) -> bool:
        return all(c.is_constant() for c in self._monomials.values())

    def __add__(self, other) -> PolyABP:
        if not isinstance(other, (PolyABP, AffineExpr, int, Fraction)):
            return NotImplemented
        other = PolyABP.lift(other)
        merged = dict(self._monomials)
        for exp, coeff in other._monomials.items():
            merged[exp] = merged[exp] + coeff if exp in merged else coeff
        return PolyABP(merged)

    __radd__ = __add__

    def __neg__(self) -> PolyABP:
        return PolyABP({e: -c for e, c in self._monomials.items()})

    def __sub__(self, other) -> PolyABP:
        if not isinstance(other, (PolyABP, AffineExpr, int, Fraction)):
            return NotImplemented
        return self + (-PolyABP.lift(other))

    def __rsub__(self, other) -> PolyABP:
        return PolyABP.lift(other) - self

    def __mul__(self, other) -> PolyABP:
        if isinstance(other, (int, Fraction, AffineExpr)):
            return PolyABP({e: c * other for e, c in self._monomials.items()})
        if not isinstance(other, PolyABP):
            return NotImplemented
        if not (self.has_constant_coefficients() or other.has_constant_coefficients()):
            raise ValueError("product would be nonlinear in the unknowns")
        out: dict[Exponent, AffineExpr] = {}
        for e1, c1 in self._monomials.items():
            for e2, c2 in other._monomials.items():
                exp = (e1[0] + e2[0], e1[1] + e2[1], e1[2] + e2[2])
                term = c1 * c2
                out[exp] = out[exp] + term if exp in out else term
        return PolyABP(out)

    __rmul__ = __mul__

    def __pow__(self, n: int) -> PolyABP:
        result = PolyABP.constant(1)
        for _ in range(n):
            result = result * self
        return result

    def __eq__(self, other) -> bool:
        if isinstance(other, (int, Fraction, AffineExpr)):
            other = PolyABP.lift(other)
        if not isinstance(other, PolyABP):
            return NotImplemented
        return self._monomials == other._monomials

    def __hash__(self) -> int:
        return hash(frozenset(self._monomials.items()))

    def evaluate(self, a: Number, b: Number, p: Number = 0) -> AffineExpr:
        total = AffineExpr()
        for (i, j, k), coeff in self._monomials.items():
            total = total + coeff * (Fraction(a) ** i * Fraction(b) ** j * Fraction(p) ** k)
        return total

    def substitute_unknowns(self, assignment: Mapping[str, "AffineExpr | Number"]) -> PolyABP:
        return PolyABP({e: c.substitute(assignment) for e, c in self._monomials.items()})

    def __str__(self) -> str:
        if not self._monomials:
            return "0"
        chunks = []
        for exp in sorted(self._monomials, key=lambda e: (-sum(e), e)):
            mono = "*".join(
                v if n == 1 else f"{v}^{n}" for v, n in zip(VARIABLES, exp) if n
            )
            coeff = str(self._monomials[exp])
            chunks.append(f"({coeff})*{mono}" if mono else f"({coeff})")
        return " + ".join(chunks)

    def __repr__(self) -> str:
        return f"PolyABP({self})"


A_VAR = PolyABP.variable("a")
B_VAR = PolyABP.variable("b")
P_VAR = PolyABP.variable("p")


def poly_shift_substitute(poly: PolyABP, mapping: Mapping[str, "PolyABP | int"]) -> PolyABP:
    """Compose ``poly`` with an affine integer change of the variables a, b, p.

    Variables missing from ``mapping`` are left unchanged.
    """
    images = {}
    for var in VARIABLES:
        image = PolyABP.lift(mapping.get(var, PolyABP.variable(var)))
        if image.degree > 1:
            raise ValueError(f"image of {var} is not affine: {image}")
        for coeff in image.monomials.values():
            if not coeff.is_constant() or coeff.constant.denominator != 1:
                raise ValueError(f"image of {var} must have integer coefficients: {image}")
        images[var] = image
    unknown = set(mapping) - set(VARIABLES)
    if unknown:
        raise ValueError(f"cannot substitute for {sorted(unknown)}")

    result = PolyABP()
    for (i, j, k), coeff in poly.monomials.items():
        term = images["a"] ** i * images["b"] ** j * images["p"] ** k
        result = result + term * coeff
    return result


def collect_constraints(poly: PolyABP) -> list[AffineExpr]:
    """Coefficient of every monomial present; ``poly`` vanishes iff all are zero."""
    return [poly.monomials[e] for e in sorted(poly.monomials, key=lambda e: (-sum(e), e))]


@dataclass(frozen=True)
class AffineSolution:
    """Result of :func:`solve_affine_system`: pivots expressed via free unknowns."""

    assignment: Mapping[str, AffineExpr]
    free: tuple[str, ...] = field(default=())

    def __getitem__(self, name: str) -> AffineExpr:
        if name in self.assignment:
            return self.assignment[name]
        if name in self.free:
            return AffineExpr.unknown(name)
        raise KeyError(name)


def solve_affine_system(constraints: Iterable[AffineExpr]) -> AffineSolution:
    """Exact Gauss-Jordan elimination of ``expr == 0`` constraints.

    Pivots are taken in the fixed order of :data:`UNKNOWNS`; unknowns that
    never become pivots are reported as free.
    """
    rows = [[c.coeff(u) for u in UNKNOWNS] + [c.constant] for c in constraints]
    pivots: dict[int, int] = {}
    used = set()
    for col in range(len(UNKNOWNS)):
        pivot_row = next((r for r in range(len(rows)) if r not in used and rows[r][col] != 0), None)
        if pivot_row is None:
            continue
        used.add(pivot_row)
        pivots[col] = pivot_row
        lead = rows[pivot_row][col]
        rows[pivot_row] = [v / lead for v in rows[pivot_row]]
        for r in range(len(rows)):
            if r != pivot_row and rows[r][col] != 0:
                f = rows[r][col]
                rows[r] = [v - f * w for v, w in zip(rows[r], rows[pivot_row])]
    for r, row in enumerate(rows):
        if r not in used and row[-1] != 0:
            raise InconsistentSystemError(f"constraint reduces to {row[-1]} = 0")

    free = tuple(u for i, u in enumerate(UNKNOWNS) if i not in pivots)
    assignment = {}
    for col, r in pivots.items():
        row = rows[r]
        terms = {u: -row[i] for i, u in enumerate(UNKNOWNS) if u in free}
        assignment[UNKNOWNS[col]] = AffineExpr(-row[-1], terms)
    return AffineSolution(assignment, free)


def geometric_poly_sum(d: int, x: Number) -> Fraction:
    """Closed form of ``sum_{i>=1} i**d * x**i`` for d in {0, 1, 2}, |x| < 1."""
    x = Fraction(x)
    if abs(x) >= 1:
        raise ValueError("geometric_poly_sum needs |x| < 1")
    if d == 0:
        return x / (1 - x)
    if d == 1:
        return x / (1 - x) ** 2
    if d == 2:
        return x * (1 + x) / (1 - x) ** 3
    raise ValueError(f"degree must be 0, 1 or 2, got {d}")
