"""Exact linear-arithmetic formulas over rational numbers.

Everything symbolic in the package is built from the types here:
``AffineExpr`` (sparse rational linear form plus constant), ``Atom``
(``expr <= 0``, ``expr < 0`` or ``expr = 0``), ``Clause`` (a conjunction
of atoms) and ``DnfFormula`` (a disjunction of clauses).  ``Interval`` and
``Box`` describe value ranges and input regions.

All values are immutable; methods return new objects.
"""

from __future__ import annotations

import math
import random
import re
from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction
from typing import Iterable, Iterator, Mapping, NamedTuple, Sequence, Union

Rational = Fraction

_DECIMAL_RE = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$")


class FormulaError(ValueError):
    pass


def rational_from_decimal(text: str) -> Fraction:
    """Parse a decimal literal such as ``"-0.0215"`` or ``"1.5e-3"`` exactly."""
    s = text.strip()
    if not _DECIMAL_RE.match(s):
        raise FormulaError(f"malformed decimal literal: {text!r}")
    return Fraction(Decimal(s))


def as_rational(value) -> Fraction:
    """Coerce ints, Fractions and decimal strings to ``Fraction``.

    Floats are rejected: silently converting a binary float would defeat
    the exactness guarantees downstream.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        if "/" in value:
            try:
                return Fraction(value.strip())
            except ValueError as exc:
                raise FormulaError(f"malformed rational literal: {value!r}") from exc
        return rational_from_decimal(value)
    if isinstance(value, Decimal):
        return Fraction(value)
    raise TypeError(f"cannot convert {type(value).__name__} to an exact rational")


def format_decimal(value, places: int = 8) -> str:
    """Round ``value`` to the nearest ``10**-places`` and render it."""
    if value == math.inf:
        return "inf"
    if value == -math.inf:
        return "-inf"
    q = Fraction(value)
    scaled = round(q * 10**places)
    sign = "-" if scaled < 0 else ""
    scaled = abs(scaled)
    whole, frac = divmod(scaled, 10**places)
    if places == 0:
        return f"{sign}{whole}"
    return f"{sign}{whole}.{frac:0{places}d}"


def format_exact(value) -> str:
    if value == math.inf:
        return "inf"
    if value == -math.inf:
        return "-inf"
    q = Fraction(value)
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


# --------------------------------------------------------------------------
# variables


class Role:
    INPUT = 0
    SUM = 1
    ACT = 2
    OUTPUT = 3
    PERTURBATION = 4
    AUX = 5


class Var(NamedTuple):
    """A variable with its role.

    Ordering is lexicographic on ``(role, layer, index, name)`` and is used
    to pick the leading coefficient during atom normalisation.
    """

    role: int
    layer: int
    index: int
    name: str = ""

    @staticmethod
    def input(i: int) -> "Var":
        return Var(Role.INPUT, 0, i)

    @staticmethod
    def sum(layer: int, i: int) -> "Var":
        return Var(Role.SUM, layer, i)

    @staticmethod
    def act(layer: int, i: int) -> "Var":
        return Var(Role.ACT, layer, i)

    @staticmethod
    def output(i: int) -> "Var":
        return Var(Role.OUTPUT, 0, i)

    @staticmethod
    def aux(name: str) -> "Var":
        return Var(Role.AUX, 0, 0, name)

    def __str__(self) -> str:
        if self.role == Role.INPUT:
            return f"x{self.index}"
        if self.role == Role.SUM:
            return f"z{self.layer}_{self.index}"
        if self.role == Role.ACT:
            return f"a{self.layer}_{self.index}"
        if self.role == Role.OUTPUT:
            return f"y{self.index}"
        if self.role == Role.PERTURBATION:
            return "delta"
        return self.name


PERTURBATION = Var(Role.PERTURBATION, 0, 0)


# --------------------------------------------------------------------------
# affine expressions


Number = Union[int, Fraction]


class AffineExpr:
    """``sum(c_v * v) + const`` with no zero coefficients stored."""

    __slots__ = ("coeffs", "const", "_hash")

    def __init__(self, coeffs: Mapping[Var, Number] | None = None, const: Number = 0):
        c = {}
        if coeffs:
            for v, k in coeffs.items():
                if k:
                    c[v] = as_rational(k)
        self.coeffs = c
        self.const = as_rational(const)
        self._hash = None

    @classmethod
    def _raw(cls, coeffs: dict, const: Fraction) -> "AffineExpr":
        # trusted constructor: coeffs already zero-free Fractions
        e = object.__new__(cls)
        e.coeffs = coeffs
        e.const = const
        e._hash = None
        return e

    @classmethod
    def var(cls, v: Var, coeff: Number = 1) -> "AffineExpr":
        return cls({v: coeff})

    @classmethod
    def constant(cls, c: Number) -> "AffineExpr":
        return cls(None, c)

    @classmethod
    def coerce(cls, value) -> "AffineExpr":
        if isinstance(value, AffineExpr):
            return value
        if isinstance(value, Var):
            return cls({value: 1})
        return cls(None, as_rational(value))

    def is_constant(self) -> bool:
        return not self.coeffs

    def vars(self) -> frozenset:
        return frozenset(self.coeffs)

    def coefficient(self, v: Var) -> Fraction:
        return self.coeffs.get(v, Fraction(0))

    def leading_var(self) -> Var | None:
        return min(self.coeffs) if self.coeffs else None

    def __add__(self, other) -> "AffineExpr":
        other = AffineExpr.coerce(other)
        c = dict(self.coeffs)
        for v, k in other.coeffs.items():
            s = c.get(v, 0) + k
            if s:
                c[v] = s
            else:
                c.pop(v, None)
        return AffineExpr._raw(c, self.const + other.const)

    __radd__ = __add__

    def __neg__(self) -> "AffineExpr":
        return AffineExpr._raw({v: -k for v, k in self.coeffs.items()}, -self.const)

    def __sub__(self, other) -> "AffineExpr":
        return self + (-AffineExpr.coerce(other))

    def __rsub__(self, other) -> "AffineExpr":
        return AffineExpr.coerce(other) - self

    def scale(self, k: Number) -> "AffineExpr":
        k = as_rational(k)
        if not k:
            return AffineExpr._raw({}, Fraction(0))
        return AffineExpr._raw({v: c * k for v, c in self.coeffs.items()}, self.const * k)

    def __mul__(self, k) -> "AffineExpr":
        if isinstance(k, (AffineExpr, Var)):
            raise TypeError("only scalar multiplication keeps an expression affine")
        return self.scale(k)

    __rmul__ = __mul__

    def __truediv__(self, k) -> "AffineExpr":
        k = as_rational(k)
        if not k:
            raise ZeroDivisionError("division of an affine expression by zero")
        return self.scale(1 / k)

    def evaluate(self, point: Mapping[Var, Number]) -> Fraction:
        total = self.const
        for v, k in self.coeffs.items():
            try:
                total += k * point[v]
            except KeyError:
                raise FormulaError(f"no value for variable {v}") from None
        return total

    def substitute(self, var: Var, replacement: "AffineExpr") -> "AffineExpr":
        """Replace ``var`` by ``replacement``, distributing its coefficient."""
        replacement = AffineExpr.coerce(replacement)
        if var in replacement.coeffs:
            raise FormulaError(f"self-referential substitution of {var}")
        k = self.coeffs.get(var)
        if k is None:
            return self
        c = dict(self.coeffs)
        del c[var]
        for v, r in replacement.coeffs.items():
            s = c.get(v, 0) + k * r
            if s:
                c[v] = s
            else:
                c.pop(v, None)
        return AffineExpr._raw(c, self.const + k * replacement.const)

    def substitute_many(self, mapping: Mapping[Var, "AffineExpr"]) -> "AffineExpr":
        """Simultaneous substitution; replacements must not mention mapped vars."""
        if not any(v in mapping for v in self.coeffs):
            return self
        c: dict = {}
        const = self.const
        for v, k in self.coeffs.items():
            r = mapping.get(v)
            if r is None:
                c[v] = c.get(v, 0) + k
                continue
            const += k * r.const
            for w, rw in r.coeffs.items():
                c[w] = c.get(w, 0) + k * rw
        return AffineExpr._raw({v: k for v, k in c.items() if k}, const)

    def __eq__(self, other) -> bool:
        if not isinstance(other, AffineExpr):
            return NotImplemented
        return self.const == other.const and self.coeffs == other.coeffs

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash((frozenset(self.coeffs.items()), self.const))
        return self._hash

    def __repr__(self) -> str:
        return f"AffineExpr({self})"

    def __str__(self) -> str:
        parts = []
        for v in sorted(self.coeffs):
            k = self.coeffs[v]
            mag = abs(k)
            term = str(v) if mag == 1 else f"{format_exact(mag)}*{v}"
            parts.append(("- " if k < 0 else "+ ") + term)
        if self.const or not parts:
            parts.append(("- " if self.const < 0 else "+ ") + format_exact(abs(self.const)))
        s = " ".join(parts)
        return s[2:] if s.startswith("+ ") else "-" + s[2:]


# --------------------------------------------------------------------------
# atoms


LE = "<="
LT = "<"
EQ = "="
_RELATIONS = (LE, LT, EQ)


class Atom:
    """Normalised linear constraint ``expr REL 0``.

    The coefficient of the smallest variable is scaled to +1 for equalities
    and to +-1 for inequalities, so syntactically different but equivalent
    atoms compare equal.  Use :func:`make_atom` to build one; it folds
    variable-free constraints to ``True``/``False``.
    """

    __slots__ = ("expr", "rel", "_hash", "_key")

    def __init__(self, expr: AffineExpr, rel: str):
        self.expr = expr
        self.rel = rel
        self._hash = None
        self._key = None

    def vars(self) -> frozenset:
        return self.expr.vars()

    def coefficient(self, v: Var) -> Fraction:
        return self.expr.coeffs.get(v, Fraction(0))

    @property
    def direction(self):
        """Hashable key of the coefficient vector (ignores the constant)."""
        if self._key is None:
            self._key = frozenset(self.expr.coeffs.items())
        return self._key

    def holds(self, point: Mapping[Var, Number]) -> bool:
        return _truth(self.expr.evaluate(point), self.rel)

    def negate(self) -> list["Atom"]:
        """Disjuncts of the negation: one atom, or two for an equality."""
        e = self.expr
        if self.rel == LE:
            return [make_atom(-e, LT)]
        if self.rel == LT:
            return [make_atom(-e, LE)]
        return [make_atom(e, LT), make_atom(-e, LT)]

    def substitute(self, var: Var, replacement: AffineExpr) -> "Atom | bool":
        if var not in self.expr.coeffs:
            return self
        return make_atom(self.expr.substitute(var, replacement), self.rel)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Atom):
            return NotImplemented
        return self.rel == other.rel and self.expr == other.expr

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash((self.expr, self.rel))
        return self._hash

    def sort_key(self):
        e = self.expr
        return (sorted((v, k) for v, k in e.coeffs.items()), e.const, self.rel)

    def __repr__(self) -> str:
        return f"Atom({self})"

    def __str__(self) -> str:
        return f"{self.expr} {self.rel} 0"


def _truth(value: Fraction, rel: str) -> bool:
    if rel == LE:
        return value <= 0
    if rel == LT:
        return value < 0
    return value == 0


def make_atom(expr, rel: str) -> "Atom | bool":
    if rel not in _RELATIONS:
        raise FormulaError(f"unknown relation {rel!r}")
    expr = AffineExpr.coerce(expr)
    if not expr.coeffs:
        return _truth(expr.const, rel)
    lead = expr.coeffs[min(expr.coeffs)]
    if rel == EQ:
        if lead != 1:
            expr = expr.scale(1 / lead)
    elif lead != 1 and lead != -1:
        expr = expr.scale(1 / abs(lead))
    return Atom(expr, rel)


def le(lhs, rhs=0):
    """``lhs <= rhs``"""
    return make_atom(AffineExpr.coerce(lhs) - AffineExpr.coerce(rhs), LE)


def lt(lhs, rhs=0):
    return make_atom(AffineExpr.coerce(lhs) - AffineExpr.coerce(rhs), LT)


def ge(lhs, rhs=0):
    return make_atom(AffineExpr.coerce(rhs) - AffineExpr.coerce(lhs), LE)


def gt(lhs, rhs=0):
    return make_atom(AffineExpr.coerce(rhs) - AffineExpr.coerce(lhs), LT)


def eq(lhs, rhs=0):
    return make_atom(AffineExpr.coerce(lhs) - AffineExpr.coerce(rhs), EQ)


# --------------------------------------------------------------------------
# clauses and DNF


class Clause:
    """Conjunction of atoms; the empty clause is TRUE.

    A FALSE clause is never materialised: :meth:`make` returns ``None``.
    """

    __slots__ = ("atoms", "_hash")

    def __init__(self, atoms: Iterable[Atom] = ()):
        self.atoms = frozenset(atoms)
        self._hash = None

    @classmethod
    def make(cls, items: Iterable["Atom | bool"]) -> "Clause | None":
        kept = []
        for a in items:
            if a is True:
                continue
            if a is False:
                return None
            kept.append(a)
        return cls(kept)

    def vars(self) -> frozenset:
        out = set()
        for a in self.atoms:
            out.update(a.expr.coeffs)
        return frozenset(out)

    def holds(self, point: Mapping[Var, Number]) -> bool:
        return all(a.holds(point) for a in self.atoms)

    def conjoin(self, other: "Clause | Iterable[Atom]") -> "Clause":
        other_atoms = other.atoms if isinstance(other, Clause) else frozenset(other)
        return Clause(self.atoms | other_atoms)

    def substitute(self, var: Var, replacement: AffineExpr) -> "Clause | None":
        return Clause.make(a.substitute(var, replacement) for a in self.atoms)

    def sorted_atoms(self) -> list[Atom]:
        return sorted(self.atoms, key=Atom.sort_key)

    def __len__(self) -> int:
        return len(self.atoms)

    def __iter__(self) -> Iterator[Atom]:
        return iter(self.atoms)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Clause):
            return NotImplemented
        return self.atoms == other.atoms

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(self.atoms)
        return self._hash

    def __repr__(self) -> str:
        return f"Clause({self})"

    def __str__(self) -> str:
        if not self.atoms:
            return "TRUE"
        return " & ".join(f"({a})" for a in self.sorted_atoms())


class DnfFormula:
    """Disjunction of clauses.  ``()`` is FALSE; ``(Clause(),)`` is TRUE."""

    __slots__ = ("clauses",)

    def __init__(self, clauses: Iterable["Clause | None"] = ()):
        seen = {}
        for c in clauses:
            if c is not None and c not in seen:
                seen[c] = None
        self.clauses = tuple(seen)

    @classmethod
    def true(cls) -> "DnfFormula":
        return cls((Clause(),))

    @classmethod
    def false(cls) -> "DnfFormula":
        return cls(())

    @classmethod
    def conjunction(cls, items: Iterable["Atom | bool"]) -> "DnfFormula":
        return cls((Clause.make(items),))

    @classmethod
    def of(cls, *clauses: Iterable["Atom | bool"]) -> "DnfFormula":
        """Build from atom lists, one list per clause."""
        return cls(Clause.make(c) for c in clauses)

    def is_false(self) -> bool:
        return not self.clauses

    def is_true(self) -> bool:
        return any(not c.atoms for c in self.clauses)

    def vars(self) -> frozenset:
        out = set()
        for c in self.clauses:
            out |= c.vars()
        return frozenset(out)

    def holds(self, point: Mapping[Var, Number]) -> bool:
        return any(c.holds(point) for c in self.clauses)

    def or_(self, other: "DnfFormula") -> "DnfFormula":
        return DnfFormula(self.clauses + other.clauses)

    def and_(self, other: "DnfFormula") -> "DnfFormula":
        """Distribute; no satisfiability pruning (see ``qe.conjoin`` for that)."""
        return DnfFormula(a.conjoin(b) for a in self.clauses for b in other.clauses)

    def and_atoms(self, atoms: Iterable["Atom | bool"]) -> "DnfFormula":
        extra = Clause.make(atoms)
        if extra is None:
            return DnfFormula.false()
        return DnfFormula(c.conjoin(extra) for c in self.clauses)

    def negate(self) -> "DnfFormula":
        """Syntactic negation, expanded back into DNF without pruning."""
        out = DnfFormula.true()
        for c in self.clauses:
            disjuncts = DnfFormula(Clause((n,)) for a in c.atoms for n in a.negate())
            out = out.and_(disjuncts)
        return out

    def substitute(self, var: Var, replacement: AffineExpr) -> "DnfFormula":
        return DnfFormula(c.substitute(var, replacement) for c in self.clauses)

    def __len__(self) -> int:
        return len(self.clauses)

    def __iter__(self) -> Iterator[Clause]:
        return iter(self.clauses)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DnfFormula):
            return NotImplemented
        return set(self.clauses) == set(other.clauses)

    def __hash__(self) -> int:
        return hash(frozenset(self.clauses))

    def __repr__(self) -> str:
        return f"DnfFormula({self})"

    def __str__(self) -> str:
        if not self.clauses:
            return "FALSE"
        return " | ".join(f"[{c}]" for c in self.clauses)


# --------------------------------------------------------------------------
# intervals and boxes


@dataclass(frozen=True)
class Interval:
    lower: object = -math.inf
    upper: object = math.inf
    lower_open: bool = False
    upper_open: bool = False

    def __post_init__(self):
        lo, hi = self.lower, self.upper
        if lo != -math.inf:
            object.__setattr__(self, "lower", as_rational(lo))
        if hi != math.inf:
            object.__setattr__(self, "upper", as_rational(hi))
        if self.lower > self.upper:
            raise FormulaError(f"empty interval [{lo}, {hi}]")
        if self.lower == self.upper and (self.lower_open or self.upper_open):
            raise FormulaError("degenerate interval must be closed")

    @classmethod
    def point(cls, value) -> "Interval":
        return cls(value, value)

    @property
    def finite(self) -> bool:
        return self.lower != -math.inf and self.upper != math.inf

    @property
    def width(self):
        return self.upper - self.lower

    def contains(self, value) -> bool:
        if value < self.lower or (self.lower_open and value == self.lower):
            return False
        if value > self.upper or (self.upper_open and value == self.upper):
            return False
        return True

    def issubset(self, other: "Interval") -> bool:
        if self.lower < other.lower:
            return False
        if self.lower == other.lower and other.lower_open and not self.lower_open:
            return False
        if self.upper > other.upper:
            return False
        if self.upper == other.upper and other.upper_open and not self.upper_open:
            return False
        return True

    def hull(self, other: "Interval") -> "Interval":
        if self.lower < other.lower:
            lo, lo_open = self.lower, self.lower_open
        elif other.lower < self.lower:
            lo, lo_open = other.lower, other.lower_open
        else:
            lo, lo_open = self.lower, self.lower_open and other.lower_open
        if self.upper > other.upper:
            hi, hi_open = self.upper, self.upper_open
        elif other.upper > self.upper:
            hi, hi_open = other.upper, other.upper_open
        else:
            hi, hi_open = self.upper, self.upper_open and other.upper_open
        return Interval(lo, hi, lo_open, hi_open)

    def affine(self, scale, shift) -> "Interval":
        """Image under ``v -> scale * v + shift``."""
        scale, shift = as_rational(scale), as_rational(shift)
        if scale == 0:
            return Interval.point(shift)
        a = _mul_ext(self.lower, scale) + shift
        b = _mul_ext(self.upper, scale) + shift
        if scale > 0:
            return Interval(a, b, self.lower_open, self.upper_open)
        return Interval(b, a, self.upper_open, self.lower_open)

    def __str__(self) -> str:
        lb = "(" if self.lower_open else "["
        rb = ")" if self.upper_open else "]"
        return f"{lb}{format_exact(self.lower)}, {format_exact(self.upper)}{rb}"

    def rounded(self, places: int = 8) -> str:
        lb = "(" if self.lower_open else "["
        rb = ")" if self.upper_open else "]"
        return f"{lb}{format_decimal(self.lower, places)}, {format_decimal(self.upper, places)}{rb}"


def _mul_ext(v, k):
    if v in (math.inf, -math.inf):
        return v if k > 0 else -v
    return v * k


def hull_all(intervals: Iterable[Interval]) -> Interval:
    it = iter(intervals)
    try:
        out = next(it)
    except StopIteration:
        raise FormulaError("hull of no intervals") from None
    for iv in it:
        out = out.hull(iv)
    return out


@dataclass(frozen=True)
class Box:
    """Closed, finite axis-aligned box ``prod [lo_i, hi_i]``."""

    bounds: tuple

    def __post_init__(self):
        norm = []
        for lo, hi in self.bounds:
            lo, hi = as_rational(lo), as_rational(hi)
            if lo > hi:
                raise FormulaError(f"box bound lo={lo} exceeds hi={hi}")
            norm.append((lo, hi))
        object.__setattr__(self, "bounds", tuple(norm))

    @classmethod
    def around(cls, center: Sequence, radius, clip: "Box | None" = None) -> "Box":
        """The L-infinity ball of ``radius`` around ``center``, optionally clipped."""
        r = as_rational(radius)
        if r < 0:
            raise FormulaError("negative radius")
        bounds = [(as_rational(c) - r, as_rational(c) + r) for c in center]
        if clip is not None:
            if clip.dim != len(bounds):
                raise FormulaError("clip box dimension mismatch")
            clipped = []
            for (lo, hi), (clo, chi) in zip(bounds, clip.bounds):
                lo, hi = max(lo, clo), min(hi, chi)
                if lo > hi:
                    raise FormulaError("ball does not meet the clip box")
                clipped.append((lo, hi))
            bounds = clipped
        return cls(tuple(bounds))

    @property
    def dim(self) -> int:
        return len(self.bounds)

    def interval(self, i: int) -> Interval:
        lo, hi = self.bounds[i]
        return Interval(lo, hi)

    def volume(self) -> Fraction:
        v = Fraction(1)
        for lo, hi in self.bounds:
            v *= hi - lo
        return v

    def contains(self, point: Sequence) -> bool:
        return len(point) == self.dim and all(lo <= p <= hi for p, (lo, hi) in zip(point, self.bounds))

    def center(self) -> list[Fraction]:
        return [(lo + hi) / 2 for lo, hi in self.bounds]

    def atoms(self, variables: Sequence[Var] | None = None) -> list["Atom | bool"]:
        if variables is None:
            variables = [Var.input(i) for i in range(self.dim)]
        out = []
        for v, (lo, hi) in zip(variables, self.bounds):
            out.append(ge(v, lo))
            out.append(le(v, hi))
        return out

    def sample(self, rng: random.Random, bits: int = 24, vertex_prob: float = 0.05) -> list[Fraction]:
        """Exact random point; occasionally snaps coordinates to a face."""
        point = []
        scale = 1 << bits
        for lo, hi in self.bounds:
            if rng.random() < vertex_prob:
                point.append(lo if rng.random() < 0.5 else hi)
            else:
                point.append(lo + (hi - lo) * Fraction(rng.randrange(scale + 1), scale))
        return point

    def __str__(self) -> str:
        return " x ".join(f"[{format_exact(lo)}, {format_exact(hi)}]" for lo, hi in self.bounds)
