"""Quantifier elimination for linear real arithmetic over DNF formulas.

Existential quantifiers distribute over disjunction, so each clause is
projected on its own: equalities are used first for Gaussian substitution,
then the remaining variables are removed by Fourier-Motzkin elimination.
Derived inequalities carry the set of original inequalities they were built
from; an inequality whose set grows beyond ``1 + steps`` is redundant
(Imbert's first acceleration theorem) and is discarded on the spot.

Universal quantifiers are handled by double negation only.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from .formula import (
    EQ,
    LE,
    LT,
    AffineExpr,
    Atom,
    Clause,
    DnfFormula,
    Interval,
    Var,
    make_atom,
)


class QEError(Exception):
    pass


class BudgetExceeded(QEError):
    """Elimination aborted; never a wrong answer."""

    def __init__(self, message: str, stats: "QEStats | None" = None):
        super().__init__(message)
        self.stats = stats


class Timeout(BudgetExceeded):
    pass


class Blowup(BudgetExceeded):
    pass


class EmptyRange(QEError):
    pass


@dataclass(frozen=True)
class EliminationBudget:
    max_clauses: int = 4096
    max_atoms_per_clause: int = 2048
    deadline: float | None = 7200.0

    def __post_init__(self):
        if self.max_clauses < 1 or self.max_atoms_per_clause < 1:
            raise ValueError("budget limits must be positive")


DEFAULT_BUDGET = EliminationBudget()
IMBERT = True


@dataclass
class QEStats:
    clauses_in: int = 0
    clauses_out: int = 0
    gauss_steps: int = 0
    fm_steps: int = 0
    atoms_generated: int = 0
    atoms_pruned: int = 0
    elapsed: float = 0.0

    def merge(self, other: "QEStats") -> None:
        for f in ("clauses_in", "clauses_out", "gauss_steps", "fm_steps", "atoms_generated", "atoms_pruned"):
            setattr(self, f, getattr(self, f) + getattr(other, f))
        self.elapsed += other.elapsed

    def as_dict(self) -> dict:
        return {
            "clauses_in": self.clauses_in,
            "clauses_out": self.clauses_out,
            "gauss_steps": self.gauss_steps,
            "fm_steps": self.fm_steps,
            "atoms_generated": self.atoms_generated,
            "atoms_pruned": self.atoms_pruned,
        }


class _Clock:
    __slots__ = ("end",)

    def __init__(self, budget: EliminationBudget):
        self.end = None if budget.deadline is None else time.monotonic() + budget.deadline

    def check(self, stats: QEStats | None = None):
        if self.end is not None and time.monotonic() > self.end:
            raise Timeout("quantifier elimination deadline exceeded", stats)


# --------------------------------------------------------------------------
# single-clause projection


# Inequalities are handled as integer rows ``(coeffs, const, strict)``
# meaning ``sum(coeffs[i] * vars[i]) + const < 0`` (``<=`` when not
# strict), scaled to coprime integers.  Combining two rows then costs one
# gcd instead of a rational normalisation per coefficient.


def _norm_row(vec: list, const: int, strict: bool):
    g = math.gcd(*vec, const)
    if g > 1:
        vec = [c // g for c in vec]
        const //= g
    return tuple(vec), const, strict


def _to_row(atom: Atom, index: dict):
    e = atom.expr
    den = e.const.denominator
    for k in e.coeffs.values():
        den = math.lcm(den, k.denominator)
    vec = [0] * len(index)
    for v, k in e.coeffs.items():
        vec[index[v]] = k.numerator * (den // k.denominator)
    return _norm_row(vec, e.const.numerator * (den // e.const.denominator), atom.rel == LT)


def _from_row(row, variables: list, rel: str) -> Atom:
    """Back to a normalised :class:`Atom` (same canonical form as ``make_atom``)."""
    vec, const, _ = row
    nz = [(i, c) for i, c in enumerate(vec) if c]
    lead = nz[0][1]
    d = lead if rel == EQ else abs(lead)
    coeffs = {variables[i]: Fraction(c, d) for i, c in nz}
    return Atom(AffineExpr._raw(coeffs, Fraction(const, d)), rel)


def _eliminate_with(row, eq_row, j: int):
    """Use the equality ``eq_row`` to cancel variable ``j`` from ``row``."""
    kr = row[0][j]
    if not kr:
        return row
    ke = eq_row[0][j]
    a = abs(ke)
    b = kr if ke > 0 else -kr
    g = math.gcd(a, b)
    a //= g
    b //= g
    vec = [x * a - y * b for x, y in zip(row[0], eq_row[0])]
    return _norm_row(vec, row[1] * a - eq_row[1] * b, row[2])


def _combine(upper, lower, j: int):
    """Cancel variable ``j`` between a row with positive and one with negative coefficient."""
    cu, cl = upper[0][j], -lower[0][j]
    g = math.gcd(cu, cl)
    cu //= g
    cl //= g
    vec = [a * cl + b * cu for a, b in zip(upper[0], lower[0])]
    return _norm_row(vec, upper[1] * cl + lower[1] * cu, upper[2] or lower[2])


def _ground_truth(row) -> bool:
    return row[1] < 0 if row[2] else row[1] <= 0


def _dedupe(rows: list, hists: list, stats: QEStats, dominance: bool):
    """Merge duplicate rows, keeping the smaller history.

    With ``dominance`` the tightest inequality per coefficient direction is
    kept and weaker ones dropped.  That is only safe when histories are not
    used for pruning afterwards: the history rule may later discard the
    tighter row on the grounds that the weaker one still exists.
    """
    best: dict = {}
    for r, h in zip(rows, hists):
        key = r[0] if dominance else r
        cur = best.get(key)
        if cur is None:
            best[key] = (r, h)
            continue
        stats.atoms_pruned += 1
        b, hb = cur
        if r == b:
            if len(h) < len(hb):
                best[key] = (r, h)
        elif r[1] > b[1] or (r[1] == b[1] and r[2]):
            best[key] = (r, h)
    return [v[0] for v in best.values()], [v[1] for v in best.values()]


def _choose_fm_var(rows: list, candidates: Iterable[int]):
    best = None
    for j in candidates:
        n_lo = n_up = 0
        for vec, _, _ in rows:
            k = vec[j]
            if k > 0:
                n_up += 1
            elif k < 0:
                n_lo += 1
        if n_lo == 0 and n_up == 0:
            continue
        score = (n_lo * n_up - n_lo - n_up, j)
        if best is None or score < best[0]:
            best = (score, j)
    return None if best is None else best[1]


def _fourier_motzkin(rows, elim_idx, order_idx, budget, stats, clock, n_eqs):
    hists = [frozenset((i,)) for i in range(len(rows))]
    rows, hists = _dedupe(rows, hists, stats, not IMBERT)
    steps = 0
    while True:
        present = set()
        for vec, _, _ in rows:
            present.update(j for j in elim_idx if vec[j])
        if not present:
            break
        if order_idx is not None:
            j = next((i for i in order_idx if i in present), None)
            if j is None:
                j = min(present)
        else:
            j = _choose_fm_var(rows, sorted(present))
        steps += 1
        stats.fm_steps += 1
        uppers, lowers, keep, keep_h = [], [], [], []
        for r, h in zip(rows, hists):
            k = r[0][j]
            if k == 0:
                keep.append(r)
                keep_h.append(h)
            elif k > 0:
                uppers.append((r, h))
            else:
                lowers.append((r, h))
        limit = steps + 1 if IMBERT else 10**9
        for ur, uh in uppers:
            for lr, lh in lowers:
                h = uh | lh
                if len(h) > limit:
                    stats.atoms_pruned += 1
                    continue
                c = _combine(ur, lr, j)
                stats.atoms_generated += 1
                if not any(c[0]):
                    if _ground_truth(c):
                        continue
                    return None
                keep.append(c)
                keep_h.append(h)
        elim_idx.discard(j)
        rows, hists = _dedupe(keep, keep_h, stats, not IMBERT)
        if len(rows) + n_eqs > budget.max_atoms_per_clause:
            raise Blowup(f"clause grew to {len(rows) + n_eqs} atoms", stats)
        clock.check(stats)
    return rows


def project_atoms(
    atoms: Iterable[Atom],
    eliminate: Iterable[Var],
    budget: EliminationBudget = DEFAULT_BUDGET,
    *,
    order: Sequence[Var] | None = None,
    stats: QEStats | None = None,
    clock: _Clock | None = None,
) -> list[Atom] | None:
    """Eliminate ``eliminate`` from a conjunction; ``None`` means FALSE.

    With ``order`` given, variables are eliminated in that order instead of
    the fewest-bound-pairs heuristic.
    """
    stats = stats if stats is not None else QEStats()
    clock = clock or _Clock(budget)
    atoms = list(atoms)
    variables = sorted({v for a in atoms for v in a.expr.coeffs})
    index = {v: i for i, v in enumerate(variables)}
    eqs = [_to_row(a, index) for a in atoms if a.rel == EQ]
    ineqs = [_to_row(a, index) for a in atoms if a.rel != EQ]
    elim = {index[v] for v in eliminate if v in index}
    order_idx = None if order is None else [index[v] for v in order if v in index]

    # Gaussian substitution
    while eqs and elim:
        pick = None
        if order_idx is not None:
            for j in order_idx:
                if j in elim:
                    e = next((e for e in eqs if e[0][j]), None)
                    if e is not None:
                        pick = (e, j)
                        break
        else:
            for e in sorted(eqs, key=lambda r: sum(1 for c in r[0] if c)):
                hits = [j for j in sorted(elim) if e[0][j]]
                if hits:
                    unit = [j for j in hits if abs(e[0][j]) == 1]
                    pick = (e, (unit or hits)[0])
                    break
        if pick is None:
            break
        e, j = pick
        stats.gauss_steps += 1
        new_eqs, new_ineqs = [], []
        for r in eqs:
            if r is e:
                continue
            r = _eliminate_with(r, e, j)
            if any(r[0]):
                new_eqs.append(r)
            elif r[1]:
                return None
        for r in ineqs:
            r = _eliminate_with(r, e, j)
            if any(r[0]):
                new_ineqs.append(r)
            elif not _ground_truth(r):
                return None
        eqs, ineqs = new_eqs, new_ineqs
        elim.discard(j)
        clock.check(stats)

    # Fourier-Motzkin on the inequalities
    ineqs = _fourier_motzkin(ineqs, elim, order_idx, budget, stats, clock, len(eqs))
    if ineqs is None:
        return None
    return [_from_row(r, variables, EQ) for r in eqs] + [_from_row(r, variables, LT if r[2] else LE) for r in ineqs]


def fm_eliminate_var(clause: Clause, var: Var, budget: EliminationBudget = DEFAULT_BUDGET) -> Clause | None:
    """Project ``var`` out of ``clause`` (one step).  ``None`` is FALSE."""
    out = project_atoms(clause.atoms, [var], budget)
    return None if out is None else Clause(out)


def clause_satisfiable(clause: Clause, budget: EliminationBudget = DEFAULT_BUDGET) -> bool:
    return project_atoms(clause.atoms, clause.vars(), budget) is not None


def _atoms_satisfiable(atoms, budget, stats=None, clock=None) -> bool:
    vs = set()
    for a in atoms:
        vs.update(a.expr.coeffs)
    return project_atoms(atoms, vs, budget, stats=stats, clock=clock) is not None


# --------------------------------------------------------------------------
# redundancy


def _bounds_one_var(atoms: Iterable[Atom], var: Var):
    """Tightest (lo, lo_open, hi, hi_open, eqval) for single-variable atoms."""
    lo, lo_open, hi, hi_open = -math.inf, False, math.inf, False
    for a in atoms:
        k = a.expr.coeffs[var]
        bound = -a.expr.const / k
        strict = a.rel == LT
        if a.rel == EQ:
            if bound > lo or (bound == lo and lo_open):
                lo, lo_open = bound, False
            if bound < hi or (bound == hi and hi_open):
                hi, hi_open = bound, False
        elif k > 0:
            if bound < hi or (bound == hi and strict):
                hi, hi_open = bound, strict
        else:
            if bound > lo or (bound == lo and strict):
                lo, lo_open = bound, strict
    return lo, lo_open, hi, hi_open


def _single_var_clause(var: Var, lo, lo_open, hi, hi_open) -> Clause | None:
    if lo > hi or (lo == hi and (lo_open or hi_open)):
        return None
    v = AffineExpr.var(var)
    if lo == hi:
        return Clause.make([make_atom(v - lo, EQ)])
    items = []
    if lo != -math.inf:
        items.append(make_atom(lo - v, LT if lo_open else LE))
    if hi != math.inf:
        items.append(make_atom(v - hi, LT if hi_open else LE))
    return Clause.make(items)


def remove_redundant(clause: Clause, budget: EliminationBudget = DEFAULT_BUDGET) -> Clause | None:
    """Drop every atom implied by the remaining ones.

    An atom is implied when the others together with its negation are
    unsatisfiable.  If a check runs out of budget the atom is kept.
    Returns ``None`` if the clause turns out to be unsatisfiable over a
    single variable (the only case decided for free).
    """
    vs = clause.vars()
    if len(vs) == 1:
        (v,) = vs
        return _single_var_clause(v, *_bounds_one_var(clause.atoms, v))
    current = clause.sorted_atoms()
    i = 0
    while i < len(current):
        a = current[i]
        others = current[:i] + current[i + 1 :]
        implied = True
        for n in a.negate():
            try:
                if _atoms_satisfiable(others + [n], budget):
                    implied = False
                    break
            except BudgetExceeded:
                implied = False
                break
        if implied:
            current = others
        else:
            i += 1
    return Clause(current)


# --------------------------------------------------------------------------
# DNF level operations


def simplify(formula: DnfFormula, budget: EliminationBudget = DEFAULT_BUDGET, *, prune: bool = True) -> DnfFormula:
    """Drop unsatisfiable and subsumed clauses."""
    kept = []
    for c in formula.clauses:
        if prune and c.atoms:
            if len(c.vars()) == 1:
                c = remove_redundant(c, budget)
                if c is None:
                    continue
            elif not clause_satisfiable(c, budget):
                continue
        kept.append(c)
    kept.sort(key=len)
    out = []
    for c in kept:
        if any(d.atoms <= c.atoms for d in out):
            continue
        out.append(c)
    return DnfFormula(out)


def conjoin(f: DnfFormula, g: DnfFormula, budget: EliminationBudget = DEFAULT_BUDGET, *, prune: bool = True) -> DnfFormula:
    """DNF product of ``f`` and ``g`` keeping only satisfiable clauses."""
    clock = _Clock(budget)
    out = []
    for a in f.clauses:
        for b in g.clauses:
            c = a.conjoin(b)
            if prune and c.atoms and not _atoms_satisfiable(list(c.atoms), budget, clock=clock):
                continue
            out.append(c)
            if len(out) > budget.max_clauses:
                raise Blowup(f"conjunction exceeds {budget.max_clauses} clauses")
        clock.check()
    return DnfFormula(out)


def negate(formula: DnfFormula, budget: EliminationBudget = DEFAULT_BUDGET) -> DnfFormula:
    """Negation in DNF, pruning unsatisfiable partial products as it goes."""
    clock = _Clock(budget)
    result = [Clause()]
    for c in formula.clauses:
        if not c.atoms:
            return DnfFormula.false()
        cvars = c.vars()
        if len(cvars) == 1:
            # a one-variable clause is an interval; its negation has at most two pieces
            c = _single_var_clause(next(iter(cvars)), *_bounds_one_var(c.atoms, next(iter(cvars))))
            if c is None:
                continue
            if not c.atoms:
                return DnfFormula.false()
        negs = [n for a in c.sorted_atoms() for n in a.negate()]
        nxt = []
        for r in result:
            for n in negs:
                cand = r.conjoin((n,))
                if len(cand.vars()) <= 1:
                    v = next(iter(cand.vars()))
                    cand = _single_var_clause(v, *_bounds_one_var(cand.atoms, v))
                    if cand is None:
                        continue
                elif not _atoms_satisfiable(list(cand.atoms), budget, clock=clock):
                    continue
                nxt.append(cand)
        result = simplify(DnfFormula(nxt), budget, prune=False).clauses
        if len(result) > budget.max_clauses:
            raise Blowup(f"negation exceeds {budget.max_clauses} clauses")
        if not result:
            return DnfFormula.false()
        clock.check()
    return DnfFormula(result)


def eliminate_existential(
    formula: DnfFormula,
    variables: Sequence[Var],
    budget: EliminationBudget = DEFAULT_BUDGET,
    *,
    ordered: bool = False,
    stats: QEStats | None = None,
) -> DnfFormula:
    """Quantifier-free equivalent of ``exists variables. formula``.

    By default variables go in heuristic order; ``ordered=True`` follows
    the order given.
    """
    stats = stats if stats is not None else QEStats()
    t0 = time.monotonic()
    clock = _Clock(budget)
    order = list(variables) if ordered else None
    out = []
    for c in formula.clauses:
        stats.clauses_in += 1
        res = project_atoms(c.atoms, variables, budget, order=order, stats=stats, clock=clock)
        if res is None:
            continue
        if len(res) <= 12 or len({v for a in res for v in a.expr.coeffs}) == 1:
            res_clause = remove_redundant(Clause(res), budget)
            if res_clause is None:
                continue
        else:
            res_clause = Clause(res)
        out.append(res_clause)
        if len(out) > budget.max_clauses:
            raise Blowup(f"result exceeds {budget.max_clauses} clauses", stats)
        clock.check(stats)
    result = simplify(DnfFormula(out), budget, prune=False)
    stats.clauses_out += len(result)
    stats.elapsed += time.monotonic() - t0
    return result


def eliminate_universal_implication(
    antecedent: DnfFormula,
    consequent: DnfFormula,
    quantified: Sequence[Var],
    budget: EliminationBudget = DEFAULT_BUDGET,
    *,
    stats: QEStats | None = None,
) -> DnfFormula:
    """``forall quantified. antecedent => consequent`` as ``not exists (ante & not cons)``."""
    body = conjoin(antecedent, negate(consequent, budget), budget)
    inner = eliminate_existential(body, quantified, budget, stats=stats)
    return negate(inner, budget)


def clause_range(atoms: Iterable[Atom], var: Var) -> Interval | None:
    """Interval of ``var`` described by single-variable atoms; ``None`` if empty."""
    lo, lo_open, hi, hi_open = _bounds_one_var(atoms, var)
    if lo > hi or (lo == hi and (lo_open or hi_open)):
        return None
    return Interval(lo, hi, lo_open and lo != -math.inf, hi_open and hi != math.inf)


def variable_range(
    formula: DnfFormula,
    var: Var,
    budget: EliminationBudget = DEFAULT_BUDGET,
    *,
    stats: QEStats | None = None,
) -> Interval:
    """Hull of the values ``var`` takes over the solutions of ``formula``."""
    stats = stats if stats is not None else QEStats()
    t0 = time.monotonic()
    clock = _Clock(budget)
    result = None
    for c in formula.clauses:
        stats.clauses_in += 1
        others = c.vars() - {var}
        res = project_atoms(c.atoms, others, budget, stats=stats, clock=clock)
        if res is None:
            continue
        iv = clause_range([a for a in res if var in a.expr.coeffs], var)
        if iv is None:
            continue
        stats.clauses_out += 1
        result = iv if result is None else result.hull(iv)
        clock.check(stats)
    stats.elapsed += time.monotonic() - t0
    if result is None:
        raise EmptyRange(f"formula is unsatisfiable; {var} has no range")
    return result
