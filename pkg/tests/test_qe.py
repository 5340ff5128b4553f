import itertools
import random
from fractions import Fraction as F

import pytest

from oracles import pinned_satisfiable, random_dnf
from qeverify.formula import LE, LT, AffineExpr, Atom, Clause, DnfFormula, Interval, Var, eq, ge, gt, le, lt, make_atom
from qeverify.qe import (
    Blowup,
    EliminationBudget,
    EmptyRange,
    QEStats,
    Timeout,
    eliminate_existential,
    eliminate_universal_implication,
    fm_eliminate_var,
    negate,
    project_atoms,
    remove_redundant,
    variable_range,
)

x, y, u, d, a = (Var.aux(n) for n in ("x", "y", "u", "d", "a"))
X, Y, U, D, A = (AffineExpr.var(v) for v in (x, y, u, d, a))


def equivalent_on_grid(f: DnfFormula, g: DnfFormula, variables, lo=-4, hi=4, step=F(1, 2)):
    n = int((hi - lo) / step)
    values = [lo + step * i for i in range(n + 1)]
    return all(f.holds(dict(zip(variables, p))) == g.holds(dict(zip(variables, p))) for p in itertools.product(values, repeat=len(variables)))


def test_fm_pairs_bounds():
    c = Clause([ge(X, Y - 1), le(X, 2), le(X, Y)])
    out = fm_eliminate_var(c, x)
    assert x not in out.vars()
    assert remove_redundant(out) == Clause([le(Y, 3)])


def test_fm_uses_equalities():
    out = fm_eliminate_var(Clause([eq(X, 2 * U + 1), le(X, 3)]), x)
    assert out == Clause([le(2 * U + 1, 3)])


def test_fm_ignores_absent_variable():
    assert fm_eliminate_var(Clause([le(Y, 5)]), x) == Clause([le(Y, 5)])


def test_strictness_propagates():
    out = project_atoms([lt(Y, X), le(X, 1)], [x])
    assert out == [lt(Y, 1)]


@pytest.mark.parametrize(
    "atoms, expected",
    [
        ([le(X, 1), le(X, 2)], [le(X, 1)]),
        ([le(X, 1), le(Y, 1), le(X + Y, 3)], [le(X, 1), le(Y, 1)]),
        ([le(X, 1), le(Y, X)], [le(X, 1), le(Y, X)]),
    ],
)
def test_remove_redundant_examples(atoms, expected):
    assert remove_redundant(Clause(atoms)) == Clause(expected)


def test_remove_redundant_keeps_solution_set():
    rng = random.Random(5)
    for _ in range(60):
        atoms = [make_atom(AffineExpr({x: rng.randint(-2, 2), y: rng.randint(-2, 2)}, rng.randint(-3, 3)), rng.choice([LE, LT])) for _ in range(5)]
        atoms = [t for t in atoms if isinstance(t, Atom)]
        c = Clause(atoms)
        r = remove_redundant(c)
        for _ in range(20):  # 1,200 points in total
            p = {x: F(rng.randint(-40, 40), 8), y: F(rng.randint(-40, 40), 8)}
            assert c.holds(p) == (r is not None and r.holds(p))


def test_existential_examples():
    f = DnfFormula.of([ge(X, 0), eq(Y, 2 * X + 1)])
    assert eliminate_existential(f, [x]) == DnfFormula.of([ge(Y, 1)])
    relu = DnfFormula.of([eq(A, X), ge(X, 0), le(X, 1)], [eq(A, 0), ge(X, -1), le(X, 0)])
    out = eliminate_existential(relu, [x])
    assert equivalent_on_grid(out, DnfFormula.of([ge(A, 0), le(A, 1)]), [a])
    assert eliminate_existential(DnfFormula.true(), [x]).is_true()


def test_universal_examples():
    box = [ge(X, -D), le(X, D)]
    out = eliminate_universal_implication(DnfFormula.of(box), DnfFormula.of([ge(2 * X, -2 * D), le(2 * X, 2 * D)]), [x])
    assert equivalent_on_grid(out.and_atoms([ge(D, 0)]), DnfFormula.of([ge(D, 0)]), [d])
    out = eliminate_universal_implication(DnfFormula.of(box + [ge(D, 0)]), DnfFormula.of([le(2 * X, 1)]), [x])
    assert equivalent_on_grid(out.and_atoms([ge(D, 0)]), DnfFormula.of([ge(D, 0), le(D, F(1, 2))]), [d])


def test_variable_range_examples():
    f = DnfFormula.of([eq(Y, 2 * X), ge(X, 0), le(X, 1)], [eq(Y, -X), ge(X, 0), le(X, 1)])
    assert variable_range(f, y) == Interval(-1, 2)
    assert variable_range(DnfFormula.of([eq(Y, 7)]), y) == Interval(7, 7)
    iv = variable_range(DnfFormula.of([gt(Y, 0), lt(Y, 1)]), y)
    assert iv == Interval(0, 1, True, True)
    with pytest.raises(EmptyRange):
        variable_range(DnfFormula.of([ge(Y, 1), le(Y, 0)]), y)


def test_budgets_raise_instead_of_answering():
    atoms = [le(AffineExpr({Var.aux(f"v{i}"): 1, x: (-1) ** i}, -i)) for i in range(40)]
    with pytest.raises(Blowup):
        project_atoms(atoms, [x], EliminationBudget(max_atoms_per_clause=10))
    with pytest.raises(Timeout):
        project_atoms(atoms, [x], EliminationBudget(deadline=-1.0))
    with pytest.raises(Blowup):
        negate(DnfFormula.of(*[[le(X + Y, i), ge(X - Y, -i)] for i in range(30)]), EliminationBudget(max_clauses=4))


def test_existential_random_instances_against_sampling():
    """500 instances: projected samples satisfy the result, and the result
    holds at a free point exactly when the original is satisfiable there."""
    rng = random.Random(2024)
    pool = [x, y, u, a]
    for _ in range(500):
        n = rng.randint(1, 4)
        vs = pool[:n]
        f = random_dnf(rng, vs)
        k = rng.randint(0, n - 1) if n > 1 else 0
        free, gone = vs[:k], vs[k:]
        r = eliminate_existential(f, gone)
        assert r.vars() <= set(free)
        for _ in range(40):
            p = {v: F(rng.randint(-14, 14), 4) for v in vs}
            if f.holds(p):
                assert r.holds({v: p[v] for v in free})
        for _ in range(15):
            q = {v: F(rng.randint(-14, 14), 4) for v in free}
            assert r.holds(q) == pinned_satisfiable(f, q)


def test_universal_random_instances_against_grid():
    rng = random.Random(77)
    grid = [F(i, 4) for i in range(-12, 13)]
    for _ in range(200):
        qs = [x, y][: rng.randint(1, 2)]
        ante_atoms = [ge(AffineExpr.var(v), -2) for v in qs] + [le(AffineExpr.var(v), 2) for v in qs]
        for _ in range(rng.randint(0, 2)):
            e = AffineExpr({v: rng.randint(-2, 2) for v in qs + [d]}, rng.randint(-2, 2))
            ante_atoms.append(make_atom(e, LE))
        ante = DnfFormula.of(ante_atoms)
        cons_clauses = []
        for _ in range(rng.randint(1, 2)):
            cons_clauses.append([make_atom(AffineExpr({v: rng.randint(-2, 2) for v in qs + [d]}, rng.randint(-3, 3)), rng.choice([LE, LT])) for _ in range(rng.randint(1, 2))])
        cons = DnfFormula.of(*cons_clauses)
        r = eliminate_universal_implication(ante, cons, qs)
        assert r.vars() <= {d}
        counter = ante.and_(cons.negate())
        for dv in grid[::2]:
            holds = r.holds({d: dv})
            assert holds == (not pinned_satisfiable(counter, {d: dv}))
            if holds:
                for p in itertools.product(grid[::3], repeat=len(qs)):
                    pt = {**dict(zip(qs, p)), d: dv}
                    assert not ante.holds(pt) or cons.holds(pt)


def test_elimination_order_does_not_change_the_solution_set():
    rng = random.Random(9)
    for _ in range(40):
        f = random_dnf(rng, [x, y, u])
        r1 = eliminate_existential(f, [y, u], ordered=True)
        r2 = eliminate_existential(f, [u, y], ordered=True)
        r3 = eliminate_existential(f, [y, u])
        assert equivalent_on_grid(r1, r2, [x]) and equivalent_on_grid(r1, r3, [x])


def test_range_endpoints_are_attained():
    rng = random.Random(4)
    for _ in range(60):
        f = random_dnf(rng, [x, y, u], n_clauses=2)
        t = Var.aux("t")
        g = f.and_atoms([eq(AffineExpr.var(t), X + 2 * Y - U)])
        try:
            iv = variable_range(g, t)
        except EmptyRange:
            continue
        for end, is_open in ((iv.lower, iv.lower_open), (iv.upper, iv.upper_open)):
            assert pinned_satisfiable(g, {t: end}) is (not is_open)


def test_statistics_are_reported():
    stats = QEStats()
    eliminate_existential(DnfFormula.of([le(X, Y), le(Y, 1), ge(X, 0)]), [y], stats=stats)
    assert stats.clauses_in == 1 and stats.fm_steps >= 1
    assert set(stats.as_dict()) >= {"clauses_in", "clauses_out", "fm_steps", "atoms_pruned"}
