"""Robustness and input/output property queries on top of range propagation."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

from .formula import (
    EQ,
    PERTURBATION,
    AffineExpr,
    Box,
    DnfFormula,
    Interval,
    Rational,
    Role,
    Var,
    as_rational,
    ge,
    gt,
    le,
    lt,
    make_atom,
)
from .network import Network, evaluate_exact, select_label
from .partition import PartitionPlan, hull_results, partition_box, propagate_partitioned
from .propagation import BehavioralStructure, PropagationConfig, RangeResult, propagate
from .qe import (
    EmptyRange,
    QEStats,
    conjoin,
    eliminate_universal_implication,
    negate,
    variable_range,
)

log = logging.getLogger(__name__)


class PreconditionError(ValueError):
    pass


def _below(a: Interval, b: Interval) -> bool:
    """Every value of ``a`` is strictly smaller than every value of ``b``."""
    return a.upper < b.lower or (a.upper == b.lower and (a.upper_open or b.lower_open))


@dataclass
class RobustnessVerdict:
    robust: bool
    label: int | None
    label_name: str | None
    intervals: list[Interval]
    precise: bool
    elapsed: float
    overlaps: list[int] = field(default_factory=list)
    method: str = "intervals"
    result: RangeResult | None = None

    @property
    def kind(self) -> str:
        return "Robust" if self.robust else "Unknown"

    def __str__(self) -> str:
        if self.robust:
            return f"Robust({self.label_name})"
        if self.label is None:
            return "Unknown(tie at the reference point)"
        return "Unknown(overlap with " + ", ".join(str(j) for j in self.overlaps) + ")"


@dataclass
class PropertySpec:
    box: Box
    predicate: DnfFormula
    rule: str = "argmin"
    output_space: str = "network"  # or "raw" for denormalised outputs

    def __post_init__(self):
        bad = [v for v in self.predicate.vars() if v.role != Role.OUTPUT]
        if bad:
            raise ValueError("output predicate may only mention output variables, got " + ", ".join(map(str, bad)))
        if self.rule not in ("argmin", "argmax"):
            raise ValueError(f"unknown selection rule {self.rule!r}")
        if self.output_space not in ("network", "raw"):
            raise ValueError(f"unknown output space {self.output_space!r}")


@dataclass
class PropertyVerdict:
    holds: bool
    intervals: list[Interval]
    precise: bool
    elapsed: float
    violations: list[int] = field(default_factory=list)
    slack: list[tuple[str, object]] = field(default_factory=list)
    result: RangeResult | None = None

    @property
    def kind(self) -> str:
        return "Holds" if self.holds else "Unknown"


def delta_box(network: Network, x0: Sequence, delta) -> Box:
    """L-infinity box of radius ``delta`` around ``x0``, inside the valid input domain."""
    delta = as_rational(delta)
    if delta < 0:
        raise ValueError("delta must be non-negative")
    return Box.around([as_rational(v) for v in x0], delta, clip=network.input_domain())


# --------------------------------------------------------------------------
# delta-local robustness


def _overlaps(outputs: list[Interval], label: int, rule: str) -> list[int]:
    ref = outputs[label]
    bad = []
    for j, iv in enumerate(outputs):
        if j == label:
            continue
        ok = _below(ref, iv) if rule == "argmin" else _below(iv, ref)
        if not ok:
            bad.append(j)
    return bad


def _label_excluded(structure: BehavioralStructure, label: int, other: int, rule: str, config: PropagationConfig) -> bool:
    """Is ``other`` provably never at least as good as ``label`` on the structure's box?"""
    yl = structure.output_expr(label)
    yo = structure.output_expr(other)
    challenge = le(yo, yl) if rule == "argmin" else ge(yo, yl)
    if challenge is True:
        return False
    if challenge is False:
        return True
    enc = conjoin(structure.encoding(config.per_neuron_budget), DnfFormula.conjunction([challenge]), config.per_neuron_budget)
    return enc.is_false()


def check_delta_robustness(
    network: Network,
    x0: Sequence,
    delta,
    plan: PartitionPlan | None = None,
    config: PropagationConfig = PropagationConfig(),
    *,
    rule: str = "argmin",
    label_constraints: bool = False,
) -> RobustnessVerdict:
    """Is every point of the delta-box given the label of ``x0``?

    The label's interval has to be strictly separated from every other
    output's interval in each subspace of ``plan``.  With
    ``label_constraints`` an outcome that intervals cannot settle is retried
    by asking whether the encoding admits a point where a competing output
    ties with or beats the label.
    """
    t0 = time.monotonic()
    x0 = [as_rational(v) for v in x0]
    box = delta_box(network, x0, delta)
    labels = select_label(evaluate_exact(network, x0), rule)
    plan = plan or PartitionPlan.trivial(box.dim)

    if label_constraints:
        parts = []
        structures = []
        for b in partition_box(box, plan):
            r, s = propagate(network, b, config)
            parts.append(r)
            structures.append(s)
        result = hull_results(box, parts, time.monotonic() - t0)
    else:
        result = propagate_partitioned(network, box, plan, config)
        parts = result.subspaces or [result]
        structures = None

    if len(labels) != 1:
        return RobustnessVerdict(False, None, None, result.outputs, result.precise, time.monotonic() - t0, result=result)
    (label,) = labels
    overlaps: set[int] = set()
    method = "intervals"
    for i, part in enumerate(parts):
        bad = _overlaps(part.outputs, label, rule)
        if bad and structures is not None:
            method = "label-constraints"
            bad = [j for j in bad if not _label_excluded(structures[i], label, j, rule, config)]
        overlaps.update(bad)
    return RobustnessVerdict(
        robust=not overlaps,
        label=label,
        label_name=network.labels[label],
        intervals=result.outputs,
        precise=result.precise,
        elapsed=time.monotonic() - t0,
        overlaps=sorted(overlaps),
        method=method,
        result=result,
    )


# --------------------------------------------------------------------------
# delta <-> epsilon


def delta_to_epsilon(
    network: Network,
    x0: Sequence,
    delta,
    output: int | Sequence[int] = 0,
    plan: PartitionPlan | None = None,
    config: PropagationConfig = PropagationConfig(),
) -> tuple[Rational, bool, BehavioralStructure | None]:
    """Largest output deviation from ``f(x0)`` over the delta-box.

    With several outputs the maximum deviation is returned.  The behavioural
    structure is only available for an unpartitioned run (``None`` otherwise).
    """
    x0 = [as_rational(v) for v in x0]
    box = delta_box(network, x0, delta)
    outputs = [output] if isinstance(output, int) else list(output)
    y0 = evaluate_exact(network, x0)
    plan = plan or PartitionPlan.trivial(box.dim)
    if plan.size == 1:
        result, structure = propagate(network, box, config)
    else:
        result, structure = propagate_partitioned(network, box, plan, config), None
    eps = max(max(result.outputs[k].upper - y0[k], y0[k] - result.outputs[k].lower) for k in outputs)
    return eps, result.precise, structure


def epsilon_to_delta(
    network: Network,
    x0: Sequence,
    delta0,
    epsilon_star,
    config: PropagationConfig = PropagationConfig(),
    *,
    output: int = 0,
    structure: BehavioralStructure | None = None,
    epsilon0=None,
) -> tuple[Rational, bool]:
    """Largest perturbation keeping ``output`` within ``epsilon_star`` of ``f(x0)``.

    Eliminates every variable but the perturbation size ``d`` from::

        forall x, a, y. (|x - x0| <= d  and  encoding)  =>  |y - y0| <= epsilon_star

    where the encoding is the behavioural structure computed for the
    ``delta0``-box.  The answer is the supremum of the residual condition on
    ``d``.  It is trustworthy when the structure was precise or when it does
    not exceed ``delta0``.
    """
    x0 = [as_rational(v) for v in x0]
    delta0 = as_rational(delta0)
    eps_star = as_rational(epsilon_star)
    if eps_star < 0:
        raise PreconditionError("epsilon* must be non-negative")
    if structure is None or epsilon0 is None:
        epsilon0, _, structure = delta_to_epsilon(network, x0, delta0, output, None, config)
    if eps_star >= epsilon0:
        raise PreconditionError(f"epsilon* = {eps_star} is not below epsilon(delta0) = {epsilon0}")
    budget = config.per_neuron_budget
    dvar = PERTURBATION
    d = AffineExpr.var(dvar)
    y = Var.output(output)
    y0 = evaluate_exact(network, x0)[output]

    near = []
    for i, c in enumerate(x0):
        xi = AffineExpr.var(Var.input(i))
        near += [le(xi - c, d), le(c - xi, d)]
    ante = structure.encoding(budget).and_atoms(near + [make_atom(AffineExpr.var(y) - structure.output_expr(output), EQ)])
    cons = DnfFormula.conjunction([le(AffineExpr.var(y) - y0, eps_star), le(y0 - AffineExpr.var(y), eps_star)])
    quantified = sorted(ante.vars() - {dvar})
    stats = QEStats()
    residual = eliminate_universal_implication(ante, cons, quantified, budget, stats=stats)
    log.info("residual condition on the perturbation: %s", residual)
    try:
        allowed = variable_range(residual.and_atoms([ge(d, 0)]), dvar, budget)
    except EmptyRange:
        raise PreconditionError("no non-negative perturbation meets epsilon*") from None
    t = allowed.upper
    delta_star = delta0 if t == math.inf else min(t, delta0)
    sound = structure.precise or (t != math.inf and t <= delta0)
    return delta_star, sound


# --------------------------------------------------------------------------
# input/output properties


def _output_box_atoms(intervals: list[Interval]) -> list:
    atoms = []
    for k, iv in enumerate(intervals):
        y = Var.output(k)
        if iv.lower != -math.inf:
            atoms.append((gt if iv.lower_open else ge)(y, iv.lower))
        if iv.upper != math.inf:
            atoms.append((lt if iv.upper_open else le)(y, iv.upper))
    return [a for a in atoms if a is not True]


def _worst(expr: AffineExpr, intervals: list[Interval]):
    hi = expr.const
    for v, k in expr.coeffs.items():
        iv = intervals[v.index]
        hi = hi + k * (iv.upper if k > 0 else iv.lower)
    return hi


def verify_io_property(
    network: Network,
    spec: PropertySpec,
    plan: PartitionPlan | None = None,
    config: PropagationConfig = PropagationConfig(),
) -> PropertyVerdict:
    """Holds if every output valuation inside each subspace's interval box satisfies the predicate."""
    t0 = time.monotonic()
    result = propagate_partitioned(network, spec.box, plan, config)
    parts = result.subspaces or [result]
    budget = config.per_neuron_budget
    not_pred = negate(spec.predicate, budget)

    def space(ivs):
        if spec.output_space == "raw":
            return [iv.affine(network.ranges[-1], network.means[-1]) for iv in ivs]
        return list(ivs)

    violations = []
    for i, part in enumerate(parts):
        ivs = space(part.outputs)
        box_atoms = _output_box_atoms(ivs)
        if False in box_atoms:
            continue
        bad = conjoin(DnfFormula.conjunction(box_atoms), not_pred, budget)
        if not bad.is_false():
            violations.append(i)
    union = space(result.outputs)
    slack = []
    for clause in spec.predicate.clauses:
        for atom in clause.sorted_atoms():
            slack.append((str(atom), _worst(atom.expr, union)))
    return PropertyVerdict(
        holds=not violations,
        intervals=union,
        precise=result.precise,
        elapsed=time.monotonic() - t0,
        violations=violations,
        slack=slack,
        result=result,
    )
