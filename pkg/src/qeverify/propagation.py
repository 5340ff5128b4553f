"""Layer-by-layer range propagation through a ReLU network.

Each neuron's weighted-sum range is the projection, onto that neuron, of
the encoding of everything upstream that is still symbolic.  Neurons that
are always active or always inactive over the input box are collapsed
(their activation becomes an affine expression or the constant 0), so the
retained encoding only holds the disjunctive constraints of neurons that
genuinely branch.  In over-approximate mode, branching neurons beyond the
configured budget are replaced by the interval of their activation.
"""

from __future__ import annotations

import copy
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

from .formula import EQ, AffineExpr, Box, DnfFormula, Interval, Var, ge, le, make_atom
from .network import Network, NeuronRef
from .qe import (
    DEFAULT_BUDGET,
    BudgetExceeded,
    EliminationBudget,
    QEStats,
    Timeout,
    conjoin,
    variable_range,
)

log = logging.getLogger(__name__)

PRECISE = "precise"
OVER = "over"


class NeuronStatus(Enum):
    ACTIVE = "active"
    INACTIVE = "inactive"
    BRANCHING = "branching"


class PropagationError(Exception):
    pass


@dataclass(frozen=True)
class PropagationConfig:
    mode: str = PRECISE
    branching_budget: int = 8
    per_neuron_budget: EliminationBudget = DEFAULT_BUDGET
    workers: int = 1
    timeout: float | None = 7200.0
    # "index": keep the earliest (layer, index) neurons symbolic.  The choice
    # does not depend on the box, so refining a partition can only tighten
    # the hull.  "width": concretise the narrowest activation range first;
    # often tighter on one box, but sub-boxes may choose differently.
    concretize_order: str = "index"

    def __post_init__(self):
        if self.mode not in (PRECISE, OVER):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.branching_budget < 0:
            raise ValueError("branching_budget must be non-negative")
        if self.workers < 1:
            raise ValueError("workers must be positive")
        if self.concretize_order not in ("width", "index"):
            raise ValueError(f"unknown concretize_order {self.concretize_order!r}")


def classify_neuron(z_range: Interval) -> tuple[NeuronStatus, Interval]:
    """Status of a neuron and its activation range.

    A range touching zero from one side counts as linear: both ReLU pieces
    agree at zero.
    """
    lo, hi = z_range.lower, z_range.upper
    if lo >= 0:
        return NeuronStatus.ACTIVE, z_range
    if hi <= 0:
        return NeuronStatus.INACTIVE, Interval.point(0)
    return NeuronStatus.BRANCHING, Interval(0, hi, False, z_range.upper_open)


@dataclass
class NeuronState:
    status: NeuronStatus
    z_range: Interval
    a_range: Interval
    precise: bool
    held: str  # "collapsed" | "symbolic" | "concretized"


@dataclass
class RangeResult:
    outputs: list[Interval]
    precise: bool
    box: Box
    layer_times: list[float] = field(default_factory=list)
    branching_history: list[dict] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    elapsed: float = 0.0
    subspaces: list["RangeResult"] = field(default_factory=list)
    qe_stats: dict = field(default_factory=dict)


class BehavioralStructure:
    """Pruned symbolic encoding of a network restricted to an input box.

    Surviving variables are the inputs, the activations of symbolic
    branching neurons, and the activations of concretised neurons (free,
    bounded by their activation range).  Every other activation has been
    substituted away, so weighted sums are affine over survivors only.
    """

    def __init__(self, network: Network, box: Box):
        if box.dim != network.input_size:
            raise ValueError(f"box has dimension {box.dim}, network expects {network.input_size}")
        self.network = network
        self.box = box
        self.neurons: dict[tuple[int, int], NeuronState] = {}
        self.zexprs: dict[tuple[int, int], AffineExpr] = {}
        self.subst: dict[Var, AffineExpr] = {}
        self.symbolic: list[tuple[int, int]] = []
        self.concretized: list[tuple[int, int]] = []
        self.precise = True
        self.layers_done = 0
        self._encoding: DnfFormula | None = None

    def copy(self) -> "BehavioralStructure":
        new = copy.copy(self)
        new.neurons = dict(self.neurons)
        new.zexprs = dict(self.zexprs)
        new.subst = dict(self.subst)
        new.symbolic = list(self.symbolic)
        new.concretized = list(self.concretized)
        return new

    @property
    def branching_count(self) -> int:
        return len(self.symbolic)

    def activation(self, layer: int, index: int) -> AffineExpr:
        if layer == 0:
            return AffineExpr.var(Var.input(index))
        v = Var.act(layer, index)
        r = self.subst.get(v)
        return r if r is not None else AffineExpr.var(v)

    def weighted_sum(self, layer: int, index: int) -> AffineExpr:
        """Weighted sum of neuron ``(layer, index)`` over surviving variables."""
        known = self.zexprs.get((layer, index))
        if known is not None:
            return known
        net = self.network
        row = net.weights[layer - 1][index]
        coeffs: dict = {}
        const = net.biases[layer - 1][index]
        for i, w in enumerate(row):
            if not w:
                continue
            e = self.activation(layer - 1, i)
            const += w * e.const
            for v, k in e.coeffs.items():
                coeffs[v] = coeffs.get(v, 0) + w * k
        return AffineExpr._raw({v: k for v, k in coeffs.items() if k}, const)

    def output_expr(self, index: int) -> AffineExpr:
        return self.weighted_sum(self.network.num_hidden + 1, index)

    def fragment(self, ref: tuple[int, int]) -> DnfFormula:
        """Disjunctive ReLU constraint of a symbolic neuron."""
        z = self.zexprs[ref]
        a = AffineExpr.var(Var.act(*ref))
        return DnfFormula.of([make_atom(a - z, EQ), ge(z, 0)], [make_atom(a, EQ), le(z, 0)])

    def fixed_atoms(self, include_box: bool = True) -> list:
        atoms = list(self.box.atoms()) if include_box else []
        for ref in self.concretized:
            st = self.neurons[ref]
            v = Var.act(*ref)
            atoms.append(ge(v, st.a_range.lower))
            atoms.append(le(v, st.a_range.upper))
        return atoms

    def encoding(self, budget: EliminationBudget = DEFAULT_BUDGET) -> DnfFormula:
        """Retained encoding as a DNF with infeasible clauses removed."""
        if self._encoding is None:
            enc = DnfFormula.conjunction(self.fixed_atoms())
            for ref in self.symbolic:
                enc = conjoin(enc, self.fragment(ref), budget)
            self._encoding = enc
        return self._encoding

    def census(self, layer: int) -> dict:
        counts = {"layer": layer, "active": 0, "inactive": 0, "branching": 0}
        for (l, _), st in self.neurons.items():
            if l == layer:
                counts[st.status.value] += 1
        return counts

    # in-place mutations; the public functions below work on copies

    def _substitute(self, var: Var, value: AffineExpr) -> None:
        self.subst[var] = value
        for ref, z in self.zexprs.items():
            if var in z.coeffs:
                self.zexprs[ref] = z.substitute(var, value)
        for v, e in self.subst.items():
            if v != var and var in e.coeffs:
                self.subst[v] = e.substitute(var, value)
        self._encoding = None

    def _collapse(self, ref: tuple[int, int]) -> None:
        st = self.neurons[ref]
        if st.status is NeuronStatus.BRANCHING:
            raise PropagationError(f"neuron {ref} is branching and cannot be collapsed")
        if ref in self.symbolic:
            self.symbolic.remove(ref)
        if ref in self.concretized:
            self.concretized.remove(ref)
        value = self.zexprs[ref] if st.status is NeuronStatus.ACTIVE else AffineExpr.constant(0)
        self._substitute(Var.act(*ref), value)
        st.held = "collapsed"

    def _concretize(self, ref: tuple[int, int]) -> None:
        if ref not in self.symbolic:
            raise PropagationError(f"neuron {ref} is not held symbolically")
        self.symbolic.remove(ref)
        self.concretized.append(ref)
        self.neurons[ref].held = "concretized"
        self.precise = False
        self._encoding = None


def collapse_linear(structure: BehavioralStructure, neuron: NeuronRef) -> BehavioralStructure:
    """Replace an always-active (inactive) neuron's activation by its weighted sum (by 0)."""
    s = structure.copy()
    ref = (neuron.layer, neuron.index)
    s.neurons[ref] = copy.copy(s.neurons[ref])
    s._collapse(ref)
    return s


def concretize_branching(structure: BehavioralStructure, neuron: NeuronRef, mode: str = OVER) -> BehavioralStructure:
    """Sever a branching neuron from its upstream constraints, keeping only its activation range."""
    if mode == PRECISE:
        raise PropagationError("concretisation is not allowed in precise mode")
    s = structure.copy()
    ref = (neuron.layer, neuron.index)
    s.neurons[ref] = copy.copy(s.neurons[ref])
    s._concretize(ref)
    return s


def interval_of_expr(structure: BehavioralStructure, expr: AffineExpr) -> Interval:
    """Plain interval evaluation of ``expr`` over the box and activation ranges."""
    lo = hi = expr.const
    for v, k in expr.coeffs.items():
        if v.role == 0:
            vlo, vhi = structure.box.bounds[v.index]
        else:
            ar = structure.neurons[(v.layer, v.index)].a_range
            vlo, vhi = ar.lower, ar.upper
        if k > 0:
            lo += k * vlo
            hi += k * vhi
        else:
            lo += k * vhi
            hi += k * vlo
    return Interval(lo, hi)


def _target_var(structure: BehavioralStructure, layer: int, index: int) -> Var:
    if layer == structure.network.num_hidden + 1:
        return Var.output(index)
    return Var.sum(layer, index)


def _range_of(structure: BehavioralStructure, layer: int, index: int, config: PropagationConfig, stats: QEStats):
    expr = structure.weighted_sum(layer, index)
    if not expr.coeffs:
        return Interval.point(expr.const), False
    target = _target_var(structure, layer, index)
    budget = config.per_neuron_budget
    try:
        enc = structure.encoding(budget)
        formula = enc.and_atoms([make_atom(AffineExpr.var(target) - expr, EQ)])
        return variable_range(formula, target, budget, stats=stats), False
    except BudgetExceeded:
        if config.mode == PRECISE:
            raise
        return interval_of_expr(structure, expr), True


def neuron_z_range(structure: BehavioralStructure, neuron: NeuronRef, config: PropagationConfig = PropagationConfig()) -> Interval:
    """Exact range of a neuron's weighted sum given everything upstream.

    Falls back to interval arithmetic on budget exhaustion in
    over-approximate mode.
    """
    iv, _ = _range_of(structure, neuron.layer, neuron.index, config, QEStats())
    return iv


def _range_chunk(args):
    structure, layer, indices, config = args
    stats = QEStats()
    out = [_range_of(structure, layer, j, config, stats) for j in indices]
    return out, stats


def _layer_ranges(structure, layer, size, config, pool, deadline, stats):
    if pool is not None and size > 1:
        structure.encoding(config.per_neuron_budget)
        n = config.workers
        chunks = [list(range(size))[k::n] for k in range(n)]
        chunks = [c for c in chunks if c]
        results = [None] * size
        for chunk, (vals, st) in zip(chunks, pool.map(_range_chunk, [(structure, layer, c, config) for c in chunks])):
            stats.merge(st)
            for j, v in zip(chunk, vals):
                results[j] = v
        if deadline is not None and time.monotonic() > deadline:
            raise Timeout(f"propagation timed out in layer {layer}")
        return results
    results = []
    for j in range(size):
        if deadline is not None and time.monotonic() > deadline:
            raise Timeout(f"propagation timed out at neuron ({layer}, {j}) with {structure.branching_count} branching neurons")
        results.append(_range_of(structure, layer, j, config, stats))
    return results


def _enforce_budget(s: BehavioralStructure, config: PropagationConfig, events: list, limit: int, layer: int) -> None:
    # Only neurons of the layer just processed are candidates.  Relaxing an
    # earlier neuron would undo correlations that later neurons were already
    # classified (and collapsed) under, and the result could then be looser
    # than plain symbolic interval propagation.  Earlier neurons are touched
    # only when the current layer has nothing left to give (clause blowup).
    while len(s.symbolic) > limit:
        pool = [r for r in s.symbolic if r[0] == layer] or s.symbolic
        if config.concretize_order == "width":
            pick = min(pool, key=lambda r: (s.neurons[r].a_range.width, r))
        else:
            pick = max(pool)
        s._concretize(pick)
        events.append({"event": "concretize", "neuron": list(pick), "a_range": str(s.neurons[pick].a_range)})
        log.debug("concretised neuron %s", pick)


def propagate(network: Network, box: Box, config: PropagationConfig = PropagationConfig(), *, pool=None):
    """Forward range propagation.  Returns ``(RangeResult, BehavioralStructure)``."""
    t0 = time.monotonic()
    deadline = None if config.timeout is None else t0 + config.timeout
    s = BehavioralStructure(network, box)
    stats = QEStats()
    events: list = []
    history: list = []
    layer_times: list = []
    own_pool = None
    if pool is None and config.workers > 1:
        own_pool = pool = ProcessPoolExecutor(max_workers=config.workers)
    try:
        for layer in range(1, network.num_hidden + 1):
            tl = time.monotonic()
            size = network.layer_sizes[layer]
            for j in range(size):
                s.zexprs[(layer, j)] = s.weighted_sum(layer, j)
            try:
                ranges = _layer_ranges(s, layer, size, config, pool, deadline, stats)
            except BudgetExceeded as exc:
                raise type(exc)(f"layer {layer}: {exc} ({s.branching_count} branching neurons held)", exc.stats) from exc
            fallbacks = 0
            for j, (z, fell_back) in enumerate(ranges):
                status, a_range = classify_neuron(z)
                if fell_back:
                    fallbacks += 1
                    s.precise = False
                    events.append({"event": "fallback", "neuron": [layer, j]})
                s.neurons[(layer, j)] = NeuronState(status, z, a_range, s.precise and not fell_back, "symbolic")
            for j in range(size):
                ref = (layer, j)
                if s.neurons[ref].status is NeuronStatus.BRANCHING:
                    s.symbolic.append(ref)
                    s._encoding = None
                else:
                    s._collapse(ref)
            if config.mode == OVER:
                _enforce_budget(s, config, events, config.branching_budget, layer)
            while True:
                try:
                    s.encoding(config.per_neuron_budget)
                    break
                except BudgetExceeded:
                    if config.mode == PRECISE or not s.symbolic:
                        raise
                    _enforce_budget(s, config, events, len(s.symbolic) - 1, layer)
            s.layers_done = layer
            entry = s.census(layer)
            entry.update(symbolic=len(s.symbolic), concretized=len(s.concretized), fallbacks=fallbacks, clauses=len(s._encoding))
            history.append(entry)
            layer_times.append(time.monotonic() - tl)
            log.info("layer %d: %s", layer, entry)
        out_layer = network.num_hidden + 1
        tl = time.monotonic()
        outs = _layer_ranges(s, out_layer, network.output_size, config, pool, deadline, stats)
        layer_times.append(time.monotonic() - tl)
    finally:
        if own_pool is not None:
            own_pool.shutdown()
    precise = s.precise and not any(fb for _, fb in outs)
    if not precise:
        s.precise = False
    result = RangeResult(
        outputs=[iv for iv, _ in outs],
        precise=precise,
        box=box,
        layer_times=layer_times,
        branching_history=history,
        events=events,
        elapsed=time.monotonic() - t0,
        qe_stats=stats.as_dict(),
    )
    return result, s
