"""Uniform input partitioning and per-subspace range propagation.

The range over the whole box is the interval hull of the ranges over the
subspaces.  Smaller subspaces have fewer branching neurons, so in
over-approximate mode the hull is usually tighter than a single run.
"""

from __future__ import annotations

import itertools
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

from .formula import Box, hull_all
from .network import Network
from .propagation import OVER, PRECISE, PropagationConfig, PropagationError, RangeResult, propagate
from .qe import BudgetExceeded, QEStats

log = logging.getLogger(__name__)


class PartitionError(PropagationError):
    def __init__(self, message: str, subspace: int | None = None):
        self.subspace = subspace
        super().__init__(message)


@dataclass(frozen=True)
class PartitionPlan:
    counts: tuple[int, ...]
    strategy: str = "uniform"
    cap: int = 1024

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if any(c < 1 for c in self.counts):
            raise ValueError(f"segment counts must be at least 1, got {self.counts}")
        if self.strategy != "uniform":
            raise ValueError(f"unknown partition strategy {self.strategy!r}")
        if self.size > self.cap:
            raise PartitionError(f"plan {self.counts} has {self.size} subspaces, cap is {self.cap}")

    @classmethod
    def trivial(cls, dim: int) -> "PartitionPlan":
        return cls((1,) * dim)

    @classmethod
    def parse(cls, text: str, dim: int | None = None, cap: int = 1024) -> "PartitionPlan":
        """``"2,2,1"``; a single number is repeated over ``dim`` dimensions."""
        try:
            counts = [int(t) for t in text.replace(" ", "").split(",") if t]
        except ValueError:
            raise ValueError(f"bad partition {text!r}") from None
        if len(counts) == 1 and dim is not None:
            counts = counts * dim
        return cls(tuple(counts), cap=cap)

    @property
    def size(self) -> int:
        return math.prod(self.counts)

    def refines(self, other: "PartitionPlan") -> bool:
        """Every subspace of ``self`` lies inside a subspace of ``other``."""
        return len(self.counts) == len(other.counts) and all(a % b == 0 for a, b in zip(self.counts, other.counts))


def partition_box(box: Box, plan: PartitionPlan) -> list[Box]:
    """Split ``box`` into equal-width segments per dimension.

    Subspaces are listed in row-major order over the dimensions, so the last
    dimension varies fastest.
    """
    if len(plan.counts) != box.dim:
        raise ValueError(f"plan has {len(plan.counts)} dimensions, box has {box.dim}")
    cuts = []
    for (lo, hi), n in zip(box.bounds, plan.counts):
        pts = [lo + (hi - lo) * k / n for k in range(n)] + [hi]
        cuts.append([(pts[k], pts[k + 1]) for k in range(n)])
    return [Box(tuple(b)) for b in itertools.product(*cuts)]


def _run_one(args):
    network, box, config = args
    result, _ = propagate(network, box, config)
    return result


def hull_results(box: Box, parts: list[RangeResult], elapsed: float) -> RangeResult:
    outputs = [hull_all([p.outputs[k] for p in parts]) for k in range(len(parts[0].outputs))]
    stats = QEStats()
    for p in parts:
        stats.merge(QEStats(**p.qe_stats))
    events = []
    for i, p in enumerate(parts):
        for e in p.events:
            events.append(dict(e, subspace=i))
    return RangeResult(
        outputs=outputs,
        precise=all(p.precise for p in parts),
        box=box,
        events=events,
        elapsed=elapsed,
        subspaces=parts,
        qe_stats=stats.as_dict(),
    )


def propagate_partitioned(network: Network, box: Box, plan: PartitionPlan | None = None, config: PropagationConfig = PropagationConfig()) -> RangeResult:
    """Propagate every subspace of ``plan`` and hull the output intervals.

    A failing subspace aborts the call in precise mode.  In
    over-approximate mode it is redone as plain symbolic interval
    propagation (no branching neuron kept) and the result marked imprecise.
    """
    t0 = time.monotonic()
    plan = plan or PartitionPlan.trivial(box.dim)
    boxes = partition_box(box, plan)
    if len(boxes) == 1:
        try:
            result, _ = propagate(network, boxes[0], config)
        except (BudgetExceeded, PropagationError) as exc:
            if config.mode == PRECISE:
                raise
            result = _fallback(network, boxes[0], config, 0, exc)
        return hull_results(box, [result], time.monotonic() - t0)

    inner = replace(config, workers=1)
    jobs = [(network, b, inner) for b in boxes]
    parts: list[RangeResult | None] = [None] * len(boxes)
    errors: dict[int, Exception] = {}
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=min(config.workers, len(boxes))) as pool:
            futures = [pool.submit(_run_one, job) for job in jobs]
            for i, fut in enumerate(futures):
                try:
                    parts[i] = fut.result()
                except (BudgetExceeded, PropagationError) as exc:
                    errors[i] = exc
    else:
        for i, job in enumerate(jobs):
            try:
                parts[i] = _run_one(job)
            except (BudgetExceeded, PropagationError) as exc:
                errors[i] = exc
    for i in sorted(errors):
        exc = errors[i]
        if config.mode == PRECISE:
            raise PartitionError(f"subspace {i} ({boxes[i]}): {exc}", subspace=i) from exc
        parts[i] = _fallback(network, boxes[i], inner, i, exc)
    for i, p in enumerate(parts):
        log.info("subspace %d/%d: precise=%s outputs=%s", i + 1, len(parts), p.precise, [str(iv.rounded()) for iv in p.outputs])
    return hull_results(box, parts, time.monotonic() - t0)


def _fallback(network: Network, box: Box, config: PropagationConfig, index: int, exc: Exception) -> RangeResult:
    log.warning("subspace %d failed (%s); falling back to interval propagation", index, exc)
    cfg = replace(config, mode=OVER, branching_budget=0, workers=1, timeout=None)
    result, _ = propagate(network, box, cfg)
    result.precise = False
    result.events.append({"event": "subspace-fallback", "reason": str(exc)})
    return result
