import random
from fractions import Fraction as F

import pytest

from conftest import SMALL5_X0
from oracles import count_violations, random_box, random_network
from qeverify.formula import Box, Interval
from qeverify.partition import PartitionError, PartitionPlan, partition_box, propagate_partitioned
from qeverify.propagation import OVER, PropagationConfig, propagate
from qeverify.robustness import delta_box

UNIT = Box(((F(-1), F(1)),))


def test_plan_parsing_and_size():
    assert PartitionPlan.parse("2,1,3").counts == (2, 1, 3)
    assert PartitionPlan.parse("2", dim=5).counts == (2,) * 5
    assert PartitionPlan.parse("2", dim=5).size == 32
    with pytest.raises(ValueError):
        PartitionPlan((0, 2))
    with pytest.raises(ValueError):
        PartitionPlan.parse("two")


def test_cap_is_enforced():
    with pytest.raises(PartitionError):
        PartitionPlan((4,) * 6)
    assert PartitionPlan((4,) * 6, cap=4096).size == 4096


def test_refinement_relation():
    assert PartitionPlan((4, 2)).refines(PartitionPlan((2, 2)))
    assert not PartitionPlan((3, 2)).refines(PartitionPlan((2, 2)))


def test_trivial_plan_is_the_box():
    box = Box(((F(0), F(1)), (F(-2), F(3))))
    assert partition_box(box, PartitionPlan.trivial(2)) == [box]


def test_two_by_two_quarters():
    box = Box(((F(0), F(1)), (F(0), F(1))))
    parts = partition_box(box, PartitionPlan((2, 2)))
    h = F(1, 2)
    assert parts == [
        Box(((0, h), (0, h))),
        Box(((0, h), (h, 1))),
        Box(((h, 1), (0, h))),
        Box(((h, 1), (h, 1))),
    ]


def test_subspaces_tile_the_box():
    rng = random.Random(5)
    for _ in range(20):
        dim = rng.randint(1, 4)
        box = random_box(rng, dim)
        plan = PartitionPlan(tuple(rng.randint(1, 3) for _ in range(dim)))
        parts = partition_box(box, plan)
        assert len(parts) == plan.size
        assert sum(p.volume() for p in parts) == box.volume()
        for p in parts:
            for (a, b), (lo, hi) in zip(p.bounds, box.bounds):
                assert lo <= a <= b <= hi
        for _ in range(20):
            x = box.sample(rng)
            assert any(p.contains(x) for p in parts)


def test_five_dimensional_halving_gives_32_subspaces():
    box = Box(tuple((F(-1), F(1)) for _ in range(5)))
    assert len(partition_box(box, PartitionPlan.parse("2", dim=5))) == 32


def test_diamond_split_at_zero_is_precise_without_branching(diamond):
    r = propagate_partitioned(diamond, UNIT, PartitionPlan((2,)), PropagationConfig(mode=OVER, branching_budget=0))
    assert r.outputs == [Interval(0, 1)]
    assert [p.outputs for p in r.subspaces] == [[Interval(0, 1)], [Interval(0, 1)]]
    assert all(h["branching"] == 0 for p in r.subspaces for h in p.branching_history)


def test_precise_hull_is_partition_invariant():
    for seed in range(15):
        rng = random.Random(400 + seed)
        net = random_network(rng)
        box = random_box(rng, net.input_size)
        whole, _ = propagate(net, box)
        for counts in ((2,) * box.dim, (3,) + (1,) * (box.dim - 1)):
            r = propagate_partitioned(net, box, PartitionPlan(counts))
            assert r.outputs == whole.outputs and r.precise


@pytest.mark.parametrize("budget", [0, 1, 2])
def test_over_hull_shrinks_under_refinement(budget):
    cfg = PropagationConfig(mode=OVER, branching_budget=budget)
    for seed in range(40):
        rng = random.Random(500 + seed)
        net = random_network(rng)
        box = random_box(rng, net.input_size)
        prev = None
        for k in (1, 2, 4):
            r = propagate_partitioned(net, box, PartitionPlan((k,) * box.dim), cfg)
            if prev is not None:
                assert all(a.issubset(b) for a, b in zip(r.outputs, prev.outputs)), seed
            prev = r


def test_width_order_is_sound_under_refinement():
    # narrowest-first may pick differently per sub-box, so only soundness is promised
    cfg = PropagationConfig(mode=OVER, branching_budget=1, concretize_order="width")
    for seed in range(10):
        rng = random.Random(600 + seed)
        net = random_network(rng)
        box = random_box(rng, net.input_size)
        r = propagate_partitioned(net, box, PartitionPlan((2,) * box.dim), cfg)
        assert count_violations(net, box, r.outputs, n=500) == 0


def test_partitioned_results_are_sound_and_tagged(small5):
    box = delta_box(small5, SMALL5_X0, F(1, 5))
    r = propagate_partitioned(small5, box, PartitionPlan((2, 2, 1)), PropagationConfig(mode=OVER, branching_budget=1))
    assert len(r.subspaces) == 4
    assert count_violations(small5, box, r.outputs, n=3000) == 0
    assert all("subspace" in e for e in r.events)


def test_workers_give_the_same_hull(small5):
    box = delta_box(small5, SMALL5_X0, F(1, 5))
    plan = PartitionPlan((2, 1, 2))
    a = propagate_partitioned(small5, box, plan)
    b = propagate_partitioned(small5, box, plan, PropagationConfig(workers=3))
    assert a.outputs == b.outputs
    assert [p.outputs for p in a.subspaces] == [p.outputs for p in b.subspaces]


def test_precise_failure_names_the_subspace(small5):
    from qeverify.qe import EliminationBudget

    box = delta_box(small5, SMALL5_X0, F(3, 10))
    with pytest.raises(PartitionError) as info:
        propagate_partitioned(small5, box, PartitionPlan((2, 1, 1)), PropagationConfig(per_neuron_budget=EliminationBudget(deadline=-1.0)))
    assert info.value.subspace == 0


def test_over_mode_subspace_fallback(small5):
    box = delta_box(small5, SMALL5_X0, F(3, 10))
    cfg = PropagationConfig(mode=OVER, timeout=-1.0)
    r = propagate_partitioned(small5, box, PartitionPlan((2, 1, 1)), cfg)
    assert not r.precise
    assert sum(e["event"] == "subspace-fallback" for e in r.events) == 2
    assert count_violations(small5, box, r.outputs, n=2000) == 0
