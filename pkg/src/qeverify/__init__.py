"""Exact range propagation and robustness queries for ReLU networks.

Ranges are computed by linear quantifier elimination over rationals, so
precise-mode results are exact, not numerical approximations.
"""

from .formula import AffineExpr, Atom, Box, Clause, DnfFormula, Interval, Var, rational_from_decimal
from .network import Network, evaluate_exact, load_nnet, normalize_point, parse_nnet, select_label
from .partition import PartitionPlan, partition_box, propagate_partitioned
from .propagation import OVER, PRECISE, BehavioralStructure, PropagationConfig, RangeResult, propagate
from .qe import (
    Blowup,
    EliminationBudget,
    EmptyRange,
    Timeout,
    eliminate_existential,
    eliminate_universal_implication,
    variable_range,
)
from .robustness import (
    PropertySpec,
    RobustnessVerdict,
    check_delta_robustness,
    delta_to_epsilon,
    epsilon_to_delta,
    verify_io_property,
)

__all__ = [
    "AffineExpr",
    "Atom",
    "BehavioralStructure",
    "Blowup",
    "Box",
    "Clause",
    "DnfFormula",
    "EliminationBudget",
    "EmptyRange",
    "Interval",
    "Network",
    "OVER",
    "PRECISE",
    "PartitionPlan",
    "PropagationConfig",
    "PropertySpec",
    "RangeResult",
    "RobustnessVerdict",
    "Timeout",
    "Var",
    "check_delta_robustness",
    "delta_to_epsilon",
    "eliminate_existential",
    "eliminate_universal_implication",
    "epsilon_to_delta",
    "evaluate_exact",
    "load_nnet",
    "normalize_point",
    "parse_nnet",
    "partition_box",
    "propagate",
    "propagate_partitioned",
    "rational_from_decimal",
    "select_label",
    "variable_range",
    "verify_io_property",
]
