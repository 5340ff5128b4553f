"""Command-line front end.

Exit status: 0 when the query is settled (range computed, Robust, Holds,
sound delta), 1 when the answer is Unknown, 2 on errors and timeouts.
"""

from __future__ import annotations

import argparse
import json
import logging
import random
import re
import sys
import time
from collections import Counter
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .formula import (
    AffineExpr,
    Box,
    DnfFormula,
    FormulaError,
    Interval,
    Var,
    as_rational,
    format_decimal,
    format_exact,
    make_atom,
    rational_from_decimal,
)
from .network import Network, NNetParseError, evaluate_exact, load_nnet, normalize_point, select_label
from .partition import PartitionPlan, propagate_partitioned
from .propagation import OVER, PRECISE, PropagationConfig, PropagationError, RangeResult
from .qe import BudgetExceeded, EliminationBudget, Timeout
from .robustness import (
    PropertySpec,
    check_delta_robustness,
    delta_box,
    delta_to_epsilon,
    epsilon_to_delta,
    verify_io_property,
)

log = logging.getLogger("qeverify")

EXIT_OK, EXIT_UNKNOWN, EXIT_ERROR = 0, 1, 2


class UsageError(ValueError):
    pass


# --------------------------------------------------------------------------
# parsing of numbers, boxes and property files


def parse_rationals(text: str) -> list:
    try:
        return [as_rational(t.strip()) for t in text.split(",") if t.strip()]
    except (FormulaError, ValueError) as exc:
        raise UsageError(f"bad number list {text!r}: {exc}") from None


def _box_lines(lines: Sequence[str]) -> Box:
    bounds = []
    for line in lines:
        vals = parse_rationals(line)
        if len(vals) != 2:
            raise UsageError(f"box line needs 'lo,hi', got {line!r}")
        if vals[0] > vals[1]:
            raise UsageError(f"empty box dimension {line!r}")
        bounds.append((vals[0], vals[1]))
    if not bounds:
        raise UsageError("empty box")
    return Box(tuple(bounds))


def parse_box(text: str) -> Box:
    """``"lo,hi;lo,hi;..."`` or the path of a file with one ``lo,hi`` per line."""
    p = Path(text)
    if ";" not in text and p.is_file():
        lines = [ln.split("#")[0].strip() for ln in p.read_text().splitlines()]
        return _box_lines([ln for ln in lines if ln])
    return _box_lines([part for part in text.split(";") if part.strip()])


def _raw_box_to_network(network: Network, box: Box) -> Box:
    lo = normalize_point(network, [b[0] for b in box.bounds], strict=True)
    hi = normalize_point(network, [b[1] for b in box.bounds], strict=True)
    return Box(tuple(zip(lo, hi)))


_TOKEN = re.compile(r"\s*(?:(?P<num>\d+(?:\.\d*)?(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op><=|>=|==|<|>|=|[-+*]))")


def output_names(network: Network) -> dict[str, int]:
    names = {f"y{k}": k for k in range(network.output_size)}
    names.update({lab: k for k, lab in enumerate(network.labels)})
    return names


def parse_linear(text: str, names: dict[str, int]):
    """``"COC - 2*WL <= 1500"`` to an atom over output variables (or a bool)."""
    pos = 0
    tokens = []
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise UsageError(f"cannot parse {text[pos:]!r} in {text!r}")
        kind = m.lastgroup
        tokens.append((kind, m.group(kind)))
        pos = m.end()
    rels = [i for i, (k, v) in enumerate(tokens) if k == "op" and v in ("<=", ">=", "<", ">", "=", "==")]
    if len(rels) != 1:
        raise UsageError(f"need exactly one comparison in {text!r}")
    i = rels[0]
    lhs, rhs = _linear_side(tokens[:i], names, text), _linear_side(tokens[i + 1 :], names, text)
    op = tokens[i][1]
    diff = lhs - rhs
    if op in ("<=", "<"):
        return make_atom(diff, "<=" if op == "<=" else "<")
    if op in (">=", ">"):
        return make_atom(-diff, "<=" if op == ">=" else "<")
    return make_atom(diff, "=")


def _linear_side(tokens, names, text) -> AffineExpr:
    """Sum of terms ``[+-]* (number [*] name | name [* number] | number)``."""
    expr = AffineExpr()
    i, n = 0, len(tokens)
    if not tokens:
        raise UsageError(f"missing side of comparison in {text!r}")
    while i < n:
        sign, signed = 1, False
        while i < n and tokens[i] in (("op", "+"), ("op", "-")):
            sign = -sign if tokens[i][1] == "-" else sign
            signed = True
            i += 1
        if i > 0 and not signed:
            raise UsageError(f"missing '+' or '-' in {text!r}")
        if i >= n:
            raise UsageError(f"dangling operator in {text!r}")
        coeff, name = None, None
        kind, val = tokens[i]
        if kind == "num":
            coeff = rational_from_decimal(val)
            i += 1
            if i < n and tokens[i] == ("op", "*"):
                i += 1
                if i >= n or tokens[i][0] != "name":
                    raise UsageError(f"expected an output name after '*' in {text!r}")
            if i < n and tokens[i][0] == "name":
                name = tokens[i][1]
                i += 1
        elif kind == "name":
            name = val
            i += 1
            if i < n and tokens[i] == ("op", "*"):
                if i + 1 >= n or tokens[i + 1][0] != "num":
                    raise UsageError(f"expected a number after '*' in {text!r}")
                coeff = rational_from_decimal(tokens[i + 1][1])
                i += 2
        else:
            raise UsageError(f"unexpected {val!r} in {text!r}")
        k = sign * (coeff if coeff is not None else 1)
        if name is None:
            expr = expr + k
        else:
            if name not in names:
                raise UsageError(f"unknown output name {name!r}; expected one of {', '.join(sorted(names))}")
            expr = expr + AffineExpr.var(Var.output(names[name]), k)
    return expr


def parse_property(text: str, network: Network) -> PropertySpec:
    """Read a property file.

    ::

        input raw            # or: normalized (default)
        output raw           # or: network (default)
        rule argmin          # or: argmax
        box
        55947.691, 60760
        ...
        predicate
        COC <= 1500
        or
        COC <= WL

    Predicate lines are conjoined; ``or`` starts a new disjunct.
    """
    settings = {"input": "normalized", "output": "network", "rule": "argmin"}
    section = None
    box_lines: list[str] = []
    clauses: list[list] = [[]]
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#")[0].strip()
        if not line:
            continue
        word = line.split()[0].lower()
        if word in settings and len(line.split()) == 2:
            settings[word] = line.split()[1].lower()
            continue
        if line.lower() in ("box", "predicate"):
            section = line.lower()
            continue
        if section == "box":
            box_lines.append(line)
        elif section == "predicate":
            if line.lower() == "or":
                clauses.append([])
                continue
            try:
                clauses[-1].append(parse_linear(line, output_names(network)))
            except UsageError as exc:
                raise UsageError(f"property line {n}: {exc}") from None
        else:
            raise UsageError(f"property line {n}: {line!r} outside any section")
    if settings["input"] not in ("raw", "normalized"):
        raise UsageError(f"input must be raw or normalized, got {settings['input']!r}")
    if any(not c for c in clauses) and len(clauses) > 1:
        raise UsageError("empty disjunct in predicate")
    box = _box_lines(box_lines)
    if box.dim != network.input_size:
        raise UsageError(f"box has {box.dim} dimensions, network has {network.input_size} inputs")
    if settings["input"] == "raw":
        box = _raw_box_to_network(network, box)
    predicate = DnfFormula.of(*clauses)
    try:
        return PropertySpec(box, predicate, settings["rule"], settings["output"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# --------------------------------------------------------------------------
# reporting


def interval_record(iv: Interval) -> dict:
    return {
        "exact": str(iv),
        "lower": format_exact(iv.lower),
        "upper": format_exact(iv.upper),
        "rounded": iv.rounded(8),
    }


def _outputs_record(network: Network, intervals: list[Interval]) -> list[dict]:
    return [dict(interval_record(iv), name=network.labels[k], index=k) for k, iv in enumerate(intervals)]


def _range_record(network: Network, result: RangeResult, timings: bool) -> dict:
    rec = {
        "outputs": _outputs_record(network, result.outputs),
        "precise": result.precise,
        "events": result.events,
        "qe": result.qe_stats,
    }
    if len(result.subspaces) == 1:
        rec["census"] = result.subspaces[0].branching_history
    elif result.subspaces:
        rec["subspaces"] = [
            {
                "box": str(s.box),
                "outputs": _outputs_record(network, s.outputs),
                "precise": s.precise,
                "census": s.branching_history,
                **({"elapsed": round(s.elapsed, 3)} if timings else {}),
            }
            for s in result.subspaces
        ]
    else:
        rec["census"] = result.branching_history
    if timings:
        rec["elapsed"] = round(result.elapsed, 3)
        rec["layer_times"] = [round(t, 3) for t in result.layer_times]
    return rec


def _print_intervals(network: Network, intervals: list[Interval], out) -> None:
    width = max(len(n) for n in network.labels)
    for k, iv in enumerate(intervals):
        print(f"  {network.labels[k]:<{width}}  {iv.rounded(8)}   exact {iv}", file=out)


# --------------------------------------------------------------------------
# commands


def _config(args) -> PropagationConfig:
    return PropagationConfig(
        mode=args.mode,
        branching_budget=args.budget,
        per_neuron_budget=replace(EliminationBudget(), deadline=args.timeout),
        workers=args.workers,
        timeout=args.timeout,
        concretize_order=args.order,
    )


def _plan(args, dim: int) -> PartitionPlan:
    if not args.partition:
        return PartitionPlan.trivial(dim)
    plan = PartitionPlan.parse(args.partition, dim)
    if len(plan.counts) != dim:
        raise UsageError(f"--partition needs {dim} counts, got {len(plan.counts)}")
    return plan


def _x0(args, network: Network) -> list:
    if not args.x0:
        raise UsageError("--x0 is required")
    pt = parse_rationals(args.x0)
    if len(pt) != network.input_size:
        raise UsageError(f"--x0 needs {network.input_size} values, got {len(pt)}")
    return normalize_point(network, pt, strict=True) if args.input_space == "raw" else pt


def _box(args, network: Network) -> Box:
    if args.box:
        box = parse_box(args.box)
        if box.dim != network.input_size:
            raise UsageError(f"--box has {box.dim} dimensions, network has {network.input_size} inputs")
        return _raw_box_to_network(network, box) if args.input_space == "raw" else box
    if args.x0 and args.delta:
        return delta_box(network, _x0(args, network), _rational(args.delta, "--delta"))
    raise UsageError("give --box, or --x0 with --delta")


def _rational(text, flag):
    if text is None:
        raise UsageError(f"{flag} is required")
    try:
        return as_rational(text)
    except (FormulaError, ValueError):
        raise UsageError(f"{flag}: not a number: {text!r}") from None


def _output_index(args, network: Network) -> int:
    names = output_names(network)
    if args.output in names:
        return names[args.output]
    try:
        k = int(args.output)
    except ValueError:
        raise UsageError(f"unknown output {args.output!r}") from None
    if not 0 <= k < network.output_size:
        raise UsageError(f"output index {k} out of range")
    return k


def cmd_range(args, network, out):
    box = _box(args, network)
    result = propagate_partitioned(network, box, _plan(args, box.dim), _config(args))
    print(f"range over {box}", file=out)
    if result.subspaces and len(result.subspaces) > 1:
        for i, s in enumerate(result.subspaces):
            print(f" subspace {i}: precise={'yes' if s.precise else 'no'}", file=out)
            _print_intervals(network, s.outputs, out)
        print(" union:", file=out)
    _print_intervals(network, result.outputs, out)
    print(f"precise: {'yes' if result.precise else 'no'}", file=out)
    return EXIT_OK, {"verdict": "range", "box": str(box), **_range_record(network, result, args.timings)}


def cmd_delta_robust(args, network, out):
    x0 = _x0(args, network)
    delta = _rational(args.delta, "--delta")
    v = check_delta_robustness(
        network, x0, delta, _plan(args, network.input_size), _config(args), rule=args.rule, label_constraints=args.label_constraints
    )
    _print_intervals(network, v.intervals, out)
    if v.robust:
        print(f"Robust: {v.label_name}", file=out)
    elif v.label is None:
        print("Unknown: the reference point is a tie between labels", file=out)
    else:
        print(f"Unknown: {v.label_name} overlaps " + ", ".join(network.labels[j] for j in v.overlaps), file=out)
    print(f"precise: {'yes' if v.precise else 'no'}", file=out)
    rec = {
        "verdict": v.kind,
        "label": v.label_name,
        "overlaps": [network.labels[j] for j in v.overlaps],
        "method": v.method,
        **_range_record(network, v.result, args.timings),
    }
    return (EXIT_OK if v.robust else EXIT_UNKNOWN), rec


def cmd_delta_to_eps(args, network, out):
    x0 = _x0(args, network)
    delta = _rational(args.delta, "--delta")
    k = _output_index(args, network)
    plan = _plan(args, network.input_size)
    box = delta_box(network, x0, delta)
    result = propagate_partitioned(network, box, plan, _config(args))
    y0 = evaluate_exact(network, x0)[k]
    iv = result.outputs[k]
    eps = max(iv.upper - y0, y0 - iv.lower)
    print(f"{network.labels[k]} range {iv.rounded(8)}, f(x0) = {format_decimal(y0)}", file=out)
    print(f"epsilon = {format_decimal(eps)}   exact {format_exact(eps)}", file=out)
    print(f"precise: {'yes' if result.precise else 'no'}", file=out)
    rec = {
        "verdict": "epsilon",
        "output": network.labels[k],
        "f_x0": format_exact(y0),
        "epsilon": {"exact": format_exact(eps), "rounded": format_decimal(eps)},
        **_range_record(network, result, args.timings),
    }
    return EXIT_OK, rec


def cmd_eps_to_delta(args, network, out):
    x0 = _x0(args, network)
    delta0 = _rational(args.delta0, "--delta0")
    eps = _rational(args.eps, "--eps")
    k = _output_index(args, network)
    config = _config(args)
    eps0, precise, structure = delta_to_epsilon(network, x0, delta0, k, None, config)
    t0 = time.monotonic()
    delta_star, sound = epsilon_to_delta(network, x0, delta0, eps, config, output=k, structure=structure, epsilon0=eps0)
    elapsed = time.monotonic() - t0
    print(f"epsilon(delta0) = {format_decimal(eps0)} ({'precise' if precise else 'over-approximate'})", file=out)
    print(f"delta* = {format_decimal(delta_star, 11)} ({'sound' if sound else 'unverified'})   exact {format_exact(delta_star)}", file=out)
    rec = {
        "verdict": "delta",
        "output": network.labels[k],
        "epsilon0": {"exact": format_exact(eps0), "rounded": format_decimal(eps0)},
        "delta_star": {"exact": format_exact(delta_star), "rounded": format_decimal(delta_star), "rounded_11": format_decimal(delta_star, 11)},
        "sound": sound,
        "precise": precise,
    }
    if args.timings:
        rec["elapsed"] = round(elapsed, 3)
    return (EXIT_OK if sound else EXIT_UNKNOWN), rec


def cmd_property(args, network, out):
    if not args.property:
        raise UsageError("--property is required")
    try:
        text = Path(args.property).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read property file: {exc}") from None
    spec = parse_property(text, network)
    v = verify_io_property(network, spec, _plan(args, network.input_size), _config(args))
    _print_intervals(network, v.intervals, out)
    for atom, worst in v.slack:
        print(f"  worst value of {atom}: {format_decimal(worst)} (needs <= 0)", file=out)
    print(("Holds" if v.holds else "Unknown: subspaces " + ", ".join(map(str, v.violations))), file=out)
    print(f"precise: {'yes' if v.precise else 'no'}", file=out)
    rec = {
        "verdict": v.kind,
        "violations": v.violations,
        "output_space": spec.output_space,
        "slack": [{"atom": a, "worst": format_exact(w), "rounded": format_decimal(w)} for a, w in v.slack],
        **_range_record(network, v.result, args.timings),
    }
    if spec.output_space == "raw":
        rec["outputs_raw"] = _outputs_record(network, v.intervals)
    return (EXIT_OK if v.holds else EXIT_UNKNOWN), rec


def cmd_sample(args, network, out):
    box = _box(args, network)
    rng = random.Random(args.seed)
    lows = [None] * network.output_size
    highs = [None] * network.output_size
    labels = Counter()
    for _ in range(args.samples):
        y = evaluate_exact(network, box.sample(rng))
        for k, v in enumerate(y):
            lows[k] = v if lows[k] is None or v < lows[k] else lows[k]
            highs[k] = v if highs[k] is None or v > highs[k] else highs[k]
        labels["/".join(network.labels[i] for i in sorted(select_label(y, args.rule)))] += 1
    observed = [Interval(lo, hi) for lo, hi in zip(lows, highs)]
    print(f"{args.samples} samples over {box}", file=out)
    _print_intervals(network, observed, out)
    for lab, n in sorted(labels.items()):
        print(f"  label {lab}: {n}", file=out)
    return EXIT_OK, {"verdict": "sample", "samples": args.samples, "seed": args.seed, "observed": _outputs_record(network, observed), "labels": dict(sorted(labels.items()))}


COMMANDS = {
    "range": cmd_range,
    "delta-robust": cmd_delta_robust,
    "delta-to-eps": cmd_delta_to_eps,
    "eps-to-delta": cmd_eps_to_delta,
    "property": cmd_property,
    "sample": cmd_sample,
}


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--net", required=True, help="network in NNet format")
    shared.add_argument("--mode", choices=(PRECISE, OVER), default=PRECISE)
    shared.add_argument("--budget", type=int, default=8, help="branching neurons kept symbolic in over mode")
    shared.add_argument("--order", choices=("width", "index"), default="index", help="which branching neurons to concretise first")
    shared.add_argument("--partition", help="segments per input dimension, e.g. 2,2,2,2,2 (a single number applies to all)")
    shared.add_argument("--workers", type=int, default=10)
    shared.add_argument("--timeout", type=float, default=7200.0, help="seconds")
    shared.add_argument("--report", help="write a JSON report here")
    shared.add_argument("--timings", action="store_true", help="include wall-clock timings in the report")
    shared.add_argument("--input-space", choices=("normalized", "raw"), default="normalized", help="coordinates of --x0 and --box")
    shared.add_argument("--rule", choices=("argmin", "argmax"), default="argmin", help="label selection rule")
    shared.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="qeverify", description="Range propagation and robustness queries for ReLU networks.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("range", parents=[shared], help="output ranges over an input box")
    p.add_argument("--box", help="'lo,hi;lo,hi;...' or a file with one 'lo,hi' per line")
    p.add_argument("--x0")
    p.add_argument("--delta")
    p = sub.add_parser("delta-robust", parents=[shared], help="delta-local robustness at a point")
    p.add_argument("--x0")
    p.add_argument("--delta")
    p.add_argument("--label-constraints", action="store_true", help="settle interval overlaps with label constraints")
    p = sub.add_parser("delta-to-eps", parents=[shared], help="output deviation for an input perturbation")
    p.add_argument("--x0")
    p.add_argument("--delta")
    p.add_argument("--output", default="0", help="output name or index")
    p = sub.add_parser("eps-to-delta", parents=[shared], help="input perturbation for an output deviation")
    p.add_argument("--x0")
    p.add_argument("--delta0")
    p.add_argument("--eps")
    p.add_argument("--output", default="0", help="output name or index")
    p = sub.add_parser("property", parents=[shared], help="check an input/output property file")
    p.add_argument("--property", help="property file")
    p = sub.add_parser("sample", parents=[shared], help="evaluate random points (diagnostic)")
    p.add_argument("--box")
    p.add_argument("--x0")
    p.add_argument("--delta")
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _echo(args) -> dict:
    skip = {"verbose", "report", "timings"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip and v is not None}


_VALUE_FLAGS = ("--box", "--x0")


def _glue_negative_values(argv: list[str]) -> list[str]:
    """``--box -1,1`` would be read as an unknown option; rewrite it as ``--box=-1,1``."""
    out: list[str] = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        nxt = argv[i + 1] if i + 1 < len(argv) else ""
        if tok in _VALUE_FLAGS and nxt[:1] == "-" and nxt[1:2] and (nxt[1].isdigit() or nxt[1] == "."):
            out.append(f"{tok}={nxt}")
            i += 2
            continue
        out.append(tok)
        i += 1
    return out


def run(argv: Sequence[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    argv = _glue_negative_values(list(sys.argv[1:] if argv is None else argv))
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    report = {"query": _echo(args)}
    status = EXIT_ERROR
    try:
        if args.workers < 1 or args.budget < 0 or args.timeout <= 0:
            raise UsageError("--workers must be >= 1, --budget >= 0 and --timeout > 0")
        network = load_nnet(args.net)
        report["network"] = {"name": network.name, "layers": network.layer_sizes}
        status, rec = COMMANDS[args.command](args, network, out)
        report.update(rec)
    except (ValueError, NNetParseError, FormulaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        report.update(verdict="error", error=str(exc))
    except Timeout as exc:
        print(f"timeout: {exc}", file=sys.stderr)
        report.update(verdict="timeout", error=str(exc))
    except (BudgetExceeded, PropagationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        report.update(verdict="error", error=str(exc))
    report["exit_status"] = status
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=2, sort_keys=True, default=str) + "\n")
    return status


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
