"""Fully-connected ReLU networks in the NNet text format.

Weights are kept as exact rationals: every decimal literal in the file is
converted without going through binary floating point.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence, TextIO

from .formula import Box, FormulaError, as_rational, format_decimal, format_exact, rational_from_decimal

log = logging.getLogger(__name__)

ACAS_LABELS = ("COC", "WL", "WR", "SL", "SR")


class NNetParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class InputRangeWarning(UserWarning):
    pass


@dataclass(frozen=True)
class NeuronRef:
    layer: int  # 1-based hidden layer, or num_hidden + 1 for the output layer
    index: int


@dataclass
class Network:
    """ReLU network; ``weights[k]`` maps layer ``k`` to layer ``k + 1``.

    ``weights[k][j][i]`` is the weight from neuron ``i`` of layer ``k`` to
    neuron ``j`` of layer ``k + 1`` (layer 0 is the input).  Hidden layers
    are ReLU-activated, the last layer is affine only.
    """

    layer_sizes: list[int]
    weights: list[list[list[Fraction]]]
    biases: list[list[Fraction]]
    input_mins: list[Fraction] = None
    input_maxes: list[Fraction] = None
    means: list[Fraction] = None
    ranges: list[Fraction] = None
    name: str = "network"
    labels: tuple[str, ...] = None

    def __post_init__(self):
        sizes = self.layer_sizes
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"bad layer sizes {sizes}")
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValueError("need one weight matrix and bias vector per layer")
        self.weights = [[[as_rational(w) for w in row] for row in m] for m in self.weights]
        self.biases = [[as_rational(b) for b in v] for v in self.biases]
        for k, (m, bvec) in enumerate(zip(self.weights, self.biases)):
            if len(m) != sizes[k + 1] or len(bvec) != sizes[k + 1]:
                raise ValueError(f"layer {k + 1}: expected {sizes[k + 1]} rows and biases")
            for row in m:
                if len(row) != sizes[k]:
                    raise ValueError(f"layer {k + 1}: weight row has {len(row)} entries, expected {sizes[k]}")
        n_in = sizes[0]
        if self.input_mins is None:
            self.input_mins = [Fraction(-(10**9))] * n_in
        if self.input_maxes is None:
            self.input_maxes = [Fraction(10**9)] * n_in
        if self.means is None:
            self.means = [Fraction(0)] * (n_in + 1)
        if self.ranges is None:
            self.ranges = [Fraction(1)] * (n_in + 1)
        self.input_mins = [as_rational(v) for v in self.input_mins]
        self.input_maxes = [as_rational(v) for v in self.input_maxes]
        self.means = [as_rational(v) for v in self.means]
        self.ranges = [as_rational(v) for v in self.ranges]
        if len(self.input_mins) != n_in or len(self.input_maxes) != n_in:
            raise ValueError("input bounds must match the input size")
        if len(self.means) != n_in + 1 or len(self.ranges) != n_in + 1:
            raise ValueError("means/ranges need input size + 1 entries")
        if any(r <= 0 for r in self.ranges):
            raise ValueError("normalisation ranges must be strictly positive")
        if self.labels is None:
            n_out = sizes[-1]
            self.labels = ACAS_LABELS if n_out == 5 else tuple(f"y{i}" for i in range(n_out))

    @property
    def input_size(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_size(self) -> int:
        return self.layer_sizes[-1]

    @property
    def num_hidden(self) -> int:
        return len(self.layer_sizes) - 2

    def neuron_count(self) -> int:
        return sum(self.layer_sizes[1:-1])

    def input_domain(self) -> Box:
        """Valid input region in normalised coordinates."""
        return Box(
            tuple(
                ((lo - m) / r, (hi - m) / r)
                for lo, hi, m, r in zip(self.input_mins, self.input_maxes, self.means, self.ranges)
            )
        )

    def denormalize_output(self, value):
        return value * self.ranges[-1] + self.means[-1]

    def normalize_output(self, value):
        return (value - self.means[-1]) / self.ranges[-1]


# --------------------------------------------------------------------------
# parsing


def _numbers(line: str, lineno: int) -> list[Fraction]:
    out = []
    for tok in line.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            out.append(rational_from_decimal(tok))
        except FormulaError:
            raise NNetParseError(f"non-numeric token {tok!r}", lineno) from None
    return out


def parse_nnet(source: TextIO | str | Iterable[str], name: str = "network") -> Network:
    """Read an NNet network.  ``source`` is a text stream or its lines."""
    if isinstance(source, str):
        source = source.splitlines()
    lines = []
    for lineno, raw in enumerate(source, start=1):
        s = raw.strip()
        if not s or s.startswith("//"):
            continue
        lines.append((lineno, s))
    pos = 0

    def take(expected: int | None, what: str, ints: bool = False):
        nonlocal pos
        if pos >= len(lines):
            raise NNetParseError(f"unexpected end of file while reading {what}", lines[-1][0] if lines else None)
        lineno, s = lines[pos]
        pos += 1
        vals = _numbers(s, lineno)
        if expected is not None and len(vals) != expected:
            raise NNetParseError(f"{what}: expected {expected} values, got {len(vals)}", lineno)
        if ints:
            if any(v.denominator != 1 for v in vals):
                raise NNetParseError(f"{what}: expected integers", lineno)
            return [int(v) for v in vals]
        return vals

    header = take(None, "header", ints=True)
    if len(header) < 4:
        raise NNetParseError("header needs numLayers, inputSize, outputSize, maxLayerSize", lines[0][0] if lines else None)
    num_layers, in_size, out_size = header[:3]
    sizes = take(num_layers + 1, "layer sizes", ints=True)
    if sizes[0] != in_size or sizes[-1] != out_size:
        raise NNetParseError("layer sizes disagree with header", lines[pos - 1][0])
    take(None, "legacy flag")
    mins = take(in_size, "input minimums")
    maxes = take(in_size, "input maximums")
    means = take(in_size + 1, "means")
    ranges = take(in_size + 1, "ranges")
    weights, biases = [], []
    for k in range(num_layers):
        m = [take(sizes[k], f"layer {k + 1} weight row {j}") for j in range(sizes[k + 1])]
        b = [take(1, f"layer {k + 1} bias {j}")[0] for j in range(sizes[k + 1])]
        weights.append(m)
        biases.append(b)
    if pos != len(lines):
        raise NNetParseError("trailing data after last layer", lines[pos][0])
    try:
        return Network(sizes, weights, biases, mins, maxes, means, ranges, name=name)
    except ValueError as exc:
        raise NNetParseError(str(exc)) from exc


def load_nnet(path: str | Path) -> Network:
    path = Path(path)
    with path.open() as fh:
        return parse_nnet(fh, name=path.stem)


def write_nnet(network: Network, fh: TextIO) -> None:
    """Write ``network`` back out; rationals are written exactly when decimal."""

    def fmt(v: Fraction) -> str:
        d = v.denominator
        while d % 2 == 0:
            d //= 2
        while d % 5 == 0:
            d //= 5
        if d != 1:
            raise ValueError(f"{v} has no finite decimal expansion")
        places = 0
        while (v * 10**places).denominator != 1:
            places += 1
        return format_decimal(v, places)

    sizes = network.layer_sizes
    fh.write(f"// {network.name}\n")
    fh.write(f"{len(sizes) - 1},{sizes[0]},{sizes[-1]},{max(sizes)},\n")
    fh.write(",".join(str(s) for s in sizes) + ",\n")
    fh.write("0,\n")
    for vec in (network.input_mins, network.input_maxes, network.means, network.ranges):
        fh.write(",".join(fmt(v) for v in vec) + ",\n")
    for m, b in zip(network.weights, network.biases):
        for row in m:
            fh.write(",".join(fmt(v) for v in row) + ",\n")
        for v in b:
            fh.write(fmt(v) + ",\n")


# --------------------------------------------------------------------------
# evaluation


def normalize_point(network: Network, point: Sequence, direction: str = "raw->normalized", *, strict: bool = False) -> list[Fraction]:
    """Map between raw and normalised input coordinates.

    Raw inputs outside ``[input_mins, input_maxes]`` are clamped with a
    warning, or rejected when ``strict``.
    """
    if len(point) != network.input_size:
        raise ValueError(f"expected {network.input_size} inputs, got {len(point)}")
    pt = [as_rational(p) for p in point]
    if direction == "raw->normalized":
        out = []
        for i, p in enumerate(pt):
            lo, hi = network.input_mins[i], network.input_maxes[i]
            if p < lo or p > hi:
                if strict:
                    raise ValueError(f"input {i} = {format_exact(p)} outside [{format_exact(lo)}, {format_exact(hi)}]")
                warnings.warn(f"input {i} clamped to [{lo}, {hi}]", InputRangeWarning, stacklevel=2)
                p = min(max(p, lo), hi)
            out.append((p - network.means[i]) / network.ranges[i])
        return out
    if direction == "normalized->raw":
        return [p * network.ranges[i] + network.means[i] for i, p in enumerate(pt)]
    raise ValueError(f"unknown direction {direction!r}")


def layer_values(network: Network, normalized_input: Sequence) -> list[tuple[list[Fraction], list[Fraction]]]:
    """Per-layer (z, a) values of an exact forward pass."""
    if len(normalized_input) != network.input_size:
        raise ValueError(f"expected {network.input_size} inputs, got {len(normalized_input)}")
    a = [as_rational(v) for v in normalized_input]
    out = []
    last = len(network.weights) - 1
    for k, (m, bvec) in enumerate(zip(network.weights, network.biases)):
        z = [sum((w * v for w, v in zip(row, a)), b) for row, b in zip(m, bvec)]
        a = z if k == last else [v if v > 0 else Fraction(0) for v in z]
        out.append((z, a))
    return out


def evaluate_exact(network: Network, normalized_input: Sequence) -> list[Fraction]:
    return layer_values(network, normalized_input)[-1][0]


def activation_pattern(network: Network, normalized_input: Sequence) -> tuple[tuple[bool, ...], ...]:
    return tuple(tuple(v > 0 for v in z) for z, _ in layer_values(network, normalized_input)[:-1])


def select_label(outputs: Sequence, rule: str = "argmin") -> frozenset[int]:
    """Indices achieving the extreme output.  More than one means a tie."""
    if rule not in ("argmin", "argmax"):
        raise ValueError(f"unknown selection rule {rule!r}")
    best = min(outputs) if rule == "argmin" else max(outputs)
    return frozenset(i for i, v in enumerate(outputs) if v == best)
