import io
import random
import warnings
from fractions import Fraction as F

import pytest

from conftest import FIXTURES
from qeverify.network import (
    InputRangeWarning,
    Network,
    NNetParseError,
    activation_pattern,
    evaluate_exact,
    load_nnet,
    normalize_point,
    parse_nnet,
    select_label,
    write_nnet,
)

TINY = """// two inputs, one hidden layer of two, one output
2,2,1,2,
2,2,1,
0,
-1,-1,
1,1,
0,0,0,
1,1,1,
1.0,0.0,
0.0,1.0,
0,
0,
1,1,
0,
"""


def test_parse_tiny_network():
    net = parse_nnet(TINY)
    assert net.layer_sizes == [2, 2, 1]
    assert net.weights[0] == [[1, 0], [0, 1]]
    assert evaluate_exact(net, [F(1, 2), F(-1, 2)]) == [F(1, 2)]


def test_fixture_weights_are_exact_decimals(small5):
    assert small5.layer_sizes == [3, 4, 4, 5]
    assert small5.weights[0][0][0] == F(15, 100)
    assert small5.labels == ("COC", "WL", "WR", "SL", "SR")
    assert small5.means[-1] == 2 and small5.ranges[-1] == 4


def test_scientific_notation_and_missing_trailing_commas():
    text = TINY.replace("1.0,0.0,", "1e0,0").replace("1,1,\n0,\n", "1E0,1\n0\n")
    net = parse_nnet(text)
    assert net.weights[0][0] == [1, 0] and net.weights[1][0] == [1, 1]


def test_write_then_parse_round_trip(small5):
    buf = io.StringIO()
    write_nnet(small5, buf)
    again = parse_nnet(buf.getvalue())
    assert again.weights == small5.weights and again.biases == small5.biases
    assert again.means == small5.means and again.input_maxes == small5.input_maxes


@pytest.mark.parametrize(
    "mutate, line",
    [
        (lambda s: s.replace("1.0,0.0,", "1.0,0.0,3.0,"), 9),
        (lambda s: s.replace("0.0,1.0,", "0.0,abc,"), 10),
        (lambda s: s.rsplit("0,\n", 1)[0], 13),
        (lambda s: s + "7,\n", 15),
        (lambda s: s.replace("2,2,1,\n", "3,2,1,\n", 1), 3),
    ],
)
def test_parse_errors_name_the_line(mutate, line):
    with pytest.raises(NNetParseError) as info:
        parse_nnet(mutate(TINY))
    assert info.value.line == line


def test_shape_checks():
    with pytest.raises(ValueError):
        Network([2, 1], [[[F(1)]]], [[F(0)]])
    with pytest.raises(ValueError):
        Network([1, 1], [[[F(1)]]], [[F(0)]], means=[F(0), F(0)], ranges=[F(0), F(1)])


def test_identity_normalisation():
    net = parse_nnet(TINY)
    assert normalize_point(net, [F(1, 3), F(-1, 7)]) == [F(1, 3), F(-1, 7)]


def test_normalisation_centres_and_round_trips(small5):
    assert normalize_point(small5, small5.means[:-1]) == [0, 0, 0]
    rng = random.Random(1)
    for _ in range(100):
        raw = [lo + (hi - lo) * F(rng.randint(0, 1000), 1000) for lo, hi in zip(small5.input_mins, small5.input_maxes)]
        back = normalize_point(small5, normalize_point(small5, raw), "normalized->raw")
        assert back == raw


def test_out_of_range_inputs_are_clamped_or_rejected(small5):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        p = normalize_point(small5, [F(2000), F(0), F(600)])
    assert p[0] == F(1, 2)
    assert any(issubclass(w.category, InputRangeWarning) for w in caught)
    with pytest.raises(ValueError):
        normalize_point(small5, [F(2000), F(0), F(600)], strict=True)
    with pytest.raises(ValueError):
        normalize_point(small5, [F(0)])


def test_constant_network():
    net = Network([2, 2, 1], [[[F(0)] * 2] * 2, [[F(0)] * 2]], [[F(1), F(1)], [F(-3, 2)]])
    for p in ([F(0), F(0)], [F(9), F(-4)]):
        assert evaluate_exact(net, p) == [F(-3, 2)]


def test_relu_definition():
    net = Network([1, 1, 1], [[[F(1)]], [[F(1)]]], [[F(0)], [F(0)]])
    assert evaluate_exact(net, [F(-3)]) == [0]
    assert evaluate_exact(net, [F(2)]) == [2]


def test_piecewise_linear_between_points_with_equal_patterns(small5):
    rng = random.Random(8)
    box = small5.input_domain()
    checked = 0
    for _ in range(300):
        p = [F(rng.randint(-50, 50), 100) for _ in range(3)]
        q = [v + F(rng.randint(-5, 5), 1000) for v in p]
        if activation_pattern(small5, p) != activation_pattern(small5, q):
            continue
        m = [(s + t) / 2 for s, t in zip(p, q)]
        yp, yq, ym = (evaluate_exact(small5, v) for v in (p, q, m))
        assert ym == [(s + t) / 2 for s, t in zip(yp, yq)]
        checked += 1
    assert checked > 100 and box.dim == 3


def test_labels_and_ties():
    assert select_label([F(3), F(1), F(2)]) == {1}
    assert select_label([F(3), F(1), F(2)], "argmax") == {0}
    assert select_label([F(1), F(1), F(2)]) == {0, 1}
    with pytest.raises(ValueError):
        select_label([F(1)], "median")


def test_argmin_unchanged_by_common_output_shift(small5):
    shifted = Network(small5.layer_sizes, small5.weights, small5.biases[:-1] + [[b + F(7, 3) for b in small5.biases[-1]]])
    rng = random.Random(2)
    for _ in range(50):
        p = [F(rng.randint(-50, 50), 100) for _ in range(3)]
        assert select_label(evaluate_exact(small5, p)) == select_label(evaluate_exact(shifted, p))


def test_load_from_path():
    assert load_nnet(FIXTURES / "diamond.nnet").name == "diamond"
