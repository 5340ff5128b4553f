import io
import json
from fractions import Fraction as F

import pytest

from conftest import FIXTURES
from qeverify.cli import EXIT_ERROR, EXIT_OK, EXIT_UNKNOWN, UsageError, output_names, parse_box, parse_linear, parse_property, parse_rationals, run
from qeverify.formula import AffineExpr, Box, DnfFormula, Var, le
from qeverify.network import load_nnet

SMALL = str(FIXTURES / "small5.nnet")
DIAMOND = str(FIXTURES / "diamond.nnet")
X0 = "0.1,-0.2,0.3"


def call(*argv):
    out = io.StringIO()
    code = run(list(argv) + ["--workers", "1"], out)
    return code, out.getvalue()


def y(k):
    return AffineExpr.var(Var.output(k))


# ---------------------------------------------------------------- parsing


def test_decimals_parse_exactly():
    assert parse_rationals("0.1, -0.23,1e-3, 3/4") == [F(1, 10), F(-23, 100), F(1, 1000), F(3, 4)]
    with pytest.raises(UsageError):
        parse_rationals("0.1,abc")


def test_box_parsing(tmp_path):
    assert parse_box("0,1; -0.5,0.5") == Box(((F(0), F(1)), (F(-1, 2), F(1, 2))))
    p = tmp_path / "box.txt"
    p.write_text("# a box\n0, 1\n\n2,3\n")
    assert parse_box(str(p)) == Box(((F(0), F(1)), (F(2), F(3))))
    with pytest.raises(UsageError):
        parse_box("1,0")


def test_linear_constraints():
    names = output_names(load_nnet(SMALL))
    assert parse_linear("COC <= 1500", names) == le(y(0), 1500)
    assert parse_linear("y0 - 2*WL + 0.5 SR >= 3", names) == le(3 - y(0) + 2 * y(1) - F(1, 2) * y(4), 0)
    assert parse_linear("COC < WL", names) == parse_linear("WL > y0", names)
    assert str(parse_linear("COC = 1", names)) == "y0 - 1 = 0"
    for bad in ("COC <= ", "COC <= 1 <= 2", "FOO <= 1", "COC * WL <= 1", "COC != 1"):
        with pytest.raises(UsageError):
            parse_linear(bad, names)


def test_property_file_sections():
    net = load_nnet(SMALL)
    text = "\n".join(["rule argmin", "box", "0,0.1", "-0.1,0", "0,0.2  # third", "predicate", "COC <= 1", "WL >= -1", "or", "SR <= 0"])
    spec = parse_property(text, net)
    assert spec.box == Box(((F(0), F(1, 10)), (F(-1, 10), F(0)), (F(0), F(1, 5))))
    assert spec.predicate == DnfFormula.of([le(y(0), 1), le(-1 - y(1), 0)], [le(y(4), 0)])
    with pytest.raises(UsageError):
        parse_property("box\n0,1\npredicate\nCOC <= 1\n", net)
    with pytest.raises(UsageError):
        parse_property("stray line\n", net)


def test_raw_inputs_are_normalised():
    net = load_nnet(SMALL)
    spec = parse_property("input raw\nbox\n500,600\n0,2\n600,850\npredicate\nCOC <= 0\n", net)
    assert spec.box == Box(((F(0), F(1, 10)), (F(0), F(1, 10)), (F(0), F(1, 2))))


# ---------------------------------------------------------------- commands


def test_range_command():
    code, text = call("range", "--net", DIAMOND, "--box", "-1,1")
    assert code == EXIT_OK
    assert "y0  [0.00000000, 1.00000000]   exact [0, 1]" in text
    assert "precise: yes" in text


def test_range_over_mode_with_partition():
    code, text = call("range", "--net", DIAMOND, "--box", "-1,1", "--mode", "over", "--budget", "0")
    assert code == EXIT_OK and "exact [0, 2]" in text and "precise: no" in text
    code, text = call("range", "--net", DIAMOND, "--box", "-1,1", "--mode", "over", "--budget", "0", "--partition", "2")
    assert code == EXIT_OK and "exact [0, 1]" in text


@pytest.mark.parametrize(
    "delta, code, line",
    [("0.01", EXIT_OK, "Robust: COC"), ("0.05", EXIT_UNKNOWN, "Unknown: COC overlaps WL")],
)
def test_delta_robust_exit_codes(delta, code, line):
    got, text = call("delta-robust", "--net", SMALL, "--x0", X0, "--delta", delta)
    assert got == code and line in text


def test_label_constraints_flag():
    code, text = call("delta-robust", "--net", SMALL, "--x0", X0, "--delta", "0.05", "--label-constraints")
    assert code == EXIT_OK and "Robust: COC" in text


def test_delta_to_eps_command():
    code, text = call("delta-to-eps", "--net", DIAMOND, "--x0", "0", "--delta", "1")
    assert code == EXIT_OK and "epsilon = 1.00000000" in text


def test_eps_to_delta_command():
    code, text = call("eps-to-delta", "--net", DIAMOND, "--x0", "0", "--delta0", "1", "--eps", "0.5")
    assert code == EXIT_OK and "delta* = 0.50000000000 (sound)" in text
    code, text = call("eps-to-delta", "--net", DIAMOND, "--x0", "0", "--delta0", "1", "--eps", "2")
    assert code == EXIT_ERROR


def test_property_command(tmp_path):
    p = tmp_path / "prop.txt"
    p.write_text("box\n0,0.1\n-0.1,0\n0,0.2\npredicate\nCOC <= 10\n")
    assert call("property", "--net", SMALL, "--property", str(p))[0] == EXIT_OK
    p.write_text("box\n0,0.1\n-0.1,0\n0,0.2\npredicate\nCOC <= -10\n")
    code, text = call("property", "--net", SMALL, "--property", str(p))
    assert code == EXIT_UNKNOWN and "Unknown" in text


def test_sample_command():
    code, text = call("sample", "--net", SMALL, "--box", "0,0.02;-0.2,-0.18;0.3,0.32", "--samples", "200")
    assert code == EXIT_OK and "label COC: 200" in text


@pytest.mark.parametrize(
    "argv",
    [
        ["range", "--net", "missing.nnet", "--box", "0,1"],
        ["range", "--net", DIAMOND, "--box", "0,1;0,1"],
        ["range", "--net", DIAMOND],
        ["delta-robust", "--net", SMALL, "--x0", "0.1", "--delta", "0.1"],
        ["range", "--net", DIAMOND, "--box", "0,1", "--partition", "0"],
        ["frobnicate"],
    ],
)
def test_errors_exit_with_two(argv):
    assert call(*argv)[0] == EXIT_ERROR


def test_precise_timeout_is_an_error():
    code, _ = call("range", "--net", SMALL, "--box", "0,0.5;-0.5,0;0,0.5", "--timeout", "0.000001")
    assert code == EXIT_ERROR


def test_report_matches_exit_status(tmp_path):
    for delta, want in (("0.01", EXIT_OK), ("0.05", EXIT_UNKNOWN)):
        path = tmp_path / f"r{delta}.json"
        code, _ = call("delta-robust", "--net", SMALL, "--x0", X0, "--delta", delta, "--report", str(path))
        rep = json.loads(path.read_text())
        assert code == want == rep["exit_status"]
        assert rep["verdict"] == ("Robust" if want == EXIT_OK else "Unknown")
        assert rep["query"]["delta"] == delta
        assert [c["layer"] for c in rep["census"]] == [1, 2]


def test_reports_are_byte_identical(tmp_path):
    argv = ["range", "--net", SMALL, "--box", "0,0.2;-0.3,-0.1;0.2,0.4", "--mode", "over", "--budget", "1", "--partition", "2,1,2"]
    blobs = []
    for i in range(2):
        path = tmp_path / f"{i}.json"
        call(*argv, "--report", str(path))
        blobs.append(path.read_bytes())
    assert blobs[0] == blobs[1]


def test_timings_only_on_request(tmp_path):
    path = tmp_path / "t.json"
    call("range", "--net", DIAMOND, "--box", "-1,1", "--report", str(path), "--timings")
    assert "elapsed" in json.loads(path.read_text())
    call("range", "--net", DIAMOND, "--box", "-1,1", "--report", str(path))
    assert "elapsed" not in path.read_text()
