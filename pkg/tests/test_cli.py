import json
import math

import pytest

from productform.cli import main
from productform.model import spec_to_document

DOCS = {
    "erlang": {"family": "erlang2-hetero", "params": {"lam": 1, "mu": [1.5, 2.5]}},
    "breakdown": {"family": "mxmc-breakdown", "params": {"c": 2, "lam": [0.5], "mu": 1, "theta": 0.2, "nu": 1}},
    "batch": {"family": "hypo2-batch", "params": {"c": 2, "lam": [0.3, 0.3], "mu1": 2, "mu2": 3}},
    "degen": {"family": "hypo2-batch", "params": {"c": 2, "lam": [0, 1], "mu1": 6, "mu2": 2}},
    "degen_unstable": {"family": "hypo2-batch", "params": {"c": 2, "lam": [0, 2], "mu1": 6, "mu2": 2}},
}


@pytest.fixture
def model(tmp_path):
    def write(name, doc=None):
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(DOCS[name] if doc is None else doc))
        return str(path)
    return write


def test_roots_table(model, capsys):
    assert main(["--model", model("degen"), "--command", "roots"]) == 0
    out = capsys.readouterr().out
    rows = [line.split() for line in out.strip().splitlines()[1:]]
    first = [r for r in rows if r[:2] == ["1", "1"]]
    assert {r[2] for r in first} == {"0.74", "-0.33"}
    assert ["3.77", "3.77"] in [r[3:5] for r in first]
    assert ["-3.00", "-3.00"] in [r[3:5] for r in first]
    assert ["0.33", "-1.24", "7.24"] in [r[2:5] for r in rows if r[:2] == ["-1", "1"]]


def test_check_non_ergodic(model, capsys):
    assert main(["--model", model("degen_unstable"), "--command", "check"]) == 0
    assert "not ergodic" in capsys.readouterr().out


def test_solve_degenerate_exit(model, capsys):
    assert main(["--model", model("degen"), "--command", "solve"]) == 3
    assert "DegenerateBasis" in capsys.readouterr().err


def test_assumption_exit(model, erlang):
    doc = spec_to_document(erlang)
    for p in doc["planes"]:
        p["a"] = {}
    assert main(["--model", model("erlang", doc), "--command", "check"]) == 2


def test_numerical_exit(model):
    assert main(["--model", model("erlang"), "--command", "solve", "--tol", "1e-40"]) == 4


def test_unreadable_model(tmp_path):
    assert main(["--model", str(tmp_path / "missing.json"), "--command", "check"]) == 2


@pytest.mark.parametrize("command,fmt", [("solve", "json"), ("solve", "csv"), ("waiting-time", "json"),
                                         ("roots", "csv"), ("check", "json")])
def test_byte_identical_outputs(model, tmp_path, command, fmt):
    path = model("breakdown")
    outs = []
    for run in range(2):
        d = tmp_path / f"out{run}"
        assert main(["--model", path, "--command", command, "--out", str(d), "--format", fmt]) == 0
        outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    assert outs[0] == outs[1] and outs[0]
    for name, data in outs[0].items():
        text = data.decode()
        assert "nan" not in text.lower() and "inf" not in text.lower()
        if name.endswith(".json"):
            json.loads(text, parse_constant=lambda c: pytest.fail(f"non-finite {c}"))


def test_waiting_time_csv(model, tmp_path):
    main(["--model", model("breakdown"), "--command", "waiting-time", "--out", str(tmp_path / "o")])
    lines = (tmp_path / "o" / "waiting_time.csv").read_text().splitlines()
    assert lines[0] == "t,F" and len(lines) == 201
    assert all(math.isfinite(float(x)) for line in lines[1:] for x in line.split(","))


def test_validate(model, tmp_path, capsys):
    assert main(["--model", model("breakdown"), "--command", "validate", "--out", str(tmp_path / "v"),
                 "--N", "200"]) == 0
    doc = json.loads((tmp_path / "v" / "validate.json").read_text())
    assert doc["pass"] and doc["max_abs_dev_p"] < 1e-8 and doc["max_abs_dev_F"] < 1e-6


def test_bad_command(model):
    with pytest.raises(SystemExit):
        main(["--model", model("erlang"), "--command", "bogus"])


def test_raw_document_solves(tmp_path):
    from pathlib import Path
    path = Path(__file__).resolve().parent.parent / "models" / "erlang_single_raw.json"
    assert main(["--model", str(path), "--command", "solve", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "solution.json").read_text())
    assert abs(doc["normalization"] - 1) < 1e-10 and len(doc["forms"]) == 2
