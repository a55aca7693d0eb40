import csv
import json

import pytest

from perturbed_wiener import study
from perturbed_wiener.cli import main, read_data
from perturbed_wiener.errors import OptimFailure

ROW1 = ["--mu1", "1", "--sigma1sq", "0.4", "--mu2", "0.1", "--sigma2sq", "0.026"]


@pytest.fixture
def data_file(tmp_path):
    path = tmp_path / "data.csv"
    assert main(["simulate", *ROW1, "--n", "100", "--seed", "5", "--out", str(path)]) == 0
    return path


def test_simulate_is_reproducible(tmp_path, data_file):
    again = tmp_path / "again.csv"
    assert main(["simulate", *ROW1, "--n", "100", "--seed", "5", "--out", str(again)]) == 0
    assert again.read_bytes() == data_file.read_bytes()
    lines = data_file.read_text().splitlines()
    assert lines[0] == "s,r" and len(lines) == 101
    assert read_data(data_file).n == 100


def test_simulate_stdout(capsys):
    assert main(["simulate", *ROW1, "--n", "3"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "s,r" and len(out) == 4
    s = out[1].split(",")[0]
    assert s == format(float(s), ".17g")


def test_simulate_oracle(tmp_path):
    path = tmp_path / "o.csv"
    rc = main(["simulate", *ROW1, "--n", "5", "--oracle", "--dt", "0.01", "--horizon", "10", "--out", str(path)])
    assert rc == 0
    assert read_data(path).n == 5


def test_estimate(tmp_path, data_file):
    out = tmp_path / "fit.json"
    assert main(["estimate", str(data_file), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["n"] == 100 and doc["converged"]
    assert set(doc["estimate"]) == {"mu1", "sigma1sq", "mu2", "sigma2sq"}


def test_estimate_proportional_reports_three_parameters(tmp_path):
    data = tmp_path / "p.csv"
    assert main(["simulate", "--mu1", "1", "--mu2", "2", "--k", "1", "--n", "200", "--out", str(data)]) == 0
    out = tmp_path / "fit.json"
    assert main(["estimate", str(data), "--scenario", "propvar", "--out", str(out)]) == 0
    assert list(json.loads(out.read_text())["estimate"]) == ["mu1", "mu2", "k"]


def test_lrt_rejects_large_effect(tmp_path, capsys):
    data = tmp_path / "d.csv"
    assert main(["simulate", "--mu1", "1", "--sigma1sq", "0.4", "--mu2", "10", "--sigma2sq", "0.4",
                 "--n", "100", "--out", str(data)]) == 0
    assert main(["lrt", str(data)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["reject"] is True and doc["statistic"] > doc["threshold"]


@pytest.mark.parametrize("body,where", [
    ("s,r\n1,2\n3,x\n", "line 3"),
    ("s,r\n1,2\n-1,2\n", "line 3"),
    ("s,r\n1,2,3\n", "line 2"),
    ("a,b\n1,2\n", "line 1"),
])
def test_bad_data_names_the_line(tmp_path, capsys, body, where):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    assert main(["estimate", str(path)]) == 2
    assert where in capsys.readouterr().err


def test_missing_file_is_io_error(tmp_path):
    assert main(["estimate", str(tmp_path / "nope.csv")]) == 3


def test_unwritable_output_is_io_error(tmp_path):
    assert main(["simulate", *ROW1, "--n", "3", "--out", str(tmp_path / "no" / "dir.csv")]) == 3


def test_identical_pairs_are_input_error(tmp_path):
    path = tmp_path / "same.csv"
    path.write_text("s,r\n" + "2,3\n" * 10)
    assert main(["estimate", str(path)]) == 2


@pytest.mark.parametrize("argv", [
    ["simulate", "--mu1", "1", "--mu2", "1", "--sigma1sq", "1"],
    ["simulate", *ROW1, "--k", "1"],
    ["simulate", *ROW1, "--mu1", "-1"],
    ["simulate", *ROW1, "--seed", str(2**64)],
    ["study", *ROW1, "--reps", "0"],
    ["sweep", *ROW1, "--reps", "1"],
    ["study", "--table1", "--mu1", "2"],
])
def test_input_errors(argv):
    assert main(argv) == 2


def test_config_precedence(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"mu1": 1, "sigma1sq": 0.4, "mu2": 0.1, "sigma2sq": 0.026, "n": 7, "seed": 9}))
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["simulate", "--config", str(conf), "--out", str(a)]) == 0
    assert len(a.read_text().splitlines()) == 8
    assert main(["simulate", "--config", str(conf), "--n", "4", "--out", str(b)]) == 0
    assert len(b.read_text().splitlines()) == 5
    # the overridden n leaves the seed from the file in force
    c = tmp_path / "c.csv"
    assert main(["simulate", *ROW1, "--n", "4", "--seed", "9", "--out", str(c)]) == 0
    assert b.read_bytes() == c.read_bytes()


def test_config_accepts_flag_spelling(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"--mu1": 1, "sigma1sq": 0.4, "mu2": 1, "sigma2sq": 0.4, "s-only": True,
                                "reps": 1, "n": 100}))
    assert main(["study", "--config", str(conf), "--out", str(tmp_path / "st")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "st.csv")))
    assert {r["fit"] for r in rows} == {"joint", "s_only"}


def test_unknown_config_key(tmp_path, capsys):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"mu1": 1, "colour": "red"}))
    assert main(["simulate", "--config", str(conf)]) == 2
    assert "colour" in capsys.readouterr().err


def test_study_single_rep(tmp_path):
    prefix = tmp_path / "st"
    assert main(["study", *ROW1, "--reps", "1", "--n", "50", "--out", str(prefix)]) == 0
    rows = list(csv.DictReader(open(f"{prefix}.csv")))
    assert [r["param"] for r in rows] == ["mu1", "sigma1sq", "mu2", "sigma2sq"]
    assert all(r["cp"] in ("0", "100") for r in rows)
    assert json.loads(open(f"{prefix}.json").read())["reps"] == 1


def test_study_failure_exit_code(tmp_path, monkeypatch):
    def broken(*a, **k):
        raise OptimFailure("no")

    monkeypatch.setattr(study, "fit", broken)
    assert main(["study", *ROW1, "--reps", "2", "--n", "20", "--out", str(tmp_path / "st")]) == 4


def test_sweep_row_count(tmp_path):
    prefix = tmp_path / "sw"
    argv = ["sweep", "--mu1", "1", "--mu2", "0.9", "--sigma1sq", "0.1", "--sigma2sq", "0.1", "--scenario",
            "eqvar", "--axis", "mu2", "--values", "0.9,1.1", "--reps", "2", "--n", "40", "--out", str(prefix)]
    assert main(argv) == 0
    lines = open(f"{prefix}.csv").read().splitlines()
    assert len(lines) == 1 + 2 * 3
    assert lines[0].startswith("mu2,param,truth,avg,emp_se,asym_se,cp")


def test_table1_preset(tmp_path, capsys):
    prefix = tmp_path / "t1"
    assert main(["study", "--table1", "--reps", "1", "--n", "40", "--out", str(prefix)]) == 0
    rows = list(csv.DictReader(open(f"{prefix}.csv")))
    assert sorted({float(r["sigma2sq"]) for r in rows}) == [0.026, 0.059, 0.094, 0.131]
    assert "sigma2sq = 0.131" in capsys.readouterr().out
