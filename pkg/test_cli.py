#!/usr/bin/env python3
"""
Command-line tests: argument checking, exit codes, output formats
"""
import json

import pytest

from main import build_parser, main

DECAY = """model decay
states: x
params: a
eq x' = -a*x
output y = x
"""


@pytest.fixture
def decay_file(tmp_path):
    path = tmp_path / "decay.sian-model"
    path.write_text(DECAY, encoding="utf-8")
    return path


def test_defaults():
    args = build_parser().parse_args(["analyze", "m.sian-model"])
    assert args.prob == 0.99
    assert args.seed == 0
    assert args.max_order is None
    assert args.jobs == 1
    assert not args.json
    bench = build_parser().parse_args(["bench"])
    assert bench.corpus == "corpus"
    assert bench.classes == ["fast", "medium"]


@pytest.mark.parametrize("argv", [
    ["analyze", "m", "--prob", "1"],
    ["analyze", "m", "--prob", "0"],
    ["analyze", "m", "--prob", "likely"],
    ["analyze", "m", "--seed", "-1"],
    ["analyze", "m", "--seed", str(2 ** 64)],
    ["analyze", "m", "--jobs", "0"],
    ["analyze", "m", "--max-order", "0"],
    ["bench", "--classes", "fast,slow"],
    [],
])
def test_bad_arguments_exit_2(argv):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 2


def test_analyze_table(decay_file, capsys):
    assert main(["analyze", str(decay_file), "--seed", "7"]) == 0
    out = capsys.readouterr().out
    assert "model:       decay" in out
    assert "seed:        7" in out
    assert "globally identifiable" in out


def test_analyze_json(decay_file, capsys):
    assert main(["analyze", str(decay_file), "--json", "--prob", "0.9"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["labels"] == {"a": "global", "x(0)": "global"}
    assert data["probability"] == 0.9
    assert data["seed"] == 0


def test_same_seed_same_report(decay_file, capsys):
    main(["analyze", str(decay_file), "--json", "--seed", "3"])
    first = json.loads(capsys.readouterr().out)
    main(["analyze", str(decay_file), "--json", "--seed", "3"])
    second = json.loads(capsys.readouterr().out)
    first.pop("phase_times")
    second.pop("phase_times")
    assert first == second


def test_missing_file(tmp_path, capsys):
    assert main(["analyze", str(tmp_path / "missing.sian-model")]) == 2
    assert "file not found" in capsys.readouterr().err


def test_parse_error_reports_position(tmp_path, capsys):
    path = tmp_path / "bad.sian-model"
    path.write_text(DECAY.replace("-a*x", "exp(a)*x"), encoding="utf-8")
    assert main(["analyze", str(path)]) == 2
    err = capsys.readouterr().err
    assert "line 4, column" in err
    assert "function call" in err


def test_bench_subcommand(tmp_path, capsys):
    (tmp_path / "decay.sian-model").write_text(DECAY, encoding="utf-8")
    (tmp_path / "decay.expected.json").write_text(json.dumps({
        "model": "decay",
        "timing_class": "fast",
        "provenance": "hand-checked",
        "labels": {"a": "global", "x(0)": "global"},
    }), encoding="utf-8")
    assert main(["bench", str(tmp_path), "--json"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["passed"] is True
    assert [e["entry"] for e in data["entries"]] == ["decay"]
    assert main(["bench", str(tmp_path), "--classes", "stretch"]) == 0
    assert "0/0 entries passed" in capsys.readouterr().out


def test_bench_missing_corpus(tmp_path, capsys):
    assert main(["bench", str(tmp_path / "nowhere")]) == 2
    assert "corpus directory not found" in capsys.readouterr().err
