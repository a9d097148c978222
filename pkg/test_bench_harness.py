#!/usr/bin/env python3
"""
Tests for corpus loading, fixture checks and report rendering
"""
import io
import json
from pathlib import Path

import pytest

from utils.bench_harness import (
    EXIT_INPUT_ERROR,
    EXIT_MISMATCH,
    EXIT_OK,
    EXIT_UNRESOLVED,
    EntryResult,
    FixtureError,
    load_corpus,
    load_entry,
    render_bench_table,
    render_table,
    report_to_json,
    run_analyze,
    run_bench,
    run_benchmarks,
    run_report_to_json,
)
from utils import identifiability_core
from utils.identifiability_core import DegenerateModelError, Label, analyze_text

CORPUS = Path(__file__).parent / "corpus"

DECAY = """model decay
states: x
params: a
eq x' = -a*x
output y = x
"""

DECAY_FIXTURE = {
    "model": "decay",
    "timing_class": "fast",
    "provenance": "exponential decay, hand-checked",
    "labels": {"a": "global", "x(0)": "global"},
}


def write_entry(directory: Path, name: str, model: str = DECAY, fixture=None) -> Path:
    path = directory / f"{name}.sian-model"
    path.write_text(model, encoding="utf-8")
    if fixture is not None:
        text = fixture if isinstance(fixture, str) else json.dumps(fixture)
        (directory / f"{name}.expected.json").write_text(text, encoding="utf-8")
    return path


def test_corpus_default_classes_are_gating():
    names = [e.name for e in load_corpus(CORPUS)]
    assert names == sorted(names)
    assert "nfkb" not in names and "pharm" not in names
    assert {"slowfast", "goodwin", "cholera"} <= set(names)
    everything = load_corpus(CORPUS, ["fast", "medium", "stretch"])
    assert len(everything) == 11
    assert [e.name for e in load_corpus(CORPUS, ["stretch"])] == ["nfkb", "pharm"]


def test_corpus_entry_contents():
    entry = load_entry(CORPUS / "goodwin.sian-model")
    assert entry.gating
    assert entry.expected["beta"] is Label.LOCAL
    assert entry.expected["alpha"] is Label.NONE
    assert entry.provenance


def test_corpus_arguments(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_corpus(tmp_path / "missing")
    with pytest.raises(ValueError):
        load_corpus(CORPUS, ["slow"])
    assert load_corpus(tmp_path) == []


@pytest.mark.parametrize("fixture, fragment", [
    (None, "missing fixture"),
    ("{not json", "not valid JSON"),
    ("[]", "JSON object"),
    ({**DECAY_FIXTURE, "labels": {}}, "no 'labels'"),
    ({**DECAY_FIXTURE, "labels": {"a": "maybe", "x(0)": "global"}}, "unknown label"),
    ({**DECAY_FIXTURE, "timing_class": "quick"}, "timing_class"),
    ({**DECAY_FIXTURE, "provenance": " "}, "provenance"),
    ({**DECAY_FIXTURE, "labels": {"a": "global"}}, "missing x(0)"),
    ({**DECAY_FIXTURE, "labels": {"a": "global", "x(0)": "global", "b": "none"}}, "not unknowns"),
])
def test_fixture_errors(tmp_path, fixture, fragment):
    path = write_entry(tmp_path, "decay", fixture=fixture)
    with pytest.raises(FixtureError) as info:
        load_entry(path)
    assert info.value.entry == "decay"
    assert fragment in str(info.value)


def test_unparsable_model_is_a_fixture_error(tmp_path):
    path = write_entry(tmp_path, "broken", model=DECAY.replace("-a*x", "-a*q"), fixture=DECAY_FIXTURE)
    with pytest.raises(FixtureError) as info:
        load_entry(path)
    assert "does not parse" in str(info.value)


def result(timing_class, actual, error=None):
    return EntryResult(
        entry="m",
        timing_class=timing_class,
        seed=0,
        expected={"a": "global", "b": "local"},
        actual=actual,
        error=error,
    )


def test_entry_result_pass_rules():
    assert result("fast", {"a": "global", "b": "local"}).passed
    wrong = result("fast", {"a": "global", "b": "global"})
    assert not wrong.passed
    assert wrong.mismatches == {"b": ("local", "global")}
    assert wrong.checks == {"a": True, "b": False}
    assert not result("medium", {"a": "global", "b": "unresolved"}).passed
    assert result("stretch", {"a": "global", "b": "unresolved"}).passed
    assert not result("stretch", {"a": "global", "b": "none"}).passed
    assert not result("fast", {}, error="worker crashed").passed


def test_entry_result_dict_without_timing():
    data = result("fast", {"a": "global", "b": "none"}).to_dict(include_timing=False)
    assert "wall_time" not in data and "phase_times" not in data
    assert data["mismatches"] == {"b": {"expected": "local", "actual": "none"}}
    assert data["passed"] is False


def test_run_benchmarks_on_small_corpus(tmp_path):
    write_entry(tmp_path, "decay", fixture=DECAY_FIXTURE)
    run = run_benchmarks(tmp_path, seed=2)
    assert run.passed
    assert run.classes == ("fast", "medium")
    [entry] = run.results
    assert entry.actual == {"a": "global", "x(0)": "global"}
    assert entry.prime > 2 ** 59
    assert entry.orders == {"y": 1}
    assert "1/1 entries passed" in render_bench_table(run)
    data = json.loads(run_report_to_json(run))
    assert data["entries"][0]["checks"] == {"a": True, "x(0)": True}


def test_run_benchmarks_checks_probability_first(tmp_path):
    write_entry(tmp_path, "decay", fixture=DECAY_FIXTURE)
    with pytest.raises(ValueError):
        run_benchmarks(tmp_path, probability=1.5)


def test_run_bench_exit_codes(tmp_path):
    write_entry(tmp_path, "decay", fixture=DECAY_FIXTURE)
    out, err = io.StringIO(), io.StringIO()
    assert run_bench(tmp_path, out=out, err=err) == EXIT_OK

    write_entry(tmp_path, "decay_wrong", fixture={**DECAY_FIXTURE, "labels": {"a": "local", "x(0)": "global"}})
    out = io.StringIO()
    assert run_bench(tmp_path, out=out, err=err) == EXIT_MISMATCH
    assert "a: expected local, got global" in out.getvalue()

    write_entry(tmp_path, "no_fixture")
    err = io.StringIO()
    assert run_bench(tmp_path, out=out, err=err) == EXIT_INPUT_ERROR
    assert "fixture error" in err.getvalue()


def test_render_table():
    report = analyze_text(DECAY, seed=1)
    text = render_table(report)
    assert text.splitlines()[0] == "model:       decay"
    assert "seed:        1" in text
    assert "orders:      y:1" in text
    assert "x(0)     globally identifiable" in text


def test_report_json_fields():
    data = json.loads(report_to_json(analyze_text(DECAY, seed=1), include_timing=False))
    assert data["labels"] == {"a": "global", "x(0)": "global"}
    assert data["orders"] == {"y": 1}
    assert data["pinned"] == []
    assert data["local_orders"] == {"y": 1}
    assert data["prime"] == data["primes"]["global"]
    assert "phase_times" not in data


def test_run_analyze_exit_codes(tmp_path):
    out, err = io.StringIO(), io.StringIO()
    assert run_analyze(tmp_path / "none.sian-model", out=out, err=err) == EXIT_INPUT_ERROR
    assert "file not found" in err.getvalue()

    summed = tmp_path / "summed.sian-model"
    summed.write_text(DECAY.replace("params: a", "params: a, b").replace("-a*x", "-(a + b)*x"))
    out = io.StringIO()
    assert run_analyze(summed, max_order=1, out=out, err=err) == EXIT_UNRESOLVED
    assert "unresolved" in out.getvalue()

    invalid = tmp_path / "invalid.sian-model"
    invalid.write_text("states: x, w\nparams: a\neq x' = -a*x\noutput y = x\n")
    err = io.StringIO()
    assert run_analyze(invalid, out=out, err=err) == EXIT_INPUT_ERROR
    assert "state 'w' has no equation" in err.getvalue()


def test_degenerate_model_is_an_input_error(tmp_path, monkeypatch):
    def degenerate(m, *args, **kwargs):
        raise DegenerateModelError(f"every sampled point zeroes a denominator of {m.name}")

    monkeypatch.setattr(identifiability_core, "sample_point", degenerate)
    path = tmp_path / "pole.sian-model"
    path.write_text("states: x\nparams: a\neq x' = x/((a - 1)*(a - 2))\noutput y = x\n")
    out, err = io.StringIO(), io.StringIO()
    assert run_analyze(path, out=out, err=err) == EXIT_INPUT_ERROR
    assert "degenerate model" in err.getvalue()
    assert out.getvalue() == ""
