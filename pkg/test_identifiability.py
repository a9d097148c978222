#!/usr/bin/env python3
"""
Tests for the Monte Carlo classification pipeline
"""
from fractions import Fraction
from pathlib import Path

import pytest

from utils import identifiability_core
from utils.algebra_helper import poly_evaluate
from utils.bench_harness import load_corpus
from utils.groebner_engine import GroebnerBudgetExceeded, GroebnerStats
from utils.identifiability_core import (
    DegenerateModelError,
    Label,
    ProbabilityArgumentError,
    analyze_text,
    check_report_consistency,
    classify_progressive,
    global_classification,
    local_classification,
    per_phase_probability,
    probability_budget,
    sample_point,
)
from utils.jet_prolongation import denominator_product, jet_universe
from utils.model_parser import ModelValidationError, load_model, parse_model

CORPUS = Path(__file__).parent / "corpus"

DECAY = """model decay
states: x
params: a
eq x' = -a*x
output y = x
"""

SQUARED = """model squared
states: x
params: a
eq x' = -a^2*x
output y = x
"""

SUMMED = """model summed
states: x
params: a, b
eq x' = -(a + b)*x
output y = x
"""

FORCED = """model forced
states: x
params: a
inputs: u
eq x' = -a*x + u
output y = x
"""

EXPECTED = {
    "decay": {"a": "global", "x(0)": "global"},
    "squared": {"a": "local", "x(0)": "global"},
    "summed": {"a": "none", "b": "none", "x(0)": "global"},
    "forced": {"a": "global", "x(0)": "global"},
}


def test_budget_formula():
    m = parse_model(DECAY)
    budget = probability_budget(Fraction(1, 2), m, {"y": 1}, events=10, degree_bound=20)
    assert budget.bound == 400
    assert budget.events == 10
    assert budget.degree_bound == 20


def test_budget_defaults_count_coordinates_and_prime():
    m = parse_model(DECAY)
    budget = probability_budget(0.99, m, 1)
    assert budget.events == 2 + 1
    assert budget.probability == Fraction(99, 100)
    assert budget.bound >= budget.events * budget.degree_bound * 100


def test_per_phase_probability_union_bound():
    assert per_phase_probability(0.99) == Fraction(199, 200)
    assert per_phase_probability(Fraction(1, 2)) == Fraction(3, 4)


def test_budget_grows_with_probability():
    m = parse_model(DECAY)
    bounds = [probability_budget(p, m, 1).bound for p in (0.5, 0.9, 0.99, 0.999)]
    assert bounds == sorted(bounds)
    assert len(set(bounds)) == len(bounds)


@pytest.mark.parametrize("p", [0, 1, 1.5, -0.1, "high"])
def test_probability_outside_unit_interval(p):
    m = parse_model(DECAY)
    with pytest.raises(ProbabilityArgumentError):
        probability_budget(p, m, 1)


def test_sample_point_is_reproducible():
    m = parse_model(DECAY)
    budget = probability_budget(Fraction(1, 2), m, 1, events=1, degree_bound=50)
    assert budget.bound == 100
    first = sample_point(m, budget, seed=5)
    assert first.values == sample_point(m, budget, seed=5).values
    assert all(1 <= v <= 100 for v in first.values.values())
    assert first.value_of("x(0)") == first.values["x"]
    points = [tuple(sorted(sample_point(m, budget, seed=s).values.items())) for s in range(10)]
    assert len(set(points)) > 1


def test_budget_events_match_sampled_coordinates():
    m = parse_model(FORCED)
    universe = jet_universe(m, 4)
    budget = probability_budget(0.99, m, 2, universe=universe)
    point = sample_point(m, budget, 0, universe)
    assert budget.events == len(point.values) + 1 == 2 + 5 + 1
    default = probability_budget(0.99, m, 2)
    assert default.events == len(sample_point(m, default, 0).values) + 1


def test_sample_point_avoids_vanishing_denominators():
    m = load_model(CORPUS / "lipolysis.sian-model")
    universe = jet_universe(m)
    budget = probability_budget(0.99, m, 2)
    for seed in range(5):
        point = sample_point(m, budget, seed, universe)
        assert poly_evaluate(denominator_product(m, universe), point.values) != 0


def test_degenerate_model():
    m = parse_model("""states: x
params: a
eq x' = x/((a - 1)*(a - 2))
output y = x
""")
    budget = probability_budget(Fraction(1, 2), m, 0, events=1, degree_bound=1)
    assert budget.bound == 2
    with pytest.raises(DegenerateModelError):
        sample_point(m, budget, seed=0)


def test_decay_local():
    m = parse_model(DECAY)
    local = local_classification(m, seed=0)
    assert local.flags == {"a": True, "x(0)": True}
    assert local.orders == {"y": 1}
    assert local.rank == 2
    assert local.stabilized


def test_slowfast_local_all_identifiable():
    m = load_model(CORPUS / "slowfast.sian-model")
    local = local_classification(m, seed=1)
    assert all(local.flags.values())
    assert local.rank == len(m.unknowns)


def test_decay_global():
    report = global_classification(parse_model(DECAY), 0.99, seed=3)
    assert report.unknowns == ["a", "x(0)"]
    assert report.label_values() == {"a": "global", "x(0)": "global"}
    assert report.local_orders == {"y": 1}
    assert report.global_orders == {"y": 1}
    assert report.pinned == []
    assert set(report.primes) == {"local", "global"}
    assert report.prime == report.primes["global"]
    assert {"local", "specialize", "groebner", "normal_forms"} <= set(report.phase_times)
    assert report.probability == 0.99
    assert not report.has_unresolved
    assert check_report_consistency(report)


def test_sign_ambiguity_is_local_only():
    report = global_classification(parse_model(SQUARED), seed=0)
    assert report.label_values() == {"a": "local", "x(0)": "global"}


def test_sum_of_rates_is_not_identifiable():
    m = parse_model(SUMMED)
    local = local_classification(m, seed=0)
    assert local.flags == {"a": False, "b": False, "x(0)": True}
    report = global_classification(m, seed=0)
    assert report.label_values() == {"a": "none", "b": "none", "x(0)": "global"}
    assert report.unknowns_with(Label.NONE) == ["a", "b"]
    assert check_report_consistency(report, local)


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_labels_are_seed_stable(seed):
    assert analyze_text(SQUARED, seed=seed).label_values() == {"a": "local", "x(0)": "global"}


def test_concurrent_normal_forms_agree():
    m = parse_model(SQUARED)
    assert global_classification(m, seed=4, jobs=2).labels == global_classification(m, seed=4).labels


def test_unstabilized_rank_is_unresolved():
    report = global_classification(parse_model(DECAY), seed=0, max_order=0)
    assert report.labels == {"a": Label.UNRESOLVED, "x(0)": Label.GLOBAL}
    assert report.has_unresolved
    assert any("did not stabilize" in note for note in report.notes)


def test_groebner_budget_gives_unresolved(monkeypatch):
    def exhausted(*args, **kwargs):
        raise GroebnerBudgetExceeded("pair-reduction budget exhausted", GroebnerStats(pair_reductions=1))

    monkeypatch.setattr(identifiability_core, "buchberger", exhausted)
    report = global_classification(parse_model(SUMMED), seed=0)
    assert report.label_values() == {"a": "none", "b": "none", "x(0)": "unresolved"}
    assert report.groebner_stats["pair_reductions"] == 1
    assert any("budget" in note for note in report.notes)


def test_progress_updates():
    updates = list(classify_progressive(parse_model(SQUARED), seed=0))
    types = [u['type'] for u in updates]
    assert types[0] == 'phase'
    assert 'local_complete' in types
    assert types.count('progress') == 2
    assert types[-1] == 'complete'
    assert updates[-1]['report'].model == "squared"


def test_invalid_inputs():
    with pytest.raises(ProbabilityArgumentError):
        global_classification(parse_model(DECAY), 1)
    with pytest.raises(ModelValidationError):
        global_classification(parse_model("states: x\nparams: a\neq x' = -a*x\n"))


def test_goodwin_local_flags():
    m = load_model(CORPUS / "goodwin.sian-model")
    local = local_classification(m, seed=0)
    not_local = sorted(name for name, flag in local.flags.items() if flag is False)
    assert not_local == ["alpha", "gamma", "x2(0)", "x3(0)"]
    assert local.rank == 9
    assert local.orders == {"y1": 8}
    assert len(local.pinned) == len(m.unknowns) - local.rank
    assert set(local.pinned) <= set(not_local)


@pytest.mark.slow
@pytest.mark.parametrize("entry", load_corpus(CORPUS), ids=lambda e: e.name)
def test_corpus_labels(entry):
    report = global_classification(load_model(entry.model_path), 0.99, seed=0)
    assert report.labels == entry.expected


@pytest.mark.slow
@pytest.mark.parametrize("seed", [11, 12, 13, 14, 15])
def test_corpus_seed_stability(seed):
    m = load_model(CORPUS / "slowfast_two_outputs.sian-model")
    expected = {e.name: e for e in load_corpus(CORPUS)}["slowfast_two_outputs"].expected
    assert global_classification(m, 0.99, seed=seed).labels == expected


def test_rank_completing_unknowns_are_pinned():
    local = local_classification(parse_model(SUMMED), seed=0)
    assert local.pinned == ["a"]
    report = global_classification(parse_model(SUMMED), seed=0)
    assert report.pinned == ["a"]
    assert local_classification(parse_model(DECAY), seed=0).pinned == []


@pytest.mark.parametrize("text", [DECAY, SQUARED, SUMMED, FORCED], ids=["decay", "squared", "summed", "forced"])
def test_system_forms_agree(text):
    m = parse_model(text)
    state_jets = global_classification(m, seed=6)
    eliminated = global_classification(m, seed=6, system_form="eliminated")
    assert state_jets.label_values() == eliminated.label_values() == EXPECTED[m.name]


def test_unknown_system_form():
    with pytest.raises(ValueError):
        global_classification(parse_model(DECAY), system_form="dense")


def test_labels_hold_across_many_seeds():
    texts = [DECAY, SQUARED, SUMMED, FORCED]
    discrepancies = 0
    for seed in range(100):
        m = parse_model(texts[seed % len(texts)])
        if global_classification(m, 0.99, seed=seed).label_values() != EXPECTED[m.name]:
            discrepancies += 1
    assert discrepancies <= 1


@pytest.mark.slow
@pytest.mark.parametrize("seed", [21, 22, 23, 24, 25])
@pytest.mark.parametrize("entry", load_corpus(CORPUS, ["fast"]), ids=lambda e: e.name)
def test_fast_corpus_seed_stability(entry, seed):
    report = global_classification(load_model(entry.model_path), 0.99, seed=seed)
    assert report.labels == entry.expected
