#!/usr/bin/env python3
"""
Tests for output jets and the truncated polynomial system
"""
import random
from pathlib import Path

import pytest
from sympy.polys.domains import QQ

from utils.algebra_helper import ContextError, poly_evaluate, random_prime, ratfun_from_poly, reduce_scalar
from utils.jet_prolongation import (
    SATURATION_VARIABLE,
    InconsistentSpecializationError,
    JetCache,
    JetUniverse,
    TotalDerivation,
    build_state_jet_system,
    build_truncated_system,
    denominator_product,
    jet_universe,
    jet_values,
    lie_derivative,
    normalize_orders,
    prolong_outputs,
    saturated_point,
)
from utils.model_parser import load_model, parse_model
from utils.taylor_oracle import ModularTaylorJets, taylor_jets, taylor_solution

CORPUS = Path(__file__).parent / "corpus"

DECAY = """model decay
states: x
params: a
eq x' = -a*x
output y = x
"""

FORCED = """model forced
states: x
params: a
inputs: u
eq x' = -a*x + u
output y = x
"""


def test_decay_jets():
    m = parse_model(DECAY)
    cache = JetCache(m)
    a, x = cache.universe.context.gen("a"), cache.universe.context.gen("x")
    assert cache.jets("y", 2) == [
        ratfun_from_poly(x),
        ratfun_from_poly(-a * x),
        ratfun_from_poly(a ** 2 * x),
    ]
    assert cache.computed_order("y") == 2


def test_universe_layout():
    m = parse_model(FORCED)
    universe = jet_universe(m, 2)
    assert universe.context.names == [SATURATION_VARIABLE, "a", "x", "u", "_u_1", "_u_2"]
    assert universe.display_name("x") == "x(0)"
    assert universe.display_name("_u_2") == "u^(2)"
    assert universe.display_name(SATURATION_VARIABLE) == "z"


def test_input_jets_shift():
    m = parse_model(FORCED)
    universe = jet_universe(m, 3)
    ctx = universe.context
    a, x, u, u1 = (ctx.gen(n) for n in ("a", "x", "u", "_u_1"))
    first = lie_derivative(m, m.output("y"), universe)
    assert first == ratfun_from_poly(-a * x + u)
    assert lie_derivative(m, first, universe) == ratfun_from_poly(a ** 2 * x - a * u + u1)


def test_top_input_jet_cannot_be_differentiated():
    m = parse_model(FORCED)
    cache = JetCache(m, jet_universe(m, 1))
    cache.jets("y", 2)
    with pytest.raises(ContextError):
        cache.jets("y", 3)


@pytest.mark.parametrize("name, point, order", [
    ("lipolysis", {"k2": 2, "k3": 3, "k4": 5, "x1": 7, "x2": 1, "x3": 4, "x4": 6, "x5": 9}, 4),
    ("goodwin", {"b": 2, "c": 3, "alpha": 5, "beta": 7, "gamma": 11, "delta": 13, "sigma": 2,
                 "x1": 3, "x2": 4, "x3": 5, "x4": 6}, 4),
    ("pharm", {"a": 2, "b1": 3, "b2": 5, "ka": 7, "kc": 11, "Vm": 13, "x1": 1, "x2": 2, "x3": 3, "x4": 4}, 3),
])
def test_jets_match_taylor_oracle(name, point, order):
    m = load_model(CORPUS / f"{name}.sian-model")
    cache = JetCache(m)
    orders = {y: order for y in m.output_names}
    assert jet_values(cache, orders, point) == taylor_jets(m, point, order)


def test_jets_with_input_match_taylor_oracle():
    m = parse_model(FORCED)
    point = {"a": 2, "x": 3, "u": 5, "_u_1": 7, "_u_2": 11, "_u_3": 13}
    cache = JetCache(m)
    assert jet_values(cache, {"y": 3}, point) == taylor_jets(m, point, 3)
    assert taylor_jets(m, point, 1) == {"y": [3, -1]}


def test_denominator_product():
    m = load_model(CORPUS / "goodwin.sian-model")
    universe = jet_universe(m)
    ctx = universe.context
    assert denominator_product(m, universe) == (ctx.gen("c") + ctx.gen("x4")) * ctx.gen("x3")
    assert denominator_product(parse_model(DECAY)) == jet_universe(parse_model(DECAY), 0).ring.one


def test_decay_truncated_system():
    m = parse_model(DECAY)
    cache = JetCache(m)
    ctx = cache.universe.context
    a, x, z = ctx.gen("a"), ctx.gen("x"), ctx.gen(SATURATION_VARIABLE)
    system = build_truncated_system(m, {"y": 1}, {"y": [3, -6]}, cache=cache)
    assert system.equations == [x - 3, -a * x + 6, z - 1]
    assert system.saturation_equation == z - 1
    assert system.order_per_output == {"y": 1}
    assert set(system.variables) == {SATURATION_VARIABLE, "a", "x"}


@pytest.mark.parametrize("name, order", [("goodwin", 3), ("lipolysis", 2), ("slowfast", 2)])
def test_sampled_point_satisfies_truncated_system(name, order):
    m = load_model(CORPUS / f"{name}.sian-model")
    cache = JetCache(m)
    point = {n: i + 2 for i, n in enumerate(list(m.params) + list(m.states))}
    orders = {y: order for y in m.output_names}
    system = build_truncated_system(m, orders, jet_values(cache, orders, point), cache=cache)
    extended = saturated_point(system, point)
    for equation in system.equations:
        assert poly_evaluate(equation, extended) == 0
    assert system.max_degree() >= 1


def test_input_jets_are_pinned():
    m = parse_model(FORCED)
    cache = JetCache(m)
    point = {"a": 2, "x": 3, "u": 5, "_u_1": 7}
    yhat = jet_values(cache, {"y": 1}, point)
    system = build_truncated_system(m, {"y": 1}, yhat, {"u": 5, "_u_1": 7}, cache)
    ctx = cache.universe.context
    assert ctx.gen("u") - 5 in system.equations
    assert ctx.gen("_u_1") - 7 in system.equations
    for equation in system.equations:
        assert poly_evaluate(equation, saturated_point(system, point)) == 0
    with pytest.raises(InconsistentSpecializationError):
        build_truncated_system(m, {"y": 1}, yhat, {"u": 5}, cache)


def test_inconsistent_values():
    m = parse_model(DECAY + "output c = 1\n")
    with pytest.raises(InconsistentSpecializationError):
        build_truncated_system(m, {"y": 0, "c": 0}, {"y": [3], "c": [2]})
    with pytest.raises(InconsistentSpecializationError):
        build_truncated_system(m, {"y": 1, "c": 0}, {"y": [3], "c": [1]})
    system = build_truncated_system(m, {"y": 0, "c": 0}, {"y": [3], "c": [QQ(1)]})
    assert len(system.equations) == 2


def test_orders_and_prolongation():
    m = load_model(CORPUS / "slowfast.sian-model")
    assert normalize_orders(m, [1, 2, 0, 0]) == {"y1": 1, "y2": 2, "y3": 0, "y4": 0}
    with pytest.raises(ValueError):
        normalize_orders(m, [1, 2])
    with pytest.raises(ValueError):
        normalize_orders(m, {"y1": -1, "y2": 0, "y3": 0, "y4": 0})
    assert len(prolong_outputs(m, [1, 2, 0, 0])) == 2 + 3 + 1 + 1


def test_concurrent_extension_matches_sequential():
    m = load_model(CORPUS / "slowfast.sian-model")
    orders = {y: 3 for y in m.output_names}
    sequential = JetCache(m).extend(orders)
    concurrent = JetCache(m).extend(orders, jobs=3)
    assert concurrent == sequential


SUMMED = """model summed
states: x
params: a, b
eq x' = -(a + b)*x
output y = x
"""

FAST_MODELS = ["lipolysis", "slowfast", "slowfast_two_outputs"]
CORPUS_MODELS = sorted(p.name[:-len(".sian-model")] for p in CORPUS.glob("*.sian-model"))


def _random_point(m, rng, order, high=30):
    """Integer point with nonvanishing denominators, input jets up to ``order``."""
    product = denominator_product(m)
    while True:
        point = {n: rng.randint(1, high) for n in list(m.params) + list(m.states)}
        for u in m.inputs:
            for k in range(order + 1):
                point[JetUniverse.input_jet(u, k)] = rng.randint(-high, high)
        if poly_evaluate(product, point):
            return point


def _corpus_params(heavy_marks):
    return [
        pytest.param(name, marks=pytest.mark.slow) if heavy_marks and name not in FAST_MODELS else name
        for name in CORPUS_MODELS
    ]


@pytest.mark.parametrize("name", _corpus_params(heavy_marks=True))
def test_jets_match_taylor_oracle_on_corpus(name):
    m = load_model(CORPUS / f"{name}.sian-model")
    rng = random.Random(f"oracle/{name}")
    cache = JetCache(m)
    orders = {y: 6 for y in m.output_names}
    for _ in range(20):
        point = _random_point(m, rng, 7)
        assert jet_values(cache, orders, point) == taylor_jets(m, point, 6)


@pytest.mark.parametrize("name", _corpus_params(heavy_marks=False))
def test_modular_jets_match_exact_values(name):
    m = load_model(CORPUS / f"{name}.sian-model")
    rng = random.Random(f"modular/{name}")
    for _ in range(20):
        point = _random_point(m, rng, 7)
        spec = random_prime(rng)
        jets = ModularTaylorJets(m, point, spec, [])
        exact = taylor_jets(m, point, 6)
        for y in m.output_names:
            assert [jets.value(y, k) for k in range(7)] == [reduce_scalar(v, spec) for v in exact[y]]


@pytest.mark.parametrize("text, order", [(FORCED, 3), (SUMMED, 3), ("lipolysis", 3), ("slowfast_two_outputs", 4)])
def test_modular_gradients_match_symbolic_jets(text, order):
    m = load_model(CORPUS / f"{text}.sian-model") if "\n" not in text else parse_model(text)
    rng = random.Random(f"gradient/{m.name}")
    directions = list(m.params) + list(m.states)
    cache = JetCache(m)
    for _ in range(5):
        point = _random_point(m, rng, order + 1)
        spec = random_prime(rng)
        jets = ModularTaylorJets(m, point, spec, directions)
        for y in m.output_names:
            for k, jet in enumerate(cache.jets(y, order)):
                expected = [reduce_scalar(jet.diff(v).evaluate(point), spec) for v in directions]
                assert jets.gradient(y, k) == expected


@pytest.mark.parametrize("text", [DECAY, FORCED, "lipolysis", "slowfast"])
def test_extending_jets_matches_direct_computation(text):
    m = load_model(CORPUS / f"{text}.sian-model") if "\n" not in text else parse_model(text)
    point = _random_point(m, random.Random(f"extend/{m.name}"), 6)
    spec = random_prime(random.Random(m.name))
    directions = list(m.params) + list(m.states)
    for order in range(5):
        stepwise = JetCache(m)
        stepwise_modular = ModularTaylorJets(m, point, spec, directions)
        for y in m.output_names:
            stepwise.jets(y, order)
            stepwise_modular.gradient(y, order)
        direct = JetCache(m)
        direct_modular = ModularTaylorJets(m, point, spec, directions)
        for y in m.output_names:
            assert stepwise.jets(y, order + 1) == direct.jets(y, order + 1)
            assert stepwise_modular.gradient(y, order + 1) == direct_modular.gradient(y, order + 1)
            assert stepwise_modular.value(y, order + 1) == direct_modular.value(y, order + 1)


def test_modular_jets_reject_unknown_directions():
    m = parse_model(FORCED)
    spec = random_prime(random.Random(0))
    with pytest.raises(ContextError):
        ModularTaylorJets(m, {"a": 1, "x": 2, "u": 3}, spec, ["u"])


def test_state_jet_universe_layout():
    m = parse_model(FORCED)
    universe = jet_universe(m, 1, state_order=2)
    assert universe.context.names == [SATURATION_VARIABLE, "_x_2", "_x_1", "a", "x", "u", "_u_1"]
    assert universe.state_jet_names() == ["_x_2", "_x_1"]
    assert universe.display_name("_x_2") == "x^(2)"
    assert universe.display_name("_u_1") == "u^(1)"


def test_total_derivation():
    m = parse_model(FORCED)
    universe = jet_universe(m, 1, state_order=2)
    ctx = universe.context
    a, x, x1, x2, u, u1 = (ctx.gen(n) for n in ("a", "x", "_x_1", "_x_2", "u", "_u_1"))
    derivation = TotalDerivation(universe)
    assert derivation(a * x ** 2 + u) == 2 * a * x * x1 + u1
    assert derivation(x1) == x2
    assert derivation(a) == 0
    with pytest.raises(ContextError):
        derivation(x2)


def test_decay_state_jet_system():
    m = parse_model(DECAY)
    system = build_state_jet_system(m, {"y": 1}, {"y": [3, -6]})
    ctx = system.universe.context
    a, x, x1, z = ctx.gen("a"), ctx.gen("x"), ctx.gen("_x_1"), ctx.gen(SATURATION_VARIABLE)
    assert system.equations == [x - 3, x1 + 6, x1 + a * x, z - 1]
    assert system.state_orders == {"x": 1}
    assert set(system.variables) == {SATURATION_VARIABLE, "a", "x", "_x_1"}


def _state_jet_point(m, point, order):
    states, _ = taylor_solution(m, point, order)
    extended = dict(point)
    for x, values in states.items():
        for k in range(1, order + 1):
            extended[JetUniverse.state_jet(x, k)] = values[k]
    return extended


@pytest.mark.parametrize("text, order", [("goodwin", 3), ("lipolysis", 2), ("slowfast", 2), (FORCED, 2)])
def test_sampled_point_satisfies_state_jet_system(text, order):
    m = load_model(CORPUS / f"{text}.sian-model") if "\n" not in text else parse_model(text)
    point = _random_point(m, random.Random(f"root/{m.name}"), order + 1)
    orders = {y: order for y in m.output_names}
    inputs = {n: v for n, v in point.items() if n.startswith("_") or n in m.inputs}
    system = build_state_jet_system(m, orders, taylor_jets(m, point, order), inputs)
    extended = saturated_point(system, _state_jet_point(m, point, order + 1))
    for equation in system.equations:
        assert poly_evaluate(equation, extended) == 0


def test_state_jet_system_keeps_degrees_low():
    m = load_model(CORPUS / "goodwin.sian-model")
    point = _random_point(m, random.Random("degree"), 0)
    yhat = taylor_jets(m, point, 4)
    state_jets = build_state_jet_system(m, {"y1": 4}, yhat)
    eliminated = build_truncated_system(m, {"y1": 4}, yhat)
    assert state_jets.max_degree() <= 4
    assert eliminated.max_degree() > 2 * state_jets.max_degree()


def test_fixed_unknowns_are_substituted():
    m = parse_model(SUMMED)
    point = {"a": 2, "b": 5, "x": 3}
    yhat = taylor_jets(m, point, 1)
    for system in (
        build_state_jet_system(m, {"y": 1}, yhat, fixed={"a": 2}),
        build_truncated_system(m, {"y": 1}, yhat, fixed={"a": 2}),
    ):
        assert "a" not in system.variables
        assert system.fixed == {"a": 2}
        extended = saturated_point(system, _state_jet_point(m, point, 2))
        assert all(poly_evaluate(eq, extended) == 0 for eq in system.equations)
    with pytest.raises(InconsistentSpecializationError):
        build_state_jet_system(m, {"y": 0}, {"y": [3]}, fixed={"x": 4})


def test_state_jet_system_errors():
    m = parse_model(DECAY + "output c = 1\n")
    with pytest.raises(InconsistentSpecializationError):
        build_state_jet_system(m, {"y": 0, "c": 0}, {"y": [3], "c": [2]})
    with pytest.raises(InconsistentSpecializationError):
        build_state_jet_system(m, {"y": 1, "c": 0}, {"y": [3], "c": [1]})
    forced = parse_model(FORCED)
    with pytest.raises(InconsistentSpecializationError):
        build_state_jet_system(forced, {"y": 1}, {"y": [3, -1]}, {"u": 5})
