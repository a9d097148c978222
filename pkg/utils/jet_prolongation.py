"""Lie derivatives of model outputs and the truncated polynomial systems built from them.

In the jet ring a state name stands for its initial value, ``_<x>_<k>`` for the k-th
derivative of state ``x`` at t = 0 and ``_<u>_<k>`` for the k-th derivative of input ``u``.
Two systems relate output values to the unknowns: the eliminated form expresses every
output jet through the Lie derivatives (no state jets), the state-jet form keeps one
variable per state derivative with low-degree defining equations.
"""

import logging
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from math import comb
from typing import Dict, List, Mapping, Optional, Sequence, Union

from sympy.polys.domains import QQ

from utils.algebra_helper import (
    ContextError,
    IdentifiabilityError,
    Polynomial,
    RationalFunction,
    VariableContext,
    occurring_variables,
    poly_derivative,
    poly_evaluate,
    ratfun_normalize,
)
from utils.model_parser import Model, initial_condition_name

logger = logging.getLogger(__name__)

SATURATION_VARIABLE = "_z"

Orders = Union[Mapping[str, int], Sequence[int]]


class InconsistentSpecializationError(IdentifiabilityError):
    """The supplied output values contradict the model structurally."""


@dataclass(frozen=True, eq=False)
class JetUniverse:
    params: tuple
    states: tuple
    inputs: tuple
    input_order: int
    context: VariableContext
    state_order: int = 0

    @property
    def ring(self):
        return self.context.ring

    @staticmethod
    def input_jet(u: str, k: int) -> str:
        return u if k == 0 else f"_{u}_{k}"

    # States and inputs share the jet naming scheme; their names never collide.
    state_jet = input_jet

    def input_jet_names(self, max_order: int) -> List[str]:
        return [self.input_jet(u, k) for u in self.inputs for k in range(max_order + 1)]

    def state_jet_names(self) -> List[str]:
        """State jets of order 1 and above, highest orders first."""
        return [self.state_jet(x, k) for k in range(self.state_order, 0, -1) for x in self.states]

    @staticmethod
    def output_jet(y: str, k: int) -> str:
        return f"{y}^({k})"

    def display_name(self, name: str) -> str:
        if name == SATURATION_VARIABLE:
            return "z"
        if name in self.states:
            return initial_condition_name(name)
        for u in self.inputs + self.states:
            prefix = f"_{u}_"
            if name.startswith(prefix) and name[len(prefix):].isdigit():
                return f"{u}^({name[len(prefix):]})"
        return name


def jet_universe(m: Model, input_order: Optional[int] = None, state_order: int = 0) -> JetUniverse:
    """Variables: z, state jets up to ``state_order``, parameters, initial conditions, input jets."""
    if input_order is None:
        input_order = len(m.unknowns) + 3
    states = tuple(dict.fromkeys(m.states))
    params = tuple(dict.fromkeys(m.params))
    inputs = tuple(dict.fromkeys(m.inputs))
    names = [SATURATION_VARIABLE]
    names += [JetUniverse.state_jet(x, k) for k in range(state_order, 0, -1) for x in states]
    names += list(params) + list(states)
    names += [JetUniverse.input_jet(u, k) for u in inputs for k in range(input_order + 1)]
    return JetUniverse(params, states, inputs, input_order, VariableContext(list(dict.fromkeys(names))), state_order)


def _distinct_denominators(exprs: Sequence[RationalFunction]) -> List[Polynomial]:
    seen: Dict[Polynomial, None] = {}
    for e in exprs:
        if not e.denominator.is_ground:
            seen.setdefault(e.denominator, None)
    return list(seen)


def denominator_product(m: Model, universe: Optional[JetUniverse] = None) -> Polynomial:
    """Product of the distinct non-constant denominators of all outputs and right-hand sides."""
    universe = universe or jet_universe(m, 0)
    exprs = [g for _, g in m.outputs] + [m.rhs[x] for x in universe.states if x in m.rhs]
    product = universe.ring.one
    for den in _distinct_denominators(exprs):
        product *= den.set_ring(universe.ring)
    return product


class LieDerivation:
    """The derivation along the model vector field, extended to input jets."""

    def __init__(self, m: Model, universe: JetUniverse):
        self.model = m
        self.universe = universe
        ring = universe.ring

        rhs = [m.rhs[x].set_ring(ring) for x in universe.states]
        dens = _distinct_denominators(rhs)
        self.common_denominator = ring.one
        for den in dens:
            self.common_denominator *= den
        # L(p) = lie_numerator(p) / common_denominator for every polynomial p.
        self.state_terms = [
            (x, f.numerator * self.common_denominator.exquo(f.denominator))
            for x, f in zip(universe.states, rhs)
            if f.numerator
        ]
        self.input_terms = [
            (universe.input_jet(u, k), ring.gens[universe.context[universe.input_jet(u, k + 1)].id])
            for u in universe.inputs
            for k in range(universe.input_order)
        ]
        self.top_input_jets = [universe.input_jet(u, universe.input_order) for u in universe.inputs]

    def lie_numerator(self, p: Polynomial) -> Polynomial:
        ring = self.universe.ring
        result = ring.zero
        for x, term in self.state_terms:
            dp = poly_derivative(p, x)
            if dp:
                result += dp * term
        input_part = ring.zero
        for name, next_jet in self.input_terms:
            dp = poly_derivative(p, name)
            if dp:
                input_part += dp * next_jet
        for name in self.top_input_jets:
            if poly_derivative(p, name):
                raise ContextError(f"input jet '{name}' is the highest order carried; enlarge the jet universe")
        if input_part:
            result += input_part * self.common_denominator
        return result

    def __call__(self, e: RationalFunction) -> RationalFunction:
        num, den = e.numerator, e.denominator
        a_num = self.lie_numerator(num)
        q = self.common_denominator
        if den.is_ground:
            return ratfun_normalize(a_num, q * den)
        a_den = self.lie_numerator(den)
        return ratfun_normalize(a_num * den - num * a_den, q * den * den)


def lie_derivative(m: Model, e: RationalFunction, universe: Optional[JetUniverse] = None) -> RationalFunction:
    universe = universe or jet_universe(m)
    if e.ring != universe.ring:
        e = e.set_ring(universe.ring)
    return LieDerivation(m, universe)(e)


class TotalDerivation:
    """d/dt on the jet ring: x^(k) -> x^(k+1), u^(k) -> u^(k+1), parameters constant."""

    def __init__(self, universe: JetUniverse):
        ring = universe.ring
        context = universe.context
        self.universe = universe
        self.steps: Dict[str, Polynomial] = {}
        for x in universe.states:
            for k in range(universe.state_order):
                self.steps[universe.state_jet(x, k)] = ring.gens[context[universe.state_jet(x, k + 1)].id]
        for u in universe.inputs:
            for k in range(universe.input_order):
                self.steps[universe.input_jet(u, k)] = ring.gens[context[universe.input_jet(u, k + 1)].id]
        self.top = {universe.state_jet(x, universe.state_order) for x in universe.states}
        self.top |= {universe.input_jet(u, universe.input_order) for u in universe.inputs}

    def __call__(self, p: Polynomial) -> Polynomial:
        result = self.universe.ring.zero
        for name in occurring_variables(p):
            if name in self.top:
                raise ContextError(f"jet '{name}' is the highest order carried; enlarge the jet universe")
            if name in self.steps:
                result += poly_derivative(p, name) * self.steps[name]
        return result


class JetCache:
    """Append-only store of output jets keyed by (output, order)."""

    def __init__(self, m: Model, universe: Optional[JetUniverse] = None):
        self.model = m
        self.universe = universe or jet_universe(m)
        self.derivation = LieDerivation(m, self.universe)
        self._jets: Dict[str, List[RationalFunction]] = {
            name: [g.set_ring(self.universe.ring)] for name, g in m.outputs
        }
        self._locks = {name: threading.Lock() for name in self._jets}

    def computed_order(self, output: str) -> int:
        return len(self._jets[output]) - 1

    def jets(self, output: str, order: int) -> List[RationalFunction]:
        """Jets L^0 g .. L^order g of ``output``, extending the cache when needed."""
        if order < 0:
            raise ValueError(f"jet order must be non-negative, got {order}")
        with self._locks[output]:
            chain = self._jets[output]
            while len(chain) <= order:
                chain.append(self.derivation(chain[-1]))
                logger.debug(f"Jet {output}^({len(chain) - 1}): degree {chain[-1].degree()}")
            return list(chain[: order + 1])

    def extend(self, orders: Mapping[str, int], jobs: int = 1) -> Dict[str, List[RationalFunction]]:
        if jobs <= 1 or len(orders) == 1:
            return {name: self.jets(name, k) for name, k in orders.items()}

        results: Dict[str, List[RationalFunction]] = {}
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            future_to_output = {executor.submit(self.jets, name, k): name for name, k in orders.items()}
            for future in as_completed(future_to_output):
                results[future_to_output[future]] = future.result()
        return {name: results[name] for name in orders}


def normalize_orders(m: Model, orders: Orders) -> Dict[str, int]:
    names = m.output_names
    if isinstance(orders, Mapping):
        missing = [y for y in names if y not in orders]
        if missing:
            raise ValueError(f"no jet order given for outputs {missing}")
        result = {y: int(orders[y]) for y in names}
    else:
        orders = list(orders)
        if len(orders) != len(names):
            raise ValueError(f"expected {len(names)} jet orders, got {len(orders)}")
        result = dict(zip(names, (int(k) for k in orders)))
    for y, k in result.items():
        if k < 0:
            raise ValueError(f"jet order for '{y}' must be non-negative")
    return result


def prolong_outputs(m: Model, orders: Orders, cache: Optional[JetCache] = None) -> List[RationalFunction]:
    """Flat jet list: for each output in declaration order, L^0 g .. L^D g."""
    cache = cache or JetCache(m)
    jets = []
    for name, k in normalize_orders(m, orders).items():
        jets.extend(cache.jets(name, k))
    return jets


def jet_values(cache: JetCache, orders: Orders, point: Mapping[str, object]) -> Dict[str, List]:
    """Exact rational values of every jet at ``point`` (universe variable names)."""
    values = {}
    for name, k in normalize_orders(cache.model, orders).items():
        values[name] = [jet.evaluate(point) for jet in cache.jets(name, k)]
    return values


@dataclass
class TruncatedSystem:
    equations: List[Polynomial]
    denominator_product: Polynomial
    order_per_output: Dict[str, int]
    universe: JetUniverse
    variables: List[str] = field(default_factory=list)
    fixed: Dict[str, object] = field(default_factory=dict)
    state_orders: Dict[str, int] = field(default_factory=dict)

    @property
    def ring(self):
        return self.universe.ring

    @property
    def saturation_equation(self) -> Polynomial:
        return self.equations[-1]

    def max_degree(self) -> int:
        return max((sum(monom) for eq in self.equations for monom in eq.itermonoms()), default=0)


def _integral(p: Polynomial) -> Polynomial:
    _, cleared = p.clear_denoms()
    return cleared.primitive()[1]


def _substitute(p: Polynomial, universe: JetUniverse, values: Mapping[str, object]) -> Polynomial:
    ring = universe.ring
    pairs = [
        (ring.gens[universe.context[name].id], QQ.convert(values[name]))
        for name in occurring_variables(p) if name in values
    ]
    return p.subs(pairs) if pairs else p


def _checked_value(name: str, order: int, values: Sequence) -> object:
    if len(values) <= order:
        raise InconsistentSpecializationError(f"output '{name}' needs {order + 1} jet values, got {len(values)}")
    try:
        return QQ.convert(values[order])
    except (TypeError, ValueError, ZeroDivisionError) as e:
        raise InconsistentSpecializationError(f"value for {name}^({order}) is not a rational number") from e


def _pinned_inputs(universe: JetUniverse, input_values: Optional[Mapping[str, object]], max_order: int) -> Dict[str, object]:
    if not universe.inputs or input_values is None:
        return {}
    pins = {}
    for jet_name in universe.input_jet_names(max_order):
        if jet_name not in input_values:
            raise InconsistentSpecializationError(f"no value for input jet {universe.display_name(jet_name)}")
        pins[jet_name] = input_values[jet_name]
    return pins


def _saturated(m: Model, universe: JetUniverse, fixed: Mapping[str, object]):
    product = _substitute(denominator_product(m, universe), universe, fixed)
    if not product:
        raise InconsistentSpecializationError("fixed values zero a denominator of the model")
    z = universe.ring.gens[universe.context[SATURATION_VARIABLE].id]
    return product, z * product - 1


def _append_checked(equations: List[Polynomial], equation: Polynomial, what: str) -> None:
    if not equation:
        return
    if equation.is_ground:
        raise InconsistentSpecializationError(f"{what} reduces to the nonzero constant {equation.LC}")
    equations.append(_integral(equation))


def _used_variables(equations: Sequence[Polynomial]) -> set:
    used = set()
    for eq in equations:
        for monom in eq.itermonoms():
            used.update(i for i, e in enumerate(monom) if e)
    return used


def build_truncated_system(
    m: Model,
    orders: Orders,
    yhat: Mapping[str, Sequence],
    input_values: Optional[Mapping[str, object]] = None,
    cache: Optional[JetCache] = None,
    fixed: Optional[Mapping[str, object]] = None,
) -> TruncatedSystem:
    """Polynomial system whose solutions are the unknowns consistent with the output jets.

    Eliminated form: one equation per output jet, in the parameters, initial conditions and
    input jets.

    Args:
        m: The model.
        orders: Jet order per output.
        yhat: Exact values of y^(0) .. y^(D) for every output.
        input_values: Values pinning the input jets; input jets stay free when omitted.
        cache: Jet cache to reuse.
        fixed: Values substituted for some unknowns (jet-ring names).

    Raises:
        InconsistentSpecializationError: when a value is missing or a constant jet disagrees
            with its value.
    """
    cache = cache or JetCache(m)
    universe = cache.universe
    ring = universe.ring
    orders = normalize_orders(m, orders)
    fixed = dict(fixed or {})

    equations: List[Polynomial] = []
    for name, k in orders.items():
        values = list(yhat.get(name, ()))
        for order, jet in enumerate(cache.jets(name, k)):
            value = _checked_value(name, order, values)
            equation = _substitute(jet.numerator - jet.denominator.mul_ground(value), universe, fixed)
            _append_checked(equations, equation, f"{name}^({order})")

    max_order = max(orders.values(), default=0)
    pins = _pinned_inputs(universe, input_values, max_order)
    for jet_name, value in pins.items():
        equations.append(_integral(ring.gens[universe.context[jet_name].id] - QQ.convert(value)))

    product, saturation = _saturated(m, universe, fixed)
    equations.append(saturation)

    used = _used_variables(equations)
    free_inputs = [] if input_values is not None else universe.input_jet_names(max_order)
    names = [str(s) for s in ring.symbols]
    variables = [
        n for i, n in enumerate(names)
        if n not in fixed and (
            n in universe.params or n in universe.states or n in pins or n in free_inputs
            or n == SATURATION_VARIABLE or i in used
        )
    ]

    logger.debug(f"Truncated system for {m.name}: {len(equations)} equations in {len(variables)} variables, orders {orders}")
    return TruncatedSystem(equations, product, orders, universe, variables, fixed)


def _derivative_chain(chain: List[Polynomial], derivation: TotalDerivation, order: int) -> List[Polynomial]:
    while len(chain) <= order:
        chain.append(derivation(chain[-1]))
    return chain


def build_state_jet_system(
    m: Model,
    orders: Orders,
    yhat: Mapping[str, Sequence],
    input_values: Optional[Mapping[str, object]] = None,
    fixed: Optional[Mapping[str, object]] = None,
) -> TruncatedSystem:
    """Polynomial system in the unknowns and the state jets, of low degree.

    For an output y = G/H the k-th equation is the k-th total derivative of G - H*y with
    y^(l) replaced by its value. For a state x' = N/Q the equation defining x^(k+1) is the
    k-th total derivative of Q*x' - N; it is included only when x^(k+1) occurs in an
    equation already present. Pinned input jets and ``fixed`` unknowns are substituted.

    Args:
        m: The model.
        orders: Jet order per output.
        yhat: Exact values of y^(0) .. y^(D) for every output.
        input_values: Values of the input jets; input jets stay free when omitted.
        fixed: Values substituted for some unknowns (jet-ring names).

    Raises:
        InconsistentSpecializationError: when a value is missing or an equation reduces to
            a nonzero constant.
    """
    orders = normalize_orders(m, orders)
    top = max(orders.values(), default=0)
    universe = jet_universe(m, input_order=top + 1, state_order=top + 1)
    ring = universe.ring
    derivation = TotalDerivation(universe)
    pins = dict(fixed or {})
    pins.update(_pinned_inputs(universe, input_values, top))

    equations: List[Polynomial] = []
    for name, g in m.outputs:
        k = orders[name]
        values = [_checked_value(name, order, list(yhat.get(name, ()))) for order in range(k + 1)]
        numerators = _derivative_chain([g.numerator.set_ring(ring)], derivation, k)
        denominators = _derivative_chain([g.denominator.set_ring(ring)], derivation, k)
        for order in range(k + 1):
            equation = numerators[order]
            for l in range(order + 1):
                equation -= denominators[l].mul_ground(comb(order, l) * values[order - l])
            _append_checked(equations, _substitute(equation, universe, pins), f"{name}^({order})")

    jet_of = {
        universe.context[universe.state_jet(x, k)].id: (x, k)
        for x in universe.states for k in range(1, universe.state_order + 1)
    }
    chains: Dict[str, List[Polynomial]] = {}
    for x in universe.states:
        f = m.rhs[x].set_ring(ring)
        first = ring.gens[universe.context[universe.state_jet(x, 1)].id]
        chains[x] = [f.denominator * first - f.numerator]

    state_orders = {x: 0 for x in universe.states}
    pending = sorted({jet_of[i] for i in _used_variables(equations) if i in jet_of})
    while pending:
        x, k = pending.pop()
        if k <= state_orders[x]:
            continue
        for order in range(state_orders[x] + 1, k + 1):
            equation = _derivative_chain(chains[x], derivation, order - 1)[order - 1]
            before = len(equations)
            _append_checked(equations, _substitute(equation, universe, pins), f"{x}^({order})")
            pending.extend(jet_of[i] for i in _used_variables(equations[before:]) if i in jet_of)
        state_orders[x] = k
        pending.sort()

    product, saturation = _saturated(m, universe, pins)
    equations.append(saturation)

    used = _used_variables(equations)
    free_inputs = [] if input_values is not None else universe.input_jet_names(top)
    names = [str(s) for s in ring.symbols]
    variables = [
        n for i, n in enumerate(names)
        if n not in pins and (
            n in universe.params or n in universe.states or n in free_inputs
            or n == SATURATION_VARIABLE or i in used
        )
    ]
    logger.debug(
        f"State-jet system for {m.name}: {len(equations)} equations in {len(variables)} variables, "
        f"orders {orders}, state orders {state_orders}"
    )
    return TruncatedSystem(equations, product, orders, universe, variables, dict(fixed or {}), state_orders)


def saturated_point(system: TruncatedSystem, point: Mapping[str, object]) -> Dict[str, object]:
    """Extend ``point`` with z = 1 / denominator_product(point)."""
    value = poly_evaluate(system.denominator_product, point)
    if not value:
        raise InconsistentSpecializationError("denominator product vanishes at the point")
    extended = dict(point)
    extended[SATURATION_VARIABLE] = QQ.one / value
    return extended
