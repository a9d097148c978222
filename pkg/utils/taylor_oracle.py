"""Taylor expansion of model solutions on truncated power series.

Two evaluators share the same recursion. :func:`taylor_jets` works in exact rational
arithmetic and is independent of the Lie-derivative code path: output jets are read off
as k! times the Taylor coefficients of y(t). :class:`ModularTaylorJets` runs the recursion
over GF(p) and carries a first-order perturbation in every unknown, which gives the rows
of the output-jet Jacobian at a point without expanding any jet symbolically.
"""

import logging
from math import factorial
from typing import Dict, List, Mapping, Sequence, Tuple

from sympy import Symbol
from sympy.polys.domains import QQ
from sympy.polys.orderings import lex
from sympy.polys.ring_series import rs_integrate, rs_mul, rs_pow, rs_series_inversion
from sympy.polys.rings import PolyRing

from utils.algebra_helper import (
    BadPrimeError,
    ContextError,
    DivisionByZeroPolynomial,
    IncompletePointError,
    Polynomial,
    PrimeFieldSpec,
    RationalFunction,
    reduce_scalar,
)
from utils.jet_prolongation import JetUniverse
from utils.model_parser import Model

logger = logging.getLogger(__name__)

_SERIES_RING = PolyRing([Symbol("t")], QQ, lex)


class _SeriesEvaluator:
    def __init__(self, prec: int):
        self.prec = prec
        self.t = _SERIES_RING.gens[0]

    def polynomial(self, p: Polynomial, values: Dict[int, object]):
        ring = _SERIES_RING
        powers = {}
        result = ring.zero
        for monom, coeff in p.iterterms():
            term = ring.ground_new(coeff)
            for i, e in enumerate(monom):
                if not e:
                    continue
                value = values[i]
                if value.is_ground:
                    term = term * value.LC ** e if value else ring.zero
                    continue
                key = (i, e)
                if key not in powers:
                    powers[key] = rs_pow(value, e, self.t, self.prec)
                term = rs_mul(term, powers[key], self.t, self.prec)
            result += term
        return result

    def rational(self, f: RationalFunction, values: Dict[int, object]):
        num = self.polynomial(f.numerator, values)
        den = self.polynomial(f.denominator, values)
        if den.is_ground:
            if not den:
                raise DivisionByZeroPolynomial("denominator vanishes along the solution")
            return num.quo_ground(den.LC)
        if not den.coeff(1):
            raise DivisionByZeroPolynomial("denominator vanishes at t = 0")
        return rs_mul(num, rs_series_inversion(den, self.t, self.prec), self.t, self.prec)


def _input_series(point: Mapping[str, object], u: str, order: int):
    ring = _SERIES_RING
    t = ring.gens[0]
    series = ring.zero
    for k in range(order + 1):
        name = JetUniverse.input_jet(u, k)
        value = QQ.convert(point.get(name, 0))
        series += t ** k * (value / factorial(k))
    return series


def taylor_solution(m: Model, point: Mapping[str, object], order: int) -> Tuple[Dict[str, List], Dict[str, List]]:
    """State and output derivatives of orders 0 .. ``order`` at t = 0, exactly.

    Args:
        m: The model.
        point: Values for parameters, initial conditions (keyed by state name) and input
            jets (keyed by input name for order 0 and ``_<u>_<k>`` above it).
        order: Highest derivative to return.

    Returns:
        ``(states, outputs)``, each mapping a name to its list of derivatives.
    """
    prec = order + 1
    evaluator = _SeriesEvaluator(prec)
    ring = _SERIES_RING
    names = [str(s) for s in m.ring.symbols]

    state_set = set(m.states)
    initial = {x: ring.ground_new(QQ.convert(point[x])) for x in m.states}
    fixed: Dict[int, object] = {}
    for i, name in enumerate(names):
        if name in m.inputs:
            fixed[i] = _input_series(point, name, order)
        elif name not in state_set:
            fixed[i] = ring.ground_new(QQ.convert(point[name]))

    states = dict(initial)
    # Each Picard step fixes one more Taylor coefficient of every state.
    for _ in range(prec):
        values = dict(fixed)
        for i, name in enumerate(names):
            if name in state_set:
                values[i] = states[name]
        states = {
            x: initial[x] + rs_integrate(evaluator.rational(m.rhs[x], values), evaluator.t)
            for x in m.states
        }
        states = {x: _truncate(s, prec) for x, s in states.items()}

    values = dict(fixed)
    for i, name in enumerate(names):
        if name in state_set:
            values[i] = states[name]

    outputs = {name: _derivatives(evaluator.rational(g, values), prec) for name, g in m.outputs}
    logger.debug(f"Taylor solution for {m.name}: order {order}")
    return {x: _derivatives(s, prec) for x, s in states.items()}, outputs


def taylor_jets(m: Model, point: Mapping[str, object], order: int) -> Dict[str, List]:
    """Output derivatives y^(0) .. y^(order) at t = 0, exactly."""
    return taylor_solution(m, point, order)[1]


def _derivatives(series, prec: int) -> List:
    t = series.ring.gens[0]
    return [series.coeff(t ** k) * factorial(k) if k else series.coeff(1) for k in range(prec)]


def _truncate(series, prec: int):
    return series.ring.from_dict({monom: c for monom, c in series.items() if monom[0] < prec})


# Series over GF(p) below are lists of coefficient vectors [value, d/d theta_1, ...];
# a list shorter than the working precision has zero trailing coefficients.

def _vector_product(a: List[int], b: List[int], p: int) -> List[int]:
    a0, b0 = a[0], b[0]
    return [a0 * b0 % p] + [(a0 * bi + ai * b0) % p for ai, bi in zip(a[1:], b[1:])]


def _series_product(a: List[List[int]], b: List[List[int]], prec: int, p: int) -> List[List[int]]:
    size = min(prec, len(a) + len(b) - 1)
    width = len(a[0])
    out = [[0] * width for _ in range(size)]
    for i in range(min(len(a), size)):
        ai = a[i]
        a0 = ai[0]
        for j in range(min(len(b), size - i)):
            bj = b[j]
            b0 = bj[0]
            target = out[i + j]
            target[0] += a0 * b0
            for t in range(1, width):
                target[t] += a0 * bj[t] + ai[t] * b0
    return [[c % p for c in vector] for vector in out]


def _series_sum(a: List[List[int]], b: List[List[int]], p: int) -> List[List[int]]:
    if len(a) < len(b):
        a, b = b, a
    out = [list(vector) for vector in a]
    for i, vector in enumerate(b):
        out[i] = [(x + y) % p for x, y in zip(out[i], vector)]
    return out


def _series_inverse(s: List[List[int]], prec: int, p: int) -> List[List[int]]:
    s0 = s[0]
    inv0 = pow(s0[0], -1, p)
    head = [inv0] + [-c * inv0 * inv0 % p for c in s0[1:]]
    out = [head]
    for k in range(1, prec):
        acc = [0] * len(head)
        for i in range(1, min(k, len(s) - 1) + 1):
            term = _vector_product(s[i], out[k - i], p)
            acc = [x + y for x, y in zip(acc, term)]
        out.append([(-c) % p for c in _vector_product(head, [c % p for c in acc], p)])
    return out


class _ModularEvaluator:
    """Evaluates compiled polynomials on vector series at one precision; caches powers."""

    def __init__(self, values: Dict[int, List[List[int]]], prec: int, width: int, p: int):
        self.values = values
        self.prec = prec
        self.width = width
        self.p = p
        self.powers: Dict[Tuple[int, int], List[List[int]]] = {}

    def power(self, index: int, e: int) -> List[List[int]]:
        key = (index, e)
        if key not in self.powers:
            base = self.values[index]
            self.powers[key] = base if e == 1 else _series_product(self.power(index, e - 1), base, self.prec, self.p)
        return self.powers[key]

    def polynomial(self, terms) -> List[List[int]]:
        p = self.p
        result = [[0] * self.width]
        for coeff, factors in terms:
            term = None
            for index, e in factors:
                series = self.power(index, e)
                term = series if term is None else _series_product(term, series, self.prec, p)
            if term is None:
                term = [[coeff] + [0] * (self.width - 1)]
            else:
                term = [[coeff * c % p for c in vector] for vector in term]
            result = _series_sum(result, term, p)
        return result

    def rational(self, num_terms, den_terms, what: str) -> List[List[int]]:
        num = self.polynomial(num_terms)
        den = self.polynomial(den_terms)
        if not den[0][0]:
            raise BadPrimeError(f"denominator of {what} vanishes modulo {self.p} at the point")
        return _series_product(num, _series_inverse(den, self.prec, self.p), self.prec, self.p)


class ModularTaylorJets:
    """Output jets and their gradients with respect to chosen unknowns, over GF(p).

    Every series coefficient is a vector ``[value, d/d theta_1, ..., d/d theta_n]``, so one
    run of the power-series recursion carries all first-order perturbations at once. States
    are extended one coefficient at a time and output series are recomputed on demand.

    Args:
        m: The model.
        point: Values for parameters, initial conditions and input jets (jet-ring names).
        spec: The prime field.
        directions: Model variables (parameters or states, the latter standing for their
            initial values) to differentiate with respect to, in column order.
    """

    def __init__(self, m: Model, point: Mapping[str, object], spec: PrimeFieldSpec, directions: Sequence[str]):
        self.model = m
        self.spec = spec
        self.p = spec.p
        self.width = len(directions) + 1
        self.point = point
        names = [str(s) for s in m.ring.symbols]
        unknown = [d for d in directions if d not in names or d in m.inputs]
        if unknown:
            raise ContextError(f"cannot differentiate with respect to {unknown}")
        slot = {name: i + 1 for i, name in enumerate(directions)}

        self._constants: Dict[int, List[List[int]]] = {}
        self._state_index: Dict[int, str] = {}
        self._input_index: Dict[int, str] = {}
        self._states: Dict[str, List[List[int]]] = {}
        for i, name in enumerate(names):
            if name in m.inputs:
                self._input_index[i] = name
                continue
            if name not in point:
                raise IncompletePointError(f"no value assigned to {name}")
            vector = [reduce_scalar(QQ.convert(point[name]), spec)] + [0] * (self.width - 1)
            if name in slot:
                vector[slot[name]] = 1
            if name in m.rhs:
                self._state_index[i] = name
                self._states[name] = [vector]
            else:
                self._constants[i] = [vector]

        self._rhs = [(x, self._compile(m.rhs[x].numerator), self._compile(m.rhs[x].denominator)) for x in m.states]
        self._outputs = {name: (self._compile(g.numerator), self._compile(g.denominator)) for name, g in m.outputs}
        self._output_series: Dict[str, Tuple[int, List[List[int]]]] = {}
        self._inputs: Dict[str, List[List[int]]] = {u: [] for u in m.inputs}
        self._length = 1

    def _compile(self, poly: Polynomial):
        terms = []
        for monom, coeff in poly.iterterms():
            value = reduce_scalar(coeff, self.spec)
            if value:
                terms.append((value, [(i, e) for i, e in enumerate(monom) if e]))
        return terms

    def _input_coefficients(self, u: str, length: int) -> List[List[int]]:
        series = self._inputs[u]
        while len(series) < length:
            k = len(series)
            name = JetUniverse.input_jet(u, k)
            if name not in self.point:
                raise IncompletePointError(f"no value assigned to input jet {name}")
            value = reduce_scalar(QQ.convert(self.point[name]), self.spec)
            series.append([value * pow(factorial(k), -1, self.p) % self.p] + [0] * (self.width - 1))
        return series[:length]

    def _evaluator(self, length: int) -> _ModularEvaluator:
        values = dict(self._constants)
        for i, x in self._state_index.items():
            values[i] = self._states[x][:length]
        for i, u in self._input_index.items():
            values[i] = self._input_coefficients(u, length)
        return _ModularEvaluator(values, length, self.width, self.p)

    def extend(self, length: int) -> None:
        """Make every state series exact through coefficient ``length - 1``."""
        while self._length < length:
            current = self._length
            evaluator = self._evaluator(current)
            inverse = pow(current, -1, self.p)
            additions = {}
            for x, num, den in self._rhs:
                derivative = evaluator.rational(num, den, f"{x}'")
                coefficient = derivative[current - 1] if len(derivative) >= current else [0] * self.width
                additions[x] = [c * inverse % self.p for c in coefficient]
            for x, vector in additions.items():
                self._states[x].append(vector)
            self._length += 1

    def series(self, output: str, order: int) -> List[List[int]]:
        cached = self._output_series.get(output)
        if cached is None or cached[0] <= order:
            self.extend(order + 1)
            num, den = self._outputs[output]
            cached = (order + 1, self._evaluator(order + 1).rational(num, den, output))
            self._output_series[output] = cached
        return cached[1]

    def _coefficient(self, output: str, k: int) -> List[int]:
        series = self.series(output, k)
        vector = series[k] if k < len(series) else [0] * self.width
        scale = factorial(k) % self.p
        return [c * scale % self.p for c in vector]

    def value(self, output: str, k: int) -> int:
        """y^(k) at the point, modulo p."""
        return self._coefficient(output, k)[0]

    def gradient(self, output: str, k: int) -> List[int]:
        """Partial derivatives of y^(k) with respect to the directions, modulo p."""
        return self._coefficient(output, k)[1:]
