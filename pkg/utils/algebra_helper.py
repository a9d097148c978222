"""Exact arithmetic substrate: symbol tables, sparse polynomials over QQ and GF(p),
rational functions and reduction modulo random word-sized primes.

Polynomials are sympy ``PolyElement`` objects living in a ``PolyRing``; this module
adds the bookkeeping the rest of the package relies on (named variables, canonical
rational functions, prime-field images with bad-prime detection).
"""

import functools
import logging
import random
from dataclasses import dataclass
from math import gcd, lcm
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from sympy import Symbol
from sympy.ntheory import isprime, nextprime
from sympy.polys.domains import GF, QQ
from sympy.polys.orderings import grevlex
from sympy.polys.rings import PolyElement, PolyRing

logger = logging.getLogger(__name__)

Polynomial = PolyElement

# Random primes live in [2^60, 2^61): single-word products with headroom.
PRIME_CONFIG = {
    "bits": 60,
    "min_prime": 2 ** 59,
}


class IdentifiabilityError(Exception):
    """Root of every error raised by this package."""


class ContextError(IdentifiabilityError):
    """Operands do not share a coefficient domain or variable context."""


class IncompletePointError(IdentifiabilityError):
    """An evaluation point does not assign every variable that occurs."""


class DivisionByZeroPolynomial(IdentifiabilityError):
    """A rational function was built with a zero denominator."""


class BadPrimeError(IdentifiabilityError):
    """The prime divides a coefficient denominator; retry with another prime."""


@dataclass(frozen=True)
class Variable:
    id: int
    name: str


class VariableContext:
    """Dense symbol table ``0..V-1`` backing one polynomial ring over QQ."""

    def __init__(self, names: Sequence[str], order=grevlex):
        names = list(names)
        if len(set(names)) != len(names):
            duplicates = sorted({n for n in names if names.count(n) > 1})
            raise ContextError(f"duplicate variable names in context: {duplicates}")
        if not names:
            raise ContextError("a variable context needs at least one variable")

        self.variables: Tuple[Variable, ...] = tuple(Variable(i, n) for i, n in enumerate(names))
        self.ring: PolyRing = PolyRing([Symbol(n) for n in names], QQ, order)
        self._by_name: Dict[str, Variable] = {v.name: v for v in self.variables}

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def __getitem__(self, name: str) -> Variable:
        try:
            return self._by_name[name]
        except KeyError:
            raise ContextError(f"unknown variable '{name}'") from None

    def __len__(self) -> int:
        return len(self.variables)

    @property
    def names(self) -> List[str]:
        return [v.name for v in self.variables]

    def gen(self, name: str) -> Polynomial:
        return self.ring.gens[self[name].id]

    def constant(self, value) -> Polynomial:
        return self.ring.ground_new(QQ.convert(value))

    def lift(self, poly: Polynomial) -> Polynomial:
        """Embed a polynomial from a smaller context whose names all appear here."""
        return poly.set_ring(self.ring)


@functools.lru_cache(maxsize=64)
def _prime_domain(p: int):
    return GF(p)


@functools.lru_cache(maxsize=256)
def _symbol_index(ring: PolyRing) -> Dict[str, int]:
    return {str(s): i for i, s in enumerate(ring.symbols)}


@dataclass(frozen=True)
class PrimeFieldSpec:
    p: int

    def __post_init__(self):
        if self.p <= PRIME_CONFIG["min_prime"] or not isprime(self.p):
            raise ContextError(f"modulus {self.p} is not a prime above 2^59")

    @property
    def domain(self):
        return _prime_domain(self.p)

    def ring_for(self, ring: PolyRing) -> PolyRing:
        return ring.clone(domain=self.domain)


def random_prime(rng: random.Random, bits: Optional[int] = None) -> PrimeFieldSpec:
    """Draw a uniformly placed candidate of ``bits`` bits and take the next prime."""
    bits = bits or PRIME_CONFIG["bits"]
    candidate = rng.randrange(2 ** bits, 2 ** (bits + 1))
    return PrimeFieldSpec(int(nextprime(candidate)))


def _check_same_ring(a: Polynomial, b: Polynomial) -> None:
    if a.ring != b.ring:
        raise ContextError(f"operands live in different rings: {a.ring} vs {b.ring}")


def poly_arith(a: Polynomial, b: Polynomial, op: str) -> Polynomial:
    """Ring operation ``op`` in {'add', 'sub', 'mul'} on two polynomials of one context."""
    _check_same_ring(a, b)
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    raise ValueError(f"unsupported polynomial operation '{op}'")


def _gen_index(ring: PolyRing, v: Union[Variable, str]) -> int:
    name = v.name if isinstance(v, Variable) else v
    index = _symbol_index(ring).get(name)
    if index is None or (isinstance(v, Variable) and v.id != index):
        raise ContextError(f"variable '{name}' is not part of {ring}")
    return index


def poly_derivative(p: Polynomial, v: Union[Variable, str]) -> Polynomial:
    return p.diff(p.ring.gens[_gen_index(p.ring, v)])


def occurring_variables(p: Polynomial) -> List[str]:
    names = [str(s) for s in p.ring.symbols]
    used = set()
    for monom in p.itermonoms():
        used.update(i for i, e in enumerate(monom) if e)
    return [names[i] for i in sorted(used)]


def poly_evaluate(p: Polynomial, point: Mapping[Union[Variable, str], object]):
    """Evaluate ``p`` at a full assignment; returns an element of ``p``'s coefficient domain."""
    ring = p.ring
    domain = ring.domain
    index = _symbol_index(ring)

    values: Dict[int, object] = {}
    for key, value in point.items():
        name = key.name if isinstance(key, Variable) else key
        if name in index:
            values[index[name]] = domain.convert(value)

    missing = [name for name in occurring_variables(p) if index[name] not in values]
    if missing:
        raise IncompletePointError(f"no value assigned to {missing}")

    powers: Dict[Tuple[int, int], object] = {}
    result = domain.zero
    for monom, coeff in p.iterterms():
        term = coeff
        for i, e in enumerate(monom):
            if e:
                key = (i, e)
                if key not in powers:
                    powers[key] = values[i] ** e
                term = term * powers[key]
        result += term
    return result


def reduce_scalar(value, spec: PrimeFieldSpec) -> int:
    """Image of a rational scalar in GF(p) as a Python int in ``[0, p)``."""
    num, den = int(value.numerator), int(value.denominator)
    if den % spec.p == 0:
        raise BadPrimeError(f"denominator {den} vanishes modulo {spec.p}")
    return num * pow(den, -1, spec.p) % spec.p


def reduce_mod_prime(p: Polynomial, spec: PrimeFieldSpec) -> Polynomial:
    """Coefficient-wise image of a QQ polynomial in GF(p)[X]."""
    if not p.ring.domain.is_QQ:
        raise ContextError(f"expected a polynomial over QQ, got one over {p.ring.domain}")
    ring_p = spec.ring_for(p.ring)
    terms = {}
    for monom, coeff in p.iterterms():
        value = reduce_scalar(coeff, spec)
        if value:
            terms[monom] = value
    return ring_p.from_dict(terms)


def total_degree(p: Polynomial) -> int:
    if not p:
        return 0
    return max(sum(monom) for monom in p.itermonoms())


@dataclass(frozen=True, eq=False)
class RationalFunction:
    """Quotient of two polynomials, always built through :func:`ratfun_normalize`."""

    numerator: Polynomial
    denominator: Polynomial

    @property
    def ring(self) -> PolyRing:
        return self.numerator.ring

    def __eq__(self, other) -> bool:
        if not isinstance(other, RationalFunction):
            return NotImplemented
        return self.numerator == other.numerator and self.denominator == other.denominator

    def __hash__(self) -> int:
        return hash((self.numerator, self.denominator))

    def __add__(self, other: "RationalFunction") -> "RationalFunction":
        if self.denominator == other.denominator:
            return ratfun_normalize(self.numerator + other.numerator, self.denominator)
        return ratfun_normalize(
            self.numerator * other.denominator + other.numerator * self.denominator,
            self.denominator * other.denominator,
        )

    def __neg__(self) -> "RationalFunction":
        return RationalFunction(-self.numerator, self.denominator)

    def __sub__(self, other: "RationalFunction") -> "RationalFunction":
        return self + (-other)

    def __mul__(self, other: "RationalFunction") -> "RationalFunction":
        return ratfun_normalize(self.numerator * other.numerator, self.denominator * other.denominator)

    def __truediv__(self, other: "RationalFunction") -> "RationalFunction":
        if not other.numerator:
            raise DivisionByZeroPolynomial("division by the zero rational function")
        return ratfun_normalize(self.numerator * other.denominator, self.denominator * other.numerator)

    def is_zero(self) -> bool:
        return not self.numerator

    def is_constant(self) -> bool:
        return self.numerator.is_ground and self.denominator.is_ground

    def is_polynomial(self) -> bool:
        return self.denominator.is_ground

    def degree(self) -> int:
        return max(total_degree(self.numerator), total_degree(self.denominator))

    def variables(self) -> List[str]:
        names = set(occurring_variables(self.numerator)) | set(occurring_variables(self.denominator))
        return [str(s) for s in self.ring.symbols if str(s) in names]

    def diff(self, v: Union[Variable, str]) -> "RationalFunction":
        dn = poly_derivative(self.numerator, v)
        dd = poly_derivative(self.denominator, v)
        if not dd:
            return ratfun_normalize(dn, self.denominator)
        return ratfun_normalize(
            dn * self.denominator - self.numerator * dd,
            self.denominator ** 2,
        )

    def evaluate(self, point: Mapping[Union[Variable, str], object]):
        den = poly_evaluate(self.denominator, point)
        if not den:
            raise DivisionByZeroPolynomial("denominator vanishes at the evaluation point")
        return poly_evaluate(self.numerator, point) / den

    def set_ring(self, ring: PolyRing) -> "RationalFunction":
        return RationalFunction(self.numerator.set_ring(ring), self.denominator.set_ring(ring))


def ratfun_from_poly(p: Polynomial) -> RationalFunction:
    return RationalFunction(p, p.ring.one)


def ratfun_normalize(num: Polynomial, den: Polynomial) -> RationalFunction:
    """Cancel the gcd and fix the unit: integral coprime contents with positive leading
    denominator coefficient over QQ, monic denominator over GF(p)."""
    if not den:
        raise DivisionByZeroPolynomial("zero denominator")
    _check_same_ring(num, den)
    ring = num.ring
    if not num:
        return RationalFunction(ring.zero, ring.one)

    if not den.is_ground:
        _, num, den = num.cofactors(den)

    domain = ring.domain
    if domain.is_QQ:
        common = 1
        for coeff in _coefficients(num, den):
            common = lcm(common, int(coeff.denominator))
        if common != 1:
            num = num.mul_ground(QQ(common))
            den = den.mul_ground(QQ(common))
        content = 0
        for coeff in _coefficients(num, den):
            content = gcd(content, int(coeff.numerator))
        if content not in (0, 1):
            num = num.quo_ground(QQ(content))
            den = den.quo_ground(QQ(content))
        if den.LC < 0:
            num, den = -num, -den
    else:
        lc = den.LC
        num = num.quo_ground(lc)
        den = den.monic()
    return RationalFunction(num, den)


def _coefficients(*polys: Polynomial) -> Iterable:
    for p in polys:
        yield from p.itercoeffs()
