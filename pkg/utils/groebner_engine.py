"""Buchberger's algorithm with normal selection, product and chain criteria, and a
resource budget. Bases are reduced and monic; normal forms use full division. Linear
elimination shrinks a system before a basis is computed."""

import logging
import time
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

from sympy.polys.orderings import ProductOrder, grevlex, lex
from sympy.polys.rings import PolyRing

from utils.algebra_helper import ContextError, IdentifiabilityError, Polynomial, total_degree
from utils.resource_guard import ResourceExhausted, check_memory

logger = logging.getLogger(__name__)

GROEBNER_CONFIG = {
    "max_pair_reductions": 10 ** 7,
    "max_basis_size": 5 * 10 ** 4,
    "memory_check_interval": 500,   # reductions between psutil checks
}


class GroebnerArgumentError(IdentifiabilityError):
    pass


@dataclass
class GroebnerStats:
    pair_reductions: int = 0
    reductions_to_zero: int = 0
    pending_pairs: int = 0
    basis_size: int = 0
    peak_basis_size: int = 0
    elapsed: float = 0.0

    def as_dict(self) -> Dict[str, float]:
        return dict(self.__dict__)


class GroebnerBudgetExceeded(IdentifiabilityError):
    """Raised when a Buchberger run exceeds its pair, basis or memory budget."""

    def __init__(self, reason: str, stats: GroebnerStats):
        self.reason = reason
        self.stats = stats
        super().__init__(
            f"{reason} after {stats.pair_reductions} pair reductions "
            f"(basis {stats.basis_size}, {stats.pending_pairs} pairs pending)"
        )


class _Selector:
    """Picks a fixed tuple of exponent positions; hashable so product orders compare equal."""

    def __init__(self, indices: Sequence[int]):
        self.indices = tuple(indices)

    def __call__(self, monomial):
        return tuple(monomial[i] for i in self.indices)

    def __eq__(self, other):
        return isinstance(other, _Selector) and self.indices == other.indices

    def __hash__(self):
        return hash(self.indices)


@dataclass(frozen=True)
class MonomialOrder:
    kind: str = "degrevlex"              # degrevlex | lex | block
    eliminated: Tuple[str, ...] = ()     # block only: variables of the larger block

    def __post_init__(self):
        if self.kind not in ("degrevlex", "lex", "block"):
            raise GroebnerArgumentError(f"unknown monomial order '{self.kind}'")
        if self.kind == "block" and not self.eliminated:
            raise GroebnerArgumentError("a block order needs at least one eliminated variable")

    @classmethod
    def block(cls, eliminated: Sequence[str]) -> "MonomialOrder":
        return cls("block", tuple(eliminated))

    def for_ring(self, ring: PolyRing):
        if self.kind == "degrevlex":
            return grevlex
        if self.kind == "lex":
            return lex

        names = [str(s) for s in ring.symbols]
        missing = [v for v in self.eliminated if v not in names]
        if missing:
            raise ContextError(f"block variables {missing} are not in {ring}")
        first = [names.index(v) for v in self.eliminated]
        rest = [i for i in range(len(names)) if i not in first]
        blocks = [(grevlex, _Selector(first))]
        if rest:
            blocks.append((grevlex, _Selector(rest)))
        return ProductOrder(*blocks)

    def ring(self, ring: PolyRing) -> PolyRing:
        return ring.clone(order=self.for_ring(ring))


@dataclass
class GroebnerBasis:
    generators: List[Polynomial]
    order: MonomialOrder
    reduced: bool
    ring: PolyRing
    stats: GroebnerStats = field(default_factory=GroebnerStats)

    def __len__(self) -> int:
        return len(self.generators)

    def is_unit(self) -> bool:
        """True when the ideal is the whole ring (empty solution set)."""
        return len(self.generators) == 1 and self.generators[0].is_ground and bool(self.generators[0])

    def leading_monomials(self) -> List[Tuple[int, ...]]:
        return [g.LM for g in self.generators]


def _to_order(p: Polynomial, ring: PolyRing) -> Polynomial:
    if p.ring.domain != ring.domain:
        raise ContextError(f"coefficient domains differ: {p.ring.domain} vs {ring.domain}")
    if p.ring.symbols != ring.symbols:
        raise ContextError("polynomial and basis use different variables")
    return p.set_ring(ring)


def s_polynomial(f: Polynomial, g: Polynomial, order: MonomialOrder) -> Polynomial:
    """lcm(LM f, LM g)/LT f * f - lcm(LM f, LM g)/LT g * g under ``order``."""
    if not f or not g:
        raise GroebnerArgumentError("S-polynomial of a zero polynomial")
    if f.ring.symbols != g.ring.symbols or f.ring.domain != g.ring.domain:
        raise ContextError("S-polynomial operands live in different contexts")

    ring = order.ring(f.ring)
    return _spoly(f.set_ring(ring), g.set_ring(ring))


def _spoly(f: Polynomial, g: Polynomial) -> Polynomial:
    ring = f.ring
    domain = ring.domain
    lcm = ring.monomial_lcm(f.LM, g.LM)
    sf = f.mul_term((ring.monomial_div(lcm, f.LM), domain.quo(domain.one, f.LC)))
    sg = g.mul_term((ring.monomial_div(lcm, g.LM), domain.quo(domain.one, g.LC)))
    return sf - sg


def normal_form(p: Polynomial, basis: GroebnerBasis) -> Polynomial:
    p = _to_order(p, basis.ring)
    if not basis.generators:
        return p
    return p.rem(basis.generators)


def _check_generators(generators: Sequence[Polynomial], exact: bool) -> PolyRing:
    if not generators:
        raise GroebnerArgumentError("buchberger needs at least one generator")
    ring = generators[0].ring
    for g in generators[1:]:
        if g.ring.symbols != ring.symbols or g.ring.domain != ring.domain:
            raise GroebnerArgumentError("generators live in different contexts")
    domain = ring.domain
    if exact and not domain.is_QQ:
        raise GroebnerArgumentError(f"exact mode expects rational coefficients, got {domain}")
    if not exact and not domain.is_FiniteField:
        raise GroebnerArgumentError(
            f"modular mode expects a prime field, got {domain}; reduce first or pass exact=True"
        )
    return ring


def buchberger(
    generators: Sequence[Polynomial],
    order: Optional[MonomialOrder] = None,
    exact: bool = False,
    max_pair_reductions: Optional[int] = None,
    max_basis_size: Optional[int] = None,
    progress_callback: Optional[Callable[[GroebnerStats], None]] = None,
) -> GroebnerBasis:
    """Compute the reduced Groebner basis of the ideal generated by ``generators``.

    Args:
        generators: Polynomials over GF(p), or over QQ when ``exact`` is set.
        order: Monomial order; degrevlex when omitted.
        exact: Run over the rationals instead of a prime field.
        max_pair_reductions: Budget on processed critical pairs.
        max_basis_size: Budget on the intermediate basis size.
        progress_callback: Called with the running statistics at every memory check.

    Returns:
        GroebnerBasis with monic generators sorted by decreasing leading monomial.

    Raises:
        GroebnerBudgetExceeded: when a budget (or free memory) runs out.
    """
    order = order or MonomialOrder()
    base_ring = _check_generators(generators, exact)
    ring = order.ring(base_ring)
    key = ring.order

    max_pairs = max_pair_reductions or GROEBNER_CONFIG["max_pair_reductions"]
    max_size = max_basis_size or GROEBNER_CONFIG["max_basis_size"]
    check_interval = GROEBNER_CONFIG["memory_check_interval"]

    stats = GroebnerStats()
    start_time = time.time()

    polys = [g.set_ring(ring) for g in generators]
    polys = [g.monic() for g in polys if g]
    if not polys:
        return GroebnerBasis([], order, True, ring, stats)
    if any(g.is_ground for g in polys):
        return GroebnerBasis([ring.one], order, True, ring, stats)

    basis_polys: List[Polynomial] = []   # every polynomial ever admitted, by index
    index_of: Dict[Polynomial, int] = {}
    current: Set[int] = set()
    pairs: Set[Tuple[int, int]] = set()

    def admit(h: Polynomial) -> int:
        if h not in index_of:
            index_of[h] = len(basis_polys)
            basis_polys.append(h)
        return index_of[h]

    def update(ih: int) -> None:
        # Gebauer-Moeller installation of a new element: product and chain criteria.
        nonlocal current, pairs
        mh = basis_polys[ih].LM
        lcm = ring.monomial_lcm
        divides = ring.monomial_div

        candidates = list(current)
        kept: List[int] = []
        for pos, ig in enumerate(candidates):
            mg = basis_polys[ig].LM
            lcm_hg = lcm(mh, mg)
            coprime = ring.monomial_mul(mh, mg) == lcm_hg
            others = candidates[pos + 1:] + kept

            def chain(ip: int) -> bool:
                return divides(lcm_hg, lcm(mh, basis_polys[ip].LM)) is not None

            if coprime or not any(chain(ip) for ip in others):
                kept.append(ig)

        new_pairs = {
            (ih, ig) for ig in kept
            if ring.monomial_mul(mh, basis_polys[ig].LM) != lcm(mh, basis_polys[ig].LM)
        }

        surviving = set()
        for ig1, ig2 in pairs:
            m1, m2 = basis_polys[ig1].LM, basis_polys[ig2].LM
            lcm12 = lcm(m1, m2)
            if divides(lcm12, mh) is None or lcm(m1, mh) == lcm12 or lcm(m2, mh) == lcm12:
                surviving.add((ig1, ig2))
        pairs = surviving | new_pairs

        current = {ig for ig in current if divides(basis_polys[ig].LM, mh) is None}
        current.add(ih)

    # Interreduce the input before installing it.
    while True:
        previous = polys
        polys = []
        for i, p in enumerate(previous):
            r = p.rem(previous[:i]) if i else p
            if r:
                polys.append(r.monic())
        if polys == previous:
            break
    if any(g.is_ground for g in polys):
        return GroebnerBasis([ring.one], order, True, ring, stats)

    for h in sorted(polys, key=lambda p: key(p.LM)):
        update(admit(h))

    while pairs:
        ig1, ig2 = min(pairs, key=lambda pr: key(ring.monomial_lcm(basis_polys[pr[0]].LM, basis_polys[pr[1]].LM)))
        pairs.discard((ig1, ig2))

        stats.pair_reductions += 1
        stats.pending_pairs = len(pairs)
        stats.basis_size = len(current)

        if stats.pair_reductions > max_pairs:
            stats.elapsed = time.time() - start_time
            raise GroebnerBudgetExceeded("pair-reduction budget exhausted", stats)
        if stats.pair_reductions % check_interval == 0:
            logger.debug(f"Buchberger: {stats.pair_reductions} reductions, basis {stats.basis_size}, {stats.pending_pairs} pairs")
            if progress_callback:
                progress_callback(stats)
            try:
                check_memory("buchberger")
            except ResourceExhausted as e:
                stats.elapsed = time.time() - start_time
                raise GroebnerBudgetExceeded(str(e), stats) from e

        s = _spoly(basis_polys[ig1], basis_polys[ig2])
        divisors = sorted((basis_polys[i] for i in current), key=lambda p: key(p.LM))
        h = s.rem(divisors) if s else s
        if not h:
            stats.reductions_to_zero += 1
            continue

        h = h.monic()
        if h.is_ground:
            stats.elapsed = time.time() - start_time
            stats.basis_size = 1
            logger.debug("Buchberger: reached the unit ideal")
            return GroebnerBasis([ring.one], order, True, ring, stats)

        update(admit(h))
        stats.peak_basis_size = max(stats.peak_basis_size, len(current))
        if len(current) > max_size:
            stats.elapsed = time.time() - start_time
            stats.basis_size = len(current)
            raise GroebnerBudgetExceeded("basis-size budget exhausted", stats)

    # Drop elements whose leading monomial another element divides, then interreduce.
    survivors = [basis_polys[i] for i in current]
    minimal = [
        g for g in survivors
        if not any(h is not g and ring.monomial_div(g.LM, h.LM) is not None for h in survivors)
    ]
    reduced = []
    for i, g in enumerate(minimal):
        others = minimal[:i] + minimal[i + 1:]
        r = g.rem(others) if others else g
        reduced.append(r.monic())
    reduced.sort(key=lambda p: key(p.LM), reverse=True)

    stats.basis_size = len(reduced)
    stats.pending_pairs = 0
    stats.elapsed = time.time() - start_time
    logger.debug(
        f"Buchberger finished: {len(reduced)} generators, {stats.pair_reductions} pairs, "
        f"{stats.reductions_to_zero} to zero, {stats.elapsed:.2f}s"
    )
    return GroebnerBasis(reduced, order, True, ring, stats)


def verify_basis(basis: GroebnerBasis) -> bool:
    """Post-hoc Buchberger criterion: every S-polynomial reduces to zero."""
    for f, g in combinations(basis.generators, 2):
        if normal_form(s_polynomial(f, g, basis.order), basis):
            return False
    return True


def is_reduced_basis(basis: GroebnerBasis) -> bool:
    ring = basis.ring
    for i, g in enumerate(basis.generators):
        if g.LC != ring.domain.one:
            return False
        for j, h in enumerate(basis.generators):
            if i != j and any(ring.monomial_div(m, h.LM) is not None for m in g.itermonoms()):
                return False
    return True


def _linear_occurrence(p: Polynomial, index: int):
    """Coefficient c when ``p`` is c*v + r with c a constant and v absent from r, else None."""
    found = None
    for monom, coeff in p.iterterms():
        if monom[index]:
            if found is not None or monom[index] != 1 or sum(monom) != 1:
                return None
            found = coeff
    return found


def eliminate_linear_variables(
    polys: Sequence[Polynomial],
    protected: Sequence[str] = (),
    max_degree: Optional[int] = None,
) -> Tuple[List[Polynomial], Dict[str, Polynomial]]:
    """Substitute away variables that some generator determines linearly.

    A variable v that occurs in a generator only as c*v (c a nonzero constant) is replaced
    everywhere by -r/c, provided no other generator then exceeds ``max_degree`` (the largest
    input degree by default). The remaining generators generate the elimination ideal of
    the removed variables, so membership questions about the other variables keep their
    answers.

    Returns:
        The remaining generators and, per removed variable, the expression it was replaced by.
    """
    work = [p for p in polys if p]
    if not work:
        return [], {}
    ring = work[0].ring
    names = [str(s) for s in ring.symbols]
    keep = {names.index(v) for v in protected if v in names}
    cap = max_degree if max_degree is not None else max(total_degree(p) for p in work)
    solved: Dict[str, Polynomial] = {}

    progress = True
    while progress:
        progress = False
        for pos, p in enumerate(work):
            for index in sorted(set(i for monom in p.itermonoms() for i, e in enumerate(monom) if e) - keep):
                coeff = _linear_occurrence(p, index)
                if coeff is None:
                    continue
                gen = ring.gens[index]
                value = (gen * coeff - p).quo_ground(coeff)
                others = [q.compose(gen, value) if q.degree(gen) > 0 else q for q in work[:pos] + work[pos + 1:]]
                if any(total_degree(q) > cap for q in others):
                    continue
                solved = {name: e.compose(gen, value) for name, e in solved.items()}
                solved[names[index]] = value
                work = [q for q in others if q]
                progress = True
                break
            if progress:
                break

    if solved:
        logger.debug(f"Linear elimination removed {len(solved)} variables, {len(work)} generators remain")
    return work, solved
