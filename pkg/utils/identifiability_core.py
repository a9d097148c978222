"""Monte Carlo identifiability classification.

Local phase: rank of the Jacobian of the output jets with respect to the unknowns, at a
random integer point, over a random prime field; the rows come from a power-series solution
carrying one perturbation per unknown. Global phase: specialize the outputs at a fresh
random point, build the truncated polynomial system (state jets kept as variables), pin a
set of non-identifiable unknowns that completes the rank, and decide for every locally
identifiable unknown whether its normal form modulo a Groebner basis is the sampled value.
"""

import logging
import math
import random
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Dict, Generator, List, Mapping, Optional, Sequence

from sympy.polys.matrices import DomainMatrix

from utils.algebra_helper import (
    BadPrimeError,
    IdentifiabilityError,
    PrimeFieldSpec,
    poly_evaluate,
    random_prime,
    reduce_mod_prime,
    total_degree,
)
from utils.groebner_engine import (
    GroebnerBasis,
    GroebnerBudgetExceeded,
    MonomialOrder,
    buchberger,
    eliminate_linear_variables,
    normal_form,
)
from utils.jet_prolongation import (
    SATURATION_VARIABLE,
    JetCache,
    JetUniverse,
    TruncatedSystem,
    build_state_jet_system,
    build_truncated_system,
    denominator_product,
    jet_universe,
    jet_values,
    normalize_orders,
)
from utils.model_parser import Model, ensure_valid, parse_model
from utils.taylor_oracle import ModularTaylorJets, taylor_jets

logger = logging.getLogger(__name__)

ANALYSIS_CONFIG = {
    "default_probability": 0.99,
    "prime_bits": 60,
    "max_prime_retries": 8,
    "max_point_retries": 50,
    "global_order_buffer": 0,       # extra jet order carried into the global phase
    "default_jobs": 1,
    "system_form": "state_jets",    # state_jets | eliminated
}

SYSTEM_FORMS = ("state_jets", "eliminated")


class ProbabilityArgumentError(IdentifiabilityError, ValueError):
    pass


class DegenerateModelError(IdentifiabilityError):
    """No admissible sample point (or prime) was found within the retry budget."""


class Label(Enum):
    GLOBAL = "global"           # globally identifiable
    LOCAL = "local"             # locally but not globally identifiable
    NONE = "none"               # not identifiable
    UNRESOLVED = "unresolved"   # resource budget hit or rank never stabilized


@dataclass(frozen=True)
class ProbabilityBudget:
    probability: Fraction
    events: int
    degree_bound: int
    bound: int


@dataclass(frozen=True)
class SamplePoint:
    values: Dict[str, int]
    seed: object
    bound: int

    def value_of(self, unknown: str) -> int:
        """Value of an unknown given by report name (``x(0)`` for initial conditions)."""
        if unknown.endswith("(0)"):
            return self.values[unknown[:-3]]
        return self.values[unknown]


@dataclass
class LocalResult:
    flags: Dict[str, Optional[bool]]     # None: undecided at the order ceiling
    orders: Dict[str, int]
    rank: int
    prime: int
    point: SamplePoint
    budget: ProbabilityBudget
    stabilized: bool
    ranks_by_order: List[int] = field(default_factory=list)
    pinned: List[str] = field(default_factory=list)     # completes the rank; fixed in the global phase


@dataclass
class IdentifiabilityReport:
    model: str
    unknowns: List[str]
    labels: Dict[str, Label]
    probability: float
    seed: object
    local_orders: Dict[str, int]
    global_orders: Dict[str, int]
    primes: Dict[str, int]
    budgets: Dict[str, Dict[str, object]]
    phase_times: Dict[str, float]
    rank: int = 0
    groebner_stats: Optional[Dict[str, float]] = None
    notes: List[str] = field(default_factory=list)
    pinned: List[str] = field(default_factory=list)

    @property
    def prime(self) -> int:
        return self.primes.get("global", self.primes.get("local", 0))

    @property
    def has_unresolved(self) -> bool:
        return any(label is Label.UNRESOLVED for label in self.labels.values())

    def label_values(self) -> Dict[str, str]:
        return {name: self.labels[name].value for name in self.unknowns}

    def unknowns_with(self, label: Label) -> List[str]:
        return [name for name in self.unknowns if self.labels[name] is label]


def _as_fraction(p) -> Fraction:
    if isinstance(p, bool):
        raise ProbabilityArgumentError(f"probability must be a number, got {p!r}")
    if isinstance(p, float):
        return Fraction(repr(p))
    try:
        return Fraction(p)
    except (TypeError, ValueError) as e:
        raise ProbabilityArgumentError(f"probability must be a number, got {p!r}") from e


def validate_probability(p) -> Fraction:
    """Exact value of a requested probability; raises unless it lies in (0, 1)."""
    fraction = _as_fraction(p)
    if not 0 < fraction < 1:
        raise ProbabilityArgumentError(f"probability must lie strictly between 0 and 1, got {p}")
    return fraction


def per_phase_probability(p) -> Fraction:
    """Two independent randomized phases each run at (1 + p) / 2 (union bound)."""
    p = _as_fraction(p)
    return (1 + p) / 2


def budget_bound(p, events: int, degree_bound: int) -> int:
    p = _as_fraction(p)
    if not 0 < p < 1:
        raise ProbabilityArgumentError(f"probability must lie strictly between 0 and 1, got {p}")
    return max(1, math.ceil(Fraction(events * degree_bound) / (1 - p)))


def estimate_degree_bound(m: Model, orders: Mapping[str, int]) -> int:
    """A-priori degree estimate for the truncated system and the Jacobian minors.

    Jet degrees are taken to grow linearly: each Lie derivative adds at most the degree of
    the right-hand sides plus the degree of their common denominator. Documented heuristic.
    """
    rhs_degree = max((f.degree() for f in m.rhs.values()), default=1)
    product_degree = total_degree(denominator_product(m))
    step = max(1, rhs_degree + product_degree)
    jet_degree = 0
    for name, g in m.outputs:
        jet_degree = max(jet_degree, g.degree() + orders.get(name, 0) * step)
    minor_degree = max(1, len(m.unknowns)) * 2 * max(1, jet_degree)
    return max(minor_degree, 1 + product_degree, 1)


def sampled_names(universe: JetUniverse) -> List[str]:
    """Every coordinate a sample point assigns: parameters, initial conditions, input jets."""
    return list(universe.params) + list(universe.states) + universe.input_jet_names(universe.input_order)


def probability_budget(
    p,
    m: Model,
    orders,
    events: Optional[int] = None,
    degree_bound: Optional[int] = None,
    universe: Optional[JetUniverse] = None,
) -> ProbabilityBudget:
    """Sampling bound M = ceil(E * deg_bound / (1 - p)).

    Args:
        p: Requested probability of correctness for this phase, in (0, 1).
        m: The model.
        orders: Jet orders in force (per output, or a single uniform order).
        events: Number of randomized events; by default the coordinates :func:`sample_point`
            draws from ``universe`` plus one prime.
        degree_bound: Degree bound; estimated from the model by default.
        universe: Jet universe the point is sampled in; :func:`jet_universe` by default.
    """
    fraction = _as_fraction(p)
    if not 0 < fraction < 1:
        raise ProbabilityArgumentError(f"probability must lie strictly between 0 and 1, got {p}")
    if isinstance(orders, int):
        orders = {name: orders for name in m.output_names}
    else:
        orders = normalize_orders(m, orders)
    if events is None:
        events = len(sampled_names(universe or jet_universe(m))) + 1
    if degree_bound is None:
        degree_bound = estimate_degree_bound(m, orders)
    bound = budget_bound(fraction, events, degree_bound)
    return ProbabilityBudget(fraction, events, degree_bound, bound)


def _rng(seed, tag: str) -> random.Random:
    return random.Random(f"{seed}/{tag}")


def sample_point(
    m: Model,
    budget: ProbabilityBudget,
    seed,
    universe: Optional[JetUniverse] = None,
    tag: str = "point",
) -> SamplePoint:
    """Integers uniform in [1, M] for every parameter, initial condition and input jet.

    Resamples while a denominator of the model vanishes at the point.

    Raises:
        DegenerateModelError: when ``max_point_retries`` draws all hit a vanishing denominator.
    """
    universe = universe or jet_universe(m)
    rng = _rng(seed, tag)
    names = sampled_names(universe)
    product = denominator_product(m, universe)

    for attempt in range(ANALYSIS_CONFIG["max_point_retries"]):
        values = {name: rng.randint(1, budget.bound) for name in names}
        if poly_evaluate(product, values):
            return SamplePoint(values, seed, budget.bound)
        logger.warning(f"Sample point {attempt + 1} zeroes a denominator of {m.name}; resampling")
    raise DegenerateModelError(
        f"every sampled point zeroes a denominator of {m.name} "
        f"({ANALYSIS_CONFIG['max_point_retries']} attempts, M = {budget.bound})"
    )


class _JacobianBuilder:
    """Jacobian rows of output jets with respect to the unknowns, over GF(p)."""

    def __init__(self, jets: ModularTaylorJets):
        self.jets = jets
        self.domain = jets.spec.domain
        self.width = jets.width - 1
        self.rows: Dict[tuple, list] = {}

    def row(self, output: str, k: int) -> list:
        key = (output, k)
        if key not in self.rows:
            self.rows[key] = [self.domain.convert(c) for c in self.jets.gradient(output, k)]
        return self.rows[key]

    def matrix_rows(self, orders: Mapping[str, int]) -> List[list]:
        return [self.row(y, k) for y, top in orders.items() for k in range(top + 1)]

    def _rank(self, rows: List[list], width: int) -> int:
        if not rows or not width:
            return 0
        return DomainMatrix(rows, (len(rows), width), self.domain).rank()

    def rank(self, orders: Mapping[str, int], drop_column: Optional[int] = None) -> int:
        rows = self.matrix_rows(orders)
        width = self.width
        if drop_column is not None:
            rows = [r[:drop_column] + r[drop_column + 1:] for r in rows]
            width -= 1
        return self._rank(rows, width)

    def completing_columns(self, orders: Mapping[str, int], candidates: Sequence[int]) -> List[int]:
        """Columns whose unit rows, added greedily, bring the rank to the number of unknowns."""
        rows = self.matrix_rows(orders)
        rank = self._rank(rows, self.width)
        chosen = []
        for i in candidates:
            if rank == self.width:
                break
            unit = [self.domain.zero] * self.width
            unit[i] = self.domain.one
            trial = self._rank(rows + [unit], self.width)
            if trial > rank:
                rows = rows + [unit]
                rank = trial
                chosen.append(i)
        return chosen


def unknown_variables(m: Model) -> List[str]:
    """Jet-ring variable for every unknown, aligned with ``m.unknowns``."""
    return list(m.params) + list(m.states)


def local_classification(
    m: Model,
    seed,
    budget: Optional[ProbabilityBudget] = None,
    probability=None,
    max_order: Optional[int] = None,
    universe: Optional[JetUniverse] = None,
) -> LocalResult:
    """Local identifiability by Jacobian rank at a random point.

    The uniform order D grows from 0 until one full extra order leaves the rank unchanged
    (or the rank equals the number of unknowns); per-output orders are then trimmed while
    the rank holds. An unknown is locally identifiable iff deleting its column drops the rank.

    Returns:
        LocalResult with per-unknown flags, the trimmed orders and the unknowns whose unit
        rows complete the rank.
    """
    unknowns = m.unknowns
    variables = unknown_variables(m)
    n = len(unknowns)
    ceiling = max_order if max_order is not None else n + 1
    universe = universe or jet_universe(m, ceiling + ANALYSIS_CONFIG["global_order_buffer"] + 1)
    if budget is None:
        phase_p = probability if probability is not None else per_phase_probability(ANALYSIS_CONFIG["default_probability"])
        budget = probability_budget(phase_p, m, ceiling, universe=universe)

    point = sample_point(m, budget, seed, universe, tag="local-point")
    prime_rng = _rng(seed, "local-prime")

    for attempt in range(ANALYSIS_CONFIG["max_prime_retries"]):
        spec = random_prime(prime_rng, ANALYSIS_CONFIG["prime_bits"])
        try:
            jets = ModularTaylorJets(m, point.values, spec, variables)
            return _local_at_prime(m, _JacobianBuilder(jets), unknowns, point, spec, ceiling, budget)
        except BadPrimeError as e:
            logger.warning(f"Bad prime in local phase ({e}); drawing another")
    raise DegenerateModelError(f"no usable prime after {ANALYSIS_CONFIG['max_prime_retries']} attempts")


def _local_at_prime(m, builder, unknowns, point, spec, ceiling, budget) -> LocalResult:
    n = len(unknowns)
    outputs = m.output_names

    ranks: List[int] = []
    stabilized = False
    order = 0
    while True:
        uniform = {y: order for y in outputs}
        ranks.append(builder.rank(uniform))
        logger.debug(f"{m.name}: rank {ranks[-1]} at uniform order {order}")
        if ranks[-1] == n:
            stabilized = True
            break
        if len(ranks) > 1 and ranks[-1] == ranks[-2]:
            stabilized = True
            order -= 1
            break
        if order >= ceiling:
            break
        order += 1

    orders = {y: order for y in outputs}
    rank = builder.rank(orders)
    for y in outputs:
        while orders[y] > 0:
            trial = dict(orders)
            trial[y] -= 1
            if builder.rank(trial) != rank:
                break
            orders = trial

    flags: Dict[str, Optional[bool]] = {}
    for i, name in enumerate(unknowns):
        drops = builder.rank(orders, drop_column=i) < rank
        flags[name] = True if drops else (False if stabilized else None)

    not_local = [i for i, name in enumerate(unknowns) if not flags[name]]
    pinned = [unknowns[i] for i in builder.completing_columns(orders, not_local)]

    logger.info(f"🔍 Local phase for {m.name}: rank {rank}/{n}, orders {orders}, prime {spec.p}")
    if pinned:
        logger.info(f"📌 {m.name}: {', '.join(pinned)} complete the rank")
    return LocalResult(flags, orders, rank, spec.p, point, budget, stabilized, ranks, pinned)


def _constant_equals(nf, expected: int, spec: PrimeFieldSpec) -> bool:
    if not nf:
        return expected % spec.p == 0
    if not nf.is_ground:
        return False
    return int(nf.LC) % spec.p == expected % spec.p


def classify_progressive(
    m: Model,
    probability=None,
    seed=0,
    max_order: Optional[int] = None,
    jobs: Optional[int] = None,
    max_pair_reductions: Optional[int] = None,
    max_basis_size: Optional[int] = None,
    system_form: Optional[str] = None,
) -> Generator[Dict, None, None]:
    """Run the full pipeline, yielding progress updates.

    Updates are dicts with a ``type`` of ``'phase'``, ``'local_complete'``, ``'progress'``
    or ``'complete'``; the last carries the IdentifiabilityReport under ``'report'``.
    ``system_form`` picks the global system: ``'state_jets'`` (default) or ``'eliminated'``.
    """
    probability = ANALYSIS_CONFIG["default_probability"] if probability is None else probability
    requested = validate_probability(probability)
    jobs = jobs or ANALYSIS_CONFIG["default_jobs"]
    system_form = system_form or ANALYSIS_CONFIG["system_form"]
    if system_form not in SYSTEM_FORMS:
        raise ValueError(f"unknown system form '{system_form}', expected one of {SYSTEM_FORMS}")
    ensure_valid(m)

    phase_p = per_phase_probability(requested)
    unknowns = m.unknowns
    phase_times: Dict[str, float] = {}
    notes: List[str] = []

    yield {'type': 'phase', 'phase': 'local', 'status': f'Jacobian rank for {len(unknowns)} unknowns'}
    start_time = time.time()
    ceiling = max_order if max_order is not None else len(unknowns) + 1
    buffer = ANALYSIS_CONFIG["global_order_buffer"]
    universe = jet_universe(m, ceiling + buffer + 1)
    local = local_classification(m, seed, probability=phase_p, max_order=ceiling, universe=universe)
    phase_times["local"] = time.time() - start_time
    if not local.stabilized:
        notes.append(f"rank did not stabilize by order {ceiling}")

    yield {
        'type': 'local_complete',
        'flags': dict(local.flags),
        'orders': dict(local.orders),
        'rank': local.rank,
        'pinned': list(local.pinned),
        'processing_time': phase_times["local"],
    }

    labels: Dict[str, Label] = {}
    for name in unknowns:
        flag = local.flags[name]
        if flag is False:
            labels[name] = Label.NONE
        elif flag is None:
            labels[name] = Label.UNRESOLVED

    candidates = [name for name in unknowns if local.flags[name]]
    global_orders = {y: k + buffer for y, k in local.orders.items()}
    primes = {"local": local.prime}
    budgets = {"local": _budget_dict(local.budget)}
    groebner_stats = None

    if candidates:
        yield {'type': 'phase', 'phase': 'specialize', 'status': f'Output values up to orders {global_orders}'}
        start_time = time.time()
        global_budget = probability_budget(phase_p, m, global_orders, universe=universe)
        budgets["global"] = _budget_dict(global_budget)
        point = sample_point(m, global_budget, seed, universe, tag="global-point")
        system = specialized_system(m, global_orders, point, universe, local.pinned, system_form)
        phase_times["specialize"] = time.time() - start_time

        yield {'type': 'phase', 'phase': 'groebner', 'status': f'{len(system.equations)} equations'}
        start_time = time.time()
        protected = [SATURATION_VARIABLE] + [v for v in unknown_variables(m) if v not in system.fixed]
        basis, spec, failure = _global_basis(m, system, seed, protected, max_pair_reductions, max_basis_size)
        phase_times["groebner"] = time.time() - start_time

        if basis is not None:
            primes["global"] = spec.p
            groebner_stats = basis.stats.as_dict()
        elif failure is not None:
            groebner_stats = failure.stats.as_dict()
            notes.append(f"Groebner budget exceeded: {failure.reason}")

        if basis is None or basis.is_unit():
            if basis is not None:
                notes.append("truncated system has no solutions modulo the prime")
            for name in candidates:
                labels[name] = Label.UNRESOLVED
        else:
            start_time = time.time()
            for update in _normal_form_queries(m, candidates, basis, spec, point, jobs):
                labels[update['unknown']] = update['label']
                yield update
            phase_times["normal_forms"] = time.time() - start_time

    report = IdentifiabilityReport(
        model=m.name,
        unknowns=list(unknowns),
        labels={name: labels[name] for name in unknowns},
        probability=float(requested),
        seed=seed,
        local_orders=dict(local.orders),
        global_orders=global_orders if candidates else {},
        primes=primes,
        budgets=budgets,
        phase_times=phase_times,
        rank=local.rank,
        groebner_stats=groebner_stats,
        notes=notes,
        pinned=list(local.pinned) if candidates else [],
    )
    logger.info(f"✅ {m.name}: " + ", ".join(f"{k}={v}" for k, v in report.label_values().items()))
    yield {'type': 'complete', 'report': report, 'processing_time': sum(phase_times.values())}


def specialized_system(
    m: Model,
    orders: Mapping[str, int],
    point: SamplePoint,
    universe: JetUniverse,
    pinned: Sequence[str] = (),
    system_form: str = "state_jets",
) -> TruncatedSystem:
    """Truncated system at ``point``: exact output values, pinned inputs and ``pinned`` unknowns."""
    top = max(orders.values(), default=0)
    input_values = {name: point.values[name] for name in universe.input_jet_names(top + 1)}
    variables = dict(zip(m.unknowns, unknown_variables(m)))
    fixed = {variables[name]: point.value_of(name) for name in pinned}
    if system_form == "eliminated":
        cache = JetCache(m, universe)
        yhat = jet_values(cache, orders, point.values)
        return build_truncated_system(m, orders, yhat, input_values, cache, fixed)
    yhat = taylor_jets(m, point.values, top)
    return build_state_jet_system(m, orders, yhat, input_values, fixed)


def _budget_dict(budget: ProbabilityBudget) -> Dict[str, object]:
    return {
        "probability": str(budget.probability),
        "events": budget.events,
        "degree_bound": budget.degree_bound,
        "bound": budget.bound,
    }


def _global_basis(m, system: TruncatedSystem, seed, protected, max_pair_reductions, max_basis_size):
    prime_rng = _rng(seed, "global-prime")
    order = MonomialOrder.block([SATURATION_VARIABLE])
    for attempt in range(ANALYSIS_CONFIG["max_prime_retries"]):
        spec = random_prime(prime_rng, ANALYSIS_CONFIG["prime_bits"])
        try:
            reduced = [reduce_mod_prime(eq, spec) for eq in system.equations]
        except BadPrimeError as e:
            logger.warning(f"Bad prime in global phase ({e}); drawing another")
            continue
        reduced, solved = eliminate_linear_variables(reduced, protected)
        logger.info(f"🧮 {m.name}: {len(solved)} variables eliminated linearly, {len(reduced)} equations left")
        try:
            basis = buchberger(
                reduced, order,
                max_pair_reductions=max_pair_reductions,
                max_basis_size=max_basis_size,
            )
        except GroebnerBudgetExceeded as e:
            logger.error(f"Groebner phase for {m.name} stopped: {e}")
            return None, spec, e
        logger.info(f"⚡ Groebner basis for {m.name}: {len(basis)} generators, "
                    f"{basis.stats.pair_reductions} pairs, {basis.stats.elapsed:.1f}s")
        return basis, spec, None
    raise DegenerateModelError(f"no usable prime after {ANALYSIS_CONFIG['max_prime_retries']} attempts")


def _normal_form_queries(m, candidates, basis: GroebnerBasis, spec, point, jobs) -> Generator[Dict, None, None]:
    variables = dict(zip(m.unknowns, unknown_variables(m)))
    ring = basis.ring

    def query(name: str) -> Label:
        gen = ring.gens[[str(s) for s in ring.symbols].index(variables[name])]
        nf = normal_form(gen, basis)
        return Label.GLOBAL if _constant_equals(nf, point.value_of(name), spec) else Label.LOCAL

    total = len(candidates)
    if jobs <= 1 or total == 1:
        for i, name in enumerate(candidates):
            yield {'type': 'progress', 'current': i + 1, 'total': total, 'unknown': name, 'label': query(name),
                   'status': f'Normal form of {name}'}
        return

    with ThreadPoolExecutor(max_workers=min(jobs, total)) as executor:
        future_to_unknown = {executor.submit(query, name): name for name in candidates}
        for i, future in enumerate(as_completed(future_to_unknown)):
            name = future_to_unknown[future]
            yield {'type': 'progress', 'current': i + 1, 'total': total, 'unknown': name,
                   'label': future.result(), 'status': f'Normal form of {name}'}


def global_classification(m: Model, p=None, seed=0, **options) -> IdentifiabilityReport:
    """Label every unknown; see :func:`classify_progressive` for the options."""
    for update in classify_progressive(m, p, seed, **options):
        if update['type'] == 'complete':
            return update['report']
    raise IdentifiabilityError(f"analysis of {m.name} ended without a report")


def check_report_consistency(report: IdentifiabilityReport, local: Optional[LocalResult] = None) -> bool:
    """Every unknown labelled exactly once; with ``local``, labels agree with the local flags."""
    if set(report.labels) != set(report.unknowns):
        return False
    if local is None:
        return True
    for name, label in report.labels.items():
        flag = local.flags.get(name)
        if label is Label.NONE and flag is not False:
            return False
        if label in (Label.GLOBAL, Label.LOCAL) and flag is not True:
            return False
    return True


# Convenience function for easy integration
def analyze_text(text: str, p=None, seed=0, **options) -> IdentifiabilityReport:
    return global_classification(parse_model(text), p, seed, **options)
